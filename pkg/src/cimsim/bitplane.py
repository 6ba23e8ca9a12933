"""Integer quantization, bit-plane decomposition, and the exact VMM reference.

Weights are signed 8-bit values sliced with two's complement, so the top
plane carries magnitude -128 while every plane stays a {0,1} matrix that can
be programmed directly into binary cells.  Activations are unsigned (post-ReLU
convention).  ``reference_vmm`` is the exact integer product every noisy
simulation is measured against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

QTSR_MAGIC = b"QTSR"
QTSR_VERSION = 1


class BitplaneError(ValueError):
    pass


@dataclass
class QuantizedTensor:
    """Integer tensor with an affine quantization scale.

    values : int8 (signed) or uint8 (unsigned) ndarray
    scale  : positive real step, dequantized = values * scale
    bits   : effective bit width used at quantization time (1..8)
    """

    values: np.ndarray
    scale: float
    signed: bool
    bits: int = 8
    zero_point: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        expected = np.int8 if self.signed else np.uint8
        if self.values.dtype != expected:
            raise BitplaneError(
                f"values must be {expected.__name__} for signed={self.signed}, "
                f"got {self.values.dtype}"
            )
        if not (self.scale > 0):
            raise BitplaneError(f"scale must be > 0, got {self.scale}")
        if not 1 <= self.bits <= 8:
            raise BitplaneError(f"bits must be in 1..8, got {self.bits}")

    @property
    def dims(self) -> tuple:
        return self.values.shape

    def dequantize(self) -> np.ndarray:
        return (self.values.astype(np.float64) - self.zero_point) * self.scale


@dataclass
class BitPlane:
    """One binary plane of an integer tensor.

    magnitude is 2**bit_index, except the sign plane of two's-complement
    weights where it is -2**7.
    """

    bit_index: int
    bits: np.ndarray
    magnitude: int = field(default=0)

    def __post_init__(self):
        if self.magnitude == 0:
            self.magnitude = 1 << self.bit_index


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # np.round ties to even; quantization uses half away from zero.
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_affine(real: np.ndarray, bits: int, signed: bool) -> QuantizedTensor:
    """Quantize a real tensor to `bits`-wide integers.

    Symmetric scheme: scale = max|real| / (2**(bits-1) - 1) for signed,
    max(real) / (2**bits - 1) for unsigned.  An all-zero tensor gets scale 1.
    Rounding is half away from zero.
    """
    if not 1 <= bits <= 8:
        raise BitplaneError(f"bits must be in 1..8, got {bits}")
    real = np.asarray(real, dtype=np.float64)
    if not np.all(np.isfinite(real)):
        raise BitplaneError("input tensor must be finite")
    if not signed and np.any(real < 0):
        raise BitplaneError("unsigned quantization requires non-negative input")

    qmax = (1 << (bits - 1)) - 1 if signed else (1 << bits) - 1
    qmin = -qmax if signed else 0
    peak = float(np.max(np.abs(real))) if real.size else 0.0
    scale = peak / qmax if peak > 0 else 1.0
    q = np.clip(_round_half_away(real / scale), qmin, qmax)
    dtype = np.int8 if signed else np.uint8
    return QuantizedTensor(values=q.astype(dtype), scale=scale, signed=signed, bits=bits)


def slice_bits(q: QuantizedTensor) -> list[BitPlane]:
    """Decompose into 8 binary planes.

    Unsigned: sum(2**b * plane_b) == values.
    Signed (two's complement): same with plane 7 weighted -128.
    """
    raw = q.values.astype(np.uint8) if q.signed else q.values
    planes = []
    for b in range(8):
        bits = ((raw >> b) & 1).astype(np.uint8)
        mag = -(1 << 7) if (q.signed and b == 7) else (1 << b)
        planes.append(BitPlane(bit_index=b, bits=bits, magnitude=mag))
    return planes


def plane_stack(q: QuantizedTensor) -> tuple[np.ndarray, np.ndarray]:
    """Planes as one (8, ...) uint8 array plus the (8,) magnitude vector."""
    planes = slice_bits(q)
    stack = np.stack([p.bits for p in planes])
    mags = np.array([p.magnitude for p in planes], dtype=np.int64)
    return stack, mags


def reconstruct(planes: list[BitPlane]) -> np.ndarray:
    """Inverse of slice_bits; exact integer recomposition."""
    total = np.zeros(planes[0].bits.shape, dtype=np.int64)
    for p in planes:
        total += p.magnitude * p.bits.astype(np.int64)
    return total


def reference_vmm(weights: QuantizedTensor, x: QuantizedTensor) -> np.ndarray:
    """Exact integer y = W @ x in 64-bit accumulation.

    weights: (n_out, n_in), x: (n_in,) or (n_in, n_vec).  Ground truth for
    every error measurement in the simulator.
    """
    w = weights.values.astype(np.int64)
    v = x.values.astype(np.int64)
    if w.ndim != 2:
        raise BitplaneError(f"weights must be 2-D, got shape {w.shape}")
    if w.shape[1] != v.shape[0]:
        raise BitplaneError(
            f"dimension mismatch: weights {w.shape} @ x {v.shape}"
        )
    return w @ v


def write_qtsr(path, q: QuantizedTensor) -> None:
    """Serialize in the QTSR binary format.

    Layout: magic "QTSR", u8 version, u8 signedness, u8 bits, u8 rank,
    little-endian u32 dims[rank], little-endian f64 scale, then raw values
    (i8/u8) row-major.
    """
    vals = np.ascontiguousarray(q.values)
    with open(path, "wb") as f:
        f.write(QTSR_MAGIC)
        f.write(struct.pack("<BBBB", QTSR_VERSION, 1 if q.signed else 0, q.bits, vals.ndim))
        f.write(struct.pack(f"<{vals.ndim}I", *vals.shape))
        f.write(struct.pack("<d", q.scale))
        f.write(vals.tobytes())


def read_qtsr(path) -> QuantizedTensor:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != QTSR_MAGIC:
            raise BitplaneError(f"{path}: bad magic {magic!r}")
        version, signed_flag, bits, rank = struct.unpack("<BBBB", f.read(4))
        if version != QTSR_VERSION:
            raise BitplaneError(f"{path}: unsupported version {version}")
        dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
        (scale,) = struct.unpack("<d", f.read(8))
        count = int(np.prod(dims)) if rank else 1
        raw = f.read(count)
        if len(raw) != count:
            raise BitplaneError(f"{path}: truncated payload")
        dtype = np.int8 if signed_flag else np.uint8
        values = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return QuantizedTensor(values=values, scale=scale, signed=bool(signed_flag), bits=bits)
