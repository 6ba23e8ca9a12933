"""Bundled desk-scale workloads.

Everything here is generated from fixed seeds so experiments are exactly
reproducible without downloads:

* bundled_layer  - a single 128-row synthetic layer used to validate the
  analytic error bound against Monte-Carlo simulation.
* synthetic_cnn  - a 4-layer CNN whose channels split into a few "loud"
  (near-full-scale, dense high bit planes) and many zero channels.  The
  loud/zero mix gives the magnitude-skewed error structure real quantized
  networks show, keeps the minimum achievable error low enough for tight
  error budgets, and leaves plenty of zero rows for schedules that skip them.
* tiny MLP       - a small trained classifier shipped as QTSR files for
  accuracy-versus-variance sweeps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archsim import Network, NetworkLayer, im2col, requantize, reference_layer
from .bitplane import QuantizedTensor, quantize_affine, read_qtsr, write_qtsr

DATA_DIR = Path(__file__).parent / "data" / "mlp"


@dataclass
class WorkloadLayer:
    """A bare VMM workload: one weight matrix plus an activation stream."""

    name: str
    weights: QuantizedTensor       # (n_out, n_in)
    activations: QuantizedTensor   # (n_samples, n_in)


def _values_from_plane_density(rng, densities: dict, shape: tuple) -> np.ndarray:
    """Draw integers whose bit planes have the requested densities."""
    total = np.zeros(shape, dtype=np.int64)
    for bit, p in densities.items():
        total += (rng.random(shape) < p).astype(np.int64) << bit
    return total


def bundled_layer(seed: int = 0x51AB, n_samples: int = 16) -> WorkloadLayer:
    """128-row, 16-output layer with non-negative weights.

    Weight bit planes 0..6 are Bernoulli(0.3), activation planes 0..6
    Bernoulli(0.5); the weight sign plane stays empty so error contributions
    do not cancel between the sign plane and the rest.  Every activation
    plane's popcount is trimmed to a multiple of 8, so group counts match
    the smooth ones/n_wl read model exactly at the default group size.
    """
    rng = np.random.default_rng(seed)
    w = _values_from_plane_density(rng, {b: 0.3 for b in range(7)}, (16, 128))
    x = _values_from_plane_density(rng, {b: 0.5 for b in range(7)}, (n_samples, 128))
    for s in range(n_samples):
        for b in range(7):
            ones = np.flatnonzero((x[s] >> b) & 1)
            for i in ones[: len(ones) % 8]:
                x[s, i] &= ~(1 << b)
    weights = QuantizedTensor(values=w.astype(np.int8), scale=1.0 / 127,
                              signed=True, bits=8)
    acts = QuantizedTensor(values=x.astype(np.uint8), scale=1.0 / 127,
                           signed=False, bits=7)
    return WorkloadLayer(name="bundled128", weights=weights, activations=acts)


# ---------------------------------------------------------------------------
# Synthetic 4-layer CNN
# ---------------------------------------------------------------------------

CNN_SEED = 0xC4A7
CNN_IMAGE_HW = 10
CNN_LOUD = ((96,), (96, 64), (96,), (96,))  # loud-channel weight values
CNN_CHANNELS = (4, 8, 8, 10)   # total output channels per layer
CNN_BRIGHT_P = 0.0             # bright-pixel fraction of runtime images
CNN_CAL_BRIGHT_P = 0.02        # scattered bright pixels in calibration images
CNN_DIM_LO, CNN_DIM_HI = 4, 7  # typical pixel range (exclusive hi)


def _loud_weight_matrix(n_out: int, n_in: int, loud_values) -> np.ndarray:
    """A few loud channels at single-bit-pair values, the rest exactly zero.

    96 sets bit planes 5+6, 64 sets plane 6 alone; the dense high planes make
    every full read group of a loud column saturate identically, the
    magnitude-skewed structure that lets a few sub-operations dominate the
    error budget.
    """
    w = np.zeros((n_out, n_in), dtype=np.int64)
    for ch, value in enumerate(loud_values):
        w[ch, :] = value
    return w


def _dim_images(rng, n: int, hw: int, bright_p: float) -> np.ndarray:
    """Typical inputs: dim pixels with sparse bright speckle."""
    imgs = rng.integers(CNN_DIM_LO, CNN_DIM_HI, size=(n, 1, hw, hw))
    speckle = rng.random((n, 1, hw, hw)) < bright_p
    return np.where(speckle, 127, imgs).astype(np.uint8)


def _calibration_images(rng, n: int, hw: int) -> np.ndarray:
    """Calibration inputs: one fully bright image plus dim images with a
    bright 3x3 block each.

    The bright content pins every layer's quantization peak an order of
    magnitude above the typical patch, so normalized errors on typical data
    stay small (the heavy-tailed structure real feature maps show), and the
    full-bright image keeps the peak undiluted at depth.
    """
    imgs = _dim_images(rng, n, hw, CNN_CAL_BRIGHT_P)
    imgs[0] = 127
    for i in range(1, n):
        r = rng.integers(0, hw - 3)
        c = rng.integers(0, hw - 3)
        imgs[i, 0, r:r + 3, c:c + 3] = 127
    return imgs


def synthetic_cnn(seed: int = CNN_SEED, n_images: int = 4,
                  loud=CNN_LOUD, bright_p: float = CNN_BRIGHT_P):
    """Fixed-seed 4-layer CNN (3 conv + 1 fc) and a batch of input images.

    Returns (network, images) with images shaped (n, 1, H, W) as a 7-bit
    unsigned QuantizedTensor.  Quantization divisors are calibrated on a
    noiseless integer reference pass over a fixed calibration batch.
    """
    rng = np.random.default_rng(seed)
    hw = CNN_IMAGE_HW

    specs = []
    c_in, h = 1, hw
    for li, (c_out, n_loud) in enumerate(zip(CNN_CHANNELS[:3], loud[:3])):
        n_in = c_in * 9
        w = _loud_weight_matrix(c_out, n_in, n_loud)
        specs.append({
            "name": f"conv{li + 1}", "kind": "conv", "w": w,
            "conv": {"cin": c_in, "kh": 3, "kw": 3, "in_h": h, "in_w": h, "stride": 1},
        })
        c_in, h = c_out, h - 2
    n_in = c_in * h * h
    w = _loud_weight_matrix(CNN_CHANNELS[3], n_in, loud[3])
    specs.append({"name": "fc4", "kind": "fc", "w": w, "conv": None})

    cal = _calibration_images(rng, 8, hw)
    images = QuantizedTensor(values=_dim_images(rng, n_images, hw, bright_p),
                             scale=1.0 / 127, signed=False, bits=7)

    layers = []
    acts = cal.reshape(8, -1)
    for li, spec in enumerate(specs):
        wq = QuantizedTensor(values=spec["w"].astype(np.int8), scale=1.0 / 127,
                             signed=True, bits=8)
        layer = NetworkLayer(
            name=spec["name"], kind=spec["kind"], weights=wq,
            bias=np.zeros(spec["w"].shape[0], dtype=np.int64),
            quant_divisor=1.0, relu=True, out_bits=7, conv=spec["conv"],
        )
        if layer.kind == "conv":
            c = layer.conv
            vmm_in = im2col(acts.reshape(8, c["cin"], c["in_h"], c["in_w"]),
                            c["kh"], c["kw"], c["stride"])
        else:
            vmm_in = acts.reshape(8, 1, -1)
        ref = reference_layer(layer, vmm_in.reshape(-1, layer.n_in))
        peak = float(np.abs(ref).max())
        layer.quant_divisor = max(peak / 127.0, 1.0)
        layers.append(layer)
        out = ref.reshape(8, vmm_in.shape[1], layer.n_out).transpose(0, 2, 1)
        acts = requantize(layer, out.reshape(8, -1))

    network = Network(layers=layers, input_shape=(1, hw, hw), name="synthetic_cnn")
    return network, images


# ---------------------------------------------------------------------------
# Tiny trained MLP fixture (shipped as QTSR files)
# ---------------------------------------------------------------------------

MLP_SEED = 0x3E8
MLP_FEATURES = 64
MLP_HIDDEN = 16
MLP_CLASSES = 4
MLP_TRAIN = 1024
MLP_TEST = 512
MLP_SPREAD = 0.13      # within-class feature spread; sets the noise margin


def _mlp_dataset(rng):
    centers = rng.uniform(0.15, 0.85, size=(MLP_CLASSES, MLP_FEATURES))
    labels_train = rng.integers(0, MLP_CLASSES, size=MLP_TRAIN)
    labels_test = rng.integers(0, MLP_CLASSES, size=MLP_TEST)

    def draw(labels):
        pts = centers[labels] + rng.normal(0.0, MLP_SPREAD, size=(len(labels), MLP_FEATURES))
        return np.clip(pts, 0.0, 1.0)

    return draw(labels_train), labels_train, draw(labels_test), labels_test


def _train_mlp(rng, x, labels):
    """Plain full-batch gradient descent on softmax cross entropy."""
    w1 = rng.normal(0, 0.3, size=(MLP_HIDDEN, MLP_FEATURES))
    b1 = np.zeros(MLP_HIDDEN)
    w2 = rng.normal(0, 0.3, size=(MLP_CLASSES, MLP_HIDDEN))
    b2 = np.zeros(MLP_CLASSES)
    onehot = np.eye(MLP_CLASSES)[labels]
    lr = 0.5
    for _ in range(400):
        h = np.maximum(x @ w1.T + b1, 0.0)
        logits = h @ w2.T + b2
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / len(x)
        gw2 = g.T @ h
        gb2 = g.sum(axis=0)
        gh = g @ w2
        gh[h <= 0] = 0.0
        gw1 = gh.T @ x
        gb1 = gh.sum(axis=0)
        w1 -= lr * gw1
        b1 -= lr * gb1
        w2 -= lr * gw2
        b2 -= lr * gb2
    return w1, b1, w2, b2


def build_tiny_mlp(seed: int = MLP_SEED):
    """Train and quantize the classifier fixture; returns (network, x_q, labels)."""
    rng = np.random.default_rng(seed)
    x_train, y_train, x_test, y_test = _mlp_dataset(rng)
    w1, b1, w2, b2 = _train_mlp(rng, x_train, y_train)

    x_q = quantize_affine(x_test, bits=7, signed=False)
    w1_q = quantize_affine(w1, bits=8, signed=True)
    w2_q = quantize_affine(w2, bits=8, signed=True)

    # integer pipeline calibration on the training set
    xt_q = quantize_affine(x_train, bits=7, signed=False)
    s_x, s_w1, s_w2 = x_q.scale, w1_q.scale, w2_q.scale
    b1_int = np.round(b1 / (s_w1 * s_x)).astype(np.int64)
    y1 = xt_q.values.astype(np.int64) @ w1_q.values.astype(np.int64).T + b1_int
    q1 = max(float(np.abs(y1).max()) / 127.0, 1.0)
    s_h = q1 * s_w1 * s_x
    b2_int = np.round(b2 / (s_w2 * s_h)).astype(np.int64)

    layers = [
        NetworkLayer(name="fc1", kind="fc", weights=w1_q, bias=b1_int,
                     quant_divisor=q1, relu=True, out_bits=7),
        NetworkLayer(name="fc2", kind="fc", weights=w2_q, bias=b2_int,
                     quant_divisor=1.0, relu=False, out_bits=8),
    ]
    network = Network(layers=layers, input_shape=(MLP_FEATURES,), name="tiny_mlp")
    return network, x_q, y_test.astype(np.int64)


def save_tiny_mlp(directory=DATA_DIR) -> None:
    network, x_q, labels = build_tiny_mlp()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_qtsr(directory / "w1.qtsr", network.layers[0].weights)
    write_qtsr(directory / "w2.qtsr", network.layers[1].weights)
    write_qtsr(directory / "test_x.qtsr", x_q)
    write_qtsr(directory / "test_y.qtsr",
               QuantizedTensor(values=labels.astype(np.uint8), scale=1.0,
                               signed=False, bits=8))
    manifest = {
        "bias1": network.layers[0].bias.tolist(),
        "bias2": network.layers[1].bias.tolist(),
        "quant_divisor1": network.layers[0].quant_divisor,
        "features": MLP_FEATURES, "hidden": MLP_HIDDEN, "classes": MLP_CLASSES,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def load_tiny_mlp(directory=DATA_DIR):
    """Load the shipped MLP fixture; returns (network, x_q, labels)."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    w1_q = read_qtsr(directory / "w1.qtsr")
    w2_q = read_qtsr(directory / "w2.qtsr")
    x_q = read_qtsr(directory / "test_x.qtsr")
    labels = read_qtsr(directory / "test_y.qtsr").values.astype(np.int64)
    layers = [
        NetworkLayer(name="fc1", kind="fc", weights=w1_q,
                     bias=np.array(manifest["bias1"], dtype=np.int64),
                     quant_divisor=manifest["quant_divisor1"], relu=True, out_bits=7),
        NetworkLayer(name="fc2", kind="fc", weights=w2_q,
                     bias=np.array(manifest["bias2"], dtype=np.int64),
                     quant_divisor=1.0, relu=False, out_bits=8),
    ]
    network = Network(layers=layers, input_shape=(manifest["features"],), name="tiny_mlp")
    return network, x_q, labels


def random_layer(seed: int, n_out: int = 16, n_in: int = 64,
                 n_samples: int = 8) -> WorkloadLayer:
    """Plain random int8 layer for tests."""
    rng = np.random.default_rng(seed)
    w = rng.integers(-127, 128, size=(n_out, n_in)).astype(np.int8)
    x = rng.integers(0, 128, size=(n_samples, n_in)).astype(np.uint8)
    return WorkloadLayer(
        name=f"random{seed}",
        weights=QuantizedTensor(values=w, scale=1.0 / 127, signed=True, bits=8),
        activations=QuantizedTensor(values=x, scale=1.0 / 127, signed=False, bits=7),
    )
