"""Chip-level composition: arrays into PEs, layers onto arrays, full inference.

Layers are tiled into array-sized blocks (rows x 16 logical columns by
default); leftover arrays become whole duplicate copies handed out
proportionally to each layer's estimated read workload.  Convolutions are
lowered to VMM by patch extraction.  A vector unit applies bias, requantize,
and relu between layers.

Per-layer MAE is measured locally: the noisy output of a layer is compared
with the exact integer product of the same layer on the same (noisy)
activations, so each layer's error reflects only its own device noise and
the configured threshold stays meaningful layer by layer.  The final outputs
are additionally compared against the fully noiseless cascade.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bitplane import QuantizedTensor
from .crossbar import (EnergyParams, PerfCounters, counters_energy,
                       program_array, simulate_vmm)
from .device import DeviceParams
from .optimizer import WordlineLUT


class ArchError(ValueError):
    pass


@dataclass
class NetworkLayer:
    """One VMM-shaped layer: conv layers carry their patch geometry."""

    name: str
    kind: str                  # "conv" | "fc"
    weights: QuantizedTensor   # (n_out, n_in); conv n_in = cin*kh*kw
    bias: np.ndarray           # int64, in pre-requant integer output units
    quant_divisor: float       # q: next activation = clamp(round(y_int / q))
    relu: bool = True
    out_bits: int = 7
    conv: dict | None = None   # {"cin","kh","kw","in_h","in_w","stride"}

    @property
    def n_in(self) -> int:
        return self.weights.values.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.values.shape[0]


@dataclass
class Network:
    layers: list
    input_shape: tuple         # (c, h, w) for conv front ends, (features,) for fc
    name: str = "network"


@dataclass
class PEConfig:
    arrays_per_pe: int = 64
    array_rows: int = 128
    array_cols: int = 128

    @property
    def logical_cols(self) -> int:
        return self.array_cols // 8


@dataclass
class ChipConfig:
    n_pes: int = 1
    pe: PEConfig = field(default_factory=PEConfig)
    energy: EnergyParams = field(default_factory=EnergyParams)
    noc_hops: int = 2
    noc_latency_cycles: int = 4

    @property
    def total_arrays(self) -> int:
        return self.n_pes * self.pe.arrays_per_pe


@dataclass
class LayerMapping:
    layer_index: int
    row_tiles: list            # [(start, stop), ...] over input rows
    col_tiles: list            # [(start, stop), ...] over logical outputs
    copies: int
    workload: float

    @property
    def arrays_per_copy(self) -> int:
        return len(self.row_tiles) * len(self.col_tiles)


def _tiles(total: int, size: int) -> list:
    return [(s, min(s + size, total)) for s in range(0, total, size)]


def _largest_remainder_split(total: int, weights: list) -> list:
    """Split `total` integer units proportionally to weights, deterministically."""
    wsum = float(sum(weights))
    if wsum <= 0 or total <= 0:
        return [0] * len(weights)
    quotas = [total * w / wsum for w in weights]
    floors = [int(np.floor(q)) for q in quotas]
    leftover = total - sum(floors)
    order = sorted(range(len(weights)),
                   key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def n_vmms(layer: NetworkLayer) -> int:
    if layer.kind == "fc":
        return 1
    c = layer.conv
    oh = (c["in_h"] - c["kh"]) // c["stride"] + 1
    ow = (c["in_w"] - c["kw"]) // c["stride"] + 1
    return oh * ow


def map_layers(network: Network, chip: ChipConfig) -> list:
    """Tile every layer, then duplicate proportionally to read workload."""
    mappings = []
    for idx, layer in enumerate(network.layers):
        row_tiles = _tiles(layer.n_in, chip.pe.array_rows)
        col_tiles = _tiles(layer.n_out, chip.pe.logical_cols)
        workload = float(n_vmms(layer) * layer.n_in)  # row-read volume proxy
        mappings.append(LayerMapping(layer_index=idx, row_tiles=row_tiles,
                                     col_tiles=col_tiles, copies=1,
                                     workload=workload))

    base = sum(m.arrays_per_copy for m in mappings)
    if base > chip.total_arrays:
        raise ArchError(
            f"network needs {base} arrays for one copy, chip has {chip.total_arrays}"
        )
    spares = chip.total_arrays - base
    shares = _largest_remainder_split(spares, [m.workload for m in mappings])
    for m, share in zip(mappings, shares):
        m.copies = 1 + share // m.arrays_per_copy
    return mappings


def im2col(images: np.ndarray, kh: int, kw: int, stride: int = 1) -> np.ndarray:
    """(n, c, h, w) -> (n, oh*ow, c*kh*kw) patch matrix, channel-major patches."""
    n, c, h, w = images.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.empty((n, oh * ow, c * kh * kw), dtype=images.dtype)
    p = 0
    for i in range(oh):
        for j in range(ow):
            si, sj = i * stride, j * stride
            patch = images[:, :, si:si + kh, sj:sj + kw]
            out[:, p, :] = patch.reshape(n, -1)
            p += 1
    return out


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def requantize(layer: NetworkLayer, y_int: np.ndarray) -> np.ndarray:
    """Vector-unit output stage: rescale to the next layer's activation grid.

    Clamping at zero is the relu; activations stay unsigned by construction.
    """
    q = _round_half_away(y_int / layer.quant_divisor)
    return np.clip(q, 0, (1 << layer.out_bits) - 1).astype(np.uint8)


def reference_layer(layer: NetworkLayer, acts: np.ndarray) -> np.ndarray:
    """Exact integer layer output (pre-requant) for (n_vmms, n_in) activations."""
    w = layer.weights.values.astype(np.int64)
    return acts.astype(np.int64) @ w.T + layer.bias[None, :]


def collect_layer_streams(network: Network, images: QuantizedTensor,
                          device: DeviceParams | None = None,
                          policy: str = "zero_skip",
                          rng: np.random.Generator | None = None) -> list:
    """Collect every layer's VMM input stream, the profiling workload.

    With no device (or sigma 0) this is the exact reference pass.  Passing a
    noisy device runs a forward pass under `policy` so the streams carry the
    activation scatter propagated noise induces at runtime; profiles built
    from such streams match what the arrays actually see.

    Returns one (n_images * n_vmms, n_in) unsigned QuantizedTensor per layer.
    """
    from .crossbar import program_array, simulate_vmm_batch

    noisy = device is not None and (device.sigma > 0 or device.off_conductance > 0)
    if noisy and rng is None:
        raise ArchError("noisy stream collection requires an rng")
    n_images = images.values.shape[0]
    acts = images.values.reshape(n_images, -1)
    bits = images.bits
    streams = []
    for idx, layer in enumerate(network.layers):
        vmm_in = _layer_vmm_inputs(layer, acts, n_images)
        flat = vmm_in.reshape(-1, layer.n_in).astype(np.uint8)
        streams.append(QuantizedTensor(values=flat.copy(), scale=images.scale,
                                       signed=False, bits=bits))
        if idx == len(network.layers) - 1:
            break
        if noisy:
            out = np.zeros((flat.shape[0], layer.n_out), dtype=np.int64)
            for (r0, r1) in _tiles(layer.n_in, 128):
                for (c0, c1) in _tiles(layer.n_out, 16):
                    wtile = QuantizedTensor(
                        values=layer.weights.values[c0:c1, r0:r1].copy(),
                        scale=layer.weights.scale, signed=layer.weights.signed,
                        bits=layer.weights.bits)
                    array = program_array(wtile, device,
                                          np.random.default_rng(rng.integers(0, 2**63 - 1)))
                    sub = QuantizedTensor(values=flat[:, r0:r1].copy(),
                                          scale=images.scale, signed=False, bits=bits)
                    y, _ = simulate_vmm_batch(array, sub, policy, rng=rng)
                    out[:, c0:c1] += y
            out = out + layer.bias[None, :]
            out = out.reshape(n_images, -1, layer.n_out)
        else:
            out = reference_layer(layer, flat).reshape(n_images, -1, layer.n_out)
        acts = requantize(layer, out.transpose(0, 2, 1).reshape(n_images, -1))
        bits = layer.out_bits
    return streams


@dataclass
class SimReport:
    per_layer: list
    chip: dict

    def to_json(self) -> str:
        return json.dumps({"per_layer": self.per_layer, "chip": self.chip},
                          sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "SimReport":
        data = json.loads(text)
        return SimReport(per_layer=data["per_layer"], chip=data["chip"])


def _layer_vmm_inputs(layer: NetworkLayer, acts: np.ndarray,
                      n_images: int) -> np.ndarray:
    """Shape activations into the (n_images, n_vmms, n_in) VMM stream."""
    if layer.kind == "fc":
        return acts.reshape(n_images, 1, layer.n_in)
    c = layer.conv
    imgs = acts.reshape(n_images, c["cin"], c["in_h"], c["in_w"])
    return im2col(imgs, c["kh"], c["kw"], c["stride"])


def simulate_network(network: Network, images: QuantizedTensor, mapping: list,
                     device: DeviceParams, policy: str, rng: np.random.Generator,
                     luts: dict | None = None, chip: ChipConfig | None = None,
                     labels: np.ndarray | None = None,
                     dump_dir=None) -> SimReport:
    """Noisy end-to-end inference with per-layer error and counters.

    images: (n_images, ...) quantized inputs.  luts maps layer index ->
    WordlineLUT for the counting-cards policy.  dump_dir, when given,
    receives each layer's output activations as QTSR tensors for external
    verification.
    """
    chip = chip or ChipConfig()
    if len(mapping) != len(network.layers):
        raise ArchError("mapping does not cover all layers")
    n_images = images.values.shape[0]

    noisy_acts = images.values.reshape(n_images, -1)
    ref_acts = noisy_acts.copy()
    act_bits = images.bits

    per_layer = []
    total_energy = 0.0
    throughput_cycles = 0
    latency_cycles = 0
    total_counters = PerfCounters()

    for idx, layer in enumerate(network.layers):
        m = mapping[idx]
        lut = (luts or {}).get(idx)

        vmm_in = _layer_vmm_inputs(layer, noisy_acts, n_images)
        ref_vmm_in = _layer_vmm_inputs(layer, ref_acts, n_images)
        nv = vmm_in.shape[1]

        # program every tile of every copy with its own conductance sample
        copies = []
        for copy in range(m.copies):
            tiles = {}
            for (r0, r1) in m.row_tiles:
                for (c0, c1) in m.col_tiles:
                    wtile = QuantizedTensor(
                        values=layer.weights.values[c0:c1, r0:r1].copy(),
                        scale=layer.weights.scale, signed=layer.weights.signed,
                        bits=layer.weights.bits)
                    seed_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
                    tiles[(r0, r1, c0, c1)] = (
                        program_array(wtile, device, seed_rng,
                                      chip.pe.array_rows, chip.pe.array_cols),
                        PerfCounters(),
                        seed_rng,
                    )
            copies.append(tiles)

        noisy_out = np.zeros((n_images, nv, layer.n_out), dtype=np.int64)
        flat_in = vmm_in.reshape(n_images * nv, layer.n_in)
        for v in range(n_images * nv):
            tiles = copies[v % m.copies]
            for (r0, r1, c0, c1), (array, ctr, tile_rng) in tiles.items():
                xq = QuantizedTensor(values=flat_in[v, r0:r1].copy(),
                                     scale=images.scale, signed=False, bits=act_bits)
                y, _ = simulate_vmm(array, xq, policy, lut=lut, rng=tile_rng,
                                    counters=ctr)
                noisy_out.reshape(-1, layer.n_out)[v, c0:c1] += y
        noisy_out += layer.bias[None, None, :]

        # local reference: exact product on the same inputs this layer saw,
        # so the MAE isolates this layer's own device error
        ref_out_local = reference_layer(
            layer, vmm_in.reshape(-1, layer.n_in)
        ).reshape(n_images, nv, layer.n_out)
        ref_out_cascade = reference_layer(
            layer, ref_vmm_in.reshape(-1, layer.n_in)
        ).reshape(n_images, nv, layer.n_out)

        err = np.abs(noisy_out - ref_out_local).sum(axis=2) / layer.quant_divisor
        per_image_mae = err.mean(axis=1)
        mae = float(per_image_mae.mean())
        mae_ci = (1.96 * float(per_image_mae.std(ddof=1)) / np.sqrt(n_images)
                  if n_images > 1 else 0.0)

        layer_counters = PerfCounters()
        copy_cycles = []
        for tiles in copies:
            tile_cycles = [ctr.cycles for (_, ctr, _) in tiles.values()]
            copy_cycles.append(max(tile_cycles) if tile_cycles else 0)
            for (_, ctr, _) in tiles.values():
                layer_counters = layer_counters.merge(ctr)

        layer_cycles = (max(copy_cycles) if copy_cycles else 0) + chip.noc_latency_cycles
        cycles_per_image = layer_cycles / n_images

        traffic_bytes = n_images * nv * (layer.n_in + layer.n_out)
        noc_energy = traffic_bytes * chip.noc_hops * chip.energy.noc_hop_pj_per_byte
        layer_energy = counters_energy(layer_counters, chip.energy) + noc_energy

        per_layer.append({
            "name": layer.name,
            "cycles": layer_counters.cycles,
            "cycles_per_image": cycles_per_image,
            "adc_reads": layer_counters.adc_reads,
            "wordline_activations": layer_counters.wordline_activations,
            "stalls": layer_counters.stalls,
            "energy_pj": layer_energy,
            "mae": mae,
            "mae_ci95": mae_ci,
            "copies": m.copies,
        })
        total_energy += layer_energy
        total_counters = total_counters.merge(layer_counters)
        throughput_cycles = max(throughput_cycles, cycles_per_image)
        latency_cycles += cycles_per_image

        # conv outputs leave the patch loop as (image, patch, channel); the
        # next layer consumes channel-major (c, h, w) flattened activations
        noisy_flat = noisy_out.transpose(0, 2, 1).reshape(n_images, -1)
        ref_flat = ref_out_cascade.transpose(0, 2, 1).reshape(n_images, -1)
        if idx < len(network.layers) - 1:
            noisy_acts = requantize(layer, noisy_flat)
            ref_acts = requantize(layer, ref_flat)
            act_bits = layer.out_bits
        else:
            noisy_acts = noisy_flat
            ref_acts = ref_flat
        if dump_dir is not None and idx < len(network.layers) - 1:
            from pathlib import Path

            from .bitplane import write_qtsr
            directory = Path(dump_dir)
            directory.mkdir(parents=True, exist_ok=True)
            dump = QuantizedTensor(values=noisy_acts.astype(np.uint8),
                                   scale=images.scale, signed=False,
                                   bits=layer.out_bits)
            write_qtsr(directory / f"acts_{layer.name}.qtsr", dump)

    chip_stats = {
        "images": n_images,
        "cycles_per_image": throughput_cycles,
        "latency_cycles": latency_cycles,
        "adc_reads": total_counters.adc_reads,
        "energy_pj": total_energy,
        "energy_pj_per_image": total_energy / n_images,
        "final_mae": float(
            np.abs(noisy_acts.astype(np.float64) - ref_acts.astype(np.float64)).mean()),
    }
    if labels is not None:
        logits = noisy_acts.reshape(n_images, -1)
        ref_logits = ref_acts.reshape(n_images, -1)
        chip_stats["accuracy"] = float((logits.argmax(axis=1) == labels).mean())
        chip_stats["ref_accuracy"] = float((ref_logits.argmax(axis=1) == labels).mean())
    return SimReport(per_layer=per_layer, chip=chip_stats)
