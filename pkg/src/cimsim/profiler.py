"""Workload profiling: distributions of true bitline counts per sub-operation.

For every (input bit, weight bit) pair and candidate wordline count, the
profiler replays the schedule's row grouping over an activation stream and
histograms the noiseless coincidence count N seen by each ADC read.  These
per-pair PMFs are what turn the device misread model into workload-specific
expected errors.

Grouping follows the zero-skip execution model by default: each read takes
the next n_wl rows whose input bit is 1, and the trailing partial group is
recorded in the same histogram.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bitplane import QuantizedTensor, plane_stack

POLICIES = ("baseline", "zero_skip", "counting_cards")


class ProfileError(ValueError):
    pass


class MissingPMFError(KeyError):
    pass


@dataclass
class ReadoutPMF:
    """Histogram of true counts N over [0, n_wl] for one sub-operation."""

    x_bit: int
    w_bit: int
    n_wl: int
    counts: np.ndarray
    total: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.counts) != self.n_wl + 1:
            raise ProfileError(
                f"histogram must span 0..{self.n_wl}, got {len(self.counts)} bins"
            )
        observed = int(self.counts.sum())
        if self.total == 0:
            self.total = observed
        elif self.total != observed:
            raise ProfileError("total does not match histogram counts")

    @property
    def flagged(self) -> bool:
        """True when the pair produced no reads (degenerate point mass at 0)."""
        return self.total == 0

    def probs(self) -> np.ndarray:
        if self.total == 0:
            p = np.zeros(self.n_wl + 1)
            p[0] = 1.0
            return p
        return self.counts / self.total


def group_boundaries(one_positions: np.ndarray, n_wl: int) -> np.ndarray:
    """Start offsets of each zero-skip group within the ordered 1-rows."""
    return np.arange(0, len(one_positions), n_wl)


@dataclass
class LayerProfile:
    """All PMFs of one layer plus the row-activity statistics the optimizer needs."""

    n_rows: int
    n_cols: int
    n_samples: int
    n_wl_values: tuple
    policy: str
    pmfs: dict = field(default_factory=dict)
    ones_per_sample: np.ndarray | None = None  # (8, n_samples)

    def mean_ones(self, x_bit: int) -> float:
        """Average number of enabled 1-rows per sample for one input bit plane."""
        return float(self.ones_per_sample[x_bit].mean())

    def expected_reads(self, x_bit: int, n_wl: int) -> float:
        """Average ADC reads per column per sample at n_wl rows per read.

        Counts the trailing partial group, so short columns are not
        underestimated the way the smooth ones/n_wl model is.
        """
        ones = self.ones_per_sample[x_bit]
        return float(np.ceil(ones / n_wl).mean())

    def get(self, x_bit: int, w_bit: int, n_wl: int) -> ReadoutPMF:
        return pmf_of(self.pmfs, x_bit, w_bit, n_wl)


def pmf_of(pmf_set: dict, x_bit: int, w_bit: int, n_wl: int) -> ReadoutPMF:
    """Total lookup into a profiled PMF set."""
    key = (x_bit, w_bit, n_wl)
    if key not in pmf_set:
        raise MissingPMFError(f"no PMF profiled for x={x_bit} w={w_bit} n_wl={n_wl}")
    return pmf_set[key]


def profile_pmfs(weight_planes: np.ndarray, activation_bits: np.ndarray,
                 n_wl: int, policy: str = "zero_skip") -> dict:
    """Histogram true counts for all 64 pairs at one wordline count.

    weight_planes: (8, n_rows, n_cols) binary, activation_bits:
    (8, n_samples, n_rows) binary.  Returns {(x_bit, w_bit): ReadoutPMF}.
    """
    prof = _profile(weight_planes, activation_bits, [n_wl], policy)
    return {(x, w): pmf for (x, w, _), pmf in prof.pmfs.items()}


def profile_layer(weights: QuantizedTensor, activations: QuantizedTensor,
                  n_wl_values, policy: str = "zero_skip") -> LayerProfile:
    """Profile a layer over every requested wordline count.

    weights: (n_out, n_in); activations: (n_samples, n_in) stream.
    """
    w_stack, _ = plane_stack(weights)           # (8, n_out, n_in)
    weight_planes = np.transpose(w_stack, (0, 2, 1))  # rows = inputs
    a_stack, _ = plane_stack(activations)       # (8, n_samples, n_in)
    return _profile(weight_planes, a_stack, list(n_wl_values), policy)


def _profile(weight_planes: np.ndarray, activation_bits: np.ndarray,
             n_wl_values: list, policy: str) -> LayerProfile:
    if policy not in ("baseline", "zero_skip"):
        raise ProfileError(f"unsupported profiling policy {policy!r}")
    if activation_bits.ndim != 3 or activation_bits.shape[1] == 0:
        raise ProfileError("activation stream must be a non-empty (8, samples, rows) stack")
    n_rows, n_cols = weight_planes.shape[1], weight_planes.shape[2]
    n_samples = activation_bits.shape[1]
    if activation_bits.shape[2] != n_rows:
        raise ProfileError(
            f"activation rows {activation_bits.shape[2]} != weight rows {n_rows}"
        )
    for n_wl in n_wl_values:
        if not 1 <= n_wl:
            raise ProfileError(f"n_wl must be >= 1, got {n_wl}")

    hists = {
        (x, w, n): np.zeros(n + 1, dtype=np.int64)
        for x in range(8) for w in range(8) for n in n_wl_values
    }
    ones_per_sample = np.zeros((8, n_samples), dtype=np.int64)

    planes_flat = weight_planes.astype(np.int64)
    for x in range(8):
        for s in range(n_samples):
            row_bits = activation_bits[x, s]
            ones = np.flatnonzero(row_bits)
            ones_per_sample[x, s] = len(ones)
            for n_wl in n_wl_values:
                if policy == "baseline":
                    enabled = np.flatnonzero(row_bits)
                    # consecutive fixed groups; membership assigned by row index
                    if n_rows == 0:
                        continue
                    group_of_row = np.arange(n_rows) // n_wl
                    n_groups = int(np.ceil(n_rows / n_wl))
                    if len(enabled):
                        sub = planes_flat[:, enabled, :]
                        g = group_of_row[enabled]
                        for w in range(8):
                            cw = np.zeros((n_groups, n_cols), dtype=np.int64)
                            np.add.at(cw, g, sub[w])
                            flat = cw.ravel()
                            hists[(x, w, n_wl)] += np.bincount(
                                flat, minlength=n_wl + 1)[: n_wl + 1]
                    else:
                        zero_reads = n_groups * n_cols
                        for w in range(8):
                            hists[(x, w, n_wl)][0] += zero_reads
                else:
                    if len(ones) == 0:
                        continue
                    offsets = group_boundaries(ones, n_wl)
                    sub = planes_flat[:, ones, :]
                    for w in range(8):
                        reads = np.add.reduceat(sub[w], offsets, axis=0)
                        hists[(x, w, n_wl)] += np.bincount(
                            reads.ravel(), minlength=n_wl + 1)[: n_wl + 1]

    pmfs = {
        (x, w, n): ReadoutPMF(x_bit=x, w_bit=w, n_wl=n, counts=h)
        for (x, w, n), h in hists.items()
    }
    return LayerProfile(
        n_rows=n_rows, n_cols=n_cols, n_samples=n_samples,
        n_wl_values=tuple(n_wl_values), policy=policy,
        pmfs=pmfs, ones_per_sample=ones_per_sample,
    )


def merge_profiles(a: LayerProfile, b: LayerProfile) -> LayerProfile:
    """Additive merge of two profiles of the same layer (disjoint streams)."""
    if (a.n_rows, a.n_cols, a.n_wl_values, a.policy) != (b.n_rows, b.n_cols, b.n_wl_values, b.policy):
        raise ProfileError("profiles are not mergeable")
    pmfs = {}
    for key, pa in a.pmfs.items():
        pb = b.pmfs[key]
        pmfs[key] = ReadoutPMF(pa.x_bit, pa.w_bit, pa.n_wl, pa.counts + pb.counts)
    return LayerProfile(
        n_rows=a.n_rows, n_cols=a.n_cols, n_samples=a.n_samples + b.n_samples,
        n_wl_values=a.n_wl_values, policy=a.policy, pmfs=pmfs,
        ones_per_sample=np.concatenate([a.ones_per_sample, b.ones_per_sample], axis=1),
    )


def save_pmf_cache(path, profiles: dict) -> None:
    """Write PMFs of named layers as a text table.

    Data columns: layer x_bit w_bit n_wl N count.  Layer geometry and row
    activity ride along as comment lines so a reload can rebuild the
    optimizer inputs without re-profiling.
    """
    with open(path, "w") as f:
        f.write("# pmf cache v1\n")
        f.write("layer\tx_bit\tw_bit\tn_wl\tN\tcount\n")
        for name in sorted(profiles):
            prof = profiles[name]
            f.write(f"# layer {name} rows={prof.n_rows} cols={prof.n_cols} "
                    f"samples={prof.n_samples} policy={prof.policy}\n")
            ones = " ".join(
                ",".join(str(v) for v in prof.ones_per_sample[x]) for x in range(8)
            )
            f.write(f"# ones {name} {ones}\n")
            for key in sorted(prof.pmfs):
                x, w, n = key
                counts = prof.pmfs[key].counts
                for value, count in enumerate(counts):
                    if count:
                        f.write(f"{name}\t{x}\t{w}\t{n}\t{value}\t{count}\n")


def load_pmf_cache(path) -> dict:
    metas: dict = {}
    ones: dict = {}
    rows: dict = {}
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("# layer "):
                parts = line.split()
                name = parts[2]
                kv = dict(p.split("=", 1) for p in parts[3:])
                metas[name] = kv
            elif line.startswith("# ones "):
                parts = line.split(" ", 3)
                name = parts[2]
                ones[name] = np.array(
                    [[int(v) for v in plane.split(",")] for plane in parts[3].split(" ")],
                    dtype=np.int64,
                )
            elif line.startswith("#") or line.startswith("layer\t") or not line:
                continue
            else:
                name, x, w, n, value, count = line.split("\t")
                rows.setdefault(name, {}).setdefault(
                    (int(x), int(w), int(n)), []).append((int(value), int(count)))

    profiles = {}
    for name, meta in metas.items():
        n_wl_values = sorted({k[2] for k in rows.get(name, {})})
        pmfs = {}
        for x in range(8):
            for w in range(8):
                for n in n_wl_values:
                    counts = np.zeros(n + 1, dtype=np.int64)
                    for value, count in rows.get(name, {}).get((x, w, n), []):
                        counts[value] = count
                    pmfs[(x, w, n)] = ReadoutPMF(x, w, n, counts)
        profiles[name] = LayerProfile(
            n_rows=int(meta["rows"]), n_cols=int(meta["cols"]),
            n_samples=int(meta["samples"]), n_wl_values=tuple(n_wl_values),
            policy=meta.get("policy", "zero_skip"), pmfs=pmfs,
            ones_per_sample=ones.get(name),
        )
    return profiles
