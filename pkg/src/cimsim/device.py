"""Statistical model of binary RRAM cells and the shared-column ADC.

Conductances are normalized so one on-cell contributes one ADC count in the
mean: an on-cell draws Normal(1, sigma**2), so a bitline summing N on-cells
carries Normal(N, sigma**2 * N) and the misread probability of reading
n_hat instead of n is

    Phi((n_hat - n + 0.5) / (sigma * sqrt(n))) -
    Phi((n_hat - n - 0.5) / (sigma * sqrt(n)))

with the boundary codes absorbing the tails.  Off-cells contribute nothing
unless a finite LRS/HRS ratio is configured.

ADC code placement, for a b-bit converter reading a group of R rows:
  R <= 2**b - 1 : every count is representable, integer codes 0..R.
  R == 2**b     : integer codes 0..2**b - 1; a full group saturates at the
                  top code (the one-count the converter cannot see).
  R >  2**b     : 2**b uniform reconstruction levels over [0, R]; the code k
                  reports round(k * R / (2**b - 1)) in count units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DeviceError(ValueError):
    pass


@dataclass
class DeviceParams:
    """Cell statistics plus ADC geometry.

    sigma            coefficient of variation of the on-state conductance
    hrs_ratio        on/off conductance ratio; inf means off-cells are ideal
    adc_bits         converter resolution in bits
    max_wordlines    largest row-group size any schedule may use (N_max)
    resample_per_read  draw fresh conductances every read (cycle-to-cycle
                       variation) instead of once at programming time
    group_rows_exact   baseline/zero-skip group size 2**b - 1 (every count
                       exactly representable) instead of the default 2**b
    """

    sigma: float
    adc_bits: int = 3
    max_wordlines: int = 16
    hrs_ratio: float = math.inf
    resample_per_read: bool = False
    group_rows_exact: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise DeviceError(f"sigma must be >= 0, got {self.sigma}")
        if self.adc_bits < 1:
            raise DeviceError(f"adc_bits must be >= 1, got {self.adc_bits}")
        if self.max_wordlines < (1 << self.adc_bits) - 1:
            raise DeviceError(
                f"max_wordlines={self.max_wordlines} below the "
                f"{(1 << self.adc_bits) - 1} distinguishable nonzero levels"
            )
        if self.hrs_ratio <= 0:
            raise DeviceError(f"hrs_ratio must be positive, got {self.hrs_ratio}")

    @property
    def rows_per_group(self) -> int:
        """Row-group size used by the baseline and zero-skip schedules."""
        b = 1 << self.adc_bits
        return b - 1 if self.group_rows_exact else b

    @property
    def off_conductance(self) -> float:
        return 0.0 if math.isinf(self.hrs_ratio) else 1.0 / self.hrs_ratio


def normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def readout_probability(n_hat: int, n: int, sigma: float, n_max: int | None = None) -> float:
    """P(read n_hat | n on-cells) for integer ADC codes.

    n_max is the top representable code; it absorbs the upper tail so the
    distribution over 0..n_max sums to one.  n_max=None leaves the upper
    range open (valid when codes far above n carry negligible mass).
    n = 0 puts a point mass at code 0: no on-cells means no variance.
    """
    if sigma < 0:
        raise DeviceError(f"sigma must be >= 0, got {sigma}")
    if n < 0 or n_hat < 0:
        raise DeviceError("counts must be non-negative")
    if n_max is not None and n_hat > n_max:
        raise DeviceError(f"n_hat={n_hat} above top code {n_max}")

    if n == 0 or sigma == 0.0:
        target = n if n_max is None else min(n, n_max)
        return 1.0 if n_hat == target else 0.0

    spread = sigma * math.sqrt(n)
    hi = 1.0 if (n_max is not None and n_hat == n_max) else normal_cdf((n_hat - n + 0.5) / spread)
    lo = 0.0 if n_hat == 0 else normal_cdf((n_hat - n - 0.5) / spread)
    return hi - lo


def adc_code_values(adc_bits: int, rows_enabled: int) -> np.ndarray:
    """Reported count value of every ADC code for a group of rows_enabled rows."""
    if rows_enabled < 1:
        raise DeviceError(f"rows_enabled must be >= 1, got {rows_enabled}")
    n_codes = 1 << adc_bits
    if rows_enabled <= n_codes - 1:
        return np.arange(rows_enabled + 1, dtype=np.int64)
    if rows_enabled == n_codes:
        return np.arange(n_codes, dtype=np.int64)
    step = rows_enabled / (n_codes - 1)
    return np.floor(np.arange(n_codes) * step + 0.5).astype(np.int64)


def _code_step(adc_bits: int, rows_enabled: int) -> float:
    n_codes = 1 << adc_bits
    if rows_enabled <= n_codes:
        return 1.0
    return rows_enabled / (n_codes - 1)


def adc_quantize(analog_level, adc_bits: int, rows_enabled: int):
    """Digitize a bitline level; returns the reported value in count units.

    Accepts a scalar or ndarray.  Saturates at the ends, never raises.
    Rounding is half up (ties only matter for noiseless levels).
    """
    values = adc_code_values(adc_bits, rows_enabled)
    step = _code_step(adc_bits, rows_enabled)
    level = np.asarray(analog_level, dtype=np.float64)
    idx = np.floor(level / step + 0.5).astype(np.int64)
    idx = np.clip(idx, 0, len(values) - 1)
    out = values[idx]
    if np.isscalar(analog_level) or getattr(analog_level, "ndim", 1) == 0:
        return int(out)
    return out


def code_distribution(n: int, sigma: float, adc_bits: int, rows_enabled: int):
    """Analytic distribution of reported values for a read of n on-cells.

    Returns (values, probs): the reported count of each ADC code and its
    probability.  Decision thresholds sit halfway between codes and the end
    codes absorb the tails, which generalizes the integer-code misread
    probability to over-subscribed groups.
    """
    values = adc_code_values(adc_bits, rows_enabled)
    step = _code_step(adc_bits, rows_enabled)
    k = np.arange(len(values))

    if n == 0 or sigma == 0.0:
        probs = np.zeros(len(values))
        idx = min(max(int(math.floor(n / step + 0.5)), 0), len(values) - 1)
        probs[idx] = 1.0
        return values, probs

    spread = sigma * math.sqrt(n)
    upper = (k * step + 0.5 * step - n) / spread
    lower = (k * step - 0.5 * step - n) / spread
    hi = np.array([normal_cdf(z) for z in upper])
    lo = np.array([normal_cdf(z) for z in lower])
    hi[-1] = 1.0
    lo[0] = 0.0
    return values, hi - lo


def sample_bitline(n_on: int, params: DeviceParams, rng: np.random.Generator,
                   n_off: int = 0) -> float:
    """Draw one analog bitline level as the sum of n_on i.i.d. Normal(1, sigma)
    conductances.

    Off-cells add n_off / hrs_ratio when the ratio is finite.  Deterministic
    for a given rng state.
    """
    if n_on < 0 or n_off < 0:
        raise DeviceError("cell counts must be non-negative")
    total = float(rng.normal(1.0, params.sigma, size=n_on).sum()) if n_on else 0.0
    return total + n_off * params.off_conductance


def sample_levels(n_on: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized bitline levels for many reads at once.

    The sum of n i.i.d. Normal(1, sigma) draws is exactly Normal(n, sigma**2 n),
    so one scaled draw per read reproduces sample_bitline's distribution.
    """
    n_on = np.asarray(n_on, dtype=np.float64)
    if sigma == 0.0:
        return n_on.copy()
    return n_on + sigma * np.sqrt(n_on) * rng.standard_normal(n_on.shape)
