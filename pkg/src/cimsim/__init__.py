"""cimsim: error-budgeted scheduling and simulation of RRAM compute-in-memory VMM."""

from .bitplane import (BitPlane, QuantizedTensor, quantize_affine, read_qtsr,
                       reference_vmm, slice_bits, write_qtsr)
from .crossbar import (CrossbarArray, EnergyParams, PerfCounters,
                       counters_energy, next_row_group, program_array,
                       simulate_vmm, simulate_vmm_batch)
from .device import (DeviceParams, adc_quantize, code_distribution,
                     readout_probability, sample_bitline)
from .errormodel import (ErrorEstimate, expected_read_error,
                         expected_vmm_error, estimate_layer_error,
                         monte_carlo_mae)
from .optimizer import (InfeasibleThresholdError, TradeoffTable, WordlineLUT,
                        brute_force_lut, build_tradeoff_table, optimize_lut,
                        uniform_lut)
from .profiler import (LayerProfile, ReadoutPMF, pmf_of, profile_layer,
                       profile_pmfs)

__version__ = "0.1.0"

__all__ = [
    "BitPlane", "QuantizedTensor", "quantize_affine", "read_qtsr",
    "reference_vmm", "slice_bits", "write_qtsr",
    "CrossbarArray", "EnergyParams", "PerfCounters", "counters_energy",
    "next_row_group", "program_array", "simulate_vmm", "simulate_vmm_batch",
    "DeviceParams", "adc_quantize", "code_distribution",
    "readout_probability", "sample_bitline",
    "ErrorEstimate", "expected_read_error", "expected_vmm_error",
    "estimate_layer_error", "monte_carlo_mae",
    "InfeasibleThresholdError", "TradeoffTable", "WordlineLUT",
    "brute_force_lut", "build_tradeoff_table", "optimize_lut", "uniform_lut",
    "LayerProfile", "ReadoutPMF", "pmf_of", "profile_layer", "profile_pmfs",
    "__version__",
]
