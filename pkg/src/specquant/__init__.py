"""specquant: two-stage linear-layer compression.

Activation outliers are migrated into the weights by per-channel smoothing;
each output channel of the smoothed weights is then truncated to a budgeted
band of low-frequency bins kept at high precision, and the remainder is
quantized at low bit-width.
"""

__version__ = "0.1.0"

from .budget import METRICS, BudgetPlan, ImportanceVector, allocate, importance
from .errors import DataError, FormatError, ShapeError, SpecQuantError
from .pipeline import (
    BudgetComparison,
    CompressedLayer,
    SmoothingFactors,
    apply_smoothing,
    compare_budgets,
    compress_layer,
    compute_smoothing,
    forward_approx,
    select_migration_strength,
    svd_baseline,
)
from .quant import (
    QuantizedTensor,
    QuantParams,
    compute_params,
    dequantize,
    quantize,
    quantize_residual_compensated,
)
from .spectral import (
    ChannelSpectrum,
    ChannelStats,
    channel_stats,
    dft_naive,
    error_bound,
    fft,
    half_spectrum_length,
    parseval_check,
    reconstruct,
    truncate_low_freq,
)
from .tensor_io import (
    load_compressed_layer,
    load_manifest,
    load_matrix,
    save_compressed_layer,
    save_matrix,
)

__all__ = [
    "__version__",
    "METRICS",
    "BudgetPlan",
    "ImportanceVector",
    "allocate",
    "importance",
    "DataError",
    "FormatError",
    "ShapeError",
    "SpecQuantError",
    "BudgetComparison",
    "CompressedLayer",
    "SmoothingFactors",
    "apply_smoothing",
    "compare_budgets",
    "compress_layer",
    "compute_smoothing",
    "forward_approx",
    "select_migration_strength",
    "svd_baseline",
    "QuantizedTensor",
    "QuantParams",
    "compute_params",
    "dequantize",
    "quantize",
    "quantize_residual_compensated",
    "ChannelSpectrum",
    "ChannelStats",
    "channel_stats",
    "dft_naive",
    "error_bound",
    "fft",
    "half_spectrum_length",
    "parseval_check",
    "reconstruct",
    "truncate_low_freq",
    "load_compressed_layer",
    "load_manifest",
    "load_matrix",
    "save_compressed_layer",
    "save_matrix",
]
