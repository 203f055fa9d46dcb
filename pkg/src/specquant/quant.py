"""Uniform asymmetric integer quantization.

A b-bit slice is coded as round(clamp(x / delta + z, 0, 2^b - 1)) with
delta = (max - min) / (2^b - 1) and z = -min / delta. Rounding is
half-away-from-zero. A constant slice (max == min) uses delta = 1,
z = -min so the constant is represented exactly.

Granularity picks the slicing axis: per_token quantizes each row (activation
matrices carry one token per row), per_channel each column (weight matrices
carry one output channel per column), per_tensor the whole matrix.
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import as_matrix, as_vector

GRANULARITIES = ("per_tensor", "per_token", "per_channel")

# Diagonal damping for the error-compensated scheme, as a fraction of the
# mean Gram diagonal.
COMPENSATION_DAMPING = 0.01


@dataclass
class QuantParams:
    bits: int
    delta: float
    zero_point: float


@dataclass
class QuantizedTensor:
    """Integer codes plus the per-slice scale/offset needed to invert them.

    `rtn_fallback` is set when error compensation was requested but the
    calibration Gram was unusable and plain round-to-nearest was used instead.
    """

    codes: np.ndarray
    bits: int
    granularity: str
    deltas: np.ndarray
    zero_points: np.ndarray
    rows: int
    cols: int
    rtn_fallback: bool = field(default=False)

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint8)
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        self.zero_points = np.asarray(self.zero_points, dtype=np.float64)
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if self.codes.shape != (self.rows, self.cols):
            raise ValueError("codes shape does not match rows/cols")

    @property
    def params(self):
        return [
            QuantParams(self.bits, float(d), float(z))
            for d, z in zip(self.deltas, self.zero_points)
        ]


def _check_bits(bits):
    bits = int(bits)
    if not 2 <= bits <= 8:
        raise ValueError(f"bits must lie in [2, 8], got {bits}")
    return bits


def compute_params(values, bits):
    """Scale and zero point for one slice."""
    values = as_vector(values, "slice")
    bits = _check_bits(bits)
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return QuantParams(bits, 1.0, -lo)
    delta = (hi - lo) / (2**bits - 1)
    return QuantParams(bits, delta, -lo / delta)


def _slice_params(x, bits, granularity):
    """Vectorized per-slice (deltas, zero_points) for a matrix."""
    if granularity == "per_tensor":
        if x.size == 0:
            raise ValueError("cannot quantize an empty matrix per_tensor")
        lo = np.array([x.min()])
        hi = np.array([x.max()])
    elif granularity == "per_token":
        if x.shape[1] == 0 and x.shape[0] > 0:
            raise ValueError("per_token slices must be non-empty")
        lo = x.min(axis=1) if x.size else np.zeros(x.shape[0])
        hi = x.max(axis=1) if x.size else np.zeros(x.shape[0])
    elif granularity == "per_channel":
        lo = x.min(axis=0) if x.size else np.zeros(x.shape[1])
        hi = x.max(axis=0) if x.size else np.zeros(x.shape[1])
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    span = hi - lo
    flat = span == 0
    deltas = np.where(flat, 1.0, span / (2**bits - 1))
    zps = np.where(flat, -lo, -lo / deltas)
    return deltas, zps


def _broadcast(q):
    if q.granularity == "per_token":
        return q.deltas[:, None], q.zero_points[:, None]
    if q.granularity == "per_channel":
        return q.deltas[None, :], q.zero_points[None, :]
    return q.deltas[0], q.zero_points[0]


def _encode(x, deltas, zps, bits, granularity):
    qmax = float(2**bits - 1)
    if granularity == "per_token":
        d, z = deltas[:, None], zps[:, None]
    elif granularity == "per_channel":
        d, z = deltas[None, :], zps[None, :]
    else:
        d, z = deltas[0], zps[0]
    v = np.clip(x / d + z, 0.0, qmax)
    # Values are non-negative after the clamp, so floor(v + 0.5) is
    # half-away-from-zero rounding.
    return np.floor(v + 0.5).astype(np.uint8)


def quantize(x, bits, granularity):
    """Quantize a matrix slice-wise at the given granularity."""
    x = as_matrix(x, "x")
    bits = _check_bits(bits)
    deltas, zps = _slice_params(x, bits, granularity)
    codes = _encode(x, deltas, zps, bits, granularity)
    return QuantizedTensor(
        codes=codes,
        bits=bits,
        granularity=granularity,
        deltas=deltas,
        zero_points=zps,
        rows=x.shape[0],
        cols=x.shape[1],
    )


def dequantize(q):
    """Invert quantization: (code - z) * delta per slice."""
    d, z = _broadcast(q)
    return (q.codes.astype(np.float64) - z) * d


def quantize_residual_compensated(r, bits, x_calib):
    """Error-compensated quantization of a weight-like matrix.

    Entries are quantized in ascending input-index order (rows of r, all
    output channels at once). After each index is fixed, the rounding error
    is propagated to the not-yet-quantized indices of the same channel by
    the least-squares update against the damped calibration Gram
    H = X^T X + damp * I, with damp = 1% of the mean Gram diagonal. The
    remaining-set inverse is maintained by rank-one downdates.

    Per-channel scales come from the original matrix, as in plain
    round-to-nearest. Greedy compensation can occasionally lose to RTN by a
    sliver, and channels are independent in the weighted objective, so each
    channel keeps whichever of the two code vectors scores lower on
    ||X (r - dequant)||; the result is never worse than RTN. A Gram that
    cannot be inverted triggers a fallback to plain RTN, flagged on the
    result.
    """
    r = as_matrix(r, "r")
    bits = _check_bits(bits)
    x = as_matrix(x_calib, "x_calib")
    c_in, c_out = r.shape
    if x.shape[1] != c_in:
        raise ValueError(
            f"calibration activations have {x.shape[1]} channels, expected {c_in}"
        )

    def fallback():
        q = quantize(r, bits, "per_channel")
        q.rtn_fallback = True
        return q

    if c_in == 0 or c_out == 0:
        return fallback()

    gram = x.T @ x
    damp = COMPENSATION_DAMPING * float(np.mean(np.diag(gram)))
    if not np.isfinite(damp) or damp <= 0.0:
        return fallback()
    gram[np.diag_indices_from(gram)] += damp
    try:
        hinv = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        return fallback()
    if not np.isfinite(hinv).all():
        return fallback()

    deltas, zps = _slice_params(r, bits, "per_channel")
    work = r.copy()
    codes = np.empty((c_in, c_out), dtype=np.uint8)
    qmax = float(2**bits - 1)
    for i in range(c_in):
        d = hinv[i, i]
        if not np.isfinite(d) or d <= 0.0:
            return fallback()
        row = work[i, :]
        c = np.floor(np.clip(row / deltas + zps, 0.0, qmax) + 0.5)
        codes[i, :] = c
        err = row - (c - zps) * deltas
        if i + 1 < c_in:
            work[i + 1 :, :] -= np.outer(hinv[i + 1 :, i], err) / d
        hinv -= np.outer(hinv[:, i], hinv[i, :]) / d

    rtn_codes = _encode(r, deltas, zps, bits, "per_channel")
    err_comp = x @ (r - (codes.astype(np.float64) - zps[None, :]) * deltas[None, :])
    err_rtn = x @ (r - (rtn_codes.astype(np.float64) - zps[None, :]) * deltas[None, :])
    worse = (err_comp**2).sum(axis=0) > (err_rtn**2).sum(axis=0)
    codes[:, worse] = rtn_codes[:, worse]
    return QuantizedTensor(
        codes=codes,
        bits=bits,
        granularity="per_channel",
        deltas=deltas,
        zero_points=zps,
        rows=c_in,
        cols=c_out,
    )
