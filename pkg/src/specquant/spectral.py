"""Channel-wise Fourier analysis: transforms, low-frequency truncation,
reconstruction, and the energy accounting behind the compression error bound.

Conventions, fixed once here and relied on everywhere else:

- The forward transform is unnormalized, X[k] = sum_n x[n] exp(-i 2 pi k n / N).
- Real input is carried as a half-spectrum of the first N // 2 + 1 bins; the
  rest of the spectrum is implied by conjugate symmetry.
- Reconstruction carries the 1/N factor and doubles every bin that has a
  conjugate partner (all bins except DC and, for even N, Nyquist). This makes
  the full-band round trip exact and the tail-energy bound hold with equality
  up to rounding.
- A truncated spectrum keeps the contiguous band from DC upward. A retained
  bin's frequency is implicit in its index, so the only stored state per bin
  is the (amplitude, phase) pair: exactly 2k reals for k bins.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .validation import as_vector


def half_spectrum_length(n):
    """Number of DFT bins needed to represent a real signal of length n."""
    return n // 2 + 1


def _real_bin_indices(n):
    """Bins of a real signal that are themselves purely real."""
    if n % 2 == 0 and n >= 2:
        return (0, n // 2)
    return (0,)


@lru_cache(maxsize=None)
def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx = idx >> 1
    rev.setflags(write=False)
    return rev


def _fft_pow2(a):
    """Iterative radix-2 transform; a must be complex with power-of-two length."""
    n = a.size
    out = a[_bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp((-2j * np.pi / size) * np.arange(half))
        blocks = out.reshape(-1, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        size *= 2
    return out


def _ifft_pow2(a):
    return np.conj(_fft_pow2(np.conj(a))) / a.size


def _bluestein_full(x):
    """Chirp-z transform for arbitrary length, built on power-of-two FFTs.

    Zero-padding the input directly would move the bin frequencies and break
    implicit indexing, so lengths that are not a power of two go through the
    quadratic-phase convolution instead.
    """
    n = x.size
    k = np.arange(n)
    # Reduce k^2 mod 2n before forming the angle to keep the phase accurate.
    w = np.exp((-1j * np.pi / n) * ((k * k) % (2 * n)))
    m = 1 << (2 * n - 2).bit_length()
    a = np.zeros(m, dtype=complex)
    a[:n] = x * w
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(w)
    b[m - n + 1:] = np.conj(w[1:][::-1])
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b))
    return w * conv[:n]


def _fft_full(x):
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n & (n - 1) == 0:
        return _fft_pow2(x.astype(complex))
    return _bluestein_full(x.astype(complex))


def dft_naive(x):
    """Direct O(N^2) evaluation of the transform definition, full N bins.

    Serves as the independent oracle for `fft`. Twiddle factors are taken
    from a single table of N-th roots indexed by k*n mod N, so every term is
    the literal product x[n] * exp(-i 2 pi k n / N).
    """
    x = as_vector(x, "x")
    n = x.size
    roots = np.exp((-2j * np.pi / n) * np.arange(n))
    k = np.arange(n)
    return roots[np.outer(k, k) % n] @ x


def fft(x):
    """Half-spectrum (bins 0 .. N // 2) of a real vector.

    Radix-2 Cooley-Tukey for power-of-two lengths, Bluestein otherwise.
    """
    x = as_vector(x, "x")
    return _fft_full(x)[: half_spectrum_length(x.size)]


def _pair_weights(n):
    """Per-bin multiplicity: 1 for DC and Nyquist, 2 for conjugate pairs."""
    w = np.full(half_spectrum_length(n), 2.0)
    w[0] = 1.0
    if n % 2 == 0 and n >= 2:
        w[-1] = 1.0
    return w


@dataclass
class ChannelSpectrum:
    """Truncated half-spectrum of one channel: (amplitude, phase) per bin.

    Bin m of a length-n channel has implicit frequency m / n. DC and (for
    even n) Nyquist are purely real, so their phases are pinned to 0 or pi.
    """

    n: int
    amps: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=np.float64)
        self.phases = np.asarray(self.phases, dtype=np.float64)
        if self.n < 1:
            raise ValueError("channel length must be >= 1")
        k = self.amps.size
        if self.phases.size != k:
            raise ValueError("amps and phases must have equal length")
        if not 1 <= k <= half_spectrum_length(self.n):
            raise ValueError(
                f"retained count {k} outside [1, {half_spectrum_length(self.n)}]"
            )
        if not (np.isfinite(self.amps).all() and np.isfinite(self.phases).all()):
            raise ValueError("spectrum contains non-finite values")
        if (self.amps < 0).any():
            raise ValueError("amplitudes must be non-negative")
        if ((self.phases <= -np.pi) | (self.phases > np.pi)).any():
            raise ValueError("phases must lie in (-pi, pi]")
        for m in _real_bin_indices(self.n):
            if m < k and self.phases[m] not in (0.0, np.pi):
                raise ValueError(f"bin {m} is real-valued; phase must be 0 or pi")

    @property
    def retained(self):
        return self.amps.size

    @property
    def real_bins(self):
        """Boolean mask over retained bins that are constrained to be real."""
        mask = np.zeros(self.retained, dtype=bool)
        for m in _real_bin_indices(self.n):
            if m < self.retained:
                mask[m] = True
        return mask


def truncate_low_freq(half_spec, k, n):
    """Keep the k lowest-index bins of a half-spectrum as a ChannelSpectrum.

    `n` is the original signal length; it cannot be recovered from the
    half-spectrum length alone (even and odd n share lengths).
    """
    hs = np.asarray(half_spec, dtype=complex)
    if hs.ndim != 1 or hs.size != half_spectrum_length(n):
        raise ValueError(
            f"expected half-spectrum of length {half_spectrum_length(n)} for n={n}"
        )
    if not 1 <= k <= hs.size:
        raise ValueError(f"k={k} outside [1, {hs.size}]")
    band = hs[:k]
    amps = np.abs(band)
    phases = np.angle(band)
    phases = np.where(phases <= -np.pi, np.pi, phases)
    # Conjugate symmetry forces DC/Nyquist real; drop their rounding-level
    # imaginary part and pin the phase.
    for m in _real_bin_indices(n):
        if m < k:
            re = band[m].real
            amps[m] = abs(re)
            phases[m] = 0.0 if re >= 0.0 else np.pi
    return ChannelSpectrum(n=n, amps=amps, phases=phases)


def reconstruct(spec):
    """Time-domain signal of a truncated spectrum.

    x_hat[n] = (1/N) * sum_m w_m * A_m * cos(2 pi m n / N + phi_m) with
    w_m the conjugate-pair weights; this is the unique real reconstruction
    consistent with conjugate symmetry.
    """
    n = spec.n
    k = spec.retained
    coeff = _pair_weights(n)[:k] * spec.amps / n
    theta = (2.0 * np.pi / n) * np.outer(np.arange(k), np.arange(n))
    theta += spec.phases[:, None]
    return coeff @ np.cos(theta)


def band_energies(half_spec, k, n):
    """(total, retained, tail) signal energy split at bin k.

    Energy of bin m is w_m * |X[m]|^2 / N, so `total` equals the time-domain
    energy sum(x^2) and `tail` is exactly the squared reconstruction error of
    a k-bin truncation.
    """
    hs = np.asarray(half_spec, dtype=complex)
    if hs.ndim != 1 or hs.size != half_spectrum_length(n):
        raise ValueError(
            f"expected half-spectrum of length {half_spectrum_length(n)} for n={n}"
        )
    if not 1 <= k <= hs.size:
        raise ValueError(f"k={k} outside [1, {hs.size}]")
    terms = _pair_weights(n) * np.abs(hs) ** 2 / n
    return float(terms.sum()), float(terms[:k].sum()), float(terms[k:].sum())


def error_bound(half_spec, k, n):
    """Upper bound on the L2 reconstruction error of a k-bin truncation.

    sqrt of the weighted tail energy, in the same normalization used by
    `reconstruct`, so achieved error <= bound always holds.
    """
    return float(np.sqrt(band_energies(half_spec, k, n)[2]))


def parseval_check(x):
    """(time energy, frequency energy): sum(x^2) vs (1/N) sum |X[k]|^2.

    The frequency side is evaluated over the full N-bin spectrum; callers
    assert the two agree to relative 1e-9.
    """
    x = as_vector(x, "x")
    full = _fft_full(x)
    return float(np.sum(x * x)), float(np.sum(np.abs(full) ** 2) / x.size)


def lowband_fraction(half_spec, n, band=0.2):
    """Fraction of channel energy in the lowest `band` share of bins.

    A zero-energy channel reports 1.0 (everything is trivially captured).
    """
    if not 0.0 < band <= 1.0:
        raise ValueError("band must lie in (0, 1]")
    half = half_spectrum_length(n)
    k = max(1, int(band * half))
    total, retained, _ = band_energies(half_spec, k, n)
    if total == 0.0:
        return 1.0
    return retained / total


@dataclass
class ChannelStats:
    """Energy split and error accounting for one truncated channel."""

    total_energy: float
    retained_energy: float
    tail_energy: float
    error_bound: float
    achieved_error: float


def channel_stats(x, k):
    """Truncate x to k bins and report the full energy/error breakdown."""
    x = as_vector(x, "x")
    hs = fft(x)
    total, retained, tail = band_energies(hs, k, x.size)
    approx = reconstruct(truncate_low_freq(hs, k, x.size))
    achieved = float(np.linalg.norm(x - approx))
    return ChannelStats(
        total_energy=total,
        retained_energy=retained,
        tail_energy=tail,
        error_bound=float(np.sqrt(tail)),
        achieved_error=achieved,
    )
