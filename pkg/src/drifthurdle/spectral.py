"""Slepian tapers, tapered Lagrangian spectra, expected frequency and diffusivity.

Frequencies are angular, in radians per second unless stated otherwise; the
sampling interval ``dt`` is in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DegenerateInput, InvalidArgument
from .trajectory import TrajectorySegment

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class Taper:
    h: np.ndarray
    nw: float
    order_index: int

    @property
    def n(self):
        return len(self.h)

    @property
    def concentration(self) -> float:
        return concentration(self.h, self.nw / self.n)


@dataclass(frozen=True)
class SpectrumEstimate:
    omega: np.ndarray
    power: np.ndarray
    dt: float


@dataclass(frozen=True)
class WindowedEF:
    segment_id: str
    window: int
    lon: float
    lat: float
    mid_time: float
    ef: float  # rad/day


def concentration(h, w) -> float:
    """Fraction of the energy of ``h`` inside ``|f| < w`` (cycles per sample).

    Uses the lag form ``h' A h`` of the sinc concentration matrix
    ``A[j, k] = sin(2 pi w (j - k)) / (pi (j - k))``.
    """
    h = np.asarray(h, dtype=float)
    n = len(h)
    r = np.correlate(h, h, mode="full")[n - 1:]
    lag = np.arange(1, n)
    return float(2 * w * r[0] + 2 * np.sum(r[1:] * np.sin(2 * np.pi * w * lag) / (np.pi * lag)))


@lru_cache(maxsize=64)
def _dpss_cached(n, nw, order_index):
    w = nw / n
    j = np.arange(n)
    diag = ((n - 1 - 2 * j) / 2.0) ** 2 * np.cos(2 * np.pi * w)
    off = j[1:] * (n - j[1:]) / 2.0
    k = n - 1 - order_index
    _, vec = eigh_tridiagonal(diag, off, select="i", select_range=(k, k))
    h = vec[:, 0]
    h = h / np.linalg.norm(h)
    if order_index % 2 == 0:
        if h.sum() < 0:
            h = -h
    else:
        first = np.flatnonzero(np.abs(h) > 1e-10 * np.abs(h).max())[0]
        if h[first] < 0:
            h = -h
    h.setflags(write=False)
    return h


def dpss(n: int, nw: float = 4.0, order_index: int = 0) -> Taper:
    """Discrete prolate spheroidal sequence of length ``n``.

    Solves the commuting symmetric tridiagonal eigenproblem and returns the
    eigenvector belonging to the ``order_index + 1``-th largest eigenvalue,
    normalised to unit energy.
    """
    if n < 8:
        raise InvalidArgument("dpss requires n >= 8")
    if not 0 < nw < n / 2:
        raise InvalidArgument("dpss requires 0 < nw < n/2")
    if order_index < 0 or order_index >= 2 * nw:
        raise InvalidArgument(f"order_index must lie in [0, 2*nw), got {order_index}")
    return Taper(_dpss_cached(int(n), float(nw), int(order_index)), float(nw), int(order_index))


def fourier_frequencies(n: int, dt: float) -> np.ndarray:
    """Angular grid ``2 pi m / (n dt)`` for ``m = -ceil(n/2)+1 .. floor(n/2)``."""
    m = np.arange(-((n + 1) // 2) + 1, n // 2 + 1)
    return 2 * np.pi * m / (n * dt)


def tapered_spectrum(z, dt: float, taper) -> SpectrumEstimate:
    """``(dt/n) |sum_j h_j z_j exp(-i j omega dt)|^2`` on the Fourier grid."""
    z = np.asarray(z, dtype=complex)
    h = taper.h if isinstance(taper, Taper) else np.asarray(taper, dtype=float)
    n = len(z)
    if len(h) != n:
        raise InvalidArgument(f"series length {n} does not match taper length {len(h)}")
    omega = fourier_frequencies(n, dt)
    m = np.rint(omega * n * dt / (2 * np.pi)).astype(int)
    coeffs = np.fft.fft(h * z)[m % n]
    power = (dt / n) * (coeffs.real ** 2 + coeffs.imag ** 2)
    return SpectrumEstimate(omega, power, dt)


def expected_frequency(spec: SpectrumEstimate) -> float:
    """Power-weighted mean of ``|omega|``, in the spectrum's angular units."""
    total = spec.power.sum()
    if not total > 0:
        raise DegenerateInput("expected frequency of an all-zero spectrum")
    return float(np.sum(np.abs(spec.omega) * spec.power) / total)


def window_count(n: int, window_len: int, overlap: int) -> int:
    stride = window_len - overlap
    if n < window_len:
        return 0
    return (n - window_len) // stride + 1


def rolling_ef(seg: TrajectorySegment, window_len: int = 121, overlap: int = 60,
               nw: float = 4.0, order_index: int = 0, detrend: bool = True) -> list[WindowedEF]:
    """Expected frequency over overlapping windows of one segment.

    Each window is located at its middle fix. With ``detrend`` the window-mean
    velocity is removed first; a window whose velocity is then identically
    zero is skipped.
    """
    if overlap < 0 or overlap >= window_len:
        raise InvalidArgument("overlap must lie in [0, window_len)")
    n = len(seg)
    count = window_count(n, window_len, overlap)
    if count == 0:
        return []
    stride = window_len - overlap
    taper = dpss(window_len, nw, order_index)
    z = seg.velocities
    out = []
    for w in range(count):
        a = w * stride
        zw = z[a:a + window_len]
        if detrend:
            zw = zw - zw.mean()
        spec = tapered_spectrum(zw, seg.dt, taper)
        if not spec.power.sum() > 0:
            continue
        mid = a + window_len // 2
        out.append(WindowedEF(
            segment_id=seg.segment_id,
            window=w,
            lon=float(seg.lon[mid]),
            lat=float(seg.lat[mid]),
            mid_time=float(seg.time[mid]),
            ef=expected_frequency(spec) * SECONDS_PER_DAY,
        ))
    return out


def diffusivity(z, dt: float, max_lag: int, demean: bool = True) -> float:
    """One quarter of the lag-window sum of the biased autocovariance, times ``dt``.

    For velocities in m/s and ``dt`` in s the result is in m^2/s.
    """
    z = np.asarray(z, dtype=complex)
    n = len(z)
    if max_lag < 0 or n <= 2 * max_lag:
        raise InvalidArgument(f"max_lag={max_lag} too large for a series of length {n}")
    if demean:
        z = z - z.mean()
    acov = np.array([np.vdot(z[:n - tau], z[tau:]) for tau in range(max_lag + 1)]) / n
    total = acov[0].real + 2.0 * acov[1:].real.sum()
    return float(dt * total / 4.0)
