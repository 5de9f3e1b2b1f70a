import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from drifthurdle.errors import DegenerateInput, InvalidArgument
from drifthurdle.geo import unproject
from drifthurdle.spectral import (SECONDS_PER_DAY, SpectrumEstimate, diffusivity, dpss,
                                  expected_frequency, fourier_frequencies, rolling_ef,
                                  tapered_spectrum, window_count)
from drifthurdle.trajectory import TrajectorySegment

DT = 3600.0


def sinc_matrix(n, w):
    lag = np.subtract.outer(np.arange(n), np.arange(n)).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.sin(2 * np.pi * w * lag) / (np.pi * lag)
    a[lag == 0] = 2 * w
    return a


def brute_spectrum(z, dt, h):
    """The double sum evaluated directly at each Fourier frequency."""
    n = len(z)
    omega = fourier_frequencies(n, dt)
    j = np.arange(n)
    coeff = np.array([np.sum(h * z * np.exp(-1j * j * w * dt)) for w in omega])
    return omega, dt / n * np.abs(coeff) ** 2


def test_dpss_matches_dense_oracle():
    n, nw = 128, 4.0
    a = sinc_matrix(n, nw / n)
    vals, vecs = linalg.eigh(a)
    ref = vecs[:, -1] * np.sign(vecs[:, -1].sum())
    tap = dpss(n, nw, 0)
    assert abs(np.sum(tap.h ** 2) - 1.0) < 1e-12
    assert tap.concentration > 0.9999
    assert tap.concentration == pytest.approx(vals[-1], abs=1e-10)
    np.testing.assert_allclose(tap.h, ref, atol=1e-8)
    np.testing.assert_allclose(tap.h, tap.h[::-1], atol=1e-10)


def test_dpss_eigenvalues_strictly_decreasing():
    lam = [dpss(64, 4.0, k).concentration for k in range(8)]
    assert all(0 < x < 1 for x in lam)
    assert all(a > b for a, b in zip(lam, lam[1:]))


def test_dpss_rejects_bad_arguments():
    for args in [(4, 1.0, 0), (64, 40.0, 0), (64, 4.0, 8)]:
        with pytest.raises(InvalidArgument):
            dpss(*args)


def test_zero_series_has_zero_spectrum():
    spec = tapered_spectrum(np.zeros(64, complex), DT, dpss(64))
    assert np.all(spec.power == 0)
    with pytest.raises(DegenerateInput):
        expected_frequency(spec)


def test_parseval_on_random_series():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(16, 300))
        z = rng.normal(size=n) + 1j * rng.normal(size=n)
        h = dpss(n, 4.0).h
        s = tapered_spectrum(z, DT, h)
        assert s.power.sum() == pytest.approx(DT * np.sum(h ** 2 * np.abs(z) ** 2), rel=1e-9)


def test_spectrum_matches_direct_sum():
    rng = np.random.default_rng(4)
    n = 121
    z = rng.normal(size=n) + 1j * rng.normal(size=n)
    h = dpss(n).h
    omega, ref = brute_spectrum(z, DT, h)
    s = tapered_spectrum(z, DT, h)
    np.testing.assert_allclose(s.omega, omega)
    np.testing.assert_allclose(s.power, ref, rtol=1e-9)


@pytest.mark.parametrize("m", [-20, -3, 10, 35])
def test_on_grid_exponential_peaks_at_its_frequency(m):
    n = 121
    w0 = 2 * np.pi * m / (n * DT)
    z = np.exp(1j * w0 * DT * np.arange(n))
    s = tapered_spectrum(z, DT, dpss(n))
    assert s.omega[np.argmax(s.power)] == pytest.approx(w0)


def test_expected_frequency_of_exponential():
    n = 121
    w0 = 2 * np.pi * 10 / (n * DT)
    z = np.exp(1j * w0 * DT * np.arange(n))
    omega, ref = brute_spectrum(z, DT, dpss(n).h)
    ef = expected_frequency(tapered_spectrum(z, DT, dpss(n)))
    assert ef == pytest.approx(np.sum(np.abs(omega) * ref) / ref.sum(), rel=1e-9)
    assert ef == pytest.approx(w0, rel=0.03)


def test_constant_velocity_has_near_zero_ef():
    n = 121
    ef = expected_frequency(tapered_spectrum(np.full(n, 0.3 + 0.1j), DT, dpss(n)))
    assert ef < 2 * np.pi / (n * DT)


@given(st.integers(-30, 30), st.floats(1e-3, 1e3), st.integers(0, 2 ** 32 - 1))
def test_ef_scale_invariance(k, c, seed):
    rng = np.random.default_rng(seed)
    n = 64
    z = rng.normal(size=n) + 1j * rng.normal(size=n)
    s = tapered_spectrum(z, DT, dpss(n))
    # binary scaling is exact in floating point, so the ratio must be bit-identical
    assert expected_frequency(SpectrumEstimate(s.omega, 2.0 ** k * s.power, s.dt)) \
        == expected_frequency(s)
    scaled = SpectrumEstimate(s.omega, c * s.power, s.dt)
    assert expected_frequency(scaled) == pytest.approx(expected_frequency(s), rel=1e-14)
    unscaled = SpectrumEstimate(s.omega, s.power * n / DT, s.dt)
    assert expected_frequency(unscaled) == pytest.approx(expected_frequency(s), rel=1e-12)
    assert 0 <= expected_frequency(s) <= np.pi / DT


@given(st.complex_numbers(max_magnitude=100, allow_nan=False, allow_infinity=False),
       st.integers(0, 2 ** 32 - 1))
def test_spectrum_scales_with_squared_modulus(c, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=40) + 1j * rng.normal(size=40)
    a = tapered_spectrum(c * z, DT, dpss(40)).power
    b = tapered_spectrum(z, DT, dpss(40)).power
    np.testing.assert_allclose(a, abs(c) ** 2 * b, rtol=1e-9, atol=1e-300)


def make_segment(n, period_hours=12.0, speed=0.3, lat0=-54.0):
    t = DT * np.arange(n)
    w = 2 * np.pi / (period_hours * 3600.0)
    x = speed / w * np.sin(w * t) / 1000.0
    y = -speed / w * np.cos(w * t) / 1000.0
    lon, lat = unproject(x, y, (-35.0, lat0))
    return TrajectorySegment("s#0", "s", t, np.asarray(lon), np.asarray(lat), DT)


def test_window_counts():
    assert window_count(121, 121, 60) == 1
    assert window_count(182, 121, 60) == 2
    out = rolling_ef(make_segment(121))
    assert len(out) == 1
    assert out[0].mid_time == 60 * DT


@given(st.integers(1, 600), st.integers(8, 150), st.integers(0, 149))
def test_window_count_formula(n, wl, ov):
    if ov >= wl:
        return
    assert window_count(n, wl, ov) == max(0, (n - wl) // (wl - ov) + 1)


def test_inertial_oscillation_ef():
    out = rolling_ef(make_segment(400))
    assert len(out) == window_count(400, 121, 60)
    target = 2 * np.pi / 0.5
    for w in out:
        assert w.ef == pytest.approx(target, rel=0.05)
        assert w.ef <= np.pi / DT * SECONDS_PER_DAY


def test_diffusivity_white_noise():
    rng = np.random.default_rng(11)
    sigma2 = 0.04
    z = rng.normal(scale=np.sqrt(sigma2 / 2), size=100_000) * (1 + 0j) \
        + 1j * rng.normal(scale=np.sqrt(sigma2 / 2), size=100_000)
    assert diffusivity(z, DT, 0) == pytest.approx(sigma2 * DT / 4, rel=0.05)


def test_diffusivity_trivial_cases():
    assert diffusivity(np.zeros(50, complex), DT, 5) == 0.0
    rng = np.random.default_rng(1)
    z = rng.normal(size=80) + 1j * rng.normal(size=80)
    assert diffusivity(z, DT, 10) == pytest.approx(diffusivity(np.conj(z), DT, 10), rel=1e-12)
    with pytest.raises(InvalidArgument):
        diffusivity(z, DT, 40)
