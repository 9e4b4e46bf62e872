import numpy as np
import pytest

from imps_orbits.stability import (FloquetSpectrum, JacobianResult, StroboscopicSeries,
                                   floquet_spectrum, fourier_peaks, growth_rate, jacobian,
                                   match_peaks, perturb_and_track)


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_spectrum_of_rotation_is_neutral():
    spec = floquet_spectrum(np.kron(rotation(0.4), np.eye(1)), period=2.0)
    assert spec.exponent == 0.0 and spec.stable
    assert spec.symplectic_defect <= 1e-14
    assert np.allclose(spec.phases(), [0.4, 0.4])


def test_spectrum_of_hyperbolic_map():
    spec = floquet_spectrum(JacobianResult(np.diag([3.0, 1 / 3.0]), np.zeros(2), 2.0))
    assert spec.exponent == pytest.approx(np.log(3) / 2)
    assert not spec.stable
    assert spec.multipliers[0] == pytest.approx(3.0)
    assert spec.symplectic_defect == pytest.approx(0, abs=1e-14)
    assert spec.phases().size == 0


def test_spectrum_json():
    d = floquet_spectrum(rotation(1.0)).to_json()
    assert set(d) == {"multipliers_re", "multipliers_im", "exponent", "symplectic_defect",
                      "period"}


def test_jacobian_reliability_flag():
    assert JacobianResult(np.eye(2), np.array([1e-12, 1e-9]), 1.0).reliable
    assert not JacobianResult(np.eye(2), np.array([1e-12, 1e-6]), 1.0).reliable


def test_fourier_peaks_of_two_tones():
    n = np.arange(1, 501)
    w1, w2 = 2 * np.pi * 40 / 500, 2 * np.pi * 110 / 500
    x = 0.3 + np.cos(w1 * n) + 0.5 * np.sin(w2 * n)
    peaks = fourier_peaks(x)
    assert peaks == pytest.approx([w1, w2])
    count, matched = match_peaks(peaks, [w1 + 0.01, 2.9], 500)
    assert count == 1 and matched == pytest.approx([w1])


def test_fourier_peaks_of_constant_signal():
    assert fourier_peaks(np.full(64, 0.7)) == []


def test_growth_rate_recovers_exponent():
    n = np.arange(1, 200)
    disp = 1e-4 * np.exp(0.05 * n)
    series = StroboscopicSeries(disp**2, perturbation_size=1e-5, period=2.0)
    assert growth_rate(series) == pytest.approx(0.025, rel=1e-10)
    bounded = StroboscopicSeries(np.full(50, 1e-12), perturbation_size=1e-5)
    assert growth_rate(bounded) == 0.0


def test_chi1_orbit_jacobian_is_volume_preserving(chi1_orbits):
    for orbit in chi1_orbits:
        jac = jacobian(orbit, delta=1e-4, central=True)
        assert jac.matrix.shape == (2, 2) and jac.reliable
        spec = floquet_spectrum(jac)
        assert spec.symplectic_defect <= 1e-3
        # real 2x2 with unit determinant: reciprocal or conjugate pair
        m = spec.multipliers
        assert abs(m[0] * m[1] - 1) <= 1e-3


def test_unperturbed_track_stays_on_orbit(chi1_orbits):
    orbit = chi1_orbits[0]
    series = perturb_and_track(orbit, 0.0, 5, observables=("x", "zz"))
    assert len(series) == 5 and not series.truncated
    assert np.max(np.abs(series.distance)) <= 1e-9
    # periodic orbit: stroboscopic observables are constant
    assert np.ptp(series.observables["x"]) <= 1e-6
    assert np.all(np.abs(series.observables["zz"]) <= 1 + 1e-12)


def test_perturbation_is_seeded(chi1_orbits):
    orbit = chi1_orbits[0]
    a = perturb_and_track(orbit, 1e-2, 3, seed=5)
    b = perturb_and_track(orbit, 1e-2, 3, seed=5)
    assert np.array_equal(a.distance, b.distance)
    assert a.distance[0] > 0
