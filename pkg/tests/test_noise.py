from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from snailtwpa import noise

PAPER = noise.NoiseModel(0.73, 24.85, 0.5)
F = 6.034e9


def _data(model, g_db, with_dsnr=True, with_t=True, rng=None, rel=0.0):
    G = 10 ** (g_db / 10)
    dsnr = 10 * np.log10(noise.delta_snr(model, G)) if with_dsnr else None
    t = noise.noise_temperature(noise.total_noise(model, G), F) if with_t else None
    if rng is not None:
        if dsnr is not None:
            dsnr = dsnr + 10 * np.log10(1 + rel * rng.standard_normal(g_db.size))
        if t is not None:
            t = t * (1 + rel * rng.standard_normal(g_db.size))
    return noise.FitData(g_db, dsnr, t, F if with_t else None)


def test_identities():
    assert noise.delta_snr(PAPER, 1.0) == pytest.approx(1.0, rel=1e-15)
    assert noise.added_photons_limit(0.73) == pytest.approx((2 - 0.73) / (2 * 0.73), rel=1e-15)
    assert noise.added_photons(1e12, 0.73) == pytest.approx(noise.added_photons_limit(0.73), rel=1e-9)
    assert noise.added_photons(1.0, 1.0) == 0.0
    # an ideal phase-insensitive amplifier adds half a photon at large gain
    assert noise.added_photons_limit(1.0) == 0.5


def test_total_noise_consistent_with_delta_snr():
    G = np.array([1.0, 10.0, 100.0])
    np.testing.assert_allclose(noise.delta_snr(PAPER, G),
                               noise.total_noise(PAPER, 1.0) / noise.total_noise(PAPER, G), rtol=1e-14)


def test_temperature_round_trip():
    n = noise.photons_from_temperature(noise.noise_temperature(1.0, F), F)
    assert n == pytest.approx(1.0, rel=1e-15)
    assert noise.noise_temperature(1.0, F) == pytest.approx(0.28959, rel=1e-4)


def test_input_validation():
    with pytest.raises(noise.NoiseError):
        noise.NoiseModel(0.0, 1.0)
    with pytest.raises(noise.NoiseError):
        noise.NoiseModel(0.5, -1.0)
    with pytest.raises(noise.NoiseError):
        noise.NoiseModel(0.5, 1.0, N_in=0.2)
    with pytest.raises(noise.NoiseError):
        noise.added_photons(0.5, 0.7)
    with pytest.raises(noise.NoiseError):
        noise.FitData([0, 10])


def test_fit_rejects_degenerate_data():
    with pytest.raises(noise.NoiseError, match="at least 4"):
        noise.fit(_data(PAPER, np.array([0.0, 10.0, 20.0])))
    with pytest.raises(noise.NoiseError, match="span"):
        noise.fit(_data(PAPER, np.linspace(10, 15, 6)))


def test_round_trip_with_temperatures():
    res = noise.fit(_data(PAPER, np.linspace(0, 20, 11)))
    assert res.model.D == pytest.approx(0.73, rel=1e-6)
    assert res.model.A_H == pytest.approx(24.85, rel=1e-6)
    assert res.unidentified == [] and res.at_bound == []


def test_delta_snr_alone_cannot_identify_loss():
    # with vacuum input noise the ratio reduces to (1 + 2 A_H)/(1 + 2 A_H/G)
    g = np.linspace(0, 20, 11)
    a = _data(noise.NoiseModel(0.73, 24.85), g, with_t=False).dsnr_db
    b = _data(noise.NoiseModel(0.4, 24.85), g, with_t=False).dsnr_db
    np.testing.assert_allclose(a, b, atol=1e-12)
    res = noise.fit(_data(PAPER, g, with_t=False))
    assert "D" in res.unidentified
    assert res.model.A_H == pytest.approx(24.85, rel=1e-6)


def test_gradient_matches_finite_differences():
    data = _data(PAPER, np.linspace(0, 20, 11), rng=np.random.default_rng(1), rel=0.02)
    x = np.array([0.6, 30.0])
    g = noise.objective_gradient(x, data)
    for i, h in enumerate((1e-7, 1e-5)):
        e = np.zeros(2)
        e[i] = h
        fd = (noise.objective(x + e, data) - noise.objective(x - e, data)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5)


def test_fit_deterministic_for_seed():
    data = _data(PAPER, np.linspace(0, 20, 11), rng=np.random.default_rng(2), rel=0.02)
    a = noise.fit(data, seed=3)
    b = noise.fit(data, seed=3)
    assert a.model == b.model


def test_noisy_fit_recovers_parameters_statistically():
    rng = np.random.default_rng(7)
    est = []
    for _ in range(20):
        res = noise.fit(_data(PAPER, np.linspace(0, 20, 21), rng=rng, rel=0.02), n_starts=3)
        est.append((res.model.D, res.model.A_H))
    est = np.array(est)
    assert abs(est[:, 0].mean() - 0.73) < 0.02
    assert abs(est[:, 1].mean() - 24.85) / 24.85 < 0.03


@settings(max_examples=100, deadline=None)
@given(D=st.floats(0.05, 1.0), ah=st.floats(0.6, 100.0), g1=st.floats(0.0, 30.0), g2=st.floats(0.0, 30.0))
def test_delta_snr_grows_with_gain_when_hemt_dominates(D, ah, g1, g2):
    m = noise.NoiseModel(D, ah)
    lo, hi = sorted((10 ** (g1 / 10), 10 ** (g2 / 10)))
    assert noise.delta_snr(m, hi) >= noise.delta_snr(m, lo) * (1 - 1e-12)


@settings(max_examples=100, deadline=None)
@given(D=st.floats(0.05, 1.0), g=st.floats(0.0, 40.0))
def test_added_noise_bounded_by_limit(D, g):
    a = noise.added_photons(10 ** (g / 10), D)
    assert (1 - D) / (2 * D) - 1e-12 <= a <= noise.added_photons_limit(D) + 1e-12
