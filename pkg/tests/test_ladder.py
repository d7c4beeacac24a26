from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from snailtwpa import ladder
from snailtwpa.constants import PHI0_RED, dbm_to_watt
from snailtwpa.dispersion import chain_sparams


def test_linear_ladder_matches_abcd_transmission(device):
    d = device.with_cells(30)
    circ = ladder.LadderCircuit.from_device(d, 0.38, 30, linear=True)
    for f in (3.0e9, 7.0e9):
        p, _ = ladder.run_tones(circ, [ladder.Tone(f, -120.0)], [f])
        _, s21 = chain_sparams(2 * np.pi * f, d.chain(0.38))
        ref = float(dbm_to_watt(-120.0)) * abs(s21) ** 2
        assert 10 * np.log10(p[0] / ref) == pytest.approx(0.0, abs=0.02)


def test_energy_balance_nonlinear(device):
    circ = ladder.LadderCircuit.from_device(device, 0.38, 24)
    tr = ladder.simulate(circ, [ladder.Tone(6.2e9, -95.0)], 3e-9, 1 / (64 * 6.2e9), t_ramp=1e-9,
                         track_energy=True)
    assert tr.energy_residual < 1e-4


def test_full_and_quartic_agree_at_small_drive(device):
    f = 5.0e9
    out = []
    for kind in ("quartic", "full"):
        circ = ladder.LadderCircuit.from_device(device, 0.38, 30, nonlinearity=kind)
        p, _ = ladder.run_tones(circ, [ladder.Tone(f, -115.0)], [f, 2 * f])
        out.append(p)
    assert 10 * np.log10(out[1][0] / out[0][0]) == pytest.approx(0.0, abs=1e-3)
    assert 10 * np.log10(out[1][1] / out[0][1]) == pytest.approx(0.0, abs=0.1)


def test_quartic_current_is_taylor_of_full(device):
    full = ladder.LadderCircuit.from_device(device, 0.38, 3, nonlinearity="full")
    quart = ladder.LadderCircuit.from_device(device, 0.38, 3)
    for psi in (1e-2, 2e-2):
        assert abs(full.current_factor(psi) - quart.current_factor(psi)) < 0.2 * psi**4


@pytest.mark.parametrize("kind", ["quartic", "full"])
def test_branch_energy_derivative_is_current(device, kind):
    circ = ladder.LadderCircuit.from_device(device, 0.38, 3, nonlinearity=kind)
    psi, h = 0.3, 1e-6
    de = (circ.branch_energy(psi + h) - circ.branch_energy(psi - h)) / (2 * h)
    np.testing.assert_allclose(de, PHI0_RED**2 / circ.L * circ.current_factor(psi), rtol=1e-7)


def test_common_period_and_incommensurate_tone():
    assert ladder.common_period([6.2e9, 2.7e9]) == pytest.approx(1e-8)
    t = np.arange(0, 101) * 1e-11
    tr = ladder.TimeTrace(t, np.cos(2 * np.pi * 1e9 * t), np.zeros_like(t), 1e-11)
    amp = ladder.steady_state_spectrum(tr, [1e9])
    assert abs(amp[0]) == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(ladder.LadderError, match="commensurate"):
        ladder.steady_state_spectrum(tr, [1.05e9])


def test_invalid_circuit():
    with pytest.raises(ladder.LadderError):
        ladder.LadderCircuit([1e-10, 1e-10], [1e-13], 0.1, 0.0)
    with pytest.raises(ladder.LadderError):
        ladder.LadderCircuit([1e-10], [1e-13], 0.1, 0.0, nonlinearity="cubic")


def test_instability_is_reported(device):
    circ = ladder.LadderCircuit.from_device(device, 0.38, 6)
    with pytest.raises(ladder.InstabilityError):
        ladder.simulate(circ, [ladder.Tone(6.2e9, -40.0)], 2e-9, 1 / (64 * 6.2e9), t_ramp=1e-10)


@settings(max_examples=8, deadline=None)
@given(f=st.floats(1e9, 10e9), n=st.integers(3, 15))
def test_linear_ladder_energy_balance(device, f, n):
    circ = ladder.LadderCircuit.from_device(device, 0.38, n, linear=True)
    # the step must resolve the chain cutoff, not just the drive
    tr = ladder.simulate(circ, [ladder.Tone(f, -110.0)], 1.5e-9, 1 / 640e9, t_ramp=0.5e-9,
                         track_energy=True)
    assert tr.energy_residual < 1e-4
