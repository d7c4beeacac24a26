"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Tolerances are the stated ones.  Criteria that the model cannot meet are reported as
FAIL rather than relaxed.
"""

import json
import math
import os
import time
import warnings

import mpmath
import numpy as np
import pytest
from scipy.signal import find_peaks

from snailtwpa import cli, ladder, mixing, noise, snail
from snailtwpa.constants import flux_to_phase, watt_to_dbm
from snailtwpa.dispersion import (
    CellSpec,
    SupercellSpec,
    band_gaps,
    bloch_gamma,
    calibrate,
    chain_sparams,
    cutoff_frequency,
    find_bands,
    first_gap_lower_edge,
)

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "loaded_vs_unloaded.json")
FLUX, FP, P_OP = 0.38, 6.2e9, -91.4


def _crossing(x, y):
    i = np.nonzero(np.diff(np.sign(y)))[0]
    return [x[j] - y[j] * (x[j + 1] - x[j]) / (y[j + 1] - y[j]) for j in i]


def test_criterion_01_chi4_zero_crossing(acceptance):
    t0 = time.perf_counter()
    grid = np.linspace(0.0, 0.5, 501)
    rows = snail.flux_sweep(snail.SnailParams(alpha=0.16), grid)
    dt = time.perf_counter() - t0
    chi3 = np.array([r.chi3 for r in rows])
    chi4 = np.array([r.chi4 for r in rows])
    zeros = _crossing(grid, chi4)
    x0 = zeros[0]
    chi3_at = np.interp(x0, grid, chi3)
    ok = (len(zeros) == 1 and abs(x0 - 0.36) <= 0.02 and chi3_at >= 0.9 * chi3.max() and dt < 1.0)
    acceptance(1, ok, f"chi4 = 0 at {x0:.4f} Phi0; chi3 there {chi3_at:.4f} vs sweep max {chi3.max():.4f}; "
                      f"{dt:.3f} s")
    assert ok


def test_criterion_02_derivative_closure(acceptance):
    grid = np.linspace(0.0, 0.5, 501)
    t0 = time.perf_counter()
    coeffs = [snail.taylor_coeffs(snail.SnailParams.at_flux(fx)) for fx in grid]
    dt = time.perf_counter() - t0
    mpmath.mp.dps = 30
    worst = 0.0
    for fx, tc in zip(grid, coeffs):
        pe = mpmath.mpf(float(flux_to_phase(fx)))
        pe = pe - 2 * mpmath.pi * mpmath.nint(pe / (2 * mpmath.pi))

        def u(p):
            return -mpmath.mpf("0.16") * mpmath.cos(p) - 3 * mpmath.cos((pe - p) / 3)

        ref = mpmath.taylor(u, mpmath.mpf(tc.phi_min), 4)
        for k, got in ((2, tc.c2), (3, tc.c3), (4, tc.c4)):
            r = float(ref[k])
            worst = max(worst, abs(got - r) / max(abs(r), 1e-12))
    ok = worst <= 1e-6 and dt < 1.0
    acceptance(2, ok, f"max relative deviation {worst:.2e} over 501 points; {dt:.3f} s")
    assert ok


def test_criterion_03_dispersion(acceptance, device):
    t0 = time.perf_counter()
    L1, C = device.L1(FLUX), device.C
    wc = 2 / math.sqrt(L1 * C)
    w = np.linspace(1e-4, 1 - 1e-6, 2000) * wc
    ka = bloch_gamma(w, SupercellSpec((CellSpec(L1, C),))).imag
    err = np.max(np.abs(ka / (2 * np.arcsin(w / wc)) - 1))
    bands = find_bands(device.supercell(FLUX), 1.2 * wc / (2 * np.pi))
    gaps = band_gaps(bands)
    dt = time.perf_counter() - t0
    ok = err <= 1e-8 and len(gaps) == 2 and dt < 5.0
    acceptance(3, ok, f"arcsin relative error {err:.1e}; {len(gaps)} stop bands below cutoff "
                      f"{cutoff_frequency(bands) / 1e9:.3f} GHz; {dt:.2f} s")
    assert ok


def test_criterion_04_calibration(acceptance):
    t0 = time.perf_counter()
    d = calibrate().device
    dt = time.perf_counter() - t0
    z = d.line_impedance(FLUX)
    edge = first_gap_lower_edge(d.supercell(FLUX))
    ok = abs(z / 50 - 1) <= 1e-3 and abs(edge / 11.5e9 - 1) <= 1e-3 and dt < 30
    acceptance(4, ok, f"e_j2 = {d.e_j2:.4f} GHz, C = {d.C:.5e} F, Z = {z:.6f} ohm, "
                      f"edge = {edge / 1e9:.6f} GHz; {dt:.2f} s")
    assert ok


def _shg_run(device, ratio, periods=3):
    ms = mixing.build_harmonic_modeset(5e9, FLUX, device)
    delta, e_unit = mixing.shg_parameters(ms, a1=1.0)
    ms.modes[0].amplitude = ratio * abs(delta) / e_unit
    n = int(math.ceil(periods * 2 * np.pi / abs(delta)))
    r = mixing.integrate_cme(ms, n)
    _, eps3 = mixing.shg_parameters(ms)
    a1 = mixing.power_normalized(r, "fundamental")
    a2 = np.abs(mixing.power_normalized(r, "harmonic") / a1[0])
    # sample once per supercell so that the intra-supercell ripple does not create extrema
    P = device.period
    x, y = r.x[::P], a2[::P]
    peaks, _ = find_peaks(y, prominence=0.2 * y.max())
    period = float(np.mean(np.diff(x[peaks]))) if len(peaks) > 1 else math.nan
    closed = 0.5 * math.tanh(4 * eps3 / abs(delta))
    return delta, eps3, y.max(), closed, period


def test_criterion_05_shg_regime(acceptance, device):
    t0 = time.perf_counter()
    parts, ok = [], True
    for ratio in (0.05, 0.1, 0.15, 0.2):
        delta, eps3, peak, closed, period = _shg_run(device, ratio)
        target = 2 * np.pi / abs(delta)
        dev = peak / closed - 1
        ok &= abs(dev) <= 0.10 and abs(period - target) <= 1.0
        parts.append(f"eps/delta={ratio:.2f}: peak {dev:+.1%}, period {period:.1f} vs {target:.1f} cells")
    dt = time.perf_counter() - t0
    ok &= dt < 10
    acceptance(5, ok, "; ".join(parts) + f"; {dt:.1f} s")
    assert ok


def test_criterion_06_oracle_equivalence(acceptance, device):
    t0 = time.perf_counter()
    n = 60
    d = device.with_cells(n)
    cell = d.supercell(FLUX).cells[0]
    pump = mixing.PumpSpec(FP, -94.4)
    psi = mixing.pump_amplitude(pump, cell)
    freqs = [f * 1e9 for f in (1.4, 2.0, 2.4, 3.0, 3.4, 4.0, 4.4, 5.0, 5.4, 5.8)]
    dg = []
    for f in freqs:
        o = ladder.oracle_gain(d, FLUX, pump, f, n).gain_db
        c = mixing.signal_gain(pump, f, "cascaded", FLUX, d, n)
        dg.append(c - o)
    tone_psi = 0.05
    tone_dbm = mixing.power_for_phase(tone_psi, cell)
    sh_f = np.arange(1.5, 6.01, 0.5) * 1e9
    h = mixing.harmonic_response(sh_f, tone_dbm, d, FLUX, n)
    dh = []
    for f, cme in zip(sh_f, h.out_2f_dbm):
        ref = float(watt_to_dbm(ladder.harmonic_output(d, FLUX, f, tone_dbm, n)[1]))
        dh.append(cme - ref)
    dt = time.perf_counter() - t0
    mg, mh = np.max(np.abs(dg)), np.max(np.abs(dh))
    ok = psi <= 0.3 and mg <= 1.0 and mh <= 1.0 and dt < 600
    acceptance(6, ok, f"pump psi={psi:.3f} rad: max gain difference {mg:.2f} dB over 10 signals; "
                      f"tone psi={tone_psi} rad: max 2f difference {mh:.2f} dB over 10 tones; {dt:.0f} s")
    assert ok


def _split(tier, device, n):
    pump = mixing.PumpSpec(FP, P_OP)
    # grid straddles f_p/2 without hitting the degenerate point itself
    f = np.round(np.arange(0.55, 5.7, 0.1), 3) * 1e9
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = mixing.gain_sweep(f, pump, tier, device.with_cells(n), FLUX, n)
    f_pk, g_pk = tr.peak
    g_half = float(np.interp(FP / 2, f, tr.gain_db))
    return f_pk, g_pk, g_half


def test_criterion_07_stop_band_physics(acceptance, device):
    t0 = time.perf_counter()
    n = 120
    d = device.with_cells(n)
    p_weak = -101.4
    in_band = float(watt_to_dbm(ladder.harmonic_output(d, FLUX, FP, p_weak, n)[1]))
    out_band = float(watt_to_dbm(ladder.harmonic_output(d, FLUX, 5.0e9, p_weak, n)[1]))
    contrast = out_band - in_band
    f0, g0, _ = _split("minimal", device, n)
    split_ok = abs(f0 - FP / 2) <= 0.2e9
    parts = [f"2f_p content {in_band:.1f} dBm (f_p 6.2 GHz) vs {out_band:.1f} dBm (f_p 5.0 GHz) "
             f"at {p_weak} dBm: {contrast:.1f} dB",
             f"minimal-tier peak {f0 / 1e9:.2f} GHz"]
    for tier in ("extended", "cascaded"):
        fp_, gp, gh = _split(tier, device, n)
        split_ok &= abs(fp_ - FP / 2) >= 0.3e9 and gp - gh >= 1.0
        parts.append(f"{tier} peak {fp_ / 1e9:.2f} GHz ({gp:.1f} dB, {gh:.1f} dB at f_p/2)")
    dt = time.perf_counter() - t0
    ok = contrast >= 10.0 and split_ok and dt < 600
    acceptance(7, ok, "; ".join(parts) + f"; {dt:.0f} s")
    assert ok


def _ladder_peak(device, freqs, n):
    pump = mixing.PumpSpec(FP, P_OP)
    g = [ladder.oracle_gain(device, FLUX, pump, f, n, reference="linear").gain_db for f in freqs]
    return max(g), g


def test_criterion_08_loaded_vs_unloaded(acceptance, device):
    with open(GOLDEN, encoding="utf-8") as fh:
        gold = json.load(fh)
    t0 = time.perf_counter()
    n = gold["cells"]
    freqs = [f * 1e9 for f in gold["signal_ghz"]]
    lp, lg = _ladder_peak(device.with_cells(n), freqs, n)
    up, ug = _ladder_peak(device.unloaded().with_cells(n), freqs, n)
    dt = time.perf_counter() - t0
    margin = lp - up
    ok = margin >= 3.0 and abs(margin - gold["margin_db"]) <= 0.05
    acceptance(8, ok, f"loaded peak {lp:.2f} dB vs unloaded {up:.2f} dB over {n} cells: margin {margin:.2f} dB "
                      f"(recorded {gold['margin_db']:.2f}); {dt:.0f} s")
    assert ok


def test_criterion_09_noise_model(acceptance):
    t0 = time.perf_counter()
    m = noise.NoiseModel(0.73, 24.85, 0.5)
    g_db = np.linspace(0, 20, 11)
    G = 10 ** (g_db / 10)
    data = noise.FitData(g_db, 10 * np.log10(noise.delta_snr(m, G)),
                         noise.noise_temperature(noise.total_noise(m, G), 6.034e9), 6.034e9)
    res = noise.fit(data)
    ident = (abs(noise.delta_snr(m, 1.0) - 1) < 1e-14
             and abs(noise.added_photons_limit(0.73) - (2 - 0.73) / (2 * 0.73)) < 1e-15)
    a_inf = noise.added_photons_limit(res.model.D)
    dt = time.perf_counter() - t0
    ok = (ident and abs(res.model.D / 0.73 - 1) <= 0.01 and abs(res.model.A_H / 24.85 - 1) <= 0.01
          and abs(a_inf - 0.87) <= 0.01 and dt < 5)
    acceptance(9, ok, f"identities {'hold' if ident else 'broken'}; fitted D={res.model.D:.5f}, "
                      f"A_H={res.model.A_H:.4f}; A_inf={a_inf:.4f}; {dt:.2f} s")
    assert ok


def _manifest(folder):
    with open(os.path.join(folder, "MANIFEST"), "rb") as fh:
        return fh.read()


def test_criterion_10_determinism_and_passivity(acceptance, device, tmp_path):
    out = str(tmp_path / "run")
    same = True
    for cmd in (["snail-sweep"], ["dispersion"], ["s21-map"],
                ["gain-sweep", "--cells", "60", "--power-dbm", "-94.4"]):
        cli.main(cmd + ["--out", out])
        first = _manifest(out)
        cli.main(cmd + ["--out", out])
        same &= _manifest(out) == first
    g1 = mixing.signal_gain(mixing.PumpSpec(FP, P_OP), 2.7e9, "cascaded", FLUX, device)
    g2 = mixing.signal_gain(mixing.PumpSpec(FP, P_OP), 2.7e9, "cascaded", FLUX, device)
    same &= g1 == g2
    worst = -np.inf
    f = np.linspace(0.05e9, 30e9, 600)
    for dev in (device, device.unloaded()):
        for fx in np.linspace(0.0, 0.5, 501):
            s11, s21 = chain_sparams(2 * np.pi * f, dev.chain(fx))
            worst = max(worst, float(np.max(np.abs(s11) ** 2 + np.abs(s21) ** 2)))
    ok = same and worst <= 1 + 1e-9
    acceptance(10, ok, f"repeated runs {'byte-identical' if same else 'differ'}; "
                       f"max |S11|^2+|S21|^2 = 1{worst - 1:+.1e} over 2 x 501 x 600 points")
    assert ok


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
