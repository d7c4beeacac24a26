"""Command-line entry point: ``snailtwpa <subcommand> [--config FILE] [overrides]``.

Every run writes its CSV artifacts, a ``resolved.ini`` echo of the effective
configuration and a ``MANIFEST`` of SHA-256 digests into the output directory.
Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 partial sweep.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import hashlib
import math
import os
import sys

import numpy as np

from . import ladder, mixing, noise, snail
from .config import CALIBRATE, ConfigError, RunConfig, load_config
from .dispersion import (
    CalibrationError,
    CalibrationTargets,
    Device,
    DispersionError,
    bloch,
    calibrate,
    chain_sparams,
    find_bands,
    s21_flux_map,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4

NUMERIC_ERRORS = (
    snail.SnailError,
    DispersionError,
    CalibrationError,
    mixing.MixingError,
    mixing.IntegrationError,
    ladder.LadderError,
    noise.NoiseError,
    np.linalg.LinAlgError,
)

PAPER_POINTS = (
    (0.38, 6.2, -91.4),
    (0.34, 7.0, -87.4),
    (0.22, 8.0, -82.25),
    (0.21, 8.4, -82.4),
)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".10g")
    return str(v)


class Run:
    """Output directory bookkeeping shared by all subcommands."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = cfg.execution.out
        os.makedirs(self.out, exist_ok=True)
        self.artifacts = []
        self.gaps = []
        self._device = None

    def path(self, name):
        return os.path.join(self.out, name)

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.artifacts.append(name)

    def write_text(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.artifacts.append(name)

    def gap(self, where, message):
        line = f"{where}: {message}"
        if line not in self.gaps:
            self.gaps.append(line)

    def device(self) -> Device:
        if self._device is None:
            d = self.cfg.device
            if d.e_j2 == CALIBRATE:
                self._device = calibrate(self.targets()).device
            else:
                self._device = Device(float(d.e_j2), float(d.c_farad), d.alpha, d.ratio, d.n_light,
                                      repetitions=d.repetitions, z_term=d.z_term)
        n = self.cfg.n_cells()
        return self._device.with_cells(n)

    def targets(self):
        d = self.cfg.device
        return CalibrationTargets(d.target_z_ohm, d.target_edge_ghz * 1e9, d.target_flux, d.target_flux,
                                  d.alpha, d.ratio, d.n_light, d.repetitions, d.z_term)

    def finish(self):
        text = self.cfg.to_ini()
        if self._device is not None and self.cfg.device.e_j2 == CALIBRATE:
            text += f"# calibrated: e_j2 = {_fmt(self._device.e_j2)} GHz, c_farad = {_fmt(self._device.C)} F\n"
        self.write_text("resolved.ini", text)
        if self.gaps:
            self.write_text("gaps.txt", "\n".join(self.gaps) + "\n")
        lines = []
        for name in sorted(set(self.artifacts)):
            with open(self.path(name), "rb") as fh:
                lines.append(f"{hashlib.sha256(fh.read()).hexdigest()}  {name}")
        with open(self.path("MANIFEST"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        return EXIT_PARTIAL if self.gaps else EXIT_OK


def _pool_map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _db(s21):
    with np.errstate(divide="ignore"):
        return 20 * np.log10(abs(s21))


def _grid(start, stop, step):
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 9)


# ---------------------------------------------------------------------------
# workers (top level so they can be shipped to a process pool)


def _gain_point(args):
    device, pump, f, tier, flux, opts = args
    try:
        return mixing.signal_gain(pump, f, tier, flux, device, **opts), ""
    except NUMERIC_ERRORS as exc:
        return math.nan, str(exc)


def _oracle_point(args):
    device, pump, f, tier, flux, n = args
    try:
        o = ladder.oracle_gain(device, flux, pump, f, n)
        g = mixing.signal_gain(pump, f, tier, flux, device, n)
        return o.gain_db, g, ""
    except NUMERIC_ERRORS as exc:
        return math.nan, math.nan, str(exc)


# ---------------------------------------------------------------------------
# subcommands


def cmd_snail_sweep(run: Run):
    o, d = run.cfg.operating, run.cfg.device
    grid = np.linspace(o.flux_start, o.flux_stop, o.flux_points)
    e_j2 = run.device().e_j2 if d.e_j2 == CALIBRATE else float(d.e_j2)
    rows = snail.flux_sweep(snail.SnailParams(alpha=d.alpha, e_j2=e_j2), grid)
    for r in rows:
        if not r.ok:
            run.gap(f"flux {r.flux:.6g}", r.error)
    run.write_csv("snail_sweep.csv", ["flux", "phi_min", "c2", "c3", "c4", "chi3", "chi4", "L_henry", "error"],
                  [(r.flux, r.phi_min, r.c2, r.c3, r.c4, r.chi3, r.chi4, r.L, r.error) for r in rows])


def cmd_dispersion(run: Run):
    o = run.cfg.operating
    dev = run.device()
    sc = dev.supercell(o.flux)
    f = np.linspace(o.f_start_ghz, o.f_stop_ghz, o.f_points) * 1e9
    res = [bloch(2 * np.pi * fi, sc) for fi in f]
    s11, s21 = chain_sparams(2 * np.pi * f, dev.chain(o.flux))
    run.write_csv("dispersion.csv",
                  ["f_ghz", "alpha_np_per_supercell", "beta_rad_per_supercell", "zb_re_ohm", "zb_im_ohm",
                   "s21_db", "passivity"],
                  [(fi / 1e9, r.gamma.real, r.gamma.imag, r.bloch_impedance.real, r.bloch_impedance.imag,
                    _db(b), abs(a) ** 2 + abs(b) ** 2)
                   for fi, r, a, b in zip(f, res, s11, s21)])
    run.write_csv("bands.csv", ["kind", "f_lo_ghz", "f_hi_ghz"],
                  [(b.kind, b.f_lo / 1e9, b.f_hi / 1e9) for b in find_bands(sc, o.f_stop_ghz * 1e9)])


def cmd_s21_map(run: Run):
    o = run.cfg.operating
    f = np.linspace(o.f_start_ghz, o.f_stop_ghz, o.f_points) * 1e9
    fl = np.linspace(o.flux_start, o.flux_stop, o.flux_points)
    m, errors = s21_flux_map(f, fl, run.device())
    for j, e in enumerate(errors):
        if e:
            run.gap(f"flux {fl[j]:.6g}", e)
    run.write_csv("s21_map.csv", ["flux", "f_ghz", "s21_db"],
                  [(fl[j], f[i] / 1e9, m[i, j]) for j in range(fl.size) for i in range(f.size)])


def cmd_calibrate(run: Run):
    res = calibrate(run.targets())
    run._device = res.device
    run.write_text("calibration_report.txt", res.report())
    d = res.device
    run.write_csv("calibration.csv", ["e_j2_ghz", "c_farad", "residual_z", "residual_edge"],
                  [(d.e_j2, d.C, res.residuals[0], res.residuals[1])])


def _gain_rows(run, dev, pump, flux, grid, tier):
    opts = {"rectification": run.cfg.execution.rectification}
    items = [(dev, pump, f, tier, flux, opts) for f in grid]
    out = _pool_map(_gain_point, items, run.cfg.execution.jobs)
    for f, (_, e) in zip(grid, out):
        if e:
            run.gap(f"gain at {f / 1e9:.6g} GHz, flux {flux:.4g}", e)
    return [g for g, _ in out], [e for _, e in out]


def cmd_gain_sweep(run: Run):
    o, e = run.cfg.operating, run.cfg.execution
    pump = mixing.PumpSpec(o.fp_ghz * 1e9, o.power_dbm)
    grid = _grid(o.signal_start_ghz, min(o.signal_stop_ghz, o.fp_ghz - o.signal_step_ghz / 2), o.signal_step_ghz) * 1e9
    g, err = _gain_rows(run, run.device(), pump, o.flux, grid, e.tier)
    run.write_csv("gain.csv", ["f_ghz", "gain_db", "error"], zip(grid / 1e9, g, err))


def cmd_shg(run: Run):
    o = run.cfg.operating
    dev = run.device()
    ms = mixing.build_harmonic_modeset(o.shg_f_ghz * 1e9, o.flux, dev)
    delta, e_unit = mixing.shg_parameters(ms, a1=1.0)
    ms.modes[0].amplitude = o.shg_eps_ratio * abs(delta) / e_unit
    n = max(1, int(math.ceil(o.shg_periods * 2 * np.pi / abs(delta))))
    r = mixing.integrate_cme(ms, n, rectification=run.cfg.execution.rectification)
    a1 = mixing.power_normalized(r, "fundamental")
    a2 = mixing.power_normalized(r, "harmonic")
    _, eps3 = mixing.shg_parameters(ms)
    an = mixing.shg_analytic(r.x, delta, eps3)
    run.write_csv("shg.csv", ["x_cells", "cme_ratio", "closed_form_ratio", "delta_rad_per_cell", "eps3"],
                  [(x, abs(b / a1[0]), c, delta, eps3) for x, b, c in zip(r.x, a2, an)])


def _harmonic(run, dev, flux, power):
    o = run.cfg.operating
    grid = _grid(o.harmonic_start_ghz, o.harmonic_stop_ghz, o.harmonic_step_ghz) * 1e9
    h = mixing.harmonic_response(grid, power, dev, flux, rectification=run.cfg.execution.rectification)
    for f, e in zip(h.f, h.errors):
        if e and not e.startswith("fundamental in a stop band"):
            run.gap(f"harmonic at {f / 1e9:.6g} GHz", e)
    return h


def cmd_harmonic_response(run: Run):
    o = run.cfg.operating
    h = _harmonic(run, run.device(), o.flux, o.tone_power_dbm)
    run.write_csv("harmonic_response.csv", ["f_ghz", "out_f_dbm", "out_2f_dbm", "harmonic_evanescent", "note"],
                  zip(h.f / 1e9, h.out_f_dbm, h.out_2f_dbm, h.harmonic_evanescent, h.errors))


def cmd_oracle(run: Run):
    o, e = run.cfg.operating, run.cfg.execution
    d = run.device()
    dev = d.with_cells(o.oracle_cells)
    pump = mixing.PumpSpec(o.fp_ghz * 1e9, o.power_dbm)
    freqs = run.cfg.oracle_freqs()
    out = _pool_map(_oracle_point, [(dev, pump, f, e.tier, o.flux, o.oracle_cells) for f in freqs], e.jobs)
    for f, (_, _, err) in zip(freqs, out):
        if err:
            run.gap(f"oracle at {f / 1e9:.6g} GHz", err)
    run.write_csv("oracle.csv", ["f_ghz", "ladder_gain_db", "cme_gain_db", "difference_db", "error"],
                  [(f / 1e9, a, b, b - a, err) for f, (a, b, err) in zip(freqs, out)])


def read_noise_csv(path):
    if not os.path.isfile(path):
        raise ConfigError(f"noise data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    cols = set(rows[0])
    if "gain_db" not in cols or not ({"dsnr_db"} <= cols or {"t_noise_k", "f_hz"} <= cols):
        raise ConfigError(f"{path}: need columns gain_db and dsnr_db and/or t_noise_k,f_hz")

    def col(name):
        if name not in cols:
            return None
        try:
            return np.array([float(r[name]) for r in rows])
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: non-numeric value in column {name}") from None

    return noise.FitData(col("gain_db"), col("dsnr_db"), col("t_noise_k"), col("f_hz"))


def cmd_noise_fit(run: Run):
    nb = run.cfg.noise
    if not nb.data:
        raise ConfigError("noise.data must name a CSV file")
    data = read_noise_csv(nb.data)
    res = noise.fit(data, nb.n_in, seed=run.cfg.execution.seed)
    m = res.model
    s = res.sensitivity
    run.write_csv("noise_fit.csv", ["D", "A_H", "N_in", "A_inf", "residual_norm", "sigma_D", "sigma_A_H",
                                    "correlation", "at_bound", "unidentified"],
                  [(m.D, m.A_H, m.N_in, noise.added_photons_limit(m.D), res.residual_norm, s["sigma"][0],
                    s["sigma"][1], s["correlation"], ";".join(res.at_bound), ";".join(res.unidentified))])
    _noise_table(run, m, nb.f_ghz * 1e9, "noise_model.csv")
    run.write_csv("noise_residuals.csv", ["index", "residual_db"], enumerate(res.residuals))
    if res.at_bound:
        run.gap("noise fit", f"parameters at a bound: {', '.join(res.at_bound)}")


def _noise_table(run, m, f_hz, name):
    g_db = np.linspace(0.0, 25.0, 51)
    G = 10 ** (g_db / 10)
    tot = noise.total_noise(m, G)
    run.write_csv(name, ["gain_db", "added_photons", "total_photons", "dsnr_db", "t_system_k"],
                  zip(g_db, noise.added_photons(G, m.D), tot, 10 * np.log10(noise.delta_snr(m, G)),
                      noise.noise_temperature(tot, f_hz)))


def cmd_reproduce_paper(run: Run):
    """Calibrate, then emit one CSV per figure analog at the published operating points."""
    e = run.cfg.execution
    cmd_calibrate(run)
    dev = run.device()
    tgt = run.cfg.device.target_flux
    sc = dev.supercell(tgt)
    run.write_csv("bands.csv", ["kind", "f_lo_ghz", "f_hi_ghz"],
                  [(b.kind, b.f_lo / 1e9, b.f_hi / 1e9) for b in find_bands(sc, 30e9)])

    rows = snail.flux_sweep(snail.SnailParams(alpha=dev.alpha, e_j2=dev.e_j2), np.linspace(0, 0.5, 501))
    run.write_csv("fig1_snail.csv", ["flux", "chi3", "chi4", "L_henry"], [(r.flux, r.chi3, r.chi4, r.L) for r in rows])

    f = np.round(np.arange(1.0, 30.0001, 0.1), 6) * 1e9
    fl = np.round(np.arange(0.0, 0.5001, 0.01), 6)
    m, errors = s21_flux_map(f, fl, dev)
    run.write_csv("fig2_s21_map.csv", ["flux", "f_ghz", "s21_db"],
                  [(fl[j], f[i] / 1e9, m[i, j]) for j in range(fl.size) for i in range(f.size)])

    h = _harmonic(run, dev, tgt, run.cfg.operating.tone_power_dbm)
    run.write_csv("fig3_harmonic.csv", ["f_ghz", "out_f_dbm", "out_2f_dbm", "harmonic_evanescent"],
                  zip(h.f / 1e9, h.out_f_dbm, h.out_2f_dbm, h.harmonic_evanescent))

    flux, fp, p = PAPER_POINTS[0]
    pump = mixing.PumpSpec(fp * 1e9, p)
    grid = _grid(0.2, fp - 0.2, 0.1) * 1e9
    g_l, _ = _gain_rows(run, dev, pump, flux, grid, e.tier)
    g_u, _ = _gain_rows(run, dev.unloaded(), pump, flux, grid, e.tier)
    run.write_csv("fig4a_gain.csv", ["f_ghz", "loaded_gain_db", "unloaded_gain_db"], zip(grid / 1e9, g_l, g_u))

    out = []
    for flux, fp, p in PAPER_POINTS:
        pump = mixing.PumpSpec(fp * 1e9, p)
        grid = _grid(0.2, fp - 0.2, 0.1) * 1e9
        g, _ = _gain_rows(run, dev, pump, flux, grid, e.tier)
        out += [(flux, fp, p, fi / 1e9, gi) for fi, gi in zip(grid, g)]
    run.write_csv("fig5_gain.csv", ["flux", "fp_ghz", "power_dbm", "f_ghz", "gain_db"], out)

    _noise_table(run, noise.NoiseModel(0.73, 24.85, 0.5), 6.034e9, "fig6_noise.csv")

    lines = ["# peak gain per operating point (tier %s)" % e.tier]
    for flux, fp, p in PAPER_POINTS:
        pts = [(r[4], r[3]) for r in out if r[0] == flux and r[1] == fp and not math.isnan(r[4])]
        if pts:
            g, fpk = max(pts)
            lines.append(f"flux={flux:g} fp_ghz={fp:g} power_dbm={p:g} peak_gain_db={_fmt(g)} at_f_ghz={_fmt(fpk)}")
        pump2 = 2 * fp * 1e9
        kind = [b.kind for b in find_bands(dev.supercell(flux), 30e9) if b.f_lo <= pump2 < b.f_hi]
        lines.append(f"  2*fp band: {kind[0] if kind else 'above cutoff'}")
    lines.append(f"fig4a loaded_peak_db={_fmt(np.nanmax(g_l))} unloaded_peak_db={_fmt(np.nanmax(g_u))}")
    run.write_text("summary.txt", "\n".join(lines) + "\n")


COMMANDS = {
    "snail-sweep": cmd_snail_sweep,
    "dispersion": cmd_dispersion,
    "s21-map": cmd_s21_map,
    "calibrate": cmd_calibrate,
    "gain-sweep": cmd_gain_sweep,
    "shg": cmd_shg,
    "harmonic-response": cmd_harmonic_response,
    "oracle": cmd_oracle,
    "noise-fit": cmd_noise_fit,
    "reproduce-paper": cmd_reproduce_paper,
}


def build_parser():
    p = argparse.ArgumentParser(prog="snailtwpa", description="SNAIL TWPA modeling toolkit")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes for sweeps")
    p.add_argument("--seed", type=int, help="random seed (noise-fit starts)")
    p.add_argument("--flux", type=float, help="flux bias in units of the flux quantum")
    p.add_argument("--fp-ghz", type=float, help="pump frequency, GHz")
    p.add_argument("--power-dbm", type=float, help="pump power, dBm")
    p.add_argument("--cells", type=int, help="chain length in cells")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {
        "execution": {"out": args.out, "jobs": args.jobs, "seed": args.seed},
        "operating": {"flux": args.flux, "fp_ghz": args.fp_ghz, "power_dbm": args.power_dbm, "cells": args.cells},
    }
    try:
        cfg = load_config(args.config, overrides)
        run = Run(cfg)
        COMMANDS[args.command](run)
        code = run.finish()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure in {type(exc).__module__}: {type(exc).__name__}: {exc}", file=sys.stderr)
        for attr in ("residuals", "amplitudes", "x", "t"):
            if getattr(exc, attr, None) is not None:
                print(f"  {attr} = {getattr(exc, attr)!r}", file=sys.stderr)
        return EXIT_NUMERIC
    if code == EXIT_PARTIAL:
        print("partial sweep; gaps:", file=sys.stderr)
        for g in run.gaps:
            print(f"  {g}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
