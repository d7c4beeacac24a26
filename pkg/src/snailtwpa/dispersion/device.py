"""Flux-dependent device model, S21 flux maps and calibration of unpublished constants."""

from dataclasses import dataclass, field, replace
from functools import lru_cache
import math

import numpy as np
from scipy import optimize

from ..constants import flux_to_phase
from ..snail import SnailError, SnailParams, inductance_from_c2, e_j2_from_inductance, taylor_coeffs
from .network import (
    ChainSpec,
    DispersionError,
    SupercellSpec,
    bloch,
    chain_sparams,
    find_bands,
    half_trace,
    _bisect_edge,
    EDGE_TOL,
)


class CalibrationError(RuntimeError):
    def __init__(self, message, residuals=None, trace=None):
        super().__init__(message)
        self.residuals = residuals
        self.trace = trace or []


@lru_cache(maxsize=4096)
def _coeffs(alpha, n_large, flux):
    return taylor_coeffs(SnailParams(alpha=alpha, phi_ext=float(flux_to_phase(flux)), n_large=n_large))


@dataclass(frozen=True)
class Device:
    """A SNAIL ladder: ``n_light`` L1 cells then one loaded cell per supercell.

    The loaded cell uses the same SNAIL with E_J2 divided by ``ratio``, so every cell
    shares c2..c4 and only the inductance scale differs.
    """

    e_j2: float  # GHz, light cells
    C: float  # F
    alpha: float = 0.16
    ratio: float = 1.5
    n_light: int = 2
    C2: float = None
    repetitions: int = 147
    z_term: float = 50.0
    n_large: int = 3

    @property
    def period(self):
        return self.n_light + 1

    @property
    def n_cells(self):
        return self.period * self.repetitions

    def snail(self, flux):
        return SnailParams(alpha=self.alpha, e_j2=self.e_j2, phi_ext=float(flux_to_phase(flux)),
                           n_large=self.n_large)

    def coeffs(self, flux):
        return _coeffs(self.alpha, self.n_large, float(flux))

    def L1(self, flux):
        return inductance_from_c2(self.coeffs(flux).c2, self.e_j2)

    def e_j2_cells(self):
        """E_J2 of each cell of one supercell, GHz."""
        return (self.e_j2,) * self.n_light + (self.e_j2 / self.ratio,)

    def supercell(self, flux) -> SupercellSpec:
        return SupercellSpec.loaded(self.L1(flux), self.C, self.ratio, self.n_light, self.C2)

    def chain(self, flux, repetitions=None) -> ChainSpec:
        return ChainSpec(self.supercell(flux), repetitions or self.repetitions, self.z_term)

    def unloaded(self):
        return replace(self, ratio=1.0, C2=None)

    def with_cells(self, n_cells):
        if n_cells % self.period:
            raise DispersionError(f"{n_cells} cells is not a whole number of {self.period}-cell supercells")
        return replace(self, repetitions=n_cells // self.period)

    def line_impedance(self, flux):
        """Long-wavelength impedance sqrt(L_avg/C) of the supercell."""
        sc = self.supercell(flux)
        return math.sqrt(sc.L_avg / sc.C_avg)

    def omega_c(self, flux):
        """Cutoff 2/sqrt(L1 C) of the unloaded cell."""
        return 2.0 / math.sqrt(self.L1(flux) * self.C)


def s21_flux_map(f_grid, flux_grid, device: Device):
    """|S21| in dB, shape (len(f_grid), len(flux_grid)), plus per-column errors.

    Columns that fail (e.g. an unstable SNAIL branch) are filled with NaN and their
    message recorded in ``errors[j]``.
    """
    f = np.asarray(f_grid, dtype=float)
    fl = np.asarray(flux_grid, dtype=float)
    out = np.full((f.size, fl.size), np.nan)
    errors = [""] * fl.size
    for j, phi in enumerate(fl):
        try:
            _, s21 = chain_sparams(2 * np.pi * f, device.chain(phi))
            with np.errstate(divide="ignore"):
                out[:, j] = 20 * np.log10(np.abs(s21))  # -inf once |S21| underflows
        except (SnailError, DispersionError) as exc:
            errors[j] = str(exc)
    return out, errors


def first_gap_lower_edge(spec: SupercellSpec, f_scan=None, n=4000):
    """Lower edge (Hz) of the lowest stop band that has a pass band above it."""
    if f_scan is None:
        lmin = min(c.L for c in spec.cells)
        cmin = min(c.C for c in spec.cells)
        f_scan = 1.05 * 2.0 / math.sqrt(lmin * cmin) / (2 * np.pi)
    f = np.linspace(f_scan / n, f_scan, n)
    stop = np.abs(half_trace(2 * np.pi * f, spec)) - 1 > EDGE_TOL
    idx = np.nonzero(stop)[0]
    if idx.size == 0 or idx[0] == 0:
        raise DispersionError("no stop band above a pass band in the scanned range")
    i = idx[0]
    # the gap must close again below the scan limit to be a gap rather than cutoff
    if np.all(stop[i:]):
        raise DispersionError("first stop band is the cutoff region; supercell has no gap")
    return _bisect_edge(spec, f[i - 1], f[i], 1e3)


@dataclass(frozen=True)
class CalibrationTargets:
    z_line: float = 50.0
    f_edge: float = 11.5e9
    flux_edge: float = 0.38
    flux_z: float = 0.38
    alpha: float = 0.16
    ratio: float = 1.5
    n_light: int = 2
    repetitions: int = 147
    z_term: float = 50.0


@dataclass
class CalibrationResult:
    device: Device
    targets: CalibrationTargets
    residuals: tuple
    trace: list = field(default_factory=list)

    def report(self, f_max=30e9):
        d, t = self.device, self.targets
        lines = [
            "# calibration report",
            f"e_j2_ghz = {d.e_j2:.9g}",
            f"C_farad = {d.C:.9g}",
            f"target_z_line_ohm = {t.z_line:.6g} at flux {t.flux_z:.4g}",
            f"target_f_edge_hz = {t.f_edge:.6g} at flux {t.flux_edge:.4g}",
            f"achieved_z_line_ohm = {d.line_impedance(t.flux_z):.9g}",
            f"achieved_f_edge_hz = {first_gap_lower_edge(d.supercell(t.flux_edge)):.9g}",
            f"relative_residuals = {self.residuals[0]:.3e}, {self.residuals[1]:.3e}",
            f"L1_at_0_henry = {d.L1(0.0):.9g}",
            f"L1_at_edge_flux_henry = {d.L1(t.flux_edge):.9g}",
            f"omega_c_at_0_rad_s = {d.omega_c(0.0):.9g}",
            f"omega_c_at_edge_flux_rad_s = {d.omega_c(t.flux_edge):.9g}",
            f"solver_iterations = {len(self.trace)}",
            "",
            f"# bands at flux {t.flux_edge:.4g} (Hz)",
        ]
        for b in find_bands(d.supercell(t.flux_edge), f_max):
            lines.append(f"{b.kind:4s} {b.f_lo:14.6e} {b.f_hi:14.6e}")
        lines += ["", "# Bloch impedance 4-8 GHz at the edge flux (ohm)"]
        sc = d.supercell(t.flux_edge)
        for f in np.arange(4e9, 8.0001e9, 1e9):
            zb = bloch(2 * np.pi * f, sc).bloch_impedance
            lines.append(f"{f:10.3e} {zb.real:10.4f} {zb.imag:+10.4f}j")
        return "\n".join(lines) + "\n"


def calibrate(targets: CalibrationTargets = CalibrationTargets(), tol=1e-9) -> CalibrationResult:
    """Solve for (E_J2, C) hitting the line-impedance and stop-band-edge targets.

    Two-parameter root solve in log space, seeded from the homogeneous-ladder estimate
    (edge near w*sqrt(L1 C) = 1).  Raises :class:`CalibrationError` with the residuals
    and the search trace if the targets are not met to ``1e-6`` relative.
    """
    c_edge = _coeffs(targets.alpha, 3, float(targets.flux_edge))
    c_z = _coeffs(targets.alpha, 3, float(targets.flux_z))
    shape = (targets.n_light + targets.ratio) / (targets.n_light + 1)
    trace = []

    def device(x):
        return Device(e_j2=math.exp(x[0]), C=math.exp(x[1]), alpha=targets.alpha, ratio=targets.ratio,
                      n_light=targets.n_light, repetitions=targets.repetitions, z_term=targets.z_term)

    def residual(x):
        d = device(x)
        z = d.line_impedance(targets.flux_z)
        fe = first_gap_lower_edge(d.supercell(targets.flux_edge))
        r = np.array([math.log(z / targets.z_line), math.log(fe / targets.f_edge)])
        trace.append((d.e_j2, d.C, float(r[0]), float(r[1])))
        return r

    # seed: L1 C = (1 / (2 pi f_edge))^2 and L_avg / C = Z^2
    lc = (1.0 / (2 * np.pi * targets.f_edge)) ** 2
    l_over_c = targets.z_line**2 / shape * (c_z.c2 / c_edge.c2)
    L1 = math.sqrt(lc * l_over_c)
    C = math.sqrt(lc / l_over_c)
    x0 = np.array([math.log(e_j2_from_inductance(L1, c_edge.c2)), math.log(C)])
    sol = optimize.root(residual, x0, method="hybr", tol=tol)
    r = residual(sol.x)
    if not sol.success or np.max(np.abs(r)) > 1e-6:
        raise CalibrationError(f"calibration did not converge: {sol.message}", residuals=r, trace=trace)
    return CalibrationResult(device(sol.x), targets, (float(r[0]), float(r[1])), trace)
