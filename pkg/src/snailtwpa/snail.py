"""SNAIL potential, its expansion about the phase minimum, and the equivalent inductance.

The loop has one small junction (energy ``alpha * E_J2``) in parallel with ``n_large``
identical large junctions (energy ``E_J2`` each).  With total phase ``phi`` across the
element the normalized inductive energy is::

    U(phi) = E_S / E_J2 = -alpha*cos(phi) - n*cos((phi_ext - phi)/n)

Expanding about the minimum ``phi_min`` in the deviation ``p = phi - phi_min``::

    U ~ const + c2 p^2 + c3 p^3 + c4 p^4

with ``chi3 = -3 c3/c2`` and ``chi4 = -6 c4/c2``.  Energies are kept in GHz (E/h);
fluxes are reduced phases in radians.  The constant term is dropped everywhere.
"""

from dataclasses import dataclass, replace
import math

import numpy as np

from .constants import PHI0_RED, flux_to_phase, ghz_to_joule, joule_to_ghz

MAX_ITER = 200
PHI_TOL = 1e-12
SCAN_POINTS = 6001


class SnailError(ValueError):
    """Invalid SNAIL parameters or a failed operating-point solve."""


class UnstableBranchError(SnailError):
    pass


class ConvergenceError(SnailError):
    pass


@dataclass(frozen=True)
class SnailParams:
    """Physical knobs of one SNAIL.

    Attributes:
        alpha: small/large junction energy ratio E_J1/E_J2, 0 < alpha < 1.
        e_j2: large-junction Josephson energy in GHz (E_J2/h).
        phi_ext: reduced external flux 2*pi*Phi_ext/Phi_0 in radians.
        n_large: number of large junctions.
    """

    alpha: float = 0.16
    e_j2: float = 1000.0
    phi_ext: float = 0.0
    n_large: int = 3

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise SnailError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.e_j2 > 0:
            raise SnailError(f"e_j2 must be positive, got {self.e_j2}")
        if int(self.n_large) != self.n_large or self.n_large < 1:
            raise SnailError(f"n_large must be a positive integer, got {self.n_large}")
        if not math.isfinite(self.phi_ext):
            raise SnailError(f"phi_ext must be finite, got {self.phi_ext}")

    @classmethod
    def at_flux(cls, flux_over_phi0, **kw):
        return cls(phi_ext=float(flux_to_phase(flux_over_phi0)), **kw)

    def with_flux(self, phi_ext):
        return replace(self, phi_ext=float(phi_ext))


@dataclass(frozen=True)
class TaylorCoeffs:
    phi_min: float
    c2: float
    c3: float
    c4: float
    chi3: float
    chi4: float


def reduced_flux(phi_ext):
    """Map phi_ext into [-pi, pi]; every output is 2*pi periodic in phi_ext."""
    return phi_ext - 2 * np.pi * np.round(phi_ext / (2 * np.pi))


def energy(phi, params: SnailParams):
    """Normalized energy U(phi) = E_S/E_J2 at total phase ``phi`` (array friendly)."""
    n = params.n_large
    phi_ext = reduced_flux(params.phi_ext)
    return -params.alpha * np.cos(phi) - n * np.cos((phi_ext - phi) / n)


def _derivatives(phi, alpha, phi_ext, n):
    """U', U'', U''', U'''' at total phase phi."""
    u = (phi_ext - phi) / n
    s, c = math.sin(phi), math.cos(phi)
    su, cu = math.sin(u), math.cos(u)
    d1 = alpha * s - su
    d2 = alpha * c + cu / n
    d3 = -alpha * s + su / n**2
    d4 = -alpha * c - cu / n**3
    return d1, d2, d3, d4


def _rtsafe(f, lo, hi, flo, fhi, label):
    # Newton steps safeguarded by a sign-changing bracket.
    x = 0.5 * (lo + hi)
    for _ in range(MAX_ITER):
        fx, dfx = f(x)
        if fx == 0.0:
            return x
        if (fx < 0) == (flo < 0):
            lo, flo = x, fx
        else:
            hi = x
        step_ok = dfx != 0.0
        if step_ok:
            xn = x - fx / dfx
            step_ok = lo < xn < hi
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) < PHI_TOL:
            return xn
        x = xn
    raise ConvergenceError(f"phi_min did not converge in {MAX_ITER} iterations at {label}")


def solve_phi_min(params: SnailParams) -> float:
    """Global minimum of U for the flux reduced into [-pi, pi].

    A scan over one full period of U (2*pi*n_large wide) picks the lowest well, then a
    bracketed Newton/bisection solve of ``alpha*sin(phi) = sin((phi_ext - phi)/n)``
    polishes it.
    """
    alpha, n = params.alpha, params.n_large
    phi_ext = float(reduced_flux(params.phi_ext))
    label = f"phi_ext={params.phi_ext!r} rad"
    if phi_ext == 0.0:
        return 0.0
    half = np.pi * n
    grid = np.linspace(-half, half, SCAN_POINTS)
    e = -alpha * np.cos(grid) - n * np.cos((phi_ext - grid) / n)
    i = int(np.argmin(e))
    i = min(max(i, 1), SCAN_POINTS - 2)
    lo, hi = float(grid[i - 1]), float(grid[i + 1])

    def f(x):
        d1, d2, _, _ = _derivatives(x, alpha, phi_ext, n)
        return d1, d2

    flo, fhi = f(lo)[0], f(hi)[0]
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo < 0) == (fhi < 0):
        raise ConvergenceError(f"no stationary point bracketed near the scan minimum at {label}")
    return _rtsafe(f, lo, hi, flo, fhi, label)


def taylor_coeffs(params: SnailParams) -> TaylorCoeffs:
    phi_min = solve_phi_min(params)
    n = params.n_large
    _, d2, d3, d4 = _derivatives(phi_min, params.alpha, float(reduced_flux(params.phi_ext)), n)
    c2, c3, c4 = d2 / 2.0, d3 / 6.0, d4 / 24.0
    if c2 <= 0:
        raise UnstableBranchError(f"c2={c2:.3g} <= 0 at phi_ext={params.phi_ext!r}: unstable branch")
    return TaylorCoeffs(phi_min, c2, c3, c4, -3 * c3 / c2, -6 * c4 / c2)


def stationarity_residual(params: SnailParams, phi_min: float) -> float:
    d1, *_ = _derivatives(phi_min, params.alpha, float(reduced_flux(params.phi_ext)), params.n_large)
    return abs(d1)


def inductance_from_c2(c2, e_j2_ghz):
    """L = phi0^2 / (2 c2 E_J2), with phi0 = hbar/2e."""
    return PHI0_RED**2 / (2.0 * c2 * ghz_to_joule(e_j2_ghz))


def e_j2_from_inductance(L, c2):
    """Inverse of :func:`inductance_from_c2`; returns E_J2 in GHz."""
    return joule_to_ghz(PHI0_RED**2 / (2.0 * c2 * L))


def snail_inductance(params: SnailParams) -> float:
    """Small-signal inductance in henries at the operating flux."""
    return inductance_from_c2(taylor_coeffs(params).c2, params.e_j2)


@dataclass(frozen=True)
class FluxRow:
    flux: float  # Phi_ext / Phi_0
    phi_min: float = math.nan
    c2: float = math.nan
    c3: float = math.nan
    c4: float = math.nan
    chi3: float = math.nan
    chi4: float = math.nan
    L: float = math.nan
    error: str = ""

    @property
    def ok(self):
        return not self.error


def flux_sweep(template: SnailParams, flux_grid) -> list:
    """One :class:`FluxRow` per flux point (Phi_ext/Phi_0 fractions).

    Failures are recorded in ``row.error`` and the sweep continues.
    """
    grid = np.asarray(flux_grid, dtype=float)
    if grid.ndim != 1:
        raise SnailError("flux grid must be one-dimensional")
    if grid.size > 1:
        d = np.diff(grid)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise SnailError("flux grid must be strictly monotone")
    rows = []
    for fx in grid:
        try:
            p = template.with_flux(flux_to_phase(float(fx)))
            tc = taylor_coeffs(p)
            rows.append(
                FluxRow(float(fx), tc.phi_min, tc.c2, tc.c3, tc.c4, tc.chi3, tc.chi4,
                        inductance_from_c2(tc.c2, p.e_j2))
            )
        except SnailError as exc:
            rows.append(FluxRow(float(fx), error=str(exc)))
    return rows
