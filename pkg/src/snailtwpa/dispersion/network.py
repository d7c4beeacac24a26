"""ABCD cascades, Bloch dispersion, band search and S-parameters of LC ladders.

Convention: a cell is a series inductor followed by a shunt capacitor, and the
state vector ``x_n = (V_n, I_n)`` satisfies ``x_n = M x_{n+1}``.  Phasors are peak
amplitudes with time dependence ``exp(+i w t)``, so a forward wave in a pass band
varies as ``exp(-i k n)``.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from ..constants import PHI0_RED

OMEGA_MAX = 2 * np.pi * 1e12  # above this a lumped LC ladder is meaningless
EDGE_TOL = 1e-12
EDGE_RESOLUTION_HZ = 1e3


class DispersionError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpec:
    L: float
    C: float

    def __post_init__(self):
        if not (self.L > 0 and self.C > 0):
            raise DispersionError(f"cell needs L > 0 and C > 0, got L={self.L}, C={self.C}")


@dataclass(frozen=True)
class SupercellSpec:
    """Ordered cells of one period; ``a`` counts cells per supercell."""

    cells: tuple

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.cells:
            raise DispersionError("supercell needs at least one cell")

    @property
    def a(self):
        return len(self.cells)

    @classmethod
    def loaded(cls, L1, C, ratio=1.5, n_light=2, C2=None):
        """``n_light`` cells of L1 followed by one cell of ``ratio*L1``."""
        heavy = CellSpec(ratio * L1, C if C2 is None else C2)
        return cls((CellSpec(L1, C),) * n_light + (heavy,))

    def primitive(self):
        """Shortest period reproducing the same infinite ladder."""
        n = len(self.cells)
        for p in range(1, n + 1):
            if n % p == 0 and all(self.cells[i] == self.cells[i % p] for i in range(n)):
                return SupercellSpec(self.cells[:p])
        return self

    @property
    def L_avg(self):
        return sum(c.L for c in self.cells) / len(self.cells)

    @property
    def C_avg(self):
        return sum(c.C for c in self.cells) / len(self.cells)


@dataclass(frozen=True)
class ChainSpec:
    supercell: SupercellSpec
    repetitions: int
    z_term: float = 50.0

    def __post_init__(self):
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise DispersionError(f"repetitions must be a positive integer, got {self.repetitions}")
        if not self.z_term > 0:
            raise DispersionError("z_term must be positive")

    @property
    def n_cells(self):
        return self.repetitions * self.supercell.a

    def cells(self):
        return self.supercell.cells * self.repetitions


@dataclass(frozen=True)
class DispersionResult:
    omega: float
    gamma: complex  # per supercell
    bloch_impedance: complex
    half_trace: float  # Tr(M)/2
    at_edge: bool = False

    @property
    def passband(self):
        return abs(self.half_trace) <= 1 + EDGE_TOL


@dataclass(frozen=True)
class Band:
    f_lo: float
    f_hi: float
    kind: str  # "pass" or "stop"


def _check_omega(omega):
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0) or np.any(w > OMEGA_MAX):
        raise DispersionError(f"omega must lie in [0, {OMEGA_MAX:.3g}] rad/s")
    return w


def cell_matrix(omega, cell: CellSpec):
    """Series L then shunt C; broadcasts over ``omega`` to shape (..., 2, 2)."""
    w = _check_omega(omega)
    m = np.empty(w.shape + (2, 2), dtype=complex)
    zl = 1j * w * cell.L
    yc = 1j * w * cell.C
    m[..., 0, 0] = 1 + zl * yc
    m[..., 0, 1] = zl
    m[..., 1, 0] = yc
    m[..., 1, 1] = 1
    return m


def supercell_matrix(omega, spec: SupercellSpec):
    m = cell_matrix(omega, spec.cells[0])
    for cell in spec.cells[1:]:
        m = m @ cell_matrix(omega, cell)
    return m


def matrix_det(m):
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def _trace(omega, spec):
    m = supercell_matrix(omega, spec)
    return (m[..., 0, 0] + m[..., 1, 1]).real


def half_trace(omega, spec: SupercellSpec):
    """Tr(M)/2 of the supercell matrix (real for a lossless ladder)."""
    return 0.5 * _trace(omega, spec)


def gamma_from_half_trace(t):
    """acosh(t) on the branch Re >= 0, Im in [0, pi], for real ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape, dtype=complex)
    inside = np.abs(t) <= 1
    out[inside] = 1j * np.arccos(t[inside])
    hi = t > 1
    out[hi] = np.arccosh(t[hi])
    lo = t < -1
    out[lo] = np.arccosh(-t[lo]) + 1j * np.pi
    return out if out.ndim else complex(out)


def _forward_eigen(m, t):
    """Forward eigenvalue and eigenvector (V, I) of one 2x2 supercell matrix."""
    A, B, C, D = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    root = np.sqrt(complex(t * t - 1))
    cands = []
    for lam in (t + root, t - root):
        if abs(B) > abs(C) * 1e-30 and abs(lam - A) + abs(B) > 0:
            v = np.array([B, lam - A], dtype=complex)
        else:
            v = np.array([lam - D, C], dtype=complex)
        cands.append((lam, v))
    if abs(t) <= 1:
        # pass band: the forward wave carries positive power Re(V conj(I))
        for lam, v in cands:
            if (v[0] * np.conj(v[1])).real > 0:
                return lam, v
        return cands[0]
    # stop band: forward solution decays along the chain, i.e. |lambda| > 1
    return max(cands, key=lambda c: abs(c[0]))


def bloch(omega, spec: SupercellSpec) -> DispersionResult:
    """Solve 2 cosh(gamma) = Tr(M) for one supercell at one angular frequency."""
    w = float(_check_omega(omega))
    m = supercell_matrix(w, spec)
    t = 0.5 * (m[0, 0] + m[1, 1]).real
    gamma = gamma_from_half_trace(t)
    at_edge = abs(abs(t) - 1) <= EDGE_TOL
    if w == 0.0 or at_edge:
        zb = complex(math.sqrt(spec.L_avg / spec.C_avg)) if w == 0.0 else complex("nan")
    else:
        lam, v = _forward_eigen(m, t)
        zb = complex(v[0] / v[1])
    return DispersionResult(w, complex(gamma), zb, float(t), bool(at_edge))


def bloch_gamma(omegas, spec: SupercellSpec):
    """Vectorized propagation constant per supercell."""
    return gamma_from_half_trace(half_trace(omegas, spec))


def _bisect_edge(spec, f_lo, f_hi, res):
    def h(f):
        return abs(float(half_trace(2 * np.pi * f, spec))) - 1 - EDGE_TOL

    h_lo = h(f_lo)
    while f_hi - f_lo > res:
        mid = 0.5 * (f_lo + f_hi)
        hm = h(mid)
        if (hm > 0) == (h_lo > 0):
            f_lo, h_lo = mid, hm
        else:
            f_hi = mid
    return 0.5 * (f_lo + f_hi)


def find_bands(spec: SupercellSpec, f_max, resolution=1e6):
    """Partition (0, f_max] into alternating pass/stop bands.

    The range is scanned at ``resolution`` Hz and each edge is refined by bisection on
    ``|Tr M|/2 - 1`` to 1 kHz.  Bands narrower than two scan steps trigger a warning
    since neighbouring features may have merged.
    """
    if not (f_max > 0 and 2 * np.pi * f_max <= OMEGA_MAX):
        raise DispersionError(f"f_max must lie in (0, {OMEGA_MAX / 2 / np.pi:.3g}] Hz")
    if not resolution > 0:
        raise DispersionError("resolution must be positive")
    n = max(int(math.ceil(f_max / resolution)), 2)
    f = np.linspace(f_max / n, f_max, n)
    stop = np.abs(half_trace(2 * np.pi * f, spec)) - 1 > EDGE_TOL
    edges = []
    for i in np.nonzero(stop[1:] != stop[:-1])[0]:
        edges.append(_bisect_edge(spec, f[i], f[i + 1], EDGE_RESOLUTION_HZ))
    bounds = [0.0] + edges + [float(f_max)]
    kind = "stop" if stop[0] else "pass"
    bands = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        bands.append(Band(lo, hi, kind))
        kind = "pass" if kind == "stop" else "stop"
    narrow = [b for b in bands[1:-1] if b.f_hi - b.f_lo < 2 * resolution]
    if narrow:
        warnings.warn(
            "band search resolution may have merged features near: "
            + ", ".join(f"{b.kind} {b.f_lo:.6g}-{b.f_hi:.6g} Hz" for b in narrow),
            stacklevel=2,
        )
    return bands


def band_gaps(bands):
    """Stop bands that have a pass band above them (excludes the region above cutoff)."""
    out = []
    for i, b in enumerate(bands):
        if b.kind == "stop" and any(x.kind == "pass" for x in bands[i + 1:]):
            out.append(b)
    return out


def cutoff_frequency(bands):
    """Upper edge of the highest pass band found, in Hz."""
    passes = [b for b in bands if b.kind == "pass"]
    return passes[-1].f_hi if passes else 0.0


def band_index(f, bands):
    """Number of pass bands lying entirely below ``f``."""
    return sum(1 for b in bands if b.kind == "pass" and b.f_hi <= f)


def scaled_matrix_power(m, n):
    """``m**n`` for stacks of 2x2 matrices as (normalized product, log scale).

    Returns ``(p, s)`` with ``m**n = p * exp(s)``; deep stop bands never overflow.
    """
    m = np.asarray(m, dtype=complex)
    shape = m.shape[:-2]
    result = np.broadcast_to(np.eye(2, dtype=complex), m.shape).copy()
    rlog = np.zeros(shape)
    base = m.copy()
    blog = np.zeros(shape)
    k = int(n)
    while k:
        if k & 1:
            result = result @ base
            rlog = rlog + blog
            s = np.max(np.abs(result), axis=(-2, -1))
            result = result / s[..., None, None]
            rlog = rlog + np.log(s)
        k >>= 1
        if k:
            base = base @ base
            blog = 2 * blog
            s = np.max(np.abs(base), axis=(-2, -1))
            base = base / s[..., None, None]
            blog = blog + np.log(s)
    return result, rlog


def abcd_to_s(m, z0, log_scale=0.0):
    """(S11, S21) of a reciprocal two-port; ``m`` may be a normalized product."""
    A, B, C, D = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    den = A + B / z0 + C * z0 + D
    s11 = (A + B / z0 - C * z0 - D) / den
    # det(true M) = 1, so S21 = 2/den_true = 2 exp(-log_scale) / den
    s21 = 2.0 * np.exp(-np.asarray(log_scale)) / den
    return s11, s21


def chain_matrix(omega, chain: ChainSpec):
    return scaled_matrix_power(supercell_matrix(omega, chain.supercell), chain.repetitions)


def chain_sparams(omega, chain: ChainSpec):
    """(S11, S21) of the finite chain between ``z_term`` ports; broadcasts over omega."""
    p, s = chain_matrix(omega, chain)
    s11, s21 = abcd_to_s(p, chain.z_term, s)
    if np.ndim(s11) == 0:
        return complex(s11), complex(s21)
    return s11, s21


@dataclass
class BlochMode:
    """Forward Bloch eigenmode of a periodic ladder at one frequency.

    Per position ``r`` inside the supercell (node ``r`` and branch ``r+1``) the forward
    solution is ``x_c = u(r) exp(-i k c)``.  Normalization: node phase amplitude
    ``V/(i w phi0)`` is 1 at ``r = 0``.  For evanescent modes only the cell data needed
    by the driven (slaved) solve is meaningful.
    """

    omega: float
    spec: SupercellSpec
    evanescent: bool
    k: float = math.nan  # unfolded wavenumber per cell
    band: int = 0
    u_v: np.ndarray = field(default=None, repr=False)
    u_i: np.ndarray = field(default=None, repr=False)
    gamma: complex = 0j
    w: float = math.nan  # conserved form w_-^T J w_+ = 2 Re(conj(V) I)

    @property
    def period(self):
        return self.spec.a

    @property
    def branch_profile(self):
        """Branch phase drop per unit amplitude, without the exp(-i k c) factor."""
        L = np.array([c.L for c in self.spec.cells])
        return L * self.u_i / PHI0_RED

    @property
    def power(self):
        """Power carried by the unit-amplitude forward mode, W."""
        return self.w / 4.0

    def state(self, c):
        """Forward (V, I) at node index ``c``."""
        r = int(c) % self.period
        ph = np.exp(-1j * self.k * c)
        return self.u_v[r] * ph, self.u_i[r] * ph


def bloch_mode(omega, spec: SupercellSpec, bands=None) -> BlochMode:
    """Forward eigenmode with unfolded per-cell wavenumber.

    ``bands`` (from :func:`find_bands` on the same supercell) fixes the band index used
    to unfold k; it is computed on demand when omitted.
    """
    w = float(omega)
    if w <= 0:
        raise DispersionError("bloch_mode needs omega > 0")
    m = supercell_matrix(w, spec)
    t = 0.5 * (m[0, 0] + m[1, 1]).real
    gamma = complex(gamma_from_half_trace(t))
    if abs(t) > 1 - EDGE_TOL:
        return BlochMode(w, spec, evanescent=True, gamma=gamma)
    if bands is None:
        bands = find_bands(spec, 1.02 * w / (2 * np.pi), resolution=max(w / (2 * np.pi) / 4000, 1e5))
    b = band_index(w / (2 * np.pi), bands)
    lam, v = _forward_eigen(m, t)
    # x_0 = lam * x_P; for the forward wave x_P = exp(-i K) x_0, so K = arg(lam) mod 2 pi
    K = float(np.angle(lam)) % (2 * np.pi)
    while K < np.pi * b - 1e-9:
        K += 2 * np.pi
    while K > np.pi * (b + 1) + 1e-9:
        K -= 2 * np.pi
    P = spec.a
    k = K / P
    v = v * (1j * w * PHI0_RED / v[0])
    xs = [v]
    for r in range(P - 1):
        mi = np.linalg.inv(cell_matrix(w, spec.cells[r]))
        xs.append(mi @ xs[-1])
    xs = np.array(xs)
    ph = np.exp(1j * k * np.arange(P))
    u_v = xs[:, 0] * ph
    u_i = xs[:, 1] * ph
    wform = 2.0 * (np.conj(u_v[0]) * u_i[0]).real
    return BlochMode(w, spec, False, k, b, u_v, u_i, gamma, float(wform))
