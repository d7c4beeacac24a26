"""Coupled-mode description of wave mixing on a periodically loaded SNAIL ladder.

Each SNAIL branch carries the current ``I = (phi0/L) (psi - chi3/2 psi^2 - chi4/3 psi^3)``
where ``psi`` is the branch phase drop.  The nonlinear part acts as a series voltage
source ``-i w phi0 N`` inside the branch.  Because every lossless cell matrix is
symplectic, ``w_-^T J x`` is conserved between sources, which gives the exact
first-order change of the forward Bloch amplitude of mode ``m`` across cell ``c``::

    da_m = i w_m phi0 N_m(c) conj(u_I,m(r)) exp(i k_m c) / W_m

with ``W_m = 2 Re(conj(V) I)`` of the mode.  Treating ``c`` as continuous gives the
coupled-mode ODE that :func:`integrate_cme` solves.  Amplitudes ``a_m`` are node phase
amplitudes (rad, peak) at the first node of a supercell.

Modes lying in a stop band (and the DC rectification term) do not propagate; they are
slaved to the local nonlinear drive through a Floquet particular solution and feed
back into the propagating modes at second order in chi3.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import itertools
import math
import warnings

import numpy as np

from .constants import HBAR, PHI0_RED, dbm_to_watt, watt_to_dbm
from .dispersion import (
    BlochMode,
    CellSpec,
    Device,
    bloch_mode,
    cell_matrix,
    chain_sparams,
    find_bands,
)
from .snail import TaylorCoeffs

PHASE_WARN = 0.5
PHASE_LIMIT = 1.0
SEED_RATIO = 1e-3
EDGE_REL = 2e-4  # relative distance from a stop-band edge treated as on the edge


class MixingError(ValueError):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, message, x=None, amplitudes=None):
        super().__init__(message)
        self.x = x
        self.amplitudes = amplitudes


@dataclass(frozen=True)
class PumpSpec:
    f_p: float  # Hz
    power_dbm: float

    @property
    def power_w(self):
        return float(dbm_to_watt(self.power_dbm))


def pump_amplitude(pump: PumpSpec, cell: CellSpec, z0=50.0):
    """Per-cell phase drop amplitude of a matched-line drive.

    ``I = sqrt(2 P / z0)`` and ``psi = L I / phi0``.  Raises above 1 rad, where the
    quartic expansion of the SNAIL energy no longer holds; warns above 0.5 rad.
    """
    p = pump.power_w
    if p < 0:
        raise MixingError("pump power must be non-negative")
    psi = cell.L * math.sqrt(2.0 * p / z0) / PHI0_RED
    if psi >= PHASE_LIMIT:
        raise MixingError(f"phase amplitude {psi:.3g} rad exceeds the quartic truncation limit of {PHASE_LIMIT} rad")
    if psi > PHASE_WARN:
        warnings.warn(f"phase amplitude {psi:.3g} rad is above {PHASE_WARN} rad", stacklevel=2)
    return psi


def power_for_phase(psi, cell: CellSpec, z0=50.0):
    """Inverse of :func:`pump_amplitude`, in dBm."""
    i = psi * PHI0_RED / cell.L
    return float(watt_to_dbm(i * i * z0 / 2.0))


@dataclass
class Mode:
    f: int  # Hz, integer so that frequency relations are exact
    role: str
    bloch: BlochMode
    amplitude: complex = 0j

    @property
    def omega(self):
        return 2 * np.pi * self.f

    @property
    def evanescent(self):
        return self.bloch.evanescent

    @property
    def k(self):
        return self.bloch.k


@dataclass
class ModeSet:
    modes: list
    relations: list  # tuples of (coefficient, mode index); sum of coefficient*f == 0
    coeffs: TaylorCoeffs
    device: Device = None
    flux: float = None

    def index(self, role):
        for i, m in enumerate(self.modes):
            if m.role == role:
                return i
        raise KeyError(role)

    def has(self, role):
        return any(m.role == role for m in self.modes)

    @property
    def propagating(self):
        return [i for i, m in enumerate(self.modes) if not m.evanescent]

    @property
    def evanescent(self):
        return [i for i, m in enumerate(self.modes) if m.evanescent]

    @property
    def spec(self):
        return self.modes[0].bloch.spec

    def validate(self):
        for rel in self.relations:
            if sum(c * self.modes[i].f for c, i in rel) != 0:
                raise MixingError(f"relation {rel} does not balance in frequency")
        used = {i for rel in self.relations for _, i in rel}
        keep = [i for i in range(len(self.modes)) if i in used or len(self.modes) == 1]
        if len(keep) != len(self.modes):
            dropped = [self.modes[i].role for i in range(len(self.modes)) if i not in keep]
            warnings.warn(f"dropping modes without a frequency relation: {dropped}", stacklevel=2)
            remap = {old: new for new, old in enumerate(keep)}
            self.modes = [self.modes[i] for i in keep]
            self.relations = [tuple((c, remap[i]) for c, i in rel) for rel in self.relations]
        return self


@lru_cache(maxsize=256)
def _bands(spec, f_max):
    return tuple(find_bands(spec, f_max, resolution=5e6))


def make_modes(freqs_roles, spec, f_top=None):
    """Bloch modes for (frequency Hz, role) pairs on one supercell."""
    fs = [int(round(f)) for f, _ in freqs_roles]
    if min(fs) <= 0:
        raise MixingError("mode frequencies must be positive")
    top = f_top or 1.25 * max(fs)
    bands = list(_bands(spec, float(top)))
    return [Mode(f, role, bloch_mode(2 * np.pi * f, spec, bands)) for f, (_, role) in zip(fs, freqs_roles)]


TIERS = ("minimal", "extended", "cascaded")


def _check_edges(modes, spec):
    """Reject propagating modes sitting on the edge of a stop band.

    There the group velocity and the mode power ``W`` vanish and the coupling rates,
    which scale as ``1/W``, diverge.
    """
    top = 1.25 * max(m.f for m in modes)
    bands = _bands(spec, float(top))
    edges = [e for j, b in enumerate(bands) if b.kind == "stop"
             for e in ((b.f_lo, b.f_hi) if j + 1 < len(bands) else (b.f_lo,))]
    bad = [m for m in modes if not m.evanescent and any(abs(m.f - e) < EDGE_REL * e for e in edges)]
    if bad:
        desc = ", ".join(f"{m.role} at {m.f / 1e9:.6g} GHz" for m in bad)
        raise MixingError(f"mode on a band edge, coupled-mode rates diverge: {desc}")


def build_modeset(pump: PumpSpec, f_s, tier, flux, device: Device, n_cells=None):
    """Carriers for 3WM amplification.

    ``minimal`` = pump, signal, idler; ``extended`` adds p+s, p+i and 2p; ``cascaded``
    further adds 2p+s and 2p+i, reached through the (usually evanescent) 2p field.  Modes
    in a stop band are flagged evanescent.  At exactly f_s = f_p/2 the idler is the signal.
    """
    fp = int(round(pump.f_p))
    fs = int(round(f_s))
    if not 0 < fs < fp:
        raise MixingError(f"signal frequency must lie in (0, f_p), got {f_s}")
    if tier not in TIERS:
        raise MixingError(f"tier must be one of {TIERS}, got {tier!r}")
    fi = fp - fs
    degenerate = fi == fs
    spec = device.supercell(flux)
    roles = [(fp, "pump"), (fs, "signal")]
    if not degenerate:
        roles.append((fi, "idler"))
    if tier != "minimal":
        roles.append((fp + fs, "up_signal"))
        if not degenerate:
            roles.append((fp + fi, "up_idler"))
        roles.append((2 * fp, "pump_2h"))
    if tier == "cascaded":
        roles.append((2 * fp + fs, "up2_signal"))
        if not degenerate:
            roles.append((2 * fp + fi, "up2_idler"))
    modes = make_modes(roles, spec)
    _check_edges(modes, spec)
    idx = {m.role: i for i, m in enumerate(modes)}
    i_idl = idx["signal"] if degenerate else idx["idler"]
    rel = [((1, idx["pump"]), (-1, idx["signal"]), (-1, i_idl))]
    if tier != "minimal":
        rel.append(((1, idx["up_signal"]), (-1, idx["pump"]), (-1, idx["signal"])))
        if not degenerate:
            rel.append(((1, idx["up_idler"]), (-1, idx["pump"]), (-1, idx["idler"])))
        rel.append(((1, idx["pump_2h"]), (-2, idx["pump"])))
    if "up2_signal" in idx:
        rel.append(((1, idx["up2_signal"]), (-1, idx["pump_2h"]), (-1, idx["signal"])))
    if "up2_idler" in idx:
        rel.append(((1, idx["up2_idler"]), (-1, idx["pump_2h"]), (-1, idx["idler"])))
    if modes[idx["pump"]].evanescent:
        raise MixingError(f"pump at {fp} Hz lies in a stop band")
    ms = ModeSet(modes, rel, device.coeffs(flux), device, flux).validate()
    z0 = device.z_term
    ap = launch_amplitude(ms.modes[ms.index("pump")], pump.power_w, z0)
    ms.modes[ms.index("pump")].amplitude = ap
    ms.modes[ms.index("signal")].amplitude = SEED_RATIO * abs(ap)
    return ms


def build_harmonic_modeset(f, flux, device: Device):
    """Fundamental tone and its second harmonic."""
    modes = make_modes([(f, "fundamental"), (2 * f, "harmonic")], device.supercell(flux))
    return ModeSet(modes, [((1, 1), (-2, 0))], device.coeffs(flux), device, flux).validate()


def launch_amplitude(mode: Mode, power_w, z0=50.0, phase=0.0):
    """Forward amplitude launched by a source of available power ``power_w``.

    The source is ``V_s = sqrt(8 z0 P)`` behind ``z0``; reflections returning from the
    far end are ignored.
    """
    if mode.evanescent:
        return 0j
    vs = math.sqrt(8.0 * z0 * power_w) * np.exp(1j * phase)
    b = mode.bloch
    return complex(vs / (b.u_v[0] + z0 * b.u_i[0]))


def output_voltage(mode: Mode, a, n_cells, z0=50.0):
    """Load voltage phasor of a forward mode with amplitude ``a`` reaching node ``n_cells``."""
    v, i = mode.bloch.state(n_cells)
    vb, ib = np.conj(v), -np.conj(i)
    b = -a * (v - z0 * i) / (vb - z0 * ib)
    return a * v + b * vb


# ---------------------------------------------------------------------------
# symbolic expansion of the nonlinear drive into monomials of mode amplitudes


@dataclass
class _Mono:
    prof: np.ndarray  # (P,) complex
    K: float
    factors: tuple  # indices into z = [a, conj(a)]


@dataclass
class _Comp:
    omega: int  # signed frequency, Hz
    monos: list
    slaved: bool = False


def _conj_factor(f, M):
    return f + M if f < M else f - M


def _product(comps):
    out = []
    for combo in itertools.product(*[c.monos for c in comps]):
        prof = combo[0].prof.copy()
        for m in combo[1:]:
            prof = prof * m.prof
        out.append(_Mono(prof, sum(m.K for m in combo), tuple(sorted(sum((m.factors for m in combo), ())))))
    return out


def _drive(target_f, comps, chi3, chi4, allow, dc):
    """Phasor N at ``target_f`` from ordered pairs (chi3) and triples (chi4).

    ``allow(tuple_of_comps)`` filters which combinations enter.
    """
    scale = 1.0 if dc else 2.0
    monos = []
    if chi3 != 0.0:
        for c1, c2 in itertools.product(comps, repeat=2):
            if c1.omega + c2.omega == target_f and allow((c1, c2)):
                for m in _product((c1, c2)):
                    m.prof = m.prof * (-0.5 * chi3 * scale)
                    monos.append(m)
    if chi4 != 0.0:
        for c1, c2, c3 in itertools.product(comps, repeat=3):
            if c1.omega + c2.omega + c3.omega == target_f and allow((c1, c2, c3)):
                for m in _product((c1, c2, c3)):
                    m.prof = m.prof * (-chi4 / 3.0 * scale)
                    monos.append(m)
    return _merge(monos)


def _merge(monos):
    acc = {}
    for m in monos:
        key = (m.factors, round(m.K, 10))
        if key in acc:
            acc[key].prof = acc[key].prof + m.prof
        else:
            acc[key] = _Mono(m.prof.copy(), m.K, m.factors)
    return list(acc.values())


def _floquet_response(omega, spec, src_prof, K):
    """Particular solution x_c = X(c mod P) exp(-i K c) driven by series sources.

    Returns the branch phase-drop profile psi(r) (without the exp(-iKc) factor) and the
    states X(r) = (V_r, I_{r+1}), shape (P, 2).
    """
    P = spec.a
    cells = spec.cells
    mats = [cell_matrix(omega, c) for c in cells]
    s = [np.array([-1j * omega * PHI0_RED * src_prof[r], 0.0]) for r in range(P)]
    rhs = np.zeros(2, dtype=complex)
    acc = np.eye(2, dtype=complex)
    for r in range(P):
        rhs = rhs + np.exp(-1j * r * K) * (acc @ s[r])
        acc = acc @ mats[r]
    X = [np.linalg.solve(np.eye(2) - np.exp(-1j * P * K) * acc, rhs)]
    for r in range(P - 1):
        X.append(np.exp(1j * K) * np.linalg.solve(mats[r], X[r] - s[r]))
    X = np.array(X)
    L = np.array([c.L for c in cells])
    psi = L * X[:, 1] / PHI0_RED - np.asarray(src_prof)
    return psi, X


def _feedback(ms, target, base, sources, chi3, M):
    """chi3 terms in which one factor is a slaved (evanescent) field.

    A slaved field driven with wavevector K_j and fed back into ``target`` together with
    a partner component pairs with the complementary drive (target x conj(partner)),
    whose wavevector K_c generally differs.  The response is taken as
    (R(K_j) + R(K_c))/2, which keeps the eliminated quartic couplings Hermitian so the
    cascaded processes conserve energy.
    """
    tm = ms.modes[target]
    spec = ms.spec
    out = []
    for mi, srcs in sources.items():
        mode = ms.modes[mi]
        for sign in (1, -1):
            partner = [q for q in base if q.omega == tm.f - sign * mode.f]
            if not partner or not srcs:
                continue
            q = partner[0]
            k_c = sign * (tm.k - q.monos[0].K)
            monos = []
            for m in srcs:
                psi = 0.5 * (_floquet_response(mode.omega, spec, m.prof, m.K)[0]
                             + _floquet_response(mode.omega, spec, m.prof, k_c)[0])
                if sign > 0:
                    monos.append(_Mono(psi / 2, m.K, m.factors))
                else:
                    monos.append(_Mono(np.conj(psi) / 2, -m.K, tuple(sorted(_conj_factor(f, M) for f in m.factors))))
            comp = _Comp(sign * mode.f, monos, slaved=True)
            out += _drive(tm.f, [comp, q], chi3, 0.0, lambda g: sum(c.slaved for c in g) == 1, dc=False)
    return out


@dataclass
class CouplingTerms:
    """Vectorized right-hand side ``da/dx = sum_t G_t[r] prod(z[F_t]) exp(-i delta_t x)``."""

    target: np.ndarray
    G: np.ndarray  # (T, P)
    F: np.ndarray  # (T, 3) indices into [a, conj(a), 1]
    delta: np.ndarray
    n_prop: int
    slaved: dict  # mode index -> list of _Mono describing its branch phase drop
    dc: list  # monomials of the DC branch phase drop
    nodes: dict = field(default_factory=dict)  # mode index -> [(X profile (P, 2), K, factors)]
    labels: list = field(default_factory=list)

    def rhs(self, x, r, a):
        M = self.n_prop
        z = np.concatenate([a, np.conj(a), [1.0 + 0j]])
        prod = z[self.F[:, 0]] * z[self.F[:, 1]] * z[self.F[:, 2]]
        v = self.G[:, r] * prod * np.exp(-1j * self.delta * x)
        return np.bincount(self.target, v.real, M) + 1j * np.bincount(self.target, v.imag, M)


def build_terms(ms: ModeSet, coeffs: TaylorCoeffs = None, *, rectification=True, chi4=True,
                zero_roles=(), slaved_feedback=True):
    """Expand the nonlinear drive of every propagating mode into RHS terms.

    ``zero_roles`` removes every term that involves the listed modes, which reproduces
    a smaller tier exactly.
    """
    co = coeffs or ms.coeffs
    c3 = co.chi3
    c4 = co.chi4 if chi4 else 0.0
    prop = ms.propagating
    M = len(prop)
    pos = {mi: j for j, mi in enumerate(prop)}
    zero = {i for i, m in enumerate(ms.modes) if m.role in zero_roles}
    spec = ms.spec

    comps = []
    for mi in prop:
        if mi in zero:
            continue
        b = ms.modes[mi].bloch
        p = b.branch_profile
        j = pos[mi]
        comps.append(_Comp(ms.modes[mi].f, [_Mono(p / 2, b.k, (j,))]))
        comps.append(_Comp(-ms.modes[mi].f, [_Mono(np.conj(p) / 2, -b.k, (j + M,))]))
    base = list(comps)

    def only_prop(group):
        return all(not c.slaved for c in group)

    extra = []
    dc = []
    if rectification and c3 != 0.0 and slaved_feedback:
        n_dc = _drive(0, base, c3, 0.0, only_prop, dc=True)
        dc = [_Mono(-m.prof, m.K, m.factors) for m in n_dc]  # zero DC current: psi = -N
        if dc:
            extra.append(_Comp(0, dc, slaved=True))
    slaved = {}
    nodes = {}
    sources = {}
    for mi in ms.evanescent:
        if mi in zero:
            continue
        mode = ms.modes[mi]
        sources[mi] = _drive(mode.f, base, c3, c4, only_prop, dc=False)
        slaved[mi] = []
        nodes[mi] = []
        for m in sources[mi]:
            psi, X = _floquet_response(mode.omega, spec, m.prof, m.K)
            slaved[mi].append(_Mono(psi, m.K, m.factors))
            nodes[mi].append((X, m.K, m.factors))
    every = base + extra

    def at_most_one_slaved(group):
        return sum(c.slaved for c in group) <= 1 and (len(group) == 2 or only_prop(group))

    target, G, F, delta, labels = [], [], [], [], []
    for mi in prop:
        if mi in zero:
            continue
        b = ms.modes[mi].bloch
        pre = 1j * b.omega * PHI0_RED * np.conj(b.u_i) / b.w
        monos = _drive(ms.modes[mi].f, every, c3, c4, at_most_one_slaved, dc=False)
        if slaved_feedback:
            monos += _feedback(ms, mi, base, sources, c3, M)
        for m in _merge(monos):
            if len(m.factors) > 3:
                continue
            target.append(pos[mi])
            G.append(pre * m.prof)
            F.append(tuple(m.factors) + (2 * M,) * (3 - len(m.factors)))
            delta.append(m.K - b.k)
            labels.append((ms.modes[mi].role, m.factors))
    P = spec.a
    return CouplingTerms(
        np.asarray(target, dtype=int),
        np.asarray(G, dtype=complex).reshape(-1, P),
        np.asarray(F, dtype=int).reshape(-1, 3),
        np.asarray(delta, dtype=float),
        M,
        slaved,
        dc,
        nodes,
        labels,
    )


@dataclass(frozen=True)
class RelationCoupling:
    target: str
    sources: tuple  # roles (with '*' for conjugates)
    kappa: complex  # supercell-averaged coefficient of da_target/dx
    delta_k: float  # phase mismatch of the term, rad per cell


def coupling_matrix(ms: ModeSet, coeffs: TaylorCoeffs = None, **kw):
    """Supercell-averaged coupling constants of every resonant three-wave term.

    Only terms linear in chi3 with two propagating source factors are reported; the
    full set (phase modulation, cascaded terms) lives in :func:`build_terms`.
    """
    co = coeffs or ms.coeffs
    prop = ms.propagating
    M = len(prop)
    names = [ms.modes[i].role for i in prop]
    t = build_terms(ms, co, rectification=False, chi4=False, slaved_feedback=False, **kw)
    out = []
    for j in range(len(t.target)):
        fac = [f for f in t.F[j] if f < 2 * M]
        if len(fac) != 2:
            continue
        src = tuple(names[f] if f < M else names[f - M] + "*" for f in fac)
        out.append(RelationCoupling(names[t.target[j]], src, complex(t.G[j].mean()), float(t.delta[j])))
    return out


# ---------------------------------------------------------------------------
# integration


@dataclass
class ModeAmplitudes:
    ms: ModeSet
    terms: CouplingTerms
    x: np.ndarray  # cell index 0..N
    amps: np.ndarray  # (N+1, n_prop)

    def amplitude(self, role):
        """Node phase amplitude vs cell index; slaved modes are evaluated locally."""
        i = self.ms.index(role)
        if i in self.ms.propagating:
            return self.amps[:, self.ms.propagating.index(i)]
        mode = self.ms.modes[i]
        return self.slaved_voltage(i) / (1j * mode.omega * PHI0_RED)

    def slaved_state(self, i):
        """(V_c, I_{c+1}) phasors of a slaved mode at every node index in ``x``, shape (N+1, 2)."""
        P = self.ms.spec.a
        z = np.concatenate([self.amps, np.conj(self.amps)], axis=1)
        c = self.x
        r = c.astype(int) % P
        out = np.zeros((len(c), 2), dtype=complex)
        for X, K, factors in self.terms.nodes.get(i, []):
            prod = np.ones(len(c), dtype=complex)
            for f in factors:
                prod = prod * z[:, f]
            out += X[r] * (prod * np.exp(-1j * K * c))[:, None]
        return out

    def slaved_voltage(self, i):
        return self.slaved_state(i)[:, 0]

    def slaved_power(self, role):
        """Power flux 0.5 Re(V conj(I)) of a slaved (forced) field vs x."""
        st = self.slaved_state(self.ms.index(role))
        return 0.5 * (st[:, 0] * np.conj(st[:, 1])).real

    def output_power(self, role, z0=None):
        """Power (W) delivered to the load at the mode frequency.

        Slaved modes report the locally driven field at the last node, which ignores
        the load reflection of a non-propagating field.
        """
        z0 = z0 or self.ms.device.z_term
        i = self.ms.index(role)
        n = int(self.x[-1])
        mode = self.ms.modes[i]
        if i in self.ms.propagating:
            v = output_voltage(mode, self.amplitude(role)[-1], n, z0)
        else:
            v = self.slaved_voltage(i)[-1]
        return abs(v) ** 2 / (2 * z0)

    def photon_flux(self, role):
        """Photons per second carried by a propagating mode, vs x."""
        i = self.ms.index(role)
        b = self.ms.modes[i].bloch
        return np.abs(self.amplitude(role)) ** 2 * b.power / (HBAR * b.omega)


def integrate_cme(ms: ModeSet, length_cells, *, steps_per_cell=4, undepleted=False, terms=None,
                  verify=False, **term_kw):
    """Fixed-step RK4 of the coupled-mode equations over ``length_cells`` cells.

    Initial amplitudes come from ``mode.amplitude``.  Output is sampled at every cell.
    With ``verify=True`` the run is repeated at half the step and an
    :class:`IntegrationError` is raised if the end amplitudes disagree by more than
    1e-6 relative.
    """
    n = int(length_cells)
    if n < 1:
        raise MixingError("length_cells must be >= 1")
    terms = terms or build_terms(ms, **term_kw)
    prop = ms.propagating
    a0 = np.array([ms.modes[i].amplitude for i in prop], dtype=complex)
    amps = _rk4(terms, a0, n, steps_per_cell, ms, undepleted)
    if verify:
        fine = _rk4(terms, a0, n, 2 * steps_per_cell, ms, undepleted)
        scale = np.maximum(np.abs(fine[-1]), 1e-300)
        err = np.max(np.abs(fine[-1] - amps[-1]) / scale)
        if err > 1e-6:
            raise IntegrationError(f"step halving changed end amplitudes by {err:.2e}", n, fine[-1])
    return ModeAmplitudes(ms, terms, np.arange(n + 1, dtype=float), amps)


def _rk4(terms, a0, n, nsub, ms, undepleted):
    prop = ms.propagating
    pump = None
    if undepleted and ms.has("pump"):
        pump = prop.index(ms.index("pump"))
    P = ms.spec.a
    h = 1.0 / nsub
    out = np.empty((n + 1, len(a0)), dtype=complex)
    out[0] = a0
    a = a0.copy()

    def f(x, r, y):
        d = terms.rhs(x, r, y)
        if pump is not None:
            d[pump] = 0.0
        return d

    for c in range(n):
        r = c % P
        for s in range(nsub):
            x = c + s * h
            k1 = f(x, r, a)
            k2 = f(x + h / 2, r, a + h / 2 * k1)
            k3 = f(x + h / 2, r, a + h / 2 * k2)
            k4 = f(x + h, r, a + h * k3)
            a = a + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(a)):
            raise IntegrationError(f"non-finite amplitudes at cell {c + 1}", c + 1, out[c].copy())
        out[c + 1] = a
    return out


# ---------------------------------------------------------------------------
# sweeps and closed forms


@dataclass
class GainTrace:
    f: np.ndarray  # Hz
    gain_db: np.ndarray  # NaN where a point failed
    errors: list

    @property
    def peak(self):
        """(frequency, gain) of the maximum over successful points."""
        i = int(np.nanargmax(self.gain_db))
        return float(self.f[i]), float(self.gain_db[i])


def signal_gain(pump: PumpSpec, f_s, tier, flux, device: Device, n_cells=None, **opts):
    """Single-point signal gain in dB, 20 log10 |a_s(end)/a_s(0)|."""
    n = n_cells or device.n_cells
    ms = build_modeset(pump, f_s, tier, flux, device)
    r = integrate_cme(ms, n, **opts)
    a = r.amplitude("signal")
    return float(20 * np.log10(abs(a[-1]) / abs(a[0])))


def gain_sweep(f_grid, pump: PumpSpec, tier, device: Device, flux, n_cells=None, **opts) -> GainTrace:
    """Signal gain over a frequency grid; failing points become NaN with a message."""
    f = np.asarray(f_grid, dtype=float)
    g = np.full(f.size, np.nan)
    errors = [""] * f.size
    for j, fs in enumerate(f):
        try:
            g[j] = signal_gain(pump, fs, tier, flux, device, n_cells, **opts)
        except (MixingError, IntegrationError, np.linalg.LinAlgError) as exc:
            errors[j] = str(exc)
    return GainTrace(f, g, errors)


def shg_analytic(x, delta, eps3, a=1.0):
    """Large-mismatch SHG envelope |A2(x)/A1(0)| = 1/2 tanh(4 eps3/(delta a) sin(delta x / 2)).

    Valid for eps3 < delta a; outside that range a warning is issued and the formula is
    still evaluated.
    """
    x = np.asarray(x, dtype=float)
    if delta == 0:
        return 0.5 * np.abs(np.tanh(2 * eps3 * x / a))
    if not eps3 < abs(delta) * a:
        warnings.warn(f"eps3={eps3:.3g} is not small against delta*a={abs(delta) * a:.3g}", stacklevel=2)
    return 0.5 * np.abs(np.tanh(4 * eps3 / (delta * a) * np.sin(delta * x / 2)))


def power_normalized(ma: ModeAmplitudes, role):
    """Amplitude scaled as sqrt(power)/omega, the normalization in which complete
    second-harmonic conversion gives |A2/A1(0)| = 1/2."""
    b = ma.ms.modes[ma.ms.index(role)].bloch
    return ma.amplitude(role) * math.sqrt(b.power) / b.omega


def shg_parameters(ms: ModeSet, a1=None):
    """(delta, eps3) per cell for a propagating fundamental/harmonic pair.

    ``delta = k(2w) - 2k(w)`` and eps3 is the supercell-averaged up-conversion rate in
    the power normalization of :func:`power_normalized`, so that for small eps3/delta
    the CME follows :func:`shg_analytic`.
    """
    i1, i2 = ms.index("fundamental"), ms.index("harmonic")
    m1, m2 = ms.modes[i1], ms.modes[i2]
    if m1.evanescent or m2.evanescent:
        raise MixingError("both tones must propagate for the SHG closed form")
    a1 = ms.modes[i1].amplitude if a1 is None else a1
    kap = [c for c in coupling_matrix(ms) if c.target == "harmonic" and c.sources == ("fundamental", "fundamental")]
    if not kap:
        return m2.k - 2 * m1.k, 0.0
    s1 = math.sqrt(m1.bloch.power) / m1.omega
    s2 = math.sqrt(m2.bloch.power) / m2.omega
    eps3 = abs(kap[0].kappa) * s2 * abs(a1) / s1
    return m2.k - 2 * m1.k, eps3


@dataclass
class HarmonicTable:
    f: np.ndarray  # input frequency, Hz
    p_in_dbm: float
    out_f_dbm: np.ndarray
    out_2f_dbm: np.ndarray
    harmonic_evanescent: np.ndarray  # bool per row
    errors: list


def harmonic_response(f_grid, power_dbm, device: Device, flux, n_cells=None, **opts) -> HarmonicTable:
    """Output power at f and 2f for a single input tone, no pump.

    The fundamental amplitude follows the CME when it propagates; when f itself lies in
    a stop band the linear chain transmission is used and no harmonic is reported.
    """
    f = np.asarray(f_grid, dtype=float)
    n = n_cells or device.n_cells
    out1 = np.full(f.size, np.nan)
    out2 = np.full(f.size, np.nan)
    ev = np.zeros(f.size, dtype=bool)
    errors = [""] * f.size
    p_w = float(dbm_to_watt(power_dbm))
    chain = device.chain(flux, n // device.period)
    for j, fj in enumerate(f):
        try:
            ms = build_harmonic_modeset(fj, flux, device)
            m1, m2 = ms.modes
            ev[j] = m2.evanescent
            if m1.evanescent:
                _, s21 = chain_sparams(2 * np.pi * fj, chain)
                out1[j] = float(watt_to_dbm(p_w * abs(s21) ** 2))
                errors[j] = "fundamental in a stop band: linear transmission only"
                continue
            m1.amplitude = launch_amplitude(m1, p_w, device.z_term)
            r = integrate_cme(ms, n, **opts)
            out1[j] = float(watt_to_dbm(r.output_power("fundamental")))
            out2[j] = float(watt_to_dbm(max(r.output_power("harmonic"), 1e-300)))
        except (MixingError, IntegrationError, np.linalg.LinAlgError) as exc:
            errors[j] = str(exc)
    return HarmonicTable(f, float(power_dbm), out1, out2, ev, errors)
