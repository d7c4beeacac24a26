"""Time-domain reference simulation of the driven, terminated SNAIL ladder.

Node phases ``theta_c = Phi_c / phi0`` obey::

    node 0:        phi0 dtheta_0/dt = V_s(t) - R J_1
    node c:        C_c phi0 d2theta_c/dt2 = J_c - J_{c+1}
    node N:        C_N phi0 d2theta_N/dt2 = J_N - phi0 dtheta_N/dt / R

with branch current ``J_c = (phi0/L_c) f(theta_{c-1} - theta_c)``.  ``f`` is either the
quartic expansion ``psi - chi3/2 psi^2 - chi4/3 psi^3`` used by the coupled-mode
model or the full SNAIL current-phase relation.  Integration is classical RK4 at a
fixed step chosen so that the analysis window holds an integer number of steps.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from .constants import PHI0_RED, dbm_to_watt
from .dispersion import Device, chain_sparams
from .snail import SnailParams, reduced_flux

BLOWUP = 1e3  # rad


class LadderError(RuntimeError):
    pass


class InstabilityError(LadderError):
    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


@dataclass(frozen=True)
class Tone:
    f: float  # Hz
    power_dbm: float
    phase: float = 0.0
    z0: float = 50.0

    @property
    def v_source(self):
        """Peak open-circuit source voltage delivering the available power into a match."""
        return math.sqrt(8.0 * self.z0 * float(dbm_to_watt(self.power_dbm)))


@dataclass
class LadderCircuit:
    L: np.ndarray  # (N,) small-signal inductance of branches 1..N
    C: np.ndarray  # (N,) shunt capacitance of nodes 1..N
    chi3: float
    chi4: float
    R: float = 50.0
    nonlinearity: str = "quartic"  # or "full"
    snail: SnailParams = None  # needed for "full"
    phi_min: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        if self.L.shape != self.C.shape or self.L.ndim != 1 or self.L.size < 1:
            raise LadderError("L and C must be 1-D arrays of equal length")
        if self.nonlinearity not in ("quartic", "full"):
            raise LadderError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.nonlinearity == "full" and self.snail is None:
            raise LadderError("full nonlinearity needs the SNAIL parameters")

    @property
    def n_cells(self):
        return self.L.size

    @classmethod
    def from_device(cls, device: Device, flux, n_cells=None, nonlinearity="quartic", linear=False):
        n = n_cells or device.n_cells
        sc = device.supercell(flux)
        cells = [sc.cells[c % sc.a] for c in range(n)]
        co = device.coeffs(flux)
        return cls(
            np.array([c.L for c in cells]),
            np.array([c.C for c in cells]),
            0.0 if linear else co.chi3,
            0.0 if linear else co.chi4,
            device.z_term,
            nonlinearity,
            device.snail(flux),
            co.phi_min,
            co.c2,
        )

    def current_factor(self, psi):
        """Dimensionless J L / phi0 as a function of branch phase drop."""
        if self.nonlinearity == "quartic":
            return psi - 0.5 * self.chi3 * psi**2 - self.chi4 / 3.0 * psi**3
        p = self.snail
        phi = self.phi_min + psi
        u = (float(reduced_flux(p.phi_ext)) - phi) / p.n_large
        return (p.alpha * np.sin(phi) - np.sin(u)) / (2.0 * self.c2)

    def branch_energy(self, psi):
        """Inductive energy of each branch (J), zero at psi = 0."""
        e_scale = PHI0_RED**2 / self.L
        if self.nonlinearity == "quartic":
            return e_scale * (psi**2 / 2 - self.chi3 / 6 * psi**3 - self.chi4 / 12 * psi**4)
        p = self.snail
        n = p.n_large
        phx = float(reduced_flux(p.phi_ext))

        def u(phi):
            return -p.alpha * np.cos(phi) - n * np.cos((phx - phi) / n)

        return e_scale * (u(self.phi_min + psi) - u(self.phi_min)) / (2.0 * self.c2)


@dataclass
class TimeTrace:
    t: np.ndarray
    v_out: np.ndarray  # load voltage
    v_in: np.ndarray  # voltage at node 0
    dt: float
    energy_residual: float = math.nan
    meta: dict = field(default_factory=dict)


def _ramp(t, t_ramp):
    if t_ramp <= 0:
        return np.ones_like(t)
    x = np.clip(t / t_ramp, 0.0, 1.0)
    return np.sin(0.5 * np.pi * x) ** 2


def simulate(circuit: LadderCircuit, tones, t_end, dt, *, t_ramp=1e-9, record_from=0.0,
             track_energy=False):
    """Integrate the ladder driven by a sum of ramped tones.

    Records the node-0 and load voltages for ``t >= record_from`` at every step.
    Raises :class:`InstabilityError` if any node phase exceeds 1e3 rad.
    """
    N = circuit.n_cells
    L, C, R = circuit.L, circuit.C, circuit.R
    n_steps = int(round(t_end / dt))
    if n_steps < 1:
        raise LadderError("t_end must exceed dt")
    omegas = np.array([2 * np.pi * tn.f for tn in tones])
    amps = np.array([tn.v_source * np.exp(1j * tn.phase) for tn in tones])
    fac = circuit.current_factor
    inv_c = 1.0 / (C * PHI0_RED)

    def vs(t):
        if not len(tones):
            return 0.0
        return float(_ramp(np.array(t), t_ramp) * np.real(np.sum(amps * np.exp(1j * omegas * t))))

    # y = [theta_0..theta_N, w_1..w_N] with w = dtheta/dt
    def rhs(t, y):
        th = y[: N + 1]
        w = y[N + 1:]
        J = PHI0_RED / L * fac(th[:-1] - th[1:])
        d = np.empty_like(y)
        d[0] = (vs(t) - R * J[0]) / PHI0_RED
        d[1: N + 1] = w
        jout = np.empty(N)
        jout[:-1] = J[1:]
        jout[-1] = PHI0_RED * w[-1] / R
        d[N + 1:] = (J - jout) * inv_c
        return d

    y = np.zeros(2 * N + 1)
    i0 = int(math.ceil(record_from / dt - 1e-9))
    n_rec = n_steps + 1 - i0
    t_rec = np.empty(n_rec)
    v_out = np.empty(n_rec)
    v_in = np.empty(n_rec)
    e_in = e_out = 0.0
    prev_p = None

    def powers(t, y, dy):
        v0 = PHI0_RED * dy[0]
        vn = PHI0_RED * y[-1]
        vsrc = vs(t)
        return (vsrc - v0) * v0 / R, vn * vn / R  # into the ladder, into the load

    def stored(y):
        th = y[: N + 1]
        w = y[N + 1:]
        return float(np.sum(0.5 * C * (PHI0_RED * w) ** 2) + np.sum(circuit.branch_energy(th[:-1] - th[1:])))

    e0 = stored(y)
    for s in range(n_steps + 1):
        t = s * dt
        k1 = rhs(t, y)
        if s >= i0:
            j = s - i0
            t_rec[j] = t
            v_out[j] = PHI0_RED * y[-1]
            v_in[j] = PHI0_RED * k1[0]
        if track_energy:
            p = powers(t, y, k1)
            if prev_p is not None:
                e_in += 0.5 * dt * (prev_p[0] + p[0])
                e_out += 0.5 * dt * (prev_p[1] + p[1])
            prev_p = p
        if s == n_steps:
            break
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.abs(y[: N + 1]) < BLOWUP):
            raise InstabilityError(f"node phase exceeded {BLOWUP} rad at t={t + dt:.4g} s", t + dt, y.copy())
    res = math.nan
    if track_energy:
        de = stored(y) - e0
        res = abs(de - (e_in - e_out)) / max(e_in, 1e-300)
    return TimeTrace(t_rec, v_out, v_in, dt, res)


def steady_state_spectrum(trace: TimeTrace, freqs, window=None, rel_tol=1e-6):
    """Complex peak amplitudes of ``v_out`` at ``freqs`` over the last ``window`` seconds.

    Every frequency must complete an integer number of periods in the window;
    otherwise the tones are incommensurate with it and a :class:`LadderError` is raised.
    """
    t, v = trace.t, trace.v_out
    n = len(t) - 1 if window is None else int(round(window / trace.dt))
    if n < 2 or n > len(t) - 1:
        raise LadderError("analysis window does not fit in the recorded trace")
    tw = n * trace.dt
    tt = t[-n:] - t[-n]
    vv = v[-n:]
    out = []
    for f in np.atleast_1d(freqs):
        cycles = f * tw
        if abs(cycles - round(cycles)) > rel_tol * max(cycles, 1.0):
            raise LadderError(f"tone {f:.6g} Hz is not commensurate with the {tw:.6g} s window")
        scale = 1.0 if f == 0 else 2.0
        out.append(scale * np.mean(vv * np.exp(-2j * np.pi * f * tt)))
    return np.array(out)


def common_period(freqs, quantum=1e3):
    """Shortest window holding an integer number of periods of every tone (Hz grid ``quantum``)."""
    ints = [int(round(f / quantum)) for f in freqs if f > 0]
    if any(abs(i * quantum - f) > 1e-6 * f for i, f in zip(ints, [f for f in freqs if f > 0])):
        raise LadderError("tones are not on the frequency grid")
    g = 0
    for i in ints:
        g = math.gcd(g, i)
    return 1.0 / (g * quantum)


@dataclass
class OracleResult:
    gain_db: float
    p_on: np.ndarray  # W at each probe frequency, pump on
    p_off: np.ndarray
    freqs: np.ndarray
    energy_residual: float = math.nan


def run_tones(circuit, tones, probes, *, settle=None, n_windows=1, steps_per_period=64, t_ramp=None):
    """Drive ``circuit`` with ``tones`` and return output power (W) at ``probes``."""
    all_f = [t.f for t in tones] + list(probes)
    tw = common_period(all_f) * n_windows
    f_max = max(all_f)
    target_dt = 1.0 / (steps_per_period * f_max)
    n_win = int(math.ceil(tw / target_dt))
    dt = tw / n_win
    delay = circuit.n_cells * math.sqrt(np.mean(circuit.L) * np.mean(circuit.C))
    if t_ramp is None:
        t_ramp = max(1e-9, 4 * delay)
    if settle is None:
        settle = t_ramp + 6 * delay + 1e-9
    n_settle = int(math.ceil(settle / dt))
    t_end = (n_settle + n_win) * dt
    tr = simulate(circuit, tones, t_end, dt, t_ramp=t_ramp, record_from=n_settle * dt)
    amp = steady_state_spectrum(tr, probes, window=n_win * dt)
    return np.abs(amp) ** 2 / (2 * circuit.R), tr


def oracle_gain(device: Device, flux, pump, f_s, n_cells, *, signal_ratio=1e-3, nonlinearity="quartic",
                reference="simulate", **kw) -> OracleResult:
    """Signal power gain (dB) of the pumped ladder relative to the unpumped one.

    ``pump`` is a :class:`~snailtwpa.mixing.PumpSpec`-like object with ``f_p`` and
    ``power_dbm``; the signal carries ``signal_ratio`` of the pump source amplitude.
    The pump-off reference is a signal-only run (``reference="simulate"``) or the
    linear chain transmission ``|S21|^2`` (``reference="linear"``), which the weak
    signal alone reproduces and which halves the cost.
    """
    if reference not in ("simulate", "linear"):
        raise LadderError(f"unknown reference {reference!r}")
    circuit = LadderCircuit.from_device(device, flux, n_cells, nonlinearity)
    sig_dbm = pump.power_dbm + 20 * math.log10(signal_ratio)
    tp = Tone(pump.f_p, pump.power_dbm, z0=circuit.R)
    ts = Tone(f_s, sig_dbm, z0=circuit.R)
    fi = pump.f_p - f_s
    probes = [f_s]
    if abs(fi) > 0 and fi != f_s:
        probes.append(fi)
    on, _ = run_tones(circuit, [tp, ts], probes, **kw)
    if reference == "simulate":
        off, _ = run_tones(circuit, [ts], probes[:1], **kw)
    else:
        if n_cells % device.period:
            raise LadderError("the linear reference needs whole supercells")
        _, s21 = chain_sparams(2 * np.pi * f_s, device.chain(flux, n_cells // device.period))
        off = np.array([float(dbm_to_watt(sig_dbm)) * abs(s21) ** 2])
    if off[0] <= 0:
        warnings.warn("no signal reached the output with the pump off", stacklevel=2)
    return OracleResult(float(10 * np.log10(on[0] / off[0])), on, off, np.array(probes))


def harmonic_output(device: Device, flux, f, power_dbm, n_cells, *, nonlinearity="quartic", **kw):
    """Output power (W) at f and 2f for a single ramped input tone."""
    circuit = LadderCircuit.from_device(device, flux, n_cells, nonlinearity)
    p, _ = run_tones(circuit, [Tone(f, power_dbm, z0=circuit.R)], [f, 2 * f], **kw)
    return p
