"""Lumped added-noise model of a parametric amplifier behind a lossy input element.

An ideal phase-insensitive amplifier of power gain ``G`` is preceded by a damping
element with transmission ``D`` and followed by a HEMT adding ``A_H`` photons.  All
photon numbers are referred to the amplifier input.  Noise temperatures use the
single-mode convention ``T = N h f / k_B``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import optimize

from .constants import H, KB

D_BOUNDS = (1e-3, 1.0)
AH_BOUNDS = (0.0, 1e4)
N_STARTS = 10


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    D: float
    A_H: float
    N_in: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.D <= 1.0:
            raise NoiseError(f"D must lie in (0, 1], got {self.D}")
        if self.A_H < 0:
            raise NoiseError(f"A_H must be non-negative, got {self.A_H}")
        if self.N_in < 0.5:
            raise NoiseError(f"N_in below the vacuum floor 0.5: {self.N_in}")


def _check_gain(G):
    g = np.asarray(G, dtype=float)
    if np.any(g < 1.0):
        raise NoiseError("linear gain must be >= 1")
    return g


def added_photons(G, D):
    """A = (1 - D)/(2D) + (G - 1)/(2 G D)."""
    g = _check_gain(G)
    if not 0.0 < D <= 1.0:
        raise NoiseError(f"D must lie in (0, 1], got {D}")
    return (1 - D) / (2 * D) + (g - 1) / (2 * g * D)


def added_photons_limit(D):
    """Large-gain limit (2 - D)/(2D)."""
    return (2 - D) / (2 * D)


def total_noise(model: NoiseModel, G):
    """N_tot = N_in + (G(2 - D) - 1)/(2 G D) + A_H/(G D)."""
    g = _check_gain(G)
    D = model.D
    return model.N_in + (g * (2 - D) - 1) / (2 * g * D) + model.A_H / (g * D)


def delta_snr(model: NoiseModel, G):
    """SNR improvement pumped vs unpumped.

    Equal to ``total_noise(model, 1) / total_noise(model, G)``; it grows with G only
    while the HEMT dominates, i.e. for ``A_H > 1/2``.
    """
    g = _check_gain(G)
    D = model.D
    num = model.N_in + added_photons(1.0, D) + model.A_H / D
    return num / (model.N_in + added_photons(g, D) + model.A_H / (g * D))


def noise_temperature(n_photons, f):
    """T = N h f / k_B (single-mode convention)."""
    if np.any(np.asarray(f) <= 0):
        raise NoiseError("frequency must be positive")
    return np.asarray(n_photons) * H * np.asarray(f) / KB


def photons_from_temperature(T, f):
    if np.any(np.asarray(f) <= 0):
        raise NoiseError("frequency must be positive")
    return np.asarray(T) * KB / (H * np.asarray(f))


@dataclass
class FitData:
    """Measurements in the natural units of the CSV interface."""

    gain_db: np.ndarray
    dsnr_db: np.ndarray = None  # one of dsnr_db / t_noise_k must be given
    t_noise_k: np.ndarray = None
    f_hz: np.ndarray = None

    def __post_init__(self):
        self.gain_db = np.asarray(self.gain_db, dtype=float)
        n = self.gain_db.size
        for name in ("dsnr_db", "t_noise_k", "f_hz"):
            v = getattr(self, name)
            if v is not None:
                v = np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
                setattr(self, name, v)
        if self.dsnr_db is None and self.t_noise_k is None:
            raise NoiseError("need delta-SNR or noise-temperature data")
        if self.t_noise_k is not None and self.f_hz is None:
            raise NoiseError("noise temperatures need the measurement frequency")

    @property
    def G(self):
        return 10 ** (self.gain_db / 10)


@dataclass
class FitResult:
    model: NoiseModel
    residual_norm: float
    residuals: np.ndarray
    at_bound: list
    sensitivity: dict = field(default_factory=dict)
    unidentified: list = field(default_factory=list)
    starts: list = field(default_factory=list)


def _residuals(x, data: FitData, n_in):
    """Residuals in dB (delta-SNR) and in log-ratio dB (temperature)."""
    D, ah = x
    G = data.G
    out = []
    tot1 = n_in + (1 - D) / (2 * D) + ah / D
    tot = n_in + (G * (2 - D) - 1) / (2 * G * D) + ah / (G * D)
    if data.dsnr_db is not None:
        out.append(10 * np.log10(tot1 / tot) - data.dsnr_db)
    if data.t_noise_k is not None:
        t = tot * H * data.f_hz / KB
        out.append(10 * np.log10(t / data.t_noise_k))
    return np.concatenate(out)


def _jacobian(x, data: FitData, n_in):
    """d residual / d (D, A_H), analytic."""
    D, ah = x
    G = data.G
    c = 10 / math.log(10)
    tot1 = n_in + (1 - D) / (2 * D) + ah / D
    tot = n_in + (G * (2 - D) - 1) / (2 * G * D) + ah / (G * D)
    # d/dD of (1-D)/(2D) = -1/(2 D^2); of (G(2-D)-1)/(2GD) = -(2G-1)/(2 G D^2)
    d1_dD = -1 / (2 * D**2) - ah / D**2
    d_dD = -(2 * G - 1) / (2 * G * D**2) - ah / (G * D**2)
    d1_da = 1 / D
    d_da = 1 / (G * D)
    rows = []
    if data.dsnr_db is not None:
        rows.append(np.stack([c * (d1_dD / tot1 - d_dD / tot), c * (d1_da / tot1 - d_da / tot)], axis=1))
    if data.t_noise_k is not None:
        rows.append(np.stack([c * d_dD / tot, c * d_da / tot], axis=1))
    return np.concatenate(rows)


def objective(x, data: FitData, n_in=0.5):
    r = _residuals(x, data, n_in)
    return float(r @ r)


def objective_gradient(x, data: FitData, n_in=0.5):
    r = _residuals(x, data, n_in)
    return 2.0 * _jacobian(x, data, n_in).T @ r


def fit(data: FitData, n_in=0.5, seed=0, n_starts=N_STARTS) -> FitResult:
    """Least-squares (D, A_H) with N_in fixed.

    Bounded Nelder-Mead from ``n_starts`` seeded random starts; the best run wins.
    Requires at least 4 points spanning at least 6 dB of gain.  With N_in = 1/2 the
    delta-SNR curve does not depend on D at all, so D is only determined when noise
    temperatures are supplied; such parameters are listed in ``unidentified``.
    """
    g = data.gain_db
    if g.size < 4:
        raise NoiseError(f"need at least 4 data points, got {g.size}")
    if np.ptp(g) < 6.0:
        raise NoiseError(f"gain span {np.ptp(g):.3g} dB is below 6 dB; the fit is degenerate")
    rng = np.random.default_rng(seed)
    bounds = [D_BOUNDS, AH_BOUNDS]
    starts = []
    best = None
    for _ in range(n_starts):
        x0 = np.array([rng.uniform(0.1, 1.0), 10 ** rng.uniform(-1, 3)])
        res = optimize.minimize(objective, x0, args=(data, n_in), method="Nelder-Mead", bounds=bounds,
                                options={"xatol": 1e-12, "fatol": 1e-18, "maxiter": 8000, "maxfev": 16000})
        starts.append((tuple(x0), tuple(res.x), float(res.fun)))
        if best is None or res.fun < best.fun:
            best = res
    x = best.x
    at_bound = []
    for name, v, (lo, hi) in zip(("D", "A_H"), x, bounds):
        if abs(v - lo) <= 1e-6 * max(1.0, abs(lo)) or abs(v - hi) <= 1e-6 * max(1.0, abs(hi)):
            at_bound.append(name)
    r = _residuals(x, data, n_in)
    sens = sensitivity(x, data, n_in)
    scale = max(sens["dlog_residual"])
    unidentified = [n for n, v in zip(("D", "A_H"), sens["dlog_residual"]) if v <= 1e-9 * scale]
    return FitResult(NoiseModel(float(x[0]), float(x[1]), n_in), float(np.linalg.norm(r)), r, at_bound,
                     sensitivity=sens, unidentified=unidentified, starts=starts)


def sensitivity(x, data: FitData, n_in=0.5):
    """Local parameter sensitivity from the Gauss-Newton curvature.

    ``dlog_residual`` is the change of the residual norm per 1% parameter change;
    ``sigma`` is the one-sigma uncertainty implied by the residual scatter (zero for
    an exact fit) and ``correlation`` the D-A_H correlation coefficient.
    """
    J = _jacobian(x, data, n_in)
    r = _residuals(x, data, n_in)
    jtj = J.T @ J
    dof = max(len(r) - 2, 1)
    s2 = float(r @ r) / dof
    out = {"dlog_residual": tuple(float(v) for v in np.linalg.norm(J * (0.01 * np.asarray(x)), axis=0))}
    try:
        cov = np.linalg.inv(jtj) * s2
        sd = np.sqrt(np.abs(np.diag(cov)))
        corr = np.linalg.inv(jtj)
        out["sigma"] = (float(sd[0]), float(sd[1]))
        out["correlation"] = float(corr[0, 1] / math.sqrt(corr[0, 0] * corr[1, 1]))
    except np.linalg.LinAlgError:
        out["sigma"] = (math.inf, math.inf)
        out["correlation"] = math.nan
    return out
