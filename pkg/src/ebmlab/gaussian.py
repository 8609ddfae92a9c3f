"""Closed-form study of the Gaussian model trained with finite-time
Langevin sampling.

The model couplings must stay positive definite; training dynamics are
written per eigenmode of the coupling matrix.  Moments after a finite
sampling time, the resulting learning flow for the eigenvalues, its
fixed point and divergence threshold, the training relaxation time, and
the two-mode eigenvector rotation system are all available in closed
form here, with a Monte Carlo integrator as the independent check.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import OdeTrajectory, RngStream, find_root, integrate_ode

__all__ = [
    "ThresholdError",
    "ModeState",
    "RotationState",
    "LangevinMomentEstimate",
    "langevin_moment",
    "simulate_langevin_mc",
    "eigen_flow_rhs",
    "fixed_point",
    "divergence_threshold",
    "g_inflection",
    "relaxation_time",
    "fit_relaxation_time",
    "integrate_eigen_flow",
    "rotation_flow_rhs",
    "integrate_rotation_flow",
    "projected_covariance",
    "rotation_rate",
    "resampling_error",
]


class ThresholdError(ValueError):
    """Sampling time at or below the positive-solution threshold."""

    def __init__(self, k, k_star):
        super().__init__(f"sampling time k={k} is at or below the threshold k*={k_star}; "
                         "no strictly positive stationary coupling exists")
        self.k_star = k_star


@dataclass
class ModeState:
    """One training mode: coupling eigenvalue, data spectral moment,
    and initialization second moment (plus the 2D cross moment)."""

    j_alpha: float
    c_hat: float
    m0: float
    cross0: float = 0.0

    def __post_init__(self):
        if self.c_hat <= 0:
            raise ValueError(f"data spectral moment must be positive, got {self.c_hat}")
        if self.m0 < 0:
            raise ValueError(f"initialization moment must be nonnegative, got {self.m0}")

    @property
    def is_valid(self) -> bool:
        """Positive-definiteness of this mode's coupling."""
        return self.j_alpha > 0


@dataclass
class RotationState:
    """Two-mode state with the angle between model and data eigenbases."""

    phi: float
    j1: float
    j2: float
    c1: float
    c2: float

    def __post_init__(self):
        self.phi = float((self.phi + np.pi) % (2.0 * np.pi) - np.pi)
        if self.phi == -np.pi:
            self.phi = np.pi


def _second_moment_k(j, k, m0):
    """<x^2> after Langevin time k for mode eigenvalue(s) j, init moment m0."""
    j = np.asarray(j, dtype=float)
    decay = np.exp(-2.0 * j * k)
    safe_j = np.where(j == 0.0, 1.0, j)
    relaxed = np.where(j == 0.0, 2.0 * float(k), (1.0 - decay) / safe_j)
    return m0 * decay + relaxed


def langevin_moment(j_a: float, j_b: float, k: float, init_ab: float,
                    diagonal=None) -> float:
    """Second moment <x_a x_b> after Langevin sampling time k.

    ``init_ab * exp(-(J_a+J_b) k)`` plus, on the diagonal, the
    equilibration term ``(1 - exp(-2 J_a k)) / J_a``.  ``diagonal``
    defaults to ``j_a == j_b``; pass False for distinct modes that
    happen to share an eigenvalue.

    A nonpositive eigenvalue with k > 0 is outside the model domain
    (the Gaussian is unnormalizable); the value is still computed for
    divergence studies, with a warning.
    """
    if k < 0:
        raise ValueError(f"sampling time must be nonnegative, got {k}")
    if diagonal is None:
        diagonal = j_a == j_b
    if k > 0 and min(j_a, j_b) <= 0:
        warnings.warn(f"eigenvalue {min(j_a, j_b)} <= 0: outside the model domain",
                      RuntimeWarning, stacklevel=2)
    out = init_ab * np.exp(-(j_a + j_b) * k)
    if diagonal:
        out += float(_second_moment_k(j_a, k, 0.0))
    return float(out)


@dataclass(frozen=True)
class LangevinMomentEstimate:
    """Monte Carlo moment estimates with standard errors."""

    mean: np.ndarray
    second: np.ndarray
    se_mean: np.ndarray
    se_second: np.ndarray
    n_chains: int


def simulate_langevin_mc(j, k: float, n_chains: int, dt: float, rng: RngStream,
                         x0=None) -> LangevinMomentEstimate:
    """Euler-Maruyama integration of ``dx = -J x dk + noise`` with noise
    variance 2 per unit time.

    ``j`` may be a scalar, a vector of decoupled mode eigenvalues, or a
    full coupling matrix.  ``x0`` is the initial ensemble (n_chains, d),
    a constant, or None for a zero start.  This is the independent
    oracle for :func:`langevin_moment`.

    Raises
    ------
    ValueError
        If the step is unstable (``dt * max(J) > 0.1``).
    """
    j = np.asarray(j, dtype=float)
    matrix = j.ndim == 2
    d = j.shape[0] if j.ndim else 1
    jmax = float(np.abs(np.linalg.eigvalsh(j)).max() if matrix else np.abs(j).max())
    if dt * jmax > 0.1:
        raise ValueError(f"unstable step: dt*max|J| = {dt * jmax:.3f} > 0.1")

    if x0 is None:
        x = np.zeros((n_chains, d))
    elif np.isscalar(x0):
        x = np.full((n_chains, d), float(x0))
    else:
        x = np.array(x0, dtype=float).reshape(n_chains, d)

    n_steps = int(round(k / dt))
    amp = np.sqrt(2.0 * dt)
    for _ in range(n_steps):
        drift = -(x @ j.T) if matrix else -x * j
        x = x + dt * drift + amp * rng.normal(size=x.shape)

    mean = x.mean(axis=0)
    prods = x[:, :, None] * x[:, None, :]
    second = prods.mean(axis=0)
    se_mean = x.std(axis=0, ddof=1) / np.sqrt(n_chains)
    se_second = prods.std(axis=0, ddof=1) / np.sqrt(n_chains)
    return LangevinMomentEstimate(mean=mean, second=second, se_mean=se_mean,
                                  se_second=se_second, n_chains=n_chains)


def _flow_rhs(j, c_hat, m0, k):
    return -c_hat + 1.0 / j + (m0 - 1.0 / j) * np.exp(-2.0 * j * k)


def eigen_flow_rhs(state: ModeState, k: float) -> float:
    """Training velocity dJ/dt of one mode under finite-k sampling:
    ``-c_hat + 1/J + (m0 - 1/J) exp(-2 J k)``."""
    if state.j_alpha == 0.0:
        raise ValueError("flow is singular at J = 0")
    return float(_flow_rhs(state.j_alpha, state.c_hat, state.m0, k))


def divergence_threshold(c_hat: float, m0: float) -> float:
    """Minimal sampling time ``k* = (c_hat - m0)/2`` admitting a strictly
    positive stationary coupling (0 when m0 >= c_hat)."""
    return (c_hat - m0) / 2.0


def g_inflection(m0: float, k: float) -> float:
    """Inflection point ``(k m0 + 1)/(k m0)`` of the stationarity function
    g, a diagnostic of its shape analysis; defined for m0 > 0."""
    if m0 <= 0:
        raise ValueError("the inflection diagnostic requires m0 > 0")
    return (k * m0 + 1.0) / (k * m0)


def _g(j, c_hat, m0, k):
    return j * c_hat - 1.0 + np.exp(-2.0 * j * k) * (1.0 - j * m0)


def fixed_point(c_hat: float, m0: float, k: float, tol: float = 1e-14) -> float:
    """Strictly positive stationary coupling of the finite-k flow.

    Solves ``g(J) = J c_hat - 1 + exp(-2 J k)(1 - J m0) = 0`` by
    bisection on ``[1e-8, max(10/c_hat, 10 m0 + 10)]``; above the
    threshold g is negative at the lower end and positive at the upper
    end, so the bracket is guaranteed.

    Raises
    ------
    ThresholdError
        When ``k <= (c_hat - m0)/2`` (names the threshold).
    """
    k_star = divergence_threshold(c_hat, m0)
    if k <= k_star:
        raise ThresholdError(k, k_star)
    lo = 1e-8
    hi = max(10.0 / c_hat, 10.0 * m0 + 10.0)
    root = find_root(lambda j: _g(j, c_hat, m0, k), lo, hi, tol=tol)
    return float(root)


def relaxation_time(c_hat: float, m0: float, k: float) -> float:
    """Training time constant of the exponential tail toward the fixed
    point, from linearizing the flow there:

        1/tau = (1 - E)/J^2 - 2 k E (1/J - m0),   E = exp(-2 k J)

    evaluated at J = fixed_point(c_hat, m0, k).  Larger k shortens tau
    whenever the initialization moment sits below the equilibrated one.
    """
    j = fixed_point(c_hat, m0, k)
    e = np.exp(-2.0 * k * j)
    rate = (1.0 - e) / j**2 - 2.0 * k * e * (1.0 / j - m0)
    return float(1.0 / rate)


def integrate_eigen_flow(c_hats, m0s, k: float, j0, dt: float = None,
                         t_end: float = None) -> OdeTrajectory:
    """Integrate the per-mode training flow with the fixed-step scheme.

    Modes decouple (eigenvectors held fixed), so ``c_hats``, ``m0s`` and
    ``j0`` are broadcast per mode.  Integration halts with the
    divergence flag as soon as any mode reaches J <= 0, which is the
    unphysical region.  Defaults: ``dt = 1e-3 / max(c_hats)``; ``t_end``
    is 40 relaxation times when every mode is above threshold, else a
    fixed horizon long enough to expose the divergence.
    """
    c_hats = np.atleast_1d(np.asarray(c_hats, dtype=float))
    m0s = np.broadcast_to(np.asarray(m0s, dtype=float), c_hats.shape)
    j0 = np.broadcast_to(np.asarray(j0, dtype=float), c_hats.shape).astype(float)
    if dt is None:
        dt = 1e-3 / c_hats.max()
    if t_end is None:
        try:
            taus = [relaxation_time(c, m, k) for c, m in zip(c_hats, m0s)]
            t_end = max(10.0, 40.0 * max(taus))
        except ThresholdError:
            t_end = 100.0
    return integrate_ode(lambda j: _flow_rhs(j, c_hats, m0s, k), j0, t_end, dt,
                         halt=lambda j: bool(np.any(j <= 0.0)))


def fit_relaxation_time(trajectory: OdeTrajectory, j_inf, window=(1e-9, 1e-4)):
    """Exponential time constant of the trajectory tail, per mode.

    Fits ``log |J(t) - j_inf|`` linearly over the samples whose
    deviation lies inside ``window``, which restricts the fit to the
    asymptotic regime while staying clear of floating point noise.
    """
    values = trajectory.values
    j_inf = np.broadcast_to(np.asarray(j_inf, dtype=float), values.shape[1:])
    taus = []
    for mode in range(values.shape[1]):
        dev = np.abs(values[:, mode] - j_inf[mode])
        mask = (dev > window[0]) & (dev < window[1])
        if mask.sum() < 10:
            raise ValueError(f"tail window captured only {int(mask.sum())} samples "
                             f"for mode {mode}; integrate longer or widen the window")
        slope = np.polyfit(trajectory.times[mask], np.log(dev[mask]), 1)[0]
        taus.append(-1.0 / slope)
    out = np.array(taus)
    return float(out[0]) if out.size == 1 else out


def rotation_flow_rhs(state: RotationState, m0_1: float, m0_2: float,
                      cross0: float, k: float):
    """Coupled velocities (dphi/dt, dJ1/dt, dJ2/dt) of the two-mode
    rotation system at finite sampling time.

    The angle velocity is the pointwise rotation rate evaluated with the
    finite-time model cross moment and the projected data cross moment:
    dphi/dt = [sin(2 phi)(c1 - c2)/2 + cross0 e^{-(J1+J2)k}] / (J1 - J2),
    which makes aligned configurations attracting at long sampling times
    (eigenvector perturbation pairs mode alpha with 1/(J_beta - J_alpha)).
    Singular when the eigenvalues degenerate; raises instead of
    regularizing.
    """
    if abs(state.j1 - state.j2) < 1e-9:
        raise ValueError("degenerate eigenvalues J1 = J2: rotation rate undefined")
    phi, j1, j2 = state.phi, state.j1, state.j2
    c1, c2 = state.c1, state.c2
    dphi = (np.sin(2.0 * phi) * (c1 - c2) / 2.0
            + cross0 * np.exp(-(j1 + j2) * k)) / (j1 - j2)
    dj1 = (1.0 / j1 - c1 * np.cos(phi) ** 2 - c2 * np.sin(phi) ** 2
           - (1.0 / j1 - m0_1) * np.exp(-2.0 * j1 * k))
    dj2 = (1.0 / j2 - c1 * np.sin(phi) ** 2 - c2 * np.cos(phi) ** 2
           - (1.0 / j2 - m0_2) * np.exp(-2.0 * j2 * k))
    return float(dphi), float(dj1), float(dj2)


def integrate_rotation_flow(state0: RotationState, m0_1: float, m0_2: float,
                            cross0: float, k: float, t_end: float,
                            dt: float = 1e-3) -> OdeTrajectory:
    """Integrate the two-mode rotation system; trajectory columns are
    (phi, J1, J2)."""
    c1, c2 = state0.c1, state0.c2

    def rhs(y):
        s = RotationState(phi=y[0], j1=y[1], j2=y[2], c1=c1, c2=c2)
        return np.array(rotation_flow_rhs(s, m0_1, m0_2, cross0, k))

    y0 = np.array([state0.phi, state0.j1, state0.j2])
    return integrate_ode(rhs, y0, t_end, dt,
                         halt=lambda y: bool(min(y[1], y[2]) <= 0.0))


def projected_covariance(c1: float, c2: float, phi: float):
    """Data covariance projected on a model basis rotated by phi:
    (c_11, c_22, c_12)."""
    co, si = np.cos(phi), np.sin(phi)
    return (c1 * co**2 + c2 * si**2,
            c1 * si**2 + c2 * co**2,
            co * si * (c2 - c1))


def rotation_rate(j_a: float, j_b: float, model_corr_ab: float,
                  data_corr_ab: float) -> float:
    """Pointwise eigenvector rotation rate
    ``(model_corr - data_corr) / (J_a - J_b)``; antisymmetric under
    swapping the modes."""
    if abs(j_a - j_b) < 1e-9:
        raise ValueError("degenerate eigenvalues: rotation rate undefined")
    return (model_corr_ab - data_corr_ab) / (j_a - j_b)


def resampling_error(j_modes, c_hats, m0_gen, k_primes) -> np.ndarray:
    """Squared correlation error of samples drawn from a model for a
    range of generation times.

    ``E2(k') = sum_alpha (<x_alpha^2>_{k'} - c_hat_alpha)^2`` with the
    second moments generated from initialization moment ``m0_gen``.  At
    a converged model this vanishes exactly at the training time when
    the generation initialization matches the training one.
    """
    j_modes = np.atleast_1d(np.asarray(j_modes, dtype=float))
    c_hats = np.broadcast_to(np.asarray(c_hats, dtype=float), j_modes.shape)
    m0_gen = np.broadcast_to(np.asarray(m0_gen, dtype=float), j_modes.shape)
    k_primes = np.atleast_1d(np.asarray(k_primes, dtype=float))
    out = np.empty(len(k_primes))
    for idx, kp in enumerate(k_primes):
        m2 = m0_gen * np.exp(-2.0 * j_modes * kp) + _second_moment_k(j_modes, kp, 0.0)
        out[idx] = float(np.sum((m2 - c_hats) ** 2))
    return out
