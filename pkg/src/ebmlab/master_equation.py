"""Exact master-equation engine on enumerated binary state spaces.

Everything here is deterministic: for up to ``N_DENSE_MAX`` spins the
single-flip dynamics of a pairwise-coupled spin model is represented as
a dense transition operator, decomposed spectrally through the detailed
balance symmetrization, and evolved in closed form.  This is the
reference lane against which all sampled estimates in the package are
checked, and it is also a complete training engine in its own right:
:func:`train_exact` runs gradient ascent on moments evaluated after a
finite sampling time and verifies that the resulting model reproduces
the data statistics through that exact sampling process.

Conventions
-----------
State ``a`` encodes spins little-endian: bit ``i`` of ``a`` is 1 iff
spin ``i`` equals +1.  Energies are ``E_a = -sum_{i<j} J_ij x_i x_j -
sum_i h_i x_i``.  Transition operators are column-stochastic: entry
``(b, a)`` is the rate or probability of ``a -> b``, and distributions
evolve as ``p' = U p``.  One application of the discrete kernel is one
random-site update; a sweep of ``N`` updates is ``U^N``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .moments import MomentEstimate, pair_indices, unpack_pairs
from .numerics import sym_eig

__all__ = [
    "CapacityError",
    "DetailedBalanceError",
    "SpinStateSpace",
    "EnergyTable",
    "GibbsDistribution",
    "TransitionOperator",
    "SpectralExpansion",
    "TrainingReport",
    "HessianReport",
    "gibbs_distribution",
    "build_discrete_heatbath",
    "build_continuous_glauber",
    "spectral_expansion",
    "evolve",
    "evolve_direct",
    "lambda_correction",
    "mixing_time",
    "finite_k_moment",
    "mismatch_D",
    "pair_field_observables",
    "moments_of_distribution",
    "exact_finite_k_gradient",
    "train_exact",
    "hessian_check",
    "moment_error_curve",
    "finite_k_moments",
    "error_zero_crossings",
    "uniform_distribution",
    "delta_distribution",
    "dump_spectrum_csv",
    "dump_operator_csv",
]

N_ENUM_MAX = 20    # 2^N probability vectors stay addressable
N_DENSE_MAX = 12   # 2^N x 2^N dense operators stay in memory


class CapacityError(ValueError):
    """Raised when a request exceeds the enumeration or dense-operator bound."""


class DetailedBalanceError(ValueError):
    """Raised when an operator violates detailed balance beyond tolerance."""


def _sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class SpinStateSpace:
    """Enumeration of all 2^N configurations of N spins."""

    def __init__(self, n_spins: int):
        if n_spins < 1:
            raise ValueError(f"need at least one spin, got {n_spins}")
        if n_spins > N_ENUM_MAX:
            raise CapacityError(f"{n_spins} spins exceeds the enumeration bound {N_ENUM_MAX}")
        self.n_spins = n_spins
        self.size = 1 << n_spins
        self._configs = None

    def configurations(self) -> np.ndarray:
        """(size, n_spins) array of spins in {-1, +1}, row a = state a."""
        if self._configs is None:
            a = np.arange(self.size)[:, None]
            bits = (a >> np.arange(self.n_spins)[None, :]) & 1
            self._configs = (2.0 * bits - 1.0).astype(float)
        return self._configs

    def index_of(self, config) -> int:
        bits = (np.asarray(config) > 0).astype(np.int64)
        return int((bits << np.arange(self.n_spins)).sum())


@dataclass(frozen=True)
class EnergyTable:
    """Enumerated energies of a pairwise model (couplings J, fields h)."""

    space: SpinStateSpace
    couplings: np.ndarray
    fields: np.ndarray
    energies: np.ndarray

    @staticmethod
    def from_couplings(couplings, fields=None) -> "EnergyTable":
        j = np.asarray(couplings, dtype=float)
        n = j.shape[0]
        if j.shape != (n, n):
            raise ValueError(f"couplings must be square, got {j.shape}")
        if np.abs(j - j.T).max() > 0:
            raise ValueError("couplings must be exactly symmetric")
        if np.abs(np.diag(j)).max() > 0:
            raise ValueError("couplings must have zero diagonal")
        h = np.zeros(n) if fields is None else np.asarray(fields, dtype=float)
        space = SpinStateSpace(n)
        x = space.configurations()
        energies = -0.5 * np.einsum("ai,ij,aj->a", x, j, x) - x @ h
        return EnergyTable(space=space, couplings=j, fields=h, energies=energies)

    @property
    def n_spins(self) -> int:
        return self.space.n_spins


@dataclass(frozen=True)
class GibbsDistribution:
    """Normalized Boltzmann weights exp(-E_a)/Z and log Z."""

    probabilities: np.ndarray
    log_partition: float


def gibbs_distribution(energy: EnergyTable) -> GibbsDistribution:
    """Equilibrium distribution of an energy table via log-sum-exp."""
    e = energy.energies
    shift = (-e).max()
    w = np.exp(-e - shift)
    z = w.sum()
    return GibbsDistribution(probabilities=w / z, log_partition=float(np.log(z) + shift))


@dataclass(frozen=True)
class TransitionOperator:
    """Dense single-flip evolution operator, column convention p' = U p.

    ``kind`` is ``"discrete-kernel"`` (column-stochastic) or
    ``"continuous-generator"`` (columns sum to zero).  Both satisfy
    detailed balance with respect to ``gibbs`` by construction.
    """

    kind: str
    matrix: np.ndarray
    gibbs: GibbsDistribution
    energy: EnergyTable

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def detailed_balance_residual(self) -> float:
        """max_ab |U_ab p_b - U_ba p_a| over the off-diagonal."""
        p = self.gibbs.probabilities
        flux = self.matrix * p[None, :]
        return float(np.abs(flux - flux.T).max())


def _check_dense_capacity(energy: EnergyTable):
    if energy.n_spins > N_DENSE_MAX:
        raise CapacityError(
            f"{energy.n_spins} spins exceeds the dense-operator bound {N_DENSE_MAX}")


def build_discrete_heatbath(energy: EnergyTable) -> TransitionOperator:
    """Random-site heat-bath kernel U = (1/N) sum_i P_i.

    ``P_i`` resamples spin i from its conditional given all others, so
    one application of U is one random-site update.  The similarity-
    symmetrized kernel is an average of symmetric projections, hence the
    whole spectrum lies in [0, 1].
    """
    _check_dense_capacity(energy)
    n = energy.n_spins
    size = energy.space.size
    e = energy.energies
    u = np.zeros((size, size))
    a = np.arange(size)
    for i in range(n):
        bit = 1 << i
        a_plus = a | bit
        a_minus = a & ~bit
        p_plus = _sigmoid(e[a_minus] - e[a_plus])
        u[a_plus, a] += p_plus / n
        u[a_minus, a] += (1.0 - p_plus) / n
    return TransitionOperator(kind="discrete-kernel", matrix=u,
                              gibbs=gibbs_distribution(energy), energy=energy)


def build_continuous_glauber(energy: EnergyTable) -> TransitionOperator:
    """Continuous-time generator with single-flip rates sigma(E_a - E_b)/N.

    Rates are strictly positive, so the chain is irreducible; the
    diagonal is fixed so that every column sums to zero.
    """
    _check_dense_capacity(energy)
    n = energy.n_spins
    size = energy.space.size
    e = energy.energies
    g = np.zeros((size, size))
    a = np.arange(size)
    for i in range(n):
        b = a ^ (1 << i)
        g[b, a] = _sigmoid(e[a] - e[b]) / n
    g[a, a] = -g.sum(axis=0)
    return TransitionOperator(kind="continuous-generator", matrix=g,
                              gibbs=gibbs_distribution(energy), energy=energy)


@dataclass
class SpectralExpansion:
    """Eigenmodes of a reversible operator plus one initial condition.

    Eigenvalues are sorted with the stationary mode first (0 for a
    generator, 1 for a kernel) and decay rate increasing after it.
    ``modes[:, 0]`` is the Gibbs distribution normalized to unit sum;
    every other mode column sums to zero.  ``coefficients`` expand the
    ``p0`` passed at construction, with ``coefficients[0] == 1``.
    """

    kind: str
    eigenvalues: np.ndarray
    modes: np.ndarray
    coefficients: np.ndarray
    p0: np.ndarray
    _sqrt_gibbs: np.ndarray = field(repr=False, default=None)
    _sym_basis: np.ndarray = field(repr=False, default=None)
    _c0_scale: float = field(repr=False, default=1.0)

    @property
    def n_states(self) -> int:
        return len(self.eigenvalues)

    @property
    def stationary(self) -> np.ndarray:
        return self.modes[:, 0]

    def coefficients_of(self, q0) -> np.ndarray:
        """Expansion coefficients of another normalized distribution."""
        q0 = np.asarray(q0, dtype=float)
        c = self._sym_basis.T @ (q0 / self._sqrt_gibbs)
        c[0] = c[0] * self._c0_scale
        return c

    def decay_factors(self, k) -> np.ndarray:
        """Per-mode decay at sampling time k (1 for the stationary mode)."""
        lam = self.eigenvalues
        if self.kind == "continuous-generator":
            out = np.exp(-float(k) * np.abs(lam))
        elif float(k) == int(k):
            out = lam ** int(k)
        elif lam.min() >= -1e-12:
            # nonnegative spectrum (heat bath): smooth continuation lam^k
            out = np.clip(lam, 0.0, None) ** float(k)
        else:
            raise ValueError("non-integer k needs a nonnegative kernel spectrum")
        out[0] = 1.0
        return out


def spectral_expansion(op: TransitionOperator, p0, db_tol: float = 1e-9) -> SpectralExpansion:
    """Decompose a reversible operator and expand an initial distribution.

    The operator is symmetrized with the Gibbs weights
    (``S = D^{-1/2} U D^{1/2}``, symmetric exactly when detailed balance
    holds), diagonalized with the Jacobi solver, and mapped back to
    state space.  Rejects operators whose detailed balance residual
    exceeds ``db_tol``, since the symmetrization is then invalid.
    """
    residual = op.detailed_balance_residual()
    if residual > db_tol:
        raise DetailedBalanceError(
            f"detailed balance residual {residual:.3e} exceeds {db_tol:.1e}")
    p0 = np.asarray(p0, dtype=float)
    if abs(p0.sum() - 1.0) > 1e-10 or p0.min() < -1e-12:
        raise ValueError("p0 must be a normalized distribution")

    p = op.gibbs.probabilities
    if p.min() < 1e-290:
        raise ValueError("Gibbs weights underflow (couplings too large); the "
                         "similarity symmetrization is numerically invalid")
    d = np.sqrt(p)
    sym = op.matrix * (d[None, :] / d[:, None])
    sym = 0.5 * (sym + sym.T)
    system = sym_eig(sym)

    order = np.argsort(system.eigenvalues)[::-1]
    lam = system.eigenvalues[order]
    v = system.eigenvectors[:, order]
    if v[:, 0] @ d < 0:
        v[:, 0] = -v[:, 0]

    modes = d[:, None] * v
    c = v.T @ (p0 / d)
    # pin the stationary mode to unit total mass so that c0 == 1 exactly
    s0 = modes[:, 0].sum()
    modes[:, 0] /= s0
    c0_scale = s0
    c[0] *= c0_scale

    return SpectralExpansion(kind=op.kind, eigenvalues=lam, modes=modes,
                             coefficients=c, p0=p0, _sqrt_gibbs=d, _sym_basis=v,
                             _c0_scale=c0_scale)


def evolve(expansion: SpectralExpansion, k) -> np.ndarray:
    """Distribution after sampling time k, from the spectral expansion."""
    if k < 0:
        raise ValueError(f"sampling time must be nonnegative, got {k}")
    w = expansion.coefficients * expansion.decay_factors(k)
    return expansion.modes @ w


def evolve_direct(op: TransitionOperator, p0, k) -> np.ndarray:
    """Brute-force evolution: repeated kernel application, or the matrix
    exponential (scaling and squaring) for a generator.  Oracle for
    :func:`evolve`."""
    p0 = np.asarray(p0, dtype=float)
    if op.kind == "discrete-kernel":
        if int(k) != k or k < 0:
            raise ValueError(f"discrete evolution needs integer k >= 0, got {k}")
        p = p0.copy()
        for _ in range(int(k)):
            p = op.matrix @ p
        return p
    return expm(op.matrix * float(k)) @ p0


def lambda_correction(expansion: SpectralExpansion, k) -> np.ndarray:
    """Finite-time deviation from equilibrium: evolve(k) - Gibbs."""
    w = expansion.coefficients * expansion.decay_factors(k)
    w[0] = 0.0
    return expansion.modes @ w


def mixing_time(expansion: SpectralExpansion, degeneracy_tol: float = 1e-12) -> float:
    """Inverse spectral gap: 1/|lambda_1| for a generator, 1/|log lambda_1|
    for a kernel, with lambda_1 the slowest non-stationary mode.

    Raises if the stationary eigenvalue is degenerate (reducible chain).
    """
    lam = expansion.eigenvalues
    if expansion.kind == "continuous-generator":
        gap = np.abs(lam[1:]).min()
        if gap <= degeneracy_tol:
            raise ValueError("degenerate stationary eigenvalue: chain is reducible")
        return float(1.0 / gap)
    lam1 = np.abs(lam[1:]).max()
    if lam1 >= 1.0 - degeneracy_tol:
        raise ValueError("degenerate stationary eigenvalue: chain is reducible")
    if lam1 <= 0.0:
        return 0.0
    return float(-1.0 / np.log(lam1))


def finite_k_moment(expansion: SpectralExpansion, f_table, k):
    """Expectation of per-state observables after sampling time k.

    ``f_table`` has one row per state and one column per observable (a
    single vector is treated as one observable)."""
    p = evolve(expansion, k)
    f = np.asarray(f_table, dtype=float)
    return f.T @ p


def mismatch_D(expansion: SpectralExpansion, k, p0, k_prime, q0, f_table) -> np.ndarray:
    """Observable mismatch between two sampling processes of one model.

    Both processes share the operator behind ``expansion``; they differ
    in duration (k vs k_prime) and initialization (p0 vs q0).  Vanishes
    identically when both agree.
    """
    c_p = expansion.coefficients if p0 is None else expansion.coefficients_of(p0)
    c_q = expansion.coefficients_of(q0) if q0 is not None else expansion.coefficients
    w = c_q * expansion.decay_factors(k_prime) - c_p * expansion.decay_factors(k)
    w[0] = 0.0
    f = np.asarray(f_table, dtype=float)
    return f.T @ (expansion.modes @ w)


def pair_field_observables(space: SpinStateSpace) -> np.ndarray:
    """(size, n_pairs + n_spins) table of the sufficient statistics
    x_i x_j (i<j, row-major) followed by x_i, matching
    ``MomentEstimate.as_vector`` ordering."""
    x = space.configurations()
    i, j = pair_indices(space.n_spins)
    return np.concatenate([x[:, i] * x[:, j], x], axis=1)


def moments_of_distribution(space: SpinStateSpace, p) -> MomentEstimate:
    """Exact moments of an enumerated distribution."""
    f = pair_field_observables(space)
    vec = f.T @ np.asarray(p, dtype=float)
    n_pairs = space.n_spins * (space.n_spins - 1) // 2
    return MomentEstimate.exact(means=vec[n_pairs:], correlations=vec[:n_pairs])


def uniform_distribution(space: SpinStateSpace) -> np.ndarray:
    return np.full(space.size, 1.0 / space.size)


def delta_distribution(space: SpinStateSpace, state_index: int) -> np.ndarray:
    p = np.zeros(space.size)
    p[state_index] = 1.0
    return p


def _build_operator(energy: EnergyTable, kind: str) -> TransitionOperator:
    if kind == "continuous-generator":
        return build_continuous_glauber(energy)
    if kind == "discrete-kernel":
        return build_discrete_heatbath(energy)
    raise ValueError(f"unknown operator kind {kind!r}")


def finite_k_moments(energy: EnergyTable, k, p0, kind: str = "continuous-generator") -> np.ndarray:
    """Sufficient-statistic moments (pairs then fields) of a model after
    sampling time k from p0, computed by direct evolution."""
    op = _build_operator(energy, kind)
    p_k = evolve_direct(op, p0, k)
    return pair_field_observables(energy.space).T @ p_k


def exact_finite_k_gradient(energy: EnergyTable, data_moments: MomentEstimate, k, p0,
                            kind: str = "continuous-generator"):
    """Likelihood-ascent gradient with model moments taken after a finite
    sampling time instead of at equilibrium.

    Returns ``(grad_j, grad_h)``: data moment minus finite-k model
    moment for every pair coupling (symmetric, zero diagonal) and field,
    so that ``J += gamma * grad_j`` ascends the likelihood.
    """
    n = energy.n_spins
    model = finite_k_moments(energy, k, p0, kind)
    grad = data_moments.as_vector() - model
    n_pairs = n * (n - 1) // 2
    return unpack_pairs(grad[:n_pairs], n), grad[n_pairs:]


@dataclass(frozen=True)
class TrainingReport:
    """Outcome of exact finite-k gradient ascent."""

    energy: EnergyTable
    gradient_residual: float
    iterations: int
    mismatch_history: np.ndarray
    converged: bool
    diverged: bool


def train_exact(energy0: EnergyTable, data_moments: MomentEstimate, k, p0,
                gamma: float = 1e-2, tol: float = 1e-10, max_iters: int = 100_000,
                kind: str = "continuous-generator") -> TrainingReport:
    """Gradient ascent on (J, h) using exact finite-k model moments.

    Stops when the max-norm of the gradient drops to ``tol`` or after
    ``max_iters`` updates; aborts with the ``diverged`` flag when any
    coupling exceeds 1e3 in magnitude.  At convergence the model's
    finite-k moments equal the data moments componentwise within
    ``tol``: the trained model reproduces the data statistics through
    the exact sampling process used during training.
    """
    if gamma <= 0:
        raise ValueError(f"learning rate must be positive, got {gamma}")
    n = energy0.n_spins
    j = energy0.couplings.copy()
    h = energy0.fields.copy()
    data_vec = data_moments.as_vector()
    n_pairs = n * (n - 1) // 2
    iu = pair_indices(n)

    history = []
    residual = np.inf
    converged = diverged = False
    iterations = 0
    energy = energy0
    for iterations in range(max_iters + 1):
        energy = EnergyTable.from_couplings(j, h)
        model = finite_k_moments(energy, k, p0, kind)
        grad = data_vec - model
        residual = float(np.abs(grad).max())
        history.append(residual)
        if residual <= tol:
            converged = True
            break
        if iterations == max_iters:
            break
        dj = grad[:n_pairs]
        j[iu] += gamma * dj
        j[iu[1], iu[0]] = j[iu]
        h += gamma * grad[n_pairs:]
        if np.abs(j).max() > 1e3 or not np.all(np.isfinite(j)):
            diverged = True
            energy = EnergyTable.from_couplings(j, h)
            break
    return TrainingReport(energy=energy, gradient_residual=residual,
                          iterations=iterations, mismatch_history=np.array(history),
                          converged=converged, diverged=diverged)


@dataclass(frozen=True)
class HessianReport:
    """Covariance of the sufficient statistics and the PSD verdict."""

    covariance: np.ndarray
    hessian: np.ndarray
    min_eigenvalue: float
    positive_semidefinite: bool


def hessian_check(energy: EnergyTable, data_moments=None, psd_tol: float = 1e-10) -> HessianReport:
    """Log-likelihood Hessian for the pairwise (linear-in-parameter) model.

    The Hessian is minus the covariance of the sufficient statistics
    under the model distribution; the data term drops out entirely, so
    ``data_moments`` is accepted only for signature uniformity.  Asserts
    the covariance is positive semidefinite within ``psd_tol``.
    """
    p = gibbs_distribution(energy).probabilities
    f = pair_field_observables(energy.space)
    mean = f.T @ p
    cov = (f.T * p) @ f - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    min_eig = float(sym_eig(cov).eigenvalues[0])
    return HessianReport(covariance=cov, hessian=-cov, min_eigenvalue=min_eig,
                         positive_semidefinite=min_eig >= -psd_tol)


def moment_error_curve(energy: EnergyTable, data_moments: MomentEstimate, p0, k_grid,
                       kind: str = "continuous-generator") -> np.ndarray:
    """Per-component moment error <f>_{k'} - data over a grid of sampling
    times, from one spectral decomposition.  Shape (len(k_grid), n_comp)."""
    op = _build_operator(energy, kind)
    exp = spectral_expansion(op, p0)
    f = pair_field_observables(energy.space)
    data_vec = data_moments.as_vector()
    return np.array([finite_k_moment(exp, f, kp) - data_vec for kp in k_grid])


def error_zero_crossings(k_grid, errors: np.ndarray, floor: float = 1e-13):
    """Zero crossings, per moment component, of an error curve on a grid.

    Components whose error never leaves ``floor`` are skipped (they are
    zero throughout, typically by symmetry).  Returns a list of
    (component index, crossing location) pairs with linear
    interpolation between grid points.
    """
    k_grid = np.asarray(k_grid, dtype=float)
    crossings = []
    for c in range(errors.shape[1]):
        e = errors[:, c]
        if np.abs(e).max() <= floor:
            continue
        sign_change = np.where(np.diff(np.sign(e)) != 0)[0]
        for idx in sign_change:
            x0, x1 = k_grid[idx], k_grid[idx + 1]
            y0, y1 = e[idx], e[idx + 1]
            crossings.append((c, float(x0 - y0 * (x1 - x0) / (y1 - y0))))
    return crossings


def dump_spectrum_csv(expansion: SpectralExpansion, path) -> None:
    """Write eigenvalues and eigenvectors as CSV rows
    ``index,eigenvalue,u_0,...,u_{S-1}``."""
    with open(path, "w", encoding="utf-8") as fh:
        size = expansion.n_states
        header = "index,eigenvalue," + ",".join(f"u_{a}" for a in range(size))
        fh.write(header + "\n")
        for alpha in range(size):
            comps = ",".join(repr(float(x)) for x in expansion.modes[:, alpha])
            fh.write(f"{alpha},{float(expansion.eigenvalues[alpha])!r},{comps}\n")


def dump_operator_csv(op: TransitionOperator, path) -> None:
    """Write the dense operator as CSV triplets ``row,col,value``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,col,value\n")
        size = op.n_states
        for b in range(size):
            for a in range(size):
                fh.write(f"{b},{a},{float(op.matrix[b, a])!r}\n")
