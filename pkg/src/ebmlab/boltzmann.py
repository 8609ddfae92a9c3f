"""Binary-variable pairwise model: heat-bath sampling ensembles, training
under random-init / data-init / persistent schemes, the linearized
high-temperature correlation formula, and the error metrics used by the
lattice experiments.

One MCMC step is one expected sweep: N random-site single-spin updates,
which is N applications of the exact random-site kernel built in
:mod:`ebmlab.master_equation`.  Exact-versus-sampled comparisons
therefore raise that kernel to the N-th power per step (and scale
generator time by N), keeping step counts directly comparable across
the exact and stochastic lanes.
"""

from dataclasses import dataclass, field

import numpy as np

from .moments import MomentEstimate, moments_from_samples, pair_indices
from .numerics import RngStream

try:
    from numba import njit, prange
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap if not (args and callable(args[0])) else args[0]


__all__ = [
    "BoltzmannModel",
    "ChainEnsemble",
    "TrainState",
    "TrainResult",
    "heatbath_step",
    "make_ensemble",
    "sample_k",
    "moment_trajectory",
    "train",
    "mf_correlation_k",
    "correlation_error",
    "coupling_error",
]

SCHEMES = ("random-init", "data-init", "persistent")


@dataclass
class BoltzmannModel:
    """Symmetric zero-diagonal couplings and fields of a pairwise spin model."""

    j: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.j = np.asarray(self.j, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        n = self.j.shape[0]
        if self.j.shape != (n, n) or self.h.shape != (n,):
            raise ValueError(f"inconsistent shapes {self.j.shape}, {self.h.shape}")
        if np.abs(self.j - self.j.T).max() > 0:
            raise ValueError("couplings must be exactly symmetric")
        if np.abs(np.diag(self.j)).max() > 0:
            raise ValueError("couplings must have zero diagonal")

    @property
    def n_spins(self) -> int:
        return len(self.h)

    @staticmethod
    def zeros(n_spins: int) -> "BoltzmannModel":
        return BoltzmannModel(j=np.zeros((n_spins, n_spins)), h=np.zeros(n_spins))

    def copy(self) -> "BoltzmannModel":
        return BoltzmannModel(j=self.j.copy(), h=self.h.copy())


@njit(parallel=True, cache=True)
def _sweep_kernel(spins, fields, j, sites, unis):  # pragma: no cover - jitted
    m_chains, n = spins.shape
    for m in prange(m_chains):
        for u in range(n):
            i = sites[m, u]
            f = fields[m, i]
            p_up = 1.0 / (1.0 + np.exp(-2.0 * f))
            new = 1.0 if unis[m, u] < p_up else -1.0
            old = spins[m, i]
            if new != old:
                spins[m, i] = new
                d = new - old
                for col in range(n):
                    fields[m, col] += d * j[i, col]


def _run_sweeps(spins, fields, model: BoltzmannModel, n_sweeps: int, rng: RngStream):
    """Advance all chains by ``n_sweeps`` expected sweeps in place.

    Randomness is pre-drawn one sweep at a time from the single ensemble
    stream, in a fixed order, so trajectories are reproducible bit for
    bit regardless of how chains are scheduled.
    """
    n = model.n_spins
    m_chains = spins.shape[0]
    for _ in range(n_sweeps):
        sites = rng.integers(0, n, size=(m_chains, n))
        unis = rng.uniform(size=(m_chains, n))
        _sweep_kernel(spins, fields, model.j, sites, unis)


@dataclass
class ChainEnsemble:
    """Ensemble of spin chains advanced together.

    ``states`` is (M, N) in {-1, +1}; ``k_elapsed`` counts sweeps since
    initialization and is shared by construction across chains.  The
    ensemble owns its random stream; chains draw from it in a fixed
    interleaved order.
    """

    states: np.ndarray
    scheme: str
    rng: RngStream
    k_elapsed: int = 0

    @property
    def n_chains(self) -> int:
        return self.states.shape[0]


def make_ensemble(model: BoltzmannModel, scheme: str, m_chains: int, rng: RngStream,
                  dataset=None) -> ChainEnsemble:
    """Initialize an ensemble according to the sampling scheme.

    random-init draws i.i.d. uniform spins; data-init draws rows from
    ``dataset``; persistent starts random and is meant to be carried
    across parameter updates afterwards.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    n = model.n_spins
    if scheme == "data-init":
        if dataset is None:
            raise ValueError("data-init scheme requires a dataset to draw rows from")
        data = np.asarray(dataset, dtype=float)
        rows = rng.integers(0, data.shape[0], size=m_chains)
        states = data[rows].copy()
    else:
        states = rng.choice_pm1(size=(m_chains, n))
    return ChainEnsemble(states=states, scheme=scheme, rng=rng)


def heatbath_step(ensemble: ChainEnsemble, model: BoltzmannModel,
                  rng: RngStream = None) -> ChainEnsemble:
    """One MCMC step: N random-site heat-bath updates per chain (one
    expected sweep).  Spin i is resampled to +1 with probability
    sigma(2 (sum_j J_ij s_j + h_i)).  Mutates the ensemble in place."""
    stream = ensemble.rng if rng is None else rng
    fields = ensemble.states @ model.j.T + model.h
    _run_sweeps(ensemble.states, fields, model, 1, stream)
    ensemble.k_elapsed += 1
    return ensemble


def sample_k(model: BoltzmannModel, scheme: str, k: int, m_chains: int,
             rng: RngStream, init_source=None):
    """Draw an ensemble via k sweeps from the scheme's initialization.

    ``init_source`` is the dataset for data-init, or an existing
    :class:`ChainEnsemble` to continue for persistent.  Returns
    ``(samples, MomentEstimate)``; for persistent the stored ensemble is
    advanced in place.
    """
    if k < 0:
        raise ValueError(f"need k >= 0, got {k}")
    if scheme == "persistent" and isinstance(init_source, ChainEnsemble):
        ensemble = init_source
    else:
        ensemble = make_ensemble(model, scheme, m_chains, rng,
                                 dataset=None if scheme != "data-init" else init_source)
    fields = ensemble.states @ model.j.T + model.h
    _run_sweeps(ensemble.states, fields, model, int(k), ensemble.rng if rng is None else rng)
    ensemble.k_elapsed += int(k)
    return ensemble.states, moments_from_samples(ensemble.states)


def moment_trajectory(model: BoltzmannModel, scheme: str, k_max: int, m_chains: int,
                      rng: RngStream, init_source=None):
    """Moment estimates after every sweep from 1 to k_max, from a single
    ensemble pass (the marginal law at sweep k equals that of a fresh
    k-sweep run)."""
    ensemble = make_ensemble(model, scheme, m_chains, rng,
                             dataset=None if scheme != "data-init" else init_source)
    fields = ensemble.states @ model.j.T + model.h
    out = []
    for _ in range(k_max):
        _run_sweeps(ensemble.states, fields, model, 1, ensemble.rng)
        out.append(moments_from_samples(ensemble.states))
    return out


@dataclass
class TrainState:
    """Resumable snapshot of a training run."""

    update_idx: int
    model: BoltzmannModel
    persistent_states: np.ndarray = None
    rng_state: dict = None


@dataclass
class TrainResult:
    """Training outcome with per-update metrics.

    ``metrics`` maps column name to an array over the updates executed:
    ``update``, ``grad_norm``, ``e2_at_k`` (correlation error of the
    gradient ensemble, i.e. generation at k' = k), and
    ``coupling_error`` (nan when no reference couplings were given).
    """

    model: BoltzmannModel
    metrics: dict
    ensemble_states: np.ndarray = None
    aborted: bool = False
    checkpoints: list = field(default_factory=list)


def train(data_moments: MomentEstimate, scheme: str, k: int, gamma: float,
          n_updates: int, m_chains: int, rng: RngStream, dataset=None,
          j_true=None, model0: BoltzmannModel = None, checkpoint_every: int = 0,
          on_checkpoint=None, on_update=None, resume: TrainState = None) -> TrainResult:
    """Moment-matching gradient ascent with a non-convergent sampler.

    Each update estimates model moments from ``m_chains`` chains run for
    ``k`` sweeps under ``scheme`` and moves every coupling by
    ``gamma * (data moment - sampled moment)``, fields likewise.  The
    persistent scheme carries the ensemble across updates; the other
    schemes reinitialize it every update.  ``on_update`` receives the
    metric row of every update as it is produced, before any checkpoint
    of the same update, so checkpoint consumers always hold a metrics
    record consistent with the snapshot.  Checkpoints are emitted every
    ``checkpoint_every`` updates through ``on_checkpoint`` (or collected
    on the result).  Aborts with a flag if parameters stop being finite.
    """
    if gamma <= 0:
        raise ValueError(f"learning rate must be positive, got {gamma}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    if scheme == "data-init" and dataset is None:
        raise ValueError("data-init scheme requires a dataset")

    n = data_moments.n_vars
    iu = pair_indices(n)
    start = 0
    ensemble = None
    if resume is not None:
        model = resume.model.copy()
        start = resume.update_idx
        rng.load_state_dict(resume.rng_state)
        if resume.persistent_states is not None:
            ensemble = ChainEnsemble(states=resume.persistent_states.copy(),
                                     scheme=scheme, rng=rng, k_elapsed=0)
    else:
        model = model0.copy() if model0 is not None else BoltzmannModel.zeros(n)

    cols = {name: [] for name in ("update", "grad_norm", "e2_at_k", "coupling_error")}
    checkpoints = []
    aborted = False

    def snapshot(idx):
        state = TrainState(update_idx=idx, model=model.copy(),
                           persistent_states=None if ensemble is None
                           else ensemble.states.copy(),
                           rng_state=rng.state_dict())
        if on_checkpoint is not None:
            on_checkpoint(state)
        else:
            checkpoints.append(state)

    for t in range(start, n_updates):
        if scheme == "persistent":
            if ensemble is None:
                ensemble = make_ensemble(model, scheme, m_chains, rng)
            spins = ensemble.states
        else:
            ens = make_ensemble(model, scheme, m_chains, rng, dataset=dataset)
            spins = ens.states
        fields = spins @ model.j.T + model.h
        _run_sweeps(spins, fields, model, int(k), rng)

        sampled = moments_from_samples(spins)
        grad_pairs = data_moments.correlations - sampled.correlations
        grad_fields = data_moments.means - sampled.means
        grad_norm = max(np.abs(grad_pairs).max(), np.abs(grad_fields).max())

        cols["update"].append(t + 1)
        cols["grad_norm"].append(grad_norm)
        cols["e2_at_k"].append(correlation_error(sampled, data_moments))
        cols["coupling_error"].append(np.nan if j_true is None
                                      else coupling_error(model.j, j_true))
        if on_update is not None:
            on_update(t + 1, cols["coupling_error"][-1], cols["e2_at_k"][-1], grad_norm)

        model.j[iu] += gamma * grad_pairs
        model.j[iu[1], iu[0]] = model.j[iu]
        model.h += gamma * grad_fields
        if not (np.all(np.isfinite(model.j)) and np.all(np.isfinite(model.h))):
            aborted = True
            break
        if checkpoint_every > 0 and (t + 1) % checkpoint_every == 0:
            snapshot(t + 1)

    metrics = {name: np.array(vals) for name, vals in cols.items()}
    return TrainResult(model=model, metrics=metrics,
                       ensemble_states=None if ensemble is None else ensemble.states,
                       aborted=aborted, checkpoints=checkpoints)


def mf_correlation_k(j_spectrum, init_proj, k) -> np.ndarray:
    """Linearized (high-temperature) pair correlations after k sweeps,
    projected on the coupling eigenbasis.

    ``<x_a x_b>_k = S_ab + (<x_a x_b>_0 - S_ab) exp(-(2 - J_a - J_b) k)``
    with the stationary value ``S_ab = delta_ab / (1 - J_a)``; the decay
    toward S is fixed by the k = 0 boundary condition.  Valid while
    ``max J_a < 1``; ``init_proj`` defaults to the identity (uniform
    initialization).
    """
    lam = np.atleast_1d(np.asarray(j_spectrum, dtype=float))
    if lam.max() >= 1.0:
        raise ValueError(f"max eigenvalue {lam.max():.3f} >= 1: outside the "
                         "high-temperature domain")
    d = len(lam)
    c0 = np.eye(d) if init_proj is None else np.asarray(init_proj, dtype=float)
    stationary = np.diag(1.0 / (1.0 - lam))
    rate = 2.0 - lam[:, None] - lam[None, :]
    return stationary + (c0 - stationary) * np.exp(-rate * float(k))


def correlation_error(gen: MomentEstimate, data: MomentEstimate) -> float:
    """Mean squared pair-correlation mismatch
    ``sum_{i<j} (gen_ij - data_ij)^2 / C(N,2)``."""
    if gen.n_vars != data.n_vars:
        raise ValueError(f"dimension mismatch: {gen.n_vars} vs {data.n_vars}")
    diff = gen.correlations - data.correlations
    return float(np.mean(diff**2))


def coupling_error(j_inferred, j_true) -> float:
    """Root-mean-square coupling mismatch over the i<j upper triangle."""
    j_inferred = np.asarray(j_inferred, dtype=float)
    j_true = np.asarray(j_true, dtype=float)
    if j_inferred.shape != j_true.shape:
        raise ValueError(f"shape mismatch: {j_inferred.shape} vs {j_true.shape}")
    i, j = pair_indices(j_true.shape[0])
    return float(np.sqrt(np.mean((j_inferred[i, j] - j_true[i, j]) ** 2)))
