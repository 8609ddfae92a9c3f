"""Deterministic numerical primitives shared by the rest of the package.

This module deliberately avoids black-box library solvers for the three
core routines (symmetric eigendecomposition, fixed-step integration,
bracketed root finding) so that every result is bitwise reproducible and
the convergence behaviour is fully under our control.  Random number
streams are built on a counter-based generator so that distinct stream
ids never overlap.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Eigensystem",
    "OdeTrajectory",
    "RngStream",
    "BracketError",
    "sym_eig",
    "integrate_ode",
    "find_root",
    "rng_stream",
]


class BracketError(ValueError):
    """Raised when a root bracket does not contain a sign change."""


@dataclass(frozen=True)
class Eigensystem:
    """Spectral decomposition of a symmetric matrix.

    Attributes
    ----------
    eigenvalues : ndarray, shape (n,)
        Sorted ascending.
    eigenvectors : ndarray, shape (n, n)
        Orthonormal; column ``alpha`` pairs with ``eigenvalues[alpha]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Return V diag(w) V^T, the matrix represented by this system."""
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


@dataclass(frozen=True)
class OdeTrajectory:
    """Fixed-step trajectory of an initial value problem.

    ``times`` is strictly increasing.  When ``diverged`` is set the
    integration was halted early and the final sample may be the first
    offending state.
    """

    times: np.ndarray
    values: np.ndarray
    diverged: bool = False

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


def sym_eig(a, tol: float = 1e-12, max_sweeps: int = 64) -> Eigensystem:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Symmetric within ``tol`` (max absolute asymmetry).
    tol : float
        Symmetry rejection threshold.
    max_sweeps : int
        Iteration cap; quadratic convergence makes ~10 sweeps typical.

    Returns
    -------
    Eigensystem
        Eigenvalues ascending, orthonormal eigenvectors as columns.  The
        sign of each eigenvector is fixed so that its largest-magnitude
        component is positive (first such component on ties).

    Raises
    ------
    ValueError
        If the input is not symmetric, reporting the max asymmetry.
    RuntimeError
        If the off-diagonal norm has not converged after ``max_sweeps``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    asym = float(np.abs(a - a.T).max()) if a.size else 0.0
    if asym > tol:
        raise ValueError(f"matrix is not symmetric: max asymmetry {asym:.3e} > {tol:.1e}")

    n = a.shape[0]
    w = a.copy()
    v = np.eye(n)
    if n > 1:
        scale = float(np.abs(w).max()) or 1.0
        stop = 1e-15 * scale
        for _ in range(max_sweeps):
            off = np.sqrt(np.sum(np.tril(w, -1) ** 2))
            if off <= stop * n:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = w[p, q]
                    if abs(apq) <= stop:
                        continue
                    theta = (w[q, q] - w[p, p]) / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                    if theta == 0.0:
                        t = 1.0
                    c = 1.0 / np.hypot(t, 1.0)
                    s = t * c
                    rp, rq = w[p].copy(), w[q].copy()
                    w[p] = c * rp - s * rq
                    w[q] = s * rp + c * rq
                    cp, cq = w[:, p].copy(), w[:, q].copy()
                    w[:, p] = c * cp - s * cq
                    w[:, q] = s * cp + c * cq
                    w[p, q] = w[q, p] = 0.0
                    vp, vq = v[:, p].copy(), v[:, q].copy()
                    v[:, p] = c * vp - s * vq
                    v[:, q] = s * vp + c * vq
        else:
            raise RuntimeError(f"Jacobi sweep cap {max_sweeps} reached without convergence")

    eigenvalues = np.diag(w).copy()
    order = np.argsort(eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    vectors = v[:, order]
    for alpha in range(n):
        col = vectors[:, alpha]
        lead = int(np.argmax(np.abs(col)))
        if col[lead] < 0:
            vectors[:, alpha] = -col
    return Eigensystem(eigenvalues=eigenvalues, eigenvectors=vectors)


def integrate_ode(rhs, y0, t_end: float, dt: float, divergence_limit: float = 1e12,
                  halt=None) -> OdeTrajectory:
    """Integrate ``dy/dt = rhs(y)`` with the classical 4th-order scheme.

    The trajectory is sampled every ``dt`` from 0 to ``t_end``.
    Integration halts early, with the ``diverged`` flag set, when any
    component exceeds ``divergence_limit`` in magnitude or becomes
    non-finite, or when the optional ``halt(y)`` predicate returns True.

    Raises
    ------
    ValueError
        If ``dt <= 0`` or ``t_end < 0``.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t_end < 0:
        raise ValueError(f"t_end must be nonnegative, got {t_end}")
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    if not np.all(np.isfinite(np.atleast_1d(rhs(y)))):
        raise ValueError("rhs is not finite at y0")

    n_steps = int(round(t_end / dt))
    times = [0.0]
    values = [y.copy()]
    diverged = False
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for step in range(n_steps):
            k1 = np.atleast_1d(rhs(y))
            k2 = np.atleast_1d(rhs(y + 0.5 * dt * k1))
            k3 = np.atleast_1d(rhs(y + 0.5 * dt * k2))
            k4 = np.atleast_1d(rhs(y + dt * k3))
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            times.append((step + 1) * dt)
            values.append(y.copy())
            bad = not np.all(np.isfinite(y)) or np.any(np.abs(y) > divergence_limit)
            if bad or (halt is not None and halt(y)):
                diverged = True
                break
    return OdeTrajectory(times=np.array(times), values=np.array(values), diverged=diverged)


def find_root(g, a: float, b: float, tol: float = 1e-12) -> float:
    """Locate a root of ``g`` on ``[a, b]`` by bisection.

    Requires ``g(a) * g(b) < 0``; bisection then converges
    unconditionally for continuous ``g``.  The returned point is within
    ``tol`` of the bracketing interval's limit.

    Raises
    ------
    BracketError
        If the bracket carries no sign change.
    ValueError
        If ``tol <= 0`` or the bracket is empty.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    ga, gb = g(a), g(b)
    if ga == 0.0:
        return a
    if gb == 0.0:
        return b
    if np.sign(ga) == np.sign(gb):
        raise BracketError(f"no sign change on [{a}, {b}]: g(a)={ga:.3e}, g(b)={gb:.3e}")
    while b - a > tol:
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        gm = g(m)
        if gm == 0.0:
            return m
        if np.sign(gm) == np.sign(ga):
            a, ga = m, gm
        else:
            b = m
    return 0.5 * (a + b)


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Counter-based (Philox): distinct stream ids give statistically
    independent, non-overlapping streams for the same seed.  The draw
    counter ``position`` records how many variates have been produced;
    exact resumption goes through :meth:`state_dict` instead.
    """

    seed: int
    stream_id: int = 0
    position: int = field(default=0, init=False)

    def __post_init__(self):
        key = np.array([self.seed % (1 << 64), self.stream_id % (1 << 64)], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size=None) -> np.ndarray:
        """Uniform reals in [0, 1)."""
        out = self._gen.random(size=size)
        self.position += int(np.size(out))
        return out

    def normal(self, size=None) -> np.ndarray:
        """Standard Gaussian variates."""
        out = self._gen.standard_normal(size=size)
        self.position += int(np.size(out))
        return out

    def integers(self, low, high=None, size=None) -> np.ndarray:
        """Uniform integers in [low, high), numpy convention."""
        out = self._gen.integers(low, high=high, size=size)
        self.position += int(np.size(out))
        return out

    def choice_pm1(self, size=None) -> np.ndarray:
        """Uniform spins in {-1, +1} as float64."""
        return 2.0 * self.integers(0, 2, size=size).astype(float) - 1.0

    def spawn(self, offset: int) -> "RngStream":
        """Independent stream with ``stream_id + offset`` under the same seed."""
        return RngStream(self.seed, self.stream_id + offset)

    def state_dict(self) -> dict:
        """JSON-serializable snapshot of the full generator state."""
        state = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "stream_id": self.stream_id,
            "position": self.position,
            "counter": [int(x) for x in state["state"]["counter"]],
            "key": [int(x) for x in state["state"]["key"]],
            "buffer": [int(x) for x in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    def load_state_dict(self, payload: dict) -> None:
        """Restore a snapshot previously produced by :meth:`state_dict`."""
        if (payload["seed"], payload["stream_id"]) != (self.seed, self.stream_id):
            raise ValueError("state belongs to a different (seed, stream_id)")
        state = self._gen.bit_generator.state
        state["state"]["counter"] = np.array(payload["counter"], dtype=np.uint64)
        state["state"]["key"] = np.array(payload["key"], dtype=np.uint64)
        state["buffer"] = np.array(payload["buffer"], dtype=np.uint64)
        state["buffer_pos"] = payload["buffer_pos"]
        state["has_uint32"] = payload["has_uint32"]
        state["uinteger"] = payload["uinteger"]
        self._gen.bit_generator.state = state
        self.position = payload["position"]


def rng_stream(seed: int, stream_id: int = 0) -> RngStream:
    """Create a reproducible random stream for ``(seed, stream_id)``."""
    return RngStream(seed, stream_id)
