"""Training data generation, storage, and moment computation.

Spin datasets are written as a diffable text format: a versioned header
carrying the full generation provenance, then one sample per line as
``+``/``-`` characters.  Real-valued datasets are decimal CSV.  Every
generator also emits its parameters to a sidecar provenance file, and
regeneration from identical provenance is bit-identical.
"""

import json
from dataclasses import dataclass

import numpy as np

from .boltzmann import BoltzmannModel, _run_sweeps
from .moments import MomentEstimate, moments_from_samples
from .numerics import rng_stream, sym_eig

__all__ = [
    "SpinDataset",
    "lattice_couplings",
    "generate_ising2d",
    "generate_gaussian",
    "data_moments",
    "save_spin_dataset",
    "load_spin_dataset",
    "save_gaussian_dataset",
    "load_gaussian_dataset",
    "save_model",
    "load_model",
]

_SPIN_MAGIC = "ebmlab-spins 1"
_REAL_MAGIC = "ebmlab-reals 1"
_MODEL_MAGIC = "ebmlab-model 1"


@dataclass(frozen=True)
class SpinDataset:
    """Samples in {-1, +1} plus the parameters that generated them."""

    samples: np.ndarray
    provenance: dict

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_vars(self) -> int:
        return self.samples.shape[1]


def lattice_couplings(l_side: int, beta: float) -> np.ndarray:
    """Couplings of a periodic square lattice: J_ij = beta per nearest
    neighbor bond, zero elsewhere.  Site (x, y) maps to index x*L + y.
    Bonds accumulate, so the doubled wrap bonds of L = 2 carry 2 beta."""
    if l_side < 2:
        raise ValueError(f"lattice side must be at least 2, got {l_side}")
    n = l_side * l_side
    j = np.zeros((n, n))
    for x in range(l_side):
        for y in range(l_side):
            a = x * l_side + y
            for b in (((x + 1) % l_side) * l_side + y, x * l_side + (y + 1) % l_side):
                j[a, b] += beta
                j[b, a] += beta
    return j


def generate_ising2d(l_side: int, beta: float, n_samples: int,
                     equil_sweeps: int = 1000, gap_sweeps: int = 10,
                     seed: int = 0) -> SpinDataset:
    """Equilibrium samples of the periodic 2D lattice model at coupling
    beta, zero field, from a single random-site heat-bath chain.

    The chain burns in for ``equil_sweeps`` sweeps (one sweep is L^2
    site updates), then emits one sample every ``gap_sweeps`` sweeps.
    Decorrelation adequacy is a tested property, not an assumption.
    """
    model = BoltzmannModel(j=lattice_couplings(l_side, beta),
                           h=np.zeros(l_side * l_side))
    rng = rng_stream(seed, 0)
    chain = rng.choice_pm1(size=(1, model.n_spins))
    fields = chain @ model.j.T + model.h
    _run_sweeps(chain, fields, model, equil_sweeps, rng)
    samples = np.empty((n_samples, model.n_spins), dtype=np.int8)
    for s in range(n_samples):
        _run_sweeps(chain, fields, model, gap_sweeps, rng)
        samples[s] = chain[0].astype(np.int8)
    provenance = {
        "generator": "ising2d-heatbath-randomsite",
        "L": l_side,
        "beta": beta,
        "n_samples": n_samples,
        "equil_sweeps": equil_sweeps,
        "gap_sweeps": gap_sweeps,
        "seed": seed,
    }
    return SpinDataset(samples=samples, provenance=provenance)


def generate_gaussian(j_true, n_samples: int, seed: int = 0) -> np.ndarray:
    """Zero-mean Gaussian samples with covariance inverse to ``j_true``.

    ``j_true`` is a positive definite matrix or a vector of strictly
    positive mode eigenvalues (independent modes).
    """
    j_true = np.asarray(j_true, dtype=float)
    rng = rng_stream(seed, 0)
    if j_true.ndim == 1:
        if j_true.min() <= 0:
            raise ValueError(f"spectrum must be strictly positive, min {j_true.min()}")
        z = rng.normal(size=(n_samples, len(j_true)))
        return z / np.sqrt(j_true)
    system = sym_eig(j_true)
    if system.eigenvalues.min() <= 0:
        raise ValueError("coupling matrix must be positive definite, "
                         f"min eigenvalue {system.eigenvalues.min():.3e}")
    z = rng.normal(size=(n_samples, j_true.shape[0]))
    return (z / np.sqrt(system.eigenvalues)) @ system.eigenvectors.T


def data_moments(dataset) -> MomentEstimate:
    """Means and upper-triangle second moments, with standard errors."""
    samples = dataset.samples if isinstance(dataset, SpinDataset) else dataset
    return moments_from_samples(np.asarray(samples, dtype=float))


def _write_sidecar(path, provenance: dict) -> None:
    with open(f"{path}.provenance", "w", encoding="utf-8") as fh:
        for key in sorted(provenance):
            fh.write(f"{key} = {json.dumps(provenance[key])}\n")


def save_spin_dataset(dataset: SpinDataset, path) -> None:
    """Write the text format: header, provenance, one +/- line per sample."""
    samples = dataset.samples
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_SPIN_MAGIC + "\n")
        fh.write(f"n {samples.shape[0]}\n")
        fh.write(f"N {samples.shape[1]}\n")
        for key in sorted(dataset.provenance):
            fh.write(f"provenance.{key} {json.dumps(dataset.provenance[key])}\n")
        for row in samples:
            fh.write("".join("+" if s > 0 else "-" for s in row) + "\n")
    _write_sidecar(path, dataset.provenance)


def load_spin_dataset(path) -> SpinDataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _SPIN_MAGIC:
        raise ValueError(f"{path}: not a spin dataset file")
    n = int(lines[1].split()[1])
    n_vars = int(lines[2].split()[1])
    provenance = {}
    row = 3
    while lines[row].startswith("provenance."):
        key, _, raw = lines[row].partition(" ")
        provenance[key[len("provenance."):]] = json.loads(raw)
        row += 1
    body = lines[row:row + n]
    samples = np.empty((n, n_vars), dtype=np.int8)
    for s, line in enumerate(body):
        if len(line) != n_vars:
            raise ValueError(f"{path}: sample {s} has length {len(line)}, expected {n_vars}")
        samples[s] = [1 if ch == "+" else -1 for ch in line]
    return SpinDataset(samples=samples, provenance=provenance)


def save_gaussian_dataset(samples: np.ndarray, path, provenance: dict = None) -> None:
    """Decimal CSV with one row per sample; floats keep full precision."""
    samples = np.asarray(samples, dtype=float)
    provenance = provenance or {}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_REAL_MAGIC + "\n")
        fh.write(",".join(f"x_{d}" for d in range(samples.shape[1])) + "\n")
        for row in samples:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    _write_sidecar(path, provenance)


def load_gaussian_dataset(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _REAL_MAGIC:
        raise ValueError(f"{path}: not a real-valued dataset file")
    return np.array([[float(v) for v in line.split(",")] for line in lines[2:] if line])


def save_model(model, path) -> None:
    """Versioned text checkpoint: N, then the row-major upper-triangle
    couplings and the fields, one decimal per line at 17 significant
    digits (exact float64 round trip)."""
    j = model.j if hasattr(model, "j") else model.couplings
    h = model.h if hasattr(model, "h") else model.fields
    n = len(h)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MODEL_MAGIC + "\n")
        fh.write(f"N {n}\n")
        for i in range(n):
            for jdx in range(i + 1, n):
                fh.write(f"{j[i, jdx]:.17g}\n")
        for i in range(n):
            fh.write(f"{h[i]:.17g}\n")


def load_model(path) -> BoltzmannModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    n = int(lines[1].split()[1])
    n_pairs = n * (n - 1) // 2
    values = [float(v) for v in lines[2:2 + n_pairs + n]]
    j = np.zeros((n, n))
    pos = 0
    for i in range(n):
        for jdx in range(i + 1, n):
            j[i, jdx] = j[jdx, i] = values[pos]
            pos += 1
    return BoltzmannModel(j=j, h=np.array(values[pos:pos + n]))
