"""Moment containers shared by the sampling, dataset, and exact modules.

Pair correlations are stored as an upper-triangle vector in row-major
(i < j) order; :func:`pair_indices` fixes the convention once for the
whole package.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["MomentEstimate", "pair_indices", "moments_from_samples", "pack_pairs", "unpack_pairs"]


def pair_indices(n: int):
    """Row and column index arrays of the i<j upper triangle."""
    return np.triu_indices(n, 1)


def pack_pairs(matrix: np.ndarray) -> np.ndarray:
    """Upper-triangle (i<j) entries of a square matrix as a vector."""
    i, j = pair_indices(matrix.shape[0])
    return matrix[i, j]


def unpack_pairs(values: np.ndarray, n: int) -> np.ndarray:
    """Symmetric zero-diagonal matrix built from an upper-triangle vector."""
    out = np.zeros((n, n))
    i, j = pair_indices(n)
    out[i, j] = values
    out[j, i] = values
    return out


@dataclass(frozen=True)
class MomentEstimate:
    """First and second moments of a spin or real-valued ensemble.

    Attributes
    ----------
    means : ndarray, shape (n,)
    correlations : ndarray, shape (n*(n-1)/2,)
        Raw second moments <x_i x_j> over the i<j upper triangle.
    n_samples : int
        0 marks exact (enumerated) moments.
    se_means, se_correlations : ndarray
        Standard errors; zero for exact moments.
    """

    means: np.ndarray
    correlations: np.ndarray
    n_samples: int
    se_means: np.ndarray
    se_correlations: np.ndarray

    @property
    def n_vars(self) -> int:
        return len(self.means)

    def as_vector(self) -> np.ndarray:
        """Concatenated (correlations, means) vector, the parameter order
        used by gradients over (J, h)."""
        return np.concatenate([self.correlations, self.means])

    def correlation_matrix(self) -> np.ndarray:
        """Full second-moment matrix with unit diagonal (spin variables)."""
        out = unpack_pairs(self.correlations, self.n_vars)
        np.fill_diagonal(out, 1.0)
        return out

    @staticmethod
    def exact(means: np.ndarray, correlations: np.ndarray) -> "MomentEstimate":
        means = np.asarray(means, dtype=float)
        correlations = np.asarray(correlations, dtype=float)
        return MomentEstimate(
            means=means,
            correlations=correlations,
            n_samples=0,
            se_means=np.zeros_like(means),
            se_correlations=np.zeros_like(correlations),
        )


def moments_from_samples(samples: np.ndarray) -> MomentEstimate:
    """Means and pair second moments, with standard errors, of an
    (n_samples, n_vars) array.

    Reductions run in fixed (sample-major) order so results are
    reproducible bit for bit.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError(f"expected a nonempty (n_samples, n_vars) array, got {samples.shape}")
    n, _ = samples.shape
    means = samples.mean(axis=0)
    corr_full = (samples.T @ samples) / n
    i, j = pair_indices(samples.shape[1])
    correlations = corr_full[i, j]
    if n > 1:
        se_means = samples.std(axis=0, ddof=1) / np.sqrt(n)
        prod = samples[:, i] * samples[:, j]
        se_correlations = prod.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        se_means = np.zeros_like(means)
        se_correlations = np.zeros_like(correlations)
    return MomentEstimate(means=means, correlations=correlations, n_samples=n,
                          se_means=se_means, se_correlations=se_correlations)
