"""Prior building blocks: intrinsic GMRF structures and scalar densities.

The three latent surfaces get intrinsic Gaussian Markov random field
priors: a second-order random walk for the long-term trend, a cyclic
first-order walk for the seasonal pattern, and an intrinsic CAR for the
spatial field.  Each is summarized by a structure matrix and its rank
deficiency; densities are evaluated unnormalized but keep the precision
power so conjugate precision updates and model comparison stay correct.

Scalar priors return log densities and signal out-of-support arguments
with ``-inf`` rather than raising, which lets Metropolis moves reject
invalid proposals uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.special import betaln, gammaln

from . import states
from .exceptions import ValidationError


@dataclass(frozen=True)
class StructureMatrix:
    """A GMRF structure matrix together with its known rank deficiency."""

    matrix: np.ndarray
    rank_deficiency: int
    name: str = ""

    @property
    def order(self) -> int:
        return self.matrix.shape[0]


def rw2_structure(n: int) -> StructureMatrix:
    """Second-order random-walk structure on n ordered points.

    Equals D'D for the (n-2) x n second-difference operator D, a
    pentadiagonal matrix whose null space holds constants and linear
    trends (rank deficiency two).
    """
    if n < 3:
        raise ValidationError(f"second-order walk needs at least 3 points, got {n}")
    diff2 = np.zeros((n - 2, n))
    rows = np.arange(n - 2)
    diff2[rows, rows] = 1.0
    diff2[rows, rows + 1] = -2.0
    diff2[rows, rows + 2] = 1.0
    return StructureMatrix(diff2.T @ diff2, rank_deficiency=2, name="rw2")


def crw1_structure(n: int) -> StructureMatrix:
    """Cyclic first-order random-walk structure on n seasonal positions.

    Circulant with 2 on the diagonal and -1 between cyclic neighbours;
    only constants are in the null space (rank deficiency one).
    """
    if n < 3:
        raise ValidationError(f"cyclic walk needs at least 3 positions, got {n}")
    matrix = 2.0 * np.eye(n)
    idx = np.arange(n)
    matrix[idx, (idx + 1) % n] = -1.0
    matrix[idx, (idx - 1) % n] = -1.0
    return StructureMatrix(matrix, rank_deficiency=1, name="crw1")


def icar_structure(adjacency: np.ndarray) -> StructureMatrix:
    """Intrinsic CAR structure from a symmetric 0/1 adjacency matrix.

    The matrix is the graph Laplacian: neighbour counts on the diagonal
    and -1 for each adjacent pair.  Graphs with isolated locations or
    more than one connected component are rejected; modelling disconnected
    regions jointly would silently change what the precision means.
    """
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValidationError(f"adjacency must be square, got {adj.shape}")
    if not np.array_equal(adj, adj.T):
        raise ValidationError("adjacency must be symmetric")
    if not np.isin(adj, (0, 1)).all():
        raise ValidationError("adjacency entries must be 0 or 1")
    if np.any(np.diag(adj) != 0):
        raise ValidationError("adjacency must have a zero diagonal")
    adj = adj.astype(float)
    degrees = adj.sum(axis=1)
    if np.any(degrees == 0):
        isolated = np.flatnonzero(degrees == 0)
        raise ValidationError(
            f"locations {isolated.tolist()} have no neighbours; an intrinsic "
            "CAR prior cannot smooth an isolated location"
        )
    n_components, _ = connected_components(adj, directed=False)
    if n_components != 1:
        raise ValidationError(
            f"adjacency graph has {n_components} connected components; "
            "fit disconnected regions separately"
        )
    return StructureMatrix(np.diag(degrees) - adj, rank_deficiency=1, name="icar")


def igmrf_logdensity(x: np.ndarray, kappa: float, structure: StructureMatrix) -> float:
    """Unnormalized intrinsic GMRF log density.

    ((n - k) / 2) * log(kappa) - (kappa / 2) * x' R x, where k is the
    structure's rank deficiency.  Constant factors are dropped but the
    precision power is kept.  The argument is assumed centred (the
    sampler works on sum-to-zero fields); the density formula itself is
    well defined for any x.
    """
    if kappa <= 0.0:
        raise ValidationError(f"precision must be positive, got {kappa}")
    x = np.asarray(x, dtype=float)
    if x.shape != (structure.order,):
        raise ValidationError(
            f"field has shape {x.shape}, structure expects ({structure.order},)"
        )
    quad = float(x @ structure.matrix @ x)
    n_free = structure.order - structure.rank_deficiency
    return 0.5 * n_free * np.log(kappa) - 0.5 * kappa * quad


def igmrf_gradient(x: np.ndarray, kappa: float, structure: StructureMatrix) -> np.ndarray:
    """Gradient of :func:`igmrf_logdensity` with respect to the field."""
    return -kappa * (structure.matrix @ np.asarray(x, dtype=float))


def sample_igmrf(
    structure: StructureMatrix, kappa: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw a field from the proper complement of an intrinsic GMRF.

    Mass on the null space (overall level, and linear drift for the
    second-order walk) is improper, so the draw lives in the span of the
    positive-eigenvalue directions: component j gets variance
    1 / (kappa * eigenvalue_j).  The result is orthogonal to the null
    space, hence sums to zero.
    """
    if kappa <= 0.0:
        raise ValidationError(f"precision must be positive, got {kappa}")
    eigval, eigvec = np.linalg.eigh(structure.matrix)
    keep = eigval > 1e-10 * eigval.max()
    if keep.sum() != structure.order - structure.rank_deficiency:
        raise ValidationError(
            "structure matrix rank does not match its declared deficiency"
        )
    z = rng.standard_normal(int(keep.sum()))
    return eigvec[:, keep] @ (z / np.sqrt(kappa * eigval[keep]))


def _log_beta_pdf(x: float, a: float, b: float) -> float:
    if not 0.0 < x < 1.0:
        return -np.inf
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)


def _log_gamma_pdf(x: float, shape: float, rate: float) -> float:
    if x <= 0.0:
        return -np.inf
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of every scalar prior in the model.

    Defaults encode: rare epidemic onsets (mean 1/12 per month),
    epidemic persistence centred at a half (mean duration two months),
    positive epidemic risk effects, baseline rates spread diffusely
    around exp(-15), and vague precisions ordered so the trend is
    smoothest.  The Frank dependence gets a wide normal when both signs
    are possible (two strains) and an exponential when positivity is
    required (three or more).
    """

    onset_beta: tuple[float, float] = (1.0, 11.0)
    persistence_beta: tuple[float, float] = (6.0, 6.0)
    risk_gamma: tuple[float, float] = (2.0, 2.0)
    baseline_gamma: tuple[float, float] = (0.01, 0.01 * float(np.exp(15.0)))
    frank_normal_sd: float = 10.0
    frank_exponential_rate: float = 0.5
    trend_precision_gamma: tuple[float, float] = (1.0, 1e-4)
    season_precision_gamma: tuple[float, float] = (1.0, 1e-3)
    spatial_precision_gamma: tuple[float, float] = (1.0, 1e-2)
    dirichlet_total_mass: float = 1.0 / 12.0

    def log_onset(self, p: float) -> float:
        """Log prior of a per-month epidemic onset probability."""
        return _log_beta_pdf(p, *self.onset_beta)

    def log_persistence(self, q: float) -> float:
        """Log prior of a per-month epidemic termination probability."""
        return _log_beta_pdf(q, *self.persistence_beta)

    def log_risk(self, beta: float) -> float:
        """Log prior of an epidemic log-risk increment (positive support)."""
        return _log_gamma_pdf(beta, *self.risk_gamma)

    def log_baseline(self, a: float) -> float:
        """Log prior of a strain's log baseline rate.

        The gamma prior sits on the rate scale exp(a); the change of
        variables contributes the log Jacobian a.
        """
        if not np.isfinite(a) or a > 690.0:
            # exp(a) overflows float64 beyond ~709 and the density is
            # already vanishingly small there
            return -np.inf
        return _log_gamma_pdf(float(np.exp(a)), *self.baseline_gamma) + a

    def log_frank(self, psi: float, n_strains: int) -> float:
        """Log prior of the Frank dependence parameter."""
        if n_strains <= 2:
            sd = self.frank_normal_sd
            return -0.5 * (psi / sd) ** 2 - np.log(sd) - 0.5 * np.log(2.0 * np.pi)
        if psi <= 0.0:
            return -np.inf
        rate = self.frank_exponential_rate
        return np.log(rate) - rate * psi

    def log_loading(self, xi: float) -> float:
        """Log prior of a free factor loading, uniform on (-1, 1)."""
        if not -1.0 < xi < 1.0:
            return -np.inf
        return -np.log(2.0)

    def precision_gamma(self, component: str) -> tuple[float, float]:
        try:
            return {
                "trend": self.trend_precision_gamma,
                "season": self.season_precision_gamma,
                "spatial": self.spatial_precision_gamma,
            }[component]
        except KeyError:
            raise ValidationError(f"unknown precision component {component!r}") from None

    def log_precision(self, kappa: float, component: str) -> float:
        return _log_gamma_pdf(kappa, *self.precision_gamma(component))

    def log_general_rows(self, matrix: np.ndarray, weights: np.ndarray) -> float:
        """Log prior of a general transition matrix: independent Dirichlet rows.

        Concentrations below one put unbounded density at the simplex
        boundary, so rows touching it (any entry at or below zero, or at
        or above one) are scored ``-inf`` instead of +inf spikes.
        """
        matrix = np.asarray(matrix, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if matrix.shape != weights.shape:
            raise ValidationError("matrix and Dirichlet weights must share a shape")
        if np.any(matrix <= 0.0) or np.any(matrix >= 1.0):
            return -np.inf
        per_row = (
            gammaln(weights.sum(axis=1))
            - gammaln(weights).sum(axis=1)
            + ((weights - 1.0) * np.log(matrix)).sum(axis=1)
        )
        return float(per_row.sum())


def dirichlet_prior_weights(
    n_strains: int, config: PriorConfig | None = None
) -> np.ndarray:
    """Prior concentrations for the general variant's transition rows.

    Each row's concentration vector is the prior-scale multiple of the
    expected joint transition matrix under the shared-rate independent
    model with onset and persistence integrated over their priors.  The
    expectation factors over strains into beta moments:
    E[p^a (1-p)^b] = B(alpha + a, beta + b) / B(alpha, beta).
    """
    config = config or PriorConfig()
    bits = states.state_bits(n_strains)
    n_states = bits.shape[0]
    a1, b1 = config.onset_beta
    a2, b2 = config.persistence_beta
    # counts[i, j] of strain-level moves by type, vectorized over cells
    from_bits = bits[:, None, :]
    to_bits = bits[None, :, :]
    n_on = ((from_bits == 0) & (to_bits == 1)).sum(axis=2)
    n_off = ((from_bits == 0) & (to_bits == 0)).sum(axis=2)
    n_stop = ((from_bits == 1) & (to_bits == 0)).sum(axis=2)
    n_stay = ((from_bits == 1) & (to_bits == 1)).sum(axis=2)
    log_expected = (
        betaln(a1 + n_on, b1 + n_off)
        - betaln(a1, b1)
        + betaln(a2 + n_stop, b2 + n_stay)
        - betaln(a2, b2)
    )
    return config.dirichlet_total_mass * np.exp(log_expected)
