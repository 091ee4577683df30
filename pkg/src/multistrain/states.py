"""Joint epidemic-state space for K strains and its transition models.

A single strain is either endemic (0) or epidemic (1), so K strains jointly
occupy one of 2**K states.  State i encodes strain k's indicator in bit
k - 1, i.e. ``bit(i, k) = (i >> (k - 1)) & 1``.

Transitions couple the strains through a copula evaluated at the per-strain
marginal transition probabilities: from state i, strain k moves to the
epidemic phase with probability p_k if currently endemic and stays with
probability 1 - q_k if currently epidemic.  The joint probability of a
target bit pattern is the signed inclusion-exclusion sum of copula CDF
values over the strains that move (or stay) up, with the remaining
arguments saturated at one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .exceptions import NumericalError, ValidationError

# Default Gauss-Hermite order for the one-factor Gaussian copula integral.
# Exposed so sensitivity checks can rerun with a finer rule; accuracy
# degrades as any |loading| approaches 1 (see gaussian_factor_cdf notes).
GH_ORDER = 35

# Entries of a built transition matrix may undershoot zero by at most this
# much (floating point cancellation); anything worse is treated as a model
# violation rather than silently repaired.
NEGATIVITY_TOL = 1e-12

_FRANK_INDEPENDENCE_EPS = 1e-8


def bit(state: int | np.ndarray, strain: int) -> int | np.ndarray:
    """Epidemic indicator of ``strain`` (1-based) in joint ``state`` (0-based)."""
    if strain < 1:
        raise ValidationError(f"strain index is 1-based, got {strain}")
    return (np.asarray(state) >> (strain - 1)) & 1 if isinstance(state, np.ndarray) else (state >> (strain - 1)) & 1


def state_bits(n_strains: int) -> np.ndarray:
    """Bit table of shape (2**K, K); row i gives every strain's indicator in state i."""
    if not 1 <= n_strains <= 16:
        raise ValidationError(f"n_strains must be in [1, 16], got {n_strains}")
    states = np.arange(1 << n_strains)
    return (states[:, None] >> np.arange(n_strains)[None, :]) & 1


def _gh_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / weights.sum()
    return nodes, weights


def frank_cdf(u: np.ndarray, psi: float) -> np.ndarray:
    """Frank copula CDF, vectorized over leading axes of ``u``.

    Parameters
    ----------
    u : array of shape (..., K)
        Evaluation points with components in [0, 1].
    psi : float
        Dependence parameter.  Any nonzero real for K = 2; strictly
        positive for K >= 3 (the K-variate Frank construction is only a
        copula there for positive dependence).  |psi| below 1e-8 is
        evaluated as the independence product, the correct limit.

    Notes
    -----
    Computed as -log(1 - prod_k a(u_k) / a(1)^(K-1)) / psi with
    a(t) = 1 - exp(-psi * t); components equal to one are dropped
    analytically so margins are exact, and any component equal to zero
    short-circuits to zero.  For positive dependence the product is
    accumulated in log space: the direct ratio loses up to half its
    digits through cancellation once psi * u grows past ten or so.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[-1] < 1:
        raise ValidationError("u must have a trailing strain axis")
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValidationError("frank_cdf arguments must lie in [0, 1]")
    n_strains = u.shape[-1]
    if n_strains >= 3 and psi <= -_FRANK_INDEPENDENCE_EPS:
        raise ValidationError(
            f"Frank dependence must be positive for K >= 3, got psi={psi}"
        )
    if abs(psi) < _FRANK_INDEPENDENCE_EPS:
        return np.prod(u, axis=-1)

    active = u < 1.0
    n_active = active.sum(axis=-1)
    upper = np.where(active, u, 1.0).min(axis=-1)
    if psi <= -700.0:
        # exp(-psi) overflows; the copula is within double rounding of
        # its countermonotone limit.
        lower = np.where(active, u, 1.0).sum(axis=-1) - (n_active - 1)
        out = np.clip(lower, 0.0, None)
    elif psi > 0:
        with np.errstate(divide="ignore"):
            log_factors = np.where(active, _log1mexp(psi * u), 0.0)
        log_ratio = log_factors.sum(axis=-1) - (n_active - 1) * _log1mexp(psi)
        # log_ratio <= log a(1) < 0, so -expm1 of it stays positive;
        # for huge psi the ratio underflows to zero and the comonotone
        # ceiling min(u) takes over below.
        with np.errstate(divide="ignore"):
            out = -np.log(-np.expm1(log_ratio)) / psi
    else:
        factors = np.where(active, -np.expm1(-psi * u), 1.0)
        numer = np.prod(factors, axis=-1)
        denom = np.power(-np.expm1(-psi), n_active - 1)
        out = -np.log1p(-numer / denom) / psi
    out = np.where(np.isfinite(out), np.minimum(out, upper), upper)
    out = np.where(n_active == 0, 1.0, out)
    return np.where(np.any(u == 0.0, axis=-1), 0.0, out)


def _log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - exp(-x)) for x >= 0, accurate at both ends."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.log(-np.expm1(-x))
        large = np.log1p(-np.exp(-x))
    return np.where(x < np.log(2.0), small, large)


def gaussian_factor_cdf(
    u: np.ndarray, loadings: np.ndarray, order: int = GH_ORDER
) -> np.ndarray:
    """One-factor Gaussian copula CDF by Gauss-Hermite quadrature.

    The latent Gaussians share a single common factor,
    x_k = xi_k * w + sqrt(1 - xi_k**2) * eps_k, so the CDF is a
    one-dimensional integral of a product of conditional normal CDFs.
    Pairwise latent correlation is xi_k * xi_l, so mixed-sign loadings
    give negative dependence between those strains.

    Parameters
    ----------
    u : array of shape (..., K)
        Evaluation points in [0, 1].  Zeros short-circuit to zero and ones
        drop out of the product exactly.
    loadings : array of shape (K,)
        Factor loadings in [-1, 1].  At exactly +/-1 the conditional CDF
        collapses to a step function (comonotone/antimonotone limit).
    order : int
        Number of quadrature nodes.  The default matches the resolution
        used throughout the package.  The integrand steepens as |xi|
        approaches 1 and quadrature error grows to roughly 1e-2 near
        |xi| = 0.999 at the default order; increase the order when high
        accuracy at extreme loadings matters.
    """
    u = np.asarray(u, dtype=float)
    xi = np.asarray(loadings, dtype=float)
    if u.shape[-1] != xi.shape[-1]:
        raise ValidationError("loadings and u must share the strain axis length")
    if np.any(np.abs(xi) > 1.0):
        raise ValidationError("factor loadings must lie in [-1, 1]")
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValidationError("gaussian_factor_cdf arguments must lie in [0, 1]")

    nodes, weights = _gh_rule(order)
    cond = _factor_conditional_cdf(u, xi, nodes)
    value = np.einsum("n,...n->...", weights, np.prod(cond, axis=-1))
    return np.where(np.any(u == 0.0, axis=-1), 0.0, np.clip(value, 0.0, 1.0))


def _factor_conditional_cdf(
    u: np.ndarray, xi: np.ndarray, nodes: np.ndarray
) -> np.ndarray:
    """P(U_k <= u_k | factor = node), shaped (..., n_nodes, K).

    Components with u_k == 1 contribute an exact factor of one, and
    |xi| == 1 collapses to the indicator limit.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        x = ndtri(u)
    scale = np.sqrt(np.clip(1.0 - xi**2, 0.0, None))
    shifted = x[..., None, :] - xi[None, :] * nodes[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = shifted / scale[None, :]
    cond = ndtr(z)
    degenerate = scale == 0.0
    if np.any(degenerate):
        step = np.where(shifted > 0.0, 1.0, np.where(shifted < 0.0, 0.0, 0.5))
        cond = np.where(degenerate[None, :], step, cond)
    # Saturated arguments drop out exactly rather than through ndtr(inf).
    return np.where((u == 1.0)[..., None, :], 1.0, cond)


@dataclass(frozen=True)
class IndependenceCopula:
    """Product copula; coupling through it reproduces independent strains."""

    def cdf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.prod(u, axis=-1)


@dataclass(frozen=True)
class FrankCopula:
    """Exchangeable Frank copula with a single dependence parameter."""

    psi: float

    def cdf(self, u: np.ndarray) -> np.ndarray:
        return frank_cdf(u, self.psi)


@dataclass(frozen=True)
class GaussianFactorCopula:
    """One-factor Gaussian copula with per-strain loadings."""

    loadings: tuple[float, ...]
    order: int = GH_ORDER

    def __post_init__(self) -> None:
        object.__setattr__(self, "loadings", tuple(float(v) for v in self.loadings))
        if any(abs(v) > 1.0 for v in self.loadings):
            raise ValidationError("factor loadings must lie in [-1, 1]")

    def cdf(self, u: np.ndarray) -> np.ndarray:
        return gaussian_factor_cdf(u, np.asarray(self.loadings), self.order)


Copula = IndependenceCopula | FrankCopula | GaussianFactorCopula


def _marginal_up_probs(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-state marginal probabilities that each strain is epidemic next.

    Returns shape (2**K, K): from state i, strain k lands in the epidemic
    phase with probability p_k (currently endemic) or 1 - q_k (currently
    epidemic).
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if p.shape != q.shape or p.ndim != 1:
        raise ValidationError("p and q must be 1-d arrays of equal length")
    if np.any((p < 0) | (p > 1) | (q < 0) | (q > 1)):
        raise ValidationError("transition probabilities must lie in [0, 1]")
    bits = state_bits(p.size)
    return np.where(bits == 1, 1.0 - q[None, :], p[None, :])


def build_independent(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Joint transition matrix for strains that switch independently.

    The result is the Kronecker product of the per-strain 2x2 chains,
    ordered so strain 1 occupies the least significant bit.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    _marginal_up_probs(p, q)  # shared validation
    joint = np.ones((1, 1))
    for pk, qk in zip(p, q):
        single = np.array([[1.0 - pk, pk], [qk, 1.0 - qk]])
        joint = np.kron(single, joint)
    return joint


def build_copula_coupled(
    p: np.ndarray,
    q: np.ndarray,
    copula: Copula,
    *,
    negativity_tol: float = NEGATIVITY_TOL,
) -> np.ndarray:
    """Joint transition matrix with strain moves coupled through a copula.

    Row i evaluates the copula at the per-strain marginal up-move
    probabilities and assembles each target pattern's probability by
    inclusion-exclusion: the signed sum over CDF values whose arguments
    are the marginals on the moving set and one elsewhere.

    Entries more negative than ``negativity_tol`` raise
    :class:`NumericalError` (the parameters do not define a proper joint
    chain at working precision); tiny negative roundoff is clamped to
    zero without renormalizing.
    """
    up = _marginal_up_probs(p, q)
    n_strains = up.shape[1]
    if isinstance(copula, IndependenceCopula):
        # The signed sum telescopes to the factored product form, so the
        # independent builder is the exact evaluation of it.
        return build_independent(p, q)
    if isinstance(copula, FrankCopula):
        if n_strains >= 3 and copula.psi <= -_FRANK_INDEPENDENCE_EPS:
            raise ValidationError(
                "Frank dependence must be positive for K >= 3, "
                f"got psi={copula.psi}"
            )
        joint = _build_by_inclusion_exclusion(up, copula)
    elif isinstance(copula, GaussianFactorCopula):
        joint = _build_factor_coupled(up, copula)
    else:
        joint = _build_by_inclusion_exclusion(up, copula)

    low = joint.min()
    if low < -negativity_tol:
        i, j = np.unravel_index(np.argmin(joint), joint.shape)
        raise NumericalError(
            f"joint transition entry ({i}, {j}) = {joint[i, j]:.3e} is negative "
            "beyond tolerance; the copula parameters do not define a proper "
            "coupled chain at working precision"
        )
    return np.clip(joint, 0.0, 1.0)


def _build_by_inclusion_exclusion(up: np.ndarray, copula: Copula) -> np.ndarray:
    n_states, n_strains = up.shape
    masks = np.arange(n_states)
    mask_bits = state_bits(n_strains).astype(bool)

    # One batched CDF call covers every (row, argument-mask) combination:
    # points[i, m, k] is up[i, k] when mask m includes strain k, else 1.
    points = np.where(mask_bits[None, :, :], up[:, None, :], 1.0)
    cdf = copula.cdf(points.reshape(-1, n_strains)).reshape(n_states, n_states)

    joint = np.zeros((n_states, n_states))
    for j in range(n_states):
        moving = j
        complement = masks[(masks & moving) == 0]
        signs = np.where(mask_bits[complement].sum(axis=1) % 2 == 0, 1.0, -1.0)
        joint[:, j] = cdf[:, moving | complement] @ signs
    return joint


def _build_factor_coupled(up: np.ndarray, copula: GaussianFactorCopula) -> np.ndarray:
    """Factor-copula rows via the conditional-independence factorization.

    Conditional on the common factor the strain moves are independent, so
    each row is the quadrature average of products of conditional
    Bernoulli probabilities.  This is term-for-term the same signed
    inclusion-exclusion sum (the cancellation is done analytically inside
    each quadrature node), but every intermediate lies in [0, 1]: entries
    cannot go negative and rows sum to one at machine precision even at
    extreme loadings.
    """
    n_states, n_strains = up.shape
    xi = np.asarray(copula.loadings, dtype=float)
    nodes, weights = _gh_rule(copula.order)
    cond_up = _factor_conditional_cdf(up, xi, nodes)  # (S, n_nodes, K)
    bits = state_bits(n_strains)  # (S, K)
    cond_pattern = np.where(
        bits[None, :, None, :] == 1, cond_up[:, None, :, :], 1.0 - cond_up[:, None, :, :]
    )
    return np.einsum("n,ijn->ij", weights, np.prod(cond_pattern, axis=-1))


def validate_transition_matrix(
    joint: np.ndarray, *, row_tol: float = 1e-10
) -> np.ndarray:
    """Check a square matrix is row-stochastic; returns it as float array."""
    joint = np.asarray(joint, dtype=float)
    if joint.ndim != 2 or joint.shape[0] != joint.shape[1]:
        raise ValidationError(f"transition matrix must be square, got {joint.shape}")
    if not np.all(np.isfinite(joint)):
        raise ValidationError("transition matrix has non-finite entries")
    if joint.min() < -NEGATIVITY_TOL or joint.max() > 1.0 + NEGATIVITY_TOL:
        raise ValidationError("transition entries must lie in [0, 1]")
    rows = joint.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > row_tol:
        raise ValidationError(
            f"rows must sum to one (worst deviation {np.max(np.abs(rows - 1.0)):.3e})"
        )
    return np.clip(joint, 0.0, 1.0)


def stationary_distribution(
    joint: np.ndarray, *, residual_tol: float = 1e-10
) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix.

    Solves the balance equations with the normalization constraint
    replacing one redundant row.  A chain whose rank deficiency exceeds
    the single expected dimension (for example two absorbing classes)
    makes the system singular or the residual large; both raise
    :class:`NumericalError`.
    """
    joint = np.asarray(joint, dtype=float)
    n = joint.shape[0]
    if n == 1:
        return np.ones(1)
    system = joint.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        dist = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "stationary distribution is not unique (transition matrix is "
            "rank-deficient beyond one dimension)"
        ) from exc
    residual = np.max(np.abs(dist @ joint - dist))
    if not np.all(np.isfinite(dist)) or residual > residual_tol:
        raise NumericalError(
            f"stationary solve left residual {residual:.3e}; the chain may "
            "have additional invariant subspaces"
        )
    if dist.min() < -1e-10:
        raise NumericalError(
            f"stationary solve produced negative mass {dist.min():.3e}"
        )
    dist = np.clip(dist, 0.0, None)
    return dist / dist.sum()
