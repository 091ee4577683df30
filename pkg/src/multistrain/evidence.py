"""Marginal likelihood estimation and model probabilities.

Everything here works in a fully unconstrained parameterization: the
posterior over (baselines, risk increments, transition parameters,
smoothing precisions, smooth surfaces) is mapped through elementwise
bijections to R^d, a heavy-tailed multivariate t proposal is
moment-matched to the transformed posterior draws, and the marginal
likelihood is estimated either by plain importance sampling or by the
iterated optimal-bridge fixed point.  Log densities carry the change of
variables, so both estimators are invariant in expectation to the
transform convention.

The surface smoothing priors are evaluated without their normalizing
constants (the precision power term is kept, since it varies).  The
resulting log evidence is therefore shifted by a constant that is
identical across model variants sharing the same surfaces, which is the
use case here: differences and posterior model probabilities are
unaffected.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_t

from .exceptions import NumericalError, ValidationError
from .likelihood import IncidencePanel, LikelihoodEngine, RiskComponents
from .mcmc import (
    PosteriorDraws,
    SURFACES,
    default_structures,
    log_unnormalized_posterior,
)
from .models import TransitionModel, free_transition_parameters, initial_model
from .priors import PriorConfig
from . import transforms


@dataclass(frozen=True)
class EvidenceEstimate:
    """A log marginal likelihood with its spread over repeated runs."""

    log_ml: float
    se: float
    method: str
    n_repeats: int

    def __post_init__(self) -> None:
        if self.method not in ("IS", "BS"):
            raise ValidationError("method must be 'IS' or 'BS'")
        if self.n_repeats < 1:
            raise ValidationError("n_repeats must be at least 1")
        if np.isfinite(self.se) and self.se < 0.0:
            raise ValidationError("se must be nonnegative")


class ParameterMap:
    """Bijection between model parameters and an unconstrained vector.

    Layout, in order: raw log baselines a_k; log risk increments; the
    free transition scalars (logit for rates, log or identity for the
    dependence parameter, probit-type for loadings); for the general
    variant each transition row through an additive-log-ratio map; log
    smoothing precisions for every active surface; and finally each
    active surface expressed in its orthonormal sum-to-zero basis.

    ``simplex_mode="raw"`` keeps general-variant rows as their plain
    entries instead of the ALR coordinates.  That embedding is not a
    bijection onto R^d: a full-dimensional proposal almost never lands
    back on the simplex, so importance weights collapse.  The mode
    exists to demonstrate that failure; use the default for real work.
    """

    def __init__(
        self,
        panel: IncidencePanel,
        variant: str,
        prior: PriorConfig | None = None,
        adjacency: np.ndarray | None = None,
        simplex_mode: str = "alr",
    ):
        if simplex_mode not in ("alr", "raw"):
            raise ValidationError("simplex_mode must be 'alr' or 'raw'")
        self.panel = panel
        self.variant = variant
        self.prior = prior or PriorConfig()
        self.simplex_mode = simplex_mode
        self.model0 = initial_model(variant, panel.n_strains)
        self.structures = default_structures(panel, adjacency)
        self.engine = LikelihoodEngine(panel, self.model0.n_states)
        self.bases = {
            name: transforms.sum_zero_basis(struct.order)
            for name, struct in self.structures.items()
            if struct is not None
        }
        self.free_scalars = free_transition_parameters(self.model0)
        self._template_precisions = {name: 10.0 for name in SURFACES}

        K = panel.n_strains
        self._segments: list[tuple[str, int]] = [("baseline", K)]
        if self.model0.spec.has_epidemics:
            self._segments.append(("risk", K))
        if self.free_scalars:
            self._segments.append(("scalars", len(self.free_scalars)))
        if variant == "general":
            S = self.model0.n_states
            width = S if simplex_mode == "raw" else S - 1
            self._segments.append(("rows", S * width))
        active = [name for name in SURFACES if self.structures[name] is not None]
        self._segments.append(("precisions", len(active)))
        for name in active:
            self._segments.append((f"surface_{name}", self.bases[name].shape[1]))
        self._active_surfaces = active

    @property
    def dimension(self) -> int:
        return sum(size for _, size in self._segments)

    # -- packing -------------------------------------------------------

    def pack(
        self,
        components: RiskComponents,
        model: TransitionModel,
        precisions: dict[str, float],
    ) -> np.ndarray:
        parts = []
        for name, _size in self._segments:
            if name == "baseline":
                parts.append(np.asarray(components.baseline, float))
            elif name == "risk":
                parts.append(np.log(components.risk))
            elif name == "scalars":
                parts.append(self._scalars_to_real(model))
            elif name == "rows":
                parts.append(self._rows_to_real(model.matrix))
            elif name == "precisions":
                parts.append(
                    np.log([precisions[s] for s in self._active_surfaces])
                )
            else:
                surface = name.removeprefix("surface_")
                field = getattr(components, surface)
                parts.append(self.bases[surface].T @ field)
        return np.concatenate(parts)

    def unpack(
        self, vector: np.ndarray
    ) -> tuple[RiskComponents, TransitionModel, dict[str, float], float]:
        """Constrained state plus the log Jacobian of the inverse map."""
        vector = np.asarray(vector, float)
        if vector.shape != (self.dimension,):
            raise ValidationError(
                f"expected a vector of length {self.dimension}, got {vector.shape}"
            )
        K = self.panel.n_strains
        fields: dict[str, np.ndarray] = {
            "baseline": np.zeros(K),
            "risk": np.zeros(K),
            "trend": np.zeros(self.panel.n_months),
            "season": np.zeros(self.panel.season_length),
            "spatial": np.zeros(self.panel.n_locations),
        }
        model = self.model0
        precisions = dict(self._template_precisions)
        log_jac = 0.0
        pos = 0
        for name, size in self._segments:
            block = vector[pos : pos + size]
            pos += size
            if name == "baseline":
                fields["baseline"] = block.copy()
            elif name == "risk":
                fields["risk"] = np.exp(block)
                log_jac += float(block.sum())
            elif name == "scalars":
                model, jac = self._scalars_from_real(model, block)
                log_jac += jac
            elif name == "rows":
                model, jac = self._rows_from_real(model, block)
                log_jac += jac
            elif name == "precisions":
                for surface, z in zip(self._active_surfaces, block):
                    precisions[surface] = float(np.exp(z))
                log_jac += float(block.sum())
            else:
                surface = name.removeprefix("surface_")
                # orthonormal basis: unit Jacobian
                fields[surface] = self.bases[surface] @ block
        comps = RiskComponents(**fields)
        return comps, model, precisions, log_jac

    def from_draws(self, draws: PosteriorDraws) -> np.ndarray:
        """Transformed posterior sample, one row per stored draw."""
        if draws.variant != self.variant:
            raise ValidationError(
                f"draws are for {draws.variant!r}, map is for {self.variant!r}"
            )
        K = self.panel.n_strains
        columns = []
        for name, _size in self._segments:
            if name == "baseline":
                columns += [draws.scalar(f"a_{k + 1}") for k in range(K)]
            elif name == "risk":
                columns += [np.log(draws.scalar(f"beta_{k + 1}")) for k in range(K)]
            elif name == "scalars":
                for pname, kind in self.free_scalars:
                    values = draws.scalar(pname)
                    if kind == "interval":
                        columns.append(transforms.interval_to_real(values))
                    elif kind == "positive":
                        columns.append(np.log(values))
                    elif kind == "loading":
                        columns.append(transforms.loading_to_real(values))
                    else:
                        columns.append(values)
            elif name == "rows":
                S = self.model0.n_states
                for row in range(S):
                    entries = np.stack(
                        [draws.scalar(f"gamma_{row}_{col}") for col in range(S)],
                        axis=1,
                    )
                    if self.simplex_mode == "raw":
                        columns += [entries[:, col] for col in range(S)]
                    else:
                        columns += [
                            np.log(entries[:, col]) - np.log(entries[:, 0])
                            for col in range(1, S)
                        ]
            elif name == "precisions":
                columns += [
                    np.log(draws.scalar(f"kappa_{s}")) for s in self._active_surfaces
                ]
            else:
                surface = name.removeprefix("surface_")
                z = getattr(draws, surface) @ self.bases[surface]
                columns += [z[:, j] for j in range(z.shape[1])]
        return np.column_stack(columns)

    # -- densities -----------------------------------------------------

    def log_target(self, vector: np.ndarray) -> float:
        """Unnormalized log posterior density on the unconstrained scale."""
        try:
            comps, model, precisions, log_jac = self.unpack(vector)
        except (ValidationError, NumericalError):
            return -np.inf
        value = log_unnormalized_posterior(
            self.engine, comps, model, precisions, self.prior, self.structures
        )
        return value + log_jac

    # -- internals ------------------------------------------------------

    def _scalars_to_real(self, model: TransitionModel) -> np.ndarray:
        names = model.scalar_names()
        values = model.scalar_values()
        out = []
        for name, kind in self.free_scalars:
            value = float(values[names.index(name)])
            if kind == "interval":
                out.append(float(transforms.interval_to_real(value)))
            elif kind == "positive":
                out.append(float(np.log(value)))
            elif kind == "loading":
                out.append(float(transforms.loading_to_real(value)))
            else:
                out.append(value)
        return np.array(out)

    def _scalars_from_real(
        self, model: TransitionModel, block: np.ndarray
    ) -> tuple[TransitionModel, float]:
        names = model.scalar_names()
        values = model.scalar_values()
        log_jac = 0.0
        for (name, kind), z in zip(self.free_scalars, block):
            z = float(z)
            if kind == "interval":
                values[names.index(name)] = float(transforms.real_to_interval(z))
                log_jac += float(transforms.interval_log_jacobian(z))
            elif kind == "positive":
                values[names.index(name)] = float(np.exp(z))
                log_jac += z
            elif kind == "loading":
                values[names.index(name)] = float(transforms.real_to_loading(z))
                log_jac += float(transforms.loading_log_jacobian(z))
            else:
                values[names.index(name)] = z
        return model.with_scalars(np.array(values)), log_jac

    def _rows_to_real(self, matrix: np.ndarray) -> np.ndarray:
        if self.simplex_mode == "raw":
            return np.asarray(matrix, float).ravel()
        return np.concatenate([transforms.simplex_to_real(row) for row in matrix])

    def _rows_from_real(
        self, model: TransitionModel, block: np.ndarray
    ) -> tuple[TransitionModel, float]:
        S = self.model0.n_states
        if self.simplex_mode == "raw":
            rows = block.reshape(S, S)
            return model.with_scalars(rows.ravel()), 0.0
        rows = []
        log_jac = 0.0
        for i in range(S):
            z = block[i * (S - 1) : (i + 1) * (S - 1)]
            rows.append(transforms.real_to_simplex(z))
            log_jac += transforms.simplex_log_jacobian(z)
        return model.with_scalars(np.concatenate(rows)), log_jac


# ---------------------------------------------------------------------
# proposal


@dataclass(frozen=True)
class StudentProposal:
    """Multivariate t proposal, moment-matched to a posterior sample."""

    location: np.ndarray
    shape: np.ndarray
    df: float

    def _frozen(self):
        return multivariate_t(loc=self.location, shape=self.shape, df=self.df)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(self._frozen().logpdf(x))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        draws = self._frozen().rvs(size=n, random_state=rng)
        return np.atleast_2d(np.asarray(draws, float)).reshape(n, -1)


def fit_proposal(
    samples: np.ndarray | PosteriorDraws,
    parameter_map: ParameterMap | None = None,
    df: float = 5.0,
) -> StudentProposal:
    """Moment-matched heavy-tail t proposal from transformed draws.

    With df degrees of freedom, a t with scale matrix C*(df-2)/df has
    covariance C, so the proposal matches the sample mean and
    covariance while keeping polynomial tails for stable weights.
    """
    if isinstance(samples, PosteriorDraws):
        if parameter_map is None:
            raise ValidationError("mapping posterior draws needs a ParameterMap")
        samples = parameter_map.from_draws(samples)
    samples = np.atleast_2d(np.asarray(samples, float))
    if samples.shape[0] < 2:
        raise ValidationError("proposal fitting needs at least two draws")
    if df <= 2.0:
        raise ValidationError("df must exceed 2 for the covariance to exist")
    location = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False).reshape(samples.shape[1], samples.shape[1])
    smallest = float(np.linalg.eigvalsh(cov).min())
    if smallest <= 1e-12:
        warnings.warn(
            "sample covariance is rank deficient; adding diagonal jitter",
            RuntimeWarning,
            stacklevel=2,
        )
        cov = cov + (abs(smallest) + 1e-8) * np.eye(cov.shape[0])
    return StudentProposal(location, cov * (df - 2.0) / df, float(df))


# ---------------------------------------------------------------------
# estimators


def _aggregate(values: list[float], method: str) -> EvidenceEstimate:
    arr = np.asarray(values, float)
    if not np.isfinite(arr).all():
        warnings.warn(
            f"{method} produced non-finite log evidence in "
            f"{int((~np.isfinite(arr)).sum())} of {arr.size} repeats",
            RuntimeWarning,
            stacklevel=3,
        )
        return EvidenceEstimate(-np.inf, 0.0, method, arr.size)
    se = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return EvidenceEstimate(float(arr.mean()), se, method, arr.size)


def importance_sampling_logml(
    log_target,
    proposal: StudentProposal,
    n_samples: int = 10_000,
    n_repeats: int = 50,
    seed: int = 0,
) -> EvidenceEstimate:
    """Log of the average importance weight under the t proposal.

    ``log_target`` must return the unnormalized log posterior for one
    unconstrained vector (ParameterMap.log_target, or any callable with
    the same contract).  Each repeat draws a fresh proposal sample; the
    spread across repeats is the reported se.
    """
    if n_samples < 1 or n_repeats < 1:
        raise ValidationError("n_samples and n_repeats must be positive")
    rng = np.random.default_rng(seed)
    repeats = []
    for _ in range(n_repeats):
        draws = proposal.sample(rng, n_samples)
        log_w = np.array([log_target(row) for row in draws]) - proposal.logpdf(draws)
        if not np.isfinite(log_w).any():
            repeats.append(-np.inf)
            continue
        repeats.append(float(logsumexp(log_w) - np.log(n_samples)))
    return _aggregate(repeats, "IS")


def _bridge_fixed_point(
    l1: np.ndarray,
    l2: np.ndarray,
    log_r: float,
    tolerance: float,
    max_iterations: int,
) -> float:
    """Iterate the optimal-bridge update until the log evidence settles.

    l1 holds log(target/proposal) at posterior draws, l2 the same at
    proposal draws; -inf entries in l2 (proposal landing outside the
    support) drop out of the numerator naturally.
    """
    n1, n2 = l1.size, l2.size
    log_s1 = np.log(n1 / (n1 + n2))
    log_s2 = np.log(n2 / (n1 + n2))
    for _ in range(max_iterations):
        numerator = (
            logsumexp(l2 - np.logaddexp(log_s1 + l2 - log_r, log_s2)) - np.log(n2)
        )
        denominator = (
            logsumexp(-np.logaddexp(log_s1 + l1 - log_r, log_s2)) - np.log(n1)
        )
        log_r_new = float(numerator - denominator)
        if abs(log_r_new - log_r) < tolerance:
            return log_r_new
        log_r = log_r_new
    raise NumericalError(
        "bridge iteration did not converge; "
        f"last iterates {log_r:.10f}, {log_r_new:.10f}"
    )


def bridge_sampling_logml(
    log_target,
    proposal: StudentProposal,
    posterior_samples: np.ndarray,
    n_proposal: int = 10_000,
    n_repeats: int = 50,
    seed: int = 0,
    tolerance: float = 1e-10,
    max_iterations: int = 1000,
    initial_log_ml: float | None = None,
) -> EvidenceEstimate:
    """Iterated optimal-bridge estimate between posterior and proposal.

    The bridge function couples both samples, which damps the weight
    variance that plain importance sampling suffers when the proposal
    misses part of the posterior.  Posterior draws are reused across
    repeats; each repeat draws fresh proposal points.
    """
    if n_proposal < 1 or n_repeats < 1:
        raise ValidationError("n_proposal and n_repeats must be positive")
    post = np.atleast_2d(np.asarray(posterior_samples, float))
    l1 = np.array([log_target(row) for row in post]) - proposal.logpdf(post)
    usable = np.isfinite(l1)
    if not usable.all():
        warnings.warn(
            f"dropping {int((~usable).sum())} posterior draws with "
            "non-finite density ratio",
            RuntimeWarning,
            stacklevel=2,
        )
        l1 = l1[usable]
    if l1.size == 0:
        raise NumericalError("no posterior draw has a finite density ratio")

    rng = np.random.default_rng(seed)
    repeats = []
    for _ in range(n_repeats):
        draws = proposal.sample(rng, n_proposal)
        l2 = np.array([log_target(row) for row in draws]) - proposal.logpdf(draws)
        if initial_log_ml is not None:
            start = float(initial_log_ml)
        elif np.isfinite(l2).any():
            start = float(logsumexp(l2[np.isfinite(l2)]) - np.log(l2.size))
        else:
            repeats.append(-np.inf)
            continue
        repeats.append(
            _bridge_fixed_point(l1, l2, start, tolerance, max_iterations)
        )
    return _aggregate(repeats, "BS")


# ---------------------------------------------------------------------
# model probabilities


def posterior_model_probs(
    estimates,
    n_draws: int = 400_000,
    seed: int = 7,
) -> np.ndarray:
    """Posterior probabilities of equally weighted models.

    Accepts EvidenceEstimate objects or a plain array of log marginal
    likelihoods.  When the estimates carry uncertainty, the reported
    probability is the expected softmax under independent Gaussian
    noise on each log evidence, computed by a seeded Monte Carlo
    average; exact softmax otherwise.  Published comparison tables
    built from repeated noisy evidence evaluations follow the same
    convention, so this reproduces them.
    """
    items = list(estimates)
    if items and isinstance(items[0], EvidenceEstimate):
        means = np.array([e.log_ml for e in items])
        sds = np.array([e.se for e in items])
    else:
        means = np.asarray(items, float)
        sds = np.zeros_like(means)
    if means.ndim != 1 or means.size == 0:
        raise ValidationError("need a one-dimensional collection of estimates")
    if np.any(~np.isfinite(sds)) or np.any(sds < 0.0):
        raise ValidationError("standard errors must be finite and nonnegative")

    finite = np.isfinite(means)
    if not finite.any():
        raise ValidationError("all log evidences are -inf")
    if not np.any(sds[finite] > 0.0):
        # exact softmax (also the path for plain log-ML input)
        shifted = np.where(finite, means - means[finite].max(), -np.inf)
        weights = np.exp(shifted)
        return weights / weights.sum()

    rng = np.random.default_rng(seed)
    total = np.zeros(means.size)
    done = 0
    while done < n_draws:
        block = min(100_000, n_draws - done)
        noise = rng.standard_normal((block, means.size))
        sims = np.where(finite, means + noise * sds, -np.inf)
        sims -= sims.max(axis=1, keepdims=True)
        weights = np.exp(sims)
        weights /= weights.sum(axis=1, keepdims=True)
        total += weights.sum(axis=0)
        done += block
    return total / n_draws
