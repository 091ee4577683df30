"""Adaptive posterior sampling for the coupled epidemic model.

The kernel mixes block updates matched to each parameter's geometry:

* the three smooth surfaces move by manifold Langevin steps whose
  metric is the prior structure plus the smoothed Poisson curvature,
  computed in an orthonormal sum-to-zero basis;
* smoothing precisions are conjugate and drawn exactly;
* log baselines use a gamma approximation to their full conditional as
  an independence proposal (exact when the risk lift is zero);
* bounded scalars take random-walk steps on a scale the prior supports,
  with factor loadings walked on the probit scale;
* the general variant's transition rows take Dirichlet random-walk
  proposals concentrated at the current row;
* a final joint random-walk move over all unbounded-transformed
  scalars, with covariance learned on the fly, picks up correlations
  the single-site moves miss.

Step sizes follow Robbins-Monro recursions toward standard targets
(0.574 for Langevin, 0.234 for random walks); Langevin steps freeze at
the end of burn-in, the rest keep adapting with decaying gain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import gammaln
from scipy.stats import norm

from . import transforms
from .exceptions import NumericalError, ValidationError
from .likelihood import (
    IncidencePanel,
    LikelihoodEngine,
    RiskComponents,
    surface_gradients_from_smoothing,
)
from .models import TransitionModel, free_transition_parameters, initial_model
from .priors import (
    PriorConfig,
    StructureMatrix,
    crw1_structure,
    dirichlet_prior_weights,
    icar_structure,
    igmrf_logdensity,
    rw2_structure,
)

SURFACES = ("trend", "season", "spatial")


@dataclass(frozen=True)
class SamplerConfig:
    """Run-length, adaptation, and block-toggle settings."""

    n_iterations: int = 20_000
    burn_in: int = 5_000
    thin: int = 1
    seed: int = 0
    mala_target: float = 0.574
    rw_target: float = 0.234
    adapt_decay: float = 0.6
    initial_mala_step: float = 0.4
    initial_rw_step: float = 0.15
    initial_row_concentration: float = 200.0
    joint_move: bool = True
    update_trend: bool = True
    update_season: bool = True
    update_spatial: bool = True
    update_precisions: bool = True
    update_baselines: bool = True
    update_risks: bool = True
    update_transition: bool = True

    def __post_init__(self) -> None:
        if self.n_iterations < 1:
            raise ValidationError("n_iterations must be positive")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValidationError("burn_in must lie inside the run")
        if self.thin < 1:
            raise ValidationError("thin must be at least 1")
        if not 0.5 < self.adapt_decay <= 1.0:
            raise ValidationError("adapt_decay must lie in (0.5, 1] for ergodicity")


@dataclass(frozen=True)
class PosteriorDraws:
    """Stored posterior sample with flat named scalars and raw surfaces."""

    variant: str
    n_strains: int
    scalar_names: tuple[str, ...]
    scalars: np.ndarray      # (draws, scalars)
    trend: np.ndarray        # (draws, months)
    season: np.ndarray       # (draws, season positions)
    spatial: np.ndarray      # (draws, locations)
    loglik: np.ndarray
    logpost: np.ndarray
    acceptance: dict[str, float]
    config: SamplerConfig
    chain: int = 0

    @property
    def n_draws(self) -> int:
        return self.scalars.shape[0]

    def scalar(self, name: str) -> np.ndarray:
        try:
            idx = self.scalar_names.index(name)
        except ValueError:
            raise ValidationError(f"no scalar named {name!r} in this run") from None
        return self.scalars[:, idx]

    def credible_interval(self, name: str, level: float = 0.95) -> tuple[float, float]:
        tail = 0.5 * (1.0 - level)
        values = self.scalar(name)
        return (
            float(np.quantile(values, tail)),
            float(np.quantile(values, 1.0 - tail)),
        )


def default_structures(
    panel: IncidencePanel, adjacency: np.ndarray | None
) -> dict[str, StructureMatrix | None]:
    """Smoothing structures implied by the panel's dimensions."""
    spatial: StructureMatrix | None = None
    if panel.n_locations > 1:
        if adjacency is None:
            raise ValidationError(
                "multi-location panels need an adjacency matrix for spatial smoothing"
            )
        spatial = icar_structure(adjacency)
        if spatial.order != panel.n_locations:
            raise ValidationError(
                f"adjacency is {spatial.order} locations, panel has {panel.n_locations}"
            )
    return {
        "trend": rw2_structure(panel.n_months),
        "season": crw1_structure(panel.season_length),
        "spatial": spatial,
    }


def _gamma_logpdf(x: float, shape: float, rate: float) -> float:
    if x <= 0.0:
        return -np.inf
    return shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x


def _dirichlet_logpdf(x: np.ndarray, alpha: np.ndarray) -> float:
    if np.any(x <= 0.0) or np.any(alpha <= 0.0):
        return -np.inf
    return float(
        gammaln(alpha.sum())
        - gammaln(alpha).sum()
        + ((alpha - 1.0) * np.log(x)).sum()
    )


class _Welford:
    """Streaming mean and covariance for the joint proposal."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def update(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, x - self.mean)

    def covariance(self) -> np.ndarray | None:
        if self.count < 2:
            return None
        return self.m2 / (self.count - 1)


class _Chain:
    """Mutable chain state with cached likelihood quantities."""

    def __init__(
        self,
        engine: LikelihoodEngine,
        components: RiskComponents,
        model: TransitionModel,
        precisions: dict[str, float],
        prior: PriorConfig,
        structures: dict[str, StructureMatrix | None],
    ):
        self.engine = engine
        self.components = components
        self.model = model
        self.precisions = dict(precisions)
        self.prior = prior
        self.structures = structures
        self.bases = {
            name: (
                transforms.sum_zero_basis(struct.order)
                if struct is not None
                else None
            )
            for name, struct in structures.items()
        }
        if model.variant == "general":
            self.row_weights = dirichlet_prior_weights(model.n_strains, prior)
        else:
            self.row_weights = None
        self.log_emit = engine.log_emissions(components)
        self.transition = model.joint_matrix()
        self.initial = model.stationary()
        self.loglik = self._forward(self.log_emit, self.transition, self.initial)
        self._smooth = None
        self._grads = None

    def _forward(self, log_emit, transition, initial) -> float:
        by_loc, _ = self.engine.forward(log_emit, transition, initial)
        loglik = float(by_loc.sum())
        if not np.isfinite(loglik):
            raise NumericalError("non-finite log likelihood")
        return loglik

    def smoothing(self):
        if self._smooth is None:
            self._smooth = self.engine.smooth(
                self.log_emit, self.transition, self.initial
            )
        return self._smooth

    def gradients(self):
        if self._grads is None:
            self._grads = surface_gradients_from_smoothing(
                self.engine, self.components, self.smoothing()
            )
        return self._grads

    def invalidate(self) -> None:
        self._smooth = None
        self._grads = None

    # -- log densities -------------------------------------------------

    def surface_field(self, name: str) -> np.ndarray:
        return getattr(self.components, name)

    def log_prior_surfaces(self) -> float:
        total = 0.0
        for name in SURFACES:
            struct = self.structures[name]
            if struct is None:
                continue
            total += igmrf_logdensity(
                self.surface_field(name), self.precisions[name], struct
            )
        return total

    def log_prior_precisions(self) -> float:
        total = 0.0
        for name in SURFACES:
            if self.structures[name] is None:
                continue
            total += self.prior.log_precision(self.precisions[name], name)
        return total

    def log_prior_scalars(
        self, components: RiskComponents | None = None, model: TransitionModel | None = None
    ) -> float:
        components = components if components is not None else self.components
        model = model if model is not None else self.model
        prior = self.prior
        total = float(sum(prior.log_baseline(a) for a in components.baseline))
        spec = model.spec
        if spec.has_epidemics:
            total += float(sum(prior.log_risk(b) for b in components.risk))
        if spec.name == "general":
            total += prior.log_general_rows(model.matrix, self.row_weights)
            return total
        if spec.name == "no_epidemic":
            return total
        p, q = model.rate_vectors()
        if spec.shared_rates:
            total += prior.log_onset(float(p[0]))
            total += prior.log_persistence(float(q[0]))
        else:
            total += float(sum(prior.log_onset(v) for v in p))
            total += float(sum(prior.log_persistence(v) for v in q))
        if spec.copula_kind == "frank":
            total += prior.log_frank(float(model.psi), model.n_strains)
        elif spec.copula_kind == "factor":
            loadings = np.asarray(model.loadings, float)
            total += float(sum(prior.log_loading(x) for x in loadings[1:]))
        return total

    def log_posterior(self) -> float:
        return (
            self.loglik
            + self.log_prior_surfaces()
            + self.log_prior_precisions()
            + self.log_prior_scalars()
        )


def log_unnormalized_posterior(
    engine: LikelihoodEngine,
    components: RiskComponents,
    model: TransitionModel,
    precisions: dict[str, float],
    prior: PriorConfig,
    structures: dict[str, StructureMatrix | None],
) -> float:
    """Joint log density of data and parameters, up to a constant.

    Returns -inf instead of raising when the parameters are outside the
    prior's support or the transition matrix cannot be built, which is
    the convention importance and bridge estimators rely on.
    """
    chain = object.__new__(_Chain)
    chain.engine = engine
    chain.prior = prior
    chain.structures = structures
    chain.precisions = dict(precisions)
    chain.components = components
    chain.model = model
    chain.row_weights = (
        dirichlet_prior_weights(model.n_strains, prior)
        if model.variant == "general"
        else None
    )
    log_prior = chain.log_prior_scalars()
    try:
        log_prior += chain.log_prior_surfaces() + chain.log_prior_precisions()
    except ValidationError:
        return -np.inf
    if not np.isfinite(log_prior):
        return -np.inf
    try:
        transition = model.joint_matrix()
        initial = model.stationary()
        log_emit = engine.log_emissions(components)
        by_loc, _ = engine.forward(log_emit, transition, initial)
    except (NumericalError, ValidationError):
        return -np.inf
    loglik = float(by_loc.sum())
    if not np.isfinite(loglik):
        return -np.inf
    return loglik + log_prior


# -- adaptation bookkeeping ---------------------------------------------


class _Adaptive:
    """Robbins-Monro log-scale adaptation toward a target acceptance."""

    def __init__(self, initial: float, target: float, decay: float, frozen_after: int | None):
        self.log_scale = float(np.log(initial))
        self.target = target
        self.decay = decay
        self.frozen_after = frozen_after
        self.n = 0
        self.accepted = 0.0
        self.proposed = 0

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))

    def update(self, accept_prob: float, iteration: int) -> None:
        self.n += 1
        self.proposed += 1
        self.accepted += accept_prob
        if self.frozen_after is not None and iteration >= self.frozen_after:
            return
        gain = self.n ** (-self.decay)
        self.log_scale += gain * (accept_prob - self.target)
        self.log_scale = float(np.clip(self.log_scale, -10.0, 4.0))

    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


def _accept(log_alpha: float, rng: np.random.Generator) -> tuple[bool, float]:
    if not np.isfinite(log_alpha):
        return False, 0.0
    prob = float(np.exp(min(0.0, log_alpha)))
    return bool(rng.random() < prob), prob


# -- block updates -------------------------------------------------------


def _surface_step(chain: _Chain, name: str, step: _Adaptive, rng, iteration) -> None:
    struct = chain.structures[name]
    if struct is None:
        return
    basis = chain.bases[name]
    kappa = chain.precisions[name]
    x = chain.surface_field(name)
    z = basis.T @ x
    m = z.size
    h = step.scale

    def lang_terms(field, grads_like):
        grad_x = grads_like[name] - kappa * (struct.matrix @ field)
        metric = basis.T @ (
            kappa * struct.matrix + np.diag(grads_like[f"{name}_curvature"])
        ) @ basis
        try:
            low = cholesky(metric, lower=True)
        except np.linalg.LinAlgError:
            metric = metric + np.eye(m) * (1e-8 * np.trace(metric) / m + 1e-12)
            low = cholesky(metric, lower=True)
        grad_z = basis.T @ grad_x
        drift = cho_solve((low, True), grad_z)
        return metric, low, drift

    try:
        metric, low, drift = lang_terms(x, chain.gradients())
        mean_fwd = z + 0.5 * h * h * drift
        eps = rng.standard_normal(m)
        z_new = mean_fwd + h * solve_triangular(low.T, eps, lower=False)
        x_new = basis @ z_new

        comps_new = replace(chain.components, **{name: x_new})
        log_emit_new = chain.engine.log_emissions(comps_new)
        smooth_new = chain.engine.smooth(log_emit_new, chain.transition, chain.initial)
        loglik_new = float(smooth_new.loglik)
        if not np.isfinite(loglik_new):
            step.update(0.0, iteration)
            return
        grads_new = surface_gradients_from_smoothing(chain.engine, comps_new, smooth_new)
        metric_new, low_new, drift_new = lang_terms(x_new, grads_new)
        mean_rev = z_new + 0.5 * h * h * drift_new
    except (np.linalg.LinAlgError, ValueError, ValidationError):
        step.update(0.0, iteration)
        return

    def log_q(target, mean, metric_mat, low_mat):
        resid = target - mean
        quad = resid @ metric_mat @ resid
        return -0.5 * quad / (h * h) + float(np.log(np.diag(low_mat)).sum()) - m * np.log(h)

    log_alpha = (
        loglik_new
        + igmrf_logdensity(x_new, kappa, struct)
        - chain.loglik
        - igmrf_logdensity(x, kappa, struct)
        + log_q(z, mean_rev, metric_new, low_new)
        - log_q(z_new, mean_fwd, metric, low)
    )
    ok, prob = _accept(log_alpha, rng)
    if ok:
        chain.components = comps_new
        chain.log_emit = log_emit_new
        chain.loglik = loglik_new
        chain._smooth = smooth_new
        chain._grads = grads_new
    step.update(prob, iteration)


def _precision_step(chain: _Chain, name: str, rng) -> None:
    struct = chain.structures[name]
    if struct is None:
        return
    shape0, rate0 = chain.prior.precision_gamma(name)
    x = chain.surface_field(name)
    quad = float(x @ struct.matrix @ x)
    shape = shape0 + 0.5 * (struct.order - struct.rank_deficiency)
    rate = rate0 + 0.5 * quad
    chain.precisions[name] = float(rng.gamma(shape, 1.0 / rate))


def _baseline_step(chain: _Chain, k: int, rng, step: _Adaptive, iteration) -> None:
    engine = chain.engine
    a_now = float(chain.components.baseline[k])
    phi_now = float(np.exp(a_now))
    y_k = float(engine.obs_counts[:, :, k].sum())
    shape0, rate0 = chain.prior.baseline_gamma

    def typed_exposure(comps, smooth):
        eta = engine.smoothed_intensity(comps, smooth)
        masked = np.where(engine.obs[:, :, k], eta[:, :, k], 0.0)
        return float(masked.sum()) / float(np.exp(comps.baseline[k]))

    exposure_now = typed_exposure(chain.components, chain.smoothing())
    shape_fwd = shape0 + y_k
    rate_fwd = rate0 + exposure_now
    phi_new = float(rng.gamma(shape_fwd, 1.0 / rate_fwd))
    if phi_new <= 0.0 or not np.isfinite(phi_new):
        step.update(0.0, iteration)
        return
    a_new = float(np.log(phi_new))

    baseline_new = chain.components.baseline.copy()
    baseline_new[k] = a_new
    comps_new = replace(chain.components, baseline=baseline_new)
    log_emit_new = engine.log_emissions(comps_new)
    smooth_new = engine.smooth(log_emit_new, chain.transition, chain.initial)
    loglik_new = float(smooth_new.loglik)
    exposure_new = typed_exposure(comps_new, smooth_new)
    rate_rev = rate0 + exposure_new

    log_q_fwd = _gamma_logpdf(phi_new, shape_fwd, rate_fwd) + a_new
    log_q_rev = _gamma_logpdf(phi_now, shape_fwd, rate_rev) + a_now
    log_alpha = (
        loglik_new
        + chain.prior.log_baseline(a_new)
        - chain.loglik
        - chain.prior.log_baseline(a_now)
        + log_q_rev
        - log_q_fwd
    )
    ok, prob = _accept(log_alpha, rng)
    if ok:
        chain.components = comps_new
        chain.log_emit = log_emit_new
        chain.loglik = loglik_new
        chain._smooth = smooth_new
        chain._grads = None
    step.update(prob, iteration)


def _risk_step(chain: _Chain, k: int, rng, step: _Adaptive, iteration) -> None:
    beta_now = float(chain.components.risk[k])
    beta_new = beta_now + step.scale * rng.standard_normal()
    log_prior_new = chain.prior.log_risk(beta_new)
    if not np.isfinite(log_prior_new):
        step.update(0.0, iteration)
        return
    risk_new = chain.components.risk.copy()
    risk_new[k] = beta_new
    comps_new = replace(chain.components, risk=risk_new)
    log_emit_new = chain.engine.log_emissions(comps_new)
    try:
        loglik_new = chain._forward(log_emit_new, chain.transition, chain.initial)
    except NumericalError:
        step.update(0.0, iteration)
        return
    log_alpha = (
        loglik_new + log_prior_new - chain.loglik - chain.prior.log_risk(beta_now)
    )
    ok, prob = _accept(log_alpha, rng)
    if ok:
        chain.components = comps_new
        chain.log_emit = log_emit_new
        chain.loglik = loglik_new
        chain.invalidate()
    step.update(prob, iteration)


def _scalar_prior(chain: _Chain, name: str, value: float) -> float:
    prior = chain.prior
    if name == "psi":
        return prior.log_frank(value, chain.model.n_strains)
    if name == "p" or name.startswith("p_"):
        return prior.log_onset(value)
    if name == "q" or name.startswith("q_"):
        return prior.log_persistence(value)
    raise ValidationError(f"no scalar prior for {name!r}")


def _transition_scalar_step(
    chain: _Chain, name: str, kind: str, rng, step: _Adaptive, iteration
) -> None:
    names = chain.model.scalar_names()
    values = chain.model.scalar_values()
    idx = names.index(name)
    current = float(values[idx])

    if kind == "loading":
        z_now = float(transforms.loading_to_real(current))
        z_new = z_now + step.scale * rng.standard_normal()
        proposal = float(transforms.real_to_loading(z_new))
        # uniform prior through the probit walk: standard normal in z
        log_prior_diff = float(norm.logpdf(z_new) - norm.logpdf(z_now))
    else:
        proposal = current + step.scale * rng.standard_normal()
        log_prior_new = _scalar_prior(chain, name, proposal)
        if not np.isfinite(log_prior_new):
            step.update(0.0, iteration)
            return
        log_prior_diff = log_prior_new - _scalar_prior(chain, name, current)

    values_new = values.copy()
    values_new[idx] = proposal
    try:
        model_new = chain.model.with_scalars(values_new)
        transition_new = model_new.joint_matrix()
        initial_new = model_new.stationary()
        loglik_new = chain._forward(chain.log_emit, transition_new, initial_new)
    except (NumericalError, ValidationError):
        step.update(0.0, iteration)
        return
    log_alpha = loglik_new - chain.loglik + log_prior_diff
    ok, prob = _accept(log_alpha, rng)
    if ok:
        chain.model = model_new
        chain.transition = transition_new
        chain.initial = initial_new
        chain.loglik = loglik_new
        chain.invalidate()
    step.update(prob, iteration)


def _general_row_step(
    chain: _Chain, row: int, rng, step: _Adaptive, iteration
) -> None:
    matrix = np.asarray(chain.model.matrix, dtype=float)
    current = matrix[row]
    conc = step.scale
    alpha_fwd = conc * current + 0.5
    proposal = rng.dirichlet(alpha_fwd)
    if np.any(proposal <= 0.0) or np.any(proposal >= 1.0):
        step.update(0.0, iteration)
        return
    alpha_rev = conc * proposal + 0.5
    weights = chain.row_weights[row]
    log_prior_diff = (
        (weights - 1.0) * (np.log(proposal) - np.log(current))
    ).sum()
    matrix_new = matrix.copy()
    matrix_new[row] = proposal
    try:
        model_new = replace(chain.model, matrix=matrix_new)
        transition_new = model_new.joint_matrix()
        initial_new = model_new.stationary()
        loglik_new = chain._forward(chain.log_emit, transition_new, initial_new)
    except (NumericalError, ValidationError):
        step.update(0.0, iteration)
        return
    log_alpha = (
        loglik_new
        - chain.loglik
        + float(log_prior_diff)
        + _dirichlet_logpdf(current, alpha_rev)
        - _dirichlet_logpdf(proposal, alpha_fwd)
    )
    ok, prob = _accept(log_alpha, rng)
    if ok:
        chain.model = model_new
        chain.transition = transition_new
        chain.initial = initial_new
        chain.loglik = loglik_new
        chain.invalidate()
    # concentration grows when acceptance is low, so invert the error sign
    step.n += 1
    step.proposed += 1
    step.accepted += prob
    gain = step.n ** (-step.decay)
    step.log_scale -= gain * (prob - step.target)
    step.log_scale = float(np.clip(step.log_scale, np.log(4.0), np.log(1e6)))


# -- joint transformed move ----------------------------------------------


def _joint_pack(
    chain: _Chain, blocks: tuple[bool, bool, bool]
) -> tuple[np.ndarray, list[tuple[str, str]]]:
    """Flatten the enabled scalar blocks into one unconstrained vector.

    ``blocks`` mirrors (update_baselines, update_risks, update_transition)
    so the joint move never touches a block the caller froze.
    """
    layout: list[tuple[str, str]] = []
    parts: list[np.ndarray] = []
    if blocks[0]:
        layout += [(f"a_{k + 1}", "rawbase") for k in range(chain.model.n_strains)]
        parts.append(chain.components.baseline)
    if blocks[1] and chain.model.spec.has_epidemics:
        layout += [(f"beta_{k + 1}", "positive") for k in range(chain.model.n_strains)]
        parts.append(np.log(chain.components.risk))
    if blocks[2]:
        trans_params = free_transition_parameters(chain.model)
        names = chain.model.scalar_names()
        values = chain.model.scalar_values()
        extra = []
        for name, kind in trans_params:
            value = float(values[names.index(name)])
            if kind == "interval":
                extra.append(float(transforms.interval_to_real(value)))
            elif kind == "positive":
                extra.append(float(np.log(value)))
            elif kind == "loading":
                extra.append(float(transforms.loading_to_real(value)))
            else:
                extra.append(value)
        layout += trans_params
        if extra:
            parts.append(np.array(extra))
    if not parts:
        return np.empty(0), layout
    return np.concatenate(parts), layout


def _joint_unpack(
    chain: _Chain, vector: np.ndarray, layout: list[tuple[str, str]]
) -> tuple[RiskComponents, TransitionModel, float]:
    """Rebuild (components, model) from the transformed vector.

    Returns the log Jacobian of the constrained-from-real map so the
    move targets the correctly transformed density.
    """
    baseline = chain.components.baseline.copy()
    risk = chain.components.risk.copy()
    names = chain.model.scalar_names()
    values = chain.model.scalar_values()
    log_jac = 0.0
    for pos, (name, kind) in enumerate(layout):
        z = float(vector[pos])
        if kind == "rawbase":
            baseline[int(name[2:]) - 1] = z
        elif name.startswith("beta_"):
            risk[int(name[5:]) - 1] = np.exp(z)
            log_jac += z
        elif kind == "interval":
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
    comps = replace(chain.components, baseline=baseline, risk=risk)
    model = chain.model.with_scalars(values)
    return comps, model, log_jac


def _joint_step(
    chain: _Chain,
    blocks: tuple[bool, bool, bool],
    welford: _Welford,
    step: _Adaptive,
    rng,
    iteration: int,
) -> None:
    t_now, layout = _joint_pack(chain, blocks)
    dim = t_now.size
    if dim == 0:
        return
    cov = welford.covariance()
    if welford.count < 10 * dim or cov is None:
        proposal_cov = np.eye(dim) * 0.01**2
    else:
        proposal_cov = cov + np.eye(dim) * 1e-8
    try:
        low = cholesky(proposal_cov, lower=True)
    except np.linalg.LinAlgError:
        low = np.eye(dim) * 0.01
    t_new = t_now + step.scale * (low @ rng.standard_normal(dim))

    _, _, log_jac_now = _joint_unpack(chain, t_now, layout)
    try:
        comps_new, model_new, log_jac_new = _joint_unpack(chain, t_new, layout)
        log_prior_new = chain.log_prior_scalars(comps_new, model_new)
        if not np.isfinite(log_prior_new):
            raise NumericalError("proposal outside prior support")
        log_emit_new = chain.engine.log_emissions(comps_new)
        transition_new = model_new.joint_matrix()
        initial_new = model_new.stationary()
        loglik_new = chain._forward(log_emit_new, transition_new, initial_new)
    except (NumericalError, ValidationError):
        step.update(0.0, iteration)
        return
    log_alpha = (
        loglik_new
        + log_prior_new
        + log_jac_new
        - chain.loglik
        - chain.log_prior_scalars()
        - log_jac_now
    )
    ok, prob = _accept(log_alpha, rng)
    if ok:
        chain.components = comps_new
        chain.model = model_new
        chain.log_emit = log_emit_new
        chain.transition = transition_new
        chain.initial = initial_new
        chain.loglik = loglik_new
        chain.invalidate()
    step.update(prob, iteration)


# -- initialization and the main loop -------------------------------------


def initial_components(
    panel: IncidencePanel, n_strains: int, has_epidemics: bool
) -> RiskComponents:
    """Data-informed flat start: empirical log rates, zero surfaces."""
    exposure = panel.populations.sum()
    counts = np.array(
        [
            max(float(np.where(panel.observed[:, :, k], panel.counts[:, :, k], 0.0).sum()), 0.5)
            for k in range(n_strains)
        ]
    )
    months_observed = max(panel.observed.any(axis=2).mean(), 1e-3)
    baseline = np.log(counts / (exposure * months_observed))
    return RiskComponents(
        baseline=baseline,
        risk=np.full(n_strains, 0.7) if has_epidemics else np.zeros(n_strains),
        trend=np.zeros(panel.n_months),
        season=np.zeros(panel.season_length),
        spatial=np.zeros(panel.n_locations),
    )


def _chain_rng(seed: int, chain: int) -> np.random.Generator:
    stream = np.random.Philox(key=seed)
    if chain:
        stream = stream.jumped(chain)
    return np.random.Generator(stream)


def run_mcmc(
    panel: IncidencePanel,
    variant: str,
    config: SamplerConfig | None = None,
    prior: PriorConfig | None = None,
    adjacency: np.ndarray | None = None,
    start: tuple[RiskComponents, TransitionModel, dict[str, float]] | None = None,
    chain: int = 0,
) -> PosteriorDraws:
    """Sample the joint posterior for one chain.

    ``start`` optionally overrides the data-informed default initial
    state with (components, model, precisions); ``chain`` selects an
    independent counter-based random stream so multi-chain runs never
    share randomness.
    """
    config = config or SamplerConfig()
    prior = prior or PriorConfig()
    rng = _chain_rng(config.seed, chain)
    structures = default_structures(panel, adjacency)

    if start is not None:
        comps, model, precisions = start
        model = model if isinstance(model, TransitionModel) else initial_model(model, panel.n_strains)
        precisions = dict(precisions)
    else:
        model = initial_model(variant, panel.n_strains)
        comps = initial_components(panel, panel.n_strains, model.spec.has_epidemics)
        precisions = {"trend": 1000.0, "season": 10.0, "spatial": 10.0}
        if chain:
            # overdispersed but safe starts for convergence diagnostics
            baseline = comps.baseline + 0.2 * rng.standard_normal(panel.n_strains)
            risk = comps.risk
            if model.spec.has_epidemics:
                risk = np.clip(comps.risk * np.exp(0.3 * rng.standard_normal(panel.n_strains)), 0.05, None)
            comps = replace(comps, baseline=baseline, risk=risk)
    if model.variant != variant:
        raise ValidationError(f"start model is {model.variant!r}, requested {variant!r}")

    engine = LikelihoodEngine(panel, model.n_states)
    state = _Chain(engine, comps, model, precisions, prior, structures)

    freeze_at = config.burn_in
    steps: dict[str, _Adaptive] = {}
    for name in SURFACES:
        steps[name] = _Adaptive(
            config.initial_mala_step, config.mala_target, config.adapt_decay, freeze_at
        )
    for k in range(model.n_strains):
        steps[f"a_{k + 1}"] = _Adaptive(1.0, config.rw_target, config.adapt_decay, None)
        steps[f"beta_{k + 1}"] = _Adaptive(
            config.initial_rw_step, config.rw_target, config.adapt_decay, None
        )
    for name, _kind in free_transition_parameters(model):
        steps[name] = _Adaptive(
            config.initial_rw_step, config.rw_target, config.adapt_decay, None
        )
    if model.variant == "general":
        for row in range(model.n_states):
            steps[f"row_{row}"] = _Adaptive(
                config.initial_row_concentration,
                config.rw_target,
                config.adapt_decay,
                None,
            )
    joint_blocks = (
        config.update_baselines,
        config.update_risks,
        config.update_transition,
    )
    joint_dim = _joint_pack(state, joint_blocks)[0].size
    steps["joint"] = _Adaptive(
        2.38 / np.sqrt(max(joint_dim, 1)),
        config.rw_target,
        config.adapt_decay,
        None,
    )
    welford = _Welford(joint_dim)

    scalar_names = [f"a_{k + 1}" for k in range(model.n_strains)]
    if model.spec.has_epidemics:
        scalar_names += [f"beta_{k + 1}" for k in range(model.n_strains)]
    scalar_names += model.scalar_names()
    scalar_names += [f"kappa_{name}" for name in SURFACES]

    kept = 1 + (config.n_iterations - config.burn_in - 1) // config.thin
    scalars = np.empty((kept, len(scalar_names)))
    trend_draws = np.empty((kept, panel.n_months))
    season_draws = np.empty((kept, panel.season_length))
    spatial_draws = np.empty((kept, panel.n_locations))
    loglik_draws = np.empty(kept)
    logpost_draws = np.empty(kept)
    out = 0

    trans_params = free_transition_parameters(model)
    for iteration in range(config.n_iterations):
        if config.update_trend:
            _surface_step(state, "trend", steps["trend"], rng, iteration)
        if config.update_season:
            _surface_step(state, "season", steps["season"], rng, iteration)
        if config.update_spatial:
            _surface_step(state, "spatial", steps["spatial"], rng, iteration)
        if config.update_precisions:
            for name in SURFACES:
                _precision_step(state, name, rng)
        if config.update_baselines:
            for k in range(model.n_strains):
                _baseline_step(state, k, rng, steps[f"a_{k + 1}"], iteration)
        if config.update_risks and model.spec.has_epidemics:
            for k in range(model.n_strains):
                _risk_step(state, k, rng, steps[f"beta_{k + 1}"], iteration)
        if config.update_transition:
            for name, kind in trans_params:
                _transition_scalar_step(state, name, kind, rng, steps[name], iteration)
            if model.variant == "general":
                for row in range(model.n_states):
                    _general_row_step(state, row, rng, steps[f"row_{row}"], iteration)
        if config.joint_move and joint_dim:
            _joint_step(state, joint_blocks, welford, steps["joint"], rng, iteration)
        if joint_dim:
            welford.update(_joint_pack(state, joint_blocks)[0])

        if iteration >= config.burn_in and (iteration - config.burn_in) % config.thin == 0:
            values = [float(v) for v in state.components.baseline]
            if model.spec.has_epidemics:
                values += [float(v) for v in state.components.risk]
            values += [float(v) for v in state.model.scalar_values()]
            values += [state.precisions[name] for name in SURFACES]
            scalars[out] = values
            trend_draws[out] = state.components.trend
            season_draws[out] = state.components.season
            spatial_draws[out] = state.components.spatial
            loglik_draws[out] = state.loglik
            logpost_draws[out] = state.log_posterior()
            out += 1

    acceptance = {name: step.rate() for name, step in steps.items()}
    return PosteriorDraws(
        variant=variant,
        n_strains=model.n_strains,
        scalar_names=tuple(scalar_names),
        scalars=scalars[:out],
        trend=trend_draws[:out],
        season=season_draws[:out],
        spatial=spatial_draws[:out],
        loglik=loglik_draws[:out],
        logpost=logpost_draws[:out],
        acceptance=acceptance,
        config=config,
        chain=chain,
    )


def run_chains(
    panel: IncidencePanel,
    variant: str,
    n_chains: int = 2,
    config: SamplerConfig | None = None,
    prior: PriorConfig | None = None,
    adjacency: np.ndarray | None = None,
) -> list[PosteriorDraws]:
    """Independent chains from jittered starts, for convergence checks."""
    if n_chains < 1:
        raise ValidationError("n_chains must be positive")
    return [
        run_mcmc(panel, variant, config, prior, adjacency, chain=c)
        for c in range(n_chains)
    ]
