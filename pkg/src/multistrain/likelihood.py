"""Marginal likelihood machinery for the coupled hidden Markov model.

Counts y[i, t, k] are conditionally Poisson with mean
population[i, t] * exp(baseline_k + trend_t + season_{t mod C} +
spatial_i + risk_k * bit(state, k)), where the joint epidemic state
follows the strain-coupling transition model and starts from its
stationary distribution.  Locations are conditionally independent given
the shared surfaces, so the forward recursion runs vectorized across
locations in log space with a log-sum-exp at every step.

Partially observed panels are handled cell by cell: strains flagged
missing contribute nothing, and cells where only the strain total was
recorded contribute a single Poisson term for the total at the summed
mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import states
from .exceptions import ValidationError


@dataclass(frozen=True)
class RiskComponents:
    """Log-linear rate parameters shared by every joint state.

    baseline and risk are per-strain (risk is the log rate lift while a
    strain is epidemic); trend, season, and spatial are the shared
    surfaces over months, season positions, and locations.
    """

    baseline: np.ndarray
    risk: np.ndarray
    trend: np.ndarray
    season: np.ndarray
    spatial: np.ndarray

    def __post_init__(self) -> None:
        for name in ("baseline", "risk", "trend", "season", "spatial"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise ValidationError(f"{name} must be one-dimensional")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if self.baseline.shape != self.risk.shape:
            raise ValidationError("baseline and risk must have one entry per strain")


@dataclass(frozen=True)
class IncidencePanel:
    """A spatio-temporal panel of per-strain case counts.

    counts[i, t, k] holds the typed count for location i, month t and
    strain k; populations[i, t] the exposure.  observed marks typed
    counts that enter the likelihood.  Cells where only the overall
    total was recorded set untyped[i, t] with the total in totals[i, t];
    the untyped flag overrides any typed data at that cell.
    """

    counts: np.ndarray
    populations: np.ndarray
    observed: np.ndarray
    untyped: np.ndarray
    totals: np.ndarray
    season_length: int = 12
    location_labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=float)
        pops = np.asarray(self.populations, dtype=float)
        if counts.ndim != 3:
            raise ValidationError(
                f"counts must be (locations, months, strains), got {counts.shape}"
            )
        n_loc, n_months, _ = counts.shape
        if pops.shape != (n_loc, n_months):
            raise ValidationError(
                f"populations shape {pops.shape} does not match counts {counts.shape}"
            )
        if not np.all(np.isfinite(pops)) or np.any(pops <= 0.0):
            raise ValidationError("populations must be positive and finite")
        observed = np.asarray(self.observed, dtype=bool)
        untyped = np.asarray(self.untyped, dtype=bool)
        totals = np.asarray(self.totals, dtype=float)
        if observed.shape != counts.shape:
            raise ValidationError("observed mask must match counts shape")
        if untyped.shape != pops.shape or totals.shape != pops.shape:
            raise ValidationError("untyped mask and totals must be (locations, months)")
        if not np.all(np.isfinite(counts)):
            raise ValidationError("counts must be finite (flag gaps via observed)")
        if np.any(counts[observed] < 0) or np.any(counts[observed] % 1 != 0):
            raise ValidationError("observed counts must be nonnegative integers")
        if np.any(totals[untyped] < 0) or np.any(totals[untyped] % 1 != 0):
            raise ValidationError("untyped totals must be nonnegative integers")
        if self.season_length < 3:
            raise ValidationError("season_length must be at least 3")
        if self.location_labels is not None and len(self.location_labels) != n_loc:
            raise ValidationError("location_labels must name every location")
        # A cell reported as untyped contributes only through its total.
        observed = observed & ~untyped[:, :, None]
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "populations", pops)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "untyped", untyped)
        object.__setattr__(self, "totals", totals)

    @property
    def n_locations(self) -> int:
        return self.counts.shape[0]

    @property
    def n_months(self) -> int:
        return self.counts.shape[1]

    @property
    def n_strains(self) -> int:
        return self.counts.shape[2]

    @property
    def season_index(self) -> np.ndarray:
        return np.arange(self.n_months) % self.season_length


def fully_observed_panel(
    counts: np.ndarray, populations: np.ndarray, season_length: int = 12
) -> IncidencePanel:
    """Convenience constructor for a panel with no gaps and no untyped cells."""
    counts = np.asarray(counts, dtype=float)
    shape2 = counts.shape[:2]
    return IncidencePanel(
        counts=counts,
        populations=populations,
        observed=np.ones(counts.shape, dtype=bool),
        untyped=np.zeros(shape2, dtype=bool),
        totals=np.zeros(shape2),
        season_length=season_length,
    )


@dataclass(frozen=True)
class SmoothingResult:
    """Forward-backward output: evidence and per-cell state posteriors."""

    loglik: float
    loglik_by_location: np.ndarray
    state_probs: np.ndarray        # (locations, months, states)
    marginal_epidemic: np.ndarray  # (locations, months, strains)


class LikelihoodEngine:
    """Precomputes panel-derived constants for repeated evaluations.

    The sampler evaluates the likelihood tens of thousands of times on a
    fixed panel; everything that depends only on the data (log factorial
    terms, masks, the month-to-season map, the state bit table) is built
    once here.
    """

    def __init__(self, panel: IncidencePanel, n_states: int):
        self.panel = panel
        self.n_states = n_states
        n_strains = panel.n_strains
        if n_states not in (1, 1 << n_strains):
            raise ValidationError(
                f"n_states must be 1 or {1 << n_strains}, got {n_states}"
            )
        self.bits = (
            np.zeros((1, n_strains), dtype=np.int64)
            if n_states == 1
            else states.state_bits(n_strains)
        )
        self.log_pop = np.log(panel.populations)
        self.obs = panel.observed
        self.obs_counts = np.where(self.obs, panel.counts, 0.0)
        self.obs_lgamma = np.where(self.obs, gammaln(panel.counts + 1.0), 0.0)
        self.untyped_cells = np.argwhere(panel.untyped)
        self.untyped_lgamma = gammaln(panel.totals[panel.untyped] + 1.0)
        self.season_index = panel.season_index

    def log_means_endemic(self, comps: RiskComponents) -> np.ndarray:
        """log of the Poisson mean with every strain endemic, (I, T, K)."""
        panel = self.panel
        return (
            self.log_pop[:, :, None]
            + comps.baseline[None, None, :]
            + comps.trend[None, :, None]
            + comps.season[self.season_index][None, :, None]
            + comps.spatial[:, None, None]
        )

    def log_emissions(self, comps: RiskComponents) -> np.ndarray:
        """Per-state observation log densities, (I, T, S).

        For typed cells the log pmf is affine in the state's bit pattern,
        so the state axis is a single matrix product; untyped cells get
        their total-count Poisson term added per state.
        """
        log_mu0 = self.log_means_endemic(comps)
        mu0 = np.where(self.obs, np.exp(log_mu0), 0.0)
        base = (self.obs_counts * log_mu0 - self.obs_lgamma).sum(axis=2) - mu0.sum(axis=2)
        # clipping keeps exp finite; a lift this size already forces the
        # emission to underflow to zero for any epidemic state
        lift = self.obs_counts * comps.risk[None, None, :] - mu0 * np.expm1(
            np.minimum(comps.risk, 300.0)
        )[None, None, :]
        log_emit = base[:, :, None] + lift @ self.bits.T

        if self.untyped_cells.size:
            panel = self.panel
            locs = self.untyped_cells[:, 0]
            months = self.untyped_cells[:, 1]
            mu_cells = np.exp(log_mu0[locs, months, :])  # (n_cells, K)
            per_state = mu_cells @ np.exp(
                np.minimum(comps.risk, 300.0)[:, None] * self.bits.T
            )  # (n_cells, S)
            tot = panel.totals[locs, months][:, None]
            log_emit[locs, months, :] += (
                tot * np.log(per_state) - per_state - self.untyped_lgamma[:, None]
            )
        return log_emit

    def forward(
        self,
        log_emit: np.ndarray,
        transition: np.ndarray,
        initial: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Log filtering pass; returns (per-location loglik, log alpha).

        log alpha has shape (I, T, S) and accumulates in log space with a
        max-shifted sum at every step, so long panels cannot underflow.
        """
        n_loc, n_months, n_states = log_emit.shape
        log_alpha = np.empty_like(log_emit)
        with np.errstate(divide="ignore"):
            log_init = np.log(initial)
        log_alpha[:, 0, :] = log_init[None, :] + log_emit[:, 0, :]
        for t in range(1, n_months):
            prev = log_alpha[:, t - 1, :]
            shift = prev.max(axis=1, keepdims=True)
            shift = np.where(np.isfinite(shift), shift, 0.0)
            with np.errstate(divide="ignore"):
                propagated = np.log(np.exp(prev - shift) @ transition)
            log_alpha[:, t, :] = shift + propagated + log_emit[:, t, :]
        last = log_alpha[:, -1, :]
        shift = last.max(axis=1)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        loglik_by_loc = shift + np.log(np.exp(last - shift[:, None]).sum(axis=1))
        return loglik_by_loc, log_alpha

    def smooth(
        self,
        log_emit: np.ndarray,
        transition: np.ndarray,
        initial: np.ndarray,
    ) -> SmoothingResult:
        """Forward-backward smoothing of the joint epidemic state."""
        loglik_by_loc, log_alpha = self.forward(log_emit, transition, initial)
        n_loc, n_months, n_states = log_emit.shape
        log_beta = np.zeros((n_loc, n_states))
        log_post = np.empty_like(log_emit)
        log_post[:, -1, :] = log_alpha[:, -1, :] + log_beta
        for t in range(n_months - 2, -1, -1):
            forwarded = log_beta + log_emit[:, t + 1, :]
            shift = forwarded.max(axis=1, keepdims=True)
            shift = np.where(np.isfinite(shift), shift, 0.0)
            with np.errstate(divide="ignore"):
                log_beta = shift + np.log(np.exp(forwarded - shift) @ transition.T)
            log_post[:, t, :] = log_alpha[:, t, :] + log_beta
        probs = np.exp(log_post - loglik_by_loc[:, None, None])
        # Normalize away residual roundoff so rows are exact simplexes.
        probs /= probs.sum(axis=2, keepdims=True)
        marginal = probs @ self.bits.astype(float)
        return SmoothingResult(
            loglik=float(loglik_by_loc.sum()),
            loglik_by_location=loglik_by_loc,
            state_probs=probs,
            marginal_epidemic=marginal,
        )

    def smoothed_intensity(
        self, comps: RiskComponents, smoothing: SmoothingResult
    ) -> np.ndarray:
        """Posterior expected Poisson means, (I, T, K).

        Averages the state-conditional mean over the smoothed state law:
        mean_endemic * (1 + (exp(risk) - 1) * P(strain epidemic)).
        """
        mu0 = np.exp(self.log_means_endemic(comps))
        lift = np.expm1(np.minimum(comps.risk, 300.0))[None, None, :]
        return mu0 * (1.0 + lift * smoothing.marginal_epidemic)

    def cell_residuals(
        self, comps: RiskComponents, smoothing: SmoothingResult
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell score and curvature aggregates for the surfaces.

        Returns (residual, curvature), both (I, T): the observed count
        minus the smoothed mean summed over contributing strain terms,
        and the matching smoothed-mean total.  These are the Fisher- and
        Louis-identity ingredients for any parameter that shifts the log
        mean uniformly at a cell (trend, season, spatial effects).
        """
        eta = self.smoothed_intensity(comps, smoothing)
        panel = self.panel
        typed_resid = (self.obs_counts - np.where(self.obs, eta, 0.0)).sum(axis=2)
        typed_curv = np.where(self.obs, eta, 0.0).sum(axis=2)
        if self.untyped_cells.size:
            untyped_mean = np.where(panel.untyped, eta.sum(axis=2), 0.0)
            typed_resid += np.where(
                panel.untyped, panel.totals - untyped_mean, 0.0
            )
            typed_curv += untyped_mean
        return typed_resid, typed_curv


def _engine_for(panel: IncidencePanel, transition: np.ndarray) -> LikelihoodEngine:
    return LikelihoodEngine(panel, transition.shape[0])


def forward_loglik(
    panel: IncidencePanel,
    comps: RiskComponents,
    transition: np.ndarray,
    initial: np.ndarray | None = None,
) -> float:
    """Marginal log likelihood with the epidemic states integrated out.

    The chain starts from its stationary distribution unless an explicit
    initial law is supplied.
    """
    transition = np.asarray(transition, dtype=float)
    if initial is None:
        initial = states.stationary_distribution(transition)
    engine = _engine_for(panel, transition)
    log_emit = engine.log_emissions(comps)
    loglik_by_loc, _ = engine.forward(log_emit, transition, np.asarray(initial, float))
    return float(loglik_by_loc.sum())


def backward_smooth(
    panel: IncidencePanel,
    comps: RiskComponents,
    transition: np.ndarray,
    initial: np.ndarray | None = None,
) -> SmoothingResult:
    """Posterior law of the joint epidemic state at every cell."""
    transition = np.asarray(transition, dtype=float)
    if initial is None:
        initial = states.stationary_distribution(transition)
    engine = _engine_for(panel, transition)
    log_emit = engine.log_emissions(comps)
    return engine.smooth(log_emit, transition, np.asarray(initial, float))


def smoothed_intensity(
    panel: IncidencePanel,
    comps: RiskComponents,
    transition: np.ndarray,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Posterior expected Poisson mean for every cell and strain."""
    transition = np.asarray(transition, dtype=float)
    if initial is None:
        initial = states.stationary_distribution(transition)
    engine = _engine_for(panel, transition)
    smoothing = engine.smooth(engine.log_emissions(comps), transition, initial)
    return engine.smoothed_intensity(comps, smoothing)


def surface_gradients(
    panel: IncidencePanel,
    comps: RiskComponents,
    transition: np.ndarray,
    initial: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Exact marginal-likelihood gradients for the three surfaces.

    By the Fisher identity the gradient of the marginal log likelihood
    equals the smoothed expectation of the complete-data score, which for
    Poisson log-linear terms is observed-minus-expected aggregated over
    the cells each coordinate touches.  Returns gradients and the
    matching expected-curvature diagonals under keys ``trend``,
    ``season``, ``spatial`` and ``*_curvature``.
    """
    transition = np.asarray(transition, dtype=float)
    if initial is None:
        initial = states.stationary_distribution(transition)
    engine = _engine_for(panel, transition)
    smoothing = engine.smooth(engine.log_emissions(comps), transition, initial)
    return surface_gradients_from_smoothing(engine, comps, smoothing)


def surface_gradients_from_smoothing(
    engine: LikelihoodEngine,
    comps: RiskComponents,
    smoothing: SmoothingResult,
) -> dict[str, np.ndarray]:
    """Same as :func:`surface_gradients` but reusing a smoothing pass."""
    residual, curvature = engine.cell_residuals(comps, smoothing)
    season_index = engine.season_index
    n_seasons = engine.panel.season_length
    season_grad = np.zeros(n_seasons)
    season_curv = np.zeros(n_seasons)
    np.add.at(season_grad, season_index, residual.sum(axis=0))
    np.add.at(season_curv, season_index, curvature.sum(axis=0))
    return {
        "trend": residual.sum(axis=0),
        "trend_curvature": curvature.sum(axis=0),
        "season": season_grad,
        "season_curvature": season_curv,
        "spatial": residual.sum(axis=1),
        "spatial_curvature": curvature.sum(axis=1),
    }
