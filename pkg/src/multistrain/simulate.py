"""Synthetic count panels drawn from the generative model.

Simulation serves two audiences: sampler validation (draw a panel with
known parameters, fit, check recovery) and demos.  ``demo_scenario``
ships a fixed nine-city, three-strain configuration whose latent
surfaces were drawn once from their priors and frozen as package data,
so every run starts from the same ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .exceptions import ValidationError
from .likelihood import IncidencePanel, LikelihoodEngine, RiskComponents
from .models import TransitionModel, initial_model
from .states import state_bits

EARTH_RADIUS_KM = 6371.0088
DEFAULT_NEIGHBOUR_KM = 820.0


@dataclass(frozen=True)
class SimulatedPanel:
    """A drawn panel bundled with the latent truth that produced it."""

    panel: IncidencePanel
    states: np.ndarray    # (locations, months) joint state indices
    epidemic: np.ndarray  # (locations, months, strains) 0/1 indicators
    means: np.ndarray     # (locations, months, strains) Poisson means


@dataclass(frozen=True)
class Scenario:
    """Everything needed to simulate and refit one synthetic setting."""

    model: TransitionModel
    components: RiskComponents
    populations: np.ndarray
    adjacency: np.ndarray
    season_length: int
    location_labels: tuple[str, ...]

    @property
    def n_months(self) -> int:
        return self.components.trend.size


def simulate_states(
    model: TransitionModel,
    n_locations: int,
    n_months: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Joint epidemic state paths, one independent chain per location.

    Each chain starts from the stationary law of the transition matrix,
    matching the likelihood's initial distribution.
    """
    if n_locations < 1 or n_months < 1:
        raise ValidationError("need at least one location and one month")
    transition = model.joint_matrix()
    initial = model.stationary()
    n_states = transition.shape[0]
    paths = np.empty((n_locations, n_months), dtype=np.int64)
    # inverse-CDF draws keep the path reproducible for any state count
    cum_init = np.cumsum(initial)
    cum_trans = np.cumsum(transition, axis=1)
    u = rng.random((n_locations, n_months))
    paths[:, 0] = np.searchsorted(cum_init, u[:, 0], side="right")
    for t in range(1, n_months):
        rows = cum_trans[paths[:, t - 1]]
        draws = u[:, t]
        paths[:, t] = (rows < draws[:, None]).sum(axis=1)
    return np.clip(paths, 0, n_states - 1)


def simulate_panel(
    model: TransitionModel,
    components: RiskComponents,
    populations: np.ndarray,
    rng: np.random.Generator,
    season_length: int = 12,
    location_labels: tuple[str, ...] | None = None,
) -> SimulatedPanel:
    """Draw states and Poisson counts for a fully observed panel."""
    populations = np.asarray(populations, dtype=float)
    if populations.ndim != 2:
        raise ValidationError("populations must be (locations, months)")
    n_locations, n_months = populations.shape
    if components.trend.size != n_months:
        raise ValidationError(
            f"trend has {components.trend.size} months, populations {n_months}"
        )
    if components.spatial.size != n_locations:
        raise ValidationError(
            f"spatial has {components.spatial.size} locations, populations {n_locations}"
        )
    if components.season.size != season_length:
        raise ValidationError(
            f"season has {components.season.size} positions, expected {season_length}"
        )
    n_strains = model.n_strains
    if components.baseline.size != n_strains:
        raise ValidationError("components and model disagree on strain count")

    paths = simulate_states(model, n_locations, n_months, rng)
    bits = (
        np.zeros((1, n_strains), dtype=np.int64)
        if model.joint_matrix().shape[0] == 1
        else state_bits(n_strains)
    )
    epidemic = bits[paths]  # (I, T, K)

    shell = IncidencePanel(
        counts=np.zeros((n_locations, n_months, n_strains)),
        populations=populations,
        observed=np.ones((n_locations, n_months, n_strains), dtype=bool),
        untyped=np.zeros((n_locations, n_months), dtype=bool),
        totals=np.zeros((n_locations, n_months)),
        season_length=season_length,
        location_labels=location_labels,
    )
    engine = LikelihoodEngine(shell, bits.shape[0])
    log_mu0 = engine.log_means_endemic(components)
    means = np.exp(log_mu0 + components.risk[None, None, :] * epidemic)
    counts = rng.poisson(means).astype(float)

    panel = IncidencePanel(
        counts=counts,
        populations=populations,
        observed=np.ones(counts.shape, dtype=bool),
        untyped=np.zeros((n_locations, n_months), dtype=bool),
        totals=np.zeros((n_locations, n_months)),
        season_length=season_length,
        location_labels=location_labels,
    )
    return SimulatedPanel(panel=panel, states=paths, epidemic=epidemic, means=means)


def grid_adjacency(n_rows: int, n_cols: int) -> np.ndarray:
    """Rook-neighbour 0/1 adjacency for a rectangular grid of locations."""
    if n_rows < 1 or n_cols < 1:
        raise ValidationError("grid dimensions must be positive")
    n = n_rows * n_cols
    adj = np.zeros((n, n), dtype=np.int64)
    for r in range(n_rows):
        for c in range(n_cols):
            i = r * n_cols + c
            if c + 1 < n_cols:
                adj[i, i + 1] = adj[i + 1, i] = 1
            if r + 1 < n_rows:
                adj[i, i + n_cols] = adj[i + n_cols, i] = 1
    return adj


def adjacency_from_coordinates(
    latitudes: np.ndarray,
    longitudes: np.ndarray,
    threshold_km: float = DEFAULT_NEIGHBOUR_KM,
) -> np.ndarray:
    """Great-circle neighbourhood: cities within threshold_km are adjacent."""
    lat = np.radians(np.asarray(latitudes, dtype=float))
    lon = np.radians(np.asarray(longitudes, dtype=float))
    if lat.shape != lon.shape or lat.ndim != 1:
        raise ValidationError("latitudes and longitudes must be matching vectors")
    if threshold_km <= 0:
        raise ValidationError("distance threshold must be positive")
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = (
        np.sin(dlat / 2.0) ** 2
        + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2.0) ** 2
    )
    distance = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    adj = (distance <= threshold_km).astype(np.int64)
    np.fill_diagonal(adj, 0)
    return adj


def _load_demo_surfaces() -> dict[str, np.ndarray]:
    path = resources.files("multistrain.data").joinpath("demo_surfaces.csv")
    rows: dict[str, list[tuple[int, float]]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for record in csv.DictReader(handle):
            rows.setdefault(record["component"], []).append(
                (int(record["index"]), float(record["value"]))
            )
    surfaces = {}
    for component, pairs in rows.items():
        pairs.sort()
        surfaces[component] = np.array([value for _, value in pairs])
    return surfaces


# Nine demo cities: five around half a million people, four around a
# million, fixed so that simulations are stable across versions.
DEMO_POPULATIONS = np.array(
    [
        478_000.0,
        512_000.0,
        493_000.0,
        1_060_000.0,
        527_000.0,
        981_000.0,
        1_115_000.0,
        486_000.0,
        1_024_000.0,
    ]
)
DEMO_LABELS = tuple(f"city_{i + 1}" for i in range(9))


def demo_scenario() -> Scenario:
    """The packaged three-strain, nine-city, five-year synthetic setting.

    Three strains with distinct baselines and epidemic risk lifts share
    Frank-coupled onset and persistence; the latent surfaces are frozen
    prior draws shipped with the package.
    """
    surfaces = _load_demo_surfaces()
    components = RiskComponents(
        baseline=np.array([-13.18, -12.31, -12.49]),
        risk=np.array([1.65, 0.95, 1.40]),
        trend=surfaces["trend"],
        season=surfaces["season"],
        spatial=surfaces["spatial"],
    )
    model = initial_model("frank_1", 3).with_scalars(
        np.array([1.0 / 12.0, 0.5, 6.5])
    )
    n_months = components.trend.size
    populations = np.tile(DEMO_POPULATIONS[:, None], (1, n_months))
    return Scenario(
        model=model,
        components=components,
        populations=populations,
        adjacency=grid_adjacency(3, 3),
        season_length=components.season.size,
        location_labels=DEMO_LABELS,
    )
