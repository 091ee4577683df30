"""Run orchestration: simulate, fit, decode, compare, validate.

Each entry point takes a RunConfig (or explicit arguments for
simulation), reads the delimited inputs, and leaves artifacts in the
config's output directory. Every artifact carries the hash of the
config that produced it, and a machine-readable manifest ties a fit's
files together so later stages can refuse mismatched inputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import panelio
from .diagnostics import summarize_chains
from .evidence import (
    ParameterMap,
    bridge_sampling_logml,
    fit_proposal,
    importance_sampling_logml,
    posterior_model_probs,
)
from .exceptions import ValidationError
from .likelihood import IncidencePanel, RiskComponents, backward_smooth
from .mcmc import PosteriorDraws, SamplerConfig, run_chains
from .models import VARIANTS, initial_model
from .priors import sample_igmrf
from .simulate import grid_adjacency, simulate_panel

SUMMARY_HEADER = "# multistrain summary v1"
PROBABILITY_HEADER = "# multistrain epidemic-probabilities v1"
COMPARISON_HEADER = "# multistrain comparison v1"


@dataclass(frozen=True)
class EvidenceSettings:
    """Sample sizes for the marginal likelihood estimators."""

    n_samples: int = 10_000
    n_repeats: int = 50
    n_proposal: int = 10_000
    proposal_df: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_samples, self.n_repeats, self.n_proposal) < 1:
            raise ValidationError("evidence sample sizes must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs, resolvable from a JSON file."""

    variant: str
    panel: Path
    populations: Path
    output_dir: Path
    adjacency: Path | None = None
    season_length: int = 12
    interpolate_populations: bool = False
    n_chains: int = 2
    decode_draws: int = 200
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    evidence: EvidenceSettings = field(default_factory=EvidenceSettings)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(
                f"unknown model variant {self.variant!r}; "
                f"choose from {sorted(VARIANTS)}"
            )
        if self.n_chains < 1:
            raise ValidationError("n_chains must be positive")
        if self.decode_draws < 1:
            raise ValidationError("decode_draws must be positive")
        for name in ("panel", "populations", "output_dir", "adjacency"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, Path(value))

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "panel": str(self.panel),
            "populations": str(self.populations),
            "output_dir": str(self.output_dir),
            "adjacency": None if self.adjacency is None else str(self.adjacency),
            "season_length": self.season_length,
            "interpolate_populations": self.interpolate_populations,
            "n_chains": self.n_chains,
            "decode_draws": self.decode_draws,
            "sampler": dataclasses.asdict(self.sampler),
            "evidence": dataclasses.asdict(self.evidence),
        }
        return out


def config_hash(config: RunConfig) -> str:
    """Short stable digest of the full configuration."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def read_config(path, overrides: dict | None = None) -> RunConfig:
    """Load a JSON run configuration; relative paths follow the file.

    ``overrides`` maps field names (or dotted sampler./evidence. names)
    to replacement values, which is how command-line flags win over the
    file.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as err:
        raise ValidationError(f"{path}: invalid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    known = {
        "variant", "panel", "populations", "output_dir", "adjacency",
        "season_length", "interpolate_populations", "n_chains",
        "decode_draws", "sampler", "evidence",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("sampler.") or key.startswith("evidence."):
            section, _, inner = key.partition(".")
            block = dict(merged.get(section) or {})
            block[inner] = value
            merged[section] = block
        else:
            merged[key] = value
    return config_from_mapping(merged, base=path.parent)


def config_from_mapping(data: dict, base: Path | None = None) -> RunConfig:
    """Build a RunConfig from a plain dict, resolving paths against base."""
    base = Path(".") if base is None else base
    def resolve(name, required):
        value = data.get(name)
        if value is None:
            if required:
                raise ValidationError(f"config needs a {name!r} path")
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    sampler_raw = data.get("sampler") or {}
    evidence_raw = data.get("evidence") or {}
    try:
        sampler = SamplerConfig(**sampler_raw)
    except TypeError as err:
        raise ValidationError(f"bad sampler settings: {err}") from None
    try:
        evidence = EvidenceSettings(**evidence_raw)
    except TypeError as err:
        raise ValidationError(f"bad evidence settings: {err}") from None
    return RunConfig(
        variant=data.get("variant", ""),
        panel=resolve("panel", required=True),
        populations=resolve("populations", required=True),
        output_dir=resolve("output_dir", required=True),
        adjacency=resolve("adjacency", required=False),
        season_length=int(data.get("season_length", 12)),
        interpolate_populations=bool(data.get("interpolate_populations", False)),
        n_chains=int(data.get("n_chains", 2)),
        decode_draws=int(data.get("decode_draws", 200)),
        sampler=sampler,
        evidence=evidence,
    )


def _load_inputs(config: RunConfig) -> tuple[IncidencePanel, np.ndarray | None]:
    for name in ("panel", "populations"):
        if not getattr(config, name).exists():
            raise ValidationError(f"{name} file {getattr(config, name)} not found")
    panel = panelio.read_panel(
        config.panel,
        config.populations,
        season_length=config.season_length,
        interpolate_populations=config.interpolate_populations,
    )
    adjacency = None
    if config.adjacency is not None:
        if not config.adjacency.exists():
            raise ValidationError(f"adjacency file {config.adjacency} not found")
        adjacency = panelio.read_adjacency(config.adjacency, panel.location_labels)
    return panel, adjacency


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------
# decoding


def _state_from_draw(draws: PosteriorDraws, index: dict[str, int], row: int):
    K = draws.n_strains
    model = initial_model(draws.variant, K)
    names = model.scalar_names()
    if names:
        model = model.with_scalars(
            np.array([draws.scalars[row, index[n]] for n in names])
        )
    comps = RiskComponents(
        baseline=np.array(
            [draws.scalars[row, index[f"a_{k + 1}"]] for k in range(K)]
        ),
        risk=np.array(
            [draws.scalars[row, index[f"beta_{k + 1}"]] for k in range(K)]
        )
        if model.spec.has_epidemics
        else np.zeros(K),
        trend=draws.trend[row],
        season=draws.season[row],
        spatial=draws.spatial[row],
    )
    return comps, model


def epidemic_probabilities(
    panel: IncidencePanel,
    chains: list[PosteriorDraws],
    max_draws: int = 200,
) -> np.ndarray:
    """Posterior P(strain k is epidemic at location i, month t).

    Averages the smoothed indicator probabilities over an evenly spaced
    subset of the kept draws from every chain; returns an array of
    shape (strains, months, locations).
    """
    if not chains:
        raise ValidationError("need at least one chain of draws")
    if chains[0].variant == "no_epidemic":
        raise ValidationError("the no-epidemic model has no epidemic states")
    accum = np.zeros((panel.n_strains, panel.n_months, panel.n_locations))
    used = 0
    for draws in chains:
        index = {name: j for j, name in enumerate(draws.scalar_names)}
        take = min(max_draws, draws.n_draws)
        rows = np.unique(np.linspace(0, draws.n_draws - 1, take).astype(int))
        for row in rows:
            comps, model = _state_from_draw(draws, index, row)
            smoothing = backward_smooth(panel, comps, model.joint_matrix())
            accum += smoothing.marginal_epidemic.transpose(2, 1, 0)
            used += 1
    return accum / used


def _write_probability_files(
    probs: np.ndarray, labels, out_dir: Path, digest: str
) -> list[str]:
    files = []
    for k in range(probs.shape[0]):
        path = out_dir / f"epidemic_probability_strain_{k + 1}.csv"
        with open(path, "w", newline="") as handle:
            handle.write(PROBABILITY_HEADER + "\n")
            handle.write(f"# config {digest}\n")
            handle.write("month," + ",".join(labels) + "\n")
            for t in range(probs.shape[1]):
                row = ",".join(f"{v:.6f}" for v in probs[k, t])
                handle.write(f"{t + 1},{row}\n")
        files.append(path.name)
    return files


# ---------------------------------------------------------------------
# fit


def run_fit(config: RunConfig) -> dict:
    """Sample the posterior and leave all fit artifacts on disk.

    Writes one draws file per chain, a per-parameter summary table with
    convergence diagnostics, per-strain epidemic probability matrices
    (for models that have epidemic states), and a manifest.json tying
    the outputs to the config hash. If sampling dies halfway the
    partial outputs stay on disk and the manifest records the failure.
    """
    panel, adjacency = _load_inputs(config)
    digest = config_hash(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": "fit",
        "variant": config.variant,
        "config_hash": digest,
        "config": config.to_dict(),
        "panel_sha256": _file_sha256(config.panel),
        "status": "running",
        "outputs": {},
    }
    started = time.time()
    try:
        chains = run_chains(
            panel,
            config.variant,
            n_chains=config.n_chains,
            config=config.sampler,
            adjacency=adjacency,
        )
        draw_files = []
        for draws in chains:
            name = f"draws_chain{draws.chain + 1}.csv"
            panelio.write_draws(draws, out / name, config_hash=digest)
            draw_files.append(name)
        manifest["outputs"]["draws"] = draw_files

        rows = summarize_chains(chains)
        with open(out / "summary.csv", "w", newline="") as handle:
            handle.write(SUMMARY_HEADER + "\n")
            handle.write(f"# config {digest}\n")
            handle.write(
                "parameter,mean,median,lower95,upper95,ess,split_rhat\n"
            )
            for r in rows:
                handle.write(
                    f"{r['parameter']},{r['mean']:.8g},{r['median']:.8g},"
                    f"{r['lower95']:.8g},{r['upper95']:.8g},"
                    f"{r['ess']:.1f},{r['split_rhat']:.4f}\n"
                )
        manifest["outputs"]["summary"] = "summary.csv"

        if config.variant != "no_epidemic":
            probs = epidemic_probabilities(panel, chains, config.decode_draws)
            labels = panel.location_labels or tuple(
                f"L{i + 1}" for i in range(panel.n_locations)
            )
            manifest["outputs"]["epidemic_probabilities"] = (
                _write_probability_files(probs, labels, out, digest)
            )
        manifest["status"] = "ok"
    except Exception as err:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(err).__name__}: {err}"
        raise
    finally:
        manifest["runtime_seconds"] = round(time.time() - started, 3)
        with open(out / "manifest.json", "w") as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True)
            handle.write("\n")
    return manifest


def run_decode(config: RunConfig) -> dict:
    """Recompute epidemic probability matrices from stored draw files."""
    if config.variant == "no_epidemic":
        raise ValidationError("the no-epidemic model has no epidemic states")
    panel, _ = _load_inputs(config)
    out = Path(config.output_dir)
    digest = config_hash(config)
    chains = _read_fit_draws(out, expected_hash=digest)
    probs = epidemic_probabilities(panel, chains, config.decode_draws)
    labels = panel.location_labels or tuple(
        f"L{i + 1}" for i in range(panel.n_locations)
    )
    files = _write_probability_files(probs, labels, out, digest)
    return {"outputs": files, "max_probability": float(probs.max())}


def _read_fit_draws(out_dir: Path, expected_hash: str | None) -> list[PosteriorDraws]:
    paths = sorted(out_dir.glob("draws_chain*.csv"))
    if not paths:
        raise ValidationError(f"no draws files in {out_dir}; run fit first")
    chains = []
    for path in paths:
        recorded = panelio.draws_config_hash(path)
        if expected_hash is not None and recorded not in (None, expected_hash):
            raise ValidationError(
                f"{path} was produced under config {recorded}, "
                f"current config hashes to {expected_hash}"
            )
        chains.append(panelio.read_draws(path))
    return chains


# ---------------------------------------------------------------------
# compare


def run_compare(configs: list[RunConfig], output_path=None) -> list[dict]:
    """Marginal likelihood table across fitted models.

    Every config must point at a completed fit on the same panel data;
    fits that are missing are skipped with a warning. Emits one row per
    model with both estimators' log evidence, their repeat SDs, and the
    posterior model probabilities.
    """
    rows = []
    panel_hashes = {}
    for config in configs:
        out = Path(config.output_dir)
        manifest_path = out / "manifest.json"
        if not manifest_path.exists():
            warnings.warn(
                f"no completed fit in {out}; skipping {config.variant}",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        manifest = json.loads(manifest_path.read_text())
        digest = config_hash(config)
        if manifest.get("config_hash") != digest:
            raise ValidationError(
                f"{manifest_path} records config {manifest.get('config_hash')}, "
                f"but the supplied config hashes to {digest}"
            )
        if manifest.get("status") != "ok":
            warnings.warn(
                f"fit in {out} is marked {manifest.get('status')!r}; skipping",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        panel_hashes[config.variant] = manifest.get("panel_sha256")
        panel, adjacency = _load_inputs(config)
        chains = _read_fit_draws(out, expected_hash=digest)
        pmap = ParameterMap(
            panel, config.variant, adjacency=adjacency
        )
        matrix = np.vstack([pmap.from_draws(d) for d in chains])
        proposal = fit_proposal(matrix, df=config.evidence.proposal_df)
        settings = config.evidence
        is_est = importance_sampling_logml(
            pmap.log_target, proposal,
            n_samples=settings.n_samples,
            n_repeats=settings.n_repeats,
            seed=settings.seed,
        )
        bs_est = bridge_sampling_logml(
            pmap.log_target, proposal, matrix,
            n_proposal=settings.n_proposal,
            n_repeats=settings.n_repeats,
            seed=settings.seed,
        )
        rows.append({
            "model": config.variant,
            "log_ml_is": is_est.log_ml,
            "se_is": is_est.se,
            "log_ml_bs": bs_est.log_ml,
            "se_bs": bs_est.se,
            "config_hash": digest,
        })
    if not rows:
        raise ValidationError("no completed fits to compare")
    if len(set(panel_hashes.values())) > 1:
        raise ValidationError(
            f"fits were run on different panel files: {panel_hashes}"
        )
    probs_is = posterior_model_probs(
        [_as_estimate(r["log_ml_is"], r["se_is"], "IS") for r in rows]
    )
    probs_bs = posterior_model_probs(
        [_as_estimate(r["log_ml_bs"], r["se_bs"], "BS") for r in rows]
    )
    for row, p_is, p_bs in zip(rows, probs_is, probs_bs):
        row["prob_is"] = float(p_is)
        row["prob_bs"] = float(p_bs)
    if output_path is not None:
        _write_comparison(rows, output_path)
    return rows


def _as_estimate(log_ml, se, method):
    from .evidence import EvidenceEstimate

    return EvidenceEstimate(log_ml, se, method, 1 if se == 0 else 2)


def _write_comparison(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as handle:
        handle.write(COMPARISON_HEADER + "\n")
        handle.write(
            "model,log_ml_is,se_is,prob_is,log_ml_bs,se_bs,prob_bs,config_hash\n"
        )
        for r in rows:
            handle.write(
                f"{r['model']},{r['log_ml_is']:.4f},{r['se_is']:.4f},"
                f"{r['prob_is']:.6f},{r['log_ml_bs']:.4f},{r['se_bs']:.4f},"
                f"{r['prob_bs']:.6f},{r['config_hash']}\n"
            )


# ---------------------------------------------------------------------
# validate


def run_validate(config: RunConfig) -> dict:
    """Load and cross-check all inputs without running anything heavy."""
    panel, adjacency = _load_inputs(config)
    checks = {
        "variant": config.variant,
        "locations": panel.n_locations,
        "months": panel.n_months,
        "strains": panel.n_strains,
        "season_length": panel.season_length,
        "typed_cells_observed": int(panel.observed.sum()),
        "untyped_cells": int(panel.untyped.sum()),
        "has_adjacency": adjacency is not None,
    }
    if panel.n_locations > 1 and adjacency is None:
        raise ValidationError(
            "panel has several locations; a fit will need an adjacency file"
        )
    return checks


# ---------------------------------------------------------------------
# simulate


def run_simulate(
    output_dir,
    variant: str = "frank_1",
    n_strains: int = 2,
    n_locations: int = 4,
    n_months: int = 60,
    season_length: int = 12,
    seed: int = 0,
    population: float = 2.0e5,
) -> dict:
    """Draw a synthetic panel and write a ready-to-fit file set.

    Baselines, risk lifts, and transition parameters follow a fixed
    recipe indexed by strain; the smooth surfaces are drawn from their
    priors at moderate precision, so the files exercise every part of
    the model downstream.
    """
    if variant not in VARIANTS:
        raise ValidationError(
            f"unknown model variant {variant!r}; choose from {sorted(VARIANTS)}"
        )
    if variant == "no_epidemic":
        raise ValidationError("simulate a model with epidemic states instead")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    side = int(round(np.sqrt(n_locations)))
    if side * side == n_locations and n_locations > 1:
        adjacency = grid_adjacency(side, side)
    elif n_locations > 1:
        adjacency = np.zeros((n_locations, n_locations), dtype=np.int64)
        for i in range(n_locations - 1):
            adjacency[i, i + 1] = adjacency[i + 1, i] = 1
    else:
        adjacency = np.zeros((1, 1), dtype=np.int64)

    from .mcmc import default_structures  # local import avoids a cycle

    model = initial_model(variant, n_strains)
    baseline = -10.0 - 0.3 * np.arange(n_strains)
    risk = 1.0 + 0.15 * np.arange(n_strains)
    probe_panel = IncidencePanel(
        counts=np.zeros((n_locations, n_months, n_strains)),
        populations=np.full((n_locations, n_months), population),
        observed=np.ones((n_locations, n_months, n_strains), dtype=bool),
        untyped=np.zeros((n_locations, n_months), dtype=bool),
        totals=np.zeros((n_locations, n_months)),
        season_length=season_length,
    )
    structures = default_structures(probe_panel, adjacency)
    trend = sample_igmrf(structures["trend"], 40.0, rng)
    season = sample_igmrf(structures["season"], 8.0, rng)
    spatial = (
        sample_igmrf(structures["spatial"], 15.0, rng)
        if structures["spatial"] is not None
        else np.zeros(n_locations)
    )
    comps = RiskComponents(
        baseline=baseline, risk=risk, trend=trend, season=season, spatial=spatial
    )
    populations = np.full((n_locations, n_months), float(population))
    sim = simulate_panel(model, comps, populations, rng, season_length)
    labels = [f"L{i + 1}" for i in range(n_locations)]

    panelio.write_panel(sim.panel, out / "panel.csv")
    panelio.write_populations(populations, labels, out / "populations.csv")
    panelio.write_adjacency(adjacency, labels, out / "adjacency.csv")
    with open(out / "truth.csv", "w", newline="") as handle:
        handle.write("# multistrain simulation truth v1\n")
        handle.write("location,month,strain,epidemic\n")
        for i, label in enumerate(labels):
            for t in range(n_months):
                for k in range(n_strains):
                    handle.write(
                        f"{label},{t + 1},{k + 1},{int(sim.epidemic[i, t, k])}\n"
                    )
    scenario = {
        "variant": variant,
        "n_strains": n_strains,
        "n_locations": n_locations,
        "n_months": n_months,
        "season_length": season_length,
        "seed": seed,
        "baseline": baseline.tolist(),
        "risk": risk.tolist(),
        "transition_scalars": model.scalar_values().tolist(),
        "epidemic_months": int(sim.epidemic.sum()),
    }
    with open(out / "scenario.json", "w") as handle:
        json.dump(scenario, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return scenario
