"""Sampler validation.

The quantitative tests compare chain moments against references that do
not depend on the sampler at all: dense-grid integration of the
unnormalized posterior for low-dimensional blocks, exact conjugate
posteriors where the update is conjugate, and the priors themselves on a
panel with every cell missing (the likelihood is then flat, so the chain
must reproduce each prior marginal).  Grid constants were computed once
with the recipes quoted in the tests and are frozen here; tolerances sit
at roughly five sigma of the chain's own Monte Carlo error.
"""

import dataclasses

import numpy as np
import pytest
from scipy import special

import multistrain as ms
from multistrain import transforms

# ---------------------------------------------------------------------
# helpers


def _ess(x):
    """Effective sample size from the initial positive autocorrelations."""
    x = x - x.mean()
    n = len(x)
    acf = np.correlate(x, x, "full")[n - 1 :] / (np.arange(n, 0, -1) * x.var() + 1e-300)
    total, lag = 1.0, 1
    while lag < n - 1 and acf[lag] > 0.05:
        total += 2.0 * acf[lag]
        lag += 1
    return n / total


def _all_missing_panel(n_locations, n_months, n_strains, season_length):
    shape = (n_locations, n_months, n_strains)
    return ms.IncidencePanel(
        counts=np.zeros(shape),
        populations=np.full((n_locations, n_months), 1.0e5),
        observed=np.zeros(shape, dtype=bool),
        untyped=np.zeros((n_locations, n_months), dtype=bool),
        totals=np.zeros((n_locations, n_months)),
        season_length=season_length,
    )


def _scalar_only_config(**overrides):
    base = dict(
        update_trend=False,
        update_season=False,
        update_spatial=False,
        update_precisions=False,
        update_baselines=False,
        update_risks=False,
        joint_move=False,
    )
    base.update(overrides)
    return ms.SamplerConfig(**base)


# ---------------------------------------------------------------------
# dense-grid references
#
# Each frozen block below was produced by evaluating the exact
# unnormalized log posterior of the stated two-parameter slice on the
# stated grid, exponentiating, and taking weighted moments.  Boundary
# weights were confirmed negligible (< 1e-12 of the peak) so the grids
# capture essentially all posterior mass.


@pytest.fixture(scope="module")
def onset_persistence_panel():
    # single location, 50 months, one strain, strong epidemic signal
    rng = np.random.default_rng(31)
    model = ms.initial_model("independent_1", 1).with_scalars(np.array([0.12, 0.45]))
    comps = ms.RiskComponents(
        baseline=np.array([-10.0]),
        risk=np.array([1.3]),
        trend=np.zeros(50),
        season=np.zeros(4),
        spatial=np.zeros(1),
    )
    pops = np.full((1, 50), 1.2e5)
    sim = ms.simulate_panel(model, comps, pops, rng, season_length=4)
    return sim.panel, comps, model


# 140x140 grid, p in [0.005, 0.7], q in [0.02, 0.98], surfaces and rates
# fixed at the simulation values
ONSET_GRID_MEAN_P = 0.141330
ONSET_GRID_MEAN_Q = 0.459070
ONSET_GRID_SD_P = 0.049592
ONSET_GRID_SD_Q = 0.098547


def test_transition_walk_matches_dense_grid_reference(onset_persistence_panel):
    panel, comps, model = onset_persistence_panel
    cfg = _scalar_only_config(
        n_iterations=9000, burn_in=2000, seed=5, update_transition=True
    )
    draws = ms.run_mcmc(
        panel,
        "independent_1",
        cfg,
        start=(comps, model, {"trend": 1e3, "season": 10.0, "spatial": 10.0}),
    )
    p, q = draws.scalar("p"), draws.scalar("q")
    assert abs(p.mean() - ONSET_GRID_MEAN_P) < 0.010
    assert abs(q.mean() - ONSET_GRID_MEAN_Q) < 0.020
    assert abs(p.std() - ONSET_GRID_SD_P) < 0.010
    assert abs(q.std() - ONSET_GRID_SD_Q) < 0.020
    assert 0.1 < draws.acceptance["p"] < 0.4
    assert _ess(p) > 200


def test_joint_move_targets_the_same_posterior(onset_persistence_panel):
    # identical posterior, now explored by the adaptive joint walk on
    # (logit p, logit q) mixed with the single-site updates
    panel, comps, model = onset_persistence_panel
    cfg = _scalar_only_config(
        n_iterations=9000, burn_in=2000, seed=5, update_transition=True, joint_move=True
    )
    draws = ms.run_mcmc(
        panel,
        "independent_1",
        cfg,
        start=(comps, model, {"trend": 1e3, "season": 10.0, "spatial": 10.0}),
    )
    assert abs(draws.scalar("p").mean() - ONSET_GRID_MEAN_P) < 0.010
    assert abs(draws.scalar("q").mean() - ONSET_GRID_MEAN_Q) < 0.020
    assert 0.1 < draws.acceptance["joint"] < 0.4


# 160x160 grid over the two sum-to-zero trend coordinates, span eight
# approximate posterior deviations around the mode, no_epidemic variant
# so the target is strictly log-concave (Poisson counts, Gaussian
# smoothing prior, trend precision fixed at 40)
TREND_GRID_MEAN = (0.675830, -0.397514)
TREND_GRID_SD = (0.291150, 0.179676)


def test_trend_mala_matches_dense_grid_reference():
    rng = np.random.default_rng(41)
    model = ms.initial_model("no_epidemic", 1)
    truth = ms.RiskComponents(
        baseline=np.array([-9.9]),
        risk=np.array([0.0]),
        trend=np.array([0.25, 0.0, -0.25]),
        season=np.zeros(3),
        spatial=np.zeros(1),
    )
    sim = ms.simulate_panel(model, truth, np.full((1, 3), 1.5e5), rng, season_length=3)
    start = dataclasses.replace(truth, trend=np.zeros(3))
    cfg = ms.SamplerConfig(
        n_iterations=12000,
        burn_in=2000,
        seed=8,
        update_season=False,
        update_spatial=False,
        update_precisions=False,
        update_baselines=False,
        update_risks=False,
        update_transition=False,
        joint_move=False,
    )
    draws = ms.run_mcmc(
        sim.panel,
        "no_epidemic",
        cfg,
        start=(start, model, {"trend": 40.0, "season": 10.0, "spatial": 10.0}),
    )
    z = draws.trend @ transforms.sum_zero_basis(3)
    for axis in range(2):
        assert abs(z[:, axis].mean() - TREND_GRID_MEAN[axis]) < 0.020
        assert abs(z[:, axis].std() - TREND_GRID_SD[axis]) < 0.020
    # every accepted draw keeps the identification constraint
    assert np.abs(draws.trend.sum(axis=1)).max() < 1e-9
    assert 0.3 < draws.acceptance["trend"] < 0.8


# 130x130 grid over the two free entries of an unrestricted two-state
# transition matrix (rows renormalized), 120 months x 2 locations
GENERAL_GRID_MEAN_01 = 0.111792
GENERAL_GRID_MEAN_10 = 0.434288
GENERAL_GRID_SD_01 = 0.023299
GENERAL_GRID_SD_10 = 0.071235


def test_general_rows_match_dense_grid_reference():
    rng = np.random.default_rng(23)
    model = ms.initial_model("general", 1).with_scalars(np.array([0.9, 0.1, 0.45, 0.55]))
    comps = ms.RiskComponents(
        baseline=np.array([-9.9]),
        risk=np.array([1.4]),
        trend=np.zeros(120),
        season=np.zeros(4),
        spatial=np.zeros(2),
    )
    sim = ms.simulate_panel(model, comps, np.full((2, 120), 1.0e5), rng, season_length=4)
    cfg = _scalar_only_config(
        n_iterations=9000, burn_in=2000, seed=7, update_transition=True
    )
    adjacency = np.array([[0, 1], [1, 0]])
    draws = ms.run_mcmc(
        sim.panel,
        "general",
        cfg,
        adjacency=adjacency,
        start=(comps, model, {"trend": 1e3, "season": 10.0, "spatial": 10.0}),
    )
    g01, g10 = draws.scalar("gamma_0_1"), draws.scalar("gamma_1_0")
    assert abs(g01.mean() - GENERAL_GRID_MEAN_01) < 0.005
    assert abs(g10.mean() - GENERAL_GRID_MEAN_10) < 0.012
    assert abs(g01.std() - GENERAL_GRID_SD_01) < 0.005
    assert abs(g10.std() - GENERAL_GRID_SD_10) < 0.012
    # stored rows stay exactly stochastic
    total = draws.scalar("gamma_0_0") + g01
    assert np.allclose(total, 1.0, atol=1e-12)


# ---------------------------------------------------------------------
# prior recovery on an all-missing panel


def test_missing_panel_reproduces_priors():
    panel = _all_missing_panel(1, 8, 2, 4)
    model = ms.initial_model("frank_1", 2)
    comps = ms.RiskComponents(
        baseline=np.full(2, -10.0),
        risk=np.full(2, 1.0),
        trend=np.zeros(8),
        season=np.zeros(4),
        spatial=np.zeros(1),
    )
    cfg = ms.SamplerConfig(
        n_iterations=10000,
        burn_in=2000,
        seed=13,
        update_trend=False,
        update_season=False,
        update_spatial=False,
        update_precisions=False,
        joint_move=True,
    )
    draws = ms.run_mcmc(
        panel,
        "frank_1",
        cfg,
        start=(comps, model, {"trend": 10.0, "season": 10.0, "spatial": 10.0}),
    )
    # onset Beta(1, 11), persistence Beta(6, 6), risk increment Gamma(2, 2),
    # dependence Normal(0, 10), log baseline from the vague rate prior
    checks = {
        "p": (1.0 / 12.0, np.sqrt(11.0 / (144 * 13)), 0.012),
        "q": (0.5, np.sqrt(36.0 / (144 * 13)), 0.018),
        "beta_1": (1.0, np.sqrt(0.5), 0.10),
        "beta_2": (1.0, np.sqrt(0.5), 0.10),
        "psi": (0.0, 10.0, 1.2),
        "a_1": (
            special.digamma(0.01) - np.log(0.01) - 15.0,
            np.sqrt(special.polygamma(1, 0.01)),
            5.5,
        ),
    }
    for name, (mean, sd, tol) in checks.items():
        values = draws.scalar(name)
        assert abs(values.mean() - mean) < tol, name
        assert abs(values.std() / sd - 1.0) < 0.15, name


def test_missing_panel_reproduces_loading_prior():
    # same idea for the factor variant: the free loading is uniform on
    # (-1, 1) and the walk runs through a probit reparameterization, so
    # any Jacobian slip would bend the recovered marginal
    panel = _all_missing_panel(1, 8, 2, 4)
    model = ms.initial_model("factor_1", 2)
    comps = ms.RiskComponents(
        baseline=np.full(2, -10.0),
        risk=np.full(2, 1.0),
        trend=np.zeros(8),
        season=np.zeros(4),
        spatial=np.zeros(1),
    )
    cfg = ms.SamplerConfig(
        n_iterations=8000,
        burn_in=2000,
        seed=13,
        update_trend=False,
        update_season=False,
        update_spatial=False,
        update_precisions=False,
        update_baselines=False,
        update_risks=False,
        joint_move=True,
    )
    draws = ms.run_mcmc(
        panel,
        "factor_1",
        cfg,
        start=(comps, model, {"trend": 10.0, "season": 10.0, "spatial": 10.0}),
    )
    xi = draws.scalar("xi_2")
    assert abs(xi.mean()) < 0.10
    assert abs(xi.std() - np.sqrt(1.0 / 3.0)) < 0.06
    assert xi.min() > -1.0 and xi.max() < 1.0
    assert abs(draws.scalar("p").mean() - 1.0 / 12.0) < 0.014


# ---------------------------------------------------------------------
# conjugate blocks


def test_baseline_update_is_exact_conjugate_sampling():
    # flat surfaces, no epidemics: the baseline rate posterior is exactly
    # Gamma(shape0 + total count, rate0 + total exposure), and the
    # independence proposal equals it, so every draw must be accepted
    rng = np.random.default_rng(11)
    model = ms.initial_model("no_epidemic", 1)
    truth = ms.RiskComponents(
        baseline=np.array([-9.7]),
        risk=np.array([0.0]),
        trend=np.zeros(24),
        season=np.zeros(4),
        spatial=np.zeros(1),
    )
    sim = ms.simulate_panel(model, truth, np.full((1, 24), 8.0e4), rng, season_length=4)
    cfg = _scalar_only_config(
        n_iterations=4000, burn_in=1000, seed=3, update_baselines=True
    )
    draws = ms.run_mcmc(
        sim.panel,
        "no_epidemic",
        cfg,
        start=(truth, model, {"trend": 10.0, "season": 10.0, "spatial": 10.0}),
    )
    assert draws.acceptance["a_1"] > 0.9999

    shape_post = 0.01 + sim.panel.counts.sum()
    rate_post = 0.01 * np.exp(15.0) + sim.panel.populations.sum()
    a = draws.scalar("a_1")
    mean_exact = special.digamma(shape_post) - np.log(rate_post)
    sd_exact = np.sqrt(special.polygamma(1, shape_post))
    assert abs(a.mean() - mean_exact) < 5 * sd_exact / np.sqrt(len(a))
    assert abs(a.std() / sd_exact - 1.0) < 0.10


def test_precision_gibbs_matches_conjugate_moments():
    # surfaces frozen at a bumpy state: each precision draw is then iid
    # Gamma(shape0 + rank/2, rate0 + quadratic/2)
    panel = _all_missing_panel(1, 12, 1, 4)
    model = ms.initial_model("no_epidemic", 1)
    months = np.arange(12)
    trend = 0.3 * np.sin(2 * np.pi * months / 12)
    trend -= trend.mean()
    season = np.array([0.2, -0.1, -0.05, -0.05])
    comps = ms.RiskComponents(
        baseline=np.array([-10.0]),
        risk=np.array([0.0]),
        trend=trend,
        season=season,
        spatial=np.zeros(1),
    )
    cfg = _scalar_only_config(
        n_iterations=3500, burn_in=500, seed=21, update_precisions=True
    )
    draws = ms.run_mcmc(
        panel,
        "no_epidemic",
        cfg,
        start=(comps, model, {"trend": 7.0, "season": 5.0, "spatial": 3.0}),
    )
    for name, field, struct, shape0, rate0 in (
        ("kappa_trend", trend, ms.rw2_structure(12), 1.0, 1e-4),
        ("kappa_season", season, ms.crw1_structure(4), 1.0, 1e-3),
    ):
        quad = field @ struct.matrix @ field
        shape = shape0 + 0.5 * (struct.order - struct.rank_deficiency)
        rate = rate0 + 0.5 * quad
        kappa = draws.scalar(name)
        rel_band = 5.0 / np.sqrt(shape * len(kappa))
        assert abs(kappa.mean() * rate / shape - 1.0) < rel_band, name
    # single location: no spatial field to smooth, the precision is inert
    assert np.ptp(draws.scalar("kappa_spatial")) == 0.0
    assert draws.scalar("kappa_spatial")[0] == 3.0


# ---------------------------------------------------------------------
# determinism and plumbing


@pytest.fixture(scope="module")
def small_two_strain_sim():
    rng = np.random.default_rng(77)
    model = ms.initial_model("independent_2", 2).with_scalars(
        np.array([0.1, 0.15, 0.5, 0.4])
    )
    comps = ms.RiskComponents(
        baseline=np.array([-9.8, -10.2]),
        risk=np.array([1.0, 1.2]),
        trend=np.zeros(10),
        season=np.zeros(4),
        spatial=np.zeros(1),
    )
    sim = ms.simulate_panel(model, comps, np.full((1, 10), 9.0e4), rng, season_length=4)
    return sim.panel, comps, model


def test_same_seed_same_draws(small_two_strain_sim):
    panel, _, _ = small_two_strain_sim
    cfg = ms.SamplerConfig(n_iterations=800, burn_in=200, seed=42)
    first = ms.run_mcmc(panel, "independent_2", cfg)
    second = ms.run_mcmc(panel, "independent_2", cfg)
    assert np.array_equal(first.scalars, second.scalars)
    assert np.array_equal(first.trend, second.trend)
    assert np.array_equal(first.season, second.season)
    assert np.array_equal(first.loglik, second.loglik)


def test_chain_index_decorrelates_streams(small_two_strain_sim):
    panel, _, _ = small_two_strain_sim
    cfg = ms.SamplerConfig(n_iterations=600, burn_in=100, seed=42)
    chain0 = ms.run_mcmc(panel, "independent_2", cfg, chain=0)
    chain1 = ms.run_mcmc(panel, "independent_2", cfg, chain=1)
    assert chain1.chain == 1
    assert not np.array_equal(chain0.scalars, chain1.scalars)


def test_run_chains_returns_labeled_independent_chains(small_two_strain_sim):
    panel, _, _ = small_two_strain_sim
    cfg = ms.SamplerConfig(n_iterations=400, burn_in=100, seed=9)
    chains = ms.run_chains(panel, "independent_2", n_chains=2, config=cfg)
    assert [c.chain for c in chains] == [0, 1]
    assert not np.array_equal(chains[0].scalars, chains[1].scalars)
    with pytest.raises(ms.ValidationError):
        ms.run_chains(panel, "independent_2", n_chains=0, config=cfg)


def test_block_toggles_freeze_their_parameters(small_two_strain_sim):
    panel, comps, model = small_two_strain_sim
    cfg = ms.SamplerConfig(
        n_iterations=300,
        burn_in=50,
        seed=2,
        update_trend=False,
        update_transition=False,
        update_precisions=False,
    )
    draws = ms.run_mcmc(
        panel,
        "independent_2",
        cfg,
        start=(comps, model, {"trend": 10.0, "season": 10.0, "spatial": 10.0}),
    )
    assert np.ptp(draws.trend, axis=0).max() == 0.0
    assert np.array_equal(draws.trend[0], comps.trend)
    for name in ("p_1", "p_2", "q_1", "q_2"):
        assert np.ptp(draws.scalar(name)) == 0.0
    # unfrozen blocks still move
    assert np.ptp(draws.scalar("a_1")) > 0.0
    assert np.ptp(draws.season, axis=0).max() > 0.0


def test_joint_move_respects_transition_freeze(small_two_strain_sim):
    # the joint walk must skip parameters whose block is toggled off,
    # otherwise "frozen" would silently depend on joint_move
    panel, comps, model = small_two_strain_sim
    cfg = ms.SamplerConfig(
        n_iterations=400,
        burn_in=50,
        seed=6,
        update_trend=False,
        update_season=False,
        update_spatial=False,
        update_precisions=False,
        update_transition=False,
        joint_move=True,
    )
    draws = ms.run_mcmc(
        panel,
        "independent_2",
        cfg,
        start=(comps, model, {"trend": 10.0, "season": 10.0, "spatial": 10.0}),
    )
    assert np.ptp(draws.scalar("p_1")) == 0.0
    assert np.ptp(draws.scalar("q_2")) == 0.0
    assert np.ptp(draws.scalar("a_1")) > 0.0


def test_config_validation():
    with pytest.raises(ms.ValidationError):
        ms.SamplerConfig(n_iterations=0)
    with pytest.raises(ms.ValidationError):
        ms.SamplerConfig(n_iterations=100, burn_in=100)
    with pytest.raises(ms.ValidationError):
        ms.SamplerConfig(thin=0)
    with pytest.raises(ms.ValidationError):
        ms.SamplerConfig(adapt_decay=0.4)


def test_draws_interface(small_two_strain_sim):
    panel, _, _ = small_two_strain_sim
    cfg = ms.SamplerConfig(n_iterations=250, burn_in=50, thin=2, seed=1)
    draws = ms.run_mcmc(panel, "independent_2", cfg)
    assert draws.n_draws == 1 + (250 - 50 - 1) // 2
    assert draws.scalars.shape == (draws.n_draws, len(draws.scalar_names))
    for expected in ("a_1", "a_2", "beta_1", "p_1", "q_2", "kappa_trend"):
        assert expected in draws.scalar_names
    low, high = draws.credible_interval("beta_1", level=0.9)
    values = draws.scalar("beta_1")
    assert low < np.median(values) < high
    with pytest.raises(ms.ValidationError):
        draws.scalar("not_a_parameter")


def test_log_unnormalized_posterior_support(small_two_strain_sim):
    panel, comps, model = small_two_strain_sim
    engine = ms.LikelihoodEngine(panel, model.n_states)
    structures = ms.default_structures(panel, None)
    precisions = {"trend": 10.0, "season": 10.0, "spatial": 10.0}
    prior = ms.PriorConfig()
    value = ms.log_unnormalized_posterior(
        engine, comps, model, precisions, prior, structures
    )
    assert np.isfinite(value)
    bad = dataclasses.replace(comps, risk=np.array([-0.5, 1.0]))
    assert ms.log_unnormalized_posterior(
        engine, bad, model, precisions, prior, structures
    ) == -np.inf


def test_default_start_is_data_informed(small_two_strain_sim):
    panel, _, _ = small_two_strain_sim
    comps = ms.initial_components(panel, 2, True)
    # empirical per-strain rates on the log scale, flat surfaces
    for k in range(2):
        rate = panel.counts[:, :, k].sum() / panel.populations.sum()
        assert abs(comps.baseline[k] - np.log(rate)) < 0.5
    assert np.all(comps.risk > 0.0)
    assert np.ptp(comps.risk) == 0.0
    assert not comps.trend.any()
    assert not comps.season.any()
