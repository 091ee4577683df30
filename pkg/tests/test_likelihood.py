"""Forward-backward likelihood against brute-force path enumeration.

The reference implementation below enumerates every joint state path,
scoring transitions and Poisson emissions with scipy, so it shares no
code with the log-space recursions under test.
"""

import itertools

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

import multistrain as ms
from multistrain.exceptions import ValidationError
from multistrain.likelihood import surface_gradients_from_smoothing


def _cell_means(panel, comps, state, location, month):
    """Per-strain Poisson means at a cell, conditional on a joint state."""
    n_strains = panel.n_strains
    season = comps.season[month % panel.season_length]
    mus = np.empty(n_strains)
    for k in range(n_strains):
        bit_k = (state >> k) & 1
        log_mu = (
            np.log(panel.populations[location, month])
            + comps.baseline[k]
            + comps.trend[month]
            + season
            + comps.spatial[location]
            + comps.risk[k] * bit_k
        )
        mus[k] = np.exp(log_mu)
    return mus


def _cell_log_emission(panel, comps, state, location, month):
    mus = _cell_means(panel, comps, state, location, month)
    if panel.untyped[location, month]:
        return stats.poisson.logpmf(panel.totals[location, month], mus.sum())
    total = 0.0
    for k in range(panel.n_strains):
        if panel.observed[location, month, k]:
            total += stats.poisson.logpmf(panel.counts[location, month, k], mus[k])
    return total


def _enumerate_location(panel, comps, transition, initial, location):
    """Exact loglik and state posteriors for one location by enumeration."""
    n_states = transition.shape[0]
    n_months = panel.n_months
    emit = np.array(
        [
            [_cell_log_emission(panel, comps, s, location, t) for s in range(n_states)]
            for t in range(n_months)
        ]
    )
    with np.errstate(divide="ignore"):
        log_trans = np.log(transition)
        log_init = np.log(initial)
    path_logp = []
    paths = list(itertools.product(range(n_states), repeat=n_months))
    for path in paths:
        lp = log_init[path[0]] + emit[0, path[0]]
        for t in range(1, n_months):
            lp += log_trans[path[t - 1], path[t]] + emit[t, path[t]]
        path_logp.append(lp)
    path_logp = np.array(path_logp)
    loglik = logsumexp(path_logp)
    posterior = np.zeros((n_months, n_states))
    for lp, path in zip(path_logp, paths):
        for t, s in enumerate(path):
            posterior[t, s] += np.exp(lp - loglik)
    return loglik, posterior


def _reference_panel():
    """Two locations, four months, two strains; one gap, one untyped cell."""
    counts = np.array(
        [
            [[3, 1], [5, 0], [2, 4], [9, 2]],
            [[1, 1], [0, 0], [6, 3], [4, 7]],
        ],
        dtype=float,
    )
    populations = np.array(
        [
            [52_000.0, 52_100.0, 52_200.0, 52_300.0],
            [88_000.0, 87_900.0, 87_800.0, 87_700.0],
        ]
    )
    observed = np.ones(counts.shape, dtype=bool)
    observed[0, 2, 1] = False  # a single missing typed count
    untyped = np.zeros((2, 4), dtype=bool)
    totals = np.zeros((2, 4))
    untyped[1, 1] = True  # this cell only reported an overall total
    totals[1, 1] = 9.0
    return ms.IncidencePanel(
        counts=counts,
        populations=populations,
        observed=observed,
        untyped=untyped,
        totals=totals,
        season_length=4,
    )


def _reference_components():
    return ms.RiskComponents(
        baseline=np.array([-9.6, -10.3]),
        risk=np.array([1.2, 0.8]),
        trend=np.array([0.05, -0.02, 0.04, -0.07]),
        season=np.array([0.3, -0.1, -0.3, 0.1]),
        spatial=np.array([0.12, -0.12]),
    )


def _reference_transition():
    return ms.build_copula_coupled(
        np.array([1.0 / 12.0, 0.2]), np.array([0.5, 0.4]), ms.FrankCopula(3.0)
    )


def test_forward_loglik_matches_path_enumeration():
    panel = _reference_panel()
    comps = _reference_components()
    transition = _reference_transition()
    initial = ms.stationary_distribution(transition)
    expected = sum(
        _enumerate_location(panel, comps, transition, initial, i)[0] for i in range(2)
    )
    got = ms.forward_loglik(panel, comps, transition)
    assert got == pytest.approx(expected, rel=1e-12)


def test_smoothing_matches_path_enumeration():
    panel = _reference_panel()
    comps = _reference_components()
    transition = _reference_transition()
    initial = ms.stationary_distribution(transition)
    result = ms.backward_smooth(panel, comps, transition)
    bits = ms.state_bits(2).astype(float)
    for i in range(2):
        loglik_i, posterior = _enumerate_location(panel, comps, transition, initial, i)
        assert result.loglik_by_location[i] == pytest.approx(loglik_i, rel=1e-12)
        np.testing.assert_allclose(result.state_probs[i], posterior, atol=1e-12)
        np.testing.assert_allclose(
            result.marginal_epidemic[i], posterior @ bits, atol=1e-12
        )
    assert result.loglik == pytest.approx(result.loglik_by_location.sum(), rel=1e-15)
    np.testing.assert_allclose(result.state_probs.sum(axis=2), 1.0, rtol=1e-12)


def test_log_emissions_match_direct_poisson():
    panel = _reference_panel()
    comps = _reference_components()
    engine = ms.LikelihoodEngine(panel, 4)
    log_emit = engine.log_emissions(comps)
    for i in range(panel.n_locations):
        for t in range(panel.n_months):
            for s in range(4):
                expected = _cell_log_emission(panel, comps, s, i, t)
                assert log_emit[i, t, s] == pytest.approx(expected, rel=1e-11), (
                    i,
                    t,
                    s,
                )


def test_fully_missing_location_contributes_nothing():
    panel = _reference_panel()
    observed = panel.observed.copy()
    observed[1] = False
    untyped = panel.untyped.copy()
    untyped[1] = False
    gappy = ms.IncidencePanel(
        counts=panel.counts,
        populations=panel.populations,
        observed=observed,
        untyped=untyped,
        totals=panel.totals,
        season_length=4,
    )
    comps = _reference_components()
    transition = _reference_transition()
    result = ms.backward_smooth(gappy, comps, transition)
    assert result.loglik_by_location[1] == pytest.approx(0.0, abs=1e-12)
    # with no data the smoothed law falls back to the chain's own law
    initial = ms.stationary_distribution(transition)
    np.testing.assert_allclose(result.state_probs[1, 0], initial, atol=1e-10)


def test_untyped_flag_overrides_typed_observations():
    panel = _reference_panel()
    assert not panel.observed[1, 1].any()
    assert panel.observed[0, 0].all()


def test_single_state_model_is_plain_poisson():
    panel = _reference_panel()
    comps = _reference_components()
    transition = np.array([[1.0]])
    got = ms.forward_loglik(panel, comps, transition)
    expected = 0.0
    for i in range(2):
        for t in range(4):
            expected += _cell_log_emission(panel, comps, 0, i, t)
    assert got == pytest.approx(expected, rel=1e-12)


def test_surface_gradients_match_finite_differences():
    rng = np.random.default_rng(42)
    n_loc, n_months, n_strains = 3, 8, 2
    populations = rng.uniform(4e4, 1.2e5, size=(n_loc, n_months))
    comps = ms.RiskComponents(
        baseline=np.array([-9.8, -10.1]),
        risk=np.array([1.4, 0.9]),
        trend=rng.normal(0.0, 0.1, n_months),
        season=rng.normal(0.0, 0.2, 4),
        spatial=rng.normal(0.0, 0.15, n_loc),
    )
    counts = rng.poisson(8.0, size=(n_loc, n_months, n_strains)).astype(float)
    observed = np.ones(counts.shape, dtype=bool)
    observed[0, 3, 0] = False
    observed[2, 5, :] = False
    untyped = np.zeros((n_loc, n_months), dtype=bool)
    totals = np.zeros((n_loc, n_months))
    untyped[1, 6] = True
    totals[1, 6] = 17.0
    panel = ms.IncidencePanel(
        counts=counts,
        populations=populations,
        observed=observed,
        untyped=untyped,
        totals=totals,
        season_length=4,
    )
    transition = _reference_transition()
    grads = ms.surface_gradients(panel, comps, transition)

    def loglik_with(**overrides):
        fields = {
            "baseline": comps.baseline,
            "risk": comps.risk,
            "trend": comps.trend,
            "season": comps.season,
            "spatial": comps.spatial,
        }
        fields.update(overrides)
        return ms.forward_loglik(panel, ms.RiskComponents(**fields), transition)

    h = 1e-6
    for name in ("trend", "season", "spatial"):
        base = getattr(comps, name)
        fd = np.empty_like(base)
        for j in range(base.size):
            bump = np.zeros_like(base)
            bump[j] = h
            fd[j] = (
                loglik_with(**{name: base + bump})
                - loglik_with(**{name: base - bump})
            ) / (2 * h)
        np.testing.assert_allclose(grads[name], fd, rtol=5e-5, atol=5e-4)
        assert np.all(grads[f"{name}_curvature"] >= 0.0)


def test_surface_gradients_reuse_matches_fresh_pass():
    panel = _reference_panel()
    comps = _reference_components()
    transition = _reference_transition()
    engine = ms.LikelihoodEngine(panel, 4)
    smoothing = engine.smooth(
        engine.log_emissions(comps), transition, ms.stationary_distribution(transition)
    )
    reused = surface_gradients_from_smoothing(engine, comps, smoothing)
    fresh = ms.surface_gradients(panel, comps, transition)
    for key, value in fresh.items():
        np.testing.assert_allclose(reused[key], value, rtol=1e-14)


def test_strain_relabelling_is_invariant():
    panel = _reference_panel()
    comps = _reference_components()
    p = np.array([1.0 / 12.0, 0.2])
    q = np.array([0.5, 0.4])
    transition = ms.build_copula_coupled(p, q, ms.FrankCopula(3.0))
    swapped_panel = ms.IncidencePanel(
        counts=panel.counts[:, :, ::-1],
        populations=panel.populations,
        observed=panel.observed[:, :, ::-1],
        untyped=panel.untyped,
        totals=panel.totals,
        season_length=4,
    )
    swapped_comps = ms.RiskComponents(
        baseline=comps.baseline[::-1],
        risk=comps.risk[::-1],
        trend=comps.trend,
        season=comps.season,
        spatial=comps.spatial,
    )
    swapped_transition = ms.build_copula_coupled(p[::-1], q[::-1], ms.FrankCopula(3.0))
    original = ms.forward_loglik(panel, comps, transition)
    relabelled = ms.forward_loglik(swapped_panel, swapped_comps, swapped_transition)
    assert relabelled == pytest.approx(original, rel=1e-12)


def test_smoothed_intensity_with_zero_risk_is_endemic():
    panel = _reference_panel()
    comps = _reference_components()
    flat = ms.RiskComponents(
        baseline=comps.baseline,
        risk=np.zeros(2),
        trend=comps.trend,
        season=comps.season,
        spatial=comps.spatial,
    )
    transition = _reference_transition()
    intensity = ms.smoothed_intensity(panel, flat, transition)
    engine = ms.LikelihoodEngine(panel, 4)
    endemic = np.exp(engine.log_means_endemic(flat))
    np.testing.assert_allclose(intensity, endemic, rtol=1e-12)


def test_panel_validation_rejects_bad_inputs():
    counts = np.ones((2, 4, 2))
    pops = np.full((2, 4), 1e4)
    observed = np.ones(counts.shape, dtype=bool)
    untyped = np.zeros((2, 4), dtype=bool)
    totals = np.zeros((2, 4))
    with pytest.raises(ValidationError):
        ms.IncidencePanel(counts * -1.0, pops, observed, untyped, totals)
    with pytest.raises(ValidationError):
        ms.IncidencePanel(counts + 0.5, pops, observed, untyped, totals)
    with pytest.raises(ValidationError):
        ms.IncidencePanel(counts, pops * 0.0, observed, untyped, totals)
    with pytest.raises(ValidationError):
        ms.IncidencePanel(counts, pops, observed, untyped, totals, season_length=2)
    bad_totals = totals.copy()
    bad_totals[0, 0] = -3.0
    bad_untyped = untyped.copy()
    bad_untyped[0, 0] = True
    with pytest.raises(ValidationError):
        ms.IncidencePanel(counts, pops, observed, bad_untyped, bad_totals)
    with pytest.raises(ValidationError):
        ms.IncidencePanel(counts, pops[:1], observed, untyped, totals)
    with pytest.raises(ValidationError):
        ms.LikelihoodEngine(ms.fully_observed_panel(counts, pops, 4), 3)
