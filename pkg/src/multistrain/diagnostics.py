"""Convergence summaries for posterior draws.

Small, dependency-free implementations of the two workhorse checks:
autocorrelation-based effective sample size with the paired-sum
truncation rule, and the split-chain potential scale reduction factor.
Both operate on plain arrays so they work for scalar traces and for
individual surface coordinates alike.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError
from .mcmc import PosteriorDraws


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance sequence via FFT, lags 0..n-1."""
    n = x.size
    centered = x - x.mean()
    size = 1 << int(2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n]
    return acov / n


def effective_sample_size(trace) -> float:
    """Effective number of independent draws in a single trace.

    Sums autocorrelations in consecutive pairs and truncates at the
    first nonpositive pair, which keeps the estimate stable for noisy
    tails. A constant trace counts as fully independent.
    """
    x = np.asarray(trace, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise ValidationError("effective sample size needs at least four draws")
    acov = _autocovariance(x)
    if acov[0] <= 0.0:
        return float(n)
    rho = acov / acov[0]
    paired_total = 0.0
    lag = 1
    while lag + 1 < n:
        pair = rho[lag] + rho[lag + 1]
        if pair <= 0.0:
            break
        paired_total += pair
        lag += 2
    tau = max(1.0, 1.0 + 2.0 * paired_total)
    return float(n / tau)


def split_rhat(chains) -> float:
    """Potential scale reduction over split chains.

    Accepts one trace or a (chains, draws) array; every chain is split
    in half so the statistic also flags drift within a single run.
    Values near 1 indicate the halves agree in mean and variance.
    """
    arr = np.atleast_2d(np.asarray(chains, dtype=float))
    if arr.ndim != 2:
        raise ValidationError("chains must be one- or two-dimensional")
    n = arr.shape[1]
    if n < 4:
        raise ValidationError("split R-hat needs at least four draws per chain")
    half = n // 2
    halves = np.concatenate([arr[:, :half], arr[:, n - half:]], axis=0)
    means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean()
    between = half * means.var(ddof=1)
    if within <= 0.0:
        return 1.0
    pooled = (half - 1) / half * within + between / half
    return float(np.sqrt(pooled / within))


def _trace_columns(draws: PosteriorDraws):
    for name in draws.scalar_names:
        yield name, draws.scalar(name)
    for surface in ("trend", "season", "spatial"):
        block = getattr(draws, surface)
        for j in range(block.shape[1]):
            yield f"{surface}_{j + 1}", block[:, j]


def summarize_chains(chains: list[PosteriorDraws]) -> list[dict]:
    """Per-parameter posterior table across one or more chains.

    Pools all chains for the location summaries, adds per-chain
    effective sample sizes together, and computes split R-hat across
    the chain traces. Returns one dict per parameter with keys
    parameter, mean, median, lower95, upper95, ess, split_rhat.
    """
    if not chains:
        raise ValidationError("need at least one chain to summarize")
    first = chains[0]
    for other in chains[1:]:
        if other.scalar_names != first.scalar_names:
            raise ValidationError("chains disagree on the parameter set")
        if other.n_draws != first.n_draws:
            raise ValidationError("chains must hold the same number of draws")
    rows = []
    per_chain = [dict(_trace_columns(c)) for c in chains]
    for name, _ in _trace_columns(first):
        stacked = np.stack([traces[name] for traces in per_chain])
        pooled = stacked.ravel()
        lo, hi = np.quantile(pooled, [0.025, 0.975])
        rows.append({
            "parameter": name,
            "mean": float(pooled.mean()),
            "median": float(np.median(pooled)),
            "lower95": float(lo),
            "upper95": float(hi),
            "ess": float(sum(effective_sample_size(row) for row in stacked)),
            "split_rhat": split_rhat(stacked),
        })
    return rows


def summary_frame(chains: list[PosteriorDraws]):
    """The summarize_chains table as a pandas DataFrame, one row per parameter."""
    import pandas as pd

    return pd.DataFrame(summarize_chains(chains)).set_index("parameter")
