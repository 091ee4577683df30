"""Reparameterizations between constrained parameters and the real line.

Every transform comes with the log absolute Jacobian of the inverse map
(real line back to the constrained space), which is what densities need
when a sampler or an importance proposal works in unconstrained
coordinates.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit, logit, ndtr, ndtri

from .exceptions import ValidationError

__all__ = [
    "interval_to_real",
    "real_to_interval",
    "interval_log_jacobian",
    "positive_to_real",
    "real_to_positive",
    "positive_log_jacobian",
    "loading_to_real",
    "real_to_loading",
    "loading_log_jacobian",
    "simplex_to_real",
    "real_to_simplex",
    "simplex_log_jacobian",
    "sum_zero_basis",
]


def interval_to_real(x):
    """Map (0, 1) to the real line via the log odds."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise ValidationError("interval transform needs values strictly inside (0, 1)")
    return logit(x)


def real_to_interval(z):
    return expit(np.asarray(z, dtype=float))


def interval_log_jacobian(z):
    """log dx/dz for the inverse logit, elementwise."""
    z = np.asarray(z, dtype=float)
    return log_expit(z) + log_expit(-z)


def positive_to_real(x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValidationError("log transform needs strictly positive values")
    return np.log(x)


def real_to_positive(z):
    return np.exp(np.asarray(z, dtype=float))


def positive_log_jacobian(z):
    return np.asarray(z, dtype=float)


def loading_to_real(xi):
    """Map a correlation-like value in (-1, 1) through the probit."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= -1.0) or np.any(xi >= 1.0):
        raise ValidationError("loadings must be strictly inside (-1, 1)")
    return ndtri((xi + 1.0) / 2.0)


def real_to_loading(z):
    return 2.0 * ndtr(np.asarray(z, dtype=float)) - 1.0


def loading_log_jacobian(z):
    z = np.asarray(z, dtype=float)
    return np.log(2.0) - 0.5 * z**2 - 0.5 * np.log(2.0 * np.pi)


def simplex_to_real(row):
    """Additive log ratio against the first component."""
    row = np.asarray(row, dtype=float)
    if np.any(row <= 0.0) or abs(row.sum() - 1.0) > 1e-8:
        raise ValidationError("simplex transform needs a strictly positive row summing to one")
    return np.log(row[1:]) - np.log(row[0])


def real_to_simplex(z):
    z = np.asarray(z, dtype=float)
    shifted = np.concatenate(([0.0], z))
    shifted -= shifted.max()
    expz = np.exp(shifted)
    return expz / expz.sum()


def simplex_log_jacobian(z):
    """log |det d(row)/dz| of the inverse ALR: the sum of all log parts."""
    row = real_to_simplex(z)
    return float(np.log(row).sum())


def sum_zero_basis(n: int) -> np.ndarray:
    """Orthonormal (n, n-1) basis of the sum-to-zero subspace.

    Columns complete the normalized ones vector to an orthonormal set,
    so fields are stored unconstrained as length n-1 coefficient vectors
    and mapped back with a single matrix product.
    """
    if n < 2:
        raise ValidationError("a sum-to-zero basis needs at least two coordinates")
    full, _ = np.linalg.qr(
        np.column_stack([np.ones(n) / np.sqrt(n), np.eye(n)[:, : n - 1]])
    )
    basis = full[:, 1:n]
    # fix signs so the basis is deterministic across BLAS builds
    signs = np.sign(basis[np.abs(basis).argmax(axis=0), np.arange(n - 1)])
    return basis * signs
