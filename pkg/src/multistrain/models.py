"""Catalogue of joint transition-model variants.

Eight variants span the dependence spectrum for K strains: a degenerate
no-epidemic chain, independent strains with shared or per-strain rates,
Frank- and one-factor-Gaussian-copula coupling (again with shared or
per-strain rates), and a fully general row-stochastic matrix on the
2**K joint states.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import states
from .exceptions import ValidationError

# Default value for the first factor loading, which is pinned during
# estimation so the factor's sign and scale are identified.
FIXED_FIRST_LOADING = 0.999


@dataclass(frozen=True)
class VariantSpec:
    """Static description of one transition-model variant."""

    name: str
    label: str
    copula_kind: str  # "none", "product", "frank", "factor", "general"
    shared_rates: bool
    has_epidemics: bool

    def n_transition_params(self, n_strains: int) -> int:
        n_states = 1 << n_strains
        return {
            "no_epidemic": 0,
            "independent_1": 2,
            "independent_2": 2 * n_strains,
            "frank_1": 3,
            "frank_2": 2 * n_strains + 1,
            "factor_1": 2 + n_strains,
            "factor_2": 3 * n_strains,
            "general": n_states * (n_states - 1),
        }[self.name]


VARIANTS: dict[str, VariantSpec] = {
    spec.name: spec
    for spec in (
        VariantSpec("no_epidemic", "no epidemic", "none", True, False),
        VariantSpec("independent_1", "independent, shared rates", "product", True, True),
        VariantSpec("independent_2", "independent, per-strain rates", "product", False, True),
        VariantSpec("frank_1", "Frank copula, shared rates", "frank", True, True),
        VariantSpec("frank_2", "Frank copula, per-strain rates", "frank", False, True),
        VariantSpec("factor_1", "Gaussian factor copula, shared rates", "factor", True, True),
        VariantSpec("factor_2", "Gaussian factor copula, per-strain rates", "factor", False, True),
        VariantSpec("general", "general dependent", "general", False, True),
    )
}


def variant_spec(name: str) -> VariantSpec:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValidationError(
            f"unknown model variant {name!r}; choose from {sorted(VARIANTS)}"
        ) from None


@dataclass(frozen=True)
class TransitionModel:
    """A variant plus concrete transition-parameter values.

    ``p`` and ``q`` are scalars for shared-rate variants and length-K
    arrays otherwise; ``psi`` is the Frank dependence parameter;
    ``loadings`` holds all K factor loadings including the pinned first
    one; ``matrix`` is the full row-stochastic matrix of the general
    variant.  Fields irrelevant to the variant stay ``None``.
    """

    variant: str
    n_strains: int
    p: float | np.ndarray | None = None
    q: float | np.ndarray | None = None
    psi: float | None = None
    loadings: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self) -> None:
        spec = variant_spec(self.variant)
        if not 1 <= self.n_strains <= 6:
            raise ValidationError(
                f"n_strains must be in [1, 6], got {self.n_strains}"
            )
        if spec.name == "no_epidemic":
            return
        if spec.name == "general":
            if self.matrix is None:
                raise ValidationError("general variant requires a transition matrix")
            checked = states.validate_transition_matrix(np.asarray(self.matrix))
            if checked.shape[0] != 1 << self.n_strains:
                raise ValidationError(
                    f"general matrix must be {1 << self.n_strains} square, "
                    f"got {checked.shape}"
                )
            object.__setattr__(self, "matrix", checked)
            return
        object.__setattr__(self, "p", self._checked_rates(self.p, "p", spec))
        object.__setattr__(self, "q", self._checked_rates(self.q, "q", spec))
        if spec.copula_kind == "frank":
            if self.psi is None:
                raise ValidationError(f"{spec.name} requires psi")
        if spec.copula_kind == "factor":
            if self.loadings is None:
                raise ValidationError(f"{spec.name} requires loadings")
            xi = np.asarray(self.loadings, dtype=float)
            if xi.shape != (self.n_strains,):
                raise ValidationError(
                    f"loadings must have shape ({self.n_strains},), got {xi.shape}"
                )
            if np.any(np.abs(xi) > 1.0):
                raise ValidationError("factor loadings must lie in [-1, 1]")
            object.__setattr__(self, "loadings", xi)

    def _checked_rates(self, value, name: str, spec: VariantSpec):
        if value is None:
            raise ValidationError(f"{spec.name} requires {name}")
        if spec.shared_rates:
            value = float(np.asarray(value).reshape(()))
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
            return value
        arr = np.asarray(value, dtype=float)
        if arr.shape != (self.n_strains,):
            raise ValidationError(
                f"{name} must have shape ({self.n_strains},) for per-strain "
                f"variant {spec.name}, got {arr.shape}"
            )
        if np.any((arr < 0.0) | (arr > 1.0)):
            raise ValidationError(f"{name} entries must lie in [0, 1]")
        return arr

    @property
    def spec(self) -> VariantSpec:
        return variant_spec(self.variant)

    @property
    def n_states(self) -> int:
        return 1 if self.variant == "no_epidemic" else 1 << self.n_strains

    def rate_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-strain (p, q) arrays regardless of the sharing structure."""
        if self.spec.shared_rates:
            return (
                np.full(self.n_strains, float(self.p)),
                np.full(self.n_strains, float(self.q)),
            )
        return np.asarray(self.p, float), np.asarray(self.q, float)

    def joint_matrix(self) -> np.ndarray:
        """Build the 2**K (or 1 by 1) joint transition matrix."""
        kind = self.spec.copula_kind
        if kind == "none":
            return np.ones((1, 1))
        if kind == "general":
            return np.array(self.matrix, copy=True)
        p, q = self.rate_vectors()
        if kind == "product":
            return states.build_independent(p, q)
        if kind == "frank":
            return states.build_copula_coupled(p, q, states.FrankCopula(self.psi))
        return states.build_copula_coupled(
            p, q, states.GaussianFactorCopula(tuple(np.asarray(self.loadings)))
        )

    def stationary(self) -> np.ndarray:
        return states.stationary_distribution(self.joint_matrix())

    def scalar_names(self) -> list[str]:
        """Names of the transition parameters as recorded in draw files."""
        spec = self.spec
        k_range = range(1, self.n_strains + 1)
        names: list[str] = []
        if spec.name == "no_epidemic":
            return names
        if spec.name == "general":
            n = self.n_states
            return [f"gamma_{i}_{j}" for i in range(n) for j in range(n)]
        if spec.shared_rates:
            names += ["p", "q"]
        else:
            names += [f"p_{k}" for k in k_range] + [f"q_{k}" for k in k_range]
        if spec.copula_kind == "frank":
            names.append("psi")
        elif spec.copula_kind == "factor":
            names += [f"xi_{k}" for k in k_range]
        return names

    def scalar_values(self) -> np.ndarray:
        spec = self.spec
        if spec.name == "no_epidemic":
            return np.empty(0)
        if spec.name == "general":
            return np.asarray(self.matrix).ravel().copy()
        parts: list[np.ndarray] = []
        if spec.shared_rates:
            parts.append(np.array([self.p, self.q], dtype=float))
        else:
            parts.append(np.asarray(self.p, float))
            parts.append(np.asarray(self.q, float))
        if spec.copula_kind == "frank":
            parts.append(np.array([self.psi], dtype=float))
        elif spec.copula_kind == "factor":
            parts.append(np.asarray(self.loadings, float))
        return np.concatenate(parts)

    def with_scalars(self, values: np.ndarray) -> "TransitionModel":
        """Rebuild the model from the flat vector scalar_values produced."""
        spec = self.spec
        values = np.asarray(values, dtype=float)
        if spec.name == "no_epidemic":
            return self
        if spec.name == "general":
            n = self.n_states
            return replace(self, matrix=values.reshape(n, n))
        K = self.n_strains
        pos = 0
        if spec.shared_rates:
            p, q = float(values[0]), float(values[1])
            pos = 2
        else:
            p = values[pos : pos + K].copy()
            q = values[pos + K : pos + 2 * K].copy()
            pos = 2 * K
        kwargs: dict = {"p": p, "q": q}
        if spec.copula_kind == "frank":
            kwargs["psi"] = float(values[pos])
        elif spec.copula_kind == "factor":
            kwargs["loadings"] = values[pos : pos + K].copy()
        return replace(self, **kwargs)


def initial_model(
    variant: str,
    n_strains: int,
    *,
    fixed_loading: float = FIXED_FIRST_LOADING,
) -> TransitionModel:
    """Deterministic, weakly informed starting values for a variant."""
    spec = variant_spec(variant)
    if spec.name == "no_epidemic":
        return TransitionModel(variant, n_strains)
    p0, q0 = 1.0 / 12.0, 0.5
    if spec.name == "general":
        matrix = states.build_independent(
            np.full(n_strains, p0), np.full(n_strains, q0)
        )
        return TransitionModel(variant, n_strains, matrix=matrix)
    p = p0 if spec.shared_rates else np.full(n_strains, p0)
    q = q0 if spec.shared_rates else np.full(n_strains, q0)
    kwargs: dict = {"p": p, "q": q}
    if spec.copula_kind == "frank":
        kwargs["psi"] = 2.0
    elif spec.copula_kind == "factor":
        loadings = np.full(n_strains, 0.5)
        loadings[0] = fixed_loading
        kwargs["loadings"] = loadings
    return TransitionModel(variant, n_strains, **kwargs)


def free_transition_parameters(model: TransitionModel) -> list[tuple[str, str]]:
    """Names and transform kinds of a variant's free transition scalars.

    Kinds: "interval" for probabilities, "raw" for the two-strain Frank
    parameter (either sign is valid), "positive" for the Frank parameter
    with three or more strains, "loading" for free factor loadings.  The
    first loading is pinned for identifiability and the general
    variant's rows are updated as whole simplexes, so neither shows up
    here.
    """
    spec = model.spec
    if spec.name in ("no_epidemic", "general"):
        return []
    k_range = range(1, model.n_strains + 1)
    if spec.shared_rates:
        params = [("p", "interval"), ("q", "interval")]
    else:
        params = [(f"p_{k}", "interval") for k in k_range]
        params += [(f"q_{k}", "interval") for k in k_range]
    if spec.copula_kind == "frank":
        params.append(("psi", "raw" if model.n_strains <= 2 else "positive"))
    elif spec.copula_kind == "factor":
        params += [(f"xi_{k}", "loading") for k in k_range if k >= 2]
    return params
