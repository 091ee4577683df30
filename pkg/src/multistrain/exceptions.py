"""Exception types shared across the package.

Two failure families matter downstream: bad inputs (schema, shape, domain)
and numerical breakdowns discovered mid-computation.  The command line
interface maps them to distinct exit codes, and the sampler treats both as
grounds for rejecting a proposal rather than aborting a run.
"""


class ValidationError(ValueError):
    """Raised when inputs violate a documented schema, shape, or domain."""


class NumericalError(RuntimeError):
    """Raised when a computation produces numerically invalid results.

    Examples: a joint transition matrix with an entry more negative than
    the tolerance, a stationary-distribution solve on a chain with extra
    rank deficiency, a non-finite log likelihood at initialization, or an
    iterative estimator that fails to converge.
    """
