"""Exception types raised across the package."""


class InvalidPolytopeError(ValueError):
    """Polytope data that is empty, unbounded or otherwise unusable."""


class AdmissibilityError(ValueError):
    """A convex function that is not positive on its domain (Omega would not contain 0)."""


class DomainError(ValueError):
    """Evaluation outside the domain of a function (P, or the cone C(P))."""


class ConvergenceError(RuntimeError):
    """An iterative routine ran out of iterations; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
