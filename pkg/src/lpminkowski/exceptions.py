"""Exception hierarchy shared by the geometry and solver modules."""


class ConvexityError(ValueError):
    """``nabla^2 h + h I`` has an eigenvalue below the convexity margin."""

    def __init__(self, margin: float, node: int | None = None):
        self.margin = margin
        self.node = node
        where = f" at node {node}" if node is not None else ""
        super().__init__(f"convexity violated{where}: min eigenvalue {margin:.3e}")


class BarycenterError(ValueError):
    """Classical Minkowski data with nonzero first moments (no even solution)."""


class SolverError(RuntimeError):
    """Base class for Newton solver failures; carries the partial report."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class NonConvergenceError(SolverError):
    pass


class SingularLinearizationError(SolverError):
    """Newton system numerically singular: a non-uniqueness indicator."""


class LineSearchError(SolverError):
    pass
