"""Exception types raised by penneropt.

All validation and numerical failures raise subclasses of PennerError so
callers (and the CLI) can distinguish input problems from solver problems.
"""


class PennerError(Exception):
    """Base class for all penneropt errors."""


class MeshError(PennerError):
    """Invalid mesh connectivity or geometry."""


class NonManifoldEdge(MeshError):
    pass


class OpenBoundary(MeshError):
    pass


class AlreadyClosed(MeshError):
    pass


class DegenerateTriangle(MeshError):
    pass


class GaussBonnetViolation(PennerError):
    def __init__(self, residual, message=None):
        self.residual = float(residual)
        super().__init__(message or f"Gauss-Bonnet residual {self.residual:.3e}")


class NonpositiveAngle(PennerError):
    pass


class SelfAdjacentFlip(PennerError):
    """Both sides of the edge are the same face; the flip is undefined."""


class FlipLimitExceeded(PennerError):
    """The flip algorithm exceeded its flip budget (suspected cycling)."""


class TriangleInequalityViolated(PennerError):
    pass


class SingularNormalEquations(PennerError):
    pass


class DegenerateReference(PennerError):
    pass


class InfeasibleConstraints(PennerError):
    pass


class NotFlat(PennerError):
    """Residual curvature at a non-cone vertex; the metric cannot be laid out."""


class ParseError(PennerError):
    def __init__(self, path, line_number, message):
        self.path = str(path)
        self.line_number = int(line_number)
        super().__init__(f"{path}:{line_number}: {message}")


class NonTriangleFace(ParseError):
    def __init__(self, path, line_number):
        super().__init__(path, line_number, "non-triangle face")


class ConfigError(PennerError):
    pass
