"""Exception types shared across the package."""


class SymsliceError(Exception):
    """Base class for all package errors."""


class EmptyCloud(SymsliceError):
    pass


class ZeroExtent(SymsliceError):
    pass


class OutOfBox(SymsliceError):
    pass


class ShapeMismatch(SymsliceError):
    pass


class Degenerate(SymsliceError):
    """Homogeneous plane vector has no finite plane (||(a,b,c)|| too small)."""


class EigengapTooSmall(SymsliceError):
    """Smallest-eigenvector gradient is undefined: lambda1 - lambda0 below threshold."""


class SolverFailure(SymsliceError):
    pass


class NonScalarLoss(SymsliceError):
    pass


class GraphConsumed(SymsliceError):
    pass


class ParseError(SymsliceError):
    pass


class UnsupportedFormat(SymsliceError):
    pass


class TooFewPoints(SymsliceError):
    pass


class DegenerateNormal(SymsliceError):
    """Plane normal is near-horizontal; carries no yaw information."""


class LengthMismatch(SymsliceError):
    pass


class BadMagic(SymsliceError):
    pass


class VersionError(SymsliceError):
    pass


class NonFiniteLoss(SymsliceError):
    pass


class EmptyResult(SymsliceError):
    pass
