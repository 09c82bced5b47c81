"""Exception hierarchy shared by all modules."""


class SaddleRBError(Exception):
    """Base class for every error raised by this package."""


class NotSPD(SaddleRBError):
    pass


class Singular(SaddleRBError):
    pass


class SingularSystem(Singular):
    pass


class SingularReducedSystem(SingularSystem):
    pass


class NoConvergence(SaddleRBError):
    pass


class OutOfDomain(SaddleRBError, ValueError):
    pass


class InvalidGeometry(SaddleRBError, ValueError):
    pass


class StabilityLoss(SaddleRBError):
    pass


class EmptyTrainingSet(SaddleRBError, ValueError):
    pass


class NegativeNormSquare(SaddleRBError):
    pass


class NonpositiveConstant(SaddleRBError, ValueError):
    pass


class ZeroError(SaddleRBError):
    pass


class InfeasibleConstraint(SaddleRBError):
    pass


class ArtifactError(SaddleRBError):
    """Missing, incomplete or corrupted offline artifact."""
