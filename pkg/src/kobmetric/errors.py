"""Exception hierarchy shared by all kobmetric modules."""


class KobmetricError(Exception):
    """Base class; ``witness`` carries the offending point/vector when useful."""

    def __init__(self, message="", witness=None):
        super().__init__(message)
        self.witness = witness


class DerivativeUnavailable(KobmetricError):
    pass


class ProjectionAmbiguous(KobmetricError):
    pass


class DegenerateStructure(KobmetricError):
    pass


class NotStrictlyPseudoconvex(KobmetricError):
    pass


class JacobianSingular(KobmetricError):
    pass


class NormalFormFailure(KobmetricError):
    pass


class CutoffOverflow(KobmetricError):
    pass


class SamplingFailure(KobmetricError):
    pass


class DegreeOverflow(KobmetricError):
    pass


class StructureOutOfRange(KobmetricError):
    pass


class NonContraction(KobmetricError):
    pass


class MaxIterations(KobmetricError):
    pass


class NewtonDivergence(KobmetricError):
    pass


class ChartFailure(KobmetricError):
    pass


class ContainmentFailure(KobmetricError):
    pass


class Disconnected(KobmetricError):
    pass


class UnknownLabel(KobmetricError):
    pass


class TooFewPoints(KobmetricError):
    pass


class LabelMismatch(KobmetricError):
    pass


class ConfigInvalid(KobmetricError):
    pass
