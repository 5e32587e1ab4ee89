"""Exception hierarchy shared by the numerical modules."""


class TeichonError(Exception):
    """Base class for every failure raised by this package."""


class CrowdingDetected(TeichonError):
    """Particles came within sqrt(eps_mach) of each other, or a Gram form went negative."""


class OrderingViolation(TeichonError):
    """Teichons or landmarks changed cyclic order during integration."""


class EnergyDrift(TeichonError):
    """The WP energy of a trajectory was not conserved to the configured bound."""


class SingularGram(TeichonError):
    """The Gram matrix is too ill-conditioned to invert."""


class NoDecrease(TeichonError):
    """Line search found no step that lowers the objective."""


class DegenerateQuadruple(TeichonError):
    """A cross-ratio has a vanishing factor or an unusable target."""


class TriangulationFailure(TeichonError):
    """The polygon could not be triangulated (for instance, all vertices collinear)."""


class NumericalBreakdown(TeichonError):
    """The zipper lost injectivity on the samples.

    ``index`` is the vertex at which the breakdown was detected.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MonotonicityViolation(TeichonError):
    """Weld samples are not strictly increasing in cyclic order."""
