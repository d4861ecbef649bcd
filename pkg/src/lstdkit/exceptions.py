"""Exception types raised by lstdkit."""

import numpy as np


class InvalidModel(ValueError):
    """An MRP, feature map or weight vector violates its invariants."""


class SingularGram(np.linalg.LinAlgError):
    """The feature Gram matrix is numerically singular (features not independent
    on the visited states)."""


class SingularCross(np.linalg.LinAlgError):
    """The cross matrix of an oblique projection is numerically singular."""


class SingularSystem(np.linalg.LinAlgError):
    """An estimator's linear system is numerically singular.

    ``lstd_pinv`` / ``lstd_pinv_design`` accept singular systems.
    """


class MissingAltSample(ValueError):
    """BRM sample estimation needs an independent second successor sample."""


class MaxItersExceeded(RuntimeError):
    pass


class Unsupported(NotImplementedError):
    pass


class ConfigError(ValueError):
    pass
