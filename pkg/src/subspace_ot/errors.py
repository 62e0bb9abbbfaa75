"""Exception hierarchy shared by every module of the package."""


class SubspaceOTError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(SubspaceOTError, ValueError):
    pass


# -- linear algebra ---------------------------------------------------------

class AsymmetricInput(SubspaceOTError, ValueError):
    pass


class IndefiniteInput(SubspaceOTError, ValueError):
    pass


class SingularInput(SubspaceOTError, ValueError):
    pass


class FactorizationFailed(SubspaceOTError, ArithmeticError):
    pass


class SingularBlock(SubspaceOTError, ArithmeticError):
    pass


class SingularSource(SingularBlock):
    pass


class RankDeficient(SubspaceOTError, ValueError):
    pass


# -- subspace selection -----------------------------------------------------

class NonFiniteLoss(SubspaceOTError, FloatingPointError):
    def __init__(self, iteration, value):
        super().__init__(f"loss became non-finite ({value!r}) at iteration {iteration}")
        self.iteration = iteration
        self.value = value


class DegenerateData(SubspaceOTError, ValueError):
    pass


# -- discrete transport -----------------------------------------------------

class EmptyInput(SubspaceOTError, ValueError):
    pass


class SizeLimitExceeded(SubspaceOTError, MemoryError):
    pass


class InfeasibleMarginals(SubspaceOTError, ValueError):
    pass


class UnassignedComponent(SubspaceOTError, KeyError):
    pass


class DegenerateProjection(SubspaceOTError, ValueError):
    pass


# -- pipelines and I/O ------------------------------------------------------

class TooFewSamples(SubspaceOTError, ValueError):
    pass


class EmptyCluster(SubspaceOTError, RuntimeError):
    pass


class DecodeError(SubspaceOTError, ValueError):
    pass


class ParseError(SubspaceOTError, ValueError):
    def __init__(self, message, path=None, line=None, column=None):
        where = ":".join(str(p) for p in (path, line, column) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
        self.column = column


class SolverFailed(SubspaceOTError, RuntimeError):
    """The exact solver stopped early or its solution failed the dual certificate."""
