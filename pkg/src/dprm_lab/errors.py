"""Exception types shared across the toolkit."""


class DPRMError(Exception):
    """Base class for every error raised by dprm_lab."""


class ValidationError(DPRMError, ValueError):
    """Input failed a structural check (user/config error)."""


class EmptyGroup(ValidationError):
    pass


class NotDegenerate(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class InfeasibleInput(ValidationError):
    pass


class EmptyResponse(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class SupportMismatch(ValidationError):
    pass


class NegativeKL(ValidationError):
    pass


class NoConvergence(DPRMError, RuntimeError):
    """Sinkhorn hit ``max_iter``; carries the last iterate."""

    def __init__(self, max_iter, residual, result=None):
        super().__init__(f"Sinkhorn did not converge in {max_iter} iterations (residual {residual:.3e})")
        self.max_iter = max_iter
        self.residual = residual
        self.result = result


class ClientFailure(DPRMError, RuntimeError):
    """An annotator client returned garbage or could not be reached."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload
