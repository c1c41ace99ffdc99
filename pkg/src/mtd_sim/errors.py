"""Exception hierarchy shared by all modules."""


class MtdError(Exception):
    """Base class for every error raised by mtd_sim."""


class DimensionError(MtdError, ValueError):
    """Matrix or vector shapes are mutually inconsistent."""


class ConfigError(MtdError, ValueError):
    """Scenario configuration is invalid.

    ``pointer`` is a JSON pointer to the offending field when known.
    """

    def __init__(self, message, pointer=None):
        self.pointer = pointer
        if pointer is not None:
            message = f"{pointer}: {message}"
        super().__init__(message)


class RejectionSamplingError(ConfigError):
    """Target distribution rejection sampling gave up."""


class NumericalError(MtdError, ArithmeticError):
    """A numerical routine failed (divergence, loss of definiteness)."""


class DareDivergenceError(NumericalError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (residual norm {residual:.3e})")


class FilterDivergenceError(NumericalError):
    def __init__(self, message, condition=None, step=None):
        self.condition = condition
        self.step = step
        parts = [message]
        if condition is not None:
            parts.append(f"condition number {condition:.3e}")
        if step is not None:
            parts.append(f"at step {step}")
        super().__init__(", ".join(parts))


class ParticleDegeneracyError(NumericalError):
    def __init__(self, min_loglik, max_loglik):
        self.min_loglik = min_loglik
        self.max_loglik = max_loglik
        super().__init__(
            "all particle weights vanished "
            f"(log-likelihood range [{min_loglik:.3e}, {max_loglik:.3e}]); "
            "model mismatch or attack too aggressive"
        )
