"""Exception hierarchy shared by all modules."""


class DopaError(Exception):
    """Base class for every error raised by this package."""


class DomainError(DopaError, ValueError):
    """A generator was evaluated outside its effective domain."""

    def __init__(self, generator: str, value: float, detail: str = ""):
        self.generator = generator
        self.value = value
        msg = f"{generator}: argument {value!r} outside effective domain"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class RangeError(DopaError, ValueError):
    """A probability-valued argument fell outside its admissible interval."""


class ConfigError(DopaError, ValueError):
    """Invalid configuration: bad weights, missing Lipschitz bound, unparsable spec."""


class InputError(DopaError, ValueError):
    """Invalid numerical input such as non-finite rewards or an off-simplex vector."""


class ConvergenceError(DopaError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, msg: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(msg)


class DegenerateModelError(DopaError, ValueError):
    """The optimistic noise model needs every p_k strictly inside (0, 1)."""


class RewardRangeError(DopaError, ValueError):
    """An environment emitted a reward vector outside [-1, 0]^K."""


class InvariantViolation(DopaError, RuntimeError):
    """An internal invariant failed (e.g. a zero sampling probability)."""
