"""Exception hierarchy shared by every fluid_agents module."""

from typing import Iterable, Optional


class FluidAgentsError(Exception):
    """Base class for all errors raised on purpose by this package."""


class ConfigError(FluidAgentsError):
    """Invalid configuration key or value; raised before any work starts."""


class PolicyActionError(FluidAgentsError):
    def __init__(self, step: int, agent_id: int, action: int, n_actions: int):
        self.step = step
        self.agent_id = agent_id
        self.action = action
        super().__init__(
            f"step {step}: agent {agent_id} chose action {action}, "
            f"valid range is 0..{n_actions - 1}"
        )


class ShapeMismatchError(FluidAgentsError):
    """Tensor or environment constant does not match what a network expects."""


class NonFiniteLossError(FluidAgentsError):
    pass


class GameFormatError(FluidAgentsError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class NashSolveError(FluidAgentsError):
    """Support enumeration finished without an equilibrium within tolerance."""


class CurriculumError(FluidAgentsError):
    pass


class ReportSchemaError(FluidAgentsError):
    def __init__(self, message: str, files: Iterable[str] = ()):
        self.files = list(files)
        if self.files:
            message = message + ": " + ", ".join(self.files)
        super().__init__(message)
