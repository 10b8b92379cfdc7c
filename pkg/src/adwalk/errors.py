from __future__ import annotations


class AdwalkError(Exception):
    """Base class for errors raised by this package."""

    kind = "error"

    def record(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class ConfigError(AdwalkError, ValueError):
    """Invalid scenario, policy, or argument.  Carries every problem found."""

    kind = "config_error"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))

    def record(self) -> dict:
        return {"error": self.kind, "message": str(self), "problems": self.problems}


class InvariantError(AdwalkError, RuntimeError):
    """An internal invariant was violated; the run cannot continue."""

    kind = "invariant_violation"


class EstimationError(AdwalkError, ValueError):
    """A statistic is undefined for the given input (e.g. an empty arm)."""

    kind = "estimation_error"
