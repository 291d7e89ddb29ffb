"""Exception types shared across the package."""


class LpvuqError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(LpvuqError):
    """An array argument has the wrong size along a named dimension."""

    def __init__(self, name, expected, got):
        self.name = name
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch for '{name}': expected {expected}, got {got}")


class NonFiniteActivationError(LpvuqError):
    """A scheduling-net layer produced NaN or Inf."""

    def __init__(self, layer_index):
        self.layer_index = layer_index
        super().__init__(f"non-finite activation in scheduling net layer {layer_index}")


class DivergenceError(LpvuqError):
    """Simulated state left the configured magnitude bound (or turned
    non-finite during integration)."""

    def __init__(self, time_index=None, bound=None):
        self.time_index = time_index
        self.bound = bound
        if bound is not None:
            msg = f"state magnitude exceeded {bound:g} at time index {time_index}"
        elif time_index is not None:
            msg = f"non-finite state at time index {time_index}"
        else:
            msg = "non-finite state during integration step"
        super().__init__(msg)


class SingularUpdateError(LpvuqError):
    """An inner solve in a recursive covariance update is numerically singular."""

    def __init__(self, step_index):
        self.step_index = step_index
        super().__init__(f"singular innovation matrix at update step {step_index}")


class DataFormatError(LpvuqError):
    """A dataset file is malformed."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class FitDivergedError(LpvuqError):
    """Every restart of a fit hit the divergence penalty."""

    def __init__(self, per_restart_costs):
        self.per_restart_costs = list(per_restart_costs)
        super().__init__(
            "all restarts diverged; per-restart costs: "
            + ", ".join(f"{c:.6g}" for c in self.per_restart_costs)
        )
