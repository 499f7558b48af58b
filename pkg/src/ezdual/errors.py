"""Exception hierarchy shared by the solver layers."""


class EZDualError(Exception):
    """Base class for all package errors."""


class DomainError(EZDualError, ValueError):
    """An argument lies outside the effective domain of a closed-form function."""


class RegimeError(EZDualError):
    """The preference parameters fall outside the supported duality regimes."""


class ModelError(EZDualError, ValueError):
    """A market model violates one of its structural invariants."""


class SolverError(EZDualError, RuntimeError):
    """A numerical solver failed (non-convergence, rank deficiency, sign violation)."""

    def __init__(self, message, *, stage=None, node=None):
        self.stage = stage
        self.node = node
        parts = [message]
        if node is not None:
            parts.append(f"at node {node}")
        if stage is not None:
            parts.insert(0, f"[{stage}]")
        super().__init__(" ".join(parts))


class ConfigError(EZDualError, ValueError):
    """A run configuration could not be parsed or validated."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
