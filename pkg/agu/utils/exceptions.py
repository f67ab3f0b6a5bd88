from typing import Optional


class AGUError(Exception):
    """
    Base exception for graph unlearning errors.
    """
    error_code = "AGU_ERROR"
    exit_code = 2

    def __init__(self, message: str, error_code: Optional[str] = None, exit_code: Optional[int] = None):
        self.message = message
        if error_code is not None:
            self.error_code = error_code
        if exit_code is not None:
            self.exit_code = exit_code
        super().__init__(self.message)

    def context(self) -> dict:
        return {}


class UsageError(AGUError):
    """
    Invalid command line usage.
    """
    error_code = "USAGE_ERROR"
    exit_code = 1


class DimensionError(AGUError, ValueError):
    error_code = "DIMENSION_ERROR"


class DomainError(AGUError, ValueError):
    error_code = "DOMAIN_ERROR"


class EmptySetError(AGUError, ValueError):
    error_code = "EMPTY_SET_ERROR"


class ContractError(AGUError, ValueError):
    error_code = "CONTRACT_ERROR"


class ConfigError(AGUError, ValueError):
    error_code = "CONFIG_ERROR"


class GraphReferenceError(AGUError, KeyError):
    """
    A request references a node or edge the graph does not have.
    """
    error_code = "GRAPH_REFERENCE_ERROR"

    def __str__(self) -> str:
        return self.message


class GraphFormatError(AGUError):
    """
    Custom exception for malformed graph, mask and request files.
    """
    error_code = "GRAPH_FORMAT_ERROR"

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")

    def context(self) -> dict:
        return {"path": self.path, "line": self.line}


class IsolatedPairError(AGUError):
    """
    Both endpoints of an edge have no other node within k hops.
    """
    error_code = "ISOLATED_PAIR"

    def __init__(self, u: int, v: int):
        self.u = u
        self.v = v
        super().__init__(f"Edge ({u}, {v}) has no candidate comparison nodes")

    def context(self) -> dict:
        return {"u": self.u, "v": self.v}


class ProbeAmbiguityError(AGUError):
    error_code = "PROBE_AMBIGUITY"

    def __init__(self, message: str, disagreement: frozenset = frozenset()):
        self.disagreement = disagreement
        super().__init__(message)

    def context(self) -> dict:
        return {"disagreement": sorted(self.disagreement)}


class TrainingDivergenceError(AGUError):
    error_code = "TRAINING_DIVERGENCE"

    def __init__(self, message: str, epoch: Optional[int] = None):
        self.epoch = epoch
        super().__init__(message)

    def context(self) -> dict:
        return {"epoch": self.epoch}


class UnlearnFailureError(AGUError):
    """
    Unlearning produced a non-finite loss.
    """
    error_code = "UNLEARN_FAILURE"

    def __init__(self, term: str, epoch: int):
        self.term = term
        self.epoch = epoch
        super().__init__(f"Loss term {term} became non-finite at epoch {epoch}")

    def context(self) -> dict:
        return {"term": self.term, "epoch": self.epoch}


class AttackImpossibleError(AGUError):
    error_code = "ATTACK_IMPOSSIBLE"


class CheckpointError(AGUError):
    error_code = "CHECKPOINT_ERROR"
