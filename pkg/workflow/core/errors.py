"""
Exception hierarchy for ironkit.
Every error carries the process exit code the CLI reports for it.
"""

from typing import Any, Dict, Optional


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SCHEMA = 2
EXIT_CONVERGENCE = 3
EXIT_INVARIANT = 4


class IronkitError(Exception):
    """Base class for all ironkit errors"""

    exit_code: int = EXIT_INVARIANT

    def __init__(self, message: str, path: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.path = path
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "type": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
        }
        if self.path is not None:
            payload["path"] = self.path
        if self.details:
            payload["details"] = self.details
        return payload


# Instance documents

class InstanceError(IronkitError):
    exit_code = EXIT_SCHEMA


class ParseError(InstanceError):
    pass


class SchemaError(InstanceError):
    pass


class VersionError(InstanceError):
    pass


# Modelling errors: bad grids, shapes and preconditions

class ModelError(IronkitError):
    exit_code = EXIT_SCHEMA


class EmptyAxis(ModelError):
    pass


class NonIncreasingPoints(ModelError):
    pass


class BadProbs(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class EmptySubset(ModelError):
    pass


class TooManyLowerSets(ModelError):
    pass


class NotMonotone(ModelError):
    pass


class NotMajorized(ModelError):
    pass


class NonFiniteInput(ModelError):
    pass


class LevelTooLarge(ModelError):
    pass


class GridMismatch(ModelError):
    pass


class InvalidModel(ModelError):
    pass


# Solver failures

class ConvergenceError(IronkitError):
    exit_code = EXIT_CONVERGENCE


class NotConverged(ConvergenceError):
    pass


class DecompositionStalled(ConvergenceError):
    pass


class ClosureDiverged(ConvergenceError):
    pass


class QuadratureFailure(ConvergenceError):
    pass


class SolverFailure(ConvergenceError):
    pass


class LPFailure(ConvergenceError):
    pass


# Internal invariants: a solver produced something it should not have

class InvariantError(IronkitError):
    exit_code = EXIT_INVARIANT


class UltramodularityViolated(InvariantError):
    pass


class MeanMismatch(InvariantError):
    pass


class InfeasibleEta(InvariantError):
    pass
