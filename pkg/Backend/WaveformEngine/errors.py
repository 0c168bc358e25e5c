# Backend/WaveformEngine/errors.py

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Optional


# --------------------------------------------------------------------------------------
# Base error type
# --------------------------------------------------------------------------------------


@dataclass
class WavePilotError(Exception):
    """
    Error raised anywhere in the recommendation pipeline.

    Fields are structured so the CLI and API can report cleanly:
    - which entity / relation / line the problem is about (subject, line)
    - what value was rejected (invalid_value)
    - which values would have been accepted (valid_values)
    """

    message: str
    subject: Optional[str] = None
    invalid_value: Optional[str] = None
    valid_values: Optional[List[str]] = None
    line: Optional[int] = None

    # 2 = data error, 3 = numeric failure (1 is reserved for usage errors)
    exit_code = 2

    def __post_init__(self) -> None:
        super().__init__(self.message)
        if self.valid_values is None:
            self.valid_values = []

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_type": type(self).__name__,
            "message": self.message,
            "subject": self.subject,
            "invalid_value": self.invalid_value,
            "valid_values": self.valid_values,
            "line": self.line,
        }


class NumericError(WavePilotError):
    exit_code = 3


# --------------------------------------------------------------------------------------
# Knowledge-graph store
# --------------------------------------------------------------------------------------


class UnknownEntity(WavePilotError):
    pass


class UnknownRelation(WavePilotError):
    pass


class SubgraphMismatch(WavePilotError):
    pass


class DuplicateTriple(WavePilotError):
    pass


class EmptyEwbg(WavePilotError):
    pass


class IoFailure(WavePilotError):
    pass


class ParseError(WavePilotError):
    pass


class SchemaViolation(WavePilotError):
    pass


class InvalidValue(WavePilotError):
    pass


# --------------------------------------------------------------------------------------
# Corpus synthesis
# --------------------------------------------------------------------------------------


class DegenerateCorpus(WavePilotError):
    pass


class SpecReconstructionError(WavePilotError):
    pass


# --------------------------------------------------------------------------------------
# Numerics / training
# --------------------------------------------------------------------------------------


class ShapeMismatch(NumericError):
    pass


class NonFiniteValue(NumericError):
    pass


class NonFiniteGradient(NumericError):
    pass


class GraphCycle(NumericError):
    pass


class DivergenceDetected(NumericError):
    pass


class ExhaustedCandidates(WavePilotError):
    pass


class EmptyLabel(WavePilotError):
    pass


class NonNumericRelation(WavePilotError):
    pass


class UnknownMode(WavePilotError):
    pass


class UnbalancedBatch(WavePilotError):
    pass


class NoNegativeAvailable(WavePilotError):
    pass


class EmptyTestSet(WavePilotError):
    pass
