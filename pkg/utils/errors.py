#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Exception types raised across the benchmark.

Every failure the benchmark can report has its own class so callers (and the
multi-method driver in fewsar_benchmark.py) can decide what to skip and what
to stop on.
"""

from typing import Dict, Iterable, Optional


class FewSARError(Exception):
    """Base class for all benchmark errors"""


# --- ingest -----------------------------------------------------------------

class MalformedHeaderError(FewSARError):
    """MSTAR header delimiters or required keys are missing"""


class HeaderEncodingError(FewSARError):
    """Header bytes are not plain ASCII text"""


class ChipDecodeError(FewSARError):
    """Raster block could not be decoded into a magnitude image"""


class InvalidChipError(FewSARError):
    """An ImageChip violates its shape/range invariants"""


# --- splits and episodes ----------------------------------------------------

class InsufficientClassesError(FewSARError):
    """Not enough classes to build a train/test split"""


class InsufficientDataError(FewSARError):
    """Episode shape cannot be satisfied by the available chips"""

    def __init__(self, message: str, limiting_class: Optional[int] = None):
        super().__init__(message)
        self.limiting_class = limiting_class


class EpisodeInvariantError(FewSARError):
    """An Episode does not satisfy its structural invariants"""


# --- models and methods -----------------------------------------------------

class ConfigurationError(FewSARError):
    """Invalid configuration or weights incompatible with a configuration"""


class UndefinedSimilarityError(FewSARError):
    """Cosine similarity requested for a zero vector"""


class ParameterError(FewSARError):
    """A method parameter is out of its valid range"""


class SingularSolveError(FewSARError):
    """Closed-form solve hit a singular system"""


class DivergedTrainingError(FewSARError):
    """Training produced a non-finite loss"""

    def __init__(self, message: str, diagnostics: Optional[Dict] = None):
        self.diagnostics = diagnostics or {}
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class DivergedInnerLoopError(DivergedTrainingError):
    """Inner-loop adaptation produced a non-finite gradient"""


class DivergedOuterLoopError(DivergedTrainingError):
    """Meta-gradient is non-finite"""


# --- harness ----------------------------------------------------------------

class UnavailableMethodError(FewSARError):
    """Method name is reserved or unknown"""

    def __init__(self, name: str, implemented: Iterable[str], reserved: bool = False):
        self.name = name
        self.implemented = sorted(implemented)
        reason = "is reserved but not implemented" if reserved else "is not a registered method"
        super().__init__(
            f"Method '{name}' {reason}. Implemented methods: {', '.join(self.implemented)}"
        )


class LayoutError(FewSARError):
    """Results cannot be laid out as a comparison table"""
