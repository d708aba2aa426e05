"""Exception hierarchy. Every named failure mode in the package raises one of these."""

from __future__ import annotations


class MootcourtError(Exception):
    """Base class for all package errors."""


# --- gateway ---

class GatewayError(MootcourtError):
    pass


class ProtocolError(GatewayError):
    """Provider returned a malformed or inconsistent body."""


class RetriesExhaustedError(GatewayError):
    """Transport kept failing after the configured number of retries."""


class ScriptExhaustedError(GatewayError):
    """Scripted mock ran out of canned replies."""


class StructuredReplyError(GatewayError):
    """Reply never parsed/validated as the requested object, retries included."""


# --- corpus ---

class CorpusError(MootcourtError):
    pass


class IngestError(CorpusError):
    """Malformed ingest input; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class DuplicateIdError(IngestError):
    pass


class InsufficientCorpusError(CorpusError):
    pass


# --- stage-level format errors (structured LLM replies that never validated) ---

class GenerationFormatError(MootcourtError):
    pass


class EvaluationFormatError(MootcourtError):
    pass


class ScoringFormatError(MootcourtError):
    pass


class JudgmentFormatError(MootcourtError):
    pass


class CivilFormatError(MootcourtError):
    pass


# --- courtroom ---

class TrialProtocolError(MootcourtError):
    """Turns driven out of order, or a transcript in an impossible state."""


class TurnGenerationError(MootcourtError):
    """A lawyer turn could not be produced (e.g. empty reply)."""


class TrialAborted(MootcourtError):
    """A trial stopped mid-way; .transcript holds the in_progress state."""

    def __init__(self, message: str, transcript=None):
        super().__init__(message)
        self.transcript = transcript


# --- retrieval ---

class RetrievalNotReadyError(MootcourtError):
    """Vectors or indexes required for a query have not been built."""


# --- forge ---

class ForgeExhaustedError(MootcourtError):
    """Rejection sampling used its whole attempt budget without one acceptance."""

    def __init__(self, message: str, stats=None):
        super().__init__(message)
        self.stats = stats


# --- config / pipeline ---

class ConfigError(MootcourtError):
    """Invalid run configuration; .errors lists every problem by key path."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class StageError(MootcourtError):
    """A pipeline stage failed; the manifest records where."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


# --- metrics ---

class MetricsError(MootcourtError):
    pass
