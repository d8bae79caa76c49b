"""Exception hierarchy shared across the engine.

Every error raised by falconer derives from :class:`FalconerError` so callers
(and the CLI exit-code mapping) can branch on failure class.
"""

from __future__ import annotations


class FalconerError(Exception):
    """Base class for all falconer errors."""


# --- corpus ---------------------------------------------------------------


class MalformedLine(FalconerError):
    def __init__(self, line_no: int, reason: str = "unparseable JSON"):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class DuplicateId(FalconerError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"duplicate record id {record_id!r}")


class EmptyCorpus(FalconerError):
    pass


class InvalidFraction(FalconerError):
    def __init__(self, fraction: float):
        self.fraction = fraction
        super().__init__(f"fraction must lie in (0, 1], got {fraction}")


# --- plan IR ---------------------------------------------------------------


class SchemaError(FalconerError):
    """Structural defect in a plan document, located by a JSON-pointer path."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path or '/'}: {reason}")


class InvalidPlan(FalconerError):
    def __init__(self, report):
        self.report = report
        super().__init__(f"plan failed validation:\n{report.render()}")


class EmptyInstruction(FalconerError):
    pass


# --- planner ---------------------------------------------------------------


class PlannerError(FalconerError):
    """Base for failures while obtaining a plan from an endpoint."""


class NoJsonFound(PlannerError):
    pass


class PlanInvalidAfterRepairs(PlannerError):
    def __init__(self, report):
        self.report = report
        super().__init__(f"plan still invalid after repairs:\n{report.render()}")


class MissingGolden(FalconerError):
    def __init__(self, task: str):
        self.task = task
        super().__init__(f"no golden plan for task {task!r}")


# --- primitives ------------------------------------------------------------


class EmptyLabel(FalconerError):
    pass


class MalformedBio(FalconerError):
    def __init__(self, position: int):
        self.position = position
        super().__init__(f"malformed BIO tag at position {position}")


class UnalignedSpan(FalconerError):
    def __init__(self, span):
        self.span = span
        super().__init__(f"span {span} does not align with token boundaries")


class OverlappingSpans(FalconerError):
    pass


class BadSplit(FalconerError):
    def __init__(self, split: int, n_tokens: int):
        self.split = split
        super().__init__(f"split {split} out of range for {n_tokens} tokens")


# --- backends ---------------------------------------------------------------


class BackendError(FalconerError):
    """Base for inference-provider failures."""


class BackendUnavailable(BackendError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(detail)


class ProtocolError(BackendError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(detail)


# --- generator ---------------------------------------------------------------


class CorpusTooSmall(FalconerError):
    def __init__(self, needed: int, available: int):
        self.needed = needed
        self.available = available
        super().__init__(f"need at least {needed} records, corpus has {available}")


class SampleTooLarge(FalconerError):
    def __init__(self, n: int, available: int):
        self.n = n
        self.available = available
        super().__init__(f"cannot sample {n} of {available} records")


class WrongKind(FalconerError):
    pass


# --- executor ----------------------------------------------------------------


class UnboundBackend(FalconerError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"no backend bound for node kind {kind!r}")


class MismatchedRuns(FalconerError):
    pass


# --- eval ---------------------------------------------------------------------


class UnknownRecord(FalconerError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"record id {record_id!r} not present in corpus")


class PlanMismatch(FalconerError):
    pass
