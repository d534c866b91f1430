"""Exception hierarchy shared across the library.

ValidationError covers contract/precondition violations (CLI exit code 2),
NumericError covers runtime numerical failures such as divergence (exit
code 3). SceneError carries a machine-readable ``code`` so loaders can
report distinct failure classes.
"""


class SparseSplatError(Exception):
    """Base class for all library errors."""


class ValidationError(SparseSplatError, ValueError):
    """A precondition, shape contract, or invariant was violated."""


class NumericError(SparseSplatError, RuntimeError):
    """A numerical failure at runtime (divergence, non-finite values)."""


class SceneError(ValidationError):
    """Scene loading failure with a distinct error code.

    Codes: ``missing-file``, ``malformed-json``, ``bad-schema``,
    ``invariant-violation``, ``image-mismatch``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class StageError(SparseSplatError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[stage:{stage}] {message}")
        self.stage = stage
