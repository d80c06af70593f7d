"""Exception hierarchy shared across the package.

The CLI maps these onto its stable exit codes (config 2, artifact
mismatch 3, vocabulary 4, runtime 5), and the HTTP layer maps them onto
status codes, so raising the right class matters.
"""


class GradrollError(Exception):
    """Base class for all package errors."""


class ConfigError(GradrollError):
    """Invalid or inconsistent configuration."""


class ParseError(ConfigError):
    """Malformed input file; message carries the offending line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class VocabError(GradrollError):
    """Unknown entity or relation name against a frozen vocabulary."""


class ArtifactMismatchError(GradrollError):
    """Checkpoint/ledger pair with inconsistent headers or config hashes."""


class TrainingDivergedError(GradrollError):
    """Non-finite loss during training; carries step diagnostics."""

    def __init__(self, step, triple_id, loss):
        self.step = step
        self.triple_id = triple_id
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at step {step} (triple id {triple_id})"
        )
