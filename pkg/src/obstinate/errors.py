"""Exception types shared across the toolkit."""


class ObstinateError(Exception):
    """Base class for all toolkit errors."""


class EmptyCorpus(ObstinateError):
    """Corpus contained no tokens after normalization."""


class EmptySentence(ObstinateError):
    """A required sentence slot tokenized to zero tokens."""


class IdOutOfRange(ObstinateError):
    """A token id does not exist in the vocabulary."""


class ShapeMismatch(ObstinateError):
    """Input matrix shape does not match the checkpoint."""


class LabelOutOfRange(ObstinateError):
    """A training label falls outside [0, n_classes)."""


class FormatVersionMismatch(ObstinateError):
    """Checkpoint file was written by an incompatible format version."""


class VocabFingerprintMismatch(ObstinateError):
    """Checkpoint was trained against a different vocabulary."""


class CorruptFile(ObstinateError):
    """Checkpoint file is truncated or not a checkpoint at all."""


class KTooLarge(ObstinateError):
    """Asked for more target words than there are attackable rows."""


class InvalidTargets(ObstinateError):
    """Attack target rows are empty, duplicated, or not attackable."""


class RemoteUnreachable(ObstinateError):
    """Remote oracle failed and fallback to the builtin oracle is disabled."""


class MalformedPairsLine(ObstinateError):
    """A substitution-pairs file line does not parse."""

    def __init__(self, line_number: int, line: str):
        self.line_number = line_number
        self.line = line
        super().__init__(f"line {line_number}: cannot parse {line!r}")


class IoFailure(ObstinateError):
    """Report or file export failed."""
