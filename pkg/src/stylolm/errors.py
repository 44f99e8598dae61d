"""Exception types shared across the toolkit."""


class StyloError(Exception):
    """Base class for all toolkit errors."""


class MalformedSourceError(StyloError):
    """Raw book text violates the expected source layout (e.g. end marker before start)."""


class InsufficientCorpusError(StyloError):
    """An author's corpus cannot support the requested operation (too few books/tokens)."""


class VocabularyError(StyloError):
    """Vocabulary or merges files are malformed (duplicate ids, gaps, bad merge lines)."""


class ShapeError(StyloError):
    """Tensor operands have incompatible shapes or dtypes."""


class GradientError(StyloError):
    """Backward-pass contract violation (non-scalar loss, missing grad on a parameter)."""


class ConfigError(StyloError):
    """Invalid model or training configuration."""


class TrainingDivergenceError(StyloError):
    """Loss became non-finite during training or evaluation."""


class TextTooShortError(StyloError):
    """Held-out text is shorter than one evaluation chunk."""


class DegenerateSampleError(StyloError):
    """Statistical test input has no usable variance."""


class TaggerError(StyloError):
    """External tag file is malformed or misaligned with its book."""


class LedgerError(StyloError):
    """Experiment ledger is inconsistent with the requested operation."""
