"""
Typed errors raised by the sct_evaluator building blocks.

Low-level functions (parsers, metric kernels) raise these and never return
partial results. The orchestration layer catches them per patient, logs them
and records an exclusion instead of aborting the whole run.
"""


class SctEvaluatorError(Exception):
    """Base class for all toolkit errors. `code` is stable and machine-readable."""

    code = "error"


class NiftiFormatError(SctEvaluatorError):
    code = "nifti_format"


class UnsupportedDatatypeError(SctEvaluatorError):
    code = "unsupported_datatype"


class TruncatedPayloadError(SctEvaluatorError, IOError):
    code = "truncated_payload"


class DimensionError(SctEvaluatorError):
    code = "dimension"


class PairingError(SctEvaluatorError):
    code = "pairing"


class DegenerateInputError(SctEvaluatorError):
    code = "degenerate_input"


class InsufficientDataError(SctEvaluatorError):
    code = "insufficient_data"


class NumericError(SctEvaluatorError):
    code = "numeric"


class ValueKindError(SctEvaluatorError):
    code = "value_kind"


class EmbeddingError(SctEvaluatorError):
    code = "embedding"


class ConfigError(SctEvaluatorError):
    code = "config"


class UsageError(SctEvaluatorError):
    code = "usage"


class MaskLabelError(SctEvaluatorError):
    code = "mask_labels"
