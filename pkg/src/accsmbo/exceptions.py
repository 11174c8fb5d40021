"""Exception hierarchy shared by the library and the CLI.

Every exception carries a short ``category`` string that the CLI prints as
the machine-parsable part of its one-line error message.
"""


class AccSMBOError(Exception):
    category = "runtime"


class InvalidInputError(AccSMBOError, ValueError):
    category = "input"


class InvalidHistoryError(InvalidInputError):
    category = "history"


class DuplicatePointError(InvalidHistoryError):
    category = "duplicate-point"


class FitFailureError(AccSMBOError):
    category = "fit"


class EmptyMetadataError(AccSMBOError):
    category = "empty-metadata"


class EvaluationError(AccSMBOError):
    category = "evaluation"


class ConfigError(AccSMBOError):
    category = "config"


class DataFormatError(AccSMBOError):
    category = "data-format"
