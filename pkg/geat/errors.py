""" Exceptions raised by the geat library.

The command line interface maps them to exit codes via `exit_code`.
"""


class GeatError(Exception):
    """ Base class of all errors that geat raises on purpose.
    """
    exit_code = 1

    def __init__(self, message):
        super().__init__(message)


class ConfigError(GeatError):
    """ A configuration value or option name is not acceptable.
    """
    exit_code = 1


class DataError(GeatError):
    """ Input data does not fulfill the expectations of the library.
    """
    exit_code = 2


class ParseError(DataError):
    """ A dataset file could not be parsed.
    """
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ValidationError(DataError):
    """ A value violates the alphabet or range constraints of its field.
    """


class SchemaError(DataError):
    """ The columns of a dataset do not have the expected layout.
    """


class DuplicateIdError(DataError):
    """ Two records of one dataset share the same id.
    """


class LabVocabError(DataError):
    """ Lab vocabularies of a model and a dataset do not fit together.
    """


class TokenizerError(GeatError):
    """ Tokenizer training, encoding, decoding or loading failed.
    """
    exit_code = 2


class CheckpointError(GeatError):
    """ A checkpoint file is malformed or does not fit the request.
    """
    exit_code = 2


class ShapeError(GeatError):
    """ Tensor shapes do not fit an operation.
    """
    exit_code = 3


class NumericError(GeatError):
    """ A computation produced non-finite values or is otherwise ill-defined.
    """
    exit_code = 3
