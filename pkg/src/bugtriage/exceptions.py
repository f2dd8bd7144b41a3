class TriageError(Exception):
    """Base class for errors raised on bad input data."""


class CorpusFormatError(TriageError, ValueError):
    """A corpus record could not be parsed."""

    def __init__(self, record_index, field, message):
        self.record_index = record_index
        self.field = field
        super().__init__(f"record {record_index}, field {field!r}: {message}")


class EmptyVocabularyError(TriageError, ValueError):
    pass


class EmptyDatasetError(TriageError, ValueError):
    pass


class SplitError(TriageError, ValueError):
    pass
