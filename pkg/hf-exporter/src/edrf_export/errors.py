"""Exporter error and warning types."""


class ExportError(Exception):
    """Base class for everything the exporter can refuse to do."""


class DatasetError(ExportError):
    """The token/label file is malformed or internally inconsistent."""


class LabelMapError(ExportError):
    """A dataset label has no mapping, or the map lacks the 'O' class."""


class DimMismatch(UserWarning):
    # A prior export at the same output path had a different embedding
    # width; the new file still gets written.
    pass
