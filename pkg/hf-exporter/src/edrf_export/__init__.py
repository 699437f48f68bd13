"""Per-token hidden-state exporter for token-classification checkpoints.

Feeds a labeled token dataset through a pretrained model and writes one
EDRF v1 record per token: a stable uid, the mapped class, and the chosen
hidden layer's embedding with first-subtoken pooling. Token uids depend
only on the dataset, so two exports of different checkpoints over the
same data align record for record.
"""

from .errors import DatasetError, DimMismatch, ExportError, LabelMapError
from .export import ExportJob, ExportResult, export, token_uid

__all__ = [
    "DatasetError",
    "DimMismatch",
    "ExportError",
    "ExportJob",
    "ExportResult",
    "LabelMapError",
    "export",
    "token_uid",
]
