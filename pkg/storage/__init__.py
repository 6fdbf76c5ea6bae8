"""Storage components: file formats, dataset manifests and reports."""

from .reports import ReportStore, append_rows, write_table

__all__ = [
    'ReportStore',
    'append_rows',
    'write_table',
]
