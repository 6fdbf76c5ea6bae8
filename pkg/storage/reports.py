"""JSON sidecar reports and CSV result tables."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd


logger = logging.getLogger(__name__)


class ReportStore:
    """Stores a JSON report next to the artifact it describes."""

    def __init__(self, report_file: Union[str, Path]):
        """
        Initialize the report store.

        Args:
            report_file: Path to the JSON report
        """
        self.report_file = Path(report_file)

    def save(self, data: Any, metadata: Optional[dict] = None) -> bool:
        """
        Save a report.

        Args:
            data: Report payload (must be JSON serializable)
            metadata: Optional metadata to include

        Returns:
            bool: True if save was successful, False otherwise
        """
        try:
            self.report_file.parent.mkdir(parents=True, exist_ok=True)

            report = {'data': data}
            if metadata:
                report['metadata'] = metadata

            with open(self.report_file, 'w', encoding='utf-8') as f:
                json.dump(report, f, indent=2, sort_keys=True)

            logger.debug(f"Report saved to {self.report_file}")
            return True

        except (OSError, TypeError, ValueError) as e:
            logger.error(f"Failed to save report to {self.report_file}: {e}")
            return False

    def load(self) -> Optional[dict]:
        """
        Load a report.

        Returns:
            Optional[dict]: {'data': ..., 'metadata': ...}, or None if missing or invalid
        """
        if not self.report_file.exists():
            logger.debug(f"Report does not exist: {self.report_file}")
            return None
        try:
            with open(self.report_file, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Failed to parse report {self.report_file}: {e}")
            return None


def append_rows(path: Union[str, Path], rows: List[Dict[str, Any]], columns: List[str]) -> None:
    """
    Append rows to a CSV table, writing the header when the file is new.

    Args:
        path: CSV path
        rows: Row dictionaries
        columns: Column order
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    write_header = not path.exists() or path.stat().st_size == 0
    frame.to_csv(path, mode='a', header=write_header, index=False, float_format='%.9g')


def write_table(path: Union[str, Path], rows: List[Dict[str, Any]], columns: List[str]) -> None:
    """Write (overwrite) a CSV table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, float_format='%.9g')
