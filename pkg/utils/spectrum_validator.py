"""
Measurement table validation for the phantom design toolkit.

Checks a measurement CSV (already read into a DataFrame) before it becomes a
material sample:
- Column layout (frequency_hz, rel_permittivity_1..N, conductivity_s_per_m_1..N)
- Numeric types and row count
- Strictly increasing frequencies
- Physical ranges (conductivity >= 0, relative permittivity >= 1)
- Rows outside the configured frequency band
"""

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from utils.base import ValidatorComponent


FREQUENCY_COLUMN = 'frequency_hz'
PERMITTIVITY_PREFIX = 'rel_permittivity_'
CONDUCTIVITY_PREFIX = 'conductivity_s_per_m_'
MIN_ROWS = 3

_REPLICATE_RE = re.compile(r'^(rel_permittivity|conductivity_s_per_m)_(\d+)$')


@dataclass
class ValidationResult:
    """
    Result of a validation operation.

    ``error_kind`` tells callers which exception to raise: ``schema`` for a
    malformed table, ``validation`` for physically impossible values.
    """
    is_valid: bool
    message: str
    error_details: Optional[Dict] = None
    error_kind: Optional[str] = None
    validated_rows: Optional[int] = None
    out_of_band_rows: List[int] = field(default_factory=list)


def replicate_columns(columns) -> Dict[str, List[str]]:
    """Permittivity and conductivity replicate columns, ordered by replicate number."""
    found: Dict[str, List[tuple]] = {'permittivity': [], 'conductivity': []}
    for column in columns:
        match = _REPLICATE_RE.match(str(column))
        if match is None:
            continue
        key = 'permittivity' if match.group(1) == 'rel_permittivity' else 'conductivity'
        found[key].append((int(match.group(2)), str(column)))
    return {key: [name for _, name in sorted(values)] for key, values in found.items()}


class MeasurementFrameValidator(ValidatorComponent):
    """Validates measurement tables read from CSV files."""

    def __init__(self, environment: Optional[str] = None, config_dir: Optional[Path] = None):
        super().__init__(environment, config_dir)
        self.min_rows = MIN_ROWS

    def validate_structure(self, frame: pd.DataFrame) -> ValidationResult:
        """
        Validate columns, types and row count.

        Args:
            frame: Measurement table

        Returns:
            ValidationResult with validation outcome
        """
        if FREQUENCY_COLUMN not in frame.columns:
            return ValidationResult(False, f"Missing required column '{FREQUENCY_COLUMN}'",
                                    {'field': FREQUENCY_COLUMN}, error_kind='schema')

        replicates = replicate_columns(frame.columns)
        if not replicates['permittivity'] or not replicates['conductivity']:
            return ValidationResult(
                False,
                f"Expected at least one '{PERMITTIVITY_PREFIX}N' and one '{CONDUCTIVITY_PREFIX}N' column",
                {'columns': [str(c) for c in frame.columns]},
                error_kind='schema'
            )

        known = {FREQUENCY_COLUMN, *replicates['permittivity'], *replicates['conductivity']}
        unknown = [str(c) for c in frame.columns if str(c) not in known]
        if unknown:
            return ValidationResult(False, f"Unknown columns: {unknown}",
                                    {'field': unknown[0]}, error_kind='schema')

        type_errors = [str(c) for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
        if type_errors:
            bad_column = type_errors[0]
            coerced = pd.to_numeric(frame[bad_column], errors='coerce')
            bad_rows = coerced.index[coerced.isna()].tolist()
            return ValidationResult(
                False,
                f"Non-numeric values in columns: {type_errors}",
                {'field': bad_column, 'row': int(bad_rows[0]) if bad_rows else None},
                error_kind='schema'
            )

        missing = frame.isna().any(axis=1)
        if missing.any():
            row = int(np.flatnonzero(missing.to_numpy())[0])
            return ValidationResult(False, "Missing values in measurement table",
                                    {'row': row}, error_kind='schema')

        if len(frame) < self.min_rows:
            return ValidationResult(
                False,
                f"Need at least {self.min_rows} frequency rows, got {len(frame)}",
                {'rows': len(frame)},
                error_kind='schema'
            )

        return ValidationResult(True, "Structure OK", validated_rows=len(frame))

    def validate_rows(self, frame: pd.DataFrame, widen_bounds: bool = False) -> ValidationResult:
        """
        Validate frequency ordering, value ranges and band membership.

        Assumes ``validate_structure`` passed.

        Args:
            frame: Measurement table
            widen_bounds: Keep rows outside the configured band instead of flagging them

        Returns:
            ValidationResult; ``out_of_band_rows`` lists rows to drop
        """
        frequencies = frame[FREQUENCY_COLUMN].to_numpy(dtype=float)

        if np.any(frequencies <= 0):
            row = int(np.argmax(frequencies <= 0))
            return ValidationResult(False, f"Frequency must be positive (row {row})",
                                    {'row': row, 'field': FREQUENCY_COLUMN}, error_kind='schema')

        steps = np.diff(frequencies)
        if np.any(steps <= 0):
            row = int(np.argmax(steps <= 0)) + 1
            return ValidationResult(
                False,
                f"Frequencies must be strictly increasing (row {row}: {frequencies[row]:g} Hz)",
                {'row': row, 'field': FREQUENCY_COLUMN},
                error_kind='schema'
            )

        replicates = replicate_columns(frame.columns)
        for column in replicates['conductivity']:
            values = frame[column].to_numpy(dtype=float)
            if np.any(values < 0):
                row = int(np.argmax(values < 0))
                return ValidationResult(
                    False,
                    f"Negative conductivity {values[row]:g} S/m in '{column}' (row {row})",
                    {'row': row, 'field': column},
                    error_kind='validation'
                )
        for column in replicates['permittivity']:
            values = frame[column].to_numpy(dtype=float)
            if np.any(values < 1.0):
                row = int(np.argmax(values < 1.0))
                return ValidationResult(
                    False,
                    f"Relative permittivity {values[row]:g} below 1 in '{column}' (row {row})",
                    {'row': row, 'field': column},
                    error_kind='validation'
                )

        out_of_band: List[int] = []
        if not widen_bounds:
            outside = (frequencies < self.fmin_hz * (1 - 1e-9)) | (frequencies > self.fmax_hz * (1 + 1e-9))
            out_of_band = [int(i) for i in np.flatnonzero(outside)]
            if len(frequencies) - len(out_of_band) < self.min_rows:
                return ValidationResult(
                    False,
                    f"Fewer than {self.min_rows} rows inside [{self.fmin_hz:g}, {self.fmax_hz:g}] Hz",
                    {'rows_in_band': len(frequencies) - len(out_of_band)},
                    error_kind='schema'
                )

        return ValidationResult(True, "Rows OK", validated_rows=len(frequencies) - len(out_of_band),
                                out_of_band_rows=out_of_band)

    def validate(self, frame: pd.DataFrame, widen_bounds: bool = False) -> ValidationResult:
        """Run structure then row checks and log the outcome."""
        result = self.validate_structure(frame)
        if result.is_valid:
            result = self.validate_rows(frame, widen_bounds)
        self.log_validation_result(result.is_valid, result.message, result.error_details)
        return result
