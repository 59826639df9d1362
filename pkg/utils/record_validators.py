"""
Record validation utilities for structured input files.

Tissue-library records and database manifest entries are plain mappings
loaded from JSON/YAML. These helpers check their fields before the domain
types are built, so errors name the record and field at fault.
"""

from typing import Any, Collection, Iterable, Optional
from datetime import datetime

from dateutil import parser as date_parser

from utils.error_handler import SchemaError
from utils.logging import get_logger


logger = get_logger(__name__)


def validate_record_fields(record: Any, required_fields: Iterable[str],
                           optional_fields: Collection[str] = (),
                           record_label: str = "record",
                           line: Optional[int] = None) -> None:
    """
    Validate that a record has every required field and no unknown ones.

    Args:
        record: Mapping loaded from a structured file
        required_fields: Field names that must be present and non-empty
        optional_fields: Additional field names that are accepted
        record_label: Human readable record name for error messages
        line: Source line of the record, when known

    Raises:
        SchemaError: If a field is missing, empty or unknown
    """
    if not isinstance(record, dict):
        raise SchemaError(f"{record_label} must be a mapping, got {type(record).__name__}", line=line)

    required = list(required_fields)
    missing_fields = [field for field in required if field not in record]
    if missing_fields:
        raise SchemaError(
            f"Missing required fields in {record_label}: {missing_fields}",
            line=line,
            field=missing_fields[0]
        )

    empty_fields = [
        field for field in required
        if record[field] is None or str(record[field]).strip() == ''
    ]
    if empty_fields:
        raise SchemaError(
            f"Empty values in required fields of {record_label}: {empty_fields}",
            line=line,
            field=empty_fields[0]
        )

    allowed = set(required) | set(optional_fields)
    unknown_fields = sorted(set(record) - allowed)
    if unknown_fields:
        raise SchemaError(
            f"Unknown fields in {record_label}: {unknown_fields}",
            line=line,
            field=unknown_fields[0]
        )


def validate_numeric_field(value: Any, field_name: str, record_label: str = "record",
                           allow_none: bool = False, line: Optional[int] = None) -> Optional[float]:
    """
    Validate that a field contains a valid numeric value.

    Args:
        value: Value to validate
        field_name: Name of the field for error messages
        record_label: Human readable record name for error messages
        allow_none: Whether None/empty values are allowed
        line: Source line of the record, when known

    Returns:
        The value as float, or None when empty values are allowed

    Raises:
        SchemaError: If value is not numeric when required
    """
    if allow_none and (value is None or str(value).strip() == ''):
        return None

    if isinstance(value, bool):
        raise SchemaError(f"{record_label}: field must be numeric, got {value!r}", line=line, field=field_name)

    try:
        return float(value)
    except (ValueError, TypeError):
        raise SchemaError(f"{record_label}: field must be numeric, got {value!r}", line=line, field=field_name)


def parse_timestamp(value: Any, field_name: str = "measured_at") -> Optional[datetime]:
    """
    Parse an optional timestamp field.

    Args:
        value: ISO-like string, datetime or None
        field_name: Name of the field for error messages

    Returns:
        Parsed datetime or None

    Raises:
        SchemaError: If the value cannot be parsed
    """
    if value is None or (isinstance(value, str) and value.strip() == ''):
        return None
    if isinstance(value, datetime):
        return value
    try:
        return date_parser.isoparse(str(value))
    except (ValueError, OverflowError):
        try:
            parsed = date_parser.parse(str(value))
        except (ValueError, OverflowError):
            raise SchemaError(f"Cannot parse timestamp {value!r}", field=field_name)
        logger.warning("Timestamp '%s' is not ISO 8601; parsed as %s", value, parsed.isoformat())
        return parsed
