"""
Material database directory management.

A database directory holds one CSV per (method, concentration, date) in the
measurement schema plus ``manifest.json`` describing each file:

    {"schema_version": 1,
     "samples": [{"file": "oil_only_30_2024-03-01.csv", "method": "oil_only",
                  "concentration": 0.3, "provenance": "measured",
                  "measured_at": "2024-03-01T10:00:00", "sample_thickness_mm": 2.5,
                  "location_count": 3, "notes": ""}]}

An optional ``phantom.yaml`` next to the manifest overrides settings.
"""

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from core.materials import (
    SCHEMA_VERSION,
    MaterialDatabase,
    MaterialSample,
    MeasurementMetadata,
    Method,
    Provenance,
    frame_to_spectrum,
    normalize_concentration,
    parse_measurement_frame,
    spectrum_to_frame,
    read_measurement_csv,
)
from utils.base import DataComponent
from utils.error_handler import SchemaError, ValidationError
from utils.record_validators import (
    parse_timestamp,
    validate_numeric_field,
    validate_record_fields,
)


MANIFEST_FILENAME = "manifest.json"

_REQUIRED = ['file', 'method', 'concentration', 'provenance']
_OPTIONAL = ['measured_at', 'sample_thickness_mm', 'location_count', 'notes']


@dataclass
class ManifestEntry:
    """One row of the manifest."""
    file: str
    method: Method
    concentration: float
    provenance: Provenance
    measured_at: Optional[datetime] = None
    sample_thickness_mm: Optional[float] = None
    location_count: Optional[int] = None
    notes: str = ""

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for the manifest."""
        record: Dict[str, Any] = {
            'file': self.file,
            'method': self.method.value,
            'concentration': self.concentration,
            'provenance': self.provenance.value,
        }
        if self.measured_at is not None:
            record['measured_at'] = self.measured_at.isoformat()
        if self.sample_thickness_mm is not None:
            record['sample_thickness_mm'] = self.sample_thickness_mm
        if self.location_count is not None:
            record['location_count'] = self.location_count
        if self.notes:
            record['notes'] = self.notes
        return record

    @classmethod
    def from_dict(cls, data: Dict[str, Any], position: int) -> 'ManifestEntry':
        """Create from a manifest record."""
        label = f"manifest sample {position + 1}"
        validate_record_fields(data, _REQUIRED, _OPTIONAL, label)
        try:
            provenance = Provenance(str(data['provenance']))
        except ValueError:
            raise SchemaError(f"{label}: unknown provenance {data['provenance']!r}", field='provenance')

        thickness = validate_numeric_field(data.get('sample_thickness_mm'), 'sample_thickness_mm',
                                           label, allow_none=True)
        locations = validate_numeric_field(data.get('location_count'), 'location_count',
                                           label, allow_none=True)
        return cls(
            file=str(data['file']),
            method=Method.parse(data['method']),
            concentration=normalize_concentration(
                validate_numeric_field(data['concentration'], 'concentration', label)),
            provenance=provenance,
            measured_at=parse_timestamp(data.get('measured_at')),
            sample_thickness_mm=thickness,
            location_count=int(locations) if locations is not None else None,
            notes=str(data.get('notes') or ''),
        )

    @property
    def metadata(self) -> MeasurementMetadata:
        return MeasurementMetadata(self.measured_at, self.sample_thickness_mm,
                                   self.location_count, self.notes)


def sample_filename(sample: MaterialSample) -> str:
    stamp = sample.measured_at.strftime('%Y-%m-%d') if sample.measured_at else sample.provenance.value
    return f"{sample.method.value}_{int(round(sample.concentration * 100)):02d}_{stamp}.csv"


class MaterialStore(DataComponent):
    """
    Loads and saves material databases kept in a directory.

    Inherits from DataComponent which provides:
    - Logger and configuration
    - Data directory path handling
    """

    def __init__(self, data_dir: Path, environment: Optional[str] = None,
                 config_dir: Optional[Path] = None):
        super().__init__(data_dir, environment=environment, config_dir=config_dir)
        self.manifest_path = self.get_data_file_path(MANIFEST_FILENAME)

    def read_manifest(self) -> List[ManifestEntry]:
        """
        Parse the manifest.

        Raises:
            SchemaError: Missing manifest, bad JSON or bad records
            ValidationError: Unsupported schema version
        """
        if not self.manifest_path.exists():
            raise SchemaError(f"No {MANIFEST_FILENAME} in database directory {self.data_dir}")
        try:
            with open(self.manifest_path, 'r', encoding='utf-8') as f:
                document = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"Cannot parse {self.manifest_path}: {e.msg}", line=e.lineno)

        validate_record_fields(document, ['schema_version', 'samples'], (), MANIFEST_FILENAME)
        version = document['schema_version']
        if version != SCHEMA_VERSION:
            raise ValidationError(
                f"Unsupported database schema_version {version} (expected {SCHEMA_VERSION})",
                details={'schema_version': version}
            )
        if not isinstance(document['samples'], list):
            raise SchemaError(f"{MANIFEST_FILENAME}: 'samples' must be a list", field='samples')
        return [ManifestEntry.from_dict(record, i) for i, record in enumerate(document['samples'])]

    def load(self) -> MaterialDatabase:
        """Load every sample listed in the manifest."""
        widen = bool(self.get_config_value('ingestion.widen_bounds', False))
        samples = []
        for entry in self.read_manifest():
            path = self.get_data_file_path(entry.file)
            frame = read_measurement_csv(path)
            if entry.provenance is Provenance.MEASURED:
                sample = parse_measurement_frame(frame, entry.method, entry.concentration,
                                                 entry.metadata, widen_bounds=widen, source=str(path))
            else:
                spectrum = frame_to_spectrum(frame, widen_bounds=True, source=str(path))
                sample = MaterialSample(entry.method, entry.concentration, spectrum, entry.provenance,
                                        entry.measured_at, entry.sample_thickness_mm, entry.notes)
            samples.append(sample)

        database = MaterialDatabase(tuple(samples))
        self.logger.info("Loaded %d samples (%d keys) from %s",
                         len(database), len(database.keys()), self.data_dir)
        return database

    def save(self, database: MaterialDatabase) -> List[Path]:
        """Write every sample and the manifest; returns the CSV paths."""
        self.data_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        written: List[Path] = []
        used = set()
        for sample in database.samples:
            name = sample_filename(sample)
            stem, counter = name[:-4], 2
            while name in used:
                name = f"{stem}_{counter}.csv"
                counter += 1
            used.add(name)

            path = self.get_data_file_path(name)
            spectrum_to_frame(sample.spectrum).to_csv(path, index=False, float_format='%.10g')
            written.append(path)
            entries.append(ManifestEntry(name, sample.method, sample.concentration, sample.provenance,
                                         sample.measured_at, sample.sample_thickness_mm, None,
                                         sample.notes))

        with open(self.manifest_path, 'w', encoding='utf-8') as f:
            json.dump({'schema_version': database.schema_version,
                       'samples': [e.to_dict() for e in entries]}, f, indent=2)
            f.write('\n')

        self.logger.info("Saved %d samples to %s", len(written), self.data_dir)
        return written
