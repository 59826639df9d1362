"""
Material sample database.

Holds measured, interpolated and synthetic spectra of the two phantom
families (oil-only and oil-kerosene) at 10% to 90% oil concentration, ingests
impedance-analyzer exports, and interpolates between tabulated concentrations.
"""

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Dict, IO, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from core.dispersion import DielectricSpectrum, FrequencyGrid
from utils.config_manager import get_config_manager
from utils.error_handler import (
    FixtureLimitError,
    RangeError,
    SchemaError,
    UsageError,
    ValidationError,
)
from utils.logging import get_logger
from utils.spectrum_validator import (
    CONDUCTIVITY_PREFIX,
    FREQUENCY_COLUMN,
    PERMITTIVITY_PREFIX,
    MeasurementFrameValidator,
    replicate_columns,
)


logger = get_logger(__name__)

CONCENTRATION_MIN = 0.10
CONCENTRATION_MAX = 0.90
MAX_THICKNESS_MM = 3.0
MIN_TEST_LOCATIONS = 3
SCHEMA_VERSION = 1
TISSUE_COLUMN = 'tissue_id'

_TOL = 1e-9
_LABEL_RE = re.compile(r'^(OO|OK)(\d{1,2})$', re.IGNORECASE)


class Method(Enum):
    """Phantom family."""
    OIL_ONLY = "oil_only"
    OIL_KEROSENE = "oil_kerosene"

    @property
    def code(self) -> str:
        return "OO" if self is Method.OIL_ONLY else "OK"

    @classmethod
    def parse(cls, value: Union[str, "Method"]) -> "Method":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace('-', '_')
        aliases = {'oo': cls.OIL_ONLY, 'ok': cls.OIL_KEROSENE}
        if text in aliases:
            return aliases[text]
        try:
            return cls(text)
        except ValueError:
            raise UsageError(f"Unknown method '{value}'. Use one of {[m.value for m in cls]}")


class Provenance(Enum):
    MEASURED = "measured"
    INTERPOLATED = "interpolated"
    SYNTHETIC = "synthetic"


def normalize_concentration(concentration: float) -> float:
    """
    Check a concentration fraction and round it to a stable key.

    Raises:
        ValidationError: If outside [0.10, 0.90]
    """
    c = float(concentration)
    if not math.isfinite(c) or c < CONCENTRATION_MIN - _TOL or c > CONCENTRATION_MAX + _TOL:
        raise ValidationError(
            f"Concentration {c} outside [{CONCENTRATION_MIN}, {CONCENTRATION_MAX}]",
            details={'concentration': c}
        )
    return round(min(max(c, CONCENTRATION_MIN), CONCENTRATION_MAX), 6)


def sample_label(method: Method, concentration: float) -> str:
    """Short label such as ``OO30`` or ``OK80``."""
    return f"{method.code}{int(round(concentration * 100))}"


def parse_sample_label(label: str) -> Tuple[Method, float]:
    """Inverse of ``sample_label``."""
    match = _LABEL_RE.match(label.strip())
    if match is None:
        raise UsageError(f"Invalid sample label '{label}' (expected e.g. OO30 or OK80)")
    method = Method.OIL_ONLY if match.group(1).upper() == "OO" else Method.OIL_KEROSENE
    return method, normalize_concentration(int(match.group(2)) / 100.0)


@dataclass(frozen=True)
class MeasurementMetadata:
    """What the operator records alongside an analyzer export."""
    measured_at: Optional[datetime] = None
    sample_thickness_mm: Optional[float] = None
    location_count: Optional[int] = None
    notes: str = ""


@dataclass(frozen=True, eq=False)
class MaterialSample:
    """A phantom sample and its dielectric spectrum."""
    method: Method
    concentration: float
    spectrum: DielectricSpectrum
    provenance: Provenance
    measured_at: Optional[datetime] = None
    sample_thickness_mm: Optional[float] = None
    notes: str = ""

    def __post_init__(self):
        object.__setattr__(self, 'method', Method.parse(self.method))
        object.__setattr__(self, 'concentration', normalize_concentration(self.concentration))

        thickness = self.sample_thickness_mm
        if thickness is not None:
            if not math.isfinite(thickness) or thickness <= 0:
                raise ValidationError(f"Sample thickness must be positive, got {thickness} mm",
                                      details={'sample_thickness_mm': thickness})
            if thickness > MAX_THICKNESS_MM:
                raise FixtureLimitError(
                    f"Sample thickness {thickness} mm exceeds the {MAX_THICKNESS_MM} mm fixture limit",
                    details={'sample_thickness_mm': thickness}
                )
        elif self.provenance is Provenance.MEASURED:
            raise ValidationError(
                f"Measured sample {self.label} needs a sample thickness",
                details={'method': self.method.value, 'concentration': self.concentration}
            )

    @property
    def key(self) -> Tuple[Method, float]:
        return self.method, self.concentration

    @property
    def label(self) -> str:
        return sample_label(self.method, self.concentration)

    def with_spectrum(self, spectrum: DielectricSpectrum,
                      provenance: Optional[Provenance] = None) -> "MaterialSample":
        return MaterialSample(self.method, self.concentration, spectrum,
                              provenance or self.provenance, self.measured_at,
                              self.sample_thickness_mm, self.notes)


def _time_rank(sample: MaterialSample) -> float:
    # Undated (synthetic) samples rank oldest
    if sample.measured_at is None:
        return -math.inf
    stamp = sample.measured_at
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


@dataclass(frozen=True)
class MaterialDatabase:
    """
    Immutable snapshot of material samples keyed by (method, concentration).

    Several samples may share a key (re-measurements over time); ``current``
    returns the most recent one.
    """
    samples: Tuple[MaterialSample, ...] = ()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, 'samples', tuple(self.samples))
        seen = set()
        for sample in self.samples:
            if sample.provenance is not Provenance.MEASURED:
                continue
            identity = (sample.method, sample.concentration, _time_rank(sample))
            if identity in seen:
                raise ValidationError(
                    f"Duplicate measurement of {sample.label} at {sample.measured_at}",
                    details={'label': sample.label}
                )
            seen.add(identity)

    def __len__(self) -> int:
        return len(self.samples)

    def with_sample(self, sample: MaterialSample) -> "MaterialDatabase":
        return MaterialDatabase(self.samples + (sample,), self.schema_version)

    def keys(self) -> List[Tuple[Method, float]]:
        order = {method: index for index, method in enumerate(Method)}
        return sorted({s.key for s in self.samples}, key=lambda k: (order[k[0]], k[1]))

    def methods(self) -> List[Method]:
        present = {s.method for s in self.samples}
        return [m for m in Method if m in present]

    def concentrations(self, method: Method) -> List[float]:
        method = Method.parse(method)
        return sorted({s.concentration for s in self.samples if s.method is method})

    def samples_for(self, method: Method, concentration: float) -> List[MaterialSample]:
        """All samples of a key, oldest first."""
        key = (Method.parse(method), normalize_concentration(concentration))
        matching = [s for s in self.samples if s.key == key]
        return sorted(matching, key=_time_rank)

    def current(self, method: Method, concentration: float) -> MaterialSample:
        """
        Most recent sample for a key.

        Raises:
            UsageError: If the database has no sample for the key
        """
        matching = self.samples_for(method, concentration)
        if not matching:
            raise UsageError(
                f"No sample for {sample_label(Method.parse(method), normalize_concentration(concentration))}"
            )
        return matching[-1]

    def current_samples(self) -> List[MaterialSample]:
        return [self.current(method, c) for method, c in self.keys()]


@dataclass(frozen=True)
class MonotonicityViolation:
    frequency_hz: float
    prop: str
    concentration_low: float
    concentration_high: float
    value_low: float
    value_high: float


@dataclass
class MonotonicityReport:
    """Places where a property does not decrease with concentration."""
    method: Method
    violations: List[MonotonicityViolation] = field(default_factory=list)

    @property
    def is_consistent(self) -> bool:
        return not self.violations

    def pairs(self) -> List[Tuple[float, float]]:
        return sorted({(v.concentration_low, v.concentration_high) for v in self.violations})


@dataclass
class AgingReport:
    """Relative change between two measurements of the same sample."""
    method: Method
    concentration: float
    frequencies: np.ndarray
    conductivity_delta: np.ndarray
    permittivity_delta: np.ndarray
    measured_at_a: Optional[datetime] = None
    measured_at_b: Optional[datetime] = None

    @property
    def max_abs_conductivity_delta(self) -> float:
        return float(np.max(np.abs(self.conductivity_delta)))

    @property
    def max_abs_permittivity_delta(self) -> float:
        return float(np.max(np.abs(self.permittivity_delta)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            FREQUENCY_COLUMN: self.frequencies,
            'conductivity_delta': self.conductivity_delta,
            'permittivity_delta': self.permittivity_delta,
        })


def _ingestion_setting(key: str, default):
    return get_config_manager().get(f"ingestion.{key}", default)


def _aggregate(values: np.ndarray, aggregate: str) -> np.ndarray:
    # Sorting each row first makes the result independent of column order
    ordered = np.sort(values, axis=1)
    if aggregate == 'mean':
        return ordered.mean(axis=1)
    if aggregate == 'median':
        return np.median(ordered, axis=1)
    raise UsageError(f"Unknown replicate aggregate '{aggregate}' (use mean or median)")


def _raise_for(result, source: str) -> None:
    details = result.error_details or {}
    message = f"{source}: {result.message}"
    if result.error_kind == 'validation':
        raise ValidationError(message, details=details)
    row = details.get('row')
    # Header is line 1
    line = row + 2 if isinstance(row, int) else None
    raise SchemaError(message, line=line, field=details.get('field'), details=details)


def frame_to_spectrum(frame: pd.DataFrame, aggregate: str = 'mean', widen_bounds: bool = False,
                      validator: Optional[MeasurementFrameValidator] = None,
                      source: str = "measurement") -> DielectricSpectrum:
    """
    Validate a measurement table and average its replicates into a spectrum.

    Rows outside the configured band are dropped with a warning unless
    ``widen_bounds`` is set.
    """
    validator = validator or MeasurementFrameValidator()
    frame = frame.reset_index(drop=True)
    result = validator.validate(frame, widen_bounds=widen_bounds)
    if not result.is_valid:
        _raise_for(result, source)

    if result.out_of_band_rows:
        dropped = frame.loc[result.out_of_band_rows, FREQUENCY_COLUMN].tolist()
        logger.warning(
            "%s: dropping %d row(s) outside [%g, %g] Hz: %s (use widen_bounds to keep them)",
            source, len(dropped), validator.fmin_hz, validator.fmax_hz,
            ", ".join(f"{f:g}" for f in dropped)
        )
        frame = frame.drop(index=result.out_of_band_rows).reset_index(drop=True)

    columns = replicate_columns(frame.columns)
    frequencies = frame[FREQUENCY_COLUMN].to_numpy(dtype=float)
    permittivity = _aggregate(frame[columns['permittivity']].to_numpy(dtype=float), aggregate)
    conductivity = _aggregate(frame[columns['conductivity']].to_numpy(dtype=float), aggregate)

    grid = FrequencyGrid(
        frequencies,
        fmin_bound=min(validator.fmin_hz, float(frequencies[0])),
        fmax_bound=max(validator.fmax_hz, float(frequencies[-1])),
    )
    try:
        return DielectricSpectrum(grid, permittivity, conductivity)
    except ValidationError as e:
        raise ValidationError(f"{source}: {e}", details=e.details)


def parse_measurement_frame(frame: pd.DataFrame, method: Method, concentration: float,
                            metadata: MeasurementMetadata, aggregate: Optional[str] = None,
                            widen_bounds: Optional[bool] = None,
                            source: str = "measurement") -> MaterialSample:
    """Build a measured sample from an in-memory measurement table."""
    aggregate = aggregate or _ingestion_setting('aggregate', 'mean')
    if widen_bounds is None:
        widen_bounds = bool(_ingestion_setting('widen_bounds', False))

    if metadata.sample_thickness_mm is not None and metadata.sample_thickness_mm > MAX_THICKNESS_MM:
        raise FixtureLimitError(
            f"{source}: sample thickness {metadata.sample_thickness_mm} mm exceeds "
            f"the {MAX_THICKNESS_MM} mm fixture limit",
            details={'sample_thickness_mm': metadata.sample_thickness_mm}
        )
    min_locations = int(_ingestion_setting('min_locations', MIN_TEST_LOCATIONS))
    if metadata.location_count is not None and metadata.location_count < min_locations:
        logger.warning("%s: only %d test location(s) recorded, at least %d recommended",
                       source, metadata.location_count, min_locations)

    spectrum = frame_to_spectrum(frame, aggregate, widen_bounds, source=source)
    sample = MaterialSample(
        method=Method.parse(method),
        concentration=concentration,
        spectrum=spectrum,
        provenance=Provenance.MEASURED,
        measured_at=metadata.measured_at,
        sample_thickness_mm=metadata.sample_thickness_mm,
        notes=metadata.notes,
    )
    logger.info("Ingested %s from %s: %d frequencies", sample.label, source, len(spectrum.grid))
    return sample


def read_measurement_csv(file: Union[str, Path, IO]) -> pd.DataFrame:
    try:
        return pd.read_csv(file, encoding='utf-8')
    except FileNotFoundError as e:
        raise SchemaError(f"Measurement file not found: {e}")
    except pd.errors.EmptyDataError:
        raise SchemaError(f"Measurement file {file} is empty", line=1)
    except (pd.errors.ParserError, UnicodeDecodeError, ValueError) as e:
        raise SchemaError(f"Cannot parse measurement file {file}: {e}")


def ingest_measurement(file: Union[str, Path, IO], method: Method, concentration: float,
                       metadata: MeasurementMetadata, aggregate: Optional[str] = None,
                       widen_bounds: Optional[bool] = None) -> MaterialSample:
    """
    Read an analyzer export and turn it into a measured sample.

    Args:
        file: CSV path or file object (frequency_hz, rel_permittivity_N, conductivity_s_per_m_N)
        method: Phantom family
        concentration: Nominal oil fraction
        metadata: Date, thickness and test locations
        aggregate: ``mean`` or ``median`` of replicates (configured default when None)
        widen_bounds: Keep rows outside the configured band

    Raises:
        SchemaError: Malformed file, fewer than 3 rows, non-increasing frequency
        ValidationError: Negative conductivity or permittivity below 1
        FixtureLimitError: Sample thicker than 3 mm
    """
    source = str(getattr(file, 'name', file))
    frame = read_measurement_csv(file)
    return parse_measurement_frame(frame, method, concentration, metadata,
                                   aggregate=aggregate, widen_bounds=widen_bounds, source=source)


def spectrum_to_frame(spectrum: DielectricSpectrum) -> pd.DataFrame:
    """Spectrum as a single-replicate measurement table."""
    return pd.DataFrame({
        FREQUENCY_COLUMN: spectrum.frequencies,
        f"{PERMITTIVITY_PREFIX}1": spectrum.rel_permittivity,
        f"{CONDUCTIVITY_PREFIX}1": spectrum.conductivity,
    })


def spectra_to_frame(spectra: Dict[str, DielectricSpectrum],
                     label_column: str = TISSUE_COLUMN) -> pd.DataFrame:
    """Several spectra stacked under a leading label column."""
    frames = []
    for label, spectrum in spectra.items():
        frame = spectrum_to_frame(spectrum)
        frame.insert(0, label_column, label)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=[label_column, FREQUENCY_COLUMN,
                                     f"{PERMITTIVITY_PREFIX}1", f"{CONDUCTIVITY_PREFIX}1"])
    return pd.concat(frames, ignore_index=True)


def read_spectrum_table(file: Union[str, Path, IO], label_column: str = TISSUE_COLUMN,
                        widen_bounds: bool = True) -> Dict[str, DielectricSpectrum]:
    """
    Read a CSV written by ``spectrum_to_frame`` or ``spectra_to_frame``.

    Returns:
        Spectra by label; a single-spectrum file uses the empty label
    """
    frame = read_measurement_csv(file)
    source = str(getattr(file, 'name', file))
    if label_column not in frame.columns:
        return {'': frame_to_spectrum(frame, 'mean', widen_bounds, source=source)}

    spectra: Dict[str, DielectricSpectrum] = {}
    for label, group in frame.groupby(label_column, sort=False):
        spectra[str(label)] = frame_to_spectrum(group.drop(columns=[label_column]), 'mean',
                                                widen_bounds, source=f"{source} [{label}]")
    return spectra


def resample_spectrum(spectrum: DielectricSpectrum, grid: FrequencyGrid) -> DielectricSpectrum:
    """
    Resample onto another grid, piecewise-linear in log frequency.

    Resampling onto the spectrum's own grid returns it unchanged.

    Raises:
        RangeError: If the target grid reaches outside the source span
    """
    if grid == spectrum.grid:
        return spectrum
    source = spectrum.grid
    if grid.start < source.start * (1 - _TOL) or grid.stop > source.stop * (1 + _TOL):
        raise RangeError(
            f"Cannot resample spectrum on [{source.start:g}, {source.stop:g}] Hz "
            f"to [{grid.start:g}, {grid.stop:g}] Hz without extrapolating",
            details={'source_hz': (source.start, source.stop), 'target_hz': (grid.start, grid.stop)}
        )
    x_new = grid.log_points
    x_old = source.log_points
    return DielectricSpectrum(
        grid,
        np.interp(x_new, x_old, spectrum.rel_permittivity),
        np.interp(x_new, x_old, spectrum.conductivity),
    )


def interpolate_spectrum(db: MaterialDatabase, method: Method, concentration: float,
                         grid: FrequencyGrid) -> MaterialSample:
    """
    Spectrum at an arbitrary concentration between tabulated ones.

    Stored spectra are resampled to ``grid`` first; between neighbouring
    concentrations log(sigma) and log(eps_r) vary linearly. A tabulated
    concentration returns the stored values exactly.

    Raises:
        RangeError: If the concentration is outside the tabulated range
    """
    method = Method.parse(method)
    concentrations = db.concentrations(method)
    c = float(concentration)
    if not concentrations:
        raise RangeError(f"No {method.value} samples in the database")
    if c < concentrations[0] - _TOL or c > concentrations[-1] + _TOL:
        raise RangeError(
            f"Concentration {c:.3f} outside the tabulated {method.value} range "
            f"[{concentrations[0]:.2f}, {concentrations[-1]:.2f}]",
            details={'concentration': c}
        )
    c = normalize_concentration(c)

    if c in concentrations:
        stored = db.current(method, c)
        return MaterialSample(method, c, resample_spectrum(stored.spectrum, grid), Provenance.INTERPOLATED)

    upper_index = int(np.searchsorted(concentrations, c))
    c_low, c_high = concentrations[upper_index - 1], concentrations[upper_index]
    low = resample_spectrum(db.current(method, c_low).spectrum, grid)
    high = resample_spectrum(db.current(method, c_high).spectrum, grid)
    weight = (c - c_low) / (c_high - c_low)

    def blend(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.exp((1.0 - weight) * np.log(a) + weight * np.log(b))

    spectrum = DielectricSpectrum(grid, blend(low.rel_permittivity, high.rel_permittivity),
                                  blend(low.conductivity, high.conductivity))
    return MaterialSample(method, c, spectrum, Provenance.INTERPOLATED)


def validate_monotone_in_concentration(db: MaterialDatabase, method: Method,
                                       grid: FrequencyGrid) -> MonotonicityReport:
    """
    Report every frequency where a property rises with concentration.

    Adjacent tabulated concentrations are compared; an empty report means both
    properties decrease (or stay level) as oil concentration grows.
    """
    method = Method.parse(method)
    report = MonotonicityReport(method)
    concentrations = db.concentrations(method)
    if len(concentrations) < 2:
        logger.warning("Monotonicity check for %s needs at least 2 concentrations, found %d",
                       method.value, len(concentrations))
        return report

    spectra = [resample_spectrum(db.current(method, c).spectrum, grid) for c in concentrations]
    for (c_low, low), (c_high, high) in zip(zip(concentrations, spectra),
                                            zip(concentrations[1:], spectra[1:])):
        for prop in ('conductivity', 'permittivity'):
            a, b = low.values(prop), high.values(prop)
            for index in np.flatnonzero(b > a):
                report.violations.append(MonotonicityViolation(
                    float(grid.points[index]), prop, c_low, c_high, float(a[index]), float(b[index])
                ))

    if report.violations:
        logger.warning("%s: %d monotonicity violation(s) across concentration pairs %s",
                       method.value, len(report.violations), report.pairs())
    return report


def aging_drift(sample_a: MaterialSample, sample_b: MaterialSample) -> AgingReport:
    """
    Relative change (b - a) / a of both properties on a's grid.

    Sweeps whose end points differ are compared where they overlap: points
    of a's grid outside b's span are left out.

    Raises:
        UsageError: If the samples are different materials
        RangeError: If no point of a's grid lies inside b's span
    """
    if sample_a.key != sample_b.key:
        raise UsageError(f"Cannot compare {sample_a.label} with {sample_b.label}",
                         details={'a': sample_a.label, 'b': sample_b.label})

    a = sample_a.spectrum
    span = sample_b.spectrum.grid
    inside = (a.grid.points >= span.start * (1 - _TOL)) & (a.grid.points <= span.stop * (1 + _TOL))
    if not inside.any():
        raise RangeError(
            f"{sample_a.label} sweeps [{a.grid.start:g}, {a.grid.stop:g}] Hz and "
            f"[{span.start:g}, {span.stop:g}] Hz do not overlap",
            details={'a_hz': (a.grid.start, a.grid.stop), 'b_hz': (span.start, span.stop)}
        )
    if not inside.all():
        logger.info("Aging drift %s: comparing %d of %d frequencies inside [%g, %g] Hz",
                    sample_a.label, int(inside.sum()), len(a.grid), span.start, span.stop)
        grid = FrequencyGrid(a.grid.points[inside], a.grid.fmin_bound, a.grid.fmax_bound)
        a = DielectricSpectrum(grid, a.rel_permittivity[inside], a.conductivity[inside])
    grid = a.grid
    b = resample_spectrum(sample_b.spectrum, grid)
    report = AgingReport(
        method=sample_a.method,
        concentration=sample_a.concentration,
        frequencies=grid.points.copy(),
        conductivity_delta=(b.conductivity - a.conductivity) / a.conductivity,
        permittivity_delta=(b.rel_permittivity - a.rel_permittivity) / a.rel_permittivity,
        measured_at_a=sample_a.measured_at,
        measured_at_b=sample_b.measured_at,
    )
    logger.info("Aging drift %s: max |d sigma| %.2f%%, max |d eps| %.2f%%", sample_a.label,
                100 * report.max_abs_conductivity_delta, 100 * report.max_abs_permittivity_delta)
    return report
