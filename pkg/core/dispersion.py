"""
Tissue dielectric dispersion models.

Tissues are described by a multi-pole Cole-Cole model

    eps(w) = eps_inf + sum_n d_eps_n / (1 + (j w tau_n)^(1 - alpha_n)) + sigma_i / (j w eps0)

and evaluated into relative permittivity Re(eps) and conductivity
-w eps0 Im(eps). Parameters come from an external tissue library file so the
numbers can be swapped without touching code.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np
import yaml

from utils.error_handler import (
    ErrorContext,
    ModelEvaluationError,
    SchemaError,
    ValidationError,
)
from utils.logging import get_logger
from utils.record_validators import validate_numeric_field, validate_record_fields


logger = get_logger(__name__)

EPS0 = 8.8541878128e-12  # F/m

DEFAULT_FMIN_HZ = 1e5
DEFAULT_FMAX_HZ = 1e8
DEFAULT_GRID_POINTS = 201
MAX_POLES = 4

DEFAULT_TISSUE_LIBRARY = Path(__file__).parent.parent / "data" / "tissues.json"

# Relative slack on grid bounds so log-spaced endpoints never trip the check
_BOUND_RTOL = 1e-9


class TissueId(Enum):
    """The six tissues the toolkit knows how to mimic."""
    SKIN_DRY = "skin_dry"
    SKIN_WET = "skin_wet"
    MUSCLE = "muscle"
    FAT = "fat"
    CORTICAL_BONE = "cortical_bone"
    BONE_MARROW = "bone_marrow"

    @classmethod
    def parse(cls, value: Union[str, "TissueId"]) -> "TissueId":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(
                f"Unknown tissue '{value}'. Known tissues: {[t.value for t in cls]}",
                details={'tissue_id': value}
            )


@dataclass(frozen=True)
class Pole:
    """One Cole-Cole relaxation term."""
    delta_eps: float
    tau: float
    alpha: float

    def __post_init__(self):
        if not np.isfinite(self.delta_eps) or self.delta_eps < 0:
            raise ValidationError(f"delta_eps must be >= 0, got {self.delta_eps}",
                                  details={'parameter': 'delta_eps', 'value': self.delta_eps})
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}",
                                  details={'parameter': 'tau', 'value': self.tau})
        if not np.isfinite(self.alpha) or not 0.0 <= self.alpha < 1.0:
            raise ValidationError(f"alpha must be in [0, 1), got {self.alpha}",
                                  details={'parameter': 'alpha', 'value': self.alpha})


@dataclass(frozen=True)
class ColeColeParams:
    """Parameters of a multi-pole Cole-Cole dispersion."""
    eps_inf: float
    poles: Tuple[Pole, ...]
    sigma_ionic: float

    def __post_init__(self):
        object.__setattr__(self, 'poles', tuple(self.poles))
        if not np.isfinite(self.eps_inf) or self.eps_inf < 1.0:
            raise ValidationError(f"eps_inf must be >= 1, got {self.eps_inf}",
                                  details={'parameter': 'eps_inf', 'value': self.eps_inf})
        if not 1 <= len(self.poles) <= MAX_POLES:
            raise ValidationError(f"expected 1 to {MAX_POLES} poles, got {len(self.poles)}",
                                  details={'parameter': 'poles', 'value': len(self.poles)})
        if not np.isfinite(self.sigma_ionic) or self.sigma_ionic < 0:
            raise ValidationError(f"sigma_ionic must be >= 0, got {self.sigma_ionic}",
                                  details={'parameter': 'sigma_ionic', 'value': self.sigma_ionic})

    @property
    def static_permittivity(self) -> float:
        return self.eps_inf + sum(p.delta_eps for p in self.poles)


@dataclass(frozen=True)
class TissueModel:
    """A tissue and the dispersion parameters describing it."""
    tissue_id: TissueId
    params: ColeColeParams
    source_label: str = ""


TissueLibrary = Dict[TissueId, TissueModel]


class FrequencyGrid:
    """
    Strictly increasing frequency points in Hz.

    Points must lie inside ``[fmin_bound, fmax_bound]``; the defaults are the
    100 kHz to 100 MHz band and can be widened per grid.
    """

    def __init__(self, points: Iterable[float], fmin_bound: float = DEFAULT_FMIN_HZ,
                 fmax_bound: float = DEFAULT_FMAX_HZ):
        values = np.asarray(list(points) if not isinstance(points, np.ndarray) else points, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError("Frequency grid must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ValidationError("Frequency grid points must be finite and positive")
        if values.size > 1 and np.any(np.diff(values) <= 0):
            bad = int(np.argmax(np.diff(values) <= 0)) + 1
            raise ValidationError(
                f"Frequency grid must be strictly increasing (index {bad})",
                details={'index': bad, 'frequency_hz': float(values[bad])}
            )
        if fmin_bound <= 0 or fmax_bound <= fmin_bound:
            raise ValidationError(
                f"Invalid grid bounds [{fmin_bound}, {fmax_bound}] Hz",
                details={'fmin_hz': fmin_bound, 'fmax_hz': fmax_bound}
            )
        low = fmin_bound * (1 - _BOUND_RTOL)
        high = fmax_bound * (1 + _BOUND_RTOL)
        if values[0] < low or values[-1] > high:
            raise ValidationError(
                f"Frequency grid [{values[0]:g}, {values[-1]:g}] Hz exceeds bounds "
                f"[{fmin_bound:g}, {fmax_bound:g}] Hz",
                details={'fmin_hz': fmin_bound, 'fmax_hz': fmax_bound}
            )

        values.setflags(write=False)
        self.points = values
        self.fmin_bound = float(fmin_bound)
        self.fmax_bound = float(fmax_bound)

    @classmethod
    def log_spaced(cls, fmin_hz: float = DEFAULT_FMIN_HZ, fmax_hz: float = DEFAULT_FMAX_HZ,
                   points: int = DEFAULT_GRID_POINTS) -> "FrequencyGrid":
        """Log-spaced grid whose bounds are its own end points."""
        if points < 1:
            raise ValidationError(f"Grid needs at least one point, got {points}")
        if fmin_hz <= 0 or fmax_hz < fmin_hz or (points > 1 and fmax_hz == fmin_hz):
            raise ValidationError(
                f"Invalid grid bounds [{fmin_hz}, {fmax_hz}] Hz",
                details={'fmin_hz': fmin_hz, 'fmax_hz': fmax_hz}
            )
        values = np.logspace(np.log10(fmin_hz), np.log10(fmax_hz), int(points))
        # Pin the ends so the bounds are met exactly
        values[0] = fmin_hz
        values[-1] = fmax_hz
        return cls(values, fmin_bound=min(fmin_hz, DEFAULT_FMIN_HZ), fmax_bound=max(fmax_hz, DEFAULT_FMAX_HZ))

    def __len__(self) -> int:
        return int(self.points.size)

    def __iter__(self):
        return iter(self.points.tolist())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrequencyGrid):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())

    def __repr__(self) -> str:
        return f"FrequencyGrid({len(self)} points, {self.start:g}..{self.stop:g} Hz)"

    @property
    def start(self) -> float:
        return float(self.points[0])

    @property
    def stop(self) -> float:
        return float(self.points[-1])

    @property
    def log_points(self) -> np.ndarray:
        return np.log10(self.points)

    def contains(self, fmin_hz: float, fmax_hz: float) -> bool:
        """Whether ``[fmin_hz, fmax_hz]`` lies inside the grid span."""
        return (fmin_hz >= self.start * (1 - _BOUND_RTOL)
                and fmax_hz <= self.stop * (1 + _BOUND_RTOL)
                and fmin_hz < fmax_hz)


def default_grid() -> FrequencyGrid:
    """201 log-spaced points from 100 kHz to 100 MHz."""
    return FrequencyGrid.log_spaced(DEFAULT_FMIN_HZ, DEFAULT_FMAX_HZ, DEFAULT_GRID_POINTS)


@dataclass(frozen=True, eq=False)
class DielectricSpectrum:
    """Relative permittivity and conductivity sampled on a frequency grid."""
    grid: FrequencyGrid
    rel_permittivity: np.ndarray
    conductivity: np.ndarray

    def __post_init__(self):
        eps = np.array(self.rel_permittivity, dtype=float)
        sigma = np.array(self.conductivity, dtype=float)
        n = len(self.grid)
        if eps.shape != (n,) or sigma.shape != (n,):
            raise ValidationError(
                f"Spectrum arrays must match the grid length {n}, "
                f"got {eps.shape} and {sigma.shape}"
            )
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            bad = int(np.argmax(~np.isfinite(sigma) | (sigma <= 0)))
            raise ValidationError(
                f"Conductivity must be positive (index {bad}: {sigma[bad]})",
                details={'index': bad, 'conductivity': float(sigma[bad])}
            )
        if not np.all(np.isfinite(eps)) or np.any(eps < 1.0):
            bad = int(np.argmax(~np.isfinite(eps) | (eps < 1.0)))
            raise ValidationError(
                f"Relative permittivity must be >= 1 (index {bad}: {eps[bad]})",
                details={'index': bad, 'rel_permittivity': float(eps[bad])}
            )
        eps.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, 'rel_permittivity', eps)
        object.__setattr__(self, 'conductivity', sigma)

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.points

    def values(self, prop) -> np.ndarray:
        """Array for a property selector (or its name)."""
        name = getattr(prop, 'value', prop)
        if name == 'conductivity':
            return self.conductivity
        if name == 'permittivity':
            return self.rel_permittivity
        raise ValidationError(f"Unknown property '{prop}'")

    def same_values(self, other: "DielectricSpectrum") -> bool:
        return (self.grid == other.grid
                and np.array_equal(self.rel_permittivity, other.rel_permittivity)
                and np.array_equal(self.conductivity, other.conductivity))


def evaluate_point(params: ColeColeParams, f: float) -> Tuple[float, float]:
    """
    Evaluate a dispersion model at one frequency.

    Args:
        params: Cole-Cole parameters
        f: Frequency in Hz

    Returns:
        (relative permittivity, conductivity in S/m)

    Raises:
        ValidationError: If the frequency is not positive
        ModelEvaluationError: If a pole produces a non-finite value
    """
    if not np.isfinite(f) or f <= 0:
        raise ValidationError(f"Frequency must be positive, got {f}", details={'frequency_hz': f})

    omega = 2.0 * np.pi * f
    eps = complex(params.eps_inf)
    for index, pole in enumerate(params.poles):
        jwt = 1j * omega * pole.tau
        # Principal branch; alpha == 0 stays an exact Debye term
        denominator = 1.0 + (jwt if pole.alpha == 0 else np.power(jwt, 1.0 - pole.alpha))
        term = pole.delta_eps / denominator
        if not np.isfinite(term):
            raise ModelEvaluationError(
                f"Pole {index + 1} (delta_eps={pole.delta_eps}, tau={pole.tau}, alpha={pole.alpha}) "
                f"is not finite at {f:g} Hz",
                details={'pole': index + 1, 'frequency_hz': f}
            )
        eps += term

    rel_permittivity = float(eps.real)
    # Ionic term is purely imaginary, so it only adds sigma_ionic here
    conductivity = params.sigma_ionic + float(-omega * EPS0 * eps.imag)
    if not (np.isfinite(rel_permittivity) and np.isfinite(conductivity)):
        raise ModelEvaluationError(f"Dispersion model is not finite at {f:g} Hz",
                                   details={'frequency_hz': f})
    return rel_permittivity, conductivity


def tissue_spectrum(model: TissueModel, grid: FrequencyGrid) -> DielectricSpectrum:
    """
    Evaluate a tissue model on every grid point.

    Raises:
        ModelEvaluationError: With the grid index of the failing point
    """
    eps = np.empty(len(grid))
    sigma = np.empty(len(grid))
    for index, f in enumerate(grid.points):
        try:
            eps[index], sigma[index] = evaluate_point(model.params, float(f))
        except ModelEvaluationError as e:
            raise ModelEvaluationError(
                f"{model.tissue_id.value}: grid index {index}: {e}",
                details={**e.details, 'tissue_id': model.tissue_id.value, 'grid_index': index}
            )
    return DielectricSpectrum(grid, eps, sigma)


class _LineLoader(yaml.SafeLoader):
    """Safe loader that remembers the source line of every mapping."""

    def construct_mapping(self, node, deep=False):
        mapping = super().construct_mapping(node, deep=deep)
        mapping['__line__'] = node.start_mark.line + 1
        return mapping


_TISSUE_FIELDS = ['tissue_id', 'eps_inf', 'poles', 'sigma_ionic']
_TISSUE_OPTIONAL = ['source_label']
_POLE_FIELDS = ['delta_eps', 'tau_seconds', 'alpha']


def _pop_line(record) -> Optional[int]:
    return record.pop('__line__', None) if isinstance(record, dict) else None


def _parse_tissue(record, position: int) -> TissueModel:
    line = _pop_line(record)
    label = f"tissue record {position + 1}"
    validate_record_fields(record, _TISSUE_FIELDS, _TISSUE_OPTIONAL, label, line)

    try:
        tissue_id = TissueId.parse(record['tissue_id'])
    except ValidationError as e:
        raise SchemaError(str(e), line=line, field='tissue_id')
    label = f"tissue '{tissue_id.value}'"

    raw_poles = record['poles']
    if not isinstance(raw_poles, list):
        raise SchemaError(f"{label}: poles must be a list", line=line, field='poles')

    poles = []
    for pole_index, raw_pole in enumerate(raw_poles):
        pole_line = _pop_line(raw_pole) or line
        pole_label = f"{label} pole {pole_index + 1}"
        validate_record_fields(raw_pole, _POLE_FIELDS, (), pole_label, pole_line)
        values = {name: validate_numeric_field(raw_pole[name], name, pole_label, line=pole_line)
                  for name in _POLE_FIELDS}
        try:
            poles.append(Pole(values['delta_eps'], values['tau_seconds'], values['alpha']))
        except ValidationError as e:
            raise ValidationError(
                f"{pole_label}: {e}",
                details={**e.details, 'tissue_id': tissue_id.value, 'pole': pole_index + 1, 'line': pole_line}
            )

    eps_inf = validate_numeric_field(record['eps_inf'], 'eps_inf', label, line=line)
    sigma_ionic = validate_numeric_field(record['sigma_ionic'], 'sigma_ionic', label, line=line)
    try:
        params = ColeColeParams(eps_inf, tuple(poles), sigma_ionic)
    except ValidationError as e:
        raise ValidationError(f"{label}: {e}", details={**e.details, 'tissue_id': tissue_id.value, 'line': line})

    return TissueModel(tissue_id, params, str(record.get('source_label') or ''))


def load_tissue_library(file: Union[str, Path, None] = None) -> TissueLibrary:
    """
    Load and validate a tissue-parameter file.

    The file is JSON (YAML is accepted too) with a ``tissues`` list; every
    record carries tissue_id, eps_inf, poles (delta_eps, tau_seconds, alpha),
    sigma_ionic and an optional source_label. Unknown fields are rejected.

    Args:
        file: Path to the library; the bundled library when None

    Returns:
        Mapping of tissue id to model, in tissue enum order

    Raises:
        SchemaError: Parse or schema problems, with line and field
        ValidationError: Invariant violations, naming tissue and parameter
    """
    path = Path(file) if file is not None else DEFAULT_TISSUE_LIBRARY

    with ErrorContext(f"load tissue library {path}", __name__):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                document = yaml.load(f, Loader=_LineLoader)
        except OSError as e:
            raise SchemaError(f"Cannot read tissue library {path}: {e}")
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            raise SchemaError(f"Cannot parse tissue library {path}: {getattr(e, 'problem', e)}",
                              line=mark.line + 1 if mark is not None else None)

        line = _pop_line(document)
        validate_record_fields(document, ['tissues'], ['schema_version'], "tissue library", line)
        if not isinstance(document['tissues'], list):
            raise SchemaError("tissue library: 'tissues' must be a list", line=line, field='tissues')

        models: Dict[TissueId, TissueModel] = {}
        for position, record in enumerate(document['tissues']):
            model = _parse_tissue(record, position)
            if model.tissue_id in models:
                raise ValidationError(
                    f"Duplicate tissue '{model.tissue_id.value}' in {path}",
                    details={'tissue_id': model.tissue_id.value}
                )
            models[model.tissue_id] = model

    logger.debug("Loaded %d tissue models from %s", len(models), path)
    return {tissue: models[tissue] for tissue in TissueId if tissue in models}
