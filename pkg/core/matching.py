"""
Matching phantom samples to tissues.

The matching error of a sample against a tissue is |x_s - x_t| / x_t for the
selected property x (conductivity or relative permittivity). A match band is a
maximal frequency interval where that error stays strictly below a threshold,
10% by default.
"""

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd

from core.dispersion import (
    DielectricSpectrum,
    FrequencyGrid,
    TissueId,
    TissueLibrary,
    TissueModel,
    tissue_spectrum,
)
from core.materials import (
    MaterialDatabase,
    MaterialSample,
    Method,
    interpolate_spectrum,
    resample_spectrum,
    sample_label,
)
from utils.config_manager import get_config_manager
from utils.error_handler import RangeError, UndefinedErrorFailure, UsageError
from utils.logging import get_logger


logger = get_logger(__name__)

DEFAULT_THRESHOLD = 0.10
INV_PHI = (math.sqrt(5) - 1) / 2  # 1 / phi
INV_PHI_SQUARE = (3 - math.sqrt(5)) / 2  # 1 / phi^2

_METHOD_ORDER = {method: index for index, method in enumerate(Method)}


class PropertySelector(Enum):
    CONDUCTIVITY = "conductivity"
    PERMITTIVITY = "permittivity"

    @classmethod
    def parse(cls, value: Union[str, "PropertySelector"]) -> "PropertySelector":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        aliases = {'sigma': cls.CONDUCTIVITY, 'cond': cls.CONDUCTIVITY,
                   'eps': cls.PERMITTIVITY, 'perm': cls.PERMITTIVITY}
        if text in aliases:
            return aliases[text]
        try:
            return cls(text)
        except ValueError:
            raise UsageError(f"Unknown property '{value}' (use conductivity or permittivity)")


class Band(NamedTuple):
    """A sub-threshold interval of an error curve."""
    fmin: float
    fmax: float
    worst_error: float


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    grid: FrequencyGrid
    errors: np.ndarray

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.points

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors))


@dataclass(frozen=True)
class MatchBand:
    """Frequency band over which one sample mimics one tissue property."""
    tissue_id: TissueId
    prop: PropertySelector
    method: Method
    concentration: float
    fmin: float
    fmax: float
    worst_error: float

    @property
    def sample(self) -> str:
        return sample_label(self.method, self.concentration)

    @property
    def fmin_mhz(self) -> float:
        return self.fmin / 1e6

    @property
    def fmax_mhz(self) -> float:
        return self.fmax / 1e6

    def overlaps(self, fmin: float, fmax: float) -> bool:
        return self.fmin < fmax and self.fmax > fmin

    def coverage(self, fmin: float, fmax: float) -> float:
        """Share of ``[fmin, fmax]`` (in log frequency) this band covers."""
        low = max(math.log10(self.fmin), math.log10(fmin))
        high = min(math.log10(self.fmax), math.log10(fmax))
        return max(0.0, high - low) / (math.log10(fmax) - math.log10(fmin))


@dataclass
class MatchReport:
    """Match bands grouped by tissue and property, each group sorted by fmin."""
    threshold: float
    groups: Dict[Tuple[TissueId, PropertySelector], List[MatchBand]] = field(default_factory=dict)

    def group(self, tissue: Union[TissueId, str], prop: Union[PropertySelector, str]) -> List[MatchBand]:
        return self.groups.get((TissueId.parse(tissue), PropertySelector.parse(prop)), [])

    def bands(self) -> List[MatchBand]:
        return [band for bands in self.groups.values() for band in bands]

    def empty_groups(self) -> List[Tuple[TissueId, PropertySelector]]:
        return [key for key, bands in self.groups.items() if not bands]


@dataclass(frozen=True)
class ConcentrationSolution:
    """Minimax-optimal concentration for one tissue property over a band."""
    method: Method
    tissue_id: TissueId
    prop: PropertySelector
    fmin: float
    fmax: float
    concentration: float
    worst_error: float
    threshold: float

    @property
    def feasible(self) -> bool:
        return self.worst_error < self.threshold


def configured_grid() -> FrequencyGrid:
    """Evaluation grid from the ``grid`` settings."""
    config = get_config_manager()
    return FrequencyGrid.log_spaced(float(config.get('grid.fmin_hz', 1e5)),
                                    float(config.get('grid.fmax_hz', 1e8)),
                                    int(config.get('grid.points', 201)))


def configured_threshold() -> float:
    return float(get_config_manager().get('matching.threshold', DEFAULT_THRESHOLD))


def _check_band(grid: FrequencyGrid, band: Tuple[float, float]) -> Tuple[float, float]:
    fmin, fmax = float(band[0]), float(band[1])
    if not fmin < fmax:
        raise UsageError(f"Band lower edge {fmin:g} Hz must be below upper edge {fmax:g} Hz")
    if not grid.contains(fmin, fmax):
        raise RangeError(
            f"Band [{fmin:g}, {fmax:g}] Hz outside the evaluation grid [{grid.start:g}, {grid.stop:g}] Hz",
            details={'fmin_hz': fmin, 'fmax_hz': fmax}
        )
    return fmin, fmax


def relative_error_curve(sample_spec: DielectricSpectrum, tissue_spec: DielectricSpectrum,
                         prop: PropertySelector) -> ErrorCurve:
    """
    Per-frequency relative error of a sample against a tissue.

    Raises:
        UsageError: If the spectra are on different grids
        UndefinedErrorFailure: If the tissue value is zero somewhere
    """
    if sample_spec.grid != tissue_spec.grid:
        raise UsageError("Sample and tissue spectra must share a grid; resample first")
    prop = PropertySelector.parse(prop)
    sample = sample_spec.values(prop)
    tissue = tissue_spec.values(prop)
    if np.any(tissue == 0):
        index = int(np.argmax(tissue == 0))
        raise UndefinedErrorFailure(
            f"Tissue {prop.value} is zero at {tissue_spec.grid.points[index]:g} Hz",
            details={'grid_index': index}
        )
    return ErrorCurve(tissue_spec.grid, np.abs(sample - tissue) / tissue)


def _edge(f_a: float, f_b: float, e_a: float, e_b: float, threshold: float) -> float:
    # Linear in log f between two bracketing points
    t = (threshold - e_a) / (e_b - e_a)
    if t <= 0.0:
        return f_a
    if t >= 1.0:
        return f_b
    return f_a * (f_b / f_a) ** t


def find_bands(curve: ErrorCurve, threshold: float = DEFAULT_THRESHOLD) -> List[Band]:
    """
    Maximal runs of grid points with error strictly below ``threshold``.

    Edges are refined between the bracketing grid points by linear
    interpolation of the error in log frequency; a run touching a grid end
    keeps the grid end as its edge. ``worst_error`` is the largest error at
    the run's grid points.
    """
    f = curve.frequencies
    e = curve.errors
    if f.size < 2:
        raise UsageError("Error curve needs at least 2 grid points")

    inside = e < threshold
    bands: List[Band] = []
    n = f.size
    i = 0
    while i < n:
        if not inside[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and inside[j + 1]:
            j += 1

        if i == 0:
            fmin = float(f[0])
        else:
            fmin = min(_edge(f[i - 1], f[i], e[i - 1], e[i], threshold), float(np.nextafter(f[i], 0.0)))
        if j == n - 1:
            fmax = float(f[-1])
        else:
            fmax = max(_edge(f[j], f[j + 1], e[j], e[j + 1], threshold), float(np.nextafter(f[j], np.inf)))

        bands.append(Band(float(fmin), float(fmax), float(np.max(e[i:j + 1]))))
        i = j + 1
    return bands


def _sample_curves(db: MaterialDatabase, tissue_spec: DielectricSpectrum,
                   prop: PropertySelector) -> Iterable[Tuple[MaterialSample, ErrorCurve]]:
    grid = tissue_spec.grid
    for sample in db.current_samples():
        try:
            spectrum = resample_spectrum(sample.spectrum, grid)
        except RangeError as e:
            logger.warning("Skipping %s: %s", sample.label, e)
            continue
        yield sample, relative_error_curve(spectrum, tissue_spec, prop)


def _ranking_key(fmin: float, fmax: float) -> Callable[[MatchBand], tuple]:
    def key(band: MatchBand) -> tuple:
        return (-band.coverage(fmin, fmax), band.worst_error, band.concentration, _METHOD_ORDER[band.method])
    return key


def best_matches(db: MaterialDatabase, tissue: TissueModel, prop: PropertySelector,
                 band: Tuple[float, float], top_k: int = 5, threshold: Optional[float] = None,
                 grid: Optional[FrequencyGrid] = None) -> List[MatchBand]:
    """
    Rank samples by how well they mimic a tissue over a requested band.

    Each sample contributes its qualifying band that covers most of the
    request. Ranking: coverage (log-frequency share of the request) desc, then
    worst error, then concentration, then oil-only before oil-kerosene.

    Args:
        db: Material database; the current sample per (method, concentration) is used
        tissue: Tissue model
        prop: Property to match
        band: Requested (fmin, fmax) in Hz
        top_k: Maximum number of results
        threshold: Matching threshold (configured default when None)
        grid: Evaluation grid (configured grid when None)

    Raises:
        UsageError: Empty database
        RangeError: Band outside the evaluation grid
    """
    if len(db) == 0:
        raise UsageError("Material database is empty")
    prop = PropertySelector.parse(prop)
    grid = grid or configured_grid()
    threshold = configured_threshold() if threshold is None else float(threshold)
    fmin, fmax = _check_band(grid, band)

    tissue_spec = tissue_spectrum(tissue, grid)
    rank = _ranking_key(fmin, fmax)
    candidates: List[MatchBand] = []
    for sample, curve in _sample_curves(db, tissue_spec, prop):
        hits = [MatchBand(tissue.tissue_id, prop, sample.method, sample.concentration, b.fmin, b.fmax, b.worst_error)
                for b in find_bands(curve, threshold)
                if b.fmin < fmax and b.fmax > fmin]
        if hits:
            candidates.append(min(hits, key=rank))

    candidates.sort(key=rank)
    logger.debug("best_matches %s/%s [%g, %g] Hz: %d candidate(s)",
                 tissue.tissue_id.value, prop.value, fmin, fmax, len(candidates))
    return candidates[:max(0, int(top_k))]


def match_table(db: MaterialDatabase, tissue_library: TissueLibrary,
                threshold: Optional[float] = None, grid: Optional[FrequencyGrid] = None) -> MatchReport:
    """
    Every qualifying band of every sample for every tissue and property.

    Empty groups are kept so the report always has one row per
    tissue x property.
    """
    if len(db) == 0:
        raise UsageError("Material database is empty")
    if not tissue_library:
        raise UsageError("Tissue library is empty")
    grid = grid or configured_grid()
    threshold = configured_threshold() if threshold is None else float(threshold)

    report = MatchReport(threshold)
    for tissue_id, model in tissue_library.items():
        tissue_spec = tissue_spectrum(model, grid)
        for prop in PropertySelector:
            bands = [
                MatchBand(tissue_id, prop, sample.method, sample.concentration, b.fmin, b.fmax, b.worst_error)
                for sample, curve in _sample_curves(db, tissue_spec, prop)
                for b in find_bands(curve, threshold)
            ]
            bands.sort(key=lambda b: (b.fmin, b.fmax, b.concentration, _METHOD_ORDER[b.method]))
            report.groups[(tissue_id, prop)] = bands

    logger.info("Match table: %d band(s), %d empty group(s)", len(report.bands()), len(report.empty_groups()))
    return report


def golden_section_search(f: Callable[[float], float], a: float, b: float,
                          tol: float = 1e-4) -> Tuple[float, float]:
    """
    Minimize a unimodal function on [a, b].

    Returns:
        (x, f(x)) with x the midpoint of the final bracket of width <= tol
    """
    a, b = min(a, b), max(a, b)
    h = b - a
    if h <= tol:
        x = (a + b) / 2
        return x, f(x)

    n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))
    c = a + INV_PHI_SQUARE * h
    d = a + INV_PHI * h
    yc = f(c)
    yd = f(d)

    for _ in range(n - 1):
        if yc < yd:
            b, d, yd = d, c, yc
            h = INV_PHI * h
            c = a + INV_PHI_SQUARE * h
            yc = f(c)
        else:
            a, c, yc = c, d, yd
            h = INV_PHI * h
            d = a + INV_PHI * h
            yd = f(d)

    low, high = (a, d) if yc < yd else (c, b)
    x = (low + high) / 2
    return x, f(x)


def solve_concentration(db: MaterialDatabase, method: Method, tissue: TissueModel,
                        prop: PropertySelector, band: Tuple[float, float],
                        threshold: Optional[float] = None, grid: Optional[FrequencyGrid] = None,
                        tolerance: Optional[float] = None,
                        dense_points: Optional[int] = None) -> ConcentrationSolution:
    """
    Concentration minimizing the worst relative error over a band.

    Tabulated concentrations are scanned first; golden-section search then
    refines inside the bracket around the best one, on spectra interpolated
    log-linearly in concentration. The result is never worse than the best
    tabulated concentration. Infeasible results are returned and logged.

    Raises:
        UsageError: Fewer than 2 tabulated concentrations for the method
        RangeError: Band outside the evaluation grid
    """
    method = Method.parse(method)
    prop = PropertySelector.parse(prop)
    grid = grid or configured_grid()
    config = get_config_manager()
    threshold = configured_threshold() if threshold is None else float(threshold)
    tolerance = float(config.get('matching.solver_tolerance', 1e-4)) if tolerance is None else tolerance
    dense_points = int(config.get('matching.dense_points', 121)) if dense_points is None else dense_points
    fmin, fmax = _check_band(grid, band)

    concentrations = db.concentrations(method)
    if len(concentrations) < 2:
        raise UsageError(f"Need at least 2 {method.value} concentrations, found {len(concentrations)}")

    dense = FrequencyGrid.log_spaced(fmin, fmax, dense_points)
    tissue_values = tissue_spectrum(tissue, dense).values(prop)

    def worst_error(c: float) -> float:
        spectrum = interpolate_spectrum(db, method, c, dense).spectrum
        return float(np.max(np.abs(spectrum.values(prop) - tissue_values) / tissue_values))

    knot_errors = [worst_error(c) for c in concentrations]
    best = min(range(len(concentrations)), key=lambda k: (knot_errors[k], concentrations[k]))
    low = concentrations[max(best - 1, 0)]
    high = concentrations[min(best + 1, len(concentrations) - 1)]

    concentration, error = concentrations[best], knot_errors[best]
    if error > 0:
        x, fx = golden_section_search(worst_error, low, high, tolerance)
        if fx < error:
            concentration, error = round(x, 6), fx

    solution = ConcentrationSolution(method, tissue.tissue_id, prop, fmin, fmax, concentration, error, threshold)
    if not solution.feasible:
        logger.warning("No %s concentration keeps %s %s error below %.0f%% over [%g, %g] Hz; "
                       "best effort %.1f%% at %.3f", method.value, tissue.tissue_id.value, prop.value,
                       100 * threshold, fmin, fmax, 100 * error, concentration)
    return solution


def _sig3(value: float) -> float:
    return float(f"{value:.3g}")


def bands_to_rows(bands: Iterable[MatchBand]) -> List[Dict[str, object]]:
    """Flat export rows; frequencies in MHz to 3 significant digits."""
    return [{
        'tissue': band.tissue_id.value,
        'property': band.prop.value,
        'method': band.method.value,
        'concentration': band.concentration,
        'fmin_mhz': _sig3(band.fmin_mhz),
        'fmax_mhz': _sig3(band.fmax_mhz),
        'worst_error': round(band.worst_error, 4),
    } for band in bands]


CSV_COLUMNS = ['tissue', 'property', 'method', 'concentration', 'fmin_mhz', 'fmax_mhz', 'worst_error']


def report_to_csv(report: MatchReport) -> str:
    frame = pd.DataFrame(bands_to_rows(report.bands()), columns=CSV_COLUMNS)
    return frame.to_csv(index=False, lineterminator='\n')


def report_to_dict(report: MatchReport) -> Dict[str, object]:
    tissues: Dict[str, Dict[str, list]] = {}
    for (tissue_id, prop), bands in report.groups.items():
        rows = bands_to_rows(bands)
        for row in rows:
            del row['tissue'], row['property']
            row['sample'] = sample_label(Method(row['method']), row['concentration'])
        tissues.setdefault(tissue_id.value, {})[prop.value] = rows
    return {'threshold': report.threshold, 'tissues': tissues}


def report_to_json(report: MatchReport) -> str:
    """Nested tissue -> property -> bands."""
    return json.dumps(report_to_dict(report), indent=2)
