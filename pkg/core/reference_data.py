"""
Synthetic reference material database.

Published phantom measurements only exist as plotted curves, so the bundled
database is constructed backwards from the published matching table: for every
(tissue, property, sample, Fmin, Fmax) row the sample's property follows the
tissue with a relative error of exactly 10% at the band edges, falling
exponentially inside the band and rising outside it. Concentrations without a
design at a frequency are placed between their neighbours, away from every
tissue's +/-12% window, so that each property strictly decreases with
concentration at every frequency.
"""

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.dispersion import (
    DielectricSpectrum,
    FrequencyGrid,
    TissueId,
    TissueLibrary,
    load_tissue_library,
    tissue_spectrum,
)
from core.materials import MaterialDatabase, MaterialSample, Method, Provenance, parse_sample_label
from core.matching import DEFAULT_THRESHOLD, PropertySelector, configured_grid
from utils.logging import get_logger


logger = get_logger(__name__)

CONCENTRATIONS = tuple(round(0.1 * step, 6) for step in range(1, 10))

PROFILE_SLOPE = 20.0        # error growth per decade of frequency
TRANSITION_MARGIN = 0.03    # decades beyond an edge a design still controls the value
EDGE_ZONE = -0.03           # decades inside an edge where the edge design wins overlaps
FILLER_WINDOW = 0.12        # fillers stay this far (relative) from every tissue
VIRTUAL_SPAN = 3.0
MIN_PERMITTIVITY = 1.05


@dataclass(frozen=True)
class TableRow:
    """One (tissue, property, sample, band) entry of the matching table."""
    tissue_id: TissueId
    prop: PropertySelector
    sample: str
    fmin_mhz: float
    fmax_mhz: float

    @property
    def method(self) -> Method:
        return parse_sample_label(self.sample)[0]

    @property
    def concentration(self) -> float:
        return parse_sample_label(self.sample)[1]


_C = PropertySelector.CONDUCTIVITY
_P = PropertySelector.PERMITTIVITY

TABLE_ROWS: Tuple[TableRow, ...] = (
    TableRow(TissueId.CORTICAL_BONE, _C, "OK70", 4.2, 11.0),
    TableRow(TissueId.CORTICAL_BONE, _C, "OO60", 5.9, 100.0),
    TableRow(TissueId.CORTICAL_BONE, _P, "OK60", 1.8, 7.0),
    TableRow(TissueId.CORTICAL_BONE, _P, "OK70", 11.8, 20.0),
    TableRow(TissueId.CORTICAL_BONE, _P, "OK80", 30.0, 100.0),
    TableRow(TissueId.BONE_MARROW, _C, "OO80", 12.8, 100.0),
    TableRow(TissueId.BONE_MARROW, _P, "OO90", 1.8, 25.0),
    TableRow(TissueId.SKIN_DRY, _C, "OO30", 7.0, 9.0),
    TableRow(TissueId.SKIN_DRY, _C, "OO20", 10.0, 14.5),
    TableRow(TissueId.SKIN_DRY, _P, "OO10", 25.0, 33.7),
    TableRow(TissueId.SKIN_DRY, _P, "OO10", 42.0, 58.0),
    TableRow(TissueId.SKIN_DRY, _P, "OO20", 58.4, 90.0),
    TableRow(TissueId.SKIN_DRY, _P, "OO30", 93.0, 100.0),
    TableRow(TissueId.SKIN_WET, _P, "OO10", 11.9, 16.8),
    TableRow(TissueId.SKIN_WET, _P, "OK20", 24.0, 38.0),
    TableRow(TissueId.SKIN_WET, _P, "OO30", 38.0, 71.0),
    TableRow(TissueId.SKIN_WET, _P, "OO40", 73.0, 100.0),
    TableRow(TissueId.FAT, _C, "OK80", 11.0, 100.0),
    TableRow(TissueId.FAT, _P, "OO90", 2.3, 11.5),
    TableRow(TissueId.MUSCLE, _P, "OO30", 24.0, 54.0),
    TableRow(TissueId.MUSCLE, _P, "OK30", 39.0, 100.0),
)


@dataclass(frozen=True)
class _Design:
    """A tissue a sample must follow, over one or more log10 bands (None = open end)."""
    tissue_id: TissueId
    bands: Tuple[Tuple[Optional[float], Optional[float]], ...]

    def distance(self, u: float) -> float:
        """Signed distance in decades to the nearest band; negative inside."""
        best = math.inf
        for low, high in self.bands:
            parts = []
            if low is not None:
                parts.append(low - u)
            if high is not None:
                parts.append(u - high)
            best = min(best, max(parts) if parts else -math.inf)
        return best


def _profile(distance: float) -> float:
    return DEFAULT_THRESHOLD * math.exp(PROFILE_SLOPE * distance)


def _designs(rows: Sequence[TableRow],
             grid: FrequencyGrid) -> Dict[Tuple[Method, PropertySelector, float], List[_Design]]:
    start, stop = math.log10(grid.start), math.log10(grid.stop)
    grouped: Dict[tuple, Dict[TissueId, list]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        low = math.log10(row.fmin_mhz * 1e6)
        high = math.log10(row.fmax_mhz * 1e6)
        band = (None if low <= start + 1e-9 else low, None if high >= stop - 1e-9 else high)
        grouped[(row.method, row.prop, row.concentration)][row.tissue_id].append(band)
    return {key: [_Design(tissue, tuple(bands)) for tissue, bands in by_tissue.items()]
            for key, by_tissue in grouped.items()}


class _PropertyBuilder:
    """Builds one property's values for every concentration of one method."""

    def __init__(self, method: Method, prop: PropertySelector, grid: FrequencyGrid,
                 tissue_values: Dict[TissueId, np.ndarray],
                 designs: Dict[float, List[_Design]]):
        self.method = method
        self.prop = prop
        self.grid = grid
        self.tissue_values = tissue_values
        self.designs = designs
        self.conflicts: set = set()
        self.unordered = 0

    def _within(self, value: float, tissue: float) -> bool:
        return abs(value - tissue) / tissue < DEFAULT_THRESHOLD

    def candidates(self, concentration: float, k: int, u: float) -> List[float]:
        active = [(design.distance(u), design) for design in self.designs.get(concentration, [])]
        active = [(d, design) for d, design in active if d <= TRANSITION_MARGIN]
        if not active:
            return []

        d_ctrl, ctrl = max(active, key=lambda item: item[0])
        target = float(self.tissue_values[ctrl.tissue_id][k])
        error = _profile(d_ctrl)
        profile = [target * (1 + error), target * (1 - error)]
        if len(active) == 1:
            return profile

        inside = [design for d, design in active if d < 0 and design is not ctrl]
        if d_ctrl >= EDGE_ZONE:
            others = [float(self.tissue_values[design.tissue_id][k]) for design in inside]
            scores = [sum(self._within(v, t) for t in others) for v in profile]
            return [v for v, score in zip(profile, scores) if score == max(scores)]

        targets = [float(self.tissue_values[design.tissue_id][k]) for _, design in active]
        low = max(t * (1 - DEFAULT_THRESHOLD) for t in targets)
        high = min(t * (1 + DEFAULT_THRESHOLD) for t in targets)
        if low < high:
            return [math.sqrt(low * high)]

        conflict = (concentration, tuple(sorted(d.tissue_id.value for _, d in active)))
        if conflict not in self.conflicts:
            self.conflicts.add(conflict)
            logger.debug("%s %s at %.0f%%: %s cannot all be matched; following %s",
                         self.method.value, self.prop.value, 100 * concentration,
                         ", ".join(conflict[1]), ctrl.tissue_id.value)
        return profile

    def _choose(self, anchors: Dict[int, List[float]]) -> Dict[int, float]:
        order = sorted(anchors)
        best_values, best_score = None, -math.inf
        for combo in itertools.product(*(anchors[i] for i in order)):
            score = math.inf
            for (i_a, v_a), (i_b, v_b) in zip(zip(order, combo), zip(order[1:], combo[1:])):
                score = min(score, (math.log(v_a) - math.log(v_b)) / (i_b - i_a))
            if best_values is None or score > best_score:
                best_values, best_score = combo, score
        if best_score <= 0:
            self.unordered += 1
        return dict(zip(order, best_values))

    def _segment(self, low: float, high: float, k: int) -> Tuple[float, float]:
        """Sub-interval of (low, high), in log, overlapped by the fewest tissue windows."""
        a, b = math.log(low), math.log(high)
        windows = [(math.log(float(t[k]) * (1 - FILLER_WINDOW)), math.log(float(t[k]) * (1 + FILLER_WINDOW)))
                   for t in self.tissue_values.values()]
        cuts = sorted({a, b, *(x for w in windows for x in w if a < x < b)})
        best, best_key = (a, b), None
        for left, right in zip(cuts, cuts[1:]):
            mid = (left + right) / 2
            covered = sum(1 for w_low, w_high in windows if w_low < mid < w_high)
            key = (covered, -(right - left))
            if best_key is None or key < best_key:
                best, best_key = (left, right), key
        return best

    def _bounds(self, k: int, above: Optional[float], below: Optional[float]) -> Tuple[float, float]:
        """Value range for fillers between the anchor above (lower concentration) and below."""
        targets = [float(t[k]) for t in self.tissue_values.values()]
        if above is None and below is None:
            low, high = min(targets) / VIRTUAL_SPAN, max(targets) * VIRTUAL_SPAN
        elif above is None:
            low, high = below, max(below, max(targets)) * VIRTUAL_SPAN
        elif below is None:
            low, high = min(above, min(targets)) / VIRTUAL_SPAN, above
        else:
            low, high = below, above
        if self.prop is PropertySelector.PERMITTIVITY and below is None:
            low = max(low, MIN_PERMITTIVITY)
            if low >= high:
                low = high / VIRTUAL_SPAN
        return low, high

    def _fill(self, values: np.ndarray, k: int, fillers: List[int],
              above: Optional[float], below: Optional[float]) -> None:
        if not fillers:
            return
        low, high = self._bounds(k, above, below)
        a, b = self._segment(low, high, k)
        n = len(fillers)
        for position, index in enumerate(fillers):
            values[index, k] = math.exp(b - (position + 1) / (n + 1) * (b - a))

    def build(self) -> np.ndarray:
        values = np.empty((len(CONCENTRATIONS), len(self.grid)))
        for k, u in enumerate(self.grid.log_points):
            anchors = {}
            for index, concentration in enumerate(CONCENTRATIONS):
                options = self.candidates(concentration, k, float(u))
                if options:
                    anchors[index] = options
            chosen = self._choose(anchors) if anchors else {}
            for index, value in chosen.items():
                values[index, k] = value

            # Fill each run of free concentrations between its anchored neighbours
            order = sorted(chosen)
            edges = [None] + order + [None]
            for left, right in zip(edges, edges[1:]):
                first = 0 if left is None else left + 1
                last = len(CONCENTRATIONS) if right is None else right
                self._fill(values, k, list(range(first, last)),
                           above=chosen[left] if left is not None else None,
                           below=chosen[right] if right is not None else None)

        if self.unordered:
            logger.warning("%s %s: %d frequencies where designed samples cannot decrease with concentration",
                           self.method.value, self.prop.value, self.unordered)
        return values


def build_reference_database(library: Optional[TissueLibrary] = None,
                             grid: Optional[FrequencyGrid] = None,
                             rows: Sequence[TableRow] = TABLE_ROWS) -> MaterialDatabase:
    """
    Construct the synthetic reference database.

    Args:
        library: Tissue models (bundled library when None)
        grid: Grid the spectra are sampled on (configured grid when None)
        rows: Matching-table rows to design for

    Returns:
        Database with one synthetic sample per method and 10% step
    """
    library = library if library is not None else load_tissue_library()
    grid = grid or configured_grid()

    usable = [row for row in rows if row.tissue_id in library]
    for row in rows:
        if row.tissue_id not in library:
            logger.warning("Tissue %s missing from library; skipping %s design", row.tissue_id.value, row.sample)

    spectra = {tissue: tissue_spectrum(model, grid) for tissue, model in library.items()}
    designs = _designs(usable, grid)

    tables: Dict[Tuple[Method, PropertySelector], np.ndarray] = {}
    for method in Method:
        for prop in PropertySelector:
            by_concentration = {c: designs.get((method, prop, c), []) for c in CONCENTRATIONS}
            builder = _PropertyBuilder(method, prop, grid,
                                       {t: s.values(prop) for t, s in spectra.items()},
                                       by_concentration)
            tables[(method, prop)] = builder.build()

    samples = []
    for method in Method:
        for index, concentration in enumerate(CONCENTRATIONS):
            spectrum_values = {
                prop: tables[(method, prop)][index] for prop in PropertySelector
            }
            spectrum = DielectricSpectrum(grid, spectrum_values[_P], spectrum_values[_C])
            samples.append(MaterialSample(method, concentration, spectrum, Provenance.SYNTHETIC,
                                          notes="synthetic reference"))

    logger.debug("Built reference database: %d samples on %d frequencies", len(samples), len(grid))
    return MaterialDatabase(tuple(samples))
