"""
Multi-layer phantom stacks.

A stack is a set of concentric cylinders listed innermost first. Layers get
materials either from a preset (the two-layer oil-kerosene composite) or by
matching each layer's tissue against the material database; the fabrication
plan then pours them innermost first with a cure stage after each pour.
"""

import json
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.dispersion import FrequencyGrid, TissueId, TissueLibrary, tissue_spectrum
from core.matching import (
    MatchBand,
    PropertySelector,
    best_matches,
    configured_grid,
    configured_threshold,
    relative_error_curve,
)
from core.materials import MaterialDatabase, Method, normalize_concentration, resample_spectrum, sample_label
from core.recipes import Recipe, emit_protocol, interpolate_recipe
from utils.config_manager import get_config_manager
from utils.error_handler import CureScheduleError, RangeError, UsageError, ValidationError, validate_positive
from utils.logging import get_logger


logger = get_logger(__name__)

MIN_STAGE_CURE_HOURS = 48.0
ARM_ORDER = ('bone_marrow', 'cortical_bone', 'muscle', 'fat', 'skin')
COMPOSITE_MATERIALS = ((Method.OIL_KEROSENE, 0.20), (Method.OIL_KEROSENE, 0.60))
INTERFACE_CAVEAT = ("Properties near each interface drift after pouring, conductivity more than "
                    "permittivity; take measurements from layer cores, away from interfaces.")
GEOMETRY_CAVEAT = "Layer dimensions are configurable defaults, not measured anatomy."


@dataclass(frozen=True)
class Layer:
    """One concentric cylinder; ``role`` is a tissue id or a free label."""
    role: str
    outer_radius_mm: float
    material: Optional[Tuple[Method, float]] = None
    match: Optional[MatchBand] = None
    infeasible: bool = False
    worst_error: Optional[float] = None

    def __post_init__(self):
        validate_positive(self.outer_radius_mm, f"{self.role}.outer_radius_mm")
        if self.material is not None:
            method, concentration = self.material
            object.__setattr__(self, 'material', (Method.parse(method), normalize_concentration(concentration)))

    @property
    def material_label(self) -> Optional[str]:
        return sample_label(*self.material) if self.material else None


@dataclass(frozen=True)
class LayerStack:
    """Layers innermost to outermost, with strictly increasing radii."""
    layers: Tuple[Layer, ...]
    length_mm: float
    band_of_interest: Optional[Tuple[float, float]] = None
    name: str = "custom"
    geometry_source: str = "user"

    def __post_init__(self):
        object.__setattr__(self, 'layers', tuple(self.layers))
        if not self.layers:
            raise ValidationError("A stack needs at least one layer")
        validate_positive(self.length_mm, 'length_mm')
        radii = [layer.outer_radius_mm for layer in self.layers]
        for inner, outer in zip(self.layers, self.layers[1:]):
            if outer.outer_radius_mm <= inner.outer_radius_mm:
                raise ValidationError(
                    f"Radii must increase outward: '{outer.role}' ({outer.outer_radius_mm} mm) "
                    f"is not outside '{inner.role}' ({inner.outer_radius_mm} mm)",
                    details={'radii_mm': radii}
                )

    def with_layer(self, index: int, layer: Layer) -> "LayerStack":
        layers = list(self.layers)
        layers[index] = layer
        return replace(self, layers=tuple(layers))

    @property
    def roles(self) -> List[str]:
        return [layer.role for layer in self.layers]


@dataclass(frozen=True)
class PlanStage:
    index: int
    role: str
    recipe: Recipe
    cure_hours: float

    @property
    def label(self) -> str:
        return self.recipe.label


@dataclass(frozen=True)
class FabricationPlan:
    """Pour stages innermost first, then a maturation wait before measuring."""
    stack: LayerStack
    stages: Tuple[PlanStage, ...]
    maturation_hours: float
    caveats: Tuple[str, ...] = field(default=(INTERFACE_CAVEAT, GEOMETRY_CAVEAT))

    @property
    def cure_hours(self) -> float:
        return sum(stage.cure_hours for stage in self.stages)

    @property
    def total_hours(self) -> float:
        return self.cure_hours + self.maturation_hours


def _stack_config(key: str, default: Any) -> Any:
    return get_config_manager().get(f"stack.{key}", default)


def preset_composite(inner_radius_mm: Optional[float] = None, outer_radius_mm: Optional[float] = None,
                     length_mm: Optional[float] = None) -> LayerStack:
    """Two-layer oil-kerosene composite: 20% core inside a 60% shell."""
    inner = float(inner_radius_mm if inner_radius_mm is not None else _stack_config('composite.inner_radius_mm', 20.0))
    outer = float(outer_radius_mm if outer_radius_mm is not None else _stack_config('composite.outer_radius_mm', 40.0))
    length = float(length_mm if length_mm is not None else _stack_config('composite.length_mm', 100.0))
    (inner_method, inner_c), (outer_method, outer_c) = COMPOSITE_MATERIALS
    layers = (
        Layer("composite_inner", inner, (inner_method, inner_c)),
        Layer("composite_outer", outer, (outer_method, outer_c)),
    )
    return LayerStack(layers, length, name="composite", geometry_source="config: stack.composite")


def preset_arm(wet_skin: bool = False, radii_mm: Optional[Dict[str, float]] = None,
               length_mm: Optional[float] = None) -> LayerStack:
    """Five-layer arm: bone marrow, cortical bone, muscle, fat, skin (dry unless ``wet_skin``)."""
    radii = dict(_stack_config('arm.radii_mm', {}) or {})
    radii.update(radii_mm or {})
    missing = [role for role in ARM_ORDER if role not in radii]
    if missing:
        raise ValidationError(f"Arm preset radii missing for {missing}")
    length = float(length_mm if length_mm is not None else _stack_config('arm.length_mm', 300.0))
    skin = TissueId.SKIN_WET.value if wet_skin else TissueId.SKIN_DRY.value
    layers = tuple(Layer(skin if role == 'skin' else role, float(radii[role])) for role in ARM_ORDER)
    return LayerStack(layers, length, name="arm", geometry_source="config: stack.arm")


def _best_effort(db: MaterialDatabase, tissue_spec, prop: PropertySelector,
                 band: Tuple[float, float]) -> Optional[Tuple[Method, float, float]]:
    """Sample with the smallest worst error over the band, whatever its size."""
    grid = tissue_spec.grid
    mask = (grid.points >= band[0] * (1 - 1e-9)) & (grid.points <= band[1] * (1 + 1e-9))
    best = None
    for sample in db.current_samples():
        try:
            spectrum = resample_spectrum(sample.spectrum, grid)
        except RangeError:
            continue
        errors = relative_error_curve(spectrum, tissue_spec, prop).errors[mask]
        if errors.size == 0:
            continue
        key = (float(np.max(errors)), sample.concentration, list(Method).index(sample.method))
        if best is None or key < best[0]:
            best = (key, sample.method, sample.concentration)
    return None if best is None else (best[1], best[2], best[0][0])


def assign_materials(stack: LayerStack, db: MaterialDatabase, tissue_library: TissueLibrary,
                     property_priority: PropertySelector, band: Tuple[float, float],
                     threshold: Optional[float] = None, grid: Optional[FrequencyGrid] = None) -> LayerStack:
    """
    Give every layer the top-ranked sample for its tissue.

    Layers without any sample under the threshold get the sample with the
    smallest worst error over the band and are flagged infeasible.

    Raises:
        UsageError: Empty database or a layer role that is not a known tissue
    """
    if len(db) == 0:
        raise UsageError("Material database is empty")
    prop = PropertySelector.parse(property_priority)
    grid = grid or configured_grid()
    threshold = configured_threshold() if threshold is None else float(threshold)

    layers = []
    for layer in stack.layers:
        try:
            tissue_id = TissueId.parse(layer.role)
        except ValidationError:
            raise UsageError(f"Layer role '{layer.role}' is not a known tissue",
                             details={'role': layer.role})
        if tissue_id not in tissue_library:
            raise UsageError(f"Tissue '{tissue_id.value}' missing from the tissue library")
        model = tissue_library[tissue_id]

        matches = best_matches(db, model, prop, band, top_k=1, threshold=threshold, grid=grid)
        if matches:
            top = matches[0]
            layers.append(replace(layer, material=(top.method, top.concentration), match=top,
                                  infeasible=False, worst_error=top.worst_error))
            continue

        fallback = _best_effort(db, tissue_spectrum(model, grid), prop, band)
        if fallback is None:
            raise UsageError(f"No sample covers the band for layer '{layer.role}'")
        method, concentration, error = fallback
        logger.warning("Layer %s: no sample keeps %s error below %.0f%%; best effort %s at %.1f%%",
                       layer.role, prop.value, 100 * threshold, sample_label(method, concentration), 100 * error)
        layers.append(replace(layer, material=(method, concentration), match=None,
                              infeasible=True, worst_error=error))

    return replace(stack, layers=tuple(layers), band_of_interest=(float(band[0]), float(band[1])))


def fabrication_plan(stack: LayerStack, cure_hours: Optional[float] = None) -> FabricationPlan:
    """
    Pour order and cure schedule.

    Each stage cures for the longest of the requested time, 48 h and the
    recipe's mold time. After the last pour the plan waits until the final
    layer has matured for the recipe's full cure.

    Raises:
        UsageError: A layer has no material
        CureScheduleError: Requested cure below 48 h
    """
    requested = float(cure_hours if cure_hours is not None else _stack_config('cure_hours', MIN_STAGE_CURE_HOURS))
    if requested < MIN_STAGE_CURE_HOURS:
        raise CureScheduleError(
            f"Cure of {requested:g} h per stage is below the {MIN_STAGE_CURE_HOURS:g} h minimum",
            details={'cure_hours': requested}
        )

    stages = []
    for index, layer in enumerate(stack.layers, start=1):
        if layer.material is None:
            raise UsageError(f"Layer '{layer.role}' has no material; assign materials first")
        recipe = interpolate_recipe(*layer.material)
        cure = max(requested, MIN_STAGE_CURE_HOURS, recipe.cure_mold_hours)
        stages.append(PlanStage(index, layer.role, recipe, cure))

    final = stages[-1]
    maturation = max(0.0, final.recipe.cure_total_days * 24.0 - final.cure_hours)
    plan = FabricationPlan(stack, tuple(stages), maturation)
    logger.debug("Plan for %s: %d pours, %.0f h total", stack.name, len(stages), plan.total_hours)
    return plan


def _band_mhz(band: Optional[Tuple[float, float]]) -> str:
    return "-" if band is None else f"{band[0] / 1e6:.3g}-{band[1] / 1e6:.3g} MHz"


def render_plan_markdown(plan: FabricationPlan) -> str:
    """Build sheet: stage table, caveats, then each layer's recipe sheet."""
    stack = plan.stack
    lines = [f"# Fabrication plan: {stack.name}", "",
             f"Length {stack.length_mm:g} mm; geometry from {stack.geometry_source}.", ""]
    if stack.band_of_interest:
        lines += [f"Band of interest: {_band_mhz(stack.band_of_interest)}", ""]

    lines += ["| Stage | Layer | Outer radius (mm) | Material | Cure (h) | Note |",
              "|---:|---|---:|---|---:|---|"]
    for stage, layer in zip(plan.stages, stack.layers):
        notes = []
        if layer.infeasible:
            notes.append(f"infeasible, worst error {100 * (layer.worst_error or 0):.1f}%")
        elif layer.match is not None:
            notes.append(f"match {layer.match.fmin_mhz:.3g}-{layer.match.fmax_mhz:.3g} MHz")
        if stage.recipe.interpolated:
            notes.append(stage.recipe.banner)
        lines.append(f"| {stage.index} | {stage.role} | {layer.outer_radius_mm:g} | {stage.label} | "
                     f"{stage.cure_hours:g} | {'; '.join(notes)} |")

    lines += ["", f"Mature {plan.maturation_hours:g} h after the last pour; total {plan.total_hours:g} h.", "",
              "## Caveats", ""]
    lines += [f"- {caveat}" for caveat in plan.caveats]

    for stage in plan.stages:
        sheet = emit_protocol(stage.recipe, "markdown")
        # Nest each recipe sheet under its stage
        sheet = "\n".join("##" + line if line.startswith("#") else line for line in sheet.splitlines())
        lines += ["", f"## Stage {stage.index}: {stage.role}", "", sheet]
    return "\n".join(lines) + "\n"


def layer_to_dict(layer: Layer) -> Dict[str, Any]:
    record: Dict[str, Any] = {'role': layer.role, 'outer_radius_mm': layer.outer_radius_mm}
    if layer.material is not None:
        record['method'] = layer.material[0].value
        record['concentration'] = layer.material[1]
    if layer.match is not None:
        record['match'] = {'fmin_hz': layer.match.fmin, 'fmax_hz': layer.match.fmax,
                           'worst_error': layer.match.worst_error, 'property': layer.match.prop.value}
    if layer.infeasible:
        record['infeasible'] = True
    if layer.worst_error is not None:
        record['worst_error'] = layer.worst_error
    return record


def stack_to_dict(stack: LayerStack) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        'name': stack.name,
        'length_mm': stack.length_mm,
        'geometry_source': stack.geometry_source,
        'layers': [layer_to_dict(layer) for layer in stack.layers],
    }
    if stack.band_of_interest is not None:
        record['band_hz'] = list(stack.band_of_interest)
    return record


def stack_from_dict(data: Dict[str, Any]) -> LayerStack:
    """
    Rebuild a stack from ``stack_to_dict`` output or a hand-written file.

    Match summaries are not restored; rerun assignment to get them back.
    """
    try:
        layers = []
        for record in data['layers']:
            material = None
            if record.get('method') is not None:
                material = (Method.parse(record['method']), float(record['concentration']))
            layers.append(Layer(str(record['role']), float(record['outer_radius_mm']), material,
                                infeasible=bool(record.get('infeasible', False)),
                                worst_error=record.get('worst_error')))
        band = data.get('band_hz')
        return LayerStack(tuple(layers), float(data['length_mm']),
                          tuple(float(f) for f in band) if band else None,
                          name=str(data.get('name', 'custom')),
                          geometry_source=str(data.get('geometry_source', 'user')))
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"Invalid stack description: {e}")


def plan_to_dict(plan: FabricationPlan) -> Dict[str, Any]:
    return {
        'stack': stack_to_dict(plan.stack),
        'stages': [{'index': s.index, 'role': s.role, 'sample': s.label, 'cure_hours': s.cure_hours,
                    'recipe': s.recipe.to_dict()} for s in plan.stages],
        'maturation_hours': plan.maturation_hours,
        'total_hours': plan.total_hours,
        'caveats': list(plan.caveats),
    }


def plan_to_json(plan: FabricationPlan) -> str:
    return json.dumps(plan_to_dict(plan), indent=2, ensure_ascii=False) + "\n"
