"""
Phantom fabrication recipes.

Ingredient amounts for the nine tabulated concentrations of each method, the
twelve-step preparation protocol, piecewise-linear interpolation between
columns and batch scaling.
"""

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

from core.materials import CONCENTRATION_MAX, CONCENTRATION_MIN, Method, sample_label
from utils.error_handler import RangeError, UnitError, UsageError, ValidationError
from utils.logging import get_logger


logger = get_logger(__name__)

TABULATED = tuple(round(0.1 * step, 6) for step in range(1, 10))
MIN_MOLD_HOURS = 8.0
MIN_CURE_DAYS = 5.0
INTERPOLATED_BANNER = "interpolated — not validated"
OUTPUT_FORMATS = ("markdown", "text", "json")

_TOL = 1e-9


class Unit(Enum):
    PARTS = "parts"
    GRAM = "g"
    MILLILITER = "ml"

    @classmethod
    def parse(cls, value: Union[str, "Unit"]) -> "Unit":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise UnitError(f"Unknown unit '{value}' (use parts, g or ml)")


# name -> (unit, amounts at 10%..90%)
OIL_ONLY_TABLE: Dict[str, Tuple[Unit, Tuple[float, ...]]] = {
    'propylene_glycol': (Unit.PARTS, (10.5,) * 9),
    'deionized_water': (Unit.PARTS, (169.0,) * 9),
    'gelatin': (Unit.PARTS, (26.95,) * 9),
    'safflower_oil': (Unit.PARTS, (19.4, 43.75, 75.0, 116.7, 175.0, 262.5, 408.3, 700.0, 1575.0)),
    'ultra_ivory': (Unit.PARTS, (0.2314, 0.48125, 0.825, 1.2837, 1.925, 2.8875, 4.4913, 7.7, 17.325)),
    'formalin': (Unit.PARTS, (1.323,) * 9),
}

OIL_KEROSENE_TABLE: Dict[str, Tuple[Unit, Tuple[float, ...]]] = {
    'p_toluic_acid': (Unit.GRAM, (0.2,) * 9),
    'deionized_water': (Unit.MILLILITER, (190.0,) * 9),
    'n_propanol': (Unit.MILLILITER, (10.0,) * 9),
    'gelatin': (Unit.GRAM, (34.0,) * 9),
    'oil_kerosene_mix': (Unit.MILLILITER, (22.2, 50.0, 85.0, 133.3, 200.0, 300.0, 466.0, 800.0, 1800.0)),
    'ultra_ivory': (Unit.GRAM, (1.26, 2.8, 4.76, 7.46, 11.2, 13.0, 15.0, 17.0, 20.0)),
    'formalin': (Unit.GRAM, (2.16,) * 9),
}

TABLES = {Method.OIL_ONLY: OIL_ONLY_TABLE, Method.OIL_KEROSENE: OIL_KEROSENE_TABLE}

DISPLAY_NAMES = {
    'propylene_glycol': "propylene glycol",
    'deionized_water': "de-ionized water",
    'gelatin': "gelatin",
    'safflower_oil': "safflower oil",
    'ultra_ivory': "Ultra Ivory",
    'formalin': "formalin",
    'p_toluic_acid': "p-toluic acid",
    'n_propanol': "n-propanol",
    'oil_kerosene_mix': "kerosene/safflower oil mix (1:1)",
}

OIL_KEROSENE_NOTE = ("Oil-kerosene preparation follows the oil-only protocol with the oil stage "
                     "replaced by an equal mix of kerosene and safflower oil.")


@dataclass(frozen=True)
class Ingredient:
    name: str
    amount: float
    unit: Unit

    def __post_init__(self):
        if not math.isfinite(self.amount) or self.amount <= 0:
            raise ValidationError(f"Amount of {self.name} must be positive, got {self.amount}")

    def __str__(self) -> str:
        return f"{self.amount:g} {self.unit.value} {DISPLAY_NAMES.get(self.name, self.name)}"


@dataclass(frozen=True)
class ProtocolStep:
    index: int
    instruction: str
    target_temperature_c: Optional[float] = None
    duration_hours: Optional[float] = None

    def __post_init__(self):
        t = self.target_temperature_c
        if t is not None and not 0.0 <= t <= 100.0:
            raise ValidationError(f"Step {self.index}: temperature {t} °C outside [0, 100]")


@dataclass(frozen=True)
class Recipe:
    """Ingredients and protocol for one sample."""
    method: Method
    concentration: float
    ingredients: Tuple[Ingredient, ...]
    steps: Tuple[ProtocolStep, ...] = ()
    cure_mold_hours: float = MIN_MOLD_HOURS
    cure_total_days: float = MIN_CURE_DAYS
    interpolated: bool = False
    scale_factor: float = 1.0
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        expected = set(TABLES[self.method])
        names = [i.name for i in self.ingredients]
        if len(names) != len(set(names)) or set(names) != expected:
            raise ValidationError(
                f"{self.method.value} recipe needs exactly {sorted(expected)}, got {names}"
            )
        for ingredient in self.ingredients:
            unit = TABLES[self.method][ingredient.name][0]
            if ingredient.unit is not unit:
                raise UnitError(f"{ingredient.name} is measured in {unit.value}, got {ingredient.unit.value}")
        if self.cure_mold_hours < MIN_MOLD_HOURS or self.cure_total_days < MIN_CURE_DAYS:
            raise ValidationError(
                f"Cure schedule below minimum ({MIN_MOLD_HOURS:g} h in mold, {MIN_CURE_DAYS:g} days total)"
            )
        if [s.index for s in self.steps] != list(range(1, len(self.steps) + 1)):
            raise ValidationError("Protocol step indices must run 1..n")

    @property
    def label(self) -> str:
        return sample_label(self.method, self.concentration)

    @property
    def banner(self) -> Optional[str]:
        return INTERPOLATED_BANNER if self.interpolated else None

    @property
    def units(self) -> List[Unit]:
        return sorted({i.unit for i in self.ingredients}, key=lambda u: u.value)

    def amount(self, name: str) -> float:
        return self.ingredient(name).amount

    def ingredient(self, name: str) -> Ingredient:
        for ingredient in self.ingredients:
            if ingredient.name == name:
                return ingredient
        raise UsageError(f"{self.method.value} recipes have no ingredient '{name}'")

    def total(self) -> Tuple[float, Unit]:
        """Sum of all amounts; only defined for single-unit recipes."""
        if len(self.units) != 1:
            raise UnitError(f"{self.label} mixes units {[u.value for u in self.units]}; no total without densities")
        return sum(i.amount for i in self.ingredients), self.units[0]

    @property
    def temperatures(self) -> List[float]:
        """Target temperatures in order, consecutive repeats collapsed."""
        sequence: List[float] = []
        for step in self.steps:
            t = step.target_temperature_c
            if t is not None and (not sequence or sequence[-1] != t):
                sequence.append(t)
        return sequence

    def to_dict(self) -> Dict[str, object]:
        return {
            'method': self.method.value,
            'concentration': self.concentration,
            'label': self.label,
            'interpolated': self.interpolated,
            'banner': self.banner,
            'scale_factor': self.scale_factor,
            'ingredients': [{'name': i.name, 'amount': i.amount, 'unit': i.unit.value} for i in self.ingredients],
            'steps': [{'index': s.index, 'instruction': s.instruction,
                       'target_temperature_c': s.target_temperature_c,
                       'duration_hours': s.duration_hours} for s in self.steps],
            'cure_mold_hours': self.cure_mold_hours,
            'cure_total_days': self.cure_total_days,
            'notes': list(self.notes),
        }


def _fmt(ingredients: Dict[str, Ingredient], name: str) -> str:
    return str(ingredients[name])


def build_protocol(method: Method, ingredients: Sequence[Ingredient],
                   cure_mold_hours: float = MIN_MOLD_HOURS,
                   cure_total_days: float = MIN_CURE_DAYS) -> Tuple[ProtocolStep, ...]:
    """Twelve preparation steps with the recipe's amounts inlined."""
    by_name = {i.name: i for i in ingredients}
    if method is Method.OIL_ONLY:
        solution = (f"In a beaker, prepare a room-temperature solution of {_fmt(by_name, 'propylene_glycol')} "
                    f"and {_fmt(by_name, 'deionized_water')}.")
        oil = _fmt(by_name, 'safflower_oil')
        oil_name = "safflower oil"
    else:
        solution = (f"In a beaker, prepare a room-temperature solution of {_fmt(by_name, 'p_toluic_acid')} "
                    f"and {_fmt(by_name, 'n_propanol')} in {_fmt(by_name, 'deionized_water')}.")
        oil = _fmt(by_name, 'oil_kerosene_mix')
        oil_name = "oil-kerosene mix"

    texts = [
        (solution, None, None),
        (f"Slowly add {_fmt(by_name, 'gelatin')} while stirring until a uniform slurry forms with no clumps.",
         None, None),
        ("Cover the beaker with plastic wrap held by a rubber band and punch a small hole in the wrap "
         "so the pressure above the slurry stays atmospheric.", None, None),
        ("Set the beaker in a larger container of hot water, with the water at or above the top of the slurry.",
         None, None),
        ("Heat until the gelatin reaches about 90 °C and turns transparent; skim bubbles at the meniscus.",
         90.0, None),
        ("Move the molten gelatin to a cold-water bath and cool it to 50 °C while stirring.", 50.0, None),
        (f"Meanwhile, heat {oil} to 50 °C.", 50.0, None),
        (f"Add the molten gelatin to the {oil_name} and mix vigorously, keeping the spoon below the surface.",
         None, None),
        (f"Add {_fmt(by_name, 'ultra_ivory')} (surfactant) and keep stirring until the emulsion is nearly white "
         "and no oil separates when stirring stops.", None, None),
        (f"Cool in the cold-water bath to 40 °C and slowly add, with stirring, {_fmt(by_name, 'formalin')}.",
         40.0, None),
        ("Continue cooling to about 34 °C and pour into molds.", 34.0, None),
        (f"Leave in the mold at least {cure_mold_hours:g} h for the gelatin to cross-link, then let it "
         f"mature at least {cure_total_days:g} days before measuring.", None, cure_mold_hours),
    ]
    return tuple(ProtocolStep(index, text, temperature, duration)
                 for index, (text, temperature, duration) in enumerate(texts, start=1))


def _column(concentration: float) -> Optional[int]:
    for index, c in enumerate(TABULATED):
        if abs(concentration - c) <= _TOL:
            return index
    return None


def _assemble(method: Method, concentration: float, amounts: Dict[str, float],
              interpolated: bool) -> Recipe:
    table = TABLES[method]
    ingredients = tuple(Ingredient(name, amounts[name], table[name][0]) for name in table)
    notes = (OIL_KEROSENE_NOTE,) if method is Method.OIL_KEROSENE else ()
    return Recipe(method, round(concentration, 6), ingredients, build_protocol(method, ingredients),
                  interpolated=interpolated, notes=notes)


def grid_recipe(method: Union[Method, str], concentration: float) -> Recipe:
    """
    Recipe for a tabulated concentration (10% to 90% in 10% steps).

    Raises:
        UsageError: If the concentration is not a table column
    """
    method = Method.parse(method)
    column = _column(float(concentration))
    if column is None:
        raise UsageError(
            f"{concentration:.3f} is not a tabulated concentration; use interpolate_recipe",
            details={'concentration': concentration}
        )
    amounts = {name: values[column] for name, (_, values) in TABLES[method].items()}
    return _assemble(method, TABULATED[column], amounts, interpolated=False)


def interpolate_recipe(method: Union[Method, str], concentration: float) -> Recipe:
    """
    Recipe at any concentration in [0.10, 0.90], linear between table columns.

    Tabulated concentrations return the table column itself. Other recipes
    carry the interpolation banner.

    Raises:
        RangeError: Outside the tabulated range
    """
    method = Method.parse(method)
    c = float(concentration)
    if not CONCENTRATION_MIN - _TOL <= c <= CONCENTRATION_MAX + _TOL:
        raise RangeError(f"Concentration {c:.3f} outside [{CONCENTRATION_MIN}, {CONCENTRATION_MAX}]",
                         details={'concentration': c})
    if _column(c) is not None:
        return grid_recipe(method, c)

    upper = next(i for i, knot in enumerate(TABULATED) if knot > c)
    c_low, c_high = TABULATED[upper - 1], TABULATED[upper]
    weight = (c - c_low) / (c_high - c_low)
    # a + w (b - a) keeps constant rows exact
    amounts = {name: values[upper - 1] + weight * (values[upper] - values[upper - 1])
               for name, (_, values) in TABLES[method].items()}
    logger.warning("%s recipe at %.1f%% is %s", method.value, 100 * c, INTERPOLATED_BANNER)
    return _assemble(method, c, amounts, interpolated=True)


def scale_recipe(recipe: Recipe, factor: Optional[float] = None,
                 target_total: Optional[Tuple[float, Union[Unit, str]]] = None) -> Recipe:
    """
    Multiply every amount by one factor.

    Args:
        recipe: Recipe to scale
        factor: Positive multiplier
        target_total: (value, unit) batch total; the factor is derived from
            the recipe's current total, which needs a single unit

    Raises:
        UsageError: Neither or both of factor and target_total, or non-positive values
        UnitError: Target total for a mixed-unit recipe or in the wrong unit
    """
    if (factor is None) == (target_total is None):
        raise UsageError("Give exactly one of factor or target_total")

    if target_total is not None:
        value, unit = float(target_total[0]), Unit.parse(target_total[1])
        total, recipe_unit = recipe.total()
        if unit is not recipe_unit:
            raise UnitError(f"{recipe.label} totals in {recipe_unit.value}, not {unit.value}")
        if value <= 0:
            raise UsageError(f"Target total must be positive, got {value}")
        factor = value / total

    factor = float(factor)
    if not math.isfinite(factor) or factor <= 0:
        raise UsageError(f"Scale factor must be positive, got {factor}")

    ingredients = tuple(replace(i, amount=i.amount * factor) for i in recipe.ingredients)
    steps = build_protocol(recipe.method, ingredients, recipe.cure_mold_hours, recipe.cure_total_days)
    return replace(recipe, ingredients=ingredients, steps=steps, scale_factor=recipe.scale_factor * factor)


def _title(recipe: Recipe) -> str:
    family = "Oil-only" if recipe.method is Method.OIL_ONLY else "Oil-kerosene"
    return f"{family} phantom, {100 * recipe.concentration:.4g}% ({recipe.label})"


def _render_markdown(recipe: Recipe) -> str:
    lines = [f"# {_title(recipe)}", ""]
    if recipe.banner:
        lines += [f"> **{recipe.banner}**", ""]
    if recipe.scale_factor != 1.0:
        lines += [f"Scaled by {recipe.scale_factor:.6g}.", ""]
    lines += ["| Ingredient | Amount | Unit |", "|---|---:|---|"]
    lines += [f"| {DISPLAY_NAMES[i.name]} | {i.amount:.6g} | {i.unit.value} |" for i in recipe.ingredients]
    lines += ["", "## Protocol", ""]
    lines += [f"{s.index}. {s.instruction}" for s in recipe.steps]
    if recipe.notes:
        lines += [""] + [f"_Note: {note}_" for note in recipe.notes]
    return "\n".join(lines) + "\n"


def _render_text(recipe: Recipe) -> str:
    lines = [_title(recipe)]
    if recipe.banner:
        lines.append(f"*** {recipe.banner} ***")
    lines.append("")
    lines += [f"  {DISPLAY_NAMES[i.name]:<34} {i.amount:>10.6g} {i.unit.value}" for i in recipe.ingredients]
    lines.append("")
    lines += [f"{s.index:>2}. {s.instruction}" for s in recipe.steps]
    lines += [f"Note: {note}" for note in recipe.notes]
    return "\n".join(lines) + "\n"


def emit_protocol(recipe: Recipe, fmt: str = "markdown") -> str:
    """
    Render a recipe sheet.

    Raises:
        UsageError: Unknown format
    """
    if fmt == "markdown":
        return _render_markdown(recipe)
    if fmt == "text":
        return _render_text(recipe)
    if fmt == "json":
        return json.dumps(recipe.to_dict(), indent=2, ensure_ascii=False) + "\n"
    raise UsageError(f"Unknown protocol format '{fmt}' (use one of {list(OUTPUT_FORMATS)})")
