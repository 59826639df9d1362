#!/usr/bin/env python3
"""
Command-line entry point for the phantom design toolkit.

Subcommands:
    tissues   Tissue spectra on the evaluation grid (plot-ready CSV)
    match     Rank material samples against a tissue, or the full match table
    recipe    Fabrication recipe sheet for a method and concentration
    stack     Multi-layer stack assignment and fabrication plan

Frequencies are given in MHz and concentrations in percent. Results go to
stdout, logs to stderr.

Exit codes: 0 success, 1 infeasible result under --strict, 2 usage or data error.

Examples:
    python main.py tissues --format csv
    python main.py match --tissue fat --property conductivity --band 11:100
    python main.py match --table --format json
    python main.py recipe --method oil_only --concentration 50 --factor 2
    python main.py stack --preset arm --property permittivity --band 30:100
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

import pandas as pd

from core.dispersion import FrequencyGrid, TissueId, TissueLibrary, load_tissue_library, tissue_spectrum
from core.material_store import MaterialStore
from core.materials import MaterialDatabase, Method, sample_label, spectra_to_frame
from core.matching import (
    PropertySelector,
    best_matches,
    bands_to_rows,
    match_table,
    report_to_csv,
    report_to_json,
    solve_concentration,
)
from core.recipes import Recipe, emit_protocol, interpolate_recipe, scale_recipe
from core.reference_data import build_reference_database
from core.stack import (
    assign_materials,
    fabrication_plan,
    layer_to_dict,
    plan_to_json,
    preset_arm,
    preset_composite,
    render_plan_markdown,
    stack_from_dict,
    stack_to_dict,
)
from utils.config_manager import get_config_manager
from utils.error_handler import ErrorContext, PhantomError, UsageError
from utils.logging import get_logger, set_level


EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_ERROR = 2

PROJECT_ROOT = Path(__file__).parent
FORMATS = ('markdown', 'json', 'csv')
REFERENCE_DATABASE = "reference"
FLOAT_FORMAT = '%.10g'

logger = get_logger(__name__)


class Settings:
    """Effective settings for one command: flags over env over config files."""

    def __init__(self, args: argparse.Namespace):
        config = get_config_manager()
        self.database = args.db or str(config.get('database.path', REFERENCE_DATABASE))
        if self.database != REFERENCE_DATABASE:
            config.use_overlay(self._resolve(self.database))
        self.tissues = args.tissues or config.get('tissues.path')
        self.format = (args.format or config.get('output.format', 'markdown')).lower()
        if self.format not in FORMATS:
            raise UsageError(f"Unknown output format '{self.format}' (use one of {list(FORMATS)})")

        threshold = args.threshold if args.threshold is not None else config.get('matching.threshold', 0.10)
        self.threshold = float(threshold)
        if not 0 < self.threshold < 1:
            raise UsageError(f"Threshold must be in (0, 1), got {self.threshold}")

        fmin = args.fmin * 1e6 if args.fmin is not None else float(config.get('grid.fmin_hz', 1e5))
        fmax = args.fmax * 1e6 if args.fmax is not None else float(config.get('grid.fmax_hz', 1e8))
        points = args.points if args.points is not None else int(config.get('grid.points', 201))
        self.grid = FrequencyGrid.log_spaced(fmin, fmax, points)

    @staticmethod
    def _resolve(path: str) -> Path:
        candidate = Path(path)
        if candidate.is_absolute() or candidate.exists():
            return candidate
        return PROJECT_ROOT / candidate

    def tissue_library(self) -> TissueLibrary:
        return load_tissue_library(self._resolve(self.tissues) if self.tissues else None)

    def material_database(self, library: TissueLibrary) -> MaterialDatabase:
        if self.database == REFERENCE_DATABASE:
            return build_reference_database(library, self.grid)
        return MaterialStore(self._resolve(self.database)).load()


def parse_band(text: str) -> Tuple[float, float]:
    """'11:100' (MHz) -> (1.1e7, 1e8) Hz."""
    try:
        low, high = (float(part) for part in text.split(':'))
    except ValueError:
        raise UsageError(f"Band must look like FMIN:FMAX in MHz, got '{text}'")
    if not 0 < low < high:
        raise UsageError(f"Band edges must satisfy 0 < FMIN < FMAX, got '{text}'")
    return low * 1e6, high * 1e6


def parse_percent(text: str) -> float:
    try:
        return float(text) / 100.0
    except ValueError:
        raise UsageError(f"Concentration must be a percentage, got '{text}'")


def parse_total(text: str) -> Tuple[float, str]:
    """'500:g' -> (500.0, 'g')."""
    value, _, unit = text.partition(':')
    try:
        return float(value), unit or 'parts'
    except ValueError:
        raise UsageError(f"Total must look like VALUE:UNIT, got '{text}'")


def _markdown_table(frame: pd.DataFrame) -> str:
    header = "| " + " | ".join(str(c) for c in frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    rows = ["| " + " | ".join(_cell(v) for v in row) + " |" for row in frame.itertuples(index=False)]
    return "\n".join([header, rule] + rows) + "\n"


def _cell(value) -> str:
    return FLOAT_FORMAT % value if isinstance(value, float) else str(value)


def _csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def cmd_tissues(args: argparse.Namespace, settings: Settings) -> Tuple[str, int]:
    """Per-tissue spectra on the evaluation grid."""
    library = settings.tissue_library()
    if args.tissue:
        wanted = [TissueId.parse(t) for t in args.tissue]
        missing = [t.value for t in wanted if t not in library]
        if missing:
            raise UsageError(f"Tissue(s) {missing} missing from the tissue library")
        library = {t: library[t] for t in wanted}

    spectra = {t.value: tissue_spectrum(model, settings.grid) for t, model in library.items()}
    if settings.format == 'json':
        document = {
            'frequency_hz': settings.grid.points.tolist(),
            'tissues': {name: {'rel_permittivity': s.rel_permittivity.tolist(),
                               'conductivity': s.conductivity.tolist()} for name, s in spectra.items()},
        }
        return json.dumps(document, indent=2) + "\n", EXIT_OK
    frame = spectra_to_frame(spectra)
    return (_csv(frame) if settings.format == 'csv' else _markdown_table(frame)), EXIT_OK


def cmd_match(args: argparse.Namespace, settings: Settings) -> Tuple[str, int]:
    """Ranked matches for one tissue, the concentration solver, or the whole table."""
    library = settings.tissue_library()
    db = settings.material_database(library)

    if args.table:
        report = match_table(db, library, settings.threshold, settings.grid)
        empty = [f"{t.value}/{p.value}" for t, p in report.empty_groups()]
        code = EXIT_INFEASIBLE if args.strict and empty else EXIT_OK
        if settings.format == 'json':
            return report_to_json(report) + "\n", code
        if settings.format == 'csv':
            return report_to_csv(report), code
        frame = pd.DataFrame(bands_to_rows(report.bands()))
        lines = [_markdown_table(frame) if not frame.empty else "No qualifying bands.\n"]
        if empty:
            lines.append("\nNo sample within threshold: " + ", ".join(empty) + "\n")
        return "".join(lines), code

    if not args.tissue:
        raise UsageError("match needs --tissue (or --table)")
    tissue = TissueId.parse(args.tissue[0])
    if tissue not in library:
        raise UsageError(f"Tissue '{tissue.value}' missing from the tissue library")
    prop = PropertySelector.parse(args.property or get_config_manager().get('matching.default_property',
                                                                            'permittivity'))
    band = parse_band(args.band) if args.band else (settings.grid.start, settings.grid.stop)

    if args.solve:
        solution = solve_concentration(db, Method.parse(args.solve), library[tissue], prop, band,
                                       settings.threshold, settings.grid)
        record = {
            'tissue': tissue.value, 'property': prop.value, 'method': solution.method.value,
            'concentration': solution.concentration, 'worst_error': round(solution.worst_error, 6),
            'feasible': solution.feasible, 'fmin_mhz': band[0] / 1e6, 'fmax_mhz': band[1] / 1e6,
        }
        code = EXIT_INFEASIBLE if args.strict and not solution.feasible else EXIT_OK
        if settings.format == 'json':
            return json.dumps(record, indent=2) + "\n", code
        frame = pd.DataFrame([record])
        return (_csv(frame) if settings.format == 'csv' else _markdown_table(frame)), code

    matches = best_matches(db, library[tissue], prop, band, args.top_k, settings.threshold, settings.grid)
    rows = bands_to_rows(matches)
    for row, match in zip(rows, matches):
        row['sample'] = sample_label(match.method, match.concentration)
        row['coverage'] = round(match.coverage(*band), 4)
    code = EXIT_INFEASIBLE if args.strict and not matches else EXIT_OK
    if not matches:
        logger.warning("No sample keeps %s %s error below %.0f%% anywhere in the band",
                       tissue.value, prop.value, 100 * settings.threshold)
    if settings.format == 'json':
        return json.dumps({'tissue': tissue.value, 'property': prop.value,
                           'band_mhz': [band[0] / 1e6, band[1] / 1e6], 'matches': rows}, indent=2) + "\n", code
    frame = pd.DataFrame(rows)
    if settings.format == 'csv':
        return _csv(frame), code
    return (_markdown_table(frame) if rows else "No qualifying bands.\n"), code


def _recipe_frame(recipe: Recipe) -> pd.DataFrame:
    return pd.DataFrame([{'ingredient': i.name, 'amount': i.amount, 'unit': i.unit.value}
                         for i in recipe.ingredients])


def cmd_recipe(args: argparse.Namespace, settings: Settings) -> Tuple[str, int]:
    """Recipe sheet, optionally scaled."""
    recipe = interpolate_recipe(Method.parse(args.method), parse_percent(args.concentration))
    if args.factor is not None or args.total is not None:
        recipe = scale_recipe(recipe, factor=args.factor,
                              target_total=parse_total(args.total) if args.total else None)
    if settings.format == 'csv':
        return _csv(_recipe_frame(recipe)), EXIT_OK
    return emit_protocol(recipe, settings.format), EXIT_OK


def cmd_stack(args: argparse.Namespace, settings: Settings) -> Tuple[str, int]:
    """Assign materials to a stack and plan its fabrication."""
    if args.file:
        with open(args.file, 'r', encoding='utf-8') as f:
            stack = stack_from_dict(json.load(f))
    elif args.preset == 'composite':
        stack = preset_composite()
    else:
        stack = preset_arm(wet_skin=args.wet_skin)

    if any(layer.material is None for layer in stack.layers):
        library = settings.tissue_library()
        prop = PropertySelector.parse(args.property or get_config_manager().get('matching.default_property',
                                                                                'permittivity'))
        band = parse_band(args.band) if args.band else (settings.grid.start, settings.grid.stop)
        stack = assign_materials(stack, settings.material_database(library), library, prop, band,
                                 settings.threshold, settings.grid)

    plan = fabrication_plan(stack, args.cure_hours)
    if args.save_stack:
        with open(args.save_stack, 'w', encoding='utf-8') as f:
            json.dump(stack_to_dict(stack), f, indent=2)
            f.write("\n")

    infeasible = [layer.role for layer in stack.layers if layer.infeasible]
    if infeasible:
        logger.warning("Infeasible layers: %s", ", ".join(infeasible))
    code = EXIT_INFEASIBLE if args.strict and infeasible else EXIT_OK

    if settings.format == 'json':
        return plan_to_json(plan), code
    if settings.format == 'csv':
        frame = pd.DataFrame([dict(layer_to_dict(layer), cure_hours=stage.cure_hours)
                              for layer, stage in zip(stack.layers, plan.stages)])
        return _csv(frame.drop(columns=['match'], errors='ignore')), code
    return render_plan_markdown(plan), code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--db", help="Material database directory, or 'reference' for the synthetic dataset")
    common.add_argument("--tissues", help="Tissue parameter file (default: bundled library)")
    common.add_argument("--format", choices=FORMATS, help="Output format")
    common.add_argument("--threshold", type=float, help="Matching threshold as a fraction (default 0.10)")
    common.add_argument("--fmin", type=float, help="Grid lower bound in MHz")
    common.add_argument("--fmax", type=float, help="Grid upper bound in MHz")
    common.add_argument("--points", type=int, help="Grid point count")
    common.add_argument("--strict", action="store_true", help="Exit 1 when a result is infeasible")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="Only log errors")

    parser = argparse.ArgumentParser(
        description="Tissue-mimicking phantom design toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Examples:" + __doc__.split("Examples:")[1],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tissues = sub.add_parser("tissues", parents=[common], help="Tissue spectra on the grid")
    tissues.add_argument("--tissue", action="append", help="Limit to a tissue (repeatable)")
    tissues.set_defaults(handler=cmd_tissues)

    match = sub.add_parser("match", parents=[common], help="Rank samples against a tissue")
    match.add_argument("--tissue", action="append", help="Tissue to match")
    match.add_argument("--property", help="permittivity or conductivity")
    match.add_argument("--band", help="FMIN:FMAX in MHz (default: whole grid)")
    match.add_argument("--top-k", type=int, default=5, help="Number of ranked samples (default 5)")
    match.add_argument("--table", action="store_true", help="Full match table for every tissue and property")
    match.add_argument("--solve", metavar="METHOD", help="Solve for the best concentration of METHOD")
    match.set_defaults(handler=cmd_match)

    recipe = sub.add_parser("recipe", parents=[common], help="Recipe sheet")
    recipe.add_argument("--method", required=True, help="oil_only or oil_kerosene")
    recipe.add_argument("--concentration", required=True, help="Oil share in percent, 10 to 90")
    scale = recipe.add_mutually_exclusive_group()
    scale.add_argument("--factor", type=float, help="Multiply every amount")
    scale.add_argument("--total", help="Batch total as VALUE:UNIT, e.g. 500:parts")
    recipe.set_defaults(handler=cmd_recipe)

    stack = sub.add_parser("stack", parents=[common], help="Multi-layer stack plan")
    source = stack.add_mutually_exclusive_group()
    source.add_argument("--preset", choices=("composite", "arm"), default="composite")
    source.add_argument("--file", help="Stack description (JSON)")
    stack.add_argument("--wet-skin", action="store_true", help="Arm preset with wet skin")
    stack.add_argument("--property", help="Property to match when assigning materials")
    stack.add_argument("--band", help="FMIN:FMAX in MHz for assignment (default: whole grid)")
    stack.add_argument("--cure-hours", type=float, help="Cure per pour stage (at least 48)")
    stack.add_argument("--save-stack", help="Write the assigned stack as JSON")
    stack.set_defaults(handler=cmd_stack)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        if args.verbose:
            set_level("DEBUG")
        elif args.quiet:
            set_level("ERROR")
        else:
            set_level(get_config_manager().get("logging.level", "INFO"))
        with ErrorContext(f"phantom {args.command}", __name__):
            settings = Settings(args)
            output, code = args.handler(args, settings)
    except (PhantomError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR

    sys.stdout.write(output)
    sys.stdout.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
