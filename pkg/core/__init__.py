"""
Core phantom-design components.

Tissue dispersion models, the material database, tissue/material matching,
fabrication recipes and multi-layer stacks.
"""

from .dispersion import DielectricSpectrum, FrequencyGrid, TissueId, load_tissue_library, tissue_spectrum
from .matching import PropertySelector, best_matches, match_table, solve_concentration
from .materials import MaterialDatabase, MaterialSample, Method
from .recipes import emit_protocol, interpolate_recipe
from .stack import assign_materials, fabrication_plan, preset_arm, preset_composite

__all__ = [
    'DielectricSpectrum', 'FrequencyGrid', 'TissueId', 'load_tissue_library', 'tissue_spectrum',
    'PropertySelector', 'best_matches', 'match_table', 'solve_concentration',
    'MaterialDatabase', 'MaterialSample', 'Method',
    'emit_protocol', 'interpolate_recipe',
    'assign_materials', 'fabrication_plan', 'preset_arm', 'preset_composite',
]
