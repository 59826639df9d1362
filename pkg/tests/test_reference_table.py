"""
Acceptance checks: the bundled reference database reproduces the published
matching table.
"""

import pytest

from core.dispersion import TissueId
from core.materials import Method, validate_monotone_in_concentration
from core.matching import PropertySelector, best_matches, configured_grid, match_table
from core.reference_data import TABLE_ROWS


pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

EDGE_RTOL = 0.02


@pytest.fixture(scope="module")
def report(reference_db, tissue_library):
    return match_table(reference_db, tissue_library)


def _sample_bands(report, row):
    return [band for band in report.group(row.tissue_id, row.prop) if band.sample == row.sample]


class TestTableEdges:
    """Test every published row shows up with its band edges"""

    @pytest.mark.parametrize("row", TABLE_ROWS,
                             ids=lambda r: f"{r.tissue_id.value}-{r.prop.value}-{r.sample}-{r.fmin_mhz:g}")
    def test_row_edges(self, report, row):
        bands = _sample_bands(report, row)
        assert bands, f"{row.sample} has no {row.prop.value} band for {row.tissue_id.value}"
        assert any(band.fmin_mhz == pytest.approx(row.fmin_mhz, rel=EDGE_RTOL) for band in bands)
        assert any(band.fmax_mhz == pytest.approx(row.fmax_mhz, rel=EDGE_RTOL) for band in bands)

    @pytest.mark.parametrize("tissue, prop, sample, fmin_mhz", [
        (TissueId.FAT, PropertySelector.CONDUCTIVITY, "OK80", 11.0),
        (TissueId.BONE_MARROW, PropertySelector.CONDUCTIVITY, "OO80", 12.8),
        (TissueId.CORTICAL_BONE, PropertySelector.PERMITTIVITY, "OK80", 30.0),
    ])
    def test_single_band_to_top(self, report, tissue, prop, sample, fmin_mhz):
        bands = [band for band in report.group(tissue, prop) if band.sample == sample]
        assert len(bands) == 1
        assert bands[0].fmin_mhz == pytest.approx(fmin_mhz, rel=EDGE_RTOL)
        assert bands[0].fmax_mhz == pytest.approx(100.0)
        assert bands[0].worst_error < report.threshold

    @pytest.mark.parametrize("tissue", [TissueId.MUSCLE, TissueId.SKIN_WET])
    def test_no_conductivity_match(self, report, tissue):
        assert report.group(tissue, PropertySelector.CONDUCTIVITY) == []
        assert (tissue, PropertySelector.CONDUCTIVITY) in report.empty_groups()

    def test_one_group_per_tissue_and_property(self, report, tissue_library):
        assert len(report.groups) == len(tissue_library) * len(PropertySelector)


class TestReferenceMonotonicity:
    """Test both properties fall with oil concentration"""

    @pytest.mark.parametrize("method", list(Method))
    def test_consistent(self, reference_db, method):
        result = validate_monotone_in_concentration(reference_db, method, configured_grid())
        assert result.is_consistent, result.pairs()


class TestReferenceRanking:
    """Test best-match ranking on the reference database"""

    @pytest.mark.parametrize("tissue, prop, band_mhz, expected", [
        (TissueId.FAT, PropertySelector.CONDUCTIVITY, (11.0, 100.0), "OK80"),
        (TissueId.CORTICAL_BONE, PropertySelector.PERMITTIVITY, (30.0, 100.0), "OK80"),
        (TissueId.MUSCLE, PropertySelector.PERMITTIVITY, (30.0, 100.0), "OK30"),
    ])
    def test_top_match(self, reference_db, tissue_library, tissue, prop, band_mhz, expected):
        band = (band_mhz[0] * 1e6, band_mhz[1] * 1e6)
        ranked = best_matches(reference_db, tissue_library[tissue], prop, band)
        assert ranked[0].sample == expected

    def test_muscle_conductivity_unmatched(self, reference_db, tissue_library):
        ranked = best_matches(reference_db, tissue_library[TissueId.MUSCLE],
                              PropertySelector.CONDUCTIVITY, (30e6, 100e6))
        assert ranked == []
