"""
Unit tests for the material database: ingestion, interpolation, monotonicity,
aging and directory persistence.
"""

import io
import logging
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

from core.dispersion import DielectricSpectrum, FrequencyGrid, default_grid
from core.material_store import MaterialStore, sample_filename
from core.materials import (
    MaterialDatabase,
    MaterialSample,
    MeasurementMetadata,
    Method,
    Provenance,
    aging_drift,
    ingest_measurement,
    interpolate_spectrum,
    normalize_concentration,
    parse_sample_label,
    read_spectrum_table,
    resample_spectrum,
    sample_label,
    spectra_to_frame,
    spectrum_to_frame,
    validate_monotone_in_concentration,
)
from utils.error_handler import (
    FixtureLimitError,
    RangeError,
    SchemaError,
    UsageError,
    ValidationError,
)


AGING_DEMO = Path(__file__).parent.parent / "data" / "aging_demo"
METADATA = MeasurementMetadata(datetime(2024, 3, 4, 10), 2.5, 3, "bench")

CSV_HEADER = "frequency_hz,rel_permittivity_1,rel_permittivity_2,conductivity_s_per_m_1,conductivity_s_per_m_2\n"
CSV_ROWS = [
    "100000,50.0,52.0,0.10,0.12\n",
    "1000000,40.0,42.0,0.20,0.22\n",
    "10000000,30.0,32.0,0.30,0.32\n",
    "100000000,20.0,22.0,0.40,0.42\n",
]


def csv_file(rows=CSV_ROWS, header=CSV_HEADER):
    return io.StringIO(header + "".join(rows))


def synthetic(method, concentration, eps, sigma, grid=None):
    grid = grid or FrequencyGrid.log_spaced(1e5, 1e8, len(eps))
    return MaterialSample(method, concentration, DielectricSpectrum(grid, eps, sigma), Provenance.SYNTHETIC)


class TestLabels:
    """Method parsing, concentrations and labels."""

    @pytest.mark.parametrize("text, method", [
        ("oil_only", Method.OIL_ONLY), ("OO", Method.OIL_ONLY),
        ("oil-kerosene", Method.OIL_KEROSENE), ("ok", Method.OIL_KEROSENE),
    ])
    def test_method_parse(self, text, method):
        assert Method.parse(text) is method

    def test_unknown_method(self):
        with pytest.raises(UsageError, match="Unknown method"):
            Method.parse("agar")

    def test_normalize_concentration(self):
        assert normalize_concentration(0.30000000001) == 0.3
        with pytest.raises(ValidationError):
            normalize_concentration(0.95)
        with pytest.raises(ValidationError):
            normalize_concentration(0.05)

    def test_sample_label_round_trip(self):
        assert sample_label(Method.OIL_KEROSENE, 0.8) == "OK80"
        assert parse_sample_label("oo30") == (Method.OIL_ONLY, 0.3)
        with pytest.raises(UsageError):
            parse_sample_label("XX30")


class TestMaterialSample:
    """Sample invariants."""

    def test_fixture_limit(self):
        spectrum = synthetic(Method.OIL_ONLY, 0.3, [3.0, 2.0, 1.5], [0.1, 0.2, 0.3]).spectrum
        with pytest.raises(FixtureLimitError):
            MaterialSample(Method.OIL_ONLY, 0.3, spectrum, Provenance.MEASURED, sample_thickness_mm=3.5)

    def test_measured_needs_thickness(self):
        spectrum = synthetic(Method.OIL_ONLY, 0.3, [3.0, 2.0, 1.5], [0.1, 0.2, 0.3]).spectrum
        with pytest.raises(ValidationError, match="thickness"):
            MaterialSample(Method.OIL_ONLY, 0.3, spectrum, Provenance.MEASURED)


class TestMaterialDatabase:
    """Keys, current samples and duplicates."""

    def test_current_is_most_recent(self):
        db = MaterialStore(AGING_DEMO).load()
        assert len(db) == 2
        assert db.keys() == [(Method.OIL_ONLY, 0.3)]
        assert db.current(Method.OIL_ONLY, 0.3).notes == "week 8"
        assert [s.notes for s in db.samples_for(Method.OIL_ONLY, 0.3)] == ["week 0", "week 8"]

    def test_synthetic_ranks_oldest(self):
        db = MaterialStore(AGING_DEMO).load()
        extra = synthetic(Method.OIL_ONLY, 0.3, [3.0, 2.0, 1.5], [0.1, 0.2, 0.3])
        assert db.with_sample(extra).current(Method.OIL_ONLY, 0.3).notes == "week 8"

    def test_missing_key(self):
        with pytest.raises(UsageError, match="No sample for OK50"):
            MaterialDatabase().current(Method.OIL_KEROSENE, 0.5)

    def test_duplicate_measurement(self):
        sample = ingest_measurement(csv_file(), Method.OIL_ONLY, 0.3, METADATA)
        with pytest.raises(ValidationError, match="Duplicate"):
            MaterialDatabase((sample, sample))

    def test_keys_sorted_by_method_then_concentration(self):
        samples = [synthetic(m, c, [3.0, 2.0, 1.5], [0.1, 0.2, 0.3])
                   for m, c in [(Method.OIL_KEROSENE, 0.2), (Method.OIL_ONLY, 0.5), (Method.OIL_ONLY, 0.1)]]
        db = MaterialDatabase(tuple(samples))
        assert db.keys() == [(Method.OIL_ONLY, 0.1), (Method.OIL_ONLY, 0.5), (Method.OIL_KEROSENE, 0.2)]
        assert db.methods() == [Method.OIL_ONLY, Method.OIL_KEROSENE]
        assert db.concentrations(Method.OIL_ONLY) == [0.1, 0.5]


class TestIngestion:
    """Measurement CSV ingestion."""

    def test_replicates_are_averaged(self):
        sample = ingest_measurement(csv_file(), Method.OIL_ONLY, 0.3, METADATA)
        assert sample.provenance is Provenance.MEASURED
        assert sample.label == "OO30"
        assert sample.spectrum.rel_permittivity.tolist() == [51.0, 41.0, 31.0, 21.0]
        assert sample.spectrum.conductivity == pytest.approx([0.11, 0.21, 0.31, 0.41])
        assert sample.measured_at == datetime(2024, 3, 4, 10)

    def test_median_aggregate(self):
        header = "frequency_hz,rel_permittivity_1,rel_permittivity_2,rel_permittivity_3," \
                 "conductivity_s_per_m_1,conductivity_s_per_m_2,conductivity_s_per_m_3\n"
        rows = ["100000,50,60,10,0.1,0.2,0.9\n", "1000000,40,45,41,0.2,0.3,0.25\n",
                "10000000,30,31,32,0.3,0.3,0.3\n"]
        sample = ingest_measurement(csv_file(rows, header), Method.OIL_ONLY, 0.3, METADATA, aggregate='median')
        assert sample.spectrum.rel_permittivity.tolist() == [50.0, 41.0, 31.0]
        assert sample.spectrum.conductivity.tolist() == [0.2, 0.25, 0.3]

    @pytest.mark.parametrize("aggregate", ['mean', 'median'])
    def test_replicate_order_does_not_matter(self, aggregate):
        eps = [[50.1, 49.7, 51.3], [40.3, 41.9, 39.2], [30.7, 29.9, 31.1]]
        sigma = [[0.101, 0.117, 0.093], [0.213, 0.199, 0.207], [0.311, 0.303, 0.297]]
        frequencies = [100000, 1000000, 10000000]

        def measurement(order):
            # Shuffle which replicate lands in which column, and the column order in the file
            columns = [f"rel_permittivity_{k + 1}" for k in order] + \
                      [f"conductivity_s_per_m_{k + 1}" for k in reversed(order)]
            header = "frequency_hz," + ",".join(columns) + "\n"
            rows = [f"{f}," + ",".join(str(v) for v in e + list(reversed(s))) + "\n"
                    for f, e, s in zip(frequencies, eps, sigma)]
            return csv_file(rows, header)

        reference = ingest_measurement(measurement([0, 1, 2]), Method.OIL_ONLY, 0.3, METADATA, aggregate=aggregate)
        for order in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
            shuffled = ingest_measurement(measurement(order), Method.OIL_ONLY, 0.3, METADATA, aggregate=aggregate)
            assert shuffled.spectrum.same_values(reference.spectrum), order

    def test_non_increasing_frequency_names_line(self):
        rows = [CSV_ROWS[0], CSV_ROWS[2], CSV_ROWS[1], CSV_ROWS[3]]
        with pytest.raises(SchemaError, match="strictly increasing") as excinfo:
            ingest_measurement(csv_file(rows), Method.OIL_ONLY, 0.3, METADATA)
        # Third data row sits on line 4 after the header
        assert excinfo.value.line == 4

    def test_negative_conductivity(self):
        rows = list(CSV_ROWS)
        rows[1] = "1000000,40.0,42.0,-0.20,0.22\n"
        with pytest.raises(ValidationError, match="Negative conductivity"):
            ingest_measurement(csv_file(rows), Method.OIL_ONLY, 0.3, METADATA)

    def test_too_few_rows(self):
        with pytest.raises(SchemaError, match="at least 3"):
            ingest_measurement(csv_file(CSV_ROWS[:2]), Method.OIL_ONLY, 0.3, METADATA)

    def test_empty_file(self):
        with pytest.raises(SchemaError, match="empty"):
            ingest_measurement(io.StringIO(""), Method.OIL_ONLY, 0.3, METADATA)

    def test_thick_sample(self):
        metadata = MeasurementMetadata(None, 3.2, 3)
        with pytest.raises(FixtureLimitError):
            ingest_measurement(csv_file(), Method.OIL_ONLY, 0.3, metadata)

    def test_few_locations_warns(self, phantom_log):
        metadata = MeasurementMetadata(None, 2.0, 2)
        ingest_measurement(csv_file(), Method.OIL_ONLY, 0.3, metadata)
        assert "test location" in phantom_log.text

    def test_out_of_band_rows_dropped(self, phantom_log):
        rows = ["10000,60.0,62.0,0.05,0.07\n"] + CSV_ROWS
        sample = ingest_measurement(csv_file(rows), Method.OIL_ONLY, 0.3, METADATA)
        assert sample.spectrum.frequencies.tolist() == [1e5, 1e6, 1e7, 1e8]
        assert "dropping 1 row" in phantom_log.text

    def test_widen_bounds_keeps_rows(self):
        rows = ["10000,60.0,62.0,0.05,0.07\n"] + CSV_ROWS
        sample = ingest_measurement(csv_file(rows), Method.OIL_ONLY, 0.3, METADATA, widen_bounds=True)
        assert sample.spectrum.frequencies[0] == 1e4


class TestSpectrumTables:
    """Spectrum CSV export re-enters through the ingestion parser."""

    def test_single_spectrum(self):
        sample = ingest_measurement(csv_file(), Method.OIL_ONLY, 0.3, METADATA)
        text = spectrum_to_frame(sample.spectrum).to_csv(index=False, float_format='%.10g')
        spectra = read_spectrum_table(io.StringIO(text))
        assert list(spectra) == ['']
        assert spectra[''].grid == sample.spectrum.grid
        assert np.allclose(spectra[''].conductivity, sample.spectrum.conductivity, rtol=1e-9)

    def test_labelled_spectra(self):
        a = synthetic(Method.OIL_ONLY, 0.1, [3.0, 2.0, 1.5], [0.1, 0.2, 0.3]).spectrum
        b = synthetic(Method.OIL_ONLY, 0.2, [2.5, 1.8, 1.2], [0.05, 0.1, 0.2]).spectrum
        text = spectra_to_frame({'fat': a, 'muscle': b}).to_csv(index=False, float_format='%.10g')
        spectra = read_spectrum_table(io.StringIO(text))
        assert list(spectra) == ['fat', 'muscle']
        assert np.allclose(spectra['muscle'].conductivity, b.conductivity, rtol=1e-9)


class TestResample:
    """Log-frequency resampling."""

    def test_same_grid_is_identity(self):
        spectrum = synthetic(Method.OIL_ONLY, 0.1, [3.0, 2.0, 1.5], [0.1, 0.2, 0.3]).spectrum
        assert resample_spectrum(spectrum, FrequencyGrid.log_spaced(1e5, 1e8, 3)) is spectrum

    def test_linear_in_log_frequency(self):
        grid = FrequencyGrid([1e5, 1e7])
        spectrum = DielectricSpectrum(grid, [10.0, 6.0], [0.1, 0.3])
        resampled = resample_spectrum(spectrum, FrequencyGrid([1e5, 1e6, 1e7]))
        assert resampled.rel_permittivity == pytest.approx([10.0, 8.0, 6.0])
        assert resampled.conductivity == pytest.approx([0.1, 0.2, 0.3])

    def test_no_extrapolation(self):
        spectrum = DielectricSpectrum(FrequencyGrid([1e6, 1e7, 1e8]), [10.0, 8.0, 6.0], [0.1, 0.2, 0.3])
        with pytest.raises(RangeError):
            resample_spectrum(spectrum, default_grid())


class TestInterpolateSpectrum:
    """Interpolation between tabulated concentrations."""

    @pytest.fixture
    def two_knots(self):
        low = synthetic(Method.OIL_ONLY, 0.2, [40.0, 30.0, 20.0], [0.4, 0.5, 0.6])
        high = synthetic(Method.OIL_ONLY, 0.4, [10.0, 7.5, 5.0], [0.1, 0.125, 0.15])
        return MaterialDatabase((low, high))

    def test_knot_is_exact(self, two_knots):
        grid = FrequencyGrid.log_spaced(1e5, 1e8, 3)
        sample = interpolate_spectrum(two_knots, Method.OIL_ONLY, 0.2, grid)
        assert sample.provenance is Provenance.INTERPOLATED
        assert sample.spectrum.same_values(two_knots.current(Method.OIL_ONLY, 0.2).spectrum)

    def test_midpoint_is_geometric(self, two_knots):
        grid = FrequencyGrid.log_spaced(1e5, 1e8, 3)
        sample = interpolate_spectrum(two_knots, Method.OIL_ONLY, 0.3, grid)
        assert sample.spectrum.rel_permittivity == pytest.approx([20.0, 15.0, 10.0])
        assert sample.spectrum.conductivity == pytest.approx([0.2, 0.25, 0.3])

    def test_outside_range(self, two_knots):
        grid = FrequencyGrid.log_spaced(1e5, 1e8, 3)
        with pytest.raises(RangeError, match="outside the tabulated"):
            interpolate_spectrum(two_knots, Method.OIL_ONLY, 0.5, grid)
        with pytest.raises(RangeError, match="No oil_kerosene samples"):
            interpolate_spectrum(two_knots, Method.OIL_KEROSENE, 0.3, grid)

    @pytest.mark.slow
    def test_random_concentrations_stay_between_neighbours(self, reference_db):
        grid = default_grid()
        rng = np.random.default_rng(20240304)
        for method in Method:
            knots = reference_db.concentrations(method)
            for c in knots:
                stored = reference_db.current(method, c).spectrum
                assert interpolate_spectrum(reference_db, method, c, grid).spectrum.same_values(stored)
            for _ in range(500):
                c = float(rng.uniform(knots[0], knots[-1]))
                index = int(rng.integers(len(grid)))
                value = interpolate_spectrum(reference_db, method, c, grid).spectrum
                upper = int(np.searchsorted(knots, normalize_concentration(c)))
                low = reference_db.current(method, knots[max(upper - 1, 0)]).spectrum
                high = reference_db.current(method, knots[min(upper, len(knots) - 1)]).spectrum
                for prop in ('conductivity', 'permittivity'):
                    bounds = sorted([low.values(prop)[index], high.values(prop)[index]])
                    assert bounds[0] * (1 - 1e-12) <= value.values(prop)[index] <= bounds[1] * (1 + 1e-12)


class TestMonotonicity:
    """Properties should fall as oil concentration rises."""

    def test_consistent(self):
        db = MaterialDatabase((
            synthetic(Method.OIL_ONLY, 0.1, [10.0, 9.0, 8.0], [0.3, 0.3, 0.3]),
            synthetic(Method.OIL_ONLY, 0.2, [5.0, 4.0, 3.0], [0.2, 0.2, 0.2]),
        ))
        report = validate_monotone_in_concentration(db, Method.OIL_ONLY, FrequencyGrid.log_spaced(1e5, 1e8, 3))
        assert report.is_consistent

    def test_violation_flagged(self):
        db = MaterialDatabase((
            synthetic(Method.OIL_ONLY, 0.1, [10.0, 9.0, 8.0], [0.3, 0.3, 0.3]),
            synthetic(Method.OIL_ONLY, 0.2, [5.0, 4.0, 3.0], [0.2, 0.2, 0.4]),
        ))
        report = validate_monotone_in_concentration(db, Method.OIL_ONLY, FrequencyGrid.log_spaced(1e5, 1e8, 3))
        assert not report.is_consistent
        assert report.pairs() == [(0.1, 0.2)]
        (violation,) = report.violations
        assert violation.prop == 'conductivity'
        assert violation.frequency_hz == 1e8

    def test_single_concentration_warns(self, phantom_log):
        db = MaterialDatabase((synthetic(Method.OIL_ONLY, 0.1, [10.0, 9.0, 8.0], [0.3, 0.3, 0.3]),))
        report = validate_monotone_in_concentration(db, Method.OIL_ONLY, FrequencyGrid.log_spaced(1e5, 1e8, 3))
        assert report.is_consistent
        assert "at least 2 concentrations" in phantom_log.text


class TestAging:
    """Week-0 versus week-8 drift on the bundled demo database."""

    def test_demo_drift(self):
        db = MaterialStore(AGING_DEMO).load()
        week0, week8 = db.samples_for(Method.OIL_ONLY, 0.3)
        report = aging_drift(week0, week8)

        assert report.measured_at_a == datetime(2024, 3, 4, 10)
        assert report.conductivity_delta[0] == pytest.approx(0.02547, abs=1e-4)
        assert report.permittivity_delta[0] == pytest.approx(-0.03310, abs=1e-4)
        assert report.max_abs_conductivity_delta == pytest.approx(0.02695, abs=1e-4)
        assert report.max_abs_permittivity_delta == pytest.approx(0.03310, abs=1e-4)
        # Conductivity rises and permittivity falls at every frequency
        assert np.all(report.conductivity_delta > 0)
        assert np.all(report.permittivity_delta < 0)
        assert list(report.to_frame().columns) == ['frequency_hz', 'conductivity_delta', 'permittivity_delta']

    def test_sweeps_compared_on_overlap(self, phantom_log):
        phantom_log.set_level(logging.INFO, logger="phantom")
        a = synthetic(Method.OIL_ONLY, 0.3, [10.0, 9.0, 8.0, 7.0], [0.1, 0.2, 0.3, 0.4])
        later = FrequencyGrid([2e5, 1e6, 1e7, 1e8])
        b = synthetic(Method.OIL_ONLY, 0.3, [9.5, 9.9, 8.8, 7.7], [0.1, 0.19, 0.285, 0.38], grid=later)
        report = aging_drift(a, b)
        assert report.frequencies.tolist() == [1e6, 1e7, 1e8]
        assert report.permittivity_delta == pytest.approx([0.1, 0.1, 0.1])
        assert report.conductivity_delta == pytest.approx([-0.05, -0.05, -0.05])
        assert "3 of 4 frequencies" in phantom_log.text

    def test_disjoint_sweeps(self):
        a = synthetic(Method.OIL_ONLY, 0.3, [10.0, 9.0, 8.0], [0.1, 0.2, 0.3], grid=FrequencyGrid([1e5, 3e5, 1e6]))
        b = synthetic(Method.OIL_ONLY, 0.3, [9.0, 8.0], [0.2, 0.3], grid=FrequencyGrid([1e7, 1e8]))
        with pytest.raises(RangeError, match="do not overlap"):
            aging_drift(a, b)

    def test_different_materials(self):
        a = synthetic(Method.OIL_ONLY, 0.1, [10.0, 9.0, 8.0], [0.3, 0.3, 0.3])
        b = synthetic(Method.OIL_ONLY, 0.2, [5.0, 4.0, 3.0], [0.2, 0.2, 0.2])
        with pytest.raises(UsageError, match="Cannot compare OO10 with OO20"):
            aging_drift(a, b)


class TestMaterialStore:
    """Database directory persistence."""

    def test_round_trip(self, tmp_path):
        db = MaterialStore(AGING_DEMO).load()
        extra = synthetic(Method.OIL_KEROSENE, 0.6, [3.0, 2.0, 1.5], [0.1, 0.2, 0.3])
        db = db.with_sample(extra)

        written = MaterialStore(tmp_path).save(db)
        assert {p.name for p in written} == {"oil_only_30_2024-03-04.csv", "oil_only_30_2024-04-29.csv",
                                            "oil_kerosene_60_synthetic.csv"}
        loaded = MaterialStore(tmp_path).load()

        assert loaded.keys() == db.keys()
        for original, copy in zip(db.samples, loaded.samples):
            assert copy.provenance is original.provenance
            assert copy.measured_at == original.measured_at
            assert np.allclose(copy.spectrum.conductivity, original.spectrum.conductivity, rtol=1e-9)
            assert np.allclose(copy.spectrum.rel_permittivity, original.spectrum.rel_permittivity, rtol=1e-9)

    def test_sample_filename(self):
        db = MaterialStore(AGING_DEMO).load()
        assert sample_filename(db.samples[0]) == "oil_only_30_2024-03-04.csv"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(SchemaError, match="No manifest.json"):
            MaterialStore(tmp_path).load()

    def test_unsupported_schema_version(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"schema_version": 2, "samples": []}')
        with pytest.raises(ValidationError, match="schema_version 2"):
            MaterialStore(tmp_path).load()

    def test_bad_manifest_record(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            '{"schema_version": 1, "samples": [{"file": "a.csv", "method": "oil_only", '
            '"concentration": 0.3, "provenance": "guessed"}]}')
        with pytest.raises(SchemaError, match="unknown provenance"):
            MaterialStore(tmp_path).load()
