import numpy as np
import pytest

from rddtrees.data import (
    ConstraintConfig,
    CsvSchema,
    Dataset,
    SamplerConfig,
    ScalingRecord,
    build_strip_index,
    configs_from_mapping,
    load_config_file,
    load_csv,
    standardize,
    strip_masks,
    write_csv,
)
from rddtrees.errors import (
    ConfigurationError,
    CsvParseError,
    EmptyDataError,
    SchemaError,
    StripEmptyError,
)
from rddtrees.simlab import DgpConfig, generate_sim_dataset


class TestDataset:
    def test_z_derived_from_cutoff(self):
        ds = Dataset(y=[1.0, 2.0, 3.0], x=[-0.1, 0.0, 0.2], w=np.zeros((3, 1)), cutoff=0.0)
        assert ds.z.tolist() == [0, 1, 1]

    def test_z_matches_rule_on_random_data(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = rng.integers(1, 50)
            c = float(rng.normal())
            x = rng.normal(size=n)
            ds = Dataset(y=rng.normal(size=n), x=x, w=rng.normal(size=(n, 2)), cutoff=c)
            assert np.array_equal(ds.z, (x >= c).astype(int))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length mismatch"):
            Dataset(y=[1.0, 2.0], x=[0.0], w=np.zeros((2, 1)), cutoff=0.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(y=[np.nan], x=[0.0], w=np.zeros((1, 1)), cutoff=0.0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyDataError):
            Dataset(y=[], x=[], w=np.zeros((0, 1)), cutoff=0.0)

    def test_arrays_immutable(self):
        ds = Dataset(y=[1.0], x=[0.0], w=np.zeros((1, 1)), cutoff=0.0)
        with pytest.raises(ValueError):
            ds.y[0] = 5.0


class TestStandardize:
    def test_hand_computed_two_points(self):
        ds = Dataset(y=[2.0, 4.0], x=[0.0, 1.0], w=np.zeros((2, 1)), cutoff=0.5)
        out, rec = standardize(ds)
        assert out.y == pytest.approx([-0.70710678, 0.70710678])
        assert rec.mean == pytest.approx(3.0)
        assert rec.scale == pytest.approx(1.41421356)

    def test_constant_outcome_centers_with_unit_scale(self):
        ds = Dataset(y=[5.0, 5.0, 5.0], x=[0.0, 1.0, 2.0], w=np.zeros((3, 1)), cutoff=1.0)
        out, rec = standardize(ds)
        assert rec.mean == 5.0
        assert rec.scale == 1.0
        assert np.allclose(out.y, 0.0)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            y = rng.normal(scale=rng.uniform(0.1, 50), size=rng.integers(2, 40))
            ds = Dataset(y=y, x=np.arange(len(y), dtype=float), w=np.zeros((len(y), 1)), cutoff=0.0)
            out, rec = standardize(ds)
            assert np.max(np.abs(rec.invert(out.y) - y)) < 1e-12

    def test_standardized_moments(self, small_ds):
        out, _ = standardize(small_ds)
        assert out.y.mean() == pytest.approx(0.0, abs=1e-12)
        assert out.y.std(ddof=1) == pytest.approx(1.0, rel=1e-12)

    def test_covariates_untouched(self, small_ds):
        out, _ = standardize(small_ds)
        assert np.array_equal(out.x, small_ds.x)
        assert np.array_equal(out.w, small_ds.w)


class TestStripIndex:
    def test_membership_example(self):
        ds = Dataset(y=np.zeros(3), x=[-0.05, 0.0, 0.2], w=np.zeros((3, 1)), cutoff=0.0)
        strip = build_strip_index(ds, ConstraintConfig(h=0.1, n_omin=1, alpha=0.5))
        assert strip.left_ids.tolist() == [0]
        assert strip.right_ids.tolist() == [1]

    def test_all_above_strip_is_error(self):
        ds = Dataset(y=np.zeros(3), x=[0.5, 0.6, 0.7], w=np.zeros((3, 1)), cutoff=0.0)
        with pytest.raises(StripEmptyError):
            build_strip_index(ds, ConstraintConfig(h=0.1, n_omin=1, alpha=0.5))

    def test_boundary_conventions(self):
        # left side half-open [c-h, c), right side closed [c, c+h]
        ds = Dataset(y=np.zeros(4), x=[-0.1, 0.0, 0.1, 0.1000001], w=np.zeros((4, 1)), cutoff=0.0)
        strip = build_strip_index(ds, ConstraintConfig(h=0.1, n_omin=1, alpha=0.5))
        assert strip.left_ids.tolist() == [0]
        assert strip.right_ids.tolist() == [1, 2]

    def test_counts_match_linear_scan_on_sim_sample(self):
        rng = np.random.default_rng(5)
        ds, _ = generate_sim_dataset(DgpConfig(n=800, seed=5), rng)
        cfg = ConstraintConfig(h=0.1, n_omin=1, alpha=0.5)
        strip = build_strip_index(ds, cfg)
        n_left = sum(1 for v in ds.x if -0.1 <= v < 0.0)
        n_right = sum(1 for v in ds.x if 0.0 <= v <= 0.1)
        assert strip.n_left == n_left
        assert strip.n_right == n_right
        ml, mr = strip_masks(ds, cfg)
        assert ml.sum() == n_left and mr.sum() == n_right

    def test_random_membership_property(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            n = int(rng.integers(5, 200))
            x = rng.normal(size=n)
            c = float(rng.normal(scale=0.2))
            h = float(rng.uniform(0.05, 1.0))
            ds = Dataset(y=np.zeros(n), x=x, w=np.zeros((n, 1)), cutoff=c)
            try:
                strip = build_strip_index(ds, ConstraintConfig(h=h, n_omin=1, alpha=0.5))
            except StripEmptyError:
                assert not np.any((x >= c - h) & (x <= c + h))
                continue
            expect_left = {i for i in range(n) if c - h <= x[i] < c}
            expect_right = {i for i in range(n) if c <= x[i] <= c + h}
            assert set(strip.left_ids.tolist()) == expect_left
            assert set(strip.right_ids.tolist()) == expect_right


class TestCsv:
    def test_sharp_assignment_from_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,x,w1\n1.0,-0.1,0\n2.0,0.0,0\n3.0,0.2,0\n")
        ds = load_csv(p, CsvSchema(), cutoff=0.0)
        assert ds.z.tolist() == [0, 1, 1]

    def test_blank_cell_names_row_and_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,x,w1\n1.0,0.1,0\n,0.2,0\n")
        with pytest.raises(CsvParseError) as err:
            load_csv(p, CsvSchema(), cutoff=0.0)
        assert err.value.row == 3
        assert err.value.column == "y"

    def test_missing_column_is_schema_error(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("outcome,x\n1.0,0.1\n")
        with pytest.raises(SchemaError, match="'y'"):
            load_csv(p, CsvSchema(), cutoff=0.0)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(EmptyDataError):
            load_csv(p, CsvSchema(), cutoff=0.0)

    def test_header_only_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,x,w1\n")
        with pytest.raises(EmptyDataError):
            load_csv(p, CsvSchema(), cutoff=0.0)

    def test_sim_sample_round_trips_bit_for_bit(self, tmp_path):
        rng = np.random.default_rng(17)
        ds, _ = generate_sim_dataset(DgpConfig(n=300, seed=17), rng)
        p = tmp_path / "sim.csv"
        cov_names = write_csv(ds, p)
        back = load_csv(p, CsvSchema(covariates=cov_names), cutoff=ds.cutoff)
        assert np.array_equal(back.y, ds.y)
        assert np.array_equal(back.x, ds.x)
        assert np.array_equal(back.w, ds.w)

    def test_named_covariate_subset(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("y,x,keep,drop\n1.0,0.1,5.0,9.0\n2.0,0.3,6.0,9.0\n")
        ds = load_csv(p, CsvSchema(covariates=["keep"]), cutoff=0.0)
        assert ds.w.shape == (2, 1)
        assert ds.w[:, 0].tolist() == [5.0, 6.0]


class TestConfigs:
    def test_constraint_validation(self):
        with pytest.raises(ValueError):
            ConstraintConfig(h=-1.0)
        with pytest.raises(ValueError):
            ConstraintConfig(n_omin=0)
        with pytest.raises(ValueError):
            ConstraintConfig(alpha=1.0)

    def test_sampler_defaults_resolve_leaf_variances(self):
        cfg = SamplerConfig(num_trees_mu=10, num_trees_tau=5)
        assert cfg.leaf_prior_variance_mu == pytest.approx(0.06)
        assert cfg.leaf_prior_variance_tau == pytest.approx(0.06)

    def test_sampler_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(burn_in=10, num_sweeps=10)
        with pytest.raises(ValueError):
            SamplerConfig(tree_prior_alpha=1.5)
        with pytest.raises(ValueError):
            SamplerConfig(num_trees_mu=0)

    def test_config_file_round_trip(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"num_trees_mu": 7, "h": 0.2, "alpha": 0.7, "seed": 3}')
        scfg, ccfg = load_config_file(p)
        assert scfg.num_trees_mu == 7
        assert scfg.seed == 3
        assert ccfg.h == 0.2
        assert ccfg.alpha == 0.7

    def test_unknown_config_key(self):
        with pytest.raises(ConfigurationError, match="bogus"):
            configs_from_mapping({"bogus": 1})


def test_scaling_record_difference_transform():
    rec = ScalingRecord(mean=10.0, scale=2.5)
    d = np.array([1.0, -2.0])
    assert np.allclose(rec.invert_difference(d), d * 2.5)
