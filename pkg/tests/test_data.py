import numpy as np
import pytest

from fairsheaf.data import (
    Dataset,
    SimulationConfig,
    _simulation_draws,
    generate_simulation,
    load_csv,
    make_split,
    roundtrip_schema,
    save_csv,
)
from fairsheaf.errors import ConfigurationError, IngestionError, SplitError


class TestSimulation:
    def test_population_rates(self):
        ds = generate_simulation(SimulationConfig(n=5000, p=0.5, seed=7))
        assert abs(ds.sensitive.mean() - 0.5) < 0.03
        assert abs(ds.labels.mean() - 0.5) < 0.03
        assert ds.feature_names == ["u", "t", "a"]

    def test_minimal_size(self):
        ds = generate_simulation(SimulationConfig(n=2, p=0.5, seed=0))
        assert ds.n == 2
        assert ds.d == 3

    def test_determinism(self):
        a = generate_simulation(SimulationConfig(n=10000, p=0.9, seed=3))
        b = generate_simulation(SimulationConfig(n=10000, p=0.9, seed=3))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.sensitive, b.sensitive)

    @pytest.mark.parametrize("p,seed", [(0.2, 0), (0.5, 1), (0.9, 2)])
    def test_sensitive_mean_concentration(self, p, seed):
        n = 4000
        ds = generate_simulation(SimulationConfig(n=n, p=p, seed=seed))
        assert abs(ds.sensitive.mean() - p) <= 3 * np.sqrt(p * (1 - p) / n)

    def test_proxy_correlates_with_biased_feature(self):
        # u and w are independent noisy copies of the same v
        _, _, u, w, _ = _simulation_draws(SimulationConfig(n=2000, p=0.5, seed=5))
        assert np.corrcoef(u, w)[0, 1] > 0

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            SimulationConfig(n=1, p=0.5)
        with pytest.raises(ConfigurationError):
            SimulationConfig(n=10, p=1.0)


class TestDatasetValidation:
    def test_rejects_non_binary_labels(self):
        with pytest.raises(ConfigurationError):
            Dataset(np.zeros((3, 1)), [0, 1, 2], [0, 0, 1], ["x"])

    def test_rejects_non_finite(self):
        X = np.zeros((3, 1))
        X[1, 0] = np.inf
        with pytest.raises(ConfigurationError):
            Dataset(X, [0, 1, 0], [0, 0, 1], ["x"])

    def test_rejects_name_mismatch(self):
        with pytest.raises(ConfigurationError):
            Dataset(np.zeros((3, 2)), [0, 1, 0], [0, 0, 1], ["x"])


class TestLoadCsv:
    def _write(self, tmp_path, text):
        path = tmp_path / "data.csv"
        path.write_text(text, encoding="utf-8")
        return path

    def test_onehot_and_standardize(self, tmp_path):
        path = self._write(
            tmp_path,
            "amount,housing,label\n"
            "10,own,1\n20,rent,0\n30,own,1\n40,rent,0\n",
        )
        schema = {
            "label": "label",
            "sensitive": "housing",
            "privileged": "own",
            "categorical": ["housing"],
        }
        ds = load_csv(path, schema)
        assert ds.d == 3
        assert ds.feature_names == ["amount", "housing=own", "housing=rent"]
        np.testing.assert_allclose(ds.features[:, 0].mean(), 0.0, atol=1e-12)
        np.testing.assert_allclose(ds.features[:, 0].std(), 1.0, atol=1e-12)
        assert set(ds.features[:, 1]) == {0.0, 1.0}
        np.testing.assert_array_equal(ds.sensitive, [1, 0, 1, 0])
        np.testing.assert_array_equal(ds.labels, [1, 0, 1, 0])

    def test_age_rule_privileged_rate(self, tmp_path):
        rng = np.random.default_rng(0)
        ages = np.where(rng.random(1000) < 0.85, rng.integers(26, 70, 1000),
                        rng.integers(18, 26, 1000))
        labels = rng.integers(0, 2, 1000)
        lines = ["age,credit\n"] + [f"{a},{l}\n" for a, l in zip(ages, labels)]
        path = self._write(tmp_path, "".join(lines))
        schema = {"label": "credit", "sensitive": "age", "privileged": {"gt": 25}}
        ds = load_csv(path, schema)
        assert abs(ds.sensitive.mean() - 0.85) < 0.04
        assert ds.d == 1  # age stays in as a standardized feature

    def test_constant_column_warns(self, tmp_path):
        path = self._write(tmp_path, "x,c,label\n1,7,0\n2,7,1\n3,7,0\n4,7,1\n")
        schema = {"label": "label", "sensitive": "x", "privileged": {"gt": 2}}
        with pytest.warns(UserWarning, match="constant"):
            ds = load_csv(path, schema)
        np.testing.assert_array_equal(ds.features[:, 1], np.zeros(4))

    def test_missing_column(self, tmp_path):
        path = self._write(tmp_path, "x,label\n1,0\n2,1\n")
        schema = {"label": "label", "sensitive": "nope", "privileged": 1}
        with pytest.raises(IngestionError, match="nope"):
            load_csv(path, schema)

    def test_non_binary_label(self, tmp_path):
        path = self._write(tmp_path, "x,label\n1,1\n2,2\n3,1\n")
        schema = {"label": "label", "sensitive": "x", "privileged": {"gt": 1}}
        with pytest.raises(IngestionError, match="non-binary label in row 1"):
            load_csv(path, schema)

    def test_label_positive_mapping(self, tmp_path):
        path = self._write(tmp_path, "x,label\n1,good\n2,bad\n3,good\n")
        schema = {
            "label": "label",
            "label_positive": "good",
            "sensitive": "x",
            "privileged": {"gt": 1},
        }
        ds = load_csv(path, schema)
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])

    def test_unparseable_row_number(self, tmp_path):
        path = self._write(tmp_path, "x,label\n1,0\n2,1\noops,0\n")
        schema = {"label": "label", "sensitive": "x", "privileged": {"gt": 1}}
        with pytest.raises(IngestionError, match="row 2"):
            load_csv(path, schema)

    def test_toml_schema_sidecar(self, tmp_path):
        path = self._write(tmp_path, "x,label\n1,0\n2,1\n3,0\n")
        sidecar = tmp_path / "schema.toml"
        sidecar.write_text(
            'label = "label"\nsensitive = "x"\n\n[privileged]\ngt = 1\n'
        )
        ds = load_csv(path, sidecar)
        np.testing.assert_array_equal(ds.sensitive, [0, 1, 1])

    def test_roundtrip_exact(self, tmp_path):
        ds = generate_simulation(SimulationConfig(n=50, p=0.4, seed=1))
        path = tmp_path / "ds.csv"
        save_csv(ds, path)
        back = load_csv(path, roundtrip_schema())
        np.testing.assert_allclose(back.features, ds.features, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.sensitive, ds.sensitive)
        assert back.feature_names == ds.feature_names


class TestMakeSplit:
    def _balanced(self, n=100):
        # n/4 rows in each (label, sensitive) cell
        labels = np.tile([0, 0, 1, 1], n // 4)
        sens = np.tile([0, 1, 0, 1], n // 4)
        rng = np.random.default_rng(0)
        return Dataset(rng.normal(size=(n, 2)), labels, sens, ["x1", "x2"])

    def test_sizes(self):
        ds = self._balanced(100)
        plan = make_split(ds, 0.2, 4, seed=0)
        assert len(plan.test_indices) == 20
        assert plan.n_folds == 4
        for train, val in plan.folds:
            assert len(val) == 20
            assert len(train) == 60

    def test_determinism(self):
        ds = self._balanced(100)
        a = make_split(ds, 0.2, 4, seed=9)
        b = make_split(ds, 0.2, 4, seed=9)
        assert np.array_equal(a.test_indices, b.test_indices)
        for (ta, va), (tb, vb) in zip(a.folds, b.folds):
            assert np.array_equal(ta, tb) and np.array_equal(va, vb)

    def test_small_stratum_errors(self):
        labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        sens = np.array([0, 0, 0, 0, 0, 0, 0, 1])  # (1,1) stratum has one member
        ds = Dataset(np.arange(16, dtype=float).reshape(8, 2), labels, sens, ["a", "b"])
        with pytest.raises(SplitError, match=r"stratum \(label="):
            make_split(ds, 0.25, 4, seed=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_partition_invariants(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(40, 120))
        labels = rng.integers(0, 2, n)
        sens = rng.integers(0, 2, n)
        # make sure every joint stratum is populated enough
        labels[:16] = np.tile([0, 0, 1, 1], 4)
        sens[:16] = np.tile([0, 1, 0, 1], 4)
        ds = Dataset(rng.normal(size=(n, 3)), labels, sens, ["a", "b", "c"])
        try:
            plan = make_split(ds, 0.2, 3, seed=seed)
        except SplitError:
            return  # a random stratum was genuinely too small
        all_idx = np.arange(n)
        covered = np.concatenate([plan.test_indices] + [v for _, v in plan.folds])
        assert np.array_equal(np.sort(covered), all_idx)
        for train, val in plan.folds:
            assert np.intersect1d(plan.test_indices, train).size == 0
            assert np.intersect1d(plan.test_indices, val).size == 0
            assert np.intersect1d(train, val).size == 0
            assert np.array_equal(
                np.sort(np.concatenate([train, val])),
                np.setdiff1d(all_idx, plan.test_indices),
            )

    def test_parameter_validation(self):
        ds = self._balanced(40)
        with pytest.raises(ConfigurationError):
            make_split(ds, 0.0, 4, 0)
        with pytest.raises(ConfigurationError):
            make_split(ds, 0.2, 1, 0)
