import numpy as np
import pytest

from fairsheaf.data import SimulationConfig, generate_simulation, make_split
from fairsheaf.errors import ConfigurationError, SelectionError
from fairsheaf.experiments import (
    GridSpec,
    RunConfig,
    RunResult,
    emit_report,
    enumerate_configs,
    nondominated_mask,
    pareto_front,
    run_german_direction_check,
    run_grid,
    select_best,
)
from fairsheaf.metrics import FairnessReport


def pareto_oracle(points, directions):
    """O(m^2) dominance check, written independently of the implementation."""
    m = len(points)
    signed = [
        [p[i] if d == "max" else -p[i] for i, d in enumerate(directions)]
        for p in points
    ]
    keep = []
    for i in range(m):
        dominated = False
        for j in range(m):
            if i == j:
                continue
            if all(signed[j][t] >= signed[i][t] for t in range(len(directions))) and any(
                signed[j][t] > signed[i][t] for t in range(len(directions))
            ):
                dominated = True
                break
        keep.append(not dominated)
    return keep


def make_result(config_id, acc, ind, con, status="ok", name=None):
    report = FairnessReport(
        accuracy=acc, balanced_accuracy=acc, ind=ind, sep=0.0, suf=0.0,
        con=con, lip=0.1, ent=0.1, ent_within=0.05, ent_between=0.05,
    )
    cfg = RunConfig(config_id=config_id, name=name or f"cfg{config_id}",
                    topology="plain", mode="plain")
    return RunResult(config=cfg, status=status, error=None,
                     fold_reports=[report] * 4, test_report=report, wall_time=0.0)


class TestParetoFront:
    def test_three_nondominated(self):
        results = [
            make_result(0, 0.8, 0.1, 0.1),
            make_result(1, 0.9, 0.2, 0.1),
            make_result(2, 0.7, 0.05, 0.1),
        ]
        front = pareto_front(results, (("accuracy", "max"), ("ind", "min")))
        assert sorted(p.config_id for p in front) == [0, 1, 2]

    def test_dominated_point_excluded(self):
        results = [
            make_result(0, 0.8, 0.1, 0.1),
            make_result(1, 0.9, 0.2, 0.1),
            make_result(2, 0.7, 0.05, 0.1),
            make_result(3, 0.75, 0.15, 0.1),
        ]
        front = pareto_front(results, (("accuracy", "max"), ("ind", "min")))
        assert sorted(p.config_id for p in front) == [0, 1, 2]

    def test_single_point(self):
        front = pareto_front([make_result(0, 0.5, 0.5, 0.5)],
                             (("accuracy", "max"), ("ind", "min")))
        assert [p.config_id for p in front] == [0]

    def test_failed_configs_skipped(self):
        results = [make_result(0, 0.8, 0.1, 0.1),
                   make_result(1, 0.99, 0.0, 0.0, status="failed")]
        front = pareto_front(results, (("accuracy", "max"), ("ind", "min")))
        assert [p.config_id for p in front] == [0]

    def test_objective_count_validated(self):
        with pytest.raises(ConfigurationError):
            pareto_front([make_result(0, 0.5, 0.5, 0.5)], (("accuracy", "max"),) * 4)

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_bruteforce_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, 60))
        # low-resolution grid values force plenty of exact ties
        pts = rng.integers(0, 5, size=(m, 3)).astype(float)
        directions = ["max", "min", "min"]
        mask = nondominated_mask(
            np.column_stack([pts[:, 0], -pts[:, 1], -pts[:, 2]])
        )
        assert mask.tolist() == pareto_oracle(pts.tolist(), directions)

    def test_large_input_witness_verified(self):
        # every dominated point must have an explicit dominator and every
        # surviving point must have none (checked point by point)
        rng = np.random.default_rng(99)
        m = 10_000
        pts = np.column_stack([
            rng.normal(size=m),
            rng.integers(0, 30, m).astype(float),
            rng.integers(0, 30, m).astype(float),
        ])
        signed = np.column_stack([pts[:, 0], -pts[:, 1], -pts[:, 2]])
        mask = nondominated_mask(signed)
        for i in range(m):
            ge = (signed >= signed[i]).all(axis=1)
            gt = (signed > signed[i]).any(axis=1)
            assert bool((ge & gt).any()) == (not mask[i])


class TestSelectBest:
    def test_arithmetic(self):
        results = [make_result(0, 0.8, 0.1, 0.1), make_result(1, 0.9, 0.3, 0.3)]
        assert select_best(results) == 0

    def test_tie_breaks_to_lower_id(self):
        results = [make_result(0, 0.8, 0.1, 0.1), make_result(1, 0.8, 0.1, 0.1)]
        assert select_best(results) == 0

    def test_single_candidate(self):
        assert select_best([make_result(5, 0.5, 0.2, 0.2)]) == 5

    def test_all_failed(self):
        with pytest.raises(SelectionError):
            select_best([make_result(0, 0.5, 0.2, 0.2, status="failed")])

    @pytest.mark.parametrize("seed", range(5))
    def test_selection_lies_on_front(self, seed):
        rng = np.random.default_rng(seed)
        results = [
            make_result(i, float(rng.uniform(0.5, 1.0)), float(rng.uniform(0, 0.5)),
                        float(rng.uniform(0, 0.5)))
            for i in range(12)
        ]
        best = select_best(results)
        front_ids = {p.config_id for p in pareto_front(results)}
        assert best in front_ids


def tiny_grid(**overrides):
    defaults = dict(
        knn_k=(2,),
        unit_quantile_counts=(),
        include_subset=True,
        mixed_subset_weights=(),
        alphas=(0.3,),
        n_layers=(3,),
        times=(0.5,),
        schemes=("discrete",),
        include_plain=True,
        mode="post",
        max_epochs=150,
        seed=0,
    )
    defaults.update(overrides)
    return GridSpec(**defaults)


@pytest.fixture(scope="module")
def small_sim():
    ds = generate_simulation(SimulationConfig(n=80, p=0.5, seed=0))
    split = make_split(ds, 0.2, 4, seed=0)
    return ds, split


class TestEnumerateConfigs:
    def test_plain_first_and_ids_sequential(self):
        configs = enumerate_configs(tiny_grid())
        assert configs[0].name == "plain"
        assert [c.config_id for c in configs] == list(range(len(configs)))

    def test_scheme_length_pairing(self):
        configs = enumerate_configs(tiny_grid(schemes=("discrete", "continuous"),
                                              n_layers=(3, 5), times=(0.5,)))
        knn = [c for c in configs if c.topology == "knn"]
        assert sum(1 for c in knn if c.scheme == "discrete") == 2
        assert sum(1 for c in knn if c.scheme == "continuous") == 1
        assert all(c.t is None for c in knn if c.scheme == "discrete")

    def test_optimizer_sampling_in_ranges_and_deterministic(self):
        a = enumerate_configs(tiny_grid())
        b = enumerate_configs(tiny_grid())
        for ca, cb in zip(a, b):
            assert ca.train == cb.train
            assert 1e-4 <= ca.train.learning_rate <= 1e-1
            assert 1e-6 <= ca.train.weight_decay <= 1e-2
            assert 0.8 <= ca.train.moment_decay_1 <= 0.95
            assert 0.95 <= ca.train.moment_decay_2 <= 0.9999

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigurationError):
            GridSpec(knn_k=(), unit_quantile_counts=(), include_subset=False,
                     mixed_subset_weights=(), include_plain=False)


class TestRunGrid:
    def test_fold_counts_and_status(self, small_sim):
        ds, split = small_sim
        results = run_grid(ds, split, tiny_grid())
        assert len(results) == 3  # plain, knn, subset
        for result in results:
            assert result.status == "ok"
            assert len(result.fold_reports) == split.n_folds
            assert result.test_report is not None
            assert result.importance_raw is not None

    def test_deterministic_across_runs_and_threads(self, small_sim):
        ds, split = small_sim
        a = run_grid(ds, split, tiny_grid())
        b = run_grid(ds, split, tiny_grid(), threads=3)
        for ra, rb in zip(a, b):
            assert ra.config.name == rb.config.name
            for fa, fb in zip(ra.fold_reports, rb.fold_reports):
                assert fa.accuracy == fb.accuracy
                assert fa.ind == fb.ind
                assert fa.con == fb.con

    def test_divergent_config_recorded_not_raised(self, small_sim):
        ds, split = small_sim
        results = run_grid(ds, split, tiny_grid(alphas=(2000.0,), n_layers=(400,),
                                                include_plain=False, knn_k=(),
                                                include_subset=True))
        assert len(results) == 1
        assert results[0].status == "failed"
        assert "layer" in results[0].error

    def test_bad_topology_parameter_recorded(self, small_sim):
        ds, split = small_sim
        # quantile count far above n gives a quantile level > 1
        results = run_grid(ds, split, tiny_grid(unit_quantile_counts=(10_000,),
                                                knn_k=(), include_subset=False,
                                                include_plain=False))
        assert results[0].status == "failed"


class TestModesAndBenchmarkHelper:
    @pytest.mark.parametrize("mode", ["pre", "inprocess"])
    def test_other_modes_run(self, small_sim, mode):
        ds, split = small_sim
        results = run_grid(ds, split, tiny_grid(mode=mode, include_subset=False))
        knn = next(r for r in results if r.config.topology == "knn")
        assert knn.status == "ok"
        assert len(knn.fold_reports) == split.n_folds

    def test_german_direction_helper_on_synthetic_csv(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 240
        age = np.where(rng.random(n) < 0.85, rng.integers(26, 70, n),
                       rng.integers(19, 26, n))
        amount = rng.normal(3000, 800, n).round(2)
        job = rng.choice(["skilled", "unskilled"], n)
        score = 0.001 * (amount - 3000) + 0.05 * (age - 35) + rng.normal(0, 1, n)
        credit = np.where(score > 0, "good", "bad")
        lines = ["age,amount,job,credit\n"]
        lines += [f"{a},{m},{j},{c}\n" for a, m, j, c in zip(age, amount, job, credit)]
        csv_path = tmp_path / "credit.csv"
        csv_path.write_text("".join(lines))
        schema = {
            "label": "credit", "label_positive": "good",
            "sensitive": "age", "privileged": {"gt": 25},
            "categorical": ["job"],
        }
        grid = tiny_grid(knn_k=(3,), include_subset=False, include_plain=False)
        outcome = run_german_direction_check(csv_path, schema, seed=0, grid=grid)
        assert outcome["selected_name"].startswith("knn")
        for side in ("plain", "knn"):
            assert 0.0 <= outcome[side]["ind"] <= 1.0
            assert outcome[side]["con"] >= 0.0


class TestEmitReport:
    def test_files_and_byte_identical_rerun(self, small_sim, tmp_path):
        ds, split = small_sim
        results = run_grid(ds, split, tiny_grid())
        front = pareto_front(results)
        selection = select_best(results)

        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        files1 = emit_report(results, front, selection, out1)
        files2 = emit_report(results, front, selection, out2)
        names = sorted(p.name for p in files1)
        assert names == [
            "pareto2d_acc_con.csv", "pareto2d_acc_ind.csv", "pareto3d.csv",
            "results.csv", "selection.json", "shap_importance.csv", "summary.csv",
        ]
        for f1, f2 in zip(sorted(files1), sorted(files2)):
            assert f1.read_bytes() == f2.read_bytes()

    def test_summary_schema(self, small_sim, tmp_path):
        ds, split = small_sim
        results = run_grid(ds, split, tiny_grid())
        front = pareto_front(results)
        emit_report(results, front, select_best(results), tmp_path)
        header = (tmp_path / "summary.csv").read_text().splitlines()[0]
        assert header == (
            "model,acc_mean,acc_std,ind_mean,ind_std,suf_mean,suf_std,"
            "sep_mean,sep_std,con_mean,con_std,lip_mean,lip_std,ent_mean,ent_std"
        )

    def test_results_rows(self, small_sim, tmp_path):
        ds, split = small_sim
        results = run_grid(ds, split, tiny_grid())
        emit_report(results, pareto_front(results), select_best(results), tmp_path)
        lines = (tmp_path / "results.csv").read_text().splitlines()
        # header + per config: one row per fold plus a test row
        assert len(lines) == 1 + len(results) * (split.n_folds + 1)

    def test_single_result_pareto3d(self, tmp_path, small_sim):
        ds, split = small_sim
        results = run_grid(ds, split, tiny_grid(knn_k=(), include_subset=False))
        front = pareto_front(results)
        emit_report(results, front, select_best(results), tmp_path)
        lines = (tmp_path / "pareto3d.csv").read_text().splitlines()
        assert len(lines) == 2  # header + the lone config

    def test_selection_json(self, small_sim, tmp_path):
        import json

        ds, split = small_sim
        results = run_grid(ds, split, tiny_grid())
        selection = select_best(results)
        emit_report(results, pareto_front(results), selection, tmp_path)
        payload = json.loads((tmp_path / "selection.json").read_text())
        assert payload["config"] == selection
        assert "params" in payload and "objective" in payload
