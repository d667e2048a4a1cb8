import json

import numpy as np
import pytest

from cata.data import Dataset, ForgetSchedule
from cata.engine import (
    UnlearnConfig,
    reconstruct_theta,
    run_continual,
    standard_scenario,
    step_seed,
    theta_hash,
)
from cata.errors import ConfigError, DataError, DimensionError, FormatError
from cata.model import evaluate_accuracy, param_dim
from cata.paramvec import densify, load_task_vector
from cata.report import (
    RunReport,
    StepRecord,
    avg_delta,
    avg_score,
    emit_report,
    parse_report,
    report_to_dict,
)
from cata.unlearn import load_memory, task_vector_path


@pytest.fixture(scope="module")
def small():
    return standard_scenario(1, num_classes=5, num_features=6, n_train_per_class=60,
                             n_test_per_class=20, forget=(2, 0, 4))


def run(sc, method="cata", **kw):
    return run_continual(sc.train, sc.test, sc.schedule, UnlearnConfig(method=method), sc.theta0,
                         aux=sc.aux, **kw)


class TestStepZero:
    def test_empty_schedule(self, small):
        theta0 = small.theta0.copy()
        seen = []
        rep = run_continual(small.train, small.test, ForgetSchedule(()), UnlearnConfig(), theta0,
                            on_step=lambda t, th: seen.append(th.copy()))
        assert rep.num_steps == 0 and len(rep.steps) == 1
        assert rep.avg_delta is None and rep.avg_score is None
        assert np.array_equal(seen[0], small.theta0) and np.array_equal(theta0, small.theta0)
        assert rep.original.theta_hash == theta_hash(small.theta0)

    def test_original_accuracies_are_direct(self, small):
        rep = run(small)
        acc = evaluate_accuracy(small.theta0, small.test)
        assert rep.original.all_acc == 100 * acc.overall
        for c in small.schedule.classes():
            assert rep.original.target_acc[c] == 100 * acc.per_class[c]
        retain = small.test.without_classes(small.schedule.cumulative(3))
        assert rep.original.retain_acc == 100 * evaluate_accuracy(small.theta0, retain).overall


class TestSingleStep:
    def test_single_shot_identity(self, small):
        sched = ForgetSchedule.one_per_step([2])
        thetas = {}
        cfg = UnlearnConfig()
        run_continual(small.train, small.test, sched, cfg, small.theta0, seed=3,
                      on_step=lambda t, th: thetas.__setitem__(t, th))
        from dataclasses import replace
        from cata.model import train
        from cata.unlearn import compute_task_vector, sparsify
        theta_f = train(small.theta0, small.train.of_classes({2}), replace(cfg.finetune, seed=step_seed(3, 1)))
        sv = sparsify(compute_task_vector(small.theta0, theta_f, 1), cfg.k, 1)
        assert np.array_equal(thetas[1], small.theta0 + 0.7 * densify(sv))


class TestMethods:
    @pytest.mark.parametrize("method", ["cata", "naive", "ga", "ft"])
    def test_runs_and_is_deterministic(self, small, method):
        a, b = run(small, method, seed=5), run(small, method, seed=5)
        assert emit_report(a) == emit_report(b)
        assert a.num_steps == 3 and a.method == method
        assert a.avg_delta >= 0 and 0 <= a.avg_score <= 100

    def test_cata_forgets(self, small):
        rep = run(small)
        assert all(v <= 10.0 for v in rep.at_step.values())
        assert rep.final.retain_acc >= 0.85 * rep.original.retain_acc

    def test_baselines_are_sequential(self, small):
        thetas = {}
        run(small, "ft", on_step=lambda t, th: thetas.__setitem__(t, th))
        assert not np.array_equal(thetas[2], thetas[1])

    def test_taskvec_dir_only_for_anchored(self, small, tmp_path):
        with pytest.raises(ConfigError):
            run(small, "ga", taskvec_dir=tmp_path)


class TestResume:
    def test_resume_bit_identical(self, small, tmp_path):
        full = run(small, seed=2)
        part = run(small, seed=2, taskvec_dir=tmp_path, stop_after=2)
        assert part.num_steps == 2
        assert sorted(p.name for p in tmp_path.iterdir()) == ["step_1.tv", "step_2.tv"]
        resumed = run(small, seed=2, taskvec_dir=tmp_path)
        assert emit_report(resumed) == emit_report(full)

    def test_reload_uses_files(self, small, tmp_path):
        run(small, seed=2, taskvec_dir=tmp_path)
        # zero out step 1's file: the resumed run must use it instead of refitting
        sv = load_task_vector(task_vector_path(tmp_path, 1))
        (tmp_path / "step_1.tv").write_text(f"CATA-TV v1\ndim={sv.dim} step=1 k={sv.k_fraction!r}\n")
        rep = run(small, seed=2, taskvec_dir=tmp_path)
        assert rep.steps[1].theta_hash == theta_hash(small.theta0)

    def test_reconstruct_from_memory(self, small, tmp_path):
        thetas = {}
        run(small, seed=4, taskvec_dir=tmp_path, on_step=lambda t, th: thetas.__setitem__(t, th))
        memory = load_memory(tmp_path)
        assert np.array_equal(reconstruct_theta(small.theta0, memory, UnlearnConfig()), thetas[3])

    def test_mismatched_file_rejected(self, small, tmp_path):
        run(small, seed=2, taskvec_dir=tmp_path, stop_after=1)
        with pytest.raises(FormatError):
            run_continual(small.train, small.test, small.schedule, UnlearnConfig(k=0.5), small.theta0,
                          taskvec_dir=tmp_path)


class TestErrors:
    def test_empty_retain(self, small):
        sched = ForgetSchedule.one_per_step(range(5))
        with pytest.raises(DataError, match="retain"):
            run_continual(small.train, small.test, sched, UnlearnConfig(), small.theta0)

    def test_unknown_class(self, small):
        with pytest.raises(ConfigError, match="unknown class"):
            run_continual(small.train, small.test, ForgetSchedule.parse("7"), UnlearnConfig(), small.theta0)

    def test_theta_dim(self, small):
        with pytest.raises(DimensionError):
            run_continual(small.train, small.test, small.schedule, UnlearnConfig(), np.zeros(3))

    def test_forget_class_without_samples(self, small):
        tr = small.train.without_classes({2})
        tr = Dataset(tr.features, tr.labels, 5)
        with pytest.raises(DataError, match="no training samples"):
            run_continual(tr, small.test, small.schedule, UnlearnConfig(), small.theta0)

    def test_bad_method(self):
        with pytest.raises(ConfigError, match="cata, naive, ga, ft"):
            UnlearnConfig(method="bogus")

    @pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(k=0.0), dict(k=1.1), dict(lam=float("inf"))])
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            UnlearnConfig(**kw)


def _toy_report(steps=1):
    recs = [StepRecord(0, "h0", {3: 80.0}, 90.0, 88.0, {"a": 70.0})]
    if steps:
        recs.append(StepRecord(1, "h1", {3: 4.0}, 88.2, 79.5, {"a": 63.0}))
    rep = RunReport(seed=1, method="cata", lam=0.7, k=0.3, schedule=[[3]] if steps else [],
                    steps=recs, at_step={3: 4.0} if steps else {})
    if steps:
        rep.avg_delta, rep.avg_score = avg_delta(rep), avg_score(rep)
    return rep


class TestReport:
    def test_json_round_trip(self, small):
        rep = run(small)
        assert parse_report(emit_report(rep)) == rep
        assert emit_report(parse_report(emit_report(rep))) == emit_report(rep)

    def test_schema_fields(self, small):
        doc = json.loads(emit_report(run(small)))
        assert doc["schema"] == "cata-report-v1"
        for key in ("seed", "method", "lambda", "k", "steps", "at_step", "avg_delta", "avg_score"):
            assert key in doc
        assert set(doc["steps"][0]) == {"t", "theta_hash", "target_acc", "retain_acc", "all_acc", "aux"}

    def test_csv_rows(self):
        lines = emit_report(_toy_report(), "csv").decode().splitlines()
        assert lines[0] == "step,class_3,retain,all,aux_a"
        assert lines[1:] == ["0,80.0,90.0,88.0,70.0", "1,4.0,88.2,79.5,63.0"]

    def test_csv_empty_report(self):
        rep = RunReport(seed=0, method="cata", lam=0.7, k=0.3, schedule=[], steps=[])
        assert emit_report(rep, "csv") == b"step,retain,all\n"

    def test_unknown_format(self):
        with pytest.raises(ConfigError, match="json, csv"):
            emit_report(_toy_report(), "xml")

    def test_avg_score_hand(self):
        rep = _toy_report()
        # target 100*(4/80)=5 -> 95; retain 98; all 79.5/88; aux 90
        expect = (95.0 + 98.0 + 100 * 79.5 / 88.0 + 90.0) / 4
        assert rep.avg_score == pytest.approx(expect, abs=1e-12)
        assert rep.avg_delta == 0.0

    def test_accuracy_range_enforced(self):
        with pytest.raises(ConfigError):
            RunReport(seed=0, method="cata", lam=0.7, k=0.3, schedule=[],
                      steps=[StepRecord(0, "h", {}, 101.0, 50.0)])

    def test_bad_schema(self):
        with pytest.raises(FormatError):
            parse_report('{"schema": "other"}')
        with pytest.raises(FormatError):
            parse_report("not json")
        with pytest.raises(FormatError):
            parse_report('{"schema": "cata-report-v1"}')
