import json
import os

import numpy as np
import pytest

from crossface.config import (ExperimentConfig, PipelineConfig, default_menus,
                              load_experiment_config)
from crossface.orchestrator import (ConfigSummary, Experiment, ResultStore,
                                    RunError, greedy_optimize,
                                    median_run_record, run_config, run_single)


def tiny_config(tmp_path, **over):
    raw = {
        "dataset": {"kind": "synthetic", "n_subjects": 10, "seed": 11,
                    "shift": "none"},
        "embeddings": {"builtin": ["lbp"]},
        "baseline": {"enhancement": "none", "layer": "lbp",
                     "normalization": "none", "combination": "abssub",
                     "classifier": "linear_svm"},
        "menus": {"enhancement": ["none"], "layer": ["lbp"],
                  "normalization": ["none"], "combination": ["abssub"],
                  "classifier": ["linear_svm"]},
        "grid": "coarse", "master_seed": 77, "n_splits": 2, "jobs": 1,
        "out_dir": str(tmp_path / "out"), "retain_scores": True,
    }
    raw.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return load_experiment_config(str(path))


@pytest.fixture(scope="module")
def tiny_experiment(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("exp"))
    return Experiment(cfg)


class TestResultStore:
    def rec(self, fp, split, hter=0.1):
        return {"config_fp": fp, "split": split, "status": "ok",
                "eval": {"hter": hter}}

    def test_append_and_lookup(self, tmp_path):
        store = ResultStore(str(tmp_path / "r.jsonl"))
        store.append(self.rec("aa", 0))
        store.append(self.rec("aa", 1))
        store.append(self.rec("bb", 0))
        assert store.have("aa", 0) and not store.have("aa", 2)
        assert [r["split"] for r in store.records_for("aa")] == [0, 1]
        assert store.config_fingerprints() == ["aa", "bb"]

    def test_duplicate_append_ignored(self, tmp_path):
        path = tmp_path / "r.jsonl"
        store = ResultStore(str(path))
        store.append(self.rec("aa", 0, hter=0.1))
        store.append(self.rec("aa", 0, hter=0.9))
        assert store.records[("aa", 0)]["eval"]["hter"] == 0.1
        assert len(path.read_text().splitlines()) == 1

    def test_reload_round_trip(self, tmp_path):
        path = tmp_path / "r.jsonl"
        store = ResultStore(str(path))
        store.append(self.rec("aa", 0))
        again = ResultStore(str(path))
        assert again.records == store.records


class TestConfigSummary:
    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(31)
        hters = rng.random(21)
        s = ConfigSummary.from_hters(hters)
        assert s.median == sorted(hters)[10]
        assert abs(s.mean - np.mean(hters)) < 1e-15
        assert s.minimum == min(hters) and s.maximum == max(hters)
        assert s.n == 21

    def test_constant(self):
        s = ConfigSummary.from_hters([0.5] * 10)
        assert (s.median, s.mean, s.stddev) == (0.5, 0.5, 0.0)


class TestRunSingle:
    def test_determinism(self, tiny_experiment):
        cfg = tiny_experiment.cfg.baseline
        a = run_single(cfg, tiny_experiment.splits[0], 0, tiny_experiment)
        b = run_single(cfg, tiny_experiment.splits[0], 0, tiny_experiment)
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
        assert a["status"] == "ok"

    def test_always_accept_hter_half(self, tiny_experiment):
        cfg = tiny_experiment.cfg.baseline.with_stage("classifier",
                                                      "always_accept")
        rec = run_single(cfg, tiny_experiment.splits[0], 0, tiny_experiment)
        assert rec["eval"]["hter"] == 0.5

    def test_eval_threshold_comes_from_dev(self, tiny_experiment):
        cfg = tiny_experiment.cfg.baseline
        rec = run_single(cfg, tiny_experiment.splits[0], 0, tiny_experiment)
        assert rec["eval"]["tau"] == rec["dev"]["tau"]

    def test_easy_setting_beats_golden_bound(self, tiny_experiment):
        cfg = tiny_experiment.cfg.baseline
        rec = run_single(cfg, tiny_experiment.splits[0], 0, tiny_experiment)
        assert rec["eval"]["hter"] < 0.25

    def test_error_is_stage_tagged(self, tiny_experiment):
        cfg = tiny_experiment.cfg.baseline.with_stage("layer", "fc6n")
        rec = run_single(cfg, tiny_experiment.splits[0], 0, tiny_experiment)
        assert rec["status"] == "error" and rec["error"].startswith("[")


class TestRunConfig:
    def test_resume_skips_completed_runs(self, tmp_path):
        cfg = tiny_config(tmp_path)
        experiment = Experiment(cfg)
        store = ResultStore(os.path.join(cfg.out_dir, "results.jsonl"))
        run_config(cfg.baseline, experiment, store)
        before = open(store.path, "rb").read()
        run_config(cfg.baseline, experiment, store)
        assert open(store.path, "rb").read() == before

    def test_summary_over_splits(self, tmp_path):
        cfg = tiny_config(tmp_path)
        experiment = Experiment(cfg)
        store = ResultStore(os.path.join(cfg.out_dir, "results.jsonl"))
        summary, records = run_config(cfg.baseline, experiment, store)
        assert summary.n == 2 and len(records) == 2
        hters = [r["eval"]["hter"] for r in records]
        assert summary.median == float(np.median(hters))


class TestGreedy:
    def test_degenerate_menus_keep_baseline(self, tmp_path):
        cfg = tiny_config(tmp_path)
        experiment = Experiment(cfg)
        store = ResultStore(os.path.join(cfg.out_dir, "results.jsonl"))
        report = greedy_optimize(experiment, store)
        assert report["final"] == cfg.baseline.to_dict()
        assert report["n_configs"] == 1
        assert report["n_runs"] == cfg.n_splits
        assert os.path.exists(os.path.join(cfg.out_dir, "chosen_pipeline.json"))

    def test_accounting_formula(self, tmp_path):
        menus = {"enhancement": ["none", "clahe"], "layer": ["lbp"],
                 "normalization": ["none", "l2"], "combination": ["abssub"],
                 "classifier": ["linear_svm"]}
        cfg = tiny_config(tmp_path, menus=menus)
        experiment = Experiment(cfg)
        store = ResultStore(os.path.join(cfg.out_dir, "results.jsonl"))
        report = greedy_optimize(experiment, store)
        expected = sum(len(m) for m in menus.values()) - 4
        assert report["n_configs"] == expected
        assert report["n_runs"] == expected * cfg.n_splits

    def test_incumbent_retained_on_tie(self, tmp_path):
        # two baselines with identical constant HTER: incumbent must win
        menus = {"enhancement": ["none"], "layer": ["lbp"],
                 "normalization": ["none"], "combination": ["abssub"],
                 "classifier": ["always_reject", "always_accept"]}
        cfg = tiny_config(tmp_path, menus=menus, baseline={
            "enhancement": "none", "layer": "lbp", "normalization": "none",
            "combination": "abssub", "classifier": "always_accept"})
        experiment = Experiment(cfg)
        store = ResultStore(os.path.join(cfg.out_dir, "results.jsonl"))
        report = greedy_optimize(experiment, store)
        stage = report["stages"][-1]
        assert stage["chosen"] == "always_accept"
        assert stage["improved"] is False

    def test_stage_records_candidates_and_tests(self, tmp_path):
        menus = {"enhancement": ["none", "clahe"], "layer": ["lbp"],
                 "normalization": ["none"], "combination": ["abssub"],
                 "classifier": ["linear_svm"]}
        cfg = tiny_config(tmp_path, menus=menus)
        experiment = Experiment(cfg)
        store = ResultStore(os.path.join(cfg.out_dir, "results.jsonl"))
        report = greedy_optimize(experiment, store)
        stage = report["stages"][0]
        assert [c["tag"] for c in stage["candidates"]] == ["none", "clahe"]
        assert stage["kruskal_wallis"] is not None
        assert report["split_list_fp"] == experiment.split_fingerprint


class TestMedianRunRecord:
    def recs(self, hters):
        return [{"status": "ok", "split": i, "eval": {"hter": h}}
                for i, h in enumerate(hters)]

    def test_unique_median_ignores_seed(self):
        recs = self.recs([0.1, 0.3, 0.2, 0.5, 0.4])
        for seed in (1, 2, 3):
            assert median_run_record(recs, seed)["eval"]["hter"] == 0.3

    def test_tie_selection_is_deterministic(self):
        recs = self.recs([0.1, 0.2, 0.2, 0.3])
        a = median_run_record(recs, 9)
        b = median_run_record(recs, 9)
        assert a == b and a["eval"]["hter"] == 0.2

    def test_no_ok_runs(self):
        with pytest.raises(RunError):
            median_run_record([{"status": "error", "split": 0}], 1)


class TestExperimentConfig:
    def test_available_layers_with_external(self, tmp_path):
        cfg = ExperimentConfig(dataset={"kind": "synthetic"},
                               builtin_embedders=("lbp",),
                               external_embeddings={"fc6n": "x.bin"},
                               baseline=PipelineConfig("none", "lbp", "none",
                                                       "abssub", "linear_svm"),
                               menus=default_menus(["lbp"]))
        assert cfg.available_layers() == ["lbp", "fc6n", "fc6"]

    def test_unavailable_layer_rejected(self, tmp_path):
        with pytest.raises(Exception, match="not available"):
            tiny_config(tmp_path, menus={
                "enhancement": ["none"], "layer": ["fc7"],
                "normalization": ["none"], "combination": ["abssub"],
                "classifier": ["linear_svm"]})

    def test_pipeline_fingerprint_stability(self):
        a = PipelineConfig("none", "lbp", "none", "abssub", "linear_svm")
        b = PipelineConfig("none", "lbp", "none", "abssub", "linear_svm")
        c = a.with_stage("normalization", "l2")
        assert a.fingerprint() == b.fingerprint() != c.fingerprint()

    def test_invalid_stage_value(self):
        with pytest.raises(Exception, match="invalid layer"):
            PipelineConfig("none", "hog", "none", "abssub", "linear_svm")
