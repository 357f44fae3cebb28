"""Golden-file check: the no-shift synthetic setting is easy by design,
and the recorded baseline run must reproduce bit-for-bit."""

import json
import os

from crossface.config import load_experiment_config
from crossface.orchestrator import Experiment, ResultStore, run_config

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "golden.json")


def test_noshift_baseline_matches_golden(tmp_path):
    with open(GOLDEN) as fh:
        golden = json.load(fh)["noshift_baseline"]
    raw = {
        "dataset": golden["dataset"],
        "embeddings": {"builtin": ["lbp"]},
        "baseline": golden["baseline"],
        "menus": {k: [v] for k, v in golden["baseline"].items()},
        "grid": golden["grid"],
        "master_seed": golden["master_seed"],
        "n_splits": golden["n_splits"],
        "jobs": 1,
        "out_dir": str(tmp_path / "out"),
        "retain_scores": False,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(raw))
    cfg = load_experiment_config(str(cfg_path))
    experiment = Experiment(cfg)
    store = ResultStore(os.path.join(cfg.out_dir, "results.jsonl"))
    _, records = run_config(cfg.baseline, experiment, store)
    rec = records[0]
    assert rec["eval"]["hter"] == golden["eval_hter"]
    assert rec["eval"]["hter"] < 0.05
    assert rec["dev"]["tau"] == golden["dev_tau"]
    assert rec["hp"] == golden["hp"]
