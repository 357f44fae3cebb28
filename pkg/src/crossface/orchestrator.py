"""Experiment execution: single runs, 100-split protocol, greedy optimization.

All randomness is derived from the master seed (split planning, solver
visitation order, baseline scoring, median-run selection), so re-running
an experiment reproduces every result bit-for-bit. Results are persisted
as append-only JSON lines keyed by (config fingerprint, split index);
interrupted experiments resume by fingerprint lookup.
"""

import concurrent.futures
import json
import multiprocessing
import os
from dataclasses import dataclass

import numpy as np

from . import classify, evalstats, imaging, vectorops
from .config import STAGES, ExperimentConfig, PipelineConfig, shift_params_of
from .dataset import (SampleIndex, derive_seed, ingest_manifest,
                      plan_many_splits, synthesize_dataset)
from .embedding import BUILTIN_EMBEDDERS, load_external
from .evalstats import PairScoreSet, stage_tests
from .vectorops import combine_method_of, norm_method_of


class RunError(RuntimeError):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def _canonical(record):
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class ResultStore:
    """Append-only JSONL store of run records."""

    def __init__(self, path):
        self.path = path
        self.records = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self.records[(rec["config_fp"], rec["split"])] = rec

    def have(self, fp, split):
        return (fp, split) in self.records

    def append(self, record):
        key = (record["config_fp"], record["split"])
        if key in self.records:
            return
        self.records[key] = record
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(_canonical(record) + "\n")

    def records_for(self, fp):
        return [rec for (f, _), rec in sorted(self.records.items()) if f == fp]

    def config_fingerprints(self):
        return sorted({fp for fp, _ in self.records})


@dataclass(frozen=True)
class ConfigSummary:
    median: float
    mean: float
    stddev: float
    minimum: float
    maximum: float
    n: int

    @classmethod
    def from_hters(cls, hters):
        arr = np.asarray(hters, dtype=np.float64)
        return cls(float(np.median(arr)), float(np.mean(arr)), float(np.std(arr)),
                   float(np.min(arr)), float(np.max(arr)), arr.size)

    def to_dict(self):
        return {"median": self.median, "mean": self.mean, "stddev": self.stddev,
                "min": self.minimum, "max": self.maximum, "n": self.n}


class Experiment:
    """Loads the dataset once and caches per-stage intermediates."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        kind = cfg.dataset["kind"]
        if kind == "synthetic":
            self.samples = synthesize_dataset(
                int(cfg.dataset.get("n_subjects", 20)),
                int(cfg.dataset.get("seed", 1)),
                shift_params_of(cfg.dataset))
        else:
            self.samples = ingest_manifest(cfg.dataset["path"])
        self.index = SampleIndex(self.samples)
        self.splits = plan_many_splits(self.index.subjects(), cfg.master_seed,
                                       cfg.n_splits, self.index)
        self.split_fingerprint = _split_list_fingerprint(self.splits)
        self._aligned = None
        self._embed_cache = {}
        self._external_cache = {}
        self._norm_cache = {}

    def aligned_faces(self):
        if self._aligned is None:
            self._aligned = {s.sample_id: imaging.normalize_geometry(s)
                             for s in self.samples}
        return self._aligned

    def embedded(self, enhancement, layer):
        """(sample_id, domain) -> raw FeatureVector for one stage pair."""
        if layer in BUILTIN_EMBEDDERS:
            key = (enhancement, layer)
            if key not in self._embed_cache:
                method = imaging.enhancement_of(
                    enhancement, self.cfg.enhancement_params.get(enhancement))
                embed = BUILTIN_EMBEDDERS[layer]
                out = {}
                for s in self.samples:
                    face = imaging.enhance(self.aligned_faces()[s.sample_id], method)
                    if self.cfg.dump_enhanced:
                        _dump_face(self.cfg.out_dir, face)
                    out[(s.sample_id, s.domain_tag)] = embed(face)
                self._embed_cache[key] = out
            return self._embed_cache[key]
        if layer not in self._external_cache:
            from .embedding import LAYER_TABLE
            file_tag = LAYER_TABLE[layer][1]
            path = self.cfg.external_embeddings[file_tag]
            emb = load_external(path, layer)
            missing = [s.sample_id for s in self.samples
                       if (s.sample_id, s.domain_tag) not in emb]
            if missing:
                raise RunError("embed", f"EMB1 file {path} missing samples: {missing[:5]}")
            self._external_cache[layer] = emb
        return self._external_cache[layer]

    def normalized(self, config: PipelineConfig):
        key = (config.enhancement, config.layer, config.normalization)
        if key not in self._norm_cache:
            method = norm_method_of(config.normalization)
            raw = self.embedded(config.enhancement, config.layer)
            dims = {v.dim for v in raw.values()}
            if len(dims) != 1:
                raise RunError("normalize", f"inconsistent dimensions {sorted(dims)}")
            self._norm_cache[key] = {k: vectorops.normalize(v, method)
                                     for k, v in raw.items()}
        return self._norm_cache[key]


def _dump_face(out_dir, face):
    from PIL import Image
    d = os.path.join(out_dir, "enhanced", face.enhancement)
    os.makedirs(d, exist_ok=True)
    name = face.sample_id.replace("/", "_") + ".png"
    Image.fromarray(np.asarray(face.pixels)).save(os.path.join(d, name))


def _split_list_fingerprint(splits):
    import hashlib
    blob = json.dumps([p.to_dict() for p in splits], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _pair_matrix(pairs, fmap, config, phase_conjugate):
    method = combine_method_of(config.combination)
    rows, labels = [], []
    for p in pairs:
        a = fmap[(p.id_sample, "id")]
        b = fmap[(p.selfie_sample, "selfie")]
        rows.append(vectorops.combine(a, b, method, phase_conjugate).values)
        labels.append(1.0 if p.genuine else -1.0)
    return np.asarray(rows), np.asarray(labels)


def run_seed(master_seed, config: PipelineConfig, split_index):
    return derive_seed(master_seed, int(config.fingerprint(), 16), split_index)


def run_single(config: PipelineConfig, split, split_index, experiment: Experiment):
    """Execute the full pipeline on one split; returns a plain record dict.

    The EER threshold is fixed on the development set before any
    evaluation-set label is consulted.
    """
    cfg = experiment.cfg
    seed = run_seed(cfg.master_seed, config, split_index)
    stage = "features"
    try:
        fmap = experiment.normalized(config)
        X_train, y_train = _pair_matrix(split.train_pairs, fmap, config, cfg.phase_conjugate)
        fold_sets = [
            _pair_matrix(split.fold_pairs(k), fmap, config, cfg.phase_conjugate)
            for k in range(3)]
        stage = "grid_search"
        grid = classify.make_grid(config.classifier, cfg.grid_stride)
        hp, cv_eer, model, failures = classify.grid_search(
            config.classifier, fold_sets, X_train, y_train, grid, seed)
        stage = "dev_threshold"
        X_dev, y_dev = _pair_matrix(split.dev_pairs, fmap, config, cfg.phase_conjugate)
        dev_scores = classify.score_many(model, X_dev)
        dev_set = PairScoreSet(dev_scores, y_dev > 0)
        dev_report = evalstats.eer_threshold(dev_set)
        stage = "eval_rates"
        X_eval, y_eval = _pair_matrix(split.eval_pairs, fmap, config, cfg.phase_conjugate)
        eval_scores = classify.score_many(model, X_eval)
        eval_set = PairScoreSet(eval_scores, y_eval > 0)
        eval_report = evalstats.rates_at(eval_set, dev_report.tau)
    except Exception as exc:
        return {
            "config": config.to_dict(), "config_fp": config.fingerprint(),
            "split": split_index, "status": "error",
            "error": f"[{stage}] {exc}",
        }
    record = {
        "config": config.to_dict(), "config_fp": config.fingerprint(),
        "split": split_index, "split_seed": split.seed,
        "split_list_fp": experiment.split_fingerprint,
        "status": "ok",
        "hp": hp.to_dict(),
        "cv_eer": None if np.isnan(cv_eer) else float(cv_eer),
        "grid_failures": len(failures),
        "converged": bool(model.converged),
        "dev": dev_report.to_dict(),
        "eval": eval_report.to_dict(),
    }
    if cfg.retain_scores:
        record["scores"] = {
            "dev": [[float(s), bool(g)] for s, g in zip(dev_scores, y_dev > 0)],
            "eval": [[float(s), bool(g)] for s, g in zip(eval_scores, y_eval > 0)],
        }
    return record


_WORKER_STATE = {}


def _worker_run(args):
    config_dict, split_index = args
    experiment = _WORKER_STATE["experiment"]
    config = PipelineConfig.from_dict(config_dict)
    return run_single(config, experiment.splits[split_index], split_index, experiment)


def run_config(config: PipelineConfig, experiment: Experiment, store: ResultStore,
               jobs=None):
    """Run one configuration over all splits; returns (summary, records)."""
    cfg = experiment.cfg
    jobs = jobs if jobs is not None else cfg.jobs
    fp = config.fingerprint()
    missing = [i for i in range(cfg.n_splits) if not store.have(fp, i)]
    if missing:
        if jobs > 1 and len(missing) > 1:
            experiment.normalized(config)        # warm caches before forking
            _WORKER_STATE["experiment"] = experiment
            ctx = multiprocessing.get_context("fork")
            with concurrent.futures.ProcessPoolExecutor(jobs, mp_context=ctx) as pool:
                results = list(pool.map(_worker_run,
                                        [(config.to_dict(), i) for i in missing]))
        else:
            results = [run_single(config, experiment.splits[i], i, experiment)
                       for i in missing]
        for rec in sorted(results, key=lambda r: r["split"]):
            store.append(rec)
    records = store.records_for(fp)
    ok = [r for r in records if r["status"] == "ok"]
    if len(ok) < 0.9 * cfg.n_splits:
        errors = [r["error"] for r in records if r["status"] == "error"][:3]
        raise RunError("run_config",
                       f"only {len(ok)}/{cfg.n_splits} runs succeeded; first errors: {errors}")
    summary = ConfigSummary.from_hters([r["eval"]["hter"] for r in ok])
    return summary, records


def greedy_optimize(experiment: Experiment, store: ResultStore, jobs=None):
    """Stage-by-stage greedy selection by best median eval HTER.

    Statistical tests are advisory: the Kruskal-Wallis omnibus is always
    reported and Dunn's matrix added when p <= 0.05, but selection is by
    median alone. Already-run configurations are never re-executed.
    """
    cfg = experiment.cfg
    current = cfg.baseline
    stages_out = []
    seen_fps = set()

    def evaluate(config):
        summary, records = run_config(config, experiment, store, jobs)
        seen_fps.add(config.fingerprint())
        hters = [r["eval"]["hter"] for r in records if r["status"] == "ok"]
        return summary, hters

    for stage in STAGES:
        menu = list(cfg.menus[stage])
        incumbent_tag = current.stage_tag(stage)
        candidates = []
        for tag in menu:
            config = current.with_stage(stage, tag)
            summary, hters = evaluate(config)
            candidates.append({"tag": tag, "config": config, "summary": summary,
                               "hters": hters})
        tests = stage_tests([c["hters"] for c in candidates]) if len(candidates) > 1 else None
        incumbent_median = next((c["summary"].median for c in candidates
                                 if c["tag"] == incumbent_tag), None)
        best = min(
            enumerate(candidates),
            key=lambda kv: (kv[1]["summary"].median,
                            0 if kv[1]["tag"] == incumbent_tag else 1,
                            kv[0]))[1]
        improved = (incumbent_median is not None
                    and best["summary"].median < incumbent_median
                    and best["tag"] != incumbent_tag)
        current = current.with_stage(stage, best["tag"])
        stages_out.append({
            "stage": stage,
            "incumbent": incumbent_tag,
            "chosen": best["tag"],
            "improved": bool(improved),
            "candidates": [{"tag": c["tag"],
                            "config_fp": c["config"].fingerprint(),
                            "config": c["config"].to_dict(),
                            "summary": c["summary"].to_dict()} for c in candidates],
            "kruskal_wallis": None if tests is None else
                {"h": tests.h_statistic, "p": tests.kw_pvalue},
            "dunn": None if tests is None or tests.pairwise is None else
                [[None if np.isnan(x) else float(x) for x in row]
                 for row in tests.pairwise],
        })
    report = {
        "baseline": cfg.baseline.to_dict(),
        "final": current.to_dict(),
        "final_fp": current.fingerprint(),
        "stages": stages_out,
        "n_configs": len(seen_fps),
        "n_runs": len(seen_fps) * cfg.n_splits,
        "n_splits": cfg.n_splits,
        "split_list_fp": experiment.split_fingerprint,
    }
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "greedy_report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(os.path.join(cfg.out_dir, "chosen_pipeline.json"), "w") as fh:
        json.dump(current.to_dict(), fh, indent=2, sort_keys=True)
    return report


def median_run_record(records, seed):
    """Pick one successful run among those closest to the median HTER,
    deterministically from the given seed."""
    ok = sorted((r for r in records if r["status"] == "ok"), key=lambda r: r["split"])
    if not ok:
        raise RunError("report", "no successful runs")
    hters = np.array([r["eval"]["hter"] for r in ok])
    med = np.median(hters)
    gaps = np.abs(hters - med)
    candidates = [r for r, g in zip(ok, gaps) if g == gaps.min()]
    rng = np.random.Generator(np.random.PCG64(seed))
    return candidates[int(rng.integers(len(candidates)))]
