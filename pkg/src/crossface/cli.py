"""Command-line interface for dataset synthesis, runs, and reports."""

import argparse
import json
import os
import sys

from . import reporting
from .config import (PipelineConfig, load_experiment_config)
from .dataset import (DomainShiftParams, ingest_manifest, save_dataset,
                      synthesize_dataset, derive_seed)
from .embedding import BUILTIN_EMBEDDERS, write_emb1
from .imaging import enhance, enhancement_of, normalize_geometry
from .orchestrator import (Experiment, ResultStore, greedy_optimize,
                           median_run_record, run_config)


def _add_common(p):
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--splits", type=int, default=None, help="override n_splits")
    p.add_argument("--grid", choices=["coarse", "full"], default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", default=None, help="override output directory")


def _load(args):
    cfg = load_experiment_config(args.config, overrides={
        "master_seed": args.seed, "n_splits": args.splits,
        "grid": args.grid, "jobs": args.jobs, "out_dir": args.out,
    })
    return cfg


def _store(cfg):
    return ResultStore(os.path.join(cfg.out_dir, "results.jsonl"))


def cmd_synth(args):
    shift = DomainShiftParams.from_dict(args.shift)
    samples = synthesize_dataset(args.subjects, args.seed, shift)
    manifest = save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples, manifest: {manifest}")


def cmd_ingest(args):
    samples = ingest_manifest(args.manifest)
    subjects = {s.subject_id for s in samples}
    print(f"ok: {len(samples)} samples, {len(subjects)} subjects")


def cmd_embed(args):
    cfg = _load(args)
    experiment = Experiment(cfg)
    method = enhancement_of(args.enhancement,
                            cfg.enhancement_params.get(args.enhancement))
    embedder = BUILTIN_EMBEDDERS[args.embedder]
    records = []
    for s in experiment.samples:
        face = enhance(normalize_geometry(s), method)
        records.append((s.sample_id, s.domain_tag, embedder(face).values))
    write_emb1(args.emb_out, args.embedder, records)
    print(f"wrote {len(records)} vectors to {args.emb_out}")


def _pipeline_from_args(cfg, args):
    base = cfg.baseline.to_dict()
    for stage in base:
        v = getattr(args, stage, None)
        if v is not None:
            base[stage] = v
    return PipelineConfig.from_dict(base)


def cmd_run(args):
    cfg = _load(args)
    experiment = Experiment(cfg)
    config = _pipeline_from_args(cfg, args)
    summary, _ = run_config(config, experiment, _store(cfg))
    print(json.dumps({"config": config.to_dict(), "summary": summary.to_dict()},
                     indent=2, sort_keys=True))


def cmd_greedy(args):
    cfg = _load(args)
    experiment = Experiment(cfg)
    report = greedy_optimize(experiment, _store(cfg))
    print(json.dumps({"final": report["final"], "n_configs": report["n_configs"],
                      "n_runs": report["n_runs"]}, indent=2, sort_keys=True))


def cmd_report(args):
    cfg = _load(args)
    path = os.path.join(cfg.out_dir, "greedy_report.json")
    with open(path) as fh:
        greedy_report = json.load(fh)
    text = reporting.report(_store(cfg), greedy_report, cfg.out_dir, cfg.master_seed)
    print(text)


def cmd_det(args):
    cfg = _load(args)
    store = _store(cfg)
    if args.pipeline:
        with open(args.pipeline) as fh:
            config = PipelineConfig.from_dict(json.load(fh))
    else:
        with open(os.path.join(cfg.out_dir, "chosen_pipeline.json")) as fh:
            config = PipelineConfig.from_dict(json.load(fh))
    rec = median_run_record(store.records_for(config.fingerprint()),
                            derive_seed(cfg.master_seed, 0xDE7, 0))
    pts = reporting._record_det_points(rec)
    if pts is None:
        print("no retained scores for this configuration", file=sys.stderr)
        return 1
    out = args.det_out or os.path.join(cfg.out_dir, "det.csv")
    reporting.write_det_csv(out, pts)
    print(f"wrote {out} (split {rec['split']}, HTER {rec['eval']['hter']:.5f})")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="crossface",
        description="Cross-domain face verification experiment framework")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--subjects", type=int, default=50)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--shift", default="default", help="none | default")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="write built-in embeddings to an EMB1 file")
    _add_common(p)
    p.add_argument("--embedder", choices=sorted(BUILTIN_EMBEDDERS), default="lbp")
    p.add_argument("--enhancement", default="none")
    p.add_argument("--emb-out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("run", help="run one pipeline configuration")
    _add_common(p)
    for stage in ("enhancement", "layer", "normalization", "combination", "classifier"):
        p.add_argument(f"--{stage}", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("greedy", help="greedy pipeline optimization")
    _add_common(p)
    p.set_defaults(func=cmd_greedy)

    p = sub.add_parser("report", help="render tables, CSVs and figures")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("det", help="export DET curve data for one configuration")
    _add_common(p)
    p.add_argument("--pipeline", default=None, help="pipeline JSON (default: chosen)")
    p.add_argument("--det-out", default=None)
    p.set_defaults(func=cmd_det)

    args = parser.parse_args(argv)
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
