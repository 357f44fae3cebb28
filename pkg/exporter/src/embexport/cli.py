"""Command-line entry point mirroring the experiment side's `embed`."""

import argparse
import json
import sys

from embexport.export import ExportError, ExportJob, export


def build_parser():
    p = argparse.ArgumentParser(
        prog="embexport",
        description="Export deep-layer face descriptors to EMB1 files")
    p.add_argument("--manifest", required=True, help="manifest CSV path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--layers", default="fc6n,fc7n,fc8",
                   help="comma-separated layer tags (fc6n,fc7n,fc8)")
    p.add_argument("--enhancement", default="none",
                   help="enhancement tag applied before export "
                        "(none|retinex|ace|clahe)")
    p.add_argument("--enhancement-params", default="{}",
                   help="JSON object of enhancement parameter overrides")
    p.add_argument("--weights", default=None,
                   help="path to a state-dict weights file")
    p.add_argument("--init-seed", type=int, default=None,
                   help="random-init seed (testing only, instead of weights)")
    p.add_argument("--batch-size", type=int, default=8)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            manifest=args.manifest,
            out_dir=args.out,
            layers=tuple(t.strip() for t in args.layers.split(",") if t.strip()),
            enhancement=args.enhancement,
            enhancement_params=json.loads(args.enhancement_params),
            weights=args.weights,
            init_seed=args.init_seed,
            batch_size=args.batch_size,
        )
        paths = export(job)
    except (ExportError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for layer, path in sorted(paths.items()):
        print(f"wrote {layer} -> {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
