"""Batch export of deep-layer activations to EMB1 files."""

import json
import os
from dataclasses import dataclass, field

from embexport import emb1, network, preprocess

VALID_LAYERS = ("fc6n", "fc7n", "fc8")


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportJob:
    manifest: str
    out_dir: str
    layers: tuple = VALID_LAYERS
    enhancement: str = "none"
    enhancement_params: dict = field(default_factory=dict)
    weights: str | None = None
    init_seed: int | None = None
    batch_size: int = 8

    def __post_init__(self):
        bad = [t for t in self.layers if t not in VALID_LAYERS]
        if bad:
            raise ExportError(f"invalid layer tags {bad}; valid: {list(VALID_LAYERS)}")
        if not self.layers:
            raise ExportError("no layer tags requested")
        if self.weights is None and self.init_seed is None:
            raise ExportError("either weights or an explicit init seed is required")


def export(job: ExportJob) -> dict:
    """Run the descriptor over all manifest samples; one EMB1 per layer.

    Returns {layer_tag: emb1_path}. A sidecar export_meta.json records
    the preprocessing so downstream consumers can reproduce it.
    """
    sources = preprocess.read_manifest(job.manifest)
    if not sources:
        raise ExportError(f"manifest {job.manifest} has no rows")
    method = preprocess.enhancement_of(job.enhancement, job.enhancement_params)
    model = network.build_model(job.weights, seed=job.init_seed)
    os.makedirs(job.out_dir, exist_ok=True)

    records = {layer: [] for layer in job.layers}
    for start in range(0, len(sources), job.batch_size):
        chunk = sources[start:start + job.batch_size]
        crops = [preprocess.enhance(preprocess.align_crop(s), method)
                 for s in chunk]
        taps = network.describe(model, crops, job.layers)
        for layer in job.layers:
            for src, vec in zip(chunk, taps[layer]):
                records[layer].append((src.sample_id, src.domain_tag, vec))

    paths = {}
    for layer in job.layers:
        path = os.path.join(job.out_dir, f"{layer}.emb1")
        emb1.write_emb1(path, layer, records[layer])
        paths[layer] = path

    meta = {
        "manifest": os.path.abspath(job.manifest),
        "n_samples": len(sources),
        "layers": {t: network.LAYER_DIMS[t] for t in job.layers},
        "enhancement": {"kind": method.kind, "params": method.params},
        "preprocessing": {
            "crop": "roi expanded 22% per side, eye-line rotation, "
                    "224x224 bilinear resample",
            "input": "RGB float32 minus per-channel mean",
            "mean_rgb": list(network.MEAN_RGB),
        },
        "weights": os.path.abspath(job.weights) if job.weights else None,
        "init_seed": job.init_seed,
    }
    with open(os.path.join(job.out_dir, "export_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return paths
