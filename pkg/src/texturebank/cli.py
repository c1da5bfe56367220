"""Command-line interface.

Commands: extract, gmm-train, train, predict, segment, eval, synth, inspect.
Configuration comes from an optional key=value file plus flags (flags win).
The feature cache directory can also be set via TEXTUREBANK_CACHE.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .container import ModelContainer, read_container_file
from .errors import TextureBankError
from .evaluate import class_normalized_accuracy, mean_ap_11pt, per_pixel_accuracy
from .field import read_tensor_file
from .image import atomic_write_bytes, read_pnm, read_pnm_raw, write_pnm_raw
from .manifest import read_manifest, split_records
from .net import read_weights_file
from .pipeline import (
    FeatureCache,
    PipelineConfig,
    build_extractor,
    fields_for_record,
    load_model,
    predict_records,
    save_model,
    segment_image,
    train_codebook,
    train_model,
    collect_codebook_samples,
)
from .regions import proposals_from_labelmap, read_rle_proposals, segment_proposals_io
from .synth import SyntheticSpec, generate_dataset

MEASURES = ("acc", "ppacc", "ppacc-global", "map11")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--extractor", choices=("sift", "net"))
    p.add_argument("--weights", help="FBNK weights file for --extractor net")
    p.add_argument("--tap", help="conv layer index for the net tap: N[:pre|post]")
    p.add_argument(
        "--scales", help="scale ladder as sMin:sMax:step (exponents of 2)", default=None
    )
    p.add_argument("--encoder", choices=("fv", "vlad"))
    p.add_argument("--k", type=int, help="codebook size")
    p.add_argument("--pca", type=int, help="PCA width (0 disables)")
    p.add_argument("--sample-budget", type=int)
    p.add_argument("--gmm-max-iter", type=int)
    p.add_argument("--svm-epochs", type=int)


def _config_from_args(args) -> PipelineConfig:
    overrides: dict = {
        "seed": args.seed,
        "threads": args.threads,
        "extractor": args.extractor,
        "weights": args.weights,
        "encoder": args.encoder,
        "k": args.k,
        "pca_dim": args.pca,
        "sample_budget": getattr(args, "sample_budget", None),
        "gmm_max_iter": getattr(args, "gmm_max_iter", None),
        "svm_max_epochs": getattr(args, "svm_epochs", None),
    }
    if args.tap:
        token = args.tap
        post = False
        if ":" in token:
            token, mode = token.split(":", 1)
            if mode not in ("pre", "post"):
                raise TextureBankError(f"tap mode must be pre or post, got {mode!r}")
            post = mode == "post"
        overrides["tap_index"] = int(token)
        overrides["tap_after_relu"] = post
    if args.scales:
        parts = args.scales.split(":")
        if len(parts) != 3:
            raise TextureBankError("--scales expects sMin:sMax:step")
        overrides["s_min"], overrides["s_max"], overrides["s_step"] = (
            float(v) for v in parts
        )
    return PipelineConfig.from_sources(args.config, **overrides)


def _cache_from(args, config: PipelineConfig) -> FeatureCache | None:
    root = getattr(args, "cache", None) or os.environ.get("TEXTUREBANK_CACHE")
    if not root:
        return None
    cache = FeatureCache(root, config)
    cache.check_meta(force=getattr(args, "force", False))
    return cache


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        classes=tuple(args.classes.split(",")),
        size=args.size,
        train=args.train,
        val=args.val,
        test=args.test,
        seed=args.seed if args.seed is not None else 0,
    )
    manifest = generate_dataset(spec, args.out)
    print(f"wrote {manifest}")
    return 0


def cmd_extract(args) -> int:
    config = _config_from_args(args)
    cache = _cache_from(args, config)
    if cache is None:
        raise TextureBankError("extract needs --cache or TEXTUREBANK_CACHE")
    records = read_manifest(args.manifest)
    extractor, _ = build_extractor(config)
    n_files = 0
    for record in records:
        fields = fields_for_record(record, config, extractor, cache=None)
        n_files += len(cache.store(record.image, fields))
    print(f"extracted {n_files} tensor files for {len(records)} images into {cache.root}")
    return 0


def cmd_gmm_train(args) -> int:
    config = _config_from_args(args)
    cache = _cache_from(args, config)
    records = split_records(read_manifest(args.manifest), "train")
    if not records:
        raise TextureBankError("empty split: manifest has no train records")
    extractor, _ = build_extractor(config)
    samples = collect_codebook_samples(records, config, extractor, cache)
    book = train_codebook(samples, config)
    model = ModelContainer(
        gmm=book.gmm,
        pca=book.pca,
        kmeans_centers=book.kmeans_centers,
        metadata={"encoder": config.encoder, "config": config.to_dict()},
    )
    if book.em_trace is not None:
        model.metadata["em_log_likelihoods"] = [float(v) for v in book.em_trace]
    save_model(args.out, model)
    print(f"wrote codebook {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    cache = _cache_from(args, config)
    records = read_manifest(args.manifest)
    model = train_model(records, config, cache=cache)
    save_model(args.out, model)
    trace = model.metadata.get("em_log_likelihoods")
    if trace:
        print(f"em: {len(trace)} evaluations, final log-likelihood {trace[-1]:.3f}")
    print(f"classes: {','.join(model.svm.classes)}")
    print(f"wrote model {args.out}")
    return 0


def cmd_predict(args) -> int:
    model, config = load_model(args.model)
    config = _merge_runtime_flags(config, args)
    cache = _cache_from(args, config)
    records = read_manifest(args.manifest)
    if args.split:
        records = split_records(records, args.split)
    scores, labels = predict_records(records, model, config, cache=cache)
    rows = []
    for record, row, label in zip(records, scores, labels):
        rows.append(
            {
                "image": str(record.image),
                "label": label,
                "scores": {c: float(s) for c, s in zip(model.svm.classes, row)},
            }
        )
    payload = json.dumps({"classes": list(model.svm.classes), "items": rows}, indent=2)
    if args.out:
        atomic_write_bytes(args.out, payload.encode())
        print(f"wrote predictions {args.out}")
    else:
        print(payload)
    return 0


def _merge_runtime_flags(config: PipelineConfig, args) -> PipelineConfig:
    import dataclasses

    updates = {}
    if getattr(args, "threads", None):
        updates["threads"] = args.threads
    return dataclasses.replace(config, **updates) if updates else config


def cmd_segment(args) -> int:
    model, config = load_model(args.model)
    config = _merge_runtime_flags(config, args)
    if args.superpixels:
        import dataclasses

        config = dataclasses.replace(config, superpixel_count=args.superpixels)
        proposals = None
    elif args.proposals:
        proposals = segment_proposals_io(args.proposals)
    else:
        raise TextureBankError("segment needs --proposals FILE or --superpixels N")
    img = read_pnm(args.image)
    label_map, table = segment_image(img, model, config, proposals=proposals)
    write_pnm_raw(args.out, label_map.labels.astype(np.uint16), maxval=65535)
    score_path = Path(args.out).with_suffix(".scores.json")
    atomic_write_bytes(
        score_path,
        json.dumps(
            {"classes": list(model.svm.classes), "proposals": table}, indent=2
        ).encode(),
    )
    print(f"wrote label map {args.out} and score table {score_path}")
    return 0


def cmd_eval(args) -> int:
    if args.measure not in MEASURES:
        raise TextureBankError(f"unknown measure {args.measure!r}; valid: {MEASURES}")
    records = read_manifest(args.manifest)
    if args.split:
        records = split_records(records, args.split)
    if args.measure in ("ppacc", "ppacc-global"):
        report = _eval_pixels(args, records)
    else:
        with open(args.predictions) as fh:
            pred = json.load(fh)
        items = pred["items"]
        if len(items) != len(records):
            raise TextureBankError(
                f"{len(items)} predictions vs {len(records)} manifest records"
            )
        if args.measure == "acc":
            report = class_normalized_accuracy(
                [it["label"] for it in items], [r.labels[0] for r in records]
            )
        else:
            classes = pred["classes"]
            scores = {
                c: np.asarray([it["scores"][c] for it in items]) for c in classes
            }
            truth = [set(r.labels) for r in records]
            report = mean_ap_11pt(scores, truth)
    base = Path(args.out)
    atomic_write_bytes(base.with_suffix(".txt"), report.to_text().encode())
    atomic_write_bytes(base.with_suffix(".json"), report.to_json().encode())
    print(report.to_text(), end="")
    print(f"wrote {base.with_suffix('.txt')} and {base.with_suffix('.json')}")
    return 0


def _eval_pixels(args, records):
    from .regions import LabelMap

    if not args.pred_maps:
        raise TextureBankError("pixel measures need --pred-maps DIR of predicted label maps")
    mode = "global" if args.measure == "ppacc-global" else "classNormalized"
    pred_all = []
    truth_all = []
    for r in records:
        if r.mask is None:
            raise TextureBankError(f"record {r.image} has no ground-truth mask")
        pred_path = Path(args.pred_maps) / (Path(r.image).stem + ".pgm")
        pred_arr, _ = read_pnm_raw(pred_path)
        truth_arr, _ = read_pnm_raw(r.mask)
        pred_all.append(pred_arr.astype(np.int32))
        truth_all.append(truth_arr.astype(np.int32))
    pred = np.concatenate([p.ravel() for p in pred_all])[None, :]
    truth = np.concatenate([t.ravel() for t in truth_all])[None, :]
    return per_pixel_accuracy(pred, truth, mode=mode)


def cmd_inspect(args) -> int:
    path = Path(args.path)
    head = path.read_bytes()[:4]
    if head == b"FFLD":
        f = read_tensor_file(path)
        print(
            f"tensor field: {f.dim}x{f.grid_h}x{f.grid_w} stride={f.stride} "
            f"offset={f.offset} scale={f.scale} name={f.name!r}"
        )
    elif head == b"TBMK":
        model = read_container_file(path)
        parts = []
        if model.gmm is not None:
            parts.append(f"gmm(K={model.gmm.k}, D={model.gmm.dim})")
        if model.pca is not None:
            parts.append(f"pca({model.pca.in_dim}->{model.pca.out_dim})")
        if model.kmeans_centers is not None:
            parts.append(f"kmeans{model.kmeans_centers.shape}")
        if model.svm is not None:
            parts.append(f"svm({len(model.svm.classes)} classes, dim={model.svm.dim})")
        print("model container: " + ", ".join(parts))
        print(f"metadata: {json.dumps(model.metadata)[:400]}")
    elif head == b"FBNK":
        net = read_weights_file(path)
        print(f"weights: {len(net.layers)} layers, convs at {net.conv_indices()}")
    else:
        print(f"unrecognized magic {head!r}")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texturebank",
        description="Orderless filter-bank pooling for texture recognition and segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render the procedural texture benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default="hstripes,vstripes,checker,noise,blobs")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--train", type=int, default=100)
    p.add_argument("--val", type=int, default=0)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("extract", help="write dense features as tensor files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", help="output directory (or TEXTUREBANK_CACHE)")
    p.add_argument("--force", action="store_true", help="overwrite a mismatched cache")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("gmm-train", help="train the codebook (GMM/PCA/k-means) only")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache")
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_gmm_train)

    p = sub.add_parser("train", help="train codebook and classifiers")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cache")
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="score images with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--out")
    p.add_argument("--cache")
    p.add_argument("--force", action="store_true")
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("segment", help="classify proposals and paste a label map")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--proposals", help="RLE proposal file or 16-bit label-map PGM")
    p.add_argument("--superpixels", type=int, help="generate N superpixels instead")
    p.add_argument("--out", required=True, help="output label-map PGM path")
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("eval", help="evaluate predictions against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--predictions", help="JSON from `predict`")
    p.add_argument("--pred-maps", help="directory of predicted label maps (pixel measures)")
    p.add_argument("--measure", required=True)
    p.add_argument("--out", required=True, help="report path stem (.txt/.json)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("inspect", help="describe a binary artifact")
    p.add_argument("path")
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except TextureBankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
