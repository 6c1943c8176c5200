"""Command-line pipelines tying the toolkit together.

Every subcommand stamps its artifacts with {tool_version, config_hash, seed}
and derives stage seeds from the root seed, so a rerun with the same inputs
and config reproduces every output byte for byte.
"""

import argparse
import csv
import functools
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, clustering, plots, seqmine, synth
from .config import PipelineConfig, artifact_stamp
from .data import load_chromosome, load_manifest, load_split, save_split, \
    stratified_split
from .errors import CliError, ToolError
from .features import banding_features, extract_patches, stack_features
from .morphology import longitudinal_axis
from .parallel import pmap
from .tokenizer import TokenizerParams, dump_tokens, encode, load_tokens, tokenize

_CONFIG_FLAGS = ("patch_size", "fg_min", "K", "K_over", "smooth_lambda",
                 "min_run", "d_pe", "ngram_order", "alpha", "threshold", "seed")


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--fg-min", type=float, dest="fg_min")
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--K-over", type=int, dest="K_over")
    p.add_argument("--lambda", type=float, dest="smooth_lambda")
    p.add_argument("--min-run", type=int, dest="min_run")
    p.add_argument("--D-pe", type=int, dest="d_pe")
    p.add_argument("--ngram-order", type=int, dest="ngram_order")
    p.add_argument("--alpha", type=float, dest="alpha")
    p.add_argument("--threshold", type=float, dest="threshold")
    p.add_argument("--seed", type=int, dest="seed")


def _config(args):
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_json(json.loads(Path(args.config).read_text()))
    else:
        cfg = PipelineConfig()
    overrides = {name: getattr(args, name) for name in _CONFIG_FLAGS
                 if getattr(args, name, None) is not None}
    return cfg.replace(**overrides)


def _tok_params(cfg, embeddings_path=None):
    return TokenizerParams(patch_size=cfg.patch_size, fg_min=cfg.fg_min,
                           smooth_lambda=cfg.smooth_lambda, min_run=cfg.min_run,
                           embeddings_path=embeddings_path)


def _embeddings_for(args, img):
    emb_dir = getattr(args, "embeddings_dir", None)
    if emb_dir is None:
        return None
    return str(Path(emb_dir) / f"{img.instance_id}.ksemb")


def _tokenize_one(img, model, cfg, emb_path):
    return tokenize(img, model, _tok_params(cfg, emb_path))


def _tokenize_all(images, model, cfg, args):
    worker = functools.partial(_run_tokenize_item, model=model, cfg=cfg)
    items = [(img, _embeddings_for(args, img)) for img in images]
    return pmap(worker, items)


def _run_tokenize_item(item, model, cfg):
    img, emb_path = item
    return _tokenize_one(img, model, cfg, emb_path)


def _pooled_vector(img, model, cfg, emb_path=None):
    grid = extract_patches(img, cfg.patch_size, cfg.fg_min)
    if emb_path is not None:
        from .features import import_embeddings
        feats = import_embeddings(emb_path, grid)
    else:
        feats = banding_features(img, grid)
    seq = tokenize(img, model, _tok_params(cfg, emb_path))
    return analysis.pool_features(feats, encode(seq, model, cfg.d_pe))


def _run_pooled_item(item, model, cfg):
    img, emb_path = item
    return _pooled_vector(img, model, cfg, emb_path)


def _pooled_all(images, model, cfg, args):
    worker = functools.partial(_run_pooled_item, model=model, cfg=cfg)
    items = [(img, _embeddings_for(args, img)) for img in images]
    return np.vstack(pmap(worker, items))


def _select(images, split, part):
    if split is None:
        return images
    wanted = split.train_ids if part == "train" else split.test_ids
    return [img for img in images if img.instance_id in wanted]


def _labels_by_id(images):
    return {img.instance_id: img.class_label for img in images}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args):
    cfg = _config(args)
    spec = synth.DatasetSpec(
        cases_male=args.male, cases_female=args.female, seed=cfg.seed,
        noise=synth.NoiseSpec(intensity_sigma=args.noise_sigma,
                              length_jitter=args.length_jitter,
                              bend_prob=args.bend_prob),
        abnormal_fraction=args.abnormal_fraction)
    manifest = synth.generate_dataset(spec, args.out,
                                      config_hash=cfg.config_hash())
    print(json.dumps({"manifest": str(manifest),
                      "instances": 46 * (args.male + args.female)}))
    return 0


def cmd_split(args):
    cfg = _config(args)
    try:
        r_train, r_test = (int(x) for x in args.ratio.split(":"))
    except ValueError:
        raise CliError(f"bad ratio {args.ratio!r}, expected like 90:10",
                       code="bad_ratio") from None
    images = load_manifest(args.manifest)
    split = stratified_split(images, (r_train, r_test), cfg.stage_seed("split"))
    save_split(split, args.out, extra=artifact_stamp(cfg))
    print(json.dumps({"train": len(split.train_ids), "test": len(split.test_ids)}))
    return 0


def cmd_fit(args):
    cfg = _config(args)
    images = load_manifest(args.manifest)
    if args.split:
        images = _select(images, load_split(args.split), "train")
    feats = []
    for img in images:
        grid = extract_patches(img, cfg.patch_size, cfg.fg_min)
        emb = _embeddings_for(args, img)
        if emb is not None:
            from .features import import_embeddings
            feats.append(import_embeddings(emb, grid))
        else:
            feats.append(banding_features(img, grid))
    stack = stack_features(feats)
    over = clustering.fit_kmeans(stack, cfg.K_over, cfg.stage_seed("fit"))
    model = clustering.overcluster_merge(over, cfg.K, stack) \
        if cfg.K < cfg.K_over else over
    clustering.save_model(model, args.out, extra=artifact_stamp(cfg))
    print(json.dumps({"model": args.out, "patches": int(stack.shape[0]),
                      "K": model.K}))
    return 0


def cmd_tokenize(args):
    cfg = _config(args)
    images = load_manifest(args.manifest)
    model = clustering.load_model(args.model)
    seqs = _tokenize_all(images, model, cfg, args)
    dump_tokens(seqs, args.out, stamp=artifact_stamp(cfg))
    print(json.dumps({"tokens": args.out, "instances": len(seqs)}))
    return 0


def cmd_mine(args):
    cfg = _config(args)
    images = load_manifest(args.manifest)
    labels = _labels_by_id(images)
    rows = load_tokens(args.tokens)
    if args.split:
        split = load_split(args.split)
        rows = [r for r in rows if r[0] in split.train_ids]
    labeled = []
    for instance_id, interior, _ in rows:
        if labels.get(instance_id) is None:
            raise CliError(f"{instance_id}: no class label in manifest",
                           code="missing_label")
        labeled.append((labels[instance_id], interior))
    bank = seqmine.build_pattern_bank(labeled, args.min_support)
    seqmine.save_bank(bank, args.out_bank, extra=artifact_stamp(cfg))
    ngram = seqmine.fit_ngram([seq for _, seq in labeled],
                              cfg.ngram_order, cfg.alpha)
    seqmine.save_ngram(ngram, args.out_ngram, extra=artifact_stamp(cfg))
    print(json.dumps({"bank": args.out_bank, "ngram": args.out_ngram,
                      "classes": len(bank.classes)}))
    return 0


def cmd_train(args):
    cfg = _config(args)
    images = load_manifest(args.manifest)
    if args.split:
        images = _select(images, load_split(args.split), "train")
    model = clustering.load_model(args.model)
    x = _pooled_all(images, model, cfg, args)
    y = np.array([img.class_label for img in images])
    clf = analysis.train_linear(x, y, analysis.TrainParams(
        seed=cfg.stage_seed("train")))
    analysis.save_classifier(clf, args.out, extra=artifact_stamp(cfg))
    print(json.dumps({"classifier": args.out,
                      "final_loss": clf.loss_history[-1]}))
    return 0


def cmd_classify(args):
    cfg = _config(args)
    images = load_manifest(args.manifest)
    if args.split:
        images = _select(images, load_split(args.split), args.part)
    model = clustering.load_model(args.model)
    if args.mode == "pattern":
        if not args.bank:
            raise CliError("--bank is required for pattern mode",
                           code="missing_argument")
        bank = seqmine.load_bank(args.bank)
        seqs = _tokenize_all(images, model, cfg, args)
        results = [analysis.classify_by_pattern(seq, bank) for seq in seqs]
    else:
        if not args.classifier:
            raise CliError("--classifier is required for linear mode",
                           code="missing_argument")
        clf = analysis.load_classifier(args.classifier)
        x = _pooled_all(images, model, cfg, args)
        probs = clf.predict_proba(x)
        results = [(int(p.argmax()), float(p.max())) for p in probs]
    rows = [(img.instance_id,
             "" if img.class_label is None else img.class_label,
             label, score)
            for img, (label, score) in zip(images, results)]
    with open(args.out, "w", newline="") as fh:
        stamp = artifact_stamp(cfg)
        fh.write(f"# kseq tool_version={stamp['tool_version']} "
                 f"config_hash={stamp['config_hash']} seed={stamp['seed']}\n")
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "actual", "predicted", "score"])
        writer.writerows(rows)
    labeled = [(r[1], r[2]) for r in rows if r[1] != ""]
    out = {"predictions": args.out, "instances": len(rows)}
    if labeled:
        out["accuracy"] = sum(a == p for a, p in labeled) / len(labeled)
    print(json.dumps(out))
    return 0


def cmd_detect(args):
    cfg = _config(args)
    model = clustering.load_model(args.model)
    bank = seqmine.load_bank(args.bank)
    if args.image:
        images = [load_chromosome(args.image, mask_path=args.mask)]
    elif args.manifest:
        images = load_manifest(args.manifest)
    else:
        raise CliError("detect needs --image or --manifest",
                       code="missing_argument")
    seqs = _tokenize_all(images, model, cfg, args)
    results = {}
    for img, seq in zip(images, seqs):
        label, _ = analysis.classify_by_pattern(seq, bank)
        det = analysis.detect_abnormal(seq, bank, label, cfg.threshold)
        entry = det.to_json()
        entry["predicted_class"] = label
        results[img.instance_id] = entry
    obj = {"version": 1, **artifact_stamp(cfg), "threshold": cfg.threshold,
           "results": results}
    Path(args.out).write_text(json.dumps(obj, sort_keys=True) + "\n")
    print(json.dumps({"detections": args.out, "instances": len(results),
                      "abnormal": sum(1 for r in results.values()
                                      if r["verdict"] == "abnormal")}))
    return 0


def cmd_sweep(args):
    cfg = _config(args)
    images = load_manifest(args.manifest)
    model = clustering.load_model(args.model)
    bank = seqmine.load_bank(args.bank)
    truth = json.loads(Path(args.truth).read_text())["instances"]
    seqs = _tokenize_all(images, model, cfg, args)
    labeled = []
    for img, seq in zip(images, seqs):
        entry = truth.get(img.instance_id)
        if entry is None:
            raise CliError(f"{img.instance_id}: missing from ground truth",
                           code="missing_truth")
        labeled.append((seq, entry["mutation"] is not None))
    thresholds = [float(t) for t in args.thresholds.split(",")]
    grid = [{"threshold": t} for t in thresholds]
    points = analysis.sweep(labeled, bank, grid)
    front = analysis.pareto_front(points)
    analysis.write_sweep_csv(points, args.out, stamp=artifact_stamp(cfg))
    if args.plot:
        plots.sweep_scatter(points, front, args.plot)
    print(json.dumps({"metrics": args.out,
                      "pareto": [[p.fnr, p.fpr] for p in front]}))
    return 0


def cmd_axis(args):
    cfg = _config(args)
    img = load_chromosome(args.image, mask_path=args.mask)
    axis = longitudinal_axis(img.mask)
    plots.axis_overlay(img, axis, args.out)
    if args.json:
        obj = {"version": 1, **artifact_stamp(cfg),
               "points": [list(p) for p in axis.points],
               "arclengths": list(axis.arclengths)}
        Path(args.json).write_text(json.dumps(obj) + "\n")
    print(json.dumps({"overlay": args.out, "points": len(axis.points),
                      "arclength": axis.length}))
    return 0


def cmd_eval(args):
    cfg = _config(args)
    images = load_manifest(args.manifest)
    per_class = {}
    cases = {}
    for img in images:
        if img.class_label is not None:
            per_class[img.class_label] = per_class.get(img.class_label, 0) + 1
        cases.setdefault(img.case_id, []).append(img.class_label)
    males = sum(1 for labels in cases.values() if 23 in labels)
    females = len(cases) - males
    identities = {
        "x_equals_2f_plus_m": per_class.get(22, 0) == 2 * females + males,
        "y_equals_m": per_class.get(23, 0) == males,
        "total_equals_46_cases": len(images) == 46 * len(cases),
    }
    report = {"version": 1, **artifact_stamp(cfg),
              "instances": len(images), "cases": len(cases),
              "males": males, "females": females,
              "per_class": {str(k): v for k, v in sorted(per_class.items())},
              "identities": identities}
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True) + "\n")
    if args.plot:
        plots.class_counts_chart(per_class, args.plot)
    print(json.dumps({"instances": len(images), "cases": len(cases),
                      "identities": identities}))
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="kseq",
        description="chromosome tokenization and sequence-mining toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--male", type=int, required=True)
    p.add_argument("--female", type=int, required=True)
    p.add_argument("--abnormal-fraction", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--length-jitter", type=float, default=0.0)
    p.add_argument("--bend-prob", type=float, default=0.0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("split", help="stratified train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio", default="90:10")
    _add_config_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit", help="fit the token vocabulary (k-means + merge)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split")
    p.add_argument("--embeddings-dir", dest="embeddings_dir")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tokenize", help="tokenize every manifest instance")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings-dir", dest="embeddings_dir")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("mine", help="mine the pattern bank and n-gram model")
    p.add_argument("--tokens", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split")
    p.add_argument("--min-support", type=float, default=0.3)
    p.add_argument("--out-bank", required=True)
    p.add_argument("--out-ngram", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", help="train the linear classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split")
    p.add_argument("--embeddings-dir", dest="embeddings_dir")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify instances")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("pattern", "linear"), default="pattern")
    p.add_argument("--bank")
    p.add_argument("--classifier")
    p.add_argument("--split")
    p.add_argument("--part", choices=("train", "test"), default="test")
    p.add_argument("--embeddings-dir", dest="embeddings_dir")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("detect", help="flag structural abnormalities")
    p.add_argument("--manifest")
    p.add_argument("--image")
    p.add_argument("--mask")
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--embeddings-dir", dest="embeddings_dir")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="threshold sweep with FNR/FPR metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--thresholds", default="0,1,2,3")
    p.add_argument("--embeddings-dir", dest="embeddings_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("axis", help="longitudinal-axis overlay for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--mask")
    p.add_argument("--out", required=True)
    p.add_argument("--json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_axis)

    p = sub.add_parser("eval", help="dataset statistics report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--plot")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ToolError as exc:
        print(json.dumps({"error": exc.to_json()}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
