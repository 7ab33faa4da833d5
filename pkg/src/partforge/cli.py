"""partforge command line: data synthesis, training, generation, evaluation.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training
divergence. Every run directory gets a resolved-config echo and a
manifest of inputs/outputs; nothing ever mutates a previous run.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import voxb
from .assembler import (
    assemble,
    eval_assembly,
    predict_transforms,
    sweep_quality,
    train_assembler,
    write_sweep_csv,
)
from .config import ConfigError, apply_overrides, load_config, prepare_run_dir, write_run_manifest
from .genops import DegenerateSample, ModelBundle, load_generated, sample_shape, save_generated
from .metrics import (
    EvalReport,
    connectivity_rate,
    inception_score,
    symmetry_report,
    write_rows_csv,
)
from .partgen import TrainingDivergence, train_part_generator
from .seeds import derive_seed
from .segtransfer import seg_eval, train_projector
from .synthdata import build_corpus, get_category, load_corpus
from .voxgrid import PartTransform

from . import plots


class DataError(RuntimeError):
    """Missing or malformed data/model files (exit code 2)."""


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--category", help="shape category (chair/plane/lamp)")
    p.add_argument("--resolution", type=int, help="grid resolution")
    p.add_argument("--latent-dim", type=int, help="per-part latent size")
    p.add_argument("--threads", type=int, help="torch thread count")
    p.add_argument("--out", help="output/run directory (must be new or empty)")
    p.add_argument("--runs", help="runs root (else $PARTFORGE_RUNS or config)")


def _add_train_flags(p):
    p.add_argument("--batch-size", type=int)
    p.add_argument("--vae-epochs", type=int)
    p.add_argument("--gan-epochs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--critic-steps", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--base-channels", type=int)


def build_parser():
    parser = CliParser(prog="partforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--n-train", type=int, default=512)
    p.add_argument("--n-test", type=int, default=128)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train-partgen", help="train per-part VAE-GAN generators")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="dataset root (contains train/)")
    p.add_argument("--part", default="all", help="part label or 'all'")
    p.set_defaults(func=cmd_train_partgen)

    p = sub.add_parser("train-assembler", help="train the part assembler")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="neg-anchor", choices=["neg-anchor", "one-hot"])
    p.add_argument("--pairs-per-shape", type=int, default=2)
    p.add_argument("--noise-rate", type=float, default=0.02)
    p.set_defaults(func=cmd_train_assembler)

    p = sub.add_parser("train-projector", help="train the segmentation projector")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True, help="directory with generator/assembler checkpoints")
    p.set_defaults(func=cmd_train_projector)

    p = sub.add_parser("generate", help="sample shapes from the trained model")
    _add_common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--anchor", help="anchor part label (default: per-shape draw)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("assemble", help="re-assemble the parts of a labeled volume")
    _add_common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--input", required=True, help="labeled .voxb file")
    p.add_argument("--anchor", help="anchor part label (default: largest part)")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("edit", help="edit a generated shape's anchor part and re-assemble")
    _add_common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--input", required=True, help="basename of a .voxb/.json pair")
    p.add_argument("--anchor", required=True, help="part label to edit and hold fixed")
    p.add_argument("--scale", default="1,1,1", help="sx,sy,sz")
    p.add_argument("--translate", default="0,0,0", help="tx,ty,tz in voxels")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval-symmetry", help="symmetry table over generated shapes")
    _add_common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--n", type=int, default=100)
    p.set_defaults(func=cmd_eval_symmetry)

    p = sub.add_parser("eval-assembly", help="assembly quality sweeps")
    _add_common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=16, help="held-out shapes per sweep point")
    p.set_defaults(func=cmd_eval_assembly)

    p = sub.add_parser("eval-connectivity", help="connectivity correctness rate")
    _add_common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--n", type=int, default=100)
    p.set_defaults(func=cmd_eval_connectivity)

    p = sub.add_parser("eval-diversity", help="clustered-classifier inception score")
    _add_common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--k", type=int, default=8)
    p.set_defaults(func=cmd_eval_diversity)

    p = sub.add_parser("eval-seg", help="segmentation-transfer IoU table")
    _add_common(p)
    p.add_argument("--models", required=True, help="directory that also holds projector.pt")
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=64)
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("serve", help="run the local editing HTTP service")
    _add_common(p)
    p.add_argument("--models", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8642)
    p.add_argument("--static", help="directory with the built editor UI")
    p.set_defaults(func=cmd_serve)

    return parser


def resolve_config(args):
    config = load_config(getattr(args, "config", None))
    overrides = {
        "seed": getattr(args, "seed", None),
        "category": getattr(args, "category", None),
        "resolution": getattr(args, "resolution", None),
        "latent_dim": getattr(args, "latent_dim", None),
        "threads": getattr(args, "threads", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.vae_epochs": getattr(args, "vae_epochs", None),
        "train.gan_epochs": getattr(args, "gan_epochs", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.critic_steps": getattr(args, "critic_steps", None),
        "train.learning_rate": getattr(args, "learning_rate", None),
        "train.base_channels": getattr(args, "base_channels", None),
        "paths.runs": getattr(args, "runs", None),
    }
    return apply_overrides(config, overrides)


def _load_split(data_root, split):
    path = Path(data_root) / split
    if not (path / "manifest.json").exists():
        raise DataError(f"no {split} split at {path} (missing manifest.json)")
    try:
        return load_corpus(path)
    except (OSError, ValueError, voxb.VoxbError) as exc:
        raise DataError(f"failed loading corpus {path}: {exc}") from exc


def load_bundle(models_dir):
    models_dir = Path(models_dir)
    assembler_path = None
    for mode in ("neg-anchor", "one-hot"):
        candidate = models_dir / f"assembler_{mode}.pt"
        if candidate.exists():
            assembler_path = candidate
            break
    if assembler_path is None:
        raise DataError(f"no assembler checkpoint under {models_dir}")
    try:
        from .models import load_checkpoint

        meta = load_checkpoint(assembler_path, "assembler")["meta"]
        category = get_category(meta["category"])
        generators = {}
        for label in category.labels:
            gpath = models_dir / f"partgen_{label}.pt"
            if not gpath.exists():
                raise DataError(f"missing generator checkpoint {gpath}")
            generators[label] = gpath
        return ModelBundle.load(generators, assembler_path)
    except (ValueError, RuntimeError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"failed loading models from {models_dir}: {exc}") from exc


def generate_shapes(bundle, n, seed):
    """Sample exactly n shapes, skipping degenerate draws deterministically."""
    shapes = []
    attempt = 0
    while len(shapes) < n:
        if attempt > 100 * n:
            raise DataError("too many degenerate samples; is the model trained?")
        try:
            shapes.append(sample_shape(bundle, derive_seed(seed, "gen", attempt)))
        except DegenerateSample:
            pass
        attempt += 1
    return shapes


def cmd_synth_data(args, config):
    run_dir = prepare_run_dir(config, "synth-data", args.out)
    build_corpus(config.category, run_dir, n_train=args.n_train, n_test=args.n_test,
                 seed=config.seed, resolution=config.resolution)
    outputs = sorted(str(p.relative_to(run_dir)) for p in run_dir.rglob("*") if p.is_file())
    write_run_manifest(run_dir, "synth-data", {"category": config.category,
                                               "seed": config.seed}, outputs)
    print(f"wrote dataset to {run_dir}")
    return 0


def cmd_train_partgen(args, config):
    corpus = _load_split(args.data, "train")
    run_dir = prepare_run_dir(config, "train-partgen", args.out)
    labels = corpus.category.labels if args.part == "all" else (args.part,)
    outputs = []
    for label in labels:
        if label not in corpus.category.labels:
            raise DataError(f"category {corpus.category.name!r} has no part {label!r}")
        try:
            result = train_part_generator(label, corpus, config.train_config(), run_dir)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        outputs += [result.checkpoint_path, result.curves_path]
        print(f"trained generator for {label!r} -> {result.checkpoint_path}")
    write_run_manifest(run_dir, "train-partgen", {"data": args.data}, outputs)
    return 0


def cmd_train_assembler(args, config):
    corpus = _load_split(args.data, "train")
    run_dir = prepare_run_dir(config, "train-assembler", args.out)
    result = train_assembler(corpus, config.train_config(), mode=args.mode,
                             out_dir=run_dir, pairs_per_shape=args.pairs_per_shape,
                             noise_rate=args.noise_rate)
    write_run_manifest(run_dir, "train-assembler", {"data": args.data, "mode": args.mode},
                       [result.checkpoint_path, result.curves_path])
    print(f"trained assembler ({args.mode}) -> {result.checkpoint_path}")
    return 0


def cmd_train_projector(args, config):
    corpus = _load_split(args.data, "train")
    bundle = load_bundle(args.models)
    run_dir = prepare_run_dir(config, "train-projector", args.out)
    result = train_projector(corpus, bundle, config.train_config(), out_dir=run_dir)
    write_run_manifest(run_dir, "train-projector",
                       {"data": args.data, "models": args.models},
                       [result.checkpoint_path, result.curves_path])
    print(f"trained projector -> {result.checkpoint_path}")
    return 0


def cmd_generate(args, config):
    bundle = load_bundle(args.models)
    run_dir = prepare_run_dir(config, "generate", args.out)
    outputs = []
    anchor = None
    if args.anchor is not None:
        if args.anchor not in bundle.labels:
            raise DataError(f"unknown anchor label {args.anchor!r}")
        anchor = bundle.labels.index(args.anchor)
    count = 0
    attempt = 0
    while count < args.n:
        if attempt > 100 * args.n:
            raise DataError("too many degenerate samples; is the model trained?")
        seed_i = derive_seed(config.seed, "gen", attempt)
        attempt += 1
        try:
            shape = sample_shape(bundle, seed_i, anchor=anchor)
        except (DegenerateSample, ValueError):
            continue
        base = run_dir / f"{count:04d}"
        save_generated(shape, base, seed=seed_i)
        outputs += [base.with_suffix(".voxb"), base.with_suffix(".json")]
        count += 1
    write_run_manifest(run_dir, "generate", {"models": args.models, "n": args.n}, outputs)
    print(f"generated {args.n} shapes in {run_dir}")
    return 0


def _read_labeled(path):
    try:
        return voxb.read_voxb(path)
    except (OSError, voxb.VoxbError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def cmd_assemble(args, config):
    bundle = load_bundle(args.models)
    grid = _read_labeled(args.input)
    if tuple(grid.label_names) != bundle.labels:
        raise DataError(f"input labels {grid.label_names} do not match model "
                        f"{bundle.labels}")
    parts = [grid.part(k + 1) for k in range(grid.num_parts)]
    counts = [p.occupied_count() for p in parts]
    if args.anchor is not None:
        if args.anchor not in bundle.labels:
            raise DataError(f"unknown anchor label {args.anchor!r}")
        anchor = bundle.labels.index(args.anchor)
        if counts[anchor] == 0:
            raise DataError(f"anchor part {args.anchor!r} is empty in the input")
    else:
        anchor = int(np.argmax(counts))
    run_dir = prepare_run_dir(config, "assemble", args.out)
    transforms = predict_transforms(bundle.assembler, parts, anchor)
    assembled = assemble(parts, transforms, bundle.labels)
    out_base = run_dir / "assembled"
    voxb.write_voxb(assembled, out_base.with_suffix(".voxb"))
    sidecar = {"code": None,
               "transforms": [{"scale": list(t.scale), "translate": list(t.translation)}
                              for t in transforms],
               "anchor": anchor, "seed": None}
    with open(out_base.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_manifest(run_dir, "assemble", {"input": args.input},
                       [out_base.with_suffix(".voxb"), out_base.with_suffix(".json")])
    print(f"assembled -> {out_base.with_suffix('.voxb')}")
    return 0


def _parse_triple(text, what):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad {what} {text!r}: {exc}") from exc
    if len(vals) != 3:
        raise ConfigError(f"{what} needs exactly 3 comma-separated values")
    return vals


def cmd_edit(args, config):
    bundle = load_bundle(args.models)
    try:
        shape = load_generated(bundle, args.input)
    except (OSError, voxb.VoxbError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load generated shape {args.input}: {exc}") from exc
    if args.anchor not in bundle.labels:
        raise DataError(f"unknown anchor label {args.anchor!r}")
    k = bundle.labels.index(args.anchor)
    user_t = PartTransform(_parse_triple(args.scale, "--scale"),
                           _parse_triple(args.translate, "--translate"))
    try:
        user_t.validate(bundle.resolution)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    from .voxgrid import apply_transform

    moved = apply_transform(shape.parts[k], user_t)
    if moved.occupied_count() == 0:
        raise DataError(f"anchor part {args.anchor!r} is empty after the edit")
    parts = list(shape.parts)
    parts[k] = moved
    transforms = predict_transforms(bundle.assembler, parts, k)
    assembled = assemble(parts, transforms, bundle.labels)
    run_dir = prepare_run_dir(config, "edit", args.out)
    out_base = run_dir / "edited"
    voxb.write_voxb(assembled, out_base.with_suffix(".voxb"))
    sidecar = {"code": [float(v) for v in shape.code],
               "transforms": [{"scale": list(t.scale), "translate": list(t.translation)}
                              for t in transforms],
               "anchor": k, "seed": None}
    with open(out_base.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_manifest(run_dir, "edit", {"input": args.input, "anchor": args.anchor},
                       [out_base.with_suffix(".voxb"), out_base.with_suffix(".json")])
    print(f"edited -> {out_base.with_suffix('.voxb')}")
    return 0


def cmd_eval_symmetry(args, config):
    bundle = load_bundle(args.models)
    run_dir = prepare_run_dir(config, "eval-symmetry", args.out)
    shapes = generate_shapes(bundle, args.n, config.seed)
    rows = symmetry_report(shapes, bundle.labels)
    csv_path = write_rows_csv(run_dir / "symmetry.csv", rows)
    fig_path = plots.plot_symmetry(rows, run_dir / "symmetry.png")
    report = EvalReport(n=args.n, seed=config.seed, config=config.to_dict(),
                        symmetry=rows)
    report.write_json(run_dir / "symmetry.json")
    write_run_manifest(run_dir, "eval-symmetry", {"models": args.models},
                       [csv_path, fig_path, run_dir / "symmetry.json"])
    print(f"symmetry report -> {csv_path}")
    return 0


def cmd_eval_assembly(args, config):
    bundle = load_bundle(args.models)
    test = _load_split(args.data, "test")
    samples = test.samples[:args.n]
    run_dir = prepare_run_dir(config, "eval-assembly", args.out)
    rows = sweep_quality(bundle.assembler, samples, bundle.labels, seed=config.seed)
    csv_path = run_dir / "assembly_sweep.csv"
    write_sweep_csv(csv_path, rows)
    fig_path = plots.plot_sweep(rows, run_dir / "assembly_sweep.png")
    trained = eval_assembly(bundle.assembler, samples, bundle.labels, seed=config.seed)
    identity = eval_assembly(bundle.assembler, samples, bundle.labels, seed=config.seed,
                             use_identity=True)
    summary = {"mean_iou_trained": trained, "mean_iou_identity": identity,
               "n": len(samples), "seed": config.seed}
    with open(run_dir / "assembly.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_manifest(run_dir, "eval-assembly",
                       {"models": args.models, "data": args.data},
                       [csv_path, fig_path, run_dir / "assembly.json"])
    print(f"assembly sweep -> {csv_path} (trained {trained:.3f} vs identity {identity:.3f})")
    return 0


def cmd_eval_connectivity(args, config):
    bundle = load_bundle(args.models)
    run_dir = prepare_run_dir(config, "eval-connectivity", args.out)
    shapes = generate_shapes(bundle, args.n, config.seed)
    rate = connectivity_rate(shapes)
    fig_path = plots.plot_connectivity(rate, args.n, run_dir / "connectivity.png")
    payload = {"connectivity_rate": rate, "n": args.n, "seed": config.seed}
    with open(run_dir / "connectivity.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_manifest(run_dir, "eval-connectivity", {"models": args.models},
                       [run_dir / "connectivity.json", fig_path])
    print(f"connectivity rate {rate:.3f} over {args.n} shapes")
    return 0


def cmd_eval_diversity(args, config):
    bundle = load_bundle(args.models)
    train = _load_split(args.data, "train")
    run_dir = prepare_run_dir(config, "eval-diversity", args.out)
    shapes = generate_shapes(bundle, args.n, config.seed)
    try:
        score = inception_score(shapes, train, k=args.k, seed=config.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    fig_path = plots.plot_diversity(score, args.k, run_dir / "diversity.png")
    payload = {"inception_score": score, "k": args.k, "n": args.n, "seed": config.seed}
    with open(run_dir / "diversity.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_run_manifest(run_dir, "eval-diversity",
                       {"models": args.models, "data": args.data},
                       [run_dir / "diversity.json", fig_path])
    print(f"inception score {score:.3f} (k={args.k}, n={args.n})")
    return 0


def cmd_eval_seg(args, config):
    bundle = load_bundle(args.models)
    projector_path = Path(args.models) / "projector.pt"
    if not projector_path.exists():
        raise DataError(f"no projector checkpoint at {projector_path}")
    test = _load_split(args.data, "test")
    samples = test.samples[:args.n]
    run_dir = prepare_run_dir(config, "eval-seg", args.out)
    rows = seg_eval(samples, projector_path, bundle)
    csv_path = write_rows_csv(run_dir / "segmentation.csv", rows)
    fig_path = plots.plot_seg(rows, run_dir / "segmentation.png")
    write_run_manifest(run_dir, "eval-seg", {"models": args.models, "data": args.data},
                       [csv_path, fig_path])
    mean_row = rows[-1]
    print(f"segmentation mean per-part IoU {mean_row['mean_iou']:.3f} over {len(samples)} shapes")
    return 0


def cmd_serve(args, config):
    import uvicorn

    from .editsvc import create_app

    bundle = load_bundle(args.models)
    app = create_app(bundle, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_help()
        return 1
    try:
        config = resolve_config(args)
        torch.set_num_threads(max(1, config.threads))
        return args.func(args, config) or 0
    except ConfigError as exc:
        print(f"partforge: config error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergence as exc:
        print(f"partforge: training diverged: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"partforge: data error: {exc}", file=sys.stderr)
        return 2
    except (OSError, voxb.VoxbError) as exc:
        print(f"partforge: data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"partforge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
