"""``contextcnn`` command line: dataset generation, training and analysis.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flag or
missing path). Every ``--out`` directory receives a ``run.cfg`` echo of the
effective configuration, the format version and the derived child seeds.
"""

import argparse
import dataclasses
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from contextcnn import __version__
from contextcnn.analysis import export_features, heatmap_pgm, report_csvs, rows_to_csv, timestep_degradation
from contextcnn.checkpoint import FORMAT_VERSION
from contextcnn.data import SceneSpec, generate_dataset, read_dataset, read_image, read_spec, write_dataset
from contextcnn.gradsuite import TOLERANCE, run_suite
from contextcnn.model import KINDS, USES_BOXES, Model
from contextcnn.optim import TrainConfig
from contextcnn.proposals import objectness_proposals
from contextcnn.train import (PROPOSAL_MODES, child_seeds, derive_seed, evaluate, fit, make_proposals,
                              model_config_for)


class UsageError(Exception):
    pass


def _existing(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"path not found: {path}")
    return p


def _split_dir(path, split):
    """A split directory: ``path`` itself if it holds a manifest, else ``path/split``."""
    root = _existing(path)
    for cand in (root, root / split):
        if (cand / "manifest.csv").exists():
            return cand
    raise UsageError(f"{path}: no manifest.csv here or under {split}/")


def _load_split(path, split):
    directory = _split_dir(path, split)
    samples = read_dataset(directory)
    spec = read_spec(directory)
    if spec is None:
        c, size = samples[0].image.shape[:2]
        spec = SceneSpec(num_classes=max(s.class_id for s in samples) + 1, image_size=size, channels=c)
    return directory, samples, spec


def _write_run_cfg(out, command, entries):
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}\n", f"format_version={FORMAT_VERSION}\n", f"version={__version__}\n"]
    lines += [f"{k}={v}\n" for k, v in entries.items()]
    (out / "run.cfg").write_text("".join(lines), encoding="ascii", newline="\n")


def _train_config(args):
    cfg = TrainConfig.read(_existing(args.config)) if args.config else TrainConfig()
    overrides = {"seed": args.seed, "variant": args.variant, "proposal_mode": args.proposal,
                 "num_boxes": args.num_boxes, "iterations": args.iterations, "lr": args.lr}
    return dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def _eval_boxes(model, samples, mode, seed):
    if model.config.kind not in USES_BOXES:
        return None
    return make_proposals(samples, mode, model.config.num_boxes, derive_seed(seed, "proposals/val"))


def _proposal_mode(args, model):
    return args.proposal or model.meta.get("proposal_mode", "oracle")


def _load_model(path):
    return Model.load(_existing(path))


# -- subcommands ----------------------------------------------------------------


def cmd_scenegen(args):
    spec = SceneSpec.loads(_existing(args.config).read_text(encoding="ascii")) if args.config else SceneSpec()
    seed = 0 if args.seed is None else args.seed
    spec = dataclasses.replace(spec, seed=derive_seed(seed, "data")).validate()
    out = Path(args.out)
    write_dataset(generate_dataset(spec, args.train), out / "train", spec)
    write_dataset(generate_dataset(spec, args.val, offset=args.train), out / "val", spec)
    _write_run_cfg(out, "scenegen", {"seed": seed, "seed.data": spec.seed, "train": args.train, "val": args.val})
    print(f"wrote {args.train} train / {args.val} val scenes to {out}")


def cmd_train(args):
    cfg = _train_config(args)
    _, train_samples, spec = _load_split(args.dataset, "train")
    root = Path(args.dataset)
    val_samples = read_dataset(root / "val") if (root / "val" / "manifest.csv").exists() else []
    mcfg = model_config_for(spec, cfg.variant, cfg.num_boxes, args.pooled_size, args.hidden1, args.hidden2)
    out = Path(args.out)
    extra = {"pooled_size": mcfg.pooled_size, "hidden1": mcfg.hidden1, "hidden2": mcfg.hidden2,
             "dataset": root.resolve()}
    seeds = {f"seed.{k}": v for k, v in child_seeds(cfg.seed).items()}
    _write_run_cfg(out, "train", {**{f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)},
                                  **extra, **seeds})
    result = fit(train_samples, val_samples, cfg, mcfg, log_path=out / "train_log.csv",
                 eval_every=args.eval_every)
    result.model.save(out / "model.ckpt", {"proposal_mode": cfg.proposal_mode, "seed": cfg.seed})
    if result.val is not None:
        print(f"val_accuracy={result.val.accuracy!r}")
    print(f"final_loss={result.history[-1][2]!r}")


def cmd_eval(args):
    model = _load_model(args.checkpoint)
    _, samples, _ = _load_split(args.dataset, "val")
    seed = 0 if args.seed is None else args.seed
    boxes = _eval_boxes(model, samples, _proposal_mode(args, model), seed)
    result = evaluate(model, samples, boxes)
    print(f"accuracy={result.accuracy!r}")
    k = model.config.num_classes
    print("true\\pred," + ",".join(str(c) for c in range(k)))
    for c, row in enumerate(result.confusion):
        print(f"{c}," + ",".join(str(int(v)) for v in row))


def cmd_propose(args):
    mode = args.proposal or "objectness"
    n = args.num_boxes or 10
    if args.image:
        if mode != "objectness":
            raise UsageError(f"--proposal {mode} needs ground truth; use --dataset")
        boxes = objectness_proposals(read_image(_existing(args.image)), n)
    elif args.dataset:
        _, samples, _ = _load_split(args.dataset, "val")
        if not 0 <= args.index < len(samples):
            raise UsageError(f"--index {args.index} outside 0..{len(samples) - 1}")
        seed = 0 if args.seed is None else args.seed
        boxes = make_proposals([samples[args.index]], mode, n, derive_seed(seed, f"propose/{args.index}"))[0]
    else:
        raise UsageError("propose needs --image or --dataset")
    for b in boxes:
        print(f"{b.x0:g} {b.y0:g} {b.x1:g} {b.y1:g} {b.score!r}")


def cmd_obscure(args):
    model = _load_model(args.checkpoint)
    if model.config.kind not in USES_BOXES:
        raise UsageError(f"obscure needs a box-consuming variant, not {model.config.kind}")
    _, samples, _ = _load_split(args.dataset, "val")
    seed = 0 if args.seed is None else args.seed
    mode = _proposal_mode(args, model)
    boxes = _eval_boxes(model, samples, mode, seed)
    report = timestep_degradation(model, samples, boxes)
    out = Path(args.out)
    _write_run_cfg(out, "obscure", {"checkpoint": Path(args.checkpoint).resolve(), "proposal_mode": mode,
                                    "seed": seed, "seed.proposals/val": derive_seed(seed, "proposals/val")})
    for name, text in zip(("report.csv", "heatmap.csv", "curve.csv"), report_csvs(report)):
        (out / name).write_text(text, encoding="ascii", newline="\n")
    (out / "heatmap.pgm").write_bytes(heatmap_pgm(report.heatmap))
    print(f"base_accuracy={report.base_accuracy!r}")
    print(f"drop_trend={report.drop_trend()!r}")


def cmd_export_features(args):
    if args.stage == "lstm_t" and args.t is None:
        raise UsageError("--stage lstm_t needs --t")
    model = _load_model(args.checkpoint)
    if args.t is not None and not 0 <= args.t < model.config.num_boxes:
        raise UsageError(f"--t {args.t} outside 0..{model.config.num_boxes - 1}")
    _, samples, _ = _load_split(args.dataset, "val")
    seed = 0 if args.seed is None else args.seed
    mode = _proposal_mode(args, model)
    boxes = _eval_boxes(model, samples, mode, seed)
    rows = export_features(model, samples, boxes, args.stage, args.t)
    out = Path(args.out)
    _write_run_cfg(out, "export-features", {"checkpoint": Path(args.checkpoint).resolve(), "stage": args.stage,
                                            "t": args.t, "proposal_mode": mode, "seed": seed})
    (out / "features.csv").write_text(rows_to_csv(rows), encoding="ascii", newline="\n")
    print(f"wrote {len(rows)} rows to {out / 'features.csv'}")


def cmd_gradcheck(args):
    seed = 0 if args.seed is None else args.seed
    results = run_suite(seed, args.repeats)
    for name, err in results.items():
        print(f"{name} {err:.3e} {'ok' if err < TOLERANCE else 'FAIL'}")
    worst = max(results.values())
    print(f"worst={worst:.3e}")
    return 0 if worst < TOLERANCE else 1


COMMANDS = {
    "scenegen": cmd_scenegen,
    "train": cmd_train,
    "eval": cmd_eval,
    "propose": cmd_propose,
    "obscure": cmd_obscure,
    "export-features": cmd_export_features,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (1 = bit-exact)")

    parser = argparse.ArgumentParser(prog="contextcnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenegen", parents=[common], help="render a synthetic train/val dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="SceneSpec key=value file")
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--val", type=int, default=500)

    p = sub.add_parser("train", parents=[common], help="train a variant")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="TrainConfig key=value file")
    p.add_argument("--variant", choices=KINDS)
    p.add_argument("--proposal", choices=PROPOSAL_MODES)
    p.add_argument("--num-boxes", type=int)
    p.add_argument("--pooled-size", type=int, default=7)
    p.add_argument("--hidden1", type=int, default=128)
    p.add_argument("--hidden2", type=int, default=64)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", type=int, default=0)

    for name, help_ in (("eval", "accuracy and confusion matrix"), ("obscure", "box occlusion analysis"),
                        ("export-features", "dump RoI or LSTM features")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", required=True)
        p.add_argument("--proposal", choices=PROPOSAL_MODES)
        if name != "eval":
            p.add_argument("--out", required=True)
        if name == "export-features":
            p.add_argument("--stage", choices=("roi_cnn", "lstm_t"), default="roi_cnn")
            p.add_argument("--t", type=int, default=None)

    p = sub.add_parser("propose", parents=[common], help="print proposals for one image")
    p.add_argument("--image")
    p.add_argument("--dataset")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--proposal", choices=PROPOSAL_MODES)
    p.add_argument("--num-boxes", type=int)

    p = sub.add_parser("gradcheck", parents=[common], help="run the 64-bit gradient suite")
    p.add_argument("--repeats", type=int, default=10)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            code = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"contextcnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"contextcnn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
