"""Command-line entry point: ``poet generate|train|eval|localize|replay``.

Every command writes ``manifest.json`` into its output directory with the
resolved arguments and configs, seed, input/output paths, SHA-256 checksums
and wall-clock duration. ``poet replay manifest.json`` re-runs the command
and checks that every output is bit-identical.

Exit codes: 0 success, 2 usage, 3 config/version, 4 parse, 5 compute, 6 filesystem.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .errors import ConfigError, ParseError, PoetError, VersionError
from .inference import load_predictions, predict_dataset, save_predictions
from .localization import STRATEGIES, FusionConfig, outlier_predictions, run_sequence
from .localization import write_trajectory_csv, write_trajectory_json
from .metrics import evaluate
from .model.config import ABLATIONS, ModelConfig, toy_config
from .model.poet import PoET
from .scenes import NoiseModel, load_dataset, make_dataset, save_dataset, verify_sequence
from .trainer import TrainConfig, toy_train_config, train

log = logging.getLogger("poet")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_PARSE, EXIT_COMPUTE, EXIT_FS = 0, 2, 3, 4, 5, 6
MANIFEST = "manifest.json"


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _checksums(paths, root: Path) -> dict[str, str]:
    return {str(Path(p).relative_to(root)): sha256(Path(p)) for p in sorted(paths, key=str)}


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _config_file(path, kind: str) -> dict:
    if path is None:
        return {}
    d = _read_json(path)
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: {kind} config must be a JSON object")
    if d.get("version", 1) != 1:
        raise VersionError(f"{path}: {kind} config version {d.get('version')} is not supported")
    return d


def resolve_model_config(args) -> ModelConfig:
    """Toy defaults, then the config file, then the ablation preset."""
    d = toy_config().to_dict()
    d.update(_config_file(args.model_config, "model"))
    if args.seed is not None:
        d["seed"] = args.seed
    return ModelConfig.from_dict(d).with_ablation(args.ablation)


def resolve_train_config(args) -> TrainConfig:
    d = toy_train_config().to_dict()
    d.update(_config_file(args.train_config, "train"))
    for key in ("lr", "epochs", "batch_size", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if args.checkpoint_every is not None:
        d["checkpoint_every"] = args.checkpoint_every
    return TrainConfig.from_dict(d)


# --- commands -------------------------------------------------------------------------


def cmd_generate(args) -> dict:
    out = Path(args.out)
    seqs = make_dataset(args.seed, args.sequences, args.frames, args.objects, args.trajectory,
                        args.classes, rasterize=args.render)
    if args.verify:
        problems = [f"{s.name}: {p}" for s in seqs for p in verify_sequence(s)]
        if problems:
            raise PoetError("generated data violates invariants:\n" + "\n".join(problems[:20]))
    written = save_dataset(seqs, out)
    if args.outlier_predictions:
        preds = {s.name: outlier_predictions(s, seed=args.seed) for s in seqs}
        p = out / "outlier_predictions.json"
        save_predictions(preds, p)
        written.append(p)
    print(f"wrote {len(seqs)} sequence(s), {sum(len(s.frames) for s in seqs)} frames to {out}")
    return {"outputs": written, "config": {}}


def cmd_train(args) -> dict:
    mcfg = resolve_model_config(args)
    tcfg = resolve_train_config(args)
    data = load_dataset(args.data, load_images=mcfg.backbone == "conv")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = PoET(mcfg)
    res = train(model, data, tcfg, out,
                progress=lambda e, loss: log.info("epoch %d loss %.6f", e, loss))
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps({"model": mcfg.to_dict(), "train": tcfg.to_dict()}, indent=1, sort_keys=True) + "\n",
                        encoding="utf-8")
    final = res.epoch_losses[-1] if res.epoch_losses else float("nan")
    print(f"trained {tcfg.epochs} epochs ({len(res.steps)} steps), final epoch loss {final:.6f}")
    return {"outputs": [*res.checkpoints, out / "loss.csv", cfg_path],
            "config": {"model": mcfg.to_dict(), "train": tcfg.to_dict()}}


def cmd_eval(args) -> dict:
    model = PoET.load(args.checkpoint)
    data = load_dataset(args.data, load_images=model.cfg.backbone == "conv")
    noise = None
    if args.detections == "perturbed":
        noise = NoiseModel(args.sigma_center, args.sigma_size, args.p_miss, args.p_cls,
                           model.cfg.n_classes if args.p_cls > 0 else None)
    preds = predict_dataset(model, data, args.detections, noise, args.seed)
    report = evaluate(data, preds)
    report.metadata["detections"] = args.detections
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.csv", out / "report.json", out / "objects.csv", out / "predictions.json"]
    report.write_csv(paths[0])
    report.write_json(paths[1])
    report.write_records_csv(paths[2])
    save_predictions(preds, paths[3])
    row = report.overall
    print(f"{args.detections}: AUC ADD-S {row['auc_adds']:.2f}  AUC ADD {row['auc_add']:.2f}  "
          f"t {row['t_err_cm']:.2f} cm  R {row['rot_err_deg']:.2f} deg  missing {row['missing']}")
    cfg = {"detections": args.detections, "noise": None if noise is None else vars(noise).copy()}
    return {"outputs": paths, "config": cfg}


def cmd_localize(args) -> dict:
    data = load_dataset(args.data, load_images=False)
    if args.predictions:
        preds = load_predictions(args.predictions)
    else:
        model = PoET.load(args.checkpoint)
        if model.cfg.backbone == "conv":
            data = load_dataset(args.data, load_images=True)
        preds = predict_dataset(model, data, "gt", None, args.seed)
    strategies = STRATEGIES if args.strategy == "all4" else (args.strategy,)
    reports = []
    for s in strategies:
        cfg = FusionConfig(s, args.tau_t, args.tau_r)
        for seq in data:
            rep = run_sequence(seq, preds.get(seq.name, {}), cfg)
            reports.append(rep)
            print(f"{seq.name} {s:>4}: mean position error {rep.mean_position_error():.3f} mm, "
                  f"excluded {rep.n_excluded}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "trajectory.csv", out / "trajectory.json"]
    write_trajectory_csv(reports, paths[0])
    write_trajectory_json(reports, paths[1])
    return {"outputs": paths, "config": {"strategies": list(strategies), "tau_t": args.tau_t, "tau_R_deg": args.tau_r}}


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "localize": cmd_localize}

_INPUT_ARGS = ("data", "checkpoint", "predictions", "model_config", "train_config")
_PATH_ARGS = (*_INPUT_ARGS, "out")


def run_command(args) -> dict:
    """Run one command and write its manifest; returns the manifest."""
    for key in _PATH_ARGS:
        if getattr(args, key, None):
            setattr(args, key, str(Path(getattr(args, key)).resolve()))
    start = time.perf_counter()
    result = COMMANDS[args.command](args)
    out = Path(args.out)
    argv = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    inputs = {}
    for key in _INPUT_ARGS:
        val = getattr(args, key, None)
        if val and Path(val).is_file():
            inputs[key] = {"path": str(val), "sha256": sha256(Path(val))}
        elif val:
            inputs[key] = {"path": str(val)}
    manifest = {
        "version": 1,
        "tool_version": __version__,
        "command": args.command,
        "args": argv,
        "seed": getattr(args, "seed", None),
        "config": result["config"],
        "inputs": inputs,
        "outputs": _checksums(result["outputs"], out),
        "duration_s": time.perf_counter() - start,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def cmd_replay(args) -> int:
    manifest = _read_json(args.manifest)
    if manifest.get("version") != 1 or manifest.get("command") not in COMMANDS:
        raise VersionError(f"{args.manifest}: not a supported run manifest")
    ns = argparse.Namespace(**manifest["args"])
    if args.out:
        ns.out = args.out
    fresh = run_command(ns)
    expected, got = manifest["outputs"], fresh["outputs"]
    diff = sorted(k for k in set(expected) | set(got) if expected.get(k) != got.get(k))
    if diff:
        for k in diff:
            print(f"MISMATCH {k}")
        return EXIT_COMPUTE
    print(f"replay identical: {len(got)} output(s)")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poet", description="Object-relative pose estimation on synthetic scenes.")
    p.add_argument("--version", action="version", version=f"poet {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sequences", type=int, default=1)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--objects", type=int, default=4)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--trajectory", default="mixed", help="mixed, orbit, dolly, walk or a name such as walk-2")
    g.add_argument("--render", action="store_true", help="also write low-resolution PPM renderings")
    g.add_argument("--verify", action="store_true", help="check frame invariants before writing")
    g.add_argument("--outlier-predictions", action="store_true",
                   help="also write relative-pose estimates with 20%% gross outliers")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--model-config", "--config", dest="model_config")
    t.add_argument("--train-config", dest="train_config")
    t.add_argument("--ablation", choices=ABLATIONS, default="baseline")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--detections", choices=("gt", "perturbed"), default="gt")
    e.add_argument("--sigma-center", type=float, default=0.02, dest="sigma_center")
    e.add_argument("--sigma-size", type=float, default=0.0, dest="sigma_size")
    e.add_argument("--p-miss", type=float, default=0.1, dest="p_miss")
    e.add_argument("--p-cls", type=float, default=0.0, dest="p_cls")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)

    lo = sub.add_parser("localize", help="camera localization from object-relative poses")
    lo.add_argument("--data", required=True)
    src = lo.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions")
    src.add_argument("--checkpoint")
    lo.add_argument("--strategy", choices=(*STRATEGIES, "all4"), default="all4")
    lo.add_argument("--tau-t", type=float, default=0.05, dest="tau_t", help="cluster threshold, meters")
    lo.add_argument("--tau-r", type=float, default=10.0, dest="tau_r", help="cluster threshold, degrees")
    lo.add_argument("--seed", type=int, default=0)
    lo.add_argument("--out", required=True)

    r = sub.add_parser("replay", help="re-run a command from its manifest and compare outputs")
    r.add_argument("manifest")
    r.add_argument("--out", help="write to this directory instead of the original one")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args)
        run_command(args)
        return EXIT_OK
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, VersionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"filesystem error: {exc}", file=sys.stderr)
        return EXIT_FS
    except (PoetError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
