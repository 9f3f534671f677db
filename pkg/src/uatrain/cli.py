"""Command-line entry point.

Exit statuses: 0 success, 1 usage error, 2 runtime failure, 3 a checked
property (``verify-theory``) failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import subprocess
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import evaluation as E
from . import theory
from .attacks import evaluate_robust_accuracy
from .config import ConfigError, ExperimentConfig, parse_attack, parse_config, parse_config_text, serialize_config
from .datasets import load_dataset, write_manifest
from .nets import load_checkpoint
from .trainer import fit
from .uae import generate_uae, sample_noise

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PROPERTY = 0, 1, 2, 3
SUBCOMMANDS = ("train", "attack", "eval", "verify-theory", "sweep", "export-uaes", "export-embeddings")

log = logging.getLogger("uatrain")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uatrain", description="Unified adversarial training toolkit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="INI experiment config (defaults when omitted)")
        s.add_argument("--seed", type=int, help="override the run seed")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--checkpoint", type=Path, help="checkpoint file from a previous train run")
        if name == "sweep":
            s.add_argument("--betas", default="0,2,6", help="comma-separated beta values")
        if name in ("eval", "export-embeddings"):
            s.add_argument("--max-per-class", type=int, default=None)
        if name == "attack":
            s.add_argument(
                "--attack",
                action="append",
                metavar="SPEC",
                help='attack spec such as "pgd eps=8/255 steps=20 step=1/255"; repeatable, replaces the config battery',
            )
            s.add_argument("--seeds", type=int, default=1, help="latent-seed draws to average over")
        if name == "export-uaes":
            s.add_argument("--per-class", type=int, default=8)
    return p


def code_version() -> str:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{version}+{rev}" if rev else version


def write_run_manifest(out: Path, command: str, cfg: ExperimentConfig, extra=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    text = serialize_config(cfg)
    (out / "config.ini").write_text(text)
    manifest = {"command": command, "seed": cfg.seed, "code_version": code_version(), "config": text}
    manifest.update(extra or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if args.config else parse_config_text("")
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.out is not None:
        cfg.out = str(args.out)
    return cfg


def _data(cfg: ExperimentConfig):
    d = cfg.dataset
    return load_dataset(d.name, root=d.resolved_root(), n_labeled=d.n_labeled, seed=cfg.seed, **dict(d.params))


def _models(args):
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required for this command")
    bundle, _ = load_checkpoint(args.checkpoint)
    bundle.eval()
    return bundle


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def cmd_train(args, cfg, out):
    data = _data(cfg)
    spec = cfg.net_spec(data.example_shape)
    write_run_manifest(out, "train", cfg)
    write_manifest(data, out / "split")
    _, report = fit(cfg.train, data, spec, out_dir=out)
    print(f"trained {report.stop_epoch} epochs; best epoch {report.best_epoch}; metrics in {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_attack(args, cfg, out):
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    battery = cfg.attacks
    if args.attack:
        try:
            battery = {spec.label: spec for spec in map(parse_attack, args.attack)}
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    models = _models(args)
    data = _data(cfg)
    testset = (data.test_x, data.test_y)
    write_run_manifest(out, "attack", cfg, {"checkpoint": str(args.checkpoint), "seeds": args.seeds})
    nat = E.natural_accuracy(models.C, testset)
    rows = [["natural", repr(nat), repr(0.0), 1]]
    means = {"natural": nat}
    for name, atk in battery.items():
        accs = [
            evaluate_robust_accuracy(models.C, atk, testset, models.G, models.D, seed=cfg.seed + i)
            for i in range(args.seeds)
        ]
        mean, std = float(np.mean(accs)), float(np.std(accs))
        means[name] = mean
        rows.append([name, repr(mean), repr(std), args.seeds])
        print(f"{name:>12}  {mean:.4f} +- {std:.4f}")
    _write_csv(out / "attack.csv", ["attack", "mean", "std", "seeds"], rows)
    try:
        ref = E.compare_to_reference(means, cfg.dataset.name.split("-")[0])
    except KeyError:
        ref = []
    if ref:
        _write_csv(out / "reference.csv", ["metric", "measured_pct", "reference_mean_pct", "reference_std_pct"], ref)
    return EXIT_OK


def cmd_eval(args, cfg, out):
    models = _models(args)
    data = _data(cfg)
    testset = (data.test_x, data.test_y)
    write_run_manifest(out, "eval", cfg, {"checkpoint": str(args.checkpoint)})
    samples = E.build_alignment_sample(models, testset, seed=cfg.seed, max_per_class=args.max_per_class)
    nat = E.natural_accuracy(models.C, testset)
    sil = E.silhouette_alignment(samples)
    _write_csv(out / "eval.csv", ["metric", "value"], [["natural_acc", repr(nat)], ["silhouette", repr(sil)]])
    (out / "class_counts.csv").write_text(E.class_count_table(samples).to_csv())
    print(f"natural accuracy {nat:.4f}; silhouette {sil:.4f}")
    return EXIT_OK


def cmd_verify_theory(args, cfg, out):
    results = theory.run_all(seed=cfg.seed)
    table = theory.format_table(results)
    print(table)
    if args.out is not None:
        write_run_manifest(out, "verify-theory", cfg)
        (out / "theory.txt").write_text(table + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY


def cmd_sweep(args, cfg, out):
    try:
        betas = [float(b) for b in args.betas.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"bad --betas value {args.betas!r}") from None
    if not betas:
        raise UsageError("--betas is empty")
    data = _data(cfg)
    write_run_manifest(out, "sweep", cfg, {"betas": betas})
    rows = E.pareto_sweep(cfg.train, betas, data, list(cfg.attacks.values()), cfg.net_spec(data.example_shape))
    E.write_rows_csv(rows, out / "sweep.csv")
    print(f"{len(rows)} sweep rows written to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_export_uaes(args, cfg, out):
    models = _models(args)
    write_run_manifest(out, "export-uaes", cfg, {"checkpoint": str(args.checkpoint)})
    k, n = models.num_classes, args.per_class
    labels = torch.arange(k).repeat_interleave(n)
    y = F.one_hot(labels, k).to(models.dtype)
    z = sample_noise(len(y), models.noise_dim, generator=torch.Generator().manual_seed(cfg.seed), dtype=models.dtype)
    with torch.no_grad():
        batch = generate_uae(models.G, models.A, z, y)
        pred = models.C(batch.x_tilde).argmax(dim=1)
    x_g = batch.x_g.reshape(len(y), -1).double().numpy()
    x_t = batch.x_tilde.reshape(len(y), -1).double().numpy()
    rows = []
    for i in range(len(y)):
        rows.append([int(labels[i]), "natural", "", *(format(v, ".9g") for v in x_g[i])])
        rows.append([int(labels[i]), "adversarial", int(pred[i]), *(format(v, ".9g") for v in x_t[i])])
    _write_csv(out / "uaes.csv", ["class", "kind", "predicted", *[f"v{j}" for j in range(x_g.shape[1])]], rows)
    if batch.x_tilde.ndim == 4:
        _save_grid(batch.x_g, out / "natural.png", n)
        _save_grid(batch.x_tilde, out / "adversarial.png", n)
    print(f"wrote {len(y)} natural/adversarial pairs to {out}")
    return EXIT_OK


def _save_grid(x: torch.Tensor, path: Path, per_row: int):
    try:
        from PIL import Image
    except ImportError:
        log.warning("Pillow not installed; skipping %s", path)
        return
    imgs = (x.clamp(0, 1).permute(0, 2, 3, 1).double().numpy() * 255).round().astype(np.uint8)
    rows = [np.concatenate(list(imgs[i : i + per_row]), axis=1) for i in range(0, len(imgs), per_row)]
    Image.fromarray(np.concatenate(rows, axis=0)).save(path)


def cmd_export_embeddings(args, cfg, out):
    models = _models(args)
    data = _data(cfg)
    write_run_manifest(out, "export-embeddings", cfg, {"checkpoint": str(args.checkpoint)})
    path = E.export_embeddings(models, data, out / "embeddings.tsv", seed=cfg.seed, max_per_class=args.max_per_class)
    print(f"embeddings written to {path}")
    return EXIT_OK


HANDLERS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "verify-theory": cmd_verify_theory,
    "sweep": cmd_sweep,
    "export-uaes": cmd_export_uaes,
    "export-embeddings": cmd_export_embeddings,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _load_config(args)
        return HANDLERS[args.command](args, cfg, Path(cfg.out))
    except (UsageError, ConfigError) as exc:
        print(f"uatrain: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - the status code is the contract
        log.debug("runtime failure", exc_info=True)
        print(f"uatrain: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
