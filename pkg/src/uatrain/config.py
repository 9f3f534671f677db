"""Sectioned key-value experiment configuration.

Format (``configparser`` INI)::

    [run]
    seed = 0
    out = runs/example

    [dataset]
    name = gauss2d
    n_labeled = 200
    std = 0.03

    [net]
    kind = mlp

    [train]
    lam = 10.0
    rae_attack = pgd eps=8/255 steps=20 step=1/255

    [attacks]
    pgd-8 = pgd eps=8/255 steps=20 step=1/255

Absent keys take their defaults; unknown sections or keys are rejected.
Attack entries read ``<family> key=value ...`` with family one of ``pgd``,
``gpgd``, ``usong`` and keys ``eps``, ``steps``, ``step``, ``lambda1``,
``lambda2``. Numbers may be written as fractions such as ``8/255``.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .attacks import AttackSpec
from .datasets import SUPPORTED
from .losses import WeightConfig
from .nets import NetSpec
from .trainer import EarlyStopping, OptimizerConfig, TrainConfig

DATA_ROOT_ENV = "UATRAIN_DATA_ROOT"
IMAGE_DATASETS = ("cifar10-subset", "svhn-subset")

SYNTHETIC_KEYS = {"n_unlabeled": int, "n_test": int, "n_components": int, "std": float, "radius": float}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# --------------------------------------------------------------------------
# value parsing
# --------------------------------------------------------------------------


def parse_number(text: str) -> float:
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def format_number(v: float) -> str:
    n = round(v * 255)
    if v != int(v) and n != 0 and n / 255 == v:
        return f"{n}/255"
    return repr(float(v))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


FAMILY_ALIASES = {"pgd": "pixel-pgd", "gpgd": "latent-pgd", "usong": "latent-search"}
FAMILY_SHORT = {v: k for k, v in FAMILY_ALIASES.items()}


def parse_attack(text: str) -> AttackSpec:
    parts = text.split()
    if not parts:
        raise ValueError("empty attack entry")
    family = FAMILY_ALIASES.get(parts[0], parts[0])
    base = {
        "pixel-pgd": AttackSpec.pgd(8),
        "latent-pgd": AttackSpec.gpgd(0.1),
        "latent-search": AttackSpec.usong(),
    }.get(family)
    if base is None:
        raise ValueError(f"unknown attack family {parts[0]!r}")
    kw = {"epsilon": base.epsilon, "step_size": base.step_size, "steps": base.steps}
    weights = list(base.realism_weights)
    for item in parts[1:]:
        if "=" not in item:
            raise ValueError(f"attack option {item!r} is not key=value")
        k, v = item.split("=", 1)
        if k == "eps":
            kw["epsilon"] = parse_number(v)
        elif k == "step":
            kw["step_size"] = parse_number(v)
        elif k == "steps":
            kw["steps"] = int(v)
        elif k == "lambda1":
            weights[0] = parse_number(v)
        elif k == "lambda2":
            weights[1] = parse_number(v)
        else:
            raise ValueError(f"unknown attack option {k!r}")
    return AttackSpec(family, realism_weights=tuple(weights), **kw)


def format_attack(spec: AttackSpec) -> str:
    out = [
        FAMILY_SHORT[spec.family],
        f"eps={format_number(spec.epsilon)}",
        f"steps={spec.steps}",
        f"step={format_number(spec.step_size)}",
    ]
    if spec.family == "latent-search":
        out += [f"lambda1={format_number(spec.realism_weights[0])}", f"lambda2={format_number(spec.realism_weights[1])}"]
    return " ".join(out)


def default_battery() -> dict:
    return {
        "pgd-8/255": AttackSpec.pgd(8),
        "pgd-4/255": AttackSpec.pgd(4),
        "pgd-2/255": AttackSpec.pgd(2),
        "gpgd-0.1": AttackSpec.gpgd(0.1),
        "gpgd-0.01": AttackSpec.gpgd(0.01),
        "usong": AttackSpec.usong(),
    }


# --------------------------------------------------------------------------
# experiment config
# --------------------------------------------------------------------------


@dataclass
class DatasetConfig:
    name: str = "cifar10-subset"
    root: Optional[str] = None
    n_labeled: Optional[int] = None
    params: dict = field(default_factory=dict)

    def resolved_root(self) -> str:
        return self.root or os.environ.get(DATA_ROOT_ENV, "data")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    net: Optional[NetSpec] = None
    train: TrainConfig = field(default_factory=TrainConfig)
    attacks: dict = field(default_factory=default_battery)
    out: str = "runs/default"
    seed: int = 0

    def net_spec(self, input_shape=None) -> NetSpec:
        if self.net is not None:
            return self.net
        if self.dataset.name in IMAGE_DATASETS:
            return NetSpec.image_default()
        return NetSpec(input_shape=input_shape or (2,))


WEIGHT_KEYS = ("lam", "gamma", "beta", "alpha")
OPT_KEYS = {"lr": float, "weight_decay": float, "momentum": float, "nesterov": _bool, "schedule": str, "cycle_epochs": int, "lr_min": float}
TRAIN_SCALARS = {
    "T_pre": int,
    "T": int,
    "steps_per_epoch": int,
    "gan_mode": str,
    "gan_lr_scale": float,
    "gan_optimizer": str,
    "ema_decay": float,
    "ema_ramp": float,
    "inner_steps": int,
    "pseudo_labels": _bool,
    "pseudo_threshold": float,
}
TRAIN_EXTRA = ("batch_labeled", "batch_unlabeled", "early_stopping_metric", "patience", "gan_beta1", "gan_beta2", "rae_attack", "val_attack")
NET_TYPES = {f.name: f.type for f in fields(NetSpec)}


def _convert(key, fn, text):
    try:
        return fn(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"bad value {text!r} ({exc})") from None


def _net_value(name, text):
    if name == "input_shape":
        return tuple(int(s) for s in text.replace("x", ",").split(",") if s.strip())
    if name == "kind":
        return text.strip()
    if name == "attacker_identity_init":
        return _bool(text)
    if name == "attacker_clamp":
        return None if text.strip().lower() in ("", "none") else float(text)
    return int(text)


def _check_keys(section: str, keys, allowed):
    for k in keys:
        if k not in allowed:
            raise ConfigError(f"{section}.{k}", "unknown key")


def parse_config_text(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str  # keys are case-sensitive (T vs T_pre)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc)) from None
    for sec in cp.sections():
        if sec not in ("run", "dataset", "net", "train", "attacks"):
            raise ConfigError(sec, "unknown section")
    cfg = ExperimentConfig()

    if cp.has_section("run"):
        run = cp["run"]
        _check_keys("run", run.keys(), ("seed", "out"))
        if "seed" in run:
            cfg.seed = _convert("run.seed", int, run["seed"])
        if "out" in run:
            cfg.out = run["out"]

    if cp.has_section("dataset"):
        ds = cp["dataset"]
        _check_keys("dataset", ds.keys(), ("name", "root", "n_labeled", *SYNTHETIC_KEYS))
        name = ds.get("name", cfg.dataset.name).strip()
        if name not in SUPPORTED:
            raise ConfigError("dataset.name", f"unsupported dataset {name!r}")
        params = {}
        for k, fn in SYNTHETIC_KEYS.items():
            if k in ds:
                if name in IMAGE_DATASETS:
                    raise ConfigError(f"dataset.{k}", f"not applicable to {name}")
                params[k] = _convert(f"dataset.{k}", fn, ds[k])
        cfg.dataset = DatasetConfig(
            name=name,
            root=ds.get("root") or None,
            n_labeled=_convert("dataset.n_labeled", int, ds["n_labeled"]) if "n_labeled" in ds else None,
            params=params,
        )

    if cp.has_section("net"):
        sec = cp["net"]
        _check_keys("net", sec.keys(), NET_TYPES)
        base = NetSpec.image_default() if cfg.dataset.name in IMAGE_DATASETS else NetSpec()
        kw = {f.name: getattr(base, f.name) for f in fields(NetSpec)}
        for k in sec.keys():
            kw[k] = _convert(f"net.{k}", lambda t, k=k: _net_value(k, t), sec[k])
        try:
            cfg.net = NetSpec(**kw)
        except ValueError as exc:
            raise ConfigError("net", str(exc)) from None

    tr = cp["train"] if cp.has_section("train") else {}
    _check_keys("train", tr.keys(), (*WEIGHT_KEYS, *OPT_KEYS, *TRAIN_SCALARS, *TRAIN_EXTRA))
    cfg.train = _build_train(tr, cfg.seed)

    if cp.has_section("attacks"):
        battery = {}
        for k, v in cp["attacks"].items():
            battery[k] = _convert(f"attacks.{k}", parse_attack, v)
        cfg.attacks = battery
    return cfg


def _build_train(tr, seed: int) -> TrainConfig:
    d = TrainConfig()
    w = {k: _convert(f"train.{k}", float, tr[k]) if k in tr else getattr(d.weights, k) for k in WEIGHT_KEYS}
    for k, v in w.items():
        if not v >= 0:
            raise ConfigError(f"train.{k}", f"must be >= 0, got {v}")
    o = {k: _convert(f"train.{k}", fn, tr[k]) if k in tr else getattr(d.optimizer, k) for k, fn in OPT_KEYS.items()}
    s = {k: _convert(f"train.{k}", fn, tr[k]) if k in tr else getattr(d, k) for k, fn in TRAIN_SCALARS.items()}
    batch = (
        _convert("train.batch_labeled", int, tr["batch_labeled"]) if "batch_labeled" in tr else d.batch_sizes[0],
        _convert("train.batch_unlabeled", int, tr["batch_unlabeled"]) if "batch_unlabeled" in tr else d.batch_sizes[1],
    )
    betas = (
        _convert("train.gan_beta1", float, tr["gan_beta1"]) if "gan_beta1" in tr else d.gan_betas[0],
        _convert("train.gan_beta2", float, tr["gan_beta2"]) if "gan_beta2" in tr else d.gan_betas[1],
    )
    try:
        es = EarlyStopping(
            metric=tr.get("early_stopping_metric", d.early_stopping.metric).strip(),
            patience=_convert("train.patience", int, tr["patience"]) if "patience" in tr else d.early_stopping.patience,
        )
    except ValueError as exc:
        raise ConfigError("train.early_stopping_metric", str(exc)) from None
    rae = _convert("train.rae_attack", parse_attack, tr["rae_attack"]) if "rae_attack" in tr else d.rae_attack
    val = _convert("train.val_attack", parse_attack, tr["val_attack"]) if "val_attack" in tr else d.val_attack
    try:
        return TrainConfig(
            weights=WeightConfig(**w),
            optimizer=OptimizerConfig(**o),
            batch_sizes=batch,
            early_stopping=es,
            gan_betas=betas,
            rae_attack=rae,
            val_attack=val,
            seed=seed,
            **s,
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    return parse_config_text(text)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Write every key explicitly, so the snapshot survives default changes."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    cp["run"] = {"seed": str(cfg.seed), "out": cfg.out}
    ds = {"name": cfg.dataset.name}
    if cfg.dataset.root:
        ds["root"] = cfg.dataset.root
    if cfg.dataset.n_labeled is not None:
        ds["n_labeled"] = str(cfg.dataset.n_labeled)
    ds.update({k: _fmt(v) for k, v in cfg.dataset.params.items()})
    cp["dataset"] = ds
    if cfg.net is not None:
        cp["net"] = {f.name: _fmt(getattr(cfg.net, f.name)) for f in fields(NetSpec)}
    t = cfg.train
    train = {k: _fmt(float(getattr(t.weights, k))) for k in WEIGHT_KEYS}
    for k in OPT_KEYS:
        v = getattr(t.optimizer, k)
        if v is not None:
            train[k] = _fmt(v)
    for k in TRAIN_SCALARS:
        v = getattr(t, k)
        if v is not None:
            train[k] = _fmt(v)
    train.update(
        batch_labeled=str(t.batch_sizes[0]),
        batch_unlabeled=str(t.batch_sizes[1]),
        early_stopping_metric=t.early_stopping.metric,
        patience=str(t.early_stopping.patience),
        gan_beta1=_fmt(float(t.gan_betas[0])),
        gan_beta2=_fmt(float(t.gan_betas[1])),
        rae_attack=format_attack(t.rae_attack),
        val_attack=format_attack(t.val_attack),
    )
    cp["train"] = train
    cp["attacks"] = {k: format_attack(v) for k, v in cfg.attacks.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
