"""Joint training loop.

One ``train_step`` performs, in this order: discriminator ascent on both GAN
games, attacker ascent on the adversarial loss, classifier descent on the
extended objective followed by the teacher EMA, and generator descent on its
GAN term. ``fit`` wraps pretraining, epochs, validation, early stopping and
checkpointing.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import losses as L
from .attacks import AttackSpec, evaluate_robust_accuracy, frozen
from .datasets import BatchPair, DatasetSplit, augment_with_pseudo_labels, sample_batch
from .nets import ModelBundle, NetSpec, build_models, ema_decay_at, ema_update, save_checkpoint
from .uae import UAEBatch, generate_natural, generate_uae, sample_noise

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "epoch",
    "L_D",
    "L_G",
    "L_Cgan",
    "L_nat",
    "L_adv",
    "L_r",
    "total",
    "val_nat_acc",
    "val_rob_acc",
    "lr",
)


class NonFiniteLoss(RuntimeError):
    def __init__(self, where: str, values: dict):
        detail = ", ".join(f"{k}={v:.4g}" for k, v in values.items())
        super().__init__(f"non-finite loss during {where}: {detail}")
        self.where = where
        self.values = values


@dataclass
class OptimizerConfig:
    lr: float = 0.2
    weight_decay: float = 5e-4
    momentum: float = 0.9
    nesterov: bool = True
    schedule: str = "cosine-cyclic"
    cycle_epochs: Optional[int] = None  # None: one cycle over the whole run
    lr_min: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("weight_decay must be >= 0 and momentum in [0, 1)")
        if self.schedule not in ("cosine-cyclic", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class EarlyStopping:
    metric: str = "val_rob_acc"
    patience: int = 5

    def __post_init__(self):
        if self.metric not in ("val_rob_acc", "val_nat_acc"):
            raise ValueError(f"unknown early-stopping metric {self.metric!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainConfig:
    weights: L.WeightConfig = field(default_factory=L.WeightConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_sizes: tuple = (256, 256)
    T_pre: int = 0
    T: int = 10
    steps_per_epoch: Optional[int] = None
    early_stopping: EarlyStopping = field(default_factory=EarlyStopping)
    seed: int = 0
    gan_mode: str = "hinge"
    gan_lr_scale: float = 0.05
    gan_optimizer: str = "sgd"
    gan_betas: tuple = (0.5, 0.999)
    ema_decay: float = 0.999
    ema_ramp: float = 0.01
    inner_steps: int = 1
    rae_attack: AttackSpec = field(default_factory=lambda: AttackSpec.pgd(8, steps=20))
    val_attack: AttackSpec = field(default_factory=lambda: AttackSpec.pgd(8, steps=20))
    pseudo_labels: bool = False
    pseudo_threshold: float = 0.95

    def __post_init__(self):
        if self.T < 0 or self.T_pre < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.gan_mode not in L.MODES:
            raise ValueError(f"unknown gan_mode {self.gan_mode!r}")
        if self.gan_optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown gan_optimizer {self.gan_optimizer!r}")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if any(b <= 0 for b in self.batch_sizes):
            raise ValueError("batch sizes must be positive")
        self.batch_sizes = tuple(int(b) for b in self.batch_sizes)


# --------------------------------------------------------------------------
# optimisers
# --------------------------------------------------------------------------


def cosine_cyclic_lr(step: int, peak: float, cycle_steps: int, floor: float = 0.0) -> float:
    """Cosine decay from ``peak`` to ``floor`` restarting every ``cycle_steps``."""
    phase = (step % cycle_steps) / cycle_steps
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * phase))


class ScheduledOptimizer:
    """A torch optimiser plus the learning-rate profile driving it."""

    def __init__(self, opt: torch.optim.Optimizer, peak_lr: float, schedule: str, cycle_steps: int, lr_min: float = 0.0):
        self.opt = opt
        self.peak_lr = peak_lr
        self.schedule = schedule
        self.cycle_steps = max(1, int(cycle_steps))
        self.lr_min = lr_min
        self.scale = 1.0
        self.steps = 0

    def lr_at(self, step: int) -> float:
        if self.schedule == "constant":
            return self.peak_lr * self.scale
        return self.scale * cosine_cyclic_lr(step, self.peak_lr, self.cycle_steps, self.lr_min)

    @property
    def lr(self) -> float:
        return self.lr_at(self.steps)

    def step(self, params, grads):
        for group in self.opt.param_groups:
            group["lr"] = self.lr
        for p, g in zip(params, grads):
            p.grad = g
        self.opt.step()
        for p in params:
            p.grad = None
        self.steps += 1

    def state_dict(self):
        return {"opt": self.opt.state_dict(), "steps": self.steps, "scale": self.scale}

    def load_state_dict(self, state):
        self.opt.load_state_dict(state["opt"])
        self.steps = state["steps"]
        self.scale = state["scale"]


def make_optimizer(params, cfg: OptimizerConfig, total_steps: int = 1, kind: str = "sgd", betas=(0.5, 0.999)) -> ScheduledOptimizer:
    """SGD with (Nesterov) momentum and weight decay, or Adam, under the configured schedule."""
    params = list(params)
    if kind == "adam":
        opt = torch.optim.Adam(params, lr=cfg.lr, betas=tuple(betas), weight_decay=cfg.weight_decay)
    else:
        nesterov = cfg.nesterov and cfg.momentum > 0
        opt = torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay, nesterov=nesterov)
    return ScheduledOptimizer(opt, cfg.lr, cfg.schedule, total_steps, cfg.lr_min)


@dataclass
class Optimizers:
    C: ScheduledOptimizer
    G: ScheduledOptimizer
    D: ScheduledOptimizer
    A: ScheduledOptimizer

    def items(self):
        return {"C": self.C, "G": self.G, "D": self.D, "A": self.A}.items()

    def halve_gan_rates(self):
        for name in ("G", "D", "A"):
            getattr(self, name).scale *= 0.5


def build_optimizers(models: ModelBundle, cfg: TrainConfig, total_steps: int) -> Optimizers:
    oc = cfg.optimizer
    cycle = total_steps
    if oc.cycle_epochs and cfg.T:
        cycle = max(1, total_steps * oc.cycle_epochs // cfg.T)
    gan_cfg = OptimizerConfig(
        lr=oc.lr * cfg.gan_lr_scale,
        weight_decay=oc.weight_decay if cfg.gan_optimizer == "sgd" else 0.0,
        momentum=oc.momentum,
        nesterov=oc.nesterov,
        schedule=oc.schedule,
        lr_min=oc.lr_min * cfg.gan_lr_scale,
    )
    return Optimizers(
        C=make_optimizer(models.C.parameters(), oc, cycle),
        G=make_optimizer(models.G.parameters(), gan_cfg, cycle, cfg.gan_optimizer, cfg.gan_betas),
        D=make_optimizer(models.D.parameters(), gan_cfg, cycle, cfg.gan_optimizer, cfg.gan_betas),
        A=make_optimizer(models.A.parameters(), gan_cfg, cycle, cfg.gan_optimizer, cfg.gan_betas),
    )


# --------------------------------------------------------------------------
# single steps
# --------------------------------------------------------------------------


@dataclass
class UpdateLog:
    """Write counters per parameter set, for the update-routing invariant."""

    counts: dict = field(default_factory=lambda: {n: 0 for n in ModelBundle.NAMES})

    def bump(self, name):
        self.counts[name] += 1


def _update(opt: ScheduledOptimizer, module, objective, ascend: bool, log_: Optional[UpdateLog], name: str):
    params = [p for p in module.parameters() if p.requires_grad]
    sign = -1.0 if ascend else 1.0
    grads = torch.autograd.grad(sign * objective, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    opt.step(params, grads)
    if log_ is not None:
        log_.bump(name)


def _finite_or_raise(where, **values):
    vals = {k: float(torch.as_tensor(v).detach()) for k, v in values.items()}
    if not all(math.isfinite(v) for v in vals.values()):
        raise NonFiniteLoss(where, vals)


def to_torch(batch: BatchPair, dtype) -> tuple:
    return (
        torch.as_tensor(batch.labeled_x).to(dtype),
        torch.as_tensor(batch.labeled_onehot).to(dtype),
        torch.as_tensor(batch.unlabeled_x).to(dtype),
    )


def train_step(
    models: ModelBundle,
    batch: BatchPair,
    uae_seed: UAEBatch,
    cfg: TrainConfig,
    opts: Optimizers,
    step: int = 0,
    total_steps: int = 1,
    update_log: Optional[UpdateLog] = None,
) -> L.LossTerms:
    """One alternating update of D, A, C (+ teacher) and G, in that order.

    ``uae_seed`` supplies the seed noises and their labels; the perturbed
    examples are re-decoded after each update that changes them.
    """
    w, mode = cfg.weights, cfg.gan_mode
    x_l, y_l, x_u = to_torch(batch, models.dtype)
    z, y_g = uae_seed.z, uae_seed.labels
    C, G, D, A = models.C, models.G, models.D, models.A
    models.train()

    # discriminator: ascend the G-D and C-D games
    for _ in range(cfg.inner_steps):
        with torch.no_grad():
            x_g = generate_natural(G, z, y_g)
            y_c = F.softmax(C(x_u), dim=1)
        real = L.loss_D(D, x_l, y_l, mode)
        fake_g = L.loss_G_from_samples(D, x_g, y_g, mode, d_side=True)
        fake_c = L._fake_term(D(x_u, y_c), mode, d_side=True)
        d_obj = 2.0 * real + fake_g + fake_c
        _finite_or_raise("discriminator update", L_D=real, L_G=fake_g, L_Cgan=fake_c)
        _update(opts.D, D, d_obj, ascend=True, log_=update_log if _ == 0 else None, name="D")

    # attacker: ascend the adversarial loss through the frozen G and C
    for _ in range(cfg.inner_steps):
        uae = generate_uae(G, A, z, y_g)
        adv_for_a = L.loss_adv(C, uae)
        _finite_or_raise("attacker update", L_adv=adv_for_a)
        _update(opts.A, A, adv_for_a, ascend=True, log_=update_log if _ == 0 else None, name="A")

    # classifier: descend the extended objective, then refresh the teacher
    with torch.no_grad():
        x_tilde = generate_uae(G, A, z, y_g).x_tilde
    l_nat = L.loss_nat(C, models.C_teacher, x_l, y_l, x_u, w.alpha)
    objective = l_nat
    if w.lam > 0:
        l_adv = L.cross_entropy(C, x_tilde, y_g)
        objective = objective + w.lam * l_adv
    else:
        with torch.no_grad():
            l_adv = L.cross_entropy(C, x_tilde, y_g)
    if w.gamma > 0:
        l_cgan = L.loss_C_gan(D, C, x_u, mode)
        objective = objective + w.gamma * l_cgan
    else:
        with torch.no_grad():
            l_cgan = L.loss_C_gan(D, C, x_u, mode)
    if w.beta > 0:
        l_r = L.loss_rae(C, x_l, y_l, cfg.rae_attack)
        objective = objective + w.beta * l_r
    else:
        l_r = torch.zeros((), dtype=models.dtype)
    _finite_or_raise("classifier update", L_nat=l_nat, L_adv=l_adv, L_Cgan=l_cgan, L_r=l_r)
    _update(opts.C, C, objective, ascend=False, log_=update_log, name="C")
    ema_update(models.C_teacher, C, ema_decay_at(step, total_steps, cfg.ema_decay, cfg.ema_ramp))
    if update_log is not None:
        update_log.bump("C_teacher")

    # generator: descend its GAN term against the updated D
    l_g = L.loss_G(D, G, y_g, z, mode)
    _finite_or_raise("generator update", L_G=l_g)
    _update(opts.G, G, l_g, ascend=False, log_=update_log, name="G")

    terms = L.LossTerms(
        L_D=real.item(),
        L_G=l_g.item(),
        L_Cgan=l_cgan.item(),
        L_nat=l_nat.item(),
        L_adv=l_adv.item(),
        L_r=l_r.item(),
    )
    terms.L_gan_total = L.loss_gan_total(terms.L_D, terms.L_G, terms.L_Cgan)
    terms.total = L.total_objective(terms, w)
    return terms


def pretrain_step(models: ModelBundle, batch: BatchPair, z, y_g, cfg: TrainConfig, opts: Optimizers, step=0, total_steps=1):
    """Supervised+consistency update for C and a plain G-D GAN update; A is untouched."""
    x_l, y_l, x_u = to_torch(batch, models.dtype)
    C, G, D = models.C, models.G, models.D
    models.train()
    l_nat = L.loss_nat(C, models.C_teacher, x_l, y_l, x_u, cfg.weights.alpha)
    _finite_or_raise("pretrain classifier", L_nat=l_nat)
    _update(opts.C, C, l_nat, ascend=False, log_=None, name="C")
    ema_update(models.C_teacher, C, ema_decay_at(step, total_steps, cfg.ema_decay, cfg.ema_ramp))

    with torch.no_grad():
        x_g = generate_natural(G, z, y_g)
    real = L.loss_D(D, x_l, y_l, cfg.gan_mode)
    fake = L.loss_G_from_samples(D, x_g, y_g, cfg.gan_mode, d_side=True)
    _finite_or_raise("pretrain discriminator", L_D=real, L_G=fake)
    _update(opts.D, D, real + fake, ascend=True, log_=None, name="D")
    l_g = L.loss_G(D, G, y_g, z, cfg.gan_mode)
    _finite_or_raise("pretrain generator", L_G=l_g)
    _update(opts.G, G, l_g, ascend=False, log_=None, name="G")
    return l_nat.item(), real.item(), l_g.item()


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)  # per-epoch LossTerms
    val_nat_acc: list = field(default_factory=list)
    val_rob_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    pretrain_nat_loss: list = field(default_factory=list)
    best_checkpoint: Optional[str] = None
    best_epoch: int = -1
    stop_epoch: int = 0
    wall_clock_seconds: float = 0.0
    retries: int = 0

    def metric(self, name):
        return {"val_nat_acc": self.val_nat_acc, "val_rob_acc": self.val_rob_acc}[name]

    def metric_rows(self) -> list:
        rows = []
        for i, terms in enumerate(self.losses):
            d = terms.as_dict()
            rows.append(
                {
                    "epoch": i + 1,
                    **{k: d[k] for k in ("L_D", "L_G", "L_Cgan", "L_nat", "L_adv", "L_r", "total")},
                    "val_nat_acc": self.val_nat_acc[i],
                    "val_rob_acc": self.val_rob_acc[i],
                    "lr": self.lr[i],
                }
            )
        return rows


def write_metrics_csv(report: TrainReport, path) -> Path:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report.metric_rows():
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


class Rngs:
    """Independent streams: numpy for batch indices, torch for seed noise."""

    def __init__(self, seed: int):
        self.batches = np.random.default_rng(seed)
        self.noise = torch.Generator().manual_seed(seed + 1)

    def state(self):
        return {"batches": self.batches.bit_generator.state, "noise": self.noise.get_state()}

    def load(self, state):
        self.batches.bit_generator.state = state["batches"]
        self.noise.set_state(state["noise"])


def _accuracy(C, x, y) -> float:
    with frozen(C), torch.no_grad():
        pred = C(x).argmax(dim=1)
    return float((pred == y).double().mean())


def default_steps_per_epoch(data: DatasetSplit, cfg: TrainConfig) -> int:
    if cfg.steps_per_epoch:
        return int(cfg.steps_per_epoch)
    return max(1, math.ceil(len(data.unlabeled_x) / cfg.batch_sizes[1]))


def draw_seed(models: ModelBundle, batch: BatchPair, rngs: Rngs) -> UAEBatch:
    """One noise per labeled label in the batch."""
    y = torch.as_tensor(batch.labeled_onehot).to(models.dtype)
    z = sample_noise(len(y), models.noise_dim, generator=rngs.noise, dtype=models.dtype)
    return UAEBatch(x_g=None, x_tilde=None, labels=y, z=z, z_a=None)


def pretrain(models: ModelBundle, data: DatasetSplit, cfg: TrainConfig, rngs: Optional[Rngs] = None, opts=None):
    """``cfg.T_pre`` epochs of C on its natural loss and G/D on their GAN game."""
    if cfg.T_pre == 0:
        return models
    rngs = rngs or Rngs(cfg.seed)
    spe = default_steps_per_epoch(data, cfg)
    total = cfg.T_pre * spe
    opts = opts or build_optimizers(models, cfg, total)
    step = 0
    for _ in range(cfg.T_pre):
        for _ in range(spe):
            batch = sample_batch(data, cfg.batch_sizes, rngs.batches)
            seed = draw_seed(models, batch, rngs)
            pretrain_step(models, batch, seed.z, seed.labels, cfg, opts, step, total)
            step += 1
    return models


def fit(
    cfg: TrainConfig,
    data: DatasetSplit,
    spec: Optional[NetSpec] = None,
    out_dir=None,
    models: Optional[ModelBundle] = None,
    dtype=torch.float32,
):
    """Pretrain, then run epochs of ``train_step`` with validation and early stopping.

    Returns ``(models, report)`` with the best-scoring state loaded into
    ``models``. Writes ``metrics.csv`` and ``checkpoints/{best,last}.pt``
    under ``out_dir`` when given.
    """
    t0 = time.perf_counter()
    if models is None:
        spec = spec or NetSpec(input_shape=data.example_shape)
        models = build_models(spec, data.num_classes, seed=cfg.seed, dtype=dtype)
    rngs = Rngs(cfg.seed)
    report = TrainReport()
    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = out / "checkpoints" if out is not None else None

    if cfg.T_pre:
        spe_pre = default_steps_per_epoch(data, cfg)
        pre_opts = build_optimizers(models, cfg, cfg.T_pre * spe_pre)
        pretrain(models, data, cfg, rngs, pre_opts)
    if cfg.pseudo_labels:
        with frozen(models.C), torch.no_grad():
            data = augment_with_pseudo_labels(
                data,
                lambda x: F.softmax(models.C(torch.as_tensor(x).to(models.dtype)), dim=1).numpy(),
                cfg.pseudo_threshold,
            )

    spe = default_steps_per_epoch(data, cfg)
    total = max(1, cfg.T * spe)
    opts = build_optimizers(models, cfg, total)
    val_x = torch.as_tensor(data.val_x).to(models.dtype)
    val_y = torch.as_tensor(data.val_y).long()

    best_score, best_state, bad_epochs = -math.inf, None, 0
    snapshot = _snapshot(models, opts, rngs)
    step = 0
    for epoch in range(cfg.T):
        epoch_terms = []
        i = 0
        while i < spe:
            batch = sample_batch(data, cfg.batch_sizes, rngs.batches)
            seed = draw_seed(models, batch, rngs)
            try:
                terms = train_step(models, batch, seed, cfg, opts, step, total)
            except NonFiniteLoss as exc:
                if report.retries >= 1:
                    raise
                log.warning("%s; reloading epoch-start state and halving GAN learning rates", exc)
                report.retries += 1
                _restore(models, opts, rngs, snapshot)
                opts.halve_gan_rates()
                step -= i
                epoch_terms, i = [], 0
                continue
            epoch_terms.append(terms)
            step += 1
            i += 1
        report.losses.append(_mean_terms(epoch_terms))
        report.lr.append(opts.C.lr_at(max(step - 1, 0)))
        report.val_nat_acc.append(_accuracy(models.C, val_x, val_y) if len(val_y) else 0.0)
        report.val_rob_acc.append(
            evaluate_robust_accuracy(models.C, cfg.val_attack, (val_x, val_y), models.G, models.D, seed=cfg.seed)
            if len(val_y)
            else 0.0
        )
        report.stop_epoch = epoch + 1
        score = report.metric(cfg.early_stopping.metric)[-1]
        if ckpt_dir is not None:
            save_checkpoint(ckpt_dir / "last.pt", models, rngs.state(), {"epoch": epoch + 1})
        if score > best_score:
            best_score, bad_epochs = score, 0
            best_state = copy.deepcopy(models.state_dict())
            report.best_epoch = epoch + 1
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir / "best.pt", models, rngs.state(), {"epoch": epoch + 1})
                report.best_checkpoint = str(ckpt_dir / "best.pt")
            else:
                report.best_checkpoint = f"epoch-{epoch + 1}"
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.early_stopping.patience:
                break
        snapshot = _snapshot(models, opts, rngs)

    if best_state is not None:
        models.load_state_dict(best_state)
    report.wall_clock_seconds = time.perf_counter() - t0
    if out is not None:
        write_metrics_csv(report, out / "metrics.csv")
    return models, report


def _snapshot(models, opts, rngs):
    return copy.deepcopy(
        {"models": models.state_dict(), "opts": {k: o.state_dict() for k, o in opts.items()}, "rngs": rngs.state()}
    )


def _restore(models, opts, rngs, snap):
    models.load_state_dict(snap["models"])
    for k, o in opts.items():
        o.load_state_dict(snap["opts"][k])
    rngs.load(snap["rngs"])


def _mean_terms(terms: list) -> L.LossTerms:
    if not terms:
        return L.LossTerms()
    keys = L.LossTerms.FIELDS
    return L.LossTerms(**{k: float(np.mean([getattr(t, k) for t in terms])) for k in keys})
