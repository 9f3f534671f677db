"""Evaluation-time attacks.

``pixel-pgd`` builds restricted examples inside an L-inf ball around real
inputs. ``latent-pgd`` and ``latent-search`` move the generator's seed noise
instead and decode the result, producing unrestricted examples for a given
conditioning class.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .uae import sample_noise, to_unit_range

FAMILIES = ("pixel-pgd", "latent-pgd", "latent-search")


@dataclass
class AttackSpec:
    family: str = "pixel-pgd"
    epsilon: float = 8 / 255
    step_size: float = 1 / 255
    steps: int = 20
    realism_weights: tuple = (100.0, 100.0)
    norm: str = "linf"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown attack family {self.family!r}")
        if self.norm != "linf":
            raise ValueError("only the L-inf norm is supported")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.steps > 0 and self.step_size <= 0:
            raise ValueError("step_size must be > 0 when steps > 0")
        self.realism_weights = tuple(float(w) for w in self.realism_weights)

    @property
    def label(self) -> str:
        short = {"pixel-pgd": "pgd", "latent-pgd": "gpgd", "latent-search": "usong"}[self.family]
        n = self.epsilon * 255
        if self.family == "pixel-pgd" and abs(n - round(n)) < 1e-9:
            return f"{short}-{round(n)}/255"
        return f"{short}-{self.epsilon:g}"

    # standard evaluation battery
    @classmethod
    def pgd(cls, eps_255: float = 8, steps: int = 20) -> "AttackSpec":
        return cls("pixel-pgd", epsilon=eps_255 / 255, step_size=1 / 255, steps=steps)

    @classmethod
    def gpgd(cls, eps: float = 0.1) -> "AttackSpec":
        return cls("latent-pgd", epsilon=eps, step_size=0.1, steps=20)

    @classmethod
    def usong(cls) -> "AttackSpec":
        return cls("latent-search", epsilon=0.01, step_size=0.1, steps=200, realism_weights=(100.0, 100.0))


def _labels(y: torch.Tensor) -> torch.Tensor:
    return y.argmax(dim=1) if y.ndim == 2 else y


@contextlib.contextmanager
def frozen(*modules):
    """Eval mode and no parameter grads for the duration; restores both."""
    states = [(m, m.training, [p.requires_grad for p in m.parameters()]) for m in modules if m is not None]
    try:
        for m, _, _ in states:
            m.eval()
            for p in m.parameters():
                p.requires_grad_(False)
        yield
    finally:
        for m, mode, flags in states:
            m.train(mode)
            for p, f in zip(m.parameters(), flags):
                p.requires_grad_(f)


def pgd_attack(C, x: torch.Tensor, y: torch.Tensor, spec: AttackSpec) -> torch.Tensor:
    """Sign-gradient ascent on cross-entropy, projected onto the eps-ball and [0, 1].

    Runs C as given (callers pick train/eval mode); never writes parameter grads.
    """
    if spec.family != "pixel-pgd":
        raise ValueError(f"pgd_attack needs a pixel-pgd spec, got {spec.family}")
    target = _labels(y)
    x = x.detach()
    x_adv = x.clone()
    eps = spec.epsilon
    lo, hi = x - eps, x + eps
    for _ in range(spec.steps):
        x_adv.requires_grad_(True)
        loss = F.cross_entropy(C(x_adv), target, reduction="sum")
        (grad,) = torch.autograd.grad(loss, x_adv)
        x_adv = x_adv.detach() + spec.step_size * grad.sign()
        x_adv = torch.min(torch.max(x_adv, lo), hi).clamp_(0.0, 1.0)
    return x_adv.detach()


def latent_pgd_attack(C, G, z: torch.Tensor, y: torch.Tensor, spec: AttackSpec) -> torch.Tensor:
    """Sign-gradient ascent on -log P_C(y | G(z', y)) over ||z' - z||_inf <= eps."""
    if spec.family != "latent-pgd":
        raise ValueError(f"latent_pgd_attack needs a latent-pgd spec, got {spec.family}")
    target = _labels(y)
    with frozen(C, G):
        z = z.detach()
        z_adv = z.clone()
        for _ in range(spec.steps):
            z_adv.requires_grad_(True)
            loss = F.cross_entropy(C(to_unit_range(G(z_adv, y))), target, reduction="sum")
            (grad,) = torch.autograd.grad(loss, z_adv)
            z_adv = z_adv.detach() + spec.step_size * grad.sign()
            z_adv = torch.min(torch.max(z_adv, z - spec.epsilon), z + spec.epsilon)
        with torch.no_grad():
            return to_unit_range(G(z_adv, y))


def latent_search_attack(C, G, D, y: torch.Tensor, spec: AttackSpec, rng: torch.Generator, z0=None):
    """Unconstrained latent search with drift and realism penalties.

    Maximises ``CE(C(x), y) - l1 * mean(relu(|z - z0| - eps)) - l2 * relu(-D(x, y))``
    per sample with Adam at ``spec.step_size``. Keeps, per sample, the
    highest-scoring iterate that fools C, otherwise the highest-scoring one.
    Returns ``(x_tilde, success)`` with ``success[i] == (argmax C(x_tilde[i]) != y[i])``.
    """
    if spec.family != "latent-search":
        raise ValueError(f"latent_search_attack needs a latent-search spec, got {spec.family}")
    target = _labels(y)
    lam_drift, lam_real = spec.realism_weights
    with frozen(C, G, D):
        if z0 is None:
            z0 = sample_noise(len(y), G.spec.noise_dim, generator=rng, dtype=y.dtype)
        z0 = z0.detach()
        with torch.no_grad():
            best_x = to_unit_range(G(z0, y))
            best_fool = C(best_x).argmax(dim=1) != target
            best_score = torch.full((len(y),), -float("inf"), dtype=y.dtype)
        z = z0.clone().requires_grad_(True)
        opt = torch.optim.Adam([z], lr=spec.step_size)
        for _ in range(spec.steps):
            x = to_unit_range(G(z, y))
            ce = F.cross_entropy(C(x), target, reduction="none")
            drift = F.relu((z - z0).abs() - spec.epsilon).mean(dim=1)
            realism = F.relu(-D(x, y))
            score = ce - lam_drift * drift - lam_real * realism
            with torch.no_grad():
                fool = C(x).argmax(dim=1) != target
                better = (fool & ~best_fool) | ((fool == best_fool) & (score > best_score))
                best_x = torch.where(better.view(-1, *[1] * (x.ndim - 1)), x.detach(), best_x)
                best_score = torch.where(better, score.detach(), best_score)
                best_fool = best_fool | fool
            opt.zero_grad()
            (-score.sum()).backward()
            opt.step()
        with torch.no_grad():
            success = C(best_x).argmax(dim=1) != target
    return best_x.detach(), success


def _as_tensor(a, dtype):
    if isinstance(a, torch.Tensor):
        return a
    return torch.as_tensor(np.asarray(a))


def evaluate_robust_accuracy(
    C,
    attack: AttackSpec,
    testset,
    G=None,
    D=None,
    seed: int = 0,
    batch_size: int = 512,
) -> float:
    """Fraction of test items still classified correctly after the attack.

    For latent families one seed noise is drawn per test item, conditioned on
    that item's class, so the class proportions follow the test set.
    """
    x_all, y_all = testset
    dtype = next(C.parameters()).dtype
    x_all = _as_tensor(x_all, dtype).to(dtype)
    y_all = _as_tensor(y_all, dtype).long()
    if len(y_all) == 0:
        raise ValueError("empty test set")
    num_classes = C.head.out_features
    gen = torch.Generator().manual_seed(seed)
    correct = 0
    with frozen(C, G, D):
        for start in range(0, len(y_all), batch_size):
            y = y_all[start : start + batch_size]
            onehot = F.one_hot(y, num_classes).to(dtype)
            if attack.family == "pixel-pgd":
                x_adv = pgd_attack(C, x_all[start : start + batch_size], y, attack)
            else:
                if G is None:
                    raise ValueError(f"{attack.family} needs a generator")
                z = sample_noise(len(y), G.spec.noise_dim, generator=gen, dtype=dtype)
                if attack.family == "latent-pgd":
                    x_adv = latent_pgd_attack(C, G, z, onehot, attack)
                else:
                    if D is None:
                        raise ValueError("latent-search needs a discriminator")
                    x_adv, _ = latent_search_attack(C, G, D, onehot, attack, gen, z0=z)
            with torch.no_grad():
                correct += int((C(x_adv).argmax(dim=1) == y).sum())
    return correct / len(y_all)
