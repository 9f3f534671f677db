"""Loss terms of the joint game.

GAN terms come in two modes. ``linear`` is the literal objective (the
discriminator score enters linearly). ``hinge`` keeps the same sign
convention (the discriminator *ascends*, G and C *descend*) but clips the
discriminator-side terms: ``L_D = -E relu(1 - D(real))`` and the fake terms
become ``-E relu(1 + D(fake))`` when ``d_side=True``. The G/C-side fake
terms are ``-E D(fake)`` in both modes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import torch
import torch.nn.functional as F

from .attacks import AttackSpec, pgd_attack
from .uae import UAEBatch, generate_natural

MODES = ("linear", "hinge")


@dataclass
class WeightConfig:
    lam: float = 10.0
    gamma: float = 0.03
    beta: float = 6.0
    alpha: float = 50.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v >= 0:
                raise ValueError(f"weight {f.name} must be >= 0, got {v}")


@dataclass
class LossTerms:
    L_D: float = 0.0
    L_G: float = 0.0
    L_Cgan: float = 0.0
    L_gan_total: float = 0.0
    L_nat: float = 0.0
    L_adv: float = 0.0
    L_r: float = 0.0
    total: float = 0.0

    FIELDS = ("L_D", "L_G", "L_Cgan", "L_gan_total", "L_nat", "L_adv", "L_r", "total")

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    def is_finite(self) -> bool:
        return all(torch.isfinite(torch.as_tensor(float(v))) for v in asdict(self).values())


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown GAN loss mode {mode!r}")


def _labels(y):
    return y.argmax(dim=1) if y.ndim == 2 else y


def _nonempty(x, what):
    if len(x) == 0:
        raise ValueError(f"{what} batch is empty")


def loss_D(D, x_l, y_l, mode: str = "linear"):
    """Real-data term: mean D(x_l, y_l), or -mean relu(1 - D) in hinge mode."""
    _check_mode(mode)
    _nonempty(x_l, "labeled")
    score = D(x_l, y_l)
    if mode == "linear":
        return score.mean()
    return -F.relu(1.0 - score).mean()


def _fake_term(score, mode, d_side):
    if mode == "hinge" and d_side:
        return -F.relu(1.0 + score).mean()
    return -score.mean()


def loss_G(D, G, labels, noises, mode: str = "linear", d_side: bool = False):
    """Mean of -D(G(z, y), y) over one noise per label."""
    _check_mode(mode)
    if len(labels) != len(noises):
        raise ValueError(f"{len(noises)} noises for {len(labels)} labels")
    _nonempty(labels, "label")
    x_g = generate_natural(G, noises, labels)
    return _fake_term(D(x_g, labels), mode, d_side)


def loss_G_from_samples(D, x_g, labels, mode: str = "linear", d_side: bool = False):
    _check_mode(mode)
    return _fake_term(D(x_g, labels), mode, d_side)


def loss_C_gan(D, C, x_c, mode: str = "linear", d_side: bool = False):
    """Mean of -D(x_c, softmax(C(x_c))); gradient flows into C through the soft label."""
    _check_mode(mode)
    _nonempty(x_c, "unlabeled")
    y_c = F.softmax(C(x_c), dim=1)
    return _fake_term(D(x_c, y_c), mode, d_side)


def loss_gan_total(L_D, L_G, L_Cgan, modes=None):
    """L_D + L_G / 2 + L_Cgan / 2; ``modes`` optionally names each term's GAN mode."""
    if modes is not None:
        for m in modes:
            _check_mode(m)
        if len(set(modes)) > 1:
            raise ValueError(f"GAN terms computed in different modes: {tuple(modes)}")
    return L_D + 0.5 * L_G + 0.5 * L_Cgan


def cross_entropy(C, x, y):
    return F.cross_entropy(C(x), _labels(y))


def consistency(C, C_teacher, x_u):
    """Mean over x of the squared distance between student and teacher softmax rows."""
    p = F.softmax(C(x_u), dim=1)
    with torch.no_grad():
        q = F.softmax(C_teacher(x_u), dim=1)
    return ((p - q) ** 2).sum(dim=1).mean()


def loss_nat(C, C_teacher, x_l, y_l, x_u=None, alpha: float = 0.0):
    """Cross-entropy on labeled data plus alpha times the teacher consistency."""
    _nonempty(x_l, "labeled")
    ce = cross_entropy(C, x_l, y_l)
    if alpha == 0:
        return ce
    if x_u is None or len(x_u) == 0:
        raise ValueError("consistency term needs unlabeled data when alpha > 0")
    return ce + alpha * consistency(C, C_teacher, x_u)


def loss_adv(C, uae: UAEBatch):
    """Mean -log P_C(y | x_tilde) over the generated adversarial batch."""
    _nonempty(uae.labels, "UAE")
    return cross_entropy(C, uae.x_tilde, uae.labels)


def loss_rae(C, x, y, attack: AttackSpec):
    """Cross-entropy at the PGD point; the attack itself is not differentiated."""
    if attack.family != "pixel-pgd":
        raise ValueError("restricted adversarial loss needs a pixel-pgd attack")
    _nonempty(x, "labeled")
    x_hat = pgd_attack(C, x, y, attack)
    return cross_entropy(C, x_hat, y)


def total_objective(terms: LossTerms, w: WeightConfig):
    for name in ("L_nat", "L_adv", "L_gan_total", "L_r"):
        if getattr(terms, name, None) is None:
            raise ValueError(f"missing loss term {name}")
    return terms.L_nat + w.lam * terms.L_adv + w.gamma * terms.L_gan_total + w.beta * terms.L_r
