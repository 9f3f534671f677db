"""The four networks plus the EMA teacher.

Two families share one interface: ``kind="mlp"`` for flat inputs such as the
2-D mixtures and ``kind="conv"`` for 3x32x32 images (a reduced wide ResNet
classifier and residual generator/discriminator stacks).
"""

from __future__ import annotations

import copy
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT = "uatrain-bundle"
CHECKPOINT_VERSION = 1


@dataclass
class NetSpec:
    kind: str = "mlp"
    input_shape: tuple = (2,)
    classifier_depth: int = 2
    classifier_width: int = 64
    generator_channels: int = 64
    discriminator_channels: int = 64
    attacker_hidden: int = 4
    noise_dim: int = 8
    label_embed_dim: int = 8
    sn_power_iterations: int = 1
    attacker_identity_init: bool = False
    attacker_clamp: Optional[float] = None

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.kind not in ("mlp", "conv"):
            raise ValueError(f"unknown net kind {self.kind!r}")
        for name in (
            "classifier_depth",
            "classifier_width",
            "generator_channels",
            "discriminator_channels",
            "attacker_hidden",
            "noise_dim",
            "label_embed_dim",
            "sn_power_iterations",
        ):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.kind == "conv":
            if self.input_shape != (3, 32, 32):
                raise ValueError("conv nets expect 3x32x32 inputs")
            if (self.classifier_depth - 4) % 6 != 0:
                raise ValueError("wide-resnet depth must be 6k + 4")

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @classmethod
    def image_default(cls, **overrides) -> "NetSpec":
        base = dict(
            kind="conv",
            input_shape=(3, 32, 32),
            classifier_depth=16,
            classifier_width=2,
            generator_channels=64,
            discriminator_channels=64,
            attacker_hidden=16,
            noise_dim=100,
            label_embed_dim=16,
        )
        base.update(overrides)
        return cls(**base)


# --------------------------------------------------------------------------
# spectral normalisation
# --------------------------------------------------------------------------


class _SpectralNorm:
    """Power-iteration estimate of the top singular value of ``self.weight``."""

    eps = 1e-12

    def _init_sn(self, n_power_iterations: int):
        self.n_power_iterations = n_power_iterations
        rows = self.weight.shape[0]
        u = torch.randn(rows, dtype=self.weight.dtype)
        self.register_buffer("sn_u", u / u.norm().clamp_min(self.eps))

    def power_iterate(self, steps: int):
        with torch.no_grad():
            w = self.weight.reshape(self.weight.shape[0], -1)
            u = self.sn_u
            for _ in range(steps):
                v = w.t() @ u
                v = v / v.norm().clamp_min(self.eps)
                u = w @ v
                u = u / u.norm().clamp_min(self.eps)
            self.sn_u.copy_(u)

    def sigma(self) -> torch.Tensor:
        w = self.weight.reshape(self.weight.shape[0], -1)
        u = self.sn_u.clone()  # later forwards advance sn_u in place
        v = w.t() @ u
        v = (v / v.norm().clamp_min(self.eps)).detach()
        return u @ (w @ v)

    def normalized_weight(self) -> torch.Tensor:
        if self.training:
            self.power_iterate(self.n_power_iterations)
        s = self.sigma()
        if s.abs().item() <= self.eps:
            return self.weight
        return self.weight / s


class SNLinear(nn.Linear, _SpectralNorm):
    def __init__(self, in_features, out_features, bias=True, n_power_iterations=1):
        super().__init__(in_features, out_features, bias=bias)
        self._init_sn(n_power_iterations)

    def forward(self, x):
        return F.linear(x, self.normalized_weight(), self.bias)


class SNConv2d(nn.Conv2d, _SpectralNorm):
    def __init__(self, *args, n_power_iterations=1, **kwargs):
        super().__init__(*args, **kwargs)
        self._init_sn(n_power_iterations)

    def forward(self, x):
        return self._conv_forward(x, self.normalized_weight(), self.bias)


def spectral_layers(module: nn.Module):
    return [m for m in module.modules() if isinstance(m, _SpectralNorm)]


def spectral_normalize(D: nn.Module, n_power_iterations: int = 5) -> nn.Module:
    """Advance every power-iteration estimate in ``D`` by ``n_power_iterations``."""
    for layer in spectral_layers(D):
        layer.power_iterate(n_power_iterations)
    return D


def effective_weights(D: nn.Module) -> list:
    """The weights ``D`` actually applies, without touching its power-iteration state."""
    out = []
    with torch.no_grad():
        for layer in spectral_layers(D):
            s = layer.sigma()
            w = layer.weight if s.abs().item() <= layer.eps else layer.weight / s
            out.append(w.reshape(w.shape[0], -1).clone())
    return out


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


class LabelEmbed(nn.Module):
    """Linear map of a (one-hot or soft) label vector; row lookup for one-hots."""

    def __init__(self, num_classes, dim):
        super().__init__()
        self.proj = nn.Linear(num_classes, dim, bias=False)

    def forward(self, y):
        return self.proj(y)


class ResidualMLP(nn.Module):
    def __init__(self, width, norm=True, sn_iters=None):
        super().__init__()
        lin = (lambda a, b: SNLinear(a, b, n_power_iterations=sn_iters)) if sn_iters else nn.Linear
        self.fc1 = lin(width, width)
        self.fc2 = lin(width, width)
        self.bn1 = nn.BatchNorm1d(width) if norm else nn.Identity()
        self.bn2 = nn.BatchNorm1d(width) if norm else nn.Identity()

    def forward(self, h):
        out = F.relu(self.bn1(self.fc1(h)))
        out = self.bn2(self.fc2(out))
        return F.relu(h + out)


class ResBlock2d(nn.Module):
    """Two 3x3 convolutions with a 1x1 skip; optional up/down sampling."""

    def __init__(self, c_in, c_out, resample=None, norm=True, sn_iters=None):
        super().__init__()
        if sn_iters:
            conv = lambda a, b, k, p: SNConv2d(a, b, k, padding=p, n_power_iterations=sn_iters)
        else:
            conv = lambda a, b, k, p: nn.Conv2d(a, b, k, padding=p)
        self.conv1 = conv(c_in, c_out, 3, 1)
        self.conv2 = conv(c_out, c_out, 3, 1)
        self.skip = conv(c_in, c_out, 1, 0) if c_in != c_out or resample else nn.Identity()
        self.bn1 = nn.BatchNorm2d(c_in) if norm else nn.Identity()
        self.bn2 = nn.BatchNorm2d(c_out) if norm else nn.Identity()
        self.resample = resample

    def _resample(self, h):
        if self.resample == "up":
            return F.interpolate(h, scale_factor=2, mode="nearest")
        if self.resample == "down":
            return F.avg_pool2d(h, 2)
        return h

    def forward(self, x):
        h = F.relu(self.bn1(x))
        if self.resample == "up":
            h = self._resample(h)
        h = self.conv1(h)
        h = self.conv2(F.relu(self.bn2(h)))
        if self.resample == "down":
            h = self._resample(h)
        if self.resample == "up":
            skip = self.skip(self._resample(x))
        else:
            skip = self._resample(self.skip(x))
        return h + skip


class WideBasic(nn.Module):
    def __init__(self, c_in, c_out, stride):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1, bias=False)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False)

    def forward(self, x):
        o = F.relu(self.bn1(x))
        y = self.conv1(o)
        y = self.conv2(F.relu(self.bn2(y)))
        return y + (x if self.shortcut is None else self.shortcut(o))


# --------------------------------------------------------------------------
# the four networks
# --------------------------------------------------------------------------


class Classifier(nn.Module):
    def __init__(self, spec: NetSpec, num_classes: int):
        super().__init__()
        self.kind = spec.kind
        if spec.kind == "mlp":
            layers, d = [], spec.input_dim
            for _ in range(spec.classifier_depth):
                layers += [nn.Linear(d, spec.classifier_width), nn.ReLU()]
                d = spec.classifier_width
            self.body = nn.Sequential(nn.Flatten(), *layers)
            self.feature_dim = d
        else:
            n = (spec.classifier_depth - 4) // 6
            widths = [16, 16 * spec.classifier_width, 32 * spec.classifier_width, 64 * spec.classifier_width]
            blocks = [nn.Conv2d(3, widths[0], 3, padding=1, bias=False)]
            c_in = widths[0]
            for stage, stride in zip(range(1, 4), (1, 2, 2)):
                for i in range(n):
                    blocks.append(WideBasic(c_in, widths[stage], stride if i == 0 else 1))
                    c_in = widths[stage]
            blocks += [nn.BatchNorm2d(c_in), nn.ReLU(), nn.AdaptiveAvgPool2d(1), nn.Flatten()]
            self.body = nn.Sequential(*blocks)
            self.feature_dim = c_in
        self.head = nn.Linear(self.feature_dim, num_classes)

    def features(self, x):
        return self.body(x)

    def forward(self, x):
        return self.head(self.features(x))


class Generator(nn.Module):
    """(noise, label vector) -> example in [-1, 1] (tanh output)."""

    def __init__(self, spec: NetSpec, num_classes: int):
        super().__init__()
        self.spec = spec
        self.embed = LabelEmbed(num_classes, spec.label_embed_dim)
        c = spec.generator_channels
        d_in = spec.noise_dim + spec.label_embed_dim
        if spec.kind == "mlp":
            self.inp = nn.Sequential(nn.Linear(d_in, c), nn.BatchNorm1d(c), nn.ReLU())
            self.blocks = nn.Sequential(ResidualMLP(c), ResidualMLP(c))
            self.out = nn.Linear(c, spec.input_dim)
        else:
            self.inp = nn.Linear(d_in, c * 4 * 4)
            self.blocks = nn.Sequential(*(ResBlock2d(c, c, resample="up") for _ in range(3)))
            self.out = nn.Sequential(nn.BatchNorm2d(c), nn.ReLU(), nn.Conv2d(c, 3, 1))

    def forward(self, z, y):
        h = self.inp(torch.cat([z, self.embed(y)], dim=1))
        if self.spec.kind == "conv":
            h = h.view(-1, self.spec.generator_channels, 4, 4)
        h = self.out(self.blocks(h))
        return torch.tanh(h).reshape(-1, *self.spec.input_shape)


class Discriminator(nn.Module):
    """(example in [0, 1], label vector) -> unbounded realism score."""

    def __init__(self, spec: NetSpec, num_classes: int):
        super().__init__()
        self.spec = spec
        it = spec.sn_power_iterations
        self.embed = LabelEmbed(num_classes, spec.label_embed_dim)
        c = spec.discriminator_channels
        if spec.kind == "mlp":
            self.inp = SNLinear(spec.input_dim + spec.label_embed_dim, c, n_power_iterations=it)
            self.blocks = nn.Sequential(ResidualMLP(c, norm=False, sn_iters=it), ResidualMLP(c, norm=False, sn_iters=it))
        else:
            self.inp = ResBlock2d(3 + spec.label_embed_dim, c, resample="down", norm=False, sn_iters=it)
            self.blocks = nn.Sequential(
                *(ResBlock2d(c, c, resample="down", norm=False, sn_iters=it) for _ in range(3))
            )
        self.out = SNLinear(c, 1, n_power_iterations=it)

    def forward(self, x, y):
        e = self.embed(y)
        if self.spec.kind == "mlp":
            h = F.relu(self.inp(torch.cat([x.reshape(len(x), -1), e], dim=1)))
            h = self.blocks(h)
        else:
            e = e[:, :, None, None].expand(-1, -1, *x.shape[2:])
            h = self.blocks(self.inp(torch.cat([x, e], dim=1)))
            h = F.relu(h).sum(dim=(2, 3))
        return self.out(h).squeeze(1)


class Attacker(nn.Module):
    """(noise, label vector) -> perturbed noise ``z + delta`` of the same size."""

    def __init__(self, spec: NetSpec, num_classes: int):
        super().__init__()
        self.spec = spec
        c = spec.attacker_hidden
        self.embed = LabelEmbed(num_classes, spec.label_embed_dim)
        self.inp = nn.Linear(spec.noise_dim + spec.label_embed_dim, c * 16)
        self.blocks = nn.Sequential(ResBlock2d(c, 2 * c), ResBlock2d(2 * c, c))
        self.mlp = nn.Linear(c * 16, c * 16)
        self.out = nn.Linear(c * 16, spec.noise_dim)
        if spec.attacker_identity_init:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def forward(self, z, y):
        h = F.relu(self.inp(torch.cat([z, self.embed(y)], dim=1)))
        h = self.blocks(h.view(len(z), -1, 4, 4)).reshape(len(z), -1)
        delta = self.out(F.relu(self.mlp(h)))
        if self.spec.attacker_clamp is not None:
            delta = delta.clamp(-self.spec.attacker_clamp, self.spec.attacker_clamp)
        return z + delta


# --------------------------------------------------------------------------
# bundle
# --------------------------------------------------------------------------


@dataclass
class ModelBundle:
    C: Classifier
    G: Generator
    D: Discriminator
    A: Attacker
    C_teacher: Classifier
    spec: NetSpec
    num_classes: int

    @property
    def noise_dim(self) -> int:
        return self.spec.noise_dim

    NAMES = ("C", "G", "D", "A", "C_teacher")

    def modules(self):
        return {name: getattr(self, name) for name in self.NAMES}

    def train(self, mode: bool = True):
        for m in self.modules().values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def to(self, dtype):
        for m in self.modules().values():
            m.to(dtype)
        return self

    @property
    def dtype(self):
        return next(self.C.parameters()).dtype

    def state_dict(self):
        return {name: m.state_dict() for name, m in self.modules().items()}

    def load_state_dict(self, state):
        for name, m in self.modules().items():
            m.load_state_dict(state[name])


def build_models(spec: NetSpec, num_classes: int, seed: int = 0, dtype=torch.float32) -> ModelBundle:
    if num_classes < 2:
        raise ValueError("need at least two classes")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        C = Classifier(spec, num_classes)
        G = Generator(spec, num_classes)
        D = Discriminator(spec, num_classes)
        A = Attacker(spec, num_classes)
    teacher = copy.deepcopy(C)
    for p in teacher.parameters():
        p.requires_grad_(False)
    return ModelBundle(C, G, D, A, teacher, spec, num_classes).to(dtype)


def classify(C: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """Softmax rows of C on ``x``."""
    return F.softmax(C(x), dim=1)


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, decay: float) -> nn.Module:
    """theta' <- decay * theta' + (1 - decay) * theta for every parameter."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must lie in [0, 1]")
    t_params, s_params = list(teacher.parameters()), list(student.parameters())
    if [p.shape for p in t_params] != [p.shape for p in s_params]:
        raise ValueError("teacher and student parameter shapes differ")
    for tp, sp in zip(t_params, s_params):
        tp.mul_(decay).add_(sp, alpha=1.0 - decay)
    for tb, sb in zip(teacher.buffers(), student.buffers()):
        if tb.dtype.is_floating_point:
            tb.mul_(decay).add_(sb, alpha=1.0 - decay)
        else:
            tb.copy_(sb)
    return teacher


def ema_decay_at(step: int, total_steps: int, decay: float = 0.999, ramp_fraction: float = 0.01) -> float:
    """Linear ramp from 0 to ``decay`` over the first ``ramp_fraction`` of steps."""
    ramp = max(1, int(math.ceil(ramp_fraction * total_steps)))
    return decay * min(1.0, step / ramp)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, bundle: ModelBundle, rng_state: Optional[dict] = None, extra: Optional[dict] = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(bundle.spec),
        "num_classes": bundle.num_classes,
        "dtype": str(bundle.dtype),
        "state": bundle.state_dict(),
        "rng": rng_state or {},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(payload, buf)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path):
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    spec = NetSpec(**payload["spec"])
    dtype = getattr(torch, payload["dtype"].replace("torch.", ""))
    bundle = build_models(spec, payload["num_classes"], dtype=dtype)
    bundle.load_state_dict(payload["state"])
    return bundle, payload
