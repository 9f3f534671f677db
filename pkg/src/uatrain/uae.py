"""Attack module: the attacker perturbs a seed noise, the generator decodes it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch


@dataclass
class UAEBatch:
    x_g: torch.Tensor
    x_tilde: torch.Tensor
    labels: torch.Tensor
    z: torch.Tensor
    z_a: torch.Tensor

    def __len__(self):
        return len(self.labels)


def to_unit_range(x: torch.Tensor) -> torch.Tensor:
    """Map generator output from [-1, 1] to the canonical [0, 1]."""
    return (x + 1.0) * 0.5


def sample_noise(n: int, dim: int, generator: Optional[torch.Generator] = None, dtype=torch.float32) -> torch.Tensor:
    return torch.randn(n, dim, generator=generator, dtype=dtype)


def _check(z, y, expected_dim=None):
    if z.ndim != 2 or y.ndim != 2 or len(z) != len(y):
        raise ValueError(f"noise {tuple(z.shape)} and labels {tuple(y.shape)} do not pair up")
    if expected_dim is not None and z.shape[1] != expected_dim:
        raise ValueError(f"noise has dimension {z.shape[1]}, generator expects {expected_dim}")


def generate_natural(G, z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """x_g = G(z, y), returned in [0, 1]."""
    _check(z, y, G.spec.noise_dim)
    return to_unit_range(G(z, y))


def perturb_seed(A, z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """z_a = A(z, y)."""
    _check(z, y, A.spec.noise_dim)
    return A(z, y)


def generate_uae(G, A, z: torch.Tensor, y: torch.Tensor) -> UAEBatch:
    """Decode both the seed and its perturbed version through the same generator."""
    z_a = perturb_seed(A, z, y)
    x_g = generate_natural(G, z, y)
    x_tilde = generate_natural(G, z_a, y)
    return UAEBatch(x_g=x_g, x_tilde=x_tilde, labels=y, z=z, z_a=z_a)
