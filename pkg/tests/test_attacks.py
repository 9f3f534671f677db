import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from uatrain import attacks as atk
from uatrain.attacks import AttackSpec
from uatrain.evaluation import natural_accuracy
from uatrain.nets import NetSpec
from uatrain.uae import generate_natural, sample_noise


class LinearC(nn.Module):
    def __init__(self, w, b):
        super().__init__()
        w, b = torch.as_tensor(w, dtype=torch.float64), torch.as_tensor(b, dtype=torch.float64)
        self.head = nn.Linear(w.shape[1], w.shape[0]).double()
        with torch.no_grad():
            self.head.weight.copy_(w)
            self.head.bias.copy_(b)

    def forward(self, x):
        return self.head(x.reshape(len(x), -1))


class LinearG(nn.Module):
    """x = tanh-free affine decoder z -> z @ W, ignoring the label."""

    def __init__(self, w):
        super().__init__()
        self.w = nn.Parameter(torch.as_tensor(w, dtype=torch.float64))
        self.spec = NetSpec(input_shape=(self.w.shape[1],), noise_dim=self.w.shape[0])

    def forward(self, z, y):
        return z @ self.w


def _data(n=30, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(n, 2, generator=g, dtype=torch.float64)
    y = (x[:, 0] > x[:, 1]).long()
    return x, y


def test_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec("fgsm")
    with pytest.raises(ValueError):
        AttackSpec(epsilon=-0.1)
    with pytest.raises(ValueError):
        AttackSpec(steps=-1)
    with pytest.raises(ValueError):
        AttackSpec(step_size=0, steps=3)
    with pytest.raises(ValueError):
        AttackSpec(norm="l2")
    AttackSpec(step_size=0, steps=0)


def test_battery_defaults():
    pgd = AttackSpec.pgd(8)
    assert (pgd.epsilon, pgd.step_size, pgd.steps) == (8 / 255, 1 / 255, 20)
    g = AttackSpec.gpgd(0.1)
    assert (g.epsilon, g.step_size, g.steps) == (0.1, 0.1, 20)
    u = AttackSpec.usong()
    assert u.steps == 200 and u.realism_weights == (100.0, 100.0)
    assert [s.label for s in (pgd, AttackSpec.pgd(2), g, AttackSpec.gpgd(0.01), u)] == [
        "pgd-8/255",
        "pgd-2/255",
        "gpgd-0.1",
        "gpgd-0.01",
        "usong-0.01",
    ]


def test_wrong_family_rejected(tiny_models):
    x, y = _data()
    with pytest.raises(ValueError):
        atk.pgd_attack(tiny_models.C, x, y, AttackSpec.gpgd())
    with pytest.raises(ValueError):
        atk.latent_pgd_attack(tiny_models.C, tiny_models.G, x, y, AttackSpec.pgd())
    with pytest.raises(ValueError):
        atk.latent_search_attack(tiny_models.C, tiny_models.G, tiny_models.D, y, AttackSpec.pgd(), None)


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    eps=st.floats(0, 0.3),
    steps=st.integers(0, 8),
    step=st.floats(1e-3, 0.2),
    seed=st.integers(0, 10_000),
)
def test_pgd_feasibility(tiny_models, eps, steps, step, seed):  # the attack never mutates the model
    x, _ = _data(seed=seed)
    y = torch.arange(len(x)) % 3
    x_hat = atk.pgd_attack(tiny_models.C, x, y, AttackSpec(epsilon=eps, step_size=step, steps=steps))
    assert torch.all((x_hat - x).abs().amax(dim=1) <= eps + 1e-7)
    assert torch.all((x_hat >= 0) & (x_hat <= 1))


def test_pgd_eps_zero_identity(tiny_models):
    x, y = _data()
    assert torch.equal(atk.pgd_attack(tiny_models.C, x, y % 3, AttackSpec(epsilon=0.0)), x)


def test_pgd_leaves_no_param_grads(tiny_models):
    x, y = _data()
    atk.pgd_attack(tiny_models.C, x, y % 3, AttackSpec.pgd(8))
    assert all(p.grad is None for p in tiny_models.C.parameters())


def test_pgd_linear_one_step_oracle():
    w = np.array([[1.0, -2.0], [-0.5, 0.3], [0.2, 0.9]])
    b = np.array([0.1, -0.2, 0.05])
    C = LinearC(w, b)
    x, _ = _data(n=12)
    y = torch.arange(12) % 3
    step = 0.04
    x_hat = atk.pgd_attack(C, x, y, AttackSpec(epsilon=0.1, step_size=step, steps=1)).numpy()
    X = x.numpy()
    logits = X @ w.T + b
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    grad = (p - np.eye(3)[y.numpy()]) @ w
    np.testing.assert_allclose(x_hat, np.clip(X + step * np.sign(grad), 0, 1), atol=1e-15)


def test_robust_accuracy_eps_zero_equals_natural(tiny_models):
    x, y = _data(n=60)
    y = y + (x[:, 0] > 0.8).long()  # three classes
    spec = AttackSpec(epsilon=0.0, step_size=0.01, steps=5)
    assert atk.evaluate_robust_accuracy(tiny_models.C, spec, (x, y)) == natural_accuracy(tiny_models.C, (x, y))


@pytest.mark.parametrize("spec", [AttackSpec.pgd(8), AttackSpec.gpgd(0.1), AttackSpec("latent-search", 0.01, 0.1, 5)])
def test_constant_classifier_gets_one_over_k(tiny_models, spec):
    C = LinearC(np.zeros((3, 2)), [5.0, 0.0, 0.0])
    y = torch.arange(30) % 3
    x = torch.rand(30, 2, dtype=torch.float64)
    acc = atk.evaluate_robust_accuracy(C, spec, (x, y), tiny_models.G, tiny_models.D, seed=1)
    assert acc == pytest.approx(1 / 3, abs=1e-12)


def test_margin_toy_robust_equals_natural():
    w = np.array([[1.0, -1.0], [-1.0, 1.0]])
    C = LinearC(w, [0.0, 0.0])
    g = torch.Generator().manual_seed(0)
    x = torch.rand(200, 2, generator=g, dtype=torch.float64)
    eps = 8 / 255
    keep = (x[:, 0] - x[:, 1]).abs() > 2 * eps + 1e-3  # margin exceeds eps * ||w_0 - w_1||_1 / 2
    x = x[keep]
    y = (x[:, 1] > x[:, 0]).long()
    y[:5] = 1 - y[:5]  # some natural errors too
    nat = natural_accuracy(C, (x, y))
    assert 0 < nat < 1
    assert atk.evaluate_robust_accuracy(C, AttackSpec.pgd(8), (x, y)) == nat


def test_robust_accuracy_monotone_in_eps():
    C = LinearC(np.array([[2.0, -1.0], [-1.0, 2.0], [0.5, 0.5]]), [0.0, 0.0, -0.4])
    g = torch.Generator().manual_seed(5)
    x = torch.rand(500, 2, generator=g, dtype=torch.float64)
    y = C(x).argmax(1)
    accs = [atk.evaluate_robust_accuracy(C, AttackSpec.pgd(e), (x, y)) for e in (0, 2, 4, 8)]
    assert accs[0] == 1.0
    assert all(a >= b for a, b in zip(accs, accs[1:]))
    assert accs[-1] < 1.0


def test_empty_test_set(tiny_models):
    with pytest.raises(ValueError):
        atk.evaluate_robust_accuracy(tiny_models.C, AttackSpec.pgd(8), (torch.zeros(0, 2), torch.zeros(0)))


def test_latent_attacks_need_generator(tiny_models):
    x, y = _data()
    with pytest.raises(ValueError):
        atk.evaluate_robust_accuracy(tiny_models.C, AttackSpec.gpgd(), (x, y % 3))
    with pytest.raises(ValueError):
        atk.evaluate_robust_accuracy(tiny_models.C, AttackSpec.usong(), (x, y % 3), tiny_models.G)


def test_latent_pgd_eps_zero(tiny_models):
    z = sample_noise(6, 3, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
    y = F.one_hot(torch.arange(6) % 3, 3).double()
    out = atk.latent_pgd_attack(tiny_models.C, tiny_models.G, z, y, AttackSpec("latent-pgd", 0.0, 0.1, 20))
    tiny_models.G.eval()
    assert torch.equal(out, generate_natural(tiny_models.G, z, y))


def test_latent_pgd_linear_decoder_monotone():
    g = torch.Generator().manual_seed(2)
    G = LinearG(torch.randn(4, 2, generator=g, dtype=torch.float64))
    C = LinearC(torch.randn(3, 2, generator=g, dtype=torch.float64), torch.zeros(3))
    z = torch.randn(10, 4, generator=g, dtype=torch.float64)
    y = F.one_hot(torch.arange(10) % 3, 3).double()
    prev = None
    for k in range(0, 15):
        x = atk.latent_pgd_attack(C, G, z, y, AttackSpec("latent-pgd", 0.3, 0.05, k))
        loss = F.cross_entropy(C(x), y.argmax(1), reduction="none")
        if prev is not None:
            assert torch.all(loss >= prev - 1e-12)
        prev = loss
    assert torch.all(loss > F.cross_entropy(C((z @ G.w + 1) / 2), y.argmax(1), reduction="none"))


def test_latent_pgd_respects_budget():
    g = torch.Generator().manual_seed(2)
    w = torch.randn(4, 4, generator=g, dtype=torch.float64) + 2 * torch.eye(4, dtype=torch.float64)
    G = LinearG(w)
    C = LinearC(torch.randn(3, 4, generator=g, dtype=torch.float64), torch.zeros(3))
    z = torch.randn(10, 4, generator=g, dtype=torch.float64)
    y = F.one_hot(torch.arange(10) % 3, 3).double()
    x = atk.latent_pgd_attack(C, G, z, y, AttackSpec("latent-pgd", 0.1, 0.05, 10))
    z_star = torch.linalg.solve(w.T, (2 * x - 1).T).T
    assert torch.all((z_star - z).abs() <= 0.1 + 1e-9)
    assert torch.any((z_star - z).abs() > 0.1 - 1e-9)


def test_latent_search_zero_steps_returns_seed_decode(tiny_models):
    y = F.one_hot(torch.arange(6) % 3, 3).double()
    z0 = sample_noise(6, 3, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    spec = AttackSpec("latent-search", 0.01, 0.1, 0)
    x, success = atk.latent_search_attack(tiny_models.C, tiny_models.G, tiny_models.D, y, spec, None, z0=z0)
    tiny_models.G.eval()
    assert torch.equal(x, generate_natural(tiny_models.G, z0, y))
    tiny_models.C.eval()
    assert torch.equal(success, tiny_models.C(x).argmax(1) != y.argmax(1))


def test_latent_search_success_flag_and_determinism(tiny_models):
    y = F.one_hot(torch.arange(12) % 3, 3).double()
    spec = AttackSpec("latent-search", 0.01, 0.1, 25)
    a = atk.latent_search_attack(tiny_models.C, tiny_models.G, tiny_models.D, y, spec, torch.Generator().manual_seed(7))
    b = atk.latent_search_attack(tiny_models.C, tiny_models.G, tiny_models.D, y, spec, torch.Generator().manual_seed(7))
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    tiny_models.C.eval()
    assert torch.equal(a[1], tiny_models.C(a[0]).argmax(1) != y.argmax(1))
    assert a[1].any()


def test_frozen_restores_state(tiny_models):
    C = tiny_models.C
    C.train()
    flags = [p.requires_grad for p in C.parameters()]
    with atk.frozen(C):
        assert not C.training and not any(p.requires_grad for p in C.parameters())
    assert C.training and [p.requires_grad for p in C.parameters()] == flags


def test_attack_deterministic_given_seed(tiny_models):
    x, y = _data(n=20)
    y = y % 3
    for spec in (AttackSpec.pgd(8), AttackSpec.gpgd(0.1)):
        a = atk.evaluate_robust_accuracy(tiny_models.C, spec, (x, y), tiny_models.G, tiny_models.D, seed=3)
        b = atk.evaluate_robust_accuracy(tiny_models.C, spec, (x, y), tiny_models.G, tiny_models.D, seed=3)
        assert a == b
