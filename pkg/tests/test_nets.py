import numpy as np
import pytest
import torch
import torch.nn.functional as F

from uatrain import nets
from uatrain.nets import NetSpec, build_models


def _sn_layer(weight, seed=0):
    torch.manual_seed(seed)
    layer = nets.SNLinear(weight.shape[1], weight.shape[0]).double()
    with torch.no_grad():
        layer.weight.copy_(weight)
    return layer


def _sigma_max(layer):
    (w,) = nets.effective_weights(layer)
    return float(torch.linalg.svdvals(w)[0])


def test_scaled_identity_normalises_to_one():
    layer = _sn_layer(3.0 * torch.eye(4, dtype=torch.float64))
    nets.spectral_normalize(layer, n_power_iterations=5)
    assert _sigma_max(layer) == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("seed", range(10))
def test_random_8x8_within_tolerance(seed):
    g = torch.Generator().manual_seed(seed)
    layer = _sn_layer(torch.randn(8, 8, generator=g, dtype=torch.float64), seed)
    nets.spectral_normalize(layer, n_power_iterations=5)
    assert 0.9 <= _sigma_max(layer) <= 1.05


def test_zero_weight_guarded():
    layer = _sn_layer(torch.zeros(3, 3, dtype=torch.float64))
    nets.spectral_normalize(layer, 5)
    (w,) = nets.effective_weights(layer)
    assert torch.all(w == 0) and torch.all(torch.isfinite(w))


def test_every_discriminator_weight_is_normalised(tiny_models):
    D = tiny_models.D
    weighted = [m for m in D.modules() if isinstance(m, (torch.nn.Linear, torch.nn.Conv2d))]
    sn = nets.spectral_layers(D)
    # label embedding is a lookup (no bias, one-hot input) and the only un-normalised linear map
    assert len(sn) == len(weighted) - 1
    nets.spectral_normalize(D, 50)
    for w in nets.effective_weights(D):
        assert float(torch.linalg.svdvals(w)[0]) == pytest.approx(1.0, abs=0.05)


def test_image_spec_shapes():
    spec = NetSpec.image_default(classifier_width=1, generator_channels=8, discriminator_channels=8, attacker_hidden=2)
    m = build_models(spec, 10, seed=0)
    z = torch.randn(2, 100)
    y = F.one_hot(torch.tensor([1, 7]), 10).float()
    x = m.G(z, y)
    assert x.shape == (2, 3, 32, 32)
    assert x.min() >= -1 and x.max() <= 1
    assert m.C(x).shape == (2, 10)
    assert m.D((x + 1) / 2, y).shape == (2,)
    assert m.A(z, y).shape == z.shape


def test_teacher_is_exact_copy(tiny_models):
    for a, b in zip(tiny_models.C.parameters(), tiny_models.C_teacher.parameters()):
        assert torch.equal(a, b)
    assert not any(p.requires_grad for p in tiny_models.C_teacher.parameters())


def test_build_is_seeded(tiny_spec):
    a = build_models(tiny_spec, 3, seed=5)
    b = build_models(tiny_spec, 3, seed=5)
    for (ka, va), (kb, vb) in zip(a.C.state_dict().items(), b.C.state_dict().items()):
        assert torch.equal(va, vb)


@pytest.mark.parametrize(
    "kwargs",
    [dict(noise_dim=0), dict(kind="transformer"), dict(kind="conv", input_shape=(2,)), dict(classifier_width=-1)],
)
def test_invalid_spec(kwargs):
    with pytest.raises(ValueError):
        NetSpec(**kwargs)


def test_too_few_classes(tiny_spec):
    with pytest.raises(ValueError):
        build_models(tiny_spec, 1)


def test_classify_rows_are_distributions(tiny_models):
    x = torch.rand(17, 2, dtype=torch.float64)
    p = nets.classify(tiny_models.C, x)
    assert torch.all(p >= 0)
    assert torch.allclose(p.sum(1), torch.ones(17, dtype=torch.float64), atol=1e-6)


def test_classify_equal_logits_uniform(tiny_models):
    C = tiny_models.C
    with torch.no_grad():
        C.head.weight.zero_()
        C.head.bias.zero_()
    p = nets.classify(C, torch.rand(4, 2, dtype=torch.float64))
    assert torch.allclose(p, torch.full_like(p, 1 / 3))


def test_classify_duplicate_rows_identical(tiny_models):
    tiny_models.eval()
    x = torch.rand(1, 2, dtype=torch.float64).repeat(3, 1)
    p = nets.classify(tiny_models.C, x)
    assert torch.equal(p[0], p[1]) and torch.equal(p[1], p[2])


def test_classify_shape_mismatch(tiny_models):
    with pytest.raises(RuntimeError):
        nets.classify(tiny_models.C, torch.rand(4, 5, dtype=torch.float64))


def test_ema_examples(tiny_spec):
    m = build_models(tiny_spec, 3, seed=0, dtype=torch.float64)
    before = [p.clone() for p in m.C_teacher.parameters()]
    with torch.no_grad():
        for p in m.C.parameters():
            p.add_(1.0)
    nets.ema_update(m.C_teacher, m.C, 1.0)
    assert all(torch.equal(a, b) for a, b in zip(before, m.C_teacher.parameters()))
    nets.ema_update(m.C_teacher, m.C, 0.0)
    assert all(torch.equal(a, b) for a, b in zip(m.C.parameters(), m.C_teacher.parameters()))
    with torch.no_grad():
        for t, s in zip(m.C_teacher.parameters(), m.C.parameters()):
            t.zero_()
            s.fill_(1.0)
    nets.ema_update(m.C_teacher, m.C, 0.999)
    for t in m.C_teacher.parameters():
        assert torch.allclose(t, torch.full_like(t, 0.001), atol=1e-15)


def test_ema_affine_recurrence(tiny_models):
    t0 = [p.clone() for p in tiny_models.C_teacher.parameters()]
    with torch.no_grad():
        for p in tiny_models.C.parameters():
            p.mul_(-2.0).add_(0.3)
    nets.ema_update(tiny_models.C_teacher, tiny_models.C, 0.7)
    for a, s, t in zip(t0, tiny_models.C.parameters(), tiny_models.C_teacher.parameters()):
        assert torch.allclose(t, 0.7 * a + (1 - 0.7) * s, rtol=0, atol=1e-15)


def test_ema_validation(tiny_spec):
    m = build_models(tiny_spec, 3)
    with pytest.raises(ValueError):
        nets.ema_update(m.C_teacher, m.C, 1.5)
    other = build_models(NetSpec(classifier_width=5), 3)
    with pytest.raises(ValueError):
        nets.ema_update(m.C_teacher, other.C, 0.5)


def test_ema_decay_ramp():
    assert nets.ema_decay_at(0, 1000) == 0.0
    assert nets.ema_decay_at(5, 1000) == pytest.approx(0.999 * 0.5)
    assert nets.ema_decay_at(10, 1000) == 0.999
    assert nets.ema_decay_at(500, 1000) == 0.999


def test_eval_forward_deterministic(tiny_models):
    tiny_models.eval()
    z = torch.randn(4, 3, dtype=torch.float64)
    y = F.one_hot(torch.tensor([0, 1, 2, 0]), 3).double()
    assert torch.equal(tiny_models.G(z, y), tiny_models.G(z, y))
    x = torch.rand(4, 2, dtype=torch.float64)
    assert torch.equal(tiny_models.D(x, y), tiny_models.D(x, y))


def test_checkpoint_roundtrip(tmp_path, tiny_models):
    path = nets.save_checkpoint(tmp_path / "ck.pt", tiny_models, {"seed": 3}, {"epoch": 2})
    bundle, payload = nets.load_checkpoint(path)
    assert payload["extra"] == {"epoch": 2} and payload["rng"] == {"seed": 3}
    assert bundle.dtype == torch.float64
    for name in nets.ModelBundle.NAMES:
        for (k, a), (_, b) in zip(getattr(tiny_models, name).state_dict().items(), getattr(bundle, name).state_dict().items()):
            assert torch.equal(a, b), (name, k)


def test_checkpoint_rejects_foreign_file(tmp_path):
    torch.save({"format": "other"}, tmp_path / "x.pt")
    with pytest.raises(ValueError):
        nets.load_checkpoint(tmp_path / "x.pt")


def test_checkpoint_bytes_deterministic(tmp_path, tiny_spec):
    a = nets.save_checkpoint(tmp_path / "a.pt", build_models(tiny_spec, 3, seed=1))
    b = nets.save_checkpoint(tmp_path / "b.pt", build_models(tiny_spec, 3, seed=1))
    assert a.read_bytes() == b.read_bytes()


def test_attacker_identity_init_and_clamp(tiny_spec):
    spec = NetSpec(**{**tiny_spec.__dict__, "attacker_identity_init": True})
    m = build_models(spec, 3, dtype=torch.float64)
    z = torch.randn(5, 3, dtype=torch.float64)
    y = F.one_hot(torch.arange(5) % 3, 3).double()
    assert torch.equal(m.A(z, y), z)
    spec = NetSpec(**{**tiny_spec.__dict__, "attacker_clamp": 0.01})
    m = build_models(spec, 3, dtype=torch.float64)
    assert torch.all((m.A(z, y) - z).abs() <= 0.01 + 1e-15)
