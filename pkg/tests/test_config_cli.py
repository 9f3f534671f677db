import json
from pathlib import Path

import pytest

from uatrain import cli
from uatrain.attacks import AttackSpec
from uatrain.config import (
    DATA_ROOT_ENV,
    ConfigError,
    format_attack,
    format_number,
    parse_attack,
    parse_config,
    parse_config_text,
    parse_number,
    serialize_config,
)

ROOT = Path(__file__).resolve().parents[1]

TINY = """
[run]
seed = 3

[dataset]
name = gauss2d
n_labeled = 40
n_unlabeled = 100
n_test = 60

[net]
classifier_depth = 1
classifier_width = 6
generator_channels = 6
discriminator_channels = 6
attacker_hidden = 1
noise_dim = 3
label_embed_dim = 2

[train]
T = 2
T_pre = 1
steps_per_epoch = 2
batch_labeled = 8
batch_unlabeled = 8
lr = 0.01
gan_optimizer = adam
rae_attack = pgd eps=0.05 steps=3 step=0.01
val_attack = pgd eps=0.05 steps=3 step=0.01

[attacks]
pgd = pgd eps=0.05 steps=3 step=0.01
gpgd = gpgd eps=0.1 steps=3 step=0.1
usong = usong steps=3
"""


# ---------------------------------------------------------------- config


def test_empty_config_gives_defaults():
    cfg = parse_config_text("")
    w = cfg.train.weights
    assert (w.lam, w.beta, w.gamma, w.alpha) == (10.0, 6.0, 0.03, 50.0)
    assert cfg.train.optimizer.lr == 0.2 and cfg.seed == 0
    assert set(cfg.attacks) == {"pgd-8/255", "pgd-4/255", "pgd-2/255", "gpgd-0.1", "gpgd-0.01", "usong"}


@pytest.mark.parametrize(
    "text,key",
    [
        ("[train]\nlam = -1", "train.lam"),
        ("[train]\nfoo = 1", "train.foo"),
        ("[train]\nT = many", "train.T"),
        ("[train]\nlr = 0", "train"),
        ("[train]\npatience = 0", "train.early_stopping_metric"),
        ("[dataset]\nname = mnist", "dataset.name"),
        ("[dataset]\nname = cifar10-subset\nstd = 0.1", "dataset.std"),
        ("[net]\nnoise_dim = -3", "net"),
        ("[attacks]\nx = fgsm eps=1", "attacks.x"),
        ("[bogus]\na = 1", "bogus"),
    ],
)
def test_config_errors_name_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.key == key
    assert str(info.value).startswith(key)


def test_parse_attack_grammar():
    spec = parse_attack("pgd eps=8/255 steps=20 step=1/255")
    assert spec == AttackSpec("pixel-pgd", epsilon=8 / 255, step_size=1 / 255, steps=20)
    u = parse_attack("usong lambda1=5 lambda2=7 steps=10")
    assert u.family == "latent-search" and u.realism_weights == (5.0, 7.0) and u.steps == 10
    for bad in ("", "pgd eps", "pgd size=3", "fgsm"):
        with pytest.raises(ValueError):
            parse_attack(bad)


@pytest.mark.parametrize("v", [8 / 255, 1 / 255, 0.1, 100.0, 0.0, 2.5e-4, 1 / 3])
def test_number_format_roundtrip(v):
    assert parse_number(format_number(v)) == v


def test_attack_format_roundtrip():
    for spec in (AttackSpec.pgd(8), AttackSpec.gpgd(0.01), AttackSpec.usong(), parse_attack("pgd eps=0.1 step=0.01")):
        assert parse_attack(format_attack(spec)) == spec


@pytest.mark.parametrize("text", ["", TINY, (ROOT / "configs" / "smoke-gauss2d.ini").read_text()])
def test_config_roundtrip(text):
    cfg = parse_config_text(text)
    again = parse_config_text(serialize_config(cfg))
    assert again == cfg
    assert serialize_config(again) == serialize_config(cfg)


def test_parse_config_file_and_data_root(tmp_path, monkeypatch):
    p = tmp_path / "c.ini"
    p.write_text(TINY)
    cfg = parse_config(p)
    assert cfg.seed == 3 and cfg.train.seed == 3 and cfg.net.classifier_width == 6
    monkeypatch.setenv(DATA_ROOT_ENV, "/cache")
    assert cfg.dataset.resolved_root() == "/cache"


# ---------------------------------------------------------------- cli


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


def _run(*argv):
    return cli.run([str(a) for a in argv])


def test_usage_errors(tiny_cfg, tmp_path, capsys):
    assert _run() == cli.EXIT_USAGE
    assert _run("launch") == cli.EXIT_USAGE
    assert _run("train", "--seed", "x") == cli.EXIT_USAGE
    assert _run("attack", "--config", tiny_cfg) == cli.EXIT_USAGE  # no checkpoint
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlam = -2\n")
    assert _run("train", "--config", bad) == cli.EXIT_USAGE
    assert "train.lam" in capsys.readouterr().err
    assert _run("sweep", "--config", tiny_cfg, "--betas", "a,b") == cli.EXIT_USAGE


def test_runtime_failure(tiny_cfg, tmp_path):
    assert _run("eval", "--config", tiny_cfg, "--checkpoint", tmp_path / "missing.pt", "--out", tmp_path / "o") == cli.EXIT_RUNTIME


def test_verify_theory(tmp_path, capsys):
    assert _run("verify-theory", "--out", tmp_path / "t") == cli.EXIT_OK
    table = (tmp_path / "t" / "theory.txt").read_text()
    assert "FAIL" not in table and "PASS" in table
    assert (tmp_path / "t" / "manifest.json").exists()


def test_verify_theory_failure_status(monkeypatch):
    from uatrain import theory

    monkeypatch.setattr(theory, "run_all", lambda seed=0: [theory.SweepResult("broken", 1, 1, -1.0, False)])
    assert _run("verify-theory") == cli.EXIT_PROPERTY


def test_train_pipeline_and_determinism(tiny_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("train", "--config", tiny_cfg, "--out", a) == cli.EXIT_OK
    assert _run("train", "--config", tiny_cfg, "--out", b) == cli.EXIT_OK
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "checkpoints" / "best.pt").read_bytes() == (b / "checkpoints" / "best.pt").read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 3 and manifest["code_version"]
    assert parse_config_text(manifest["config"]) == parse_config_text((a / "config.ini").read_text())
    assert (a / "split").is_dir()

    # the snapshot alone reproduces the run
    c = tmp_path / "c"
    assert _run("train", "--config", a / "config.ini", "--out", c) == cli.EXIT_OK
    assert (c / "metrics.csv").read_bytes() == (a / "metrics.csv").read_bytes()

    ck = a / "checkpoints" / "best.pt"
    assert _run("attack", "--config", tiny_cfg, "--checkpoint", ck, "--out", tmp_path / "atk", "--seeds", "2") == 0
    rows = (tmp_path / "atk" / "attack.csv").read_text().splitlines()
    assert rows[0] == "attack,mean,std,seeds" and len(rows) == 5
    assert _run("attack", "--config", tiny_cfg, "--checkpoint", ck, "--out", tmp_path / "a2", "--attack", "pgd eps=0.02 steps=2 step=0.01") == 0
    assert (tmp_path / "a2" / "attack.csv").read_text().splitlines()[2].startswith("pgd-0.02,")
    assert _run("attack", "--config", tiny_cfg, "--checkpoint", ck, "--attack", "pgd eps=") == cli.EXIT_USAGE

    assert _run("eval", "--config", tiny_cfg, "--checkpoint", ck, "--out", tmp_path / "ev") == 0
    assert (tmp_path / "ev" / "class_counts.csv").read_text().startswith("distribution,")
    assert _run("export-uaes", "--config", tiny_cfg, "--checkpoint", ck, "--out", tmp_path / "ux", "--per-class", "2") == 0
    assert len((tmp_path / "ux" / "uaes.csv").read_text().splitlines()) == 1 + 2 * 3 * 2
    assert _run("export-embeddings", "--config", tiny_cfg, "--checkpoint", ck, "--out", tmp_path / "em") == 0
    assert (tmp_path / "em" / "embeddings.tsv").exists()


def test_sweep_command(tiny_cfg, tmp_path):
    assert _run("sweep", "--config", tiny_cfg, "--out", tmp_path / "s", "--betas", "0,3") == 0
    lines = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].startswith("0.0,") and lines[2].startswith("3.0,")


def test_seed_override(tiny_cfg, tmp_path):
    assert _run("train", "--config", tiny_cfg, "--out", tmp_path / "s9", "--seed", "9") == 0
    assert json.loads((tmp_path / "s9" / "manifest.json").read_text())["seed"] == 9
    assert parse_config(tmp_path / "s9" / "config.ini").train.seed == 9
