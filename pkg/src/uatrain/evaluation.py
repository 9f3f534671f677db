"""Metrics and experiment artifacts.

Alignment diagnostics pool three tagged sources per class: real test
examples, generator samples conditioned on that class (same count as the
real ones), and the real test examples the classifier assigns to that class.
Features are the classifier's penultimate activations.
"""

from __future__ import annotations

import copy
import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from importlib import resources
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import kernels
from .attacks import AttackSpec, evaluate_robust_accuracy, frozen
from .uae import generate_natural, sample_noise

SOURCES = ("real", "generator", "classifier-pseudo")


class DegenerateClustering(ValueError):
    pass


def _tensors(testset, dtype):
    x, y = testset
    x = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x).to(dtype)
    y = torch.as_tensor(np.asarray(y) if not isinstance(y, torch.Tensor) else y).long()
    return x, y


@torch.no_grad()
def predict(C, x: torch.Tensor, batch_size: int = 1024) -> torch.Tensor:
    with frozen(C):
        return torch.cat([C(x[i : i + batch_size]).argmax(dim=1) for i in range(0, len(x), batch_size)])


@torch.no_grad()
def penultimate(C, x: torch.Tensor, batch_size: int = 1024) -> np.ndarray:
    with frozen(C):
        feats = [C.features(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return torch.cat(feats).double().numpy()


def natural_accuracy(C, testset) -> float:
    dtype = next(C.parameters()).dtype
    x, y = _tensors(testset, dtype)
    if len(y) == 0:
        raise ValueError("empty test set")
    return float((predict(C, x) == y).double().mean())


def robust_accuracy(C, attack: AttackSpec, testset, G=None, D=None, seed: int = 0) -> float:
    return evaluate_robust_accuracy(C, attack, testset, G, D, seed=seed)


# --------------------------------------------------------------------------
# alignment diagnostics
# --------------------------------------------------------------------------


@dataclass
class AlignmentSample:
    features: np.ndarray  # (N, d) float64
    sources: np.ndarray  # (N,) str, one of SOURCES
    labels: np.ndarray  # (N,) int class index
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.sources = np.asarray(self.sources).astype(str)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.features.ndim != 2 or len(self.features) != n or len(self.sources) != n:
            raise ValueError("features, sources and labels must have matching lengths")
        bad = set(self.sources) - set(SOURCES)
        if bad:
            raise ValueError(f"unknown sources {sorted(bad)}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")

    def counts(self, source: str) -> np.ndarray:
        mask = self.sources == source
        return np.bincount(self.labels[mask], minlength=self.num_classes)

    def subset(self, sources: Sequence[str]) -> "AlignmentSample":
        mask = np.isin(self.sources, list(sources))
        return AlignmentSample(self.features[mask], self.sources[mask], self.labels[mask], self.num_classes)


def build_alignment_sample(models, testset, seed: int = 0, max_per_class: Optional[int] = None) -> AlignmentSample:
    """Real / generator / classifier-assigned examples with penultimate features.

    ``max_per_class`` subsamples the real test examples of each class first
    (deterministically from ``seed``); the other two sources follow from it.
    """
    C, G = models.C, models.G
    dtype = models.dtype
    x, y = _tensors(testset, dtype)
    k = models.num_classes
    rng = np.random.default_rng(seed)
    if max_per_class is not None:
        keep = []
        for c in range(k):
            idx = np.flatnonzero(y.numpy() == c)
            if len(idx) > max_per_class:
                idx = np.sort(rng.choice(idx, max_per_class, replace=False))
            keep.append(idx)
        keep = np.sort(np.concatenate(keep))
        x, y = x[keep], y[keep]

    gen = torch.Generator().manual_seed(seed)
    z = sample_noise(len(y), G.spec.noise_dim, generator=gen, dtype=dtype)
    with frozen(G), torch.no_grad():
        x_g = generate_natural(G, z, F.one_hot(y, k).to(dtype))
    y_c = predict(C, x)

    f_real = penultimate(C, x)
    f_gen = penultimate(C, x_g)
    features = np.concatenate([f_real, f_gen, f_real])
    labels = np.concatenate([y.numpy(), y.numpy(), y_c.numpy()])
    sources = np.repeat(np.array(SOURCES), [len(y), len(y), len(y)])
    return AlignmentSample(features, sources, labels, k)


def silhouette_alignment(samples: AlignmentSample) -> float:
    """Mean silhouette with clusters given by class index, all sources pooled."""
    present = np.unique(samples.labels)
    if len(present) < 2:
        raise DegenerateClustering("need at least two classes")
    counts = np.bincount(samples.labels, minlength=samples.num_classes)
    if counts[present].min() < 2:
        raise DegenerateClustering("every present class needs at least two points")
    s = kernels.silhouette_samples(np.ascontiguousarray(samples.features), samples.labels, samples.num_classes)
    return float(np.mean(s))


@dataclass
class CountTable:
    rows: dict  # row name -> per-class counts

    ROW_NAMES = ("P(y)", "P_G(y)", "P_C(y)")

    def to_csv(self) -> str:
        k = len(next(iter(self.rows.values())))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["distribution", *[f"class_{c}" for c in range(k)], "total"])
        for name, counts in self.rows.items():
            w.writerow([name, *[int(v) for v in counts], int(np.sum(counts))])
        return buf.getvalue()


def class_count_table(samples: AlignmentSample, classifier=None, inputs=None) -> CountTable:
    """Per-class counts under the data, the generator and the classifier.

    With ``classifier`` and the real ``inputs`` given, the classifier row is
    recomputed from its argmax on those inputs instead of the stored tags.
    """
    rows = {
        "P(y)": samples.counts("real"),
        "P_G(y)": samples.counts("generator"),
        "P_C(y)": samples.counts("classifier-pseudo"),
    }
    if classifier is not None and inputs is not None:
        dtype = next(classifier.parameters()).dtype
        x = torch.as_tensor(np.asarray(inputs)).to(dtype)
        rows["P_C(y)"] = np.bincount(predict(classifier, x).numpy(), minlength=samples.num_classes)
    return CountTable(rows)


# --------------------------------------------------------------------------
# sweeps, export, timing
# --------------------------------------------------------------------------


def pareto_sweep(base_cfg, beta_values, data, attacks: Sequence[AttackSpec], spec=None, seed: Optional[int] = None) -> list:
    """Train one model per beta and record natural and per-attack robust accuracy."""
    from .trainer import fit

    rows = []
    testset = (data.test_x, data.test_y)
    for beta in beta_values:
        cfg = copy.deepcopy(base_cfg)
        cfg.weights = replace(cfg.weights, beta=float(beta))
        if seed is not None:
            cfg.seed = seed
        models, _ = fit(cfg, data, spec)
        row = {"beta": float(beta), "natural_acc": natural_accuracy(models.C, testset)}
        for atk in attacks:
            row[atk.label] = evaluate_robust_accuracy(models.C, atk, testset, models.G, models.D, seed=cfg.seed)
        rows.append(row)
    return rows


def write_rows_csv(rows: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0]) if rows else []
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    path.write_text(buf.getvalue())
    return path


EMBEDDING_HEADER = "# columns: source<TAB>class<TAB>f0 ... f{d-1}; features are classifier penultimate activations\n"


def export_embeddings(models, data, out, seed: int = 0, max_per_class: Optional[int] = None) -> Path:
    """Write one tab-separated row per sample: source, class, feature values."""
    testset = (data.test_x, data.test_y) if hasattr(data, "test_x") else data
    samples = build_alignment_sample(models, testset, seed=seed, max_per_class=max_per_class)
    d = samples.features.shape[1]
    lines = [EMBEDDING_HEADER, "\t".join(["source", "class", *[f"f{i}" for i in range(d)]]) + "\n"]
    for src, c, f in zip(samples.sources, samples.labels, samples.features):
        lines.append("\t".join([src, str(int(c)), *(format(v, ".9g") for v in f)]) + "\n")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(lines))
    return out


def read_embeddings(path) -> AlignmentSample:
    rows = [ln.rstrip("\n").split("\t") for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    body = rows[1:]
    sources = [r[0] for r in body]
    labels = np.array([int(r[1]) for r in body], dtype=np.int64)
    feats = np.array([[float(v) for v in r[2:]] for r in body])
    return AlignmentSample(feats, sources, labels, int(labels.max()) + 1 if len(labels) else 0)


def training_time_ratio(report, baseline_report) -> float:
    """Wall-clock ratio of a run to its regular-training baseline (both until early stopping)."""
    if not baseline_report.wall_clock_seconds > 0:
        raise ValueError("baseline wall-clock time must be positive")
    return report.wall_clock_seconds / baseline_report.wall_clock_seconds


# --------------------------------------------------------------------------
# published reference numbers
# --------------------------------------------------------------------------


def load_reference(dataset: str = "cifar10", method: str = "PUAT") -> dict:
    """``{metric: (mean, std)}`` in percent from the bundled full-scale results table."""
    text = resources.files(__package__).joinpath("data/reference_results.csv").read_text()
    rows = csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))
    out = {
        r["metric"]: (float(r["mean"]), float(r["std"]))
        for r in rows
        if r["dataset"] == dataset and r["method"] == method
    }
    if not out:
        raise KeyError(f"no reference results for {method} on {dataset}")
    return out


def reference_metric(label: str) -> str:
    """Map an attack label (``usong-0.01``) or ``natural`` to the reference table's metric key."""
    return "usong" if label.startswith("usong") else label


def compare_to_reference(measured: dict, dataset: str = "cifar10", method: str = "PUAT") -> list:
    """Rows ``[metric, measured %, reference mean %, reference std %]`` for metrics in both."""
    ref = load_reference(dataset, method)
    rows = []
    for label, value in measured.items():
        key = reference_metric(label)
        if key in ref:
            rows.append([label, 100.0 * value, *ref[key]])
    return rows
