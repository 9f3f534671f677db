"""Exact oracles over finite (example, label) grids.

Everything here works on tabular distributions, so each statement about the
min-max game, the adversary equivalence and the finite-sample bounds can be
decided by direct summation or enumeration rather than by training networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels

MAX_ENUM_SUPPORT = 8
MAX_ENUM_NEIGHBORHOOD = 4


class SupportMismatch(ValueError):
    pass


class AbsoluteContinuityError(ValueError):
    pass


class InstanceTooLarge(ValueError):
    pass


class NegativeRadicand(ValueError):
    """A bound formula would take the square root of a negative number."""

    def __init__(self, name: str, value: float):
        super().__init__(f"{name}: radicand is negative ({value:.6g})")
        self.name = name
        self.value = value


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint distribution over an ``n_x`` by ``n_y`` grid of index pairs."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError("probs must be a 2-D (x, y) table")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probs must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs must sum to 1 (got {p.sum()!r})")
        object.__setattr__(self, "probs", p)

    @property
    def shape(self):
        return self.probs.shape

    @property
    def x_marginal(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def conditional_y(self) -> np.ndarray:
        """P(y|x); rows with zero mass are uniform."""
        px = self.x_marginal
        out = np.full_like(self.probs, 1.0 / self.shape[1])
        mask = px > 0
        out[mask] = self.probs[mask] / px[mask, None]
        return out

    @classmethod
    def normalized(cls, weights) -> "DiscreteJoint":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum())

    @classmethod
    def from_classifier(cls, x_marginal, cond_y) -> "DiscreteJoint":
        """P_C(x, y) = P(x) P_C(y|x)."""
        joint = np.asarray(x_marginal)[:, None] * np.asarray(cond_y)
        return cls(joint / joint.sum())


def mixture(p: DiscreteJoint, q: DiscreteJoint) -> DiscreteJoint:
    _check_support(p, q)
    return DiscreteJoint(0.5 * (p.probs + q.probs))


@dataclass(frozen=True)
class NeighborhoodMap:
    """For each x index, the x indices reachable within the budget."""

    members: tuple

    def __post_init__(self):
        members = tuple(tuple(int(i) for i in m) for m in self.members)
        for x, m in enumerate(members):
            if len(m) == 0:
                raise ValueError(f"empty neighbourhood at x={x}")
            if x not in m:
                raise ValueError(f"x={x} is missing from its own neighbourhood")
        object.__setattr__(self, "members", members)

    @property
    def n_x(self) -> int:
        return len(self.members)

    def padded(self):
        width = max(len(m) for m in self.members)
        table = np.full((self.n_x, width), -1, dtype=np.int64)
        lengths = np.empty(self.n_x, dtype=np.int64)
        for x, m in enumerate(self.members):
            table[x, : len(m)] = m
            lengths[x] = len(m)
        return table, lengths

    @classmethod
    def from_points(cls, points, epsilon: float, p: float = np.inf) -> "NeighborhoodMap":
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], ord=p, axis=-1)
        return cls(tuple(tuple(np.flatnonzero(row <= epsilon + 1e-12)) for row in dist))

    @classmethod
    def self_only(cls, n_x: int) -> "NeighborhoodMap":
        return cls(tuple((i,) for i in range(n_x)))


def _check_support(*dists: DiscreteJoint):
    shapes = {d.shape for d in dists}
    if len(shapes) != 1:
        raise SupportMismatch(f"distributions live on different grids: {sorted(shapes)}")


def _check_loss(loss, shape):
    table = np.asarray(loss, dtype=np.float64)
    if table.shape != shape:
        raise SupportMismatch(f"loss table shape {table.shape} does not match grid {shape}")
    if not np.all(np.isfinite(table)):
        raise ValueError("loss table entries must be finite")
    return table


# --------------------------------------------------------------------------
# divergences and the G-C-D game
# --------------------------------------------------------------------------


def tv(p: DiscreteJoint, q: DiscreteJoint) -> float:
    _check_support(p, q)
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def kl(p: DiscreteJoint, q: DiscreteJoint) -> float:
    _check_support(p, q)
    pos = p.probs > 0
    if np.any(q.probs[pos] <= 0):
        raise AbsoluteContinuityError("Q vanishes where P has mass")
    return float(np.sum(p.probs[pos] * np.log(p.probs[pos] / q.probs[pos])))


def linear_gan_value(d_table, p: DiscreteJoint, p_g: DiscreteJoint, p_c: DiscreteJoint) -> float:
    """Population value of L_D + L_G/2 + L_C/2 for a tabular discriminator."""
    _check_support(p, p_g, p_c)
    d = np.asarray(d_table, dtype=np.float64)
    l_d = float(np.sum(p.probs * d))
    l_g = -float(np.sum(p_g.probs * d))
    l_c = -float(np.sum(p_c.probs * d))
    return l_d + 0.5 * l_g + 0.5 * l_c


def optimal_discriminator(p: DiscreteJoint, p_gc: DiscreteJoint) -> np.ndarray:
    """Pointwise sign(P - P_GC) with values in {-1, 0, +1}."""
    _check_support(p, p_gc)
    return np.sign(p.probs - p_gc.probs)


def max_linear_gan(p: DiscreteJoint, p_g: DiscreteJoint, p_c: DiscreteJoint) -> float:
    p_gc = mixture(p_g, p_c)
    return linear_gan_value(optimal_discriminator(p, p_gc), p, p_g, p_c)


def equilibrium_residual(p: DiscreteJoint, p_g: DiscreteJoint, p_c: DiscreteJoint) -> float:
    return tv(p, mixture(p_g, p_c))


# --------------------------------------------------------------------------
# adversaries
# --------------------------------------------------------------------------


def neighborhood_max_loss(loss, nbhd: NeighborhoodMap) -> np.ndarray:
    table = np.asarray(loss, dtype=np.float64)
    if table.shape[0] != nbhd.n_x:
        raise SupportMismatch("loss table and neighbourhood map disagree on |X|")
    padded, lengths = nbhd.padded()
    return kernels.neighborhood_max_loss(table, padded, lengths)


def rae_adversary(p: DiscreteJoint, loss, nbhd: NeighborhoodMap) -> float:
    """E_{(x,y)~P} max over the budget ball of l(x_hat, y)."""
    table = _check_loss(loss, p.shape)
    return float(np.sum(p.probs * neighborhood_max_loss(table, nbhd)))


def uae_adversary_bruteforce(p: DiscreteJoint, loss, nbhd: NeighborhoodMap) -> float:
    """Max over every budget-respecting mapping T(x, y) of E_P l(T(x, y), y).

    Enumerates all mappings on the support of P; refuses instances beyond
    ``MAX_ENUM_SUPPORT`` support points or ``MAX_ENUM_NEIGHBORHOOD`` candidates.
    """
    table = _check_loss(loss, p.shape)
    if table.shape[0] != nbhd.n_x:
        raise SupportMismatch("loss table and neighbourhood map disagree on |X|")
    sup_x, sup_y = np.nonzero(p.probs > 0)
    if len(sup_x) > MAX_ENUM_SUPPORT:
        raise InstanceTooLarge(f"support has {len(sup_x)} points (max {MAX_ENUM_SUPPORT})")
    padded, lengths = nbhd.padded()
    if lengths[sup_x].max() > MAX_ENUM_NEIGHBORHOOD:
        raise InstanceTooLarge(f"a neighbourhood exceeds {MAX_ENUM_NEIGHBORHOOD} candidates")
    sup_p = p.probs[sup_x, sup_y]
    return float(
        kernels.bruteforce_mapping_max(
            sup_x.astype(np.int64), sup_y.astype(np.int64), sup_p, padded, lengths, table
        )
    )


def adversary_gap(p: DiscreteJoint, p_g: DiscreteJoint, loss, nbhd: NeighborhoodMap):
    """Return ``(G_U, 2 * B1 * TV(P, P_G))``."""
    _check_support(p, p_g)
    table = _check_loss(loss, p.shape)
    worst = neighborhood_max_loss(table, nbhd)
    gap = abs(float(np.sum((p_g.probs - p.probs) * worst)))
    differs = p.probs != p_g.probs
    b1 = float(worst[differs].max()) if differs.any() else 0.0
    return gap, 2.0 * b1 * tv(p, p_g)


# --------------------------------------------------------------------------
# finite-sample bounds
# --------------------------------------------------------------------------


@dataclass
class BoundInputs:
    m: int
    n: int
    delta: float
    b: float = 0.0
    b1: float = 0.0
    gan_sup: float = 0.0
    Lhat_nat: float = 0.0
    Lhat_adv_max: float = 0.0
    R1: float = 0.0
    R2: float = 0.0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be at least 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


def _sqrt_checked(name: str, value: float) -> float:
    if value < 0:
        raise NegativeRadicand(name, value)
    return math.sqrt(value)


def bound_B(inputs: BoundInputs) -> float:
    log_term = math.log(1.0 / inputs.delta)
    radicand = (
        0.5 * inputs.b
        + 0.25 * inputs.gan_sup
        + math.sqrt(log_term / (8.0 * inputs.m))
        + math.sqrt(log_term / (32.0 * inputs.n))
    )
    return _sqrt_checked("B", radicand)


def nat_generalization_bound(inputs: BoundInputs) -> float:
    radicand = (
        inputs.Lhat_nat
        + inputs.b1 * math.sqrt(math.log(1.0 / inputs.delta) / (2.0 * inputs.m))
        - inputs.R1
    )
    return _sqrt_checked("nat bound", radicand) / math.sqrt(2.0)


def adv_generalization_bound(inputs: BoundInputs, B: float) -> float:
    radicand = inputs.Lhat_adv_max - inputs.R2
    return _sqrt_checked("adv bound", radicand) / (2.0 * math.sqrt(2.0)) + B


def adversary_gap_bound(inputs: BoundInputs, B: float, B1: float) -> float:
    return 2.0 * B1 * adv_generalization_bound(inputs, B)


# exact quantities feeding the bounds


def log_ratio_sup(p: DiscreteJoint, p_gc: DiscreteJoint) -> float:
    """b = max over supp(P) of log(P / P_GC) + 1."""
    pos = p.probs > 0
    if np.any(p_gc.probs[pos] <= 0):
        return math.inf
    return float(np.max(np.log(p.probs[pos] / p_gc.probs[pos]))) + 1.0


def bayes_error_nat(p: DiscreteJoint) -> float:
    """R1 = -E_P log P(y|x)."""
    cond = p.conditional_y()
    pos = p.probs > 0
    return -float(np.sum(p.probs[pos] * np.log(cond[pos])))


def bayes_error_gen(p: DiscreteJoint, p_g: DiscreteJoint) -> float:
    """R2 = -E_{P_G} log(P_G(x, y) / P(x))."""
    px = p.x_marginal
    pos = p_g.probs > 0
    xs = np.nonzero(pos)[0]
    if np.any(px[xs] <= 0):
        raise AbsoluteContinuityError("P_G puts mass on x outside supp P(x)")
    ratio = p_g.probs[pos] / px[xs]
    return -float(np.sum(p_g.probs[pos] * np.log(ratio)))


def empirical_gan_sup(
    labeled_counts: np.ndarray, unlabeled_x_counts: np.ndarray, p_g: DiscreteJoint, cond_c: np.ndarray
) -> float:
    """max over |D| <= 1 of the empirical G-C-D objective with |Z| -> infinity.

    The labeled and classifier terms use the sample frequencies; the generator
    term uses its population expectation.
    """
    m = labeled_counts.sum()
    n = unlabeled_x_counts.sum()
    coef = labeled_counts / m - 0.5 * p_g.probs - 0.5 * (unlabeled_x_counts / n)[:, None] * cond_c
    return float(np.abs(coef).sum())


def minimize_cross_entropy(target: DiscreteJoint, iters: int = 50) -> np.ndarray:
    """Tabular P_C(y|x) minimising E_target[-log P_C(y|x)] by per-row Newton steps.

    Logits of the last class are pinned to zero; rows without mass stay uniform.
    """
    n_x, n_y = target.shape
    cond = np.full((n_x, n_y), 1.0 / n_y)
    for x in range(n_x):
        w = target.probs[x]
        mass = w.sum()
        if mass <= 0:
            continue
        w = w / mass
        if np.count_nonzero(w) < n_y:
            raise ValueError("Newton fit needs a strictly positive target row")
        theta = np.zeros(n_y - 1)
        for _ in range(iters):
            logits = np.append(theta, 0.0)
            q = np.exp(logits - logits.max())
            q /= q.sum()
            grad = (q - w)[:-1]
            hess = np.diag(q[:-1]) - np.outer(q[:-1], q[:-1])
            step = np.linalg.solve(hess, grad)
            theta -= step
            if np.max(np.abs(step)) < 1e-15:
                break
        logits = np.append(theta, 0.0)
        q = np.exp(logits - logits.max())
        cond[x] = q / q.sum()
    return cond


# --------------------------------------------------------------------------
# random instances and sweeps
# --------------------------------------------------------------------------


def random_joint(rng: np.random.Generator, n_x: int, n_y: int, sparsity: float = 0.0) -> DiscreteJoint:
    w = rng.dirichlet(np.ones(n_x * n_y)).reshape(n_x, n_y)
    if sparsity > 0:
        mask = rng.random((n_x, n_y)) < sparsity
        if mask.all():
            mask.flat[rng.integers(mask.size)] = False
        w = np.where(mask, 0.0, w)
    return DiscreteJoint.normalized(w)


def random_enumerable_instance(rng: np.random.Generator):
    """Random (P, loss table, neighbourhood map) small enough to enumerate."""
    n_x = int(rng.integers(2, 7))
    n_y = int(rng.integers(1, 3))
    while True:
        p = random_joint(rng, n_x, n_y, sparsity=float(rng.uniform(0.0, 0.5)))
        if np.count_nonzero(p.probs) <= MAX_ENUM_SUPPORT:
            break
    points = np.sort(rng.uniform(0.0, 1.0, size=n_x))
    eps = float(rng.uniform(0.0, 0.4))
    nbhd = NeighborhoodMap.from_points(points, eps)
    nbhd = NeighborhoodMap(tuple(_trim(m, x, MAX_ENUM_NEIGHBORHOOD) for x, m in enumerate(nbhd.members)))
    loss = rng.exponential(1.0, size=(n_x, n_y))
    return p, loss, nbhd


def _trim(members, x, width):
    # keep x itself plus its nearest index-neighbours
    ordered = sorted(members, key=lambda j: (abs(j - x), j))
    return tuple(sorted(ordered[:width]))


@dataclass
class SweepResult:
    name: str
    instances: int
    violations: int
    worst_slack: float
    passed: bool
    detail: str = ""
    extras: dict = field(default_factory=dict)


def sweep_theorem2(rng, trials: int = 200, tol: float = 1e-12) -> SweepResult:
    worst = 0.0
    violations = 0
    for _ in range(trials):
        p, loss, nbhd = random_enumerable_instance(rng)
        diff = abs(uae_adversary_bruteforce(p, loss, nbhd) - rae_adversary(p, loss, nbhd))
        worst = max(worst, diff)
        violations += diff > tol
    return SweepResult("uae == rae adversary", trials, violations, tol - worst, violations == 0)


def sweep_lemma1(rng, trials: int = 100, tol: float = 1e-9) -> SweepResult:
    worst = 0.0
    violations = 0
    for _ in range(trials):
        n_x, n_y = int(rng.integers(2, 6)), int(rng.integers(2, 4))
        p_g, p_c = random_joint(rng, n_x, n_y), random_joint(rng, n_x, n_y)
        p = mixture(p_g, p_c)
        err = abs(max_linear_gan(p, p_g, p_c))
        worst = max(worst, err)
        violations += err > tol
    for _ in range(trials):
        n_x, n_y = int(rng.integers(2, 6)), int(rng.integers(2, 4))
        p, p_g, p_c = (random_joint(rng, n_x, n_y) for _ in range(3))
        err = abs(max_linear_gan(p, p_g, p_c) - 2.0 * equilibrium_residual(p, p_g, p_c))
        worst = max(worst, err)
        violations += err > tol
    return SweepResult("max_D L_gan == 2 TV(P, P_GC)", 2 * trials, violations, tol - worst, violations == 0)


def sweep_pinsker(rng, trials: int = 1000) -> SweepResult:
    k = 6
    p = rng.dirichlet(np.ones(k), size=trials)
    q = rng.dirichlet(np.ones(k), size=trials)
    tvs, kls = kernels.tv_kl_rows(p, q)
    slack = np.sqrt(kls / 2.0) - tvs
    violations = int(np.sum(slack < 0))
    return SweepResult("TV <= sqrt(KL / 2)", trials, violations, float(slack.min()), violations == 0)


def sweep_theorem4(rng, trials: int = 1000) -> SweepResult:
    worst = math.inf
    violations = 0
    for _ in range(trials):
        n_x, n_y = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        p, p_g = random_joint(rng, n_x, n_y), random_joint(rng, n_x, n_y)
        points = rng.uniform(0.0, 1.0, size=n_x)
        nbhd = NeighborhoodMap.from_points(points, float(rng.uniform(0.0, 0.5)))
        loss = rng.exponential(1.0, size=(n_x, n_y))
        gap, bound = adversary_gap(p, p_g, loss, nbhd)
        slack = bound - gap
        worst = min(worst, slack)
        violations += slack < -1e-12
    return SweepResult("G_U <= 2 B1 TV(P, P_G)", trials, violations, worst, violations == 0)


def _failure_budget(delta: float, trials: int) -> float:
    return delta + 3.0 * math.sqrt(delta * (1.0 - delta) / trials)


def sweep_nat_bound(rng, trials: int = 100, delta: float = 0.1, m: int = 50) -> SweepResult:
    """Monte-Carlo check that TV(P, P_C) <= nat bound with prob >= 1 - delta."""
    failures = 0
    worst = math.inf
    for _ in range(trials):
        n_x, n_y = int(rng.integers(2, 6)), int(rng.integers(2, 4))
        p = random_joint(rng, n_x, n_y)
        cond_c = rng.dirichlet(np.ones(n_y), size=n_x)
        p_c = DiscreteJoint.from_classifier(p.x_marginal, cond_c)
        idx = rng.choice(p.probs.size, size=m, p=p.probs.ravel())
        xs, ys = np.unravel_index(idx, p.shape)
        losses = -np.log(cond_c[xs, ys])
        inputs = BoundInputs(
            m=m,
            n=1,
            delta=delta,
            b1=float(np.max(-np.log(cond_c[p.probs > 0]))),
            Lhat_nat=float(losses.mean()),
            R1=bayes_error_nat(p),
        )
        try:
            bound = nat_generalization_bound(inputs)
        except NegativeRadicand:
            failures += 1
            continue
        slack = bound - tv(p, p_c)
        worst = min(worst, slack)
        failures += slack < 0
    budget = _failure_budget(delta, trials)
    rate = failures / trials
    return SweepResult(
        "TV(P, P_C) <= nat bound (w.p. 1-delta)",
        trials,
        failures,
        worst,
        rate <= budget,
        detail=f"failure rate {rate:.3f} <= {budget:.3f}",
    )


def sweep_adv_bound(rng, trials: int = 100, delta: float = 0.1, m: int = 50, n: int = 200) -> SweepResult:
    """Monte-Carlo check of the shared bound on TV(P, P_C) and TV(P, P_G)."""
    failures = 0
    worst = math.inf
    for _ in range(trials):
        n_x, n_y = int(rng.integers(2, 6)), int(rng.integers(2, 4))
        p = random_joint(rng, n_x, n_y)
        cond_c = rng.dirichlet(np.ones(n_y), size=n_x)
        p_c = DiscreteJoint.from_classifier(p.x_marginal, cond_c)
        # generator keeps the label marginal of P, as sampling y_g from D_l does
        cond_g = rng.dirichlet(np.ones(n_x), size=n_y).T  # P_G(x|y), columns sum to 1
        p_g = DiscreteJoint.normalized(cond_g * p.probs.sum(axis=0)[None, :])
        lab_idx = rng.choice(p.probs.size, size=m, p=p.probs.ravel())
        labeled_counts = np.bincount(lab_idx, minlength=p.probs.size).reshape(p.shape).astype(float)
        unl_x = rng.choice(n_x, size=n, p=p.x_marginal)
        unlabeled_counts = np.bincount(unl_x, minlength=n_x).astype(float)
        p_gc = mixture(p_g, p_c)
        nbhd = NeighborhoodMap.from_points(rng.uniform(size=n_x), float(rng.uniform(0.0, 0.3)))
        adv_loss = neighborhood_max_loss(-np.log(cond_c), nbhd)
        inputs = BoundInputs(
            m=m,
            n=n,
            delta=delta,
            b=log_ratio_sup(p, p_gc),
            gan_sup=empirical_gan_sup(labeled_counts, unlabeled_counts, p_g, cond_c),
            Lhat_adv_max=float(np.sum(p_g.probs * adv_loss)),
            R2=bayes_error_gen(p, p_g),
        )
        try:
            bound = adv_generalization_bound(inputs, bound_B(inputs))
        except NegativeRadicand:
            failures += 1
            continue
        slack = bound - max(tv(p, p_c), tv(p, p_g))
        worst = min(worst, slack)
        failures += slack < 0
    # the bound is stated with probability (1 - delta)^2
    delta_eff = 1.0 - (1.0 - delta) ** 2
    budget = _failure_budget(delta_eff, trials)
    rate = failures / trials
    return SweepResult(
        "TV(P, Q) <= adv bound, Q in {P_C, P_G}",
        trials,
        failures,
        worst,
        rate <= budget,
        detail=f"failure rate {rate:.3f} <= {budget:.3f}",
    )


def sweep_bound_monotonicity(ms: Sequence[int] = (1, 10, 100, 1000, 10000), ns: Sequence[int] = (1, 10, 100, 1000, 10000)) -> SweepResult:
    checks = 0
    violations = 0
    worst = math.inf
    base = dict(delta=0.1, b=1.0, gan_sup=0.2, b1=2.0, Lhat_nat=0.5, R1=0.3)
    for n in ns:
        prev = None
        for m in ms:
            inp = BoundInputs(m=m, n=n, **base)
            cur = (bound_B(inp), nat_generalization_bound(inp))
            if prev is not None:
                for a, b_ in zip(prev, cur):
                    checks += 1
                    worst = min(worst, a - b_)
                    violations += not (b_ < a)
            prev = cur
    for m in ms:
        prev = None
        for n in ns:
            cur = bound_B(BoundInputs(m=m, n=n, **base))
            if prev is not None:
                checks += 1
                worst = min(worst, prev - cur)
                violations += not (cur < prev)
            prev = cur
    return SweepResult("bounds strictly decrease in m, n", checks, violations, worst, violations == 0)


def sweep_consistency(rng, trials: int = 50, tol: float = 1e-9) -> SweepResult:
    """Tabular minimisers of KL(P||P_C) and KL(P_T||P_C) with P_T = P_G = P both equal P."""
    worst = 0.0
    violations = 0
    for _ in range(trials):
        n_x, n_y = int(rng.integers(2, 6)), int(rng.integers(2, 4))
        p = random_joint(rng, n_x, n_y)
        nat = DiscreteJoint.from_classifier(p.x_marginal, minimize_cross_entropy(p))
        p_t = DiscreteJoint(p.probs.copy())
        adv = DiscreteJoint.from_classifier(p.x_marginal, minimize_cross_entropy(p_t))
        err = max(np.abs(nat.probs - p.probs).max(), np.abs(adv.probs - p.probs).max())
        worst = max(worst, float(err))
        violations += err > tol
    return SweepResult("nat and adv minimisers coincide at P", trials, violations, tol - worst, violations == 0)


SWEEPS: dict[str, Callable] = {
    "theorem2": sweep_theorem2,
    "lemma1": sweep_lemma1,
    "pinsker": sweep_pinsker,
    "theorem4": sweep_theorem4,
    "nat_bound": sweep_nat_bound,
    "adv_bound": sweep_adv_bound,
    "consistency": sweep_consistency,
}


def run_all(seed: int = 0) -> list[SweepResult]:
    rng = np.random.default_rng(seed)
    results = [fn(rng) for fn in SWEEPS.values()]
    results.append(sweep_bound_monotonicity())
    return results


def format_table(results: Sequence[SweepResult]) -> str:
    header = f"{'property':44s} {'instances':>9s} {'violations':>10s} {'worst slack':>12s}  status"
    lines = [header, "-" * len(header)]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{r.name:44s} {r.instances:9d} {r.violations:10d} {r.worst_slack:12.3e}  {status}"
        if r.detail:
            line += f"  ({r.detail})"
        lines.append(line)
    return "\n".join(lines)
