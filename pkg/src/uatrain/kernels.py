"""Hot loops for the exact oracles and the alignment metric.

Each kernel exists twice: an ``@njit`` loop version and a vectorised numpy
version. ``_accel.pick`` selects one at import time; both stay importable so
tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import numpy as np

from ._accel import njit, pick

# --------------------------------------------------------------------------
# neighbourhood maxima / expected adversarial loss
# --------------------------------------------------------------------------


@njit(cache=True)
def neighborhood_max_loss_nb(loss, nbhd, nbhd_len):
    n_x, n_y = loss.shape
    out = np.empty((n_x, n_y))
    for x in range(n_x):
        for y in range(n_y):
            best = -np.inf
            for k in range(nbhd_len[x]):
                v = loss[nbhd[x, k], y]
                if v > best:
                    best = v
            out[x, y] = best
    return out


def neighborhood_max_loss_np(loss, nbhd, nbhd_len):
    n_x, n_y = loss.shape
    width = nbhd.shape[1]
    safe = np.where(nbhd >= 0, nbhd, 0)
    gathered = loss[safe]  # (n_x, width, n_y)
    valid = np.arange(width)[None, :] < nbhd_len[:, None]
    gathered = np.where(valid[:, :, None], gathered, -np.inf)
    return gathered.max(axis=1).reshape(n_x, n_y)


# --------------------------------------------------------------------------
# exhaustive enumeration of budget-respecting mappings T(x, y)
# --------------------------------------------------------------------------


@njit(cache=True)
def bruteforce_mapping_max_nb(sup_x, sup_y, sup_p, nbhd, nbhd_len, loss):
    n = sup_x.shape[0]
    radix = np.empty(n, dtype=np.int64)
    total = 1
    for i in range(n):
        radix[i] = nbhd_len[sup_x[i]]
        total *= radix[i]
    digits = np.zeros(n, dtype=np.int64)
    best = -np.inf
    for _ in range(total):
        val = 0.0
        for i in range(n):
            val += sup_p[i] * loss[nbhd[sup_x[i], digits[i]], sup_y[i]]
        if val > best:
            best = val
        # mixed-radix increment
        for i in range(n):
            digits[i] += 1
            if digits[i] < radix[i]:
                break
            digits[i] = 0
    return best


def bruteforce_mapping_max_np(sup_x, sup_y, sup_p, nbhd, nbhd_len, loss):
    radix = nbhd_len[sup_x]
    # every mapping as a row of per-point choice indices
    choices = np.indices(tuple(int(r) for r in radix)).reshape(len(radix), -1).T
    targets = nbhd[sup_x[None, :], choices]
    values = loss[targets, sup_y[None, :]] @ sup_p
    return float(values.max())


# --------------------------------------------------------------------------
# batched divergences for property sweeps
# --------------------------------------------------------------------------


@njit(cache=True)
def tv_kl_rows_nb(p, q):
    n, k = p.shape
    tv = np.empty(n)
    kl = np.empty(n)
    for r in range(n):
        t = 0.0
        s = 0.0
        for j in range(k):
            t += abs(p[r, j] - q[r, j])
            if p[r, j] > 0.0:
                s += p[r, j] * np.log(p[r, j] / q[r, j])
        tv[r] = 0.5 * t
        kl[r] = s
    return tv, kl


def tv_kl_rows_np(p, q):
    tv = 0.5 * np.abs(p - q).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0) / q), 0.0)
    return tv, terms.sum(axis=1)


# --------------------------------------------------------------------------
# silhouette coefficient (euclidean)
# --------------------------------------------------------------------------


@njit(cache=True)
def silhouette_samples_nb(features, labels, n_labels):
    n, d = features.shape
    counts = np.zeros(n_labels, dtype=np.int64)
    for i in range(n):
        counts[labels[i]] += 1
    out = np.zeros(n)
    sums = np.zeros(n_labels)
    for i in range(n):
        sums[:] = 0.0
        for j in range(n):
            if i == j:
                continue
            acc = 0.0
            for t in range(d):
                diff = features[i, t] - features[j, t]
                acc += diff * diff
            sums[labels[j]] += np.sqrt(acc)
        own = labels[i]
        if counts[own] <= 1:
            out[i] = 0.0
            continue
        a = sums[own] / (counts[own] - 1)
        b = np.inf
        for c in range(n_labels):
            if c != own and counts[c] > 0:
                m = sums[c] / counts[c]
                if m < b:
                    b = m
        denom = max(a, b)
        out[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return out


def silhouette_samples_np(features, labels, n_labels):
    diff = features[:, None, :] - features[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    onehot = np.eye(n_labels)[labels]  # (n, L)
    counts = onehot.sum(axis=0)
    sums = dist @ onehot  # self-distance is zero, so own-cluster sum is exact
    own_counts = counts[labels]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[np.arange(len(labels)), labels] / (own_counts - 1)
        means = sums / counts[None, :]
    means[np.arange(len(labels)), labels] = np.inf
    means[:, counts == 0] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    return np.where(own_counts > 1, s, 0.0)


neighborhood_max_loss = pick(neighborhood_max_loss_nb, neighborhood_max_loss_np)
bruteforce_mapping_max = pick(bruteforce_mapping_max_nb, bruteforce_mapping_max_np)
tv_kl_rows = pick(tv_kl_rows_nb, tv_kl_rows_np)
silhouette_samples = pick(silhouette_samples_nb, silhouette_samples_np)
