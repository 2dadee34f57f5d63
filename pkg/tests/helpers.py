"""Independent oracles shared by the test modules."""

import math

import numpy as np

from petra.nn.backprop import loss_and_grads, loss_value


def fd_gradient_check(net, x, y, loss, h=1e-5, n_samples=12, rng=None, train=True):
    """Max relative error between analytic grads and central differences on sampled entries."""
    rng = rng if rng is not None else np.random.default_rng(0)
    analytic = loss_and_grads(net, x, y, loss, train=train).grads
    worst = 0.0
    for (li, name), g in analytic.items():
        p = net.layers[li].params[name]
        flat_idx = rng.choice(p.size, size=min(n_samples, p.size), replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, p.shape)
            mask = net.layers[li].masks.get(name)
            if mask is not None and mask[idx] == 0:
                assert g[idx] == 0.0
                continue
            orig = p[idx]
            p[idx] = orig + h
            lp = loss_value(net, x, y, loss, train=train)
            p[idx] = orig - h
            lm = loss_value(net, x, y, loss, train=train)
            p[idx] = orig
            num = (lp - lm) / (2 * h)
            denom = max(abs(num), abs(g[idx]), 1e-6)
            worst = max(worst, abs(num - g[idx]) / denom)
    return worst


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def mc_hypervolume(points, ref, n=1_000_000, seed=0, chunk=200_000):
    """Monte-Carlo estimate of the dominated volume (maximization) inside [ref, max(points)]."""
    pts = np.asarray(points, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    upper = pts.max(axis=0)
    vol = float(np.prod(upper - ref))
    rng = np.random.default_rng(seed)
    hit = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        s = ref + rng.random((m, len(ref))) * (upper - ref)
        dom = np.zeros(m, dtype=bool)
        for p in pts:
            dom |= np.all(s <= p, axis=1)
        hit += int(dom.sum())
        done += m
    return vol * hit / n


def brute_nondominated(vectors):
    """Indices kept by a first-occurrence non-dominated filter (maximization)."""
    keep = []
    for i, a in enumerate(vectors):
        ok = True
        for j, b in enumerate(vectors):
            if j == i:
                continue
            ge = all(x >= y for x, y in zip(b, a))
            gt = any(x > y for x, y in zip(b, a))
            if ge and gt:
                ok = False
                break
            if j < i and tuple(a) == tuple(b):
                ok = False
                break
        if ok:
            keep.append(i)
    return keep


# ------------------------------------------------------------------ loss and metric oracles
def frob_sq(a):
    return sum(float(v) ** 2 for v in np.asarray(a).ravel())


def ortho_oracle(U, V):
    r = U.shape[1]
    gu = [[sum(U[k, i] * U[k, j] for k in range(U.shape[0])) - (i == j) for j in range(r)] for i in range(r)]
    gv = [[sum(V[k, i] * V[k, j] for k in range(V.shape[0])) - (i == j) for j in range(r)] for i in range(r)]
    return (frob_sq(gu) + frob_sq(gv)) / r ** 2


def hoyer_oracle(S):
    return sum(abs(float(s)) for s in S) / math.sqrt(sum(float(s) ** 2 for s in S))


def l1_oracle(ws):
    return sum(abs(float(v)) for w in ws for v in np.ravel(w))


def norm_oracle(ws):
    total = 0.0
    for w in ws:
        n2 = math.sqrt(sum(float(v) ** 2 for v in np.ravel(w)))
        if n2 == 0:
            continue
        total += sum(abs(float(v)) for v in np.ravel(w)) / n2 - 1.0
    return total


def lai_oracle(gs, tau):
    vals = [max(0.0, math.sqrt(sum(float(v) ** 2 for v in np.ravel(g))) - tau) ** 2 for g in gs]
    return sum(vals) / len(vals)


def lamp_oracle(w):
    """Definition-level LAMP: for each i, w_i^2 over the sum of w_j^2 of j at or after i in ascending order."""
    flat = np.asarray(w, dtype=np.float64).ravel()
    order = sorted(range(flat.size), key=lambda i: (flat[i] ** 2, i))
    out = np.zeros(flat.size)
    for pos, i in enumerate(order):
        denom = sum(flat[j] ** 2 for j in order[pos:])
        out[i] = flat[i] ** 2 / denom if denom > 0 else 0.0
    return out


def f1_oracle(preds, labels):
    classes = sorted(set(preds) | set(labels))
    scores = []
    for c in classes:
        tp = sum(1 for p, l in zip(preds, labels) if p == c and l == c)
        fp = sum(1 for p, l in zip(preds, labels) if p == c and l != c)
        fn = sum(1 for p, l in zip(preds, labels) if p != c and l == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(scores) / len(scores)


def rmse_oracle(p, t):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(p, t)) / len(p))
