import itertools

import numpy as np
import pytest

from diffdag.autodiff import Tape, Tensor


def analytic_grads(build_loss, params):
    """Run one forward/backward and return each param's gradient."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    return [None if p.grad is None else p.grad.copy() for p in params]


def numeric_grads(build_loss, params, eps=1e-5):
    """Central finite differences of the loss w.r.t. every param entry."""
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gf = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = float(build_loss().value)
            flat[k] = orig - eps
            down = float(build_loss().value)
            flat[k] = orig
            gf[k] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def assert_grads_close(build_loss, params, rtol=1e-4, eps=1e-5, floor=1e-2):
    """Analytic vs central-difference gradients, relative error with a floor."""
    ana = analytic_grads(build_loss, params)
    num = numeric_grads(build_loss, params, eps=eps)
    for p, a, b in zip(params, ana, num):
        assert a is not None, f"no gradient reached param of shape {p.value.shape}"
        rel = np.abs(a - b) / np.maximum(np.abs(b), floor)
        assert rel.max() <= rtol, f"gradient mismatch (max rel {rel.max():.2e}) for shape {p.value.shape}"


def enumerate_dags(n):
    """All labeled DAGs on n nodes as binary matrices (brute force)."""
    cells = [(i, j) for i in range(n) for j in range(n) if i != j]
    out = []
    for bits in itertools.product((0, 1), repeat=len(cells)):
        m = np.zeros((n, n), dtype=np.int8)
        for (i, j), b in zip(cells, bits):
            m[i, j] = b
        if _acyclic_ref(m):
            out.append(m)
    return out


def _acyclic_ref(m):
    """Reference acyclicity via nilpotency of the adjacency power."""
    n = m.shape[0]
    p = np.asarray(m, dtype=np.int64)
    acc = p.copy()
    for _ in range(n):
        if np.trace(acc) > 0:
            return False
        acc = (acc @ p > 0).astype(np.int64)
    return True


def auc_roc_oracle(scores, labels):
    """Enumerate every distinct threshold, integrate ROC with trapezoids."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = labels.sum()
    neg = labels.size - pos
    pts = [(0.0, 0.0)]
    for t in sorted(set(scores.tolist()), reverse=True):
        keep = scores >= t
        pts.append((np.sum(keep & (labels == 0)) / neg, np.sum(keep & (labels == 1)) / pos))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def auc_pr_oracle(scores, labels):
    """Enumerate every distinct threshold, step-integrate precision-recall."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = labels.sum()
    area = 0.0
    prev_recall = 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        keep = scores >= t
        tp = np.sum(keep & (labels == 1))
        recall = tp / pos
        precision = tp / keep.sum()
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
