"""Stochastic relaxations for edges and permutations.

Edges use the binary Gumbel-Softmax trick in its two-noise (logistic) form:
``soft = sigmoid((logits + G1 - G2) / tau)``. Permutations come in two
flavours: a doubly-stochastic relaxation (log-space Sinkhorn iteration,
projected to a hard permutation with an exact assignment solver) and a
rank-based relaxation (SoftSort of perturbed scores, row-argmax for the hard
permutation). All samplers run noise-free when ``noise is None``, which makes
them pure functions of their parameters; that mode is what evaluation uses.

Soft outputs are :class:`~diffdag.autodiff.Tensor` values so gradients flow
when a tape is active; hard outputs are plain arrays / permutations detached
from the tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import PermutationMatrix

__all__ = [
    "ParameterError",
    "GumbelSource",
    "EdgeParams",
    "PermutationParams",
    "SINKHORN",
    "TOPK",
    "sample_edges",
    "sinkhorn_operator",
    "hungarian",
    "softsort",
    "sample_permutation_sinkhorn",
    "sample_permutation_topk",
    "sample_permutation",
]

SINKHORN = "sinkhorn"
TOPK = "topk"

# Uniform draws are clamped away from {0, 1} so -log(-log(u)) stays finite.
_U_EPS = 1e-12


class ParameterError(ValueError):
    """Invalid sampler parameterization (temperature, mode, shapes)."""


class GumbelSource:
    """Stream of standard Gumbel(0, 1) noise from a counter-based generator.

    Independent callers must use independent sources (distinct seeds); one
    source is not safe to share across threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def gumbel(self, shape) -> np.ndarray:
        u = self._gen.random(shape)
        np.clip(u, _U_EPS, 1.0 - _U_EPS, out=u)
        np.log(u, out=u)
        np.negative(u, out=u)
        np.log(u, out=u)
        np.negative(u, out=u)
        return u

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high=high, size=size)


@dataclass
class EdgeParams:
    """Per-pair edge log-odds; diagonal entries exist but are masked downstream."""

    n: int
    logits: Tensor = None
    temperature: float = 1.0

    def __post_init__(self):
        if self.logits is None:
            self.logits = Tensor(np.zeros((self.n, self.n)), requires_grad=True)
        elif not isinstance(self.logits, Tensor):
            self.logits = Tensor(np.asarray(self.logits, dtype=np.float64), requires_grad=True)
        if self.logits.value.shape != (self.n, self.n):
            raise ParameterError(f"edge logits must be {self.n}x{self.n}, got {self.logits.value.shape}")
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")

    def probabilities(self) -> np.ndarray:
        """sigmoid(logits): the implied per-pair edge probabilities."""
        return _sigmoid_np(self.logits.value)


@dataclass
class PermutationParams:
    """Scores for permutation sampling; shape depends on the mode.

    ``sinkhorn`` uses an n x n score matrix, ``topk`` a length-n score vector
    (stored as an n x 1 column).
    """

    n: int
    mode: str = TOPK
    scores: Tensor = None
    temperature: float = 1.0
    # Sampling unrolls the iteration on the tape, so the budget stays small;
    # standalone operator calls default to a larger cap (see sinkhorn_operator).
    sinkhorn_iters: int = 20

    def __post_init__(self):
        if self.mode not in (SINKHORN, TOPK):
            raise ParameterError(f"mode must be {SINKHORN!r} or {TOPK!r}, got {self.mode!r}")
        want = (self.n, self.n) if self.mode == SINKHORN else (self.n, 1)
        if self.scores is None:
            self.scores = Tensor(np.zeros(want), requires_grad=True)
        else:
            if not isinstance(self.scores, Tensor):
                self.scores = Tensor(np.asarray(self.scores, dtype=np.float64), requires_grad=True)
            if self.scores.value.ndim == 1:
                self.scores = Tensor(self.scores.value.reshape(-1, 1), requires_grad=self.scores.requires_grad)
        if self.scores.value.shape != want:
            raise ParameterError(
                f"{self.mode} scores must have shape {want}, got {self.scores.value.shape}"
            )
        if self.temperature <= 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        if self.sinkhorn_iters < 1:
            raise ParameterError(f"sinkhorn_iters must be >= 1, got {self.sinkhorn_iters}")


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sample_edges(params: EdgeParams, noise: GumbelSource | None = None) -> tuple[np.ndarray, Tensor]:
    """Sample all n*n candidate edges at once.

    Returns ``(hard, soft)``: a detached binary matrix (1 where soft > 0.5)
    and the relaxed sigmoid tensor. Noise-free mode drops the Gumbel pair
    difference and is deterministic.
    """
    n = params.n
    z = params.logits
    if noise is not None:
        g = noise.gumbel((n, n)) - noise.gumbel((n, n))
        z = ad.add(z, Tensor(g))
    soft = ad.sigmoid(ad.mul(z, Tensor(1.0 / params.temperature)))
    hard = (soft.value > 0.5).astype(np.float64)
    return hard, soft


def sinkhorn_operator(m, iters: int = 500, tau: float = 1.0, tol: float = 1e-6) -> Tensor:
    """Push ``m / tau`` toward the doubly-stochastic polytope in log space.

    Alternates row and column log-sum-exp normalization up to ``iters``
    times, exiting as soon as the worst row/column sum deviates from 1 by
    less than ``tol`` (random score matrices typically exit within 20
    rounds; the larger cap only matters for near-degenerate inputs whose
    alternation converges slowly). Log-space arithmetic keeps the iteration
    finite for arbitrarily large score magnitudes.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    m = m if isinstance(m, Tensor) else Tensor(m)
    if ad._active_tape() is None or not m.requires_grad:
        # nothing to differentiate: run the identical iteration without tape
        # bookkeeping (matters for sampling benchmarks at small n)
        log_p = m.value / tau
        for _ in range(iters):
            log_p = log_p - _lse(log_p, axis=1)
            log_p = log_p - _lse(log_p, axis=0)
            p = np.exp(log_p)
            dev = max(np.abs(p.sum(axis=1) - 1.0).max(), np.abs(p.sum(axis=0) - 1.0).max())
            if dev < tol:
                break
        return Tensor(np.exp(log_p))
    n_rows, n_cols = m.value.shape
    ones_row = Tensor(np.ones((1, n_cols)))
    ones_col = Tensor(np.ones((1, n_rows)))
    log_p = ad.mul(m, Tensor(1.0 / tau))
    for _ in range(iters):
        log_p = ad.sub(log_p, ad.matmul(ad.logsumexp_rows(log_p), ones_row))
        cols = ad.transpose(log_p)
        cols = ad.sub(cols, ad.matmul(ad.logsumexp_rows(cols), ones_col))
        log_p = ad.transpose(cols)
        p = np.exp(log_p.value)
        dev = max(np.abs(p.sum(axis=1) - 1.0).max(), np.abs(p.sum(axis=0) - 1.0).max())
        if dev < tol:
            break
    return ad.exp(log_p)


def hungarian(profit) -> PermutationMatrix:
    """Exact maximum-profit assignment in O(n^3).

    Shortest-augmenting-path algorithm with potentials on ``cost = -profit``.
    The returned permutation maximizes the total profit picked up by its
    matrix form, ``sum_i profit[perm[i], i]`` (transposing the profit matrix
    yields the row-indexed formulation with the same optimal value).
    """
    profit = np.asarray(profit, dtype=np.float64)
    if profit.ndim != 2 or profit.shape[0] != profit.shape[1]:
        raise ParameterError(f"profit must be square, got shape {profit.shape}")
    if not np.isfinite(profit).all():
        raise ParameterError("profit entries must be finite")
    cost = -profit
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    for cur_row in range(n):
        shortest = np.full(n, np.inf)
        pred = np.full(n, -1, dtype=np.int64)
        scanned_rows = np.zeros(n, dtype=bool)
        scanned_cols = np.zeros(n, dtype=bool)
        remaining = np.arange(n)
        min_val = 0.0
        i = cur_row
        sink = -1
        while sink == -1:
            scanned_rows[i] = True
            reduced = min_val + cost[i, remaining] - u[i] - v[remaining]
            better = reduced < shortest[remaining]
            if better.any():
                cols = remaining[better]
                shortest[cols] = reduced[better]
                pred[cols] = i
            k = int(np.argmin(shortest[remaining]))
            j = int(remaining[k])
            min_val = shortest[j]
            scanned_cols[j] = True
            remaining = np.delete(remaining, k)
            if row4col[j] == -1:
                sink = j
            else:
                i = int(row4col[j])
        u[cur_row] += min_val
        others = scanned_rows.copy()
        others[cur_row] = False
        rows = np.flatnonzero(others)
        if rows.size:
            u[rows] += min_val - shortest[col4row[rows]]
        cols = np.flatnonzero(scanned_cols)
        v[cols] -= min_val - shortest[cols]
        j = sink
        while True:
            i = int(pred[j])
            row4col[j] = i
            col4row[i], j = j, int(col4row[i])
            if i == cur_row:
                break
    # matrix()[row4col[c], c] = 1 marks exactly the matched cells
    return PermutationMatrix(row4col)


def softsort(s, tau: float = 1.0) -> Tensor:
    """Row-stochastic relaxation of the descending argsort of ``s``.

    Row i is a softmax over ``-|sorted_desc(s)[i] - s[j]| / tau``; its argmax
    reproduces the stable descending argsort on distinct inputs.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    s = s if isinstance(s, Tensor) else Tensor(s)
    if s.value.ndim == 1:
        s = Tensor(s.value.reshape(-1, 1), requires_grad=s.requires_grad)
    n = s.value.shape[0]
    order = np.argsort(-s.value.ravel(), kind="stable")
    p_sort = np.zeros((n, n))
    p_sort[np.arange(n), order] = 1.0  # row i selects the i-th largest score
    sorted_col = ad.matmul(Tensor(p_sort), s)
    ones_row = Tensor(np.ones((1, n)))
    ones_col = Tensor(np.ones((n, 1)))
    diff = ad.sub(ad.matmul(sorted_col, ones_row), ad.matmul(ones_col, ad.transpose(s)))
    return ad.softmax_rows(ad.mul(ad.absolute(diff), Tensor(-1.0 / tau)))


def _rank_permutation(scores: np.ndarray) -> PermutationMatrix:
    """perm[v] = descending rank of scores[v], stable on ties."""
    order = np.argsort(-scores.ravel(), kind="stable")
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(scores.size)
    return PermutationMatrix(ranks)


def sample_permutation_sinkhorn(
    params: PermutationParams, noise: GumbelSource | None = None
) -> tuple[PermutationMatrix, Tensor]:
    """Doubly-stochastic soft permutation plus its exact hard projection."""
    if params.mode != SINKHORN:
        raise ParameterError(f"params.mode is {params.mode!r}, expected {SINKHORN!r}")
    scores = params.scores
    if noise is not None:
        scores = ad.add(scores, Tensor(noise.gumbel((params.n, params.n))))
    soft = sinkhorn_operator(scores, iters=params.sinkhorn_iters, tau=params.temperature)
    hard = hungarian(soft.value)
    return hard, soft


def sample_permutation_topk(
    params: PermutationParams, noise: GumbelSource | None = None
) -> tuple[PermutationMatrix, Tensor]:
    """Rank-based soft permutation: SoftSort of the perturbed score vector."""
    if params.mode != TOPK:
        raise ParameterError(f"params.mode is {params.mode!r}, expected {TOPK!r}")
    scores = params.scores
    if noise is not None:
        scores = ad.add(scores, Tensor(noise.gumbel((params.n, 1))))
    soft = softsort(scores, tau=params.temperature)
    # Stable descending argsort of the perturbed scores; coincides with the
    # row-wise argmax of soft whenever the scores are distinct.
    hard = _rank_permutation(scores.value)
    return hard, soft


def sample_permutation(
    params: PermutationParams, noise: GumbelSource | None = None
) -> tuple[PermutationMatrix, Tensor]:
    if params.mode == SINKHORN:
        return sample_permutation_sinkhorn(params, noise)
    return sample_permutation_topk(params, noise)
