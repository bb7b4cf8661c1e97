"""Rank-based comparison of several samples: Kruskal-Wallis and Conover."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import chi2, rankdata
from scipy.stats import t as t_dist


def _pooled(groups: Sequence[Sequence[float]]):
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if any(len(a) == 0 for a in arrays):
        raise ValueError("every group needs at least one observation")
    sizes = np.array([len(a) for a in arrays])
    ranks = rankdata(np.concatenate(arrays))
    splits = np.split(ranks, np.cumsum(sizes)[:-1])
    return arrays, sizes, ranks, splits


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Tie-corrected H statistic and its chi-square p-value (k - 1 dof).

    All-identical data carry no rank information; that case returns (0, 1).
    """
    _, sizes, ranks, splits = _pooled(groups)
    n = len(ranks)
    _, counts = np.unique(ranks, return_counts=True)
    correction = 1.0 - (counts ** 3 - counts).sum() / (n ** 3 - n) if n > 1 else 0.0
    if correction <= 0.0:
        return 0.0, 1.0
    rank_sums = np.array([s.sum() for s in splits])
    h = 12.0 / (n * (n + 1)) * (rank_sums ** 2 / sizes).sum() - 3.0 * (n + 1)
    h /= correction
    h = max(h, 0.0)
    return float(h), float(chi2.sf(h, len(sizes) - 1))


def _holm(p: np.ndarray) -> np.ndarray:
    order = np.argsort(p)
    m = len(p)
    adj = np.maximum.accumulate((m - np.arange(m)) * p[order])
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


def conover_posthoc(groups: Sequence[Sequence[float]], p_adjust: str | None = None) -> np.ndarray:
    """Pairwise two-sided Conover-Iman p-values after Kruskal-Wallis.

    Uses the tie-corrected pooled rank variance and a t distribution with
    N - k degrees of freedom. ``p_adjust="holm"`` applies Holm's step-down
    correction to the off-diagonal family. Returns a symmetric k x k matrix
    with a unit diagonal.
    """
    _, sizes, ranks, splits = _pooled(groups)
    n, k = len(ranks), len(sizes)
    out = np.ones((k, k))
    s2 = ((ranks ** 2).sum() - n * (n + 1) ** 2 / 4.0) / (n - 1) if n > 1 else 0.0
    if s2 <= 0.0 or n <= k:
        return out
    rank_sums = np.array([s.sum() for s in splits])
    h = ((rank_sums ** 2 / sizes).sum() - n * (n + 1) ** 2 / 4.0) / s2
    mean_ranks = rank_sums / sizes
    scale = s2 * max(n - 1 - h, 0.0) / (n - k)
    iu = np.triu_indices(k, 1)
    diff = np.abs(mean_ranks[iu[0]] - mean_ranks[iu[1]])
    se = np.sqrt(scale * (1.0 / sizes[iu[0]] + 1.0 / sizes[iu[1]]))
    with np.errstate(divide="ignore", invalid="ignore"):
        tval = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 0, np.inf, 0.0))
    p = 2.0 * t_dist.sf(tval, n - k)
    if p_adjust == "holm":
        p = _holm(p)
    elif p_adjust is not None:
        raise ValueError(f"unsupported p_adjust {p_adjust!r}")
    out[iu] = p
    out[(iu[1], iu[0])] = p
    return out
