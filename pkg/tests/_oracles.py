"""Independent reference implementations used to check production code."""
from __future__ import annotations

import itertools

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path


def all_strings(alphabet: str, max_len: int) -> list[str]:
    return ["".join(p) for n in range(max_len + 1) for p in itertools.product(alphabet, repeat=n)]


def edit_graph_distances(alphabet: str = "abc", max_len: int = 6) -> tuple[list[str], np.ndarray]:
    """All-pairs edit distances as shortest paths over single-edit moves.

    Nodes are every string up to ``max_len``; an edge joins two strings one
    insertion, deletion or substitution apart. Restricting to ``max_len`` is
    safe: an optimal script can do its deletions and substitutions before
    its insertions, so it never passes through a longer string.
    """
    words = all_strings(alphabet, max_len)
    index = {w: i for i, w in enumerate(words)}
    rows, cols = [], []
    for w, i in index.items():
        for k in range(len(w) + 1):
            if len(w) < max_len:
                for c in alphabet:
                    rows.append(i)
                    cols.append(index[w[:k] + c + w[k:]])
            if k < len(w):
                rows.append(i)
                cols.append(index[w[:k] + w[k + 1:]])
                for c in alphabet:
                    if c != w[k]:
                        rows.append(i)
                        cols.append(index[w[:k] + c + w[k + 1:]])
    g = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(words), len(words)))
    return words, shortest_path(g, method="D", unweighted=True, directed=False).astype(np.int64)


def brute_beam_best(step_logp, vocab: int, eos: int, max_len: int, alpha: float = 0.0):
    """Exhaustively score every finished sequence of length <= max_len; returns (ids, score)."""
    best, best_score = None, -np.inf
    for n in range(1, max_len + 1):
        for body in itertools.product([v for v in range(vocab) if v != eos], repeat=n - 1):
            seq = list(body) + [eos]
            lp = sum(step_logp(seq[:i])[seq[i]] for i in range(n))
            score = lp / (n ** alpha)
            if score > best_score:
                best, best_score = seq, score
    return best, best_score
