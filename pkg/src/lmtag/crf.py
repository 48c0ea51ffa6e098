"""Linear-chain CRF: path scoring, log-partition, marginals, Viterbi.

Transitions live in one [(L+2), (L+2)] table over the L labels plus
synthetic START (index L) and STOP (index L+1) states. A path through tags
y_1..y_N scores

    sum_k emissions[k, y_k]
    + transition[START, y_1] + sum_k transition[y_{k-1}, y_k]
    + transition[y_N, STOP]

All lattice math runs in log space with max-shifted log-sum-exp. The
differentiable loss path (``nll_loss``) is built from graph ops; marginals
and Viterbi are plain numpy on the current values.

Hard scheme constraints are a [(L+2), (L+2)] additive mask with -inf at
illegal transitions; the mask is added to the transition values and never
trained.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import LabelScheme
from .tensor import Node

NEG_INF = float("-inf")


class CrfError(ValueError):
    pass


def start_stop_indices(num_labels: int) -> tuple[int, int]:
    return num_labels, num_labels + 1


def build_constraint_mask(scheme: LabelScheme) -> np.ndarray:
    """Additive mask: 0 where a BIOES transition is legal, -inf where not."""
    tags = scheme.tags
    L = len(tags)
    start, stop = start_stop_indices(L)
    mask = np.full((L + 2, L + 2), NEG_INF)
    for i, prev in enumerate(tags):
        for j, cur in enumerate(tags):
            if scheme.is_legal_transition(prev, cur):
                mask[i, j] = 0.0
    for j, cur in enumerate(tags):
        if scheme.is_legal_transition(None, cur):
            mask[start, j] = 0.0
    for i, prev in enumerate(tags):
        if scheme.is_legal_transition(prev, None):
            mask[i, stop] = 0.0
    return mask


def _check(emissions: np.ndarray, transitions: np.ndarray):
    n, L = emissions.shape
    if transitions.shape != (L + 2, L + 2):
        raise CrfError(
            f"transition table {transitions.shape} does not match {L} labels"
        )
    return n, L


def sequence_score(emissions: np.ndarray, transitions: np.ndarray,
                   tags: list[int]) -> float:
    """Unnormalized log score of one tag path, START/STOP included."""
    n, L = _check(emissions, transitions)
    if len(tags) != n:
        raise CrfError(f"{len(tags)} tags for {n} positions")
    if any(not 0 <= t < L for t in tags):
        raise CrfError(f"tag index out of range [0, {L})")
    start, stop = start_stop_indices(L)
    score = transitions[start, tags[0]]
    for k, y in enumerate(tags):
        score = score + emissions[k, y]
        if k > 0:
            score = score + transitions[tags[k - 1], y]
    return float(score + transitions[tags[-1], stop])


def log_partition(emissions: np.ndarray, transitions: np.ndarray) -> float:
    """log sum over all L^N paths of exp(sequence_score), forward recursion."""
    n, L = _check(emissions, transitions)
    start, stop = start_stop_indices(L)
    inner = transitions[:L, :L]
    alpha = transitions[start, :L] + emissions[0]
    for k in range(1, n):
        alpha = _lse_cols(alpha[:, None] + inner) + emissions[k]
    return float(_lse_cols(alpha[:, None] + transitions[:L, stop : stop + 1]).item())


def _lse_cols(m: np.ndarray) -> np.ndarray:
    """Column-wise logsumexp, safe for -inf columns."""
    mx = m.max(axis=0)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(np.exp(m - safe).sum(axis=0)) + safe
    return np.where(np.isfinite(mx), out, NEG_INF)


def marginals(emissions: np.ndarray, transitions: np.ndarray) -> np.ndarray:
    """Per-position label posteriors P(y_k = l | x) via forward-backward."""
    n, L = _check(emissions, transitions)
    start, stop = start_stop_indices(L)
    inner = transitions[:L, :L]
    alphas = np.empty((n, L))
    alphas[0] = transitions[start, :L] + emissions[0]
    for k in range(1, n):
        alphas[k] = _lse_cols(alphas[k - 1][:, None] + inner) + emissions[k]
    betas = np.empty((n, L))
    betas[n - 1] = transitions[:L, stop]
    for k in range(n - 2, -1, -1):
        betas[k] = _lse_cols((inner + emissions[k + 1] + betas[k + 1]).T)
    log_z = _lse_cols((alphas[n - 1] + betas[n - 1])[:, None]).item()
    logm = alphas + betas - log_z
    out = np.exp(logm)
    out[logm == NEG_INF] = 0.0
    return out


def viterbi(emissions: np.ndarray, transitions: np.ndarray) -> tuple[list[int], float]:
    """Highest-scoring path; backpointer ties break to the lowest label index."""
    n, L = _check(emissions, transitions)
    start, stop = start_stop_indices(L)
    inner = transitions[:L, :L]
    delta = transitions[start, :L] + emissions[0]
    back = np.zeros((n, L), dtype=int)
    for k in range(1, n):
        scores = delta[:, None] + inner  # [prev, cur]
        back[k] = scores.argmax(axis=0)  # argmax -> first (lowest) maximizer
        delta = scores.max(axis=0) + emissions[k]
    final = delta + transitions[:L, stop]
    best = float(final.max())
    if best == NEG_INF:
        raise CrfError("all tag paths have -inf score")
    path = [int(final.argmax())]
    for k in range(n - 1, 0, -1):
        path.append(int(back[k, path[-1]]))
    path.reverse()
    return path, best


# ---------------------------------------------------------------------------
# Differentiable loss


def log_partition_node(emissions: Node, transitions: Node) -> Node:
    n, L = _check(emissions.value, transitions.value)
    start, stop = start_stop_indices(L)
    inner = T.narrow(T.narrow(transitions, 0, 0, L), 1, 0, L)
    start_row = T.reshape(T.narrow(T.narrow(transitions, 0, start, 1), 1, 0, L), (-1,))
    stop_col = T.reshape(T.narrow(T.narrow(transitions, 0, 0, L), 1, stop, 1), (-1,))
    alpha = T.add(start_row, T.reshape(T.narrow(emissions, 0, 0, 1), (-1,)))
    for k in range(1, n):
        em_k = T.reshape(T.narrow(emissions, 0, k, 1), (-1,))
        alpha = T.add(T.logsumexp(T.add(T.reshape(alpha, (L, 1)), inner), axis=0), em_k)
    return T.logsumexp(T.add(alpha, stop_col), axis=0)


def sequence_score_node(emissions: Node, transitions: Node, tags: list[int]) -> Node:
    n, L = _check(emissions.value, transitions.value)
    start, stop = start_stop_indices(L)
    em = T.pick_sum(emissions, [(k, y) for k, y in enumerate(tags)])
    pairs = [(start, tags[0])]
    pairs += [(tags[k - 1], tags[k]) for k in range(1, n)]
    pairs += [(tags[-1], stop)]
    return T.add(em, T.pick_sum(transitions, pairs))


def nll_loss(emissions: Node, transitions: Node, tags: list[int],
             constraint_mask: np.ndarray | None = None) -> Node:
    """Negative log-likelihood of the gold path, differentiable end to end."""
    trans = transitions
    if constraint_mask is not None:
        trans = T.add(transitions, T.constant(constraint_mask))
        gold = sequence_score(emissions.value, trans.value, tags)
        if gold == NEG_INF:
            raise CrfError("gold tag path violates the constraint mask")
    return T.sub(log_partition_node(emissions, trans),
                 sequence_score_node(emissions, trans, tags))


# ---------------------------------------------------------------------------
# Brute-force references (exported for oracle tests and cross-checking)


def enumerate_paths(n: int, num_labels: int):
    if n == 0:
        yield []
        return
    for rest in enumerate_paths(n - 1, num_labels):
        for y in range(num_labels):
            yield rest + [y]


def brute_force_log_partition(emissions, transitions) -> float:
    n, L = _check(emissions, transitions)
    scores = [sequence_score(emissions, transitions, p) for p in enumerate_paths(n, L)]
    m = max(scores)
    if m == NEG_INF:
        return NEG_INF
    return m + float(np.log(sum(np.exp(s - m) for s in scores)))
