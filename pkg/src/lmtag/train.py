"""Optimization and experiment protocol.

Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8), gradient
clipping at a global-norm threshold, the dev-triggered annealing schedule
(constant 1e-3 until the dev score plateaus, then 5 epochs at 1e-4 and 5 at
1e-5), multi-seed aggregation, and a two-sample Welch t-test whose p-value
comes from the regularized incomplete beta function (Lentz continued
fraction), so no stats dependency is needed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .tensor import Node


@dataclass
class AdamState:
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Node]) -> None:
    """One bias-corrected Adam update in place; grads must be materialized.

    Parameters with no gradient this step still have their moments decayed.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr = state.alpha * math.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        with np.errstate(invalid="ignore"):
            update = lr * m / (np.sqrt(v) + state.eps)
        if not np.all(np.isfinite(update)):
            raise FloatingPointError(f"non-finite Adam update for {name}")
        p.value -= update


# ---------------------------------------------------------------------------
# Annealing schedule


@dataclass
class EpochRecord:
    epoch: int
    alpha: float
    train_loss: float
    dev_score: float
    discarded: bool = False  # post-peak probe epoch undone by checkpoint restore


@dataclass
class RunResult:
    seed: int
    history: list[EpochRecord]
    best_epoch: int
    best_dev: float
    test_score: float | None = None
    wall_time: float = 0.0
    best_checkpoint: object = None


def run_schedule(train_epoch, dev_eval, seed: int = 0, patience: int = 5,
                 base_alpha: float = 1e-3, anneal_epochs: int = 5,
                 max_epochs: int = 1000, checkpoint=None, restore=None,
                 log=None) -> RunResult:
    """Drive training with the dev-triggered annealing schedule.

    train_epoch(epoch, alpha) runs one epoch and returns the train loss.
    dev_eval() returns the current dev score (higher is better).
    checkpoint() snapshots parameters; restore(snapshot) puts them back.

    Phase 1 holds alpha = base_alpha until the dev score has failed to
    improve for more than ``patience`` consecutive epochs. The peak can only
    be recognized after running non-improving probe epochs, so on trigger
    the best checkpoint is restored, the probe epochs are marked discarded,
    and annealing resumes from the peak epoch: ``anneal_epochs`` epochs at
    base_alpha/10, the same again at base_alpha/100, then stop. The best-dev
    snapshot (over all kept epochs) is returned for test evaluation.
    """
    t0 = time.time()
    history: list[EpochRecord] = []
    best_dev = -math.inf
    best_epoch = 0
    best_snapshot = None
    since_best = 0
    epoch = 0
    executed = 0

    def run_one(alpha: float) -> EpochRecord:
        nonlocal epoch, executed
        epoch += 1
        executed += 1
        loss = train_epoch(epoch, alpha)
        score = dev_eval()
        rec = EpochRecord(epoch, alpha, loss, score)
        history.append(rec)
        if log is not None:
            log(f"epoch {epoch} alpha {alpha:g} loss {loss:.6f} dev {score:.4f}")
        return rec

    def note_best(rec: EpochRecord) -> bool:
        nonlocal best_dev, best_epoch, best_snapshot, since_best
        if rec.dev_score > best_dev:
            best_dev = rec.dev_score
            best_epoch = rec.epoch
            since_best = 0
            if checkpoint is not None:
                best_snapshot = checkpoint()
            return True
        since_best += 1
        return False

    # Phase 1: constant learning rate until the dev peak is identified.
    while executed < max_epochs:
        rec = run_one(base_alpha)
        note_best(rec)
        if since_best > patience:
            break
    else:
        return RunResult(seed, history, best_epoch, best_dev,
                         wall_time=time.time() - t0, best_checkpoint=best_snapshot)

    # Rewind the probe epochs and anneal from the peak.
    for rec in history:
        if rec.epoch > best_epoch:
            rec.discarded = True
    if restore is not None and best_snapshot is not None:
        restore(best_snapshot)
    epoch = best_epoch
    for alpha in (base_alpha / 10.0, base_alpha / 100.0):
        for _ in range(anneal_epochs):
            if executed >= max_epochs:
                break
            rec = run_one(alpha)
            note_best(rec)
    return RunResult(seed, history, best_epoch, best_dev,
                     wall_time=time.time() - t0, best_checkpoint=best_snapshot)


# ---------------------------------------------------------------------------
# Multi-seed aggregation


@dataclass
class SeedAggregate:
    mean: float
    std: float  # sample standard deviation, n-1 denominator
    scores: list[float]
    results: list


def multi_seed(run_fn, seeds: list[int], score_of=None) -> SeedAggregate:
    """Run ``run_fn(seed)`` for each seed and aggregate the scores.

    ``score_of`` extracts the score from a run result (default: best_dev).
    """
    if score_of is None:
        score_of = lambda r: r.best_dev
    results = [run_fn(seed) for seed in seeds]
    scores = [float(score_of(r)) for r in results]
    mean = sum(scores) / len(scores)
    if len(scores) >= 2:
        var = sum((s - mean) ** 2 for s in scores) / (len(scores) - 1)
        std = math.sqrt(var)
    else:
        std = 0.0
    return SeedAggregate(mean=mean, std=std, scores=scores, results=results)


# ---------------------------------------------------------------------------
# Welch t-test


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with ``df`` degrees of freedom."""
    x = df / (df + t * t)
    p_two = betainc(df / 2.0, 0.5, x)  # P(|T| > |t|)
    if t >= 0:
        return p_two / 2.0
    return 1.0 - p_two / 2.0


@dataclass
class WelchResult:
    t: float
    df: float
    p_two_sided: float
    p_one_sided: float  # alternative: mean A > mean B


def welch_test(mean_a: float, std_a: float, n_a: int,
               mean_b: float, std_b: float, n_b: int) -> WelchResult:
    """Two-sample Welch t-test with Welch-Satterthwaite degrees of freedom."""
    if n_a < 2 or n_b < 2:
        raise ValueError("welch_test needs n >= 2 in each sample")
    if std_a < 0 or std_b < 0:
        raise ValueError("standard deviations must be non-negative")
    va, vb = std_a**2 / n_a, std_b**2 / n_b
    se2 = va + vb
    if se2 == 0.0:
        # Degenerate samples: identical means are indistinguishable.
        t = 0.0 if mean_a == mean_b else math.copysign(math.inf, mean_a - mean_b)
        df = float(n_a + n_b - 2)
        p_two = 1.0 if t == 0.0 else 0.0
        p_one = 1.0 if t == 0.0 else (0.0 if t > 0 else 1.0)
        return WelchResult(t, df, p_two, p_one)
    t = (mean_a - mean_b) / math.sqrt(se2)
    df = se2**2 / (va**2 / (n_a - 1) + vb**2 / (n_b - 1))
    p_two = betainc(df / 2.0, 0.5, df / (df + t * t))
    p_one = student_t_sf(t, df)
    return WelchResult(t=t, df=df, p_two_sided=p_two, p_one_sided=p_one)
