"""Optimistic Nash Q-learning for two-player zero-sum Markov games.

A single centralized learner keeps upper and lower Q-tables over (h, s, a, b) and
plays a CCE of the (rescaled) pair at every state. Training writes a Q-style
certified log: the joint policy snapshot before each (h, s) visit and the episode
list of every (h, s, a, b).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .certified import Q_STYLE, CertifiedPolicyLog, VisitLogBuilder
from .game import MarkovGame, RngStream, sample_categorical
from .linprog import solve_cce


class NashQError(ValueError):
    pass


def nashq_iota(game: MarkovGame, K: int, delta: float) -> float:
    """iota = log(S A B H K / delta)."""
    A, B = game.action_counts
    return math.log(game.num_states * A * B * game.horizon * K / delta)


@dataclass
class NashQConfig:
    K: int
    seed: int = 0
    c: float = 1.0
    delta: float = 0.1
    checkpoints: tuple[int, ...] = ()

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        self.checkpoints = tuple(sorted({int(k) for k in self.checkpoints if 1 <= k <= self.K}))


class QLearner:
    """Upper/lower Q and V tables, visit counters and the per-state CCE policy."""

    def __init__(self, H: int, S: int, A: int, B: int, iota: float, c: float = 1.0):
        self.H, self.S, self.A, self.B = H, S, A, B
        self.iota, self.c = iota, c
        # cap[h] = H - h is the largest return still collectable from 0-based step h
        self.cap = np.arange(H, -1, -1, dtype=float)
        self.Q_up = np.broadcast_to(self.cap[:H, None, None, None], (H, S, A, B)).copy()
        self.Q_low = np.zeros((H, S, A, B))
        self.V_up = np.repeat(self.cap[:, None], S, axis=1)
        self.V_low = np.zeros((H + 1, S))
        self.N = np.zeros((H, S, A, B), dtype=np.int64)
        self.pi = np.full((H, S, A, B), 1.0 / (A * B))

    def beta(self, t: int) -> float:
        return self.c * math.sqrt(self.H ** 3 * self.iota / t)

    def policy(self, h: int, s: int) -> np.ndarray:
        return self.pi[h, s]


def nashq_step(state: QLearner, h: int, s: int, a: int, b: int, r: float, s_next: int):
    """One Nash Q-learning update at (h, s, a, b) followed by a CCE re-solve at (h, s)."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"reward {r} outside [0,1]")
    H = state.H
    t = int(state.N[h, s, a, b]) + 1
    state.N[h, s, a, b] = t
    alpha = (H + 1.0) / (H + t)
    beta = state.beta(t)
    up = (1.0 - alpha) * state.Q_up[h, s, a, b] + alpha * (r + state.V_up[h + 1, s_next] + beta)
    lo = (1.0 - alpha) * state.Q_low[h, s, a, b] + alpha * (r + state.V_low[h + 1, s_next] - beta)
    # clamping keeps 0 <= Q_low <= Q_up <= H - h without affecting optimism, since
    # Q*_h lies in [0, H - h] (0-based h)
    cap = float(state.cap[h])
    state.Q_up[h, s, a, b] = min(up, cap)
    state.Q_low[h, s, a, b] = max(lo, 0.0)
    Qu, Ql = state.Q_up[h, s], state.Q_low[h, s]
    pi = solve_cce(Qu / H, Ql / H)
    state.pi[h, s] = pi
    state.V_up[h, s] = min(max(float((pi * Qu).sum()), 0.0), cap)
    state.V_low[h, s] = min(max(float((pi * Ql).sum()), 0.0), cap)


@dataclass
class NashQDiagnostics:
    rows: list[dict] = field(default_factory=list)
    gap_trace: float = 0.0          # (1/K) sum_k (V_up - V_low)_1^k(s_1)
    sandwich_total: int = 0
    sandwich_ok: int = 0

    def sandwich_fraction(self) -> float:
        return self.sandwich_ok / self.sandwich_total if self.sandwich_total else 1.0

    def to_csv_rows(self):
        cols = ("episode", "sandwich_violations", "gap_trace", "wallclock_ms")
        return cols, [[r[c] for c in cols] for r in self.rows]


@dataclass
class NashQResult:
    log: CertifiedPolicyLog
    diagnostics: NashQDiagnostics
    learner: QLearner
    iota: float


def train_nashq(game: MarkovGame, config: NashQConfig, reference_values=None) -> NashQResult:
    """Run K episodes of Nash Q-learning.

    ``reference_values`` is V* as an (H, S) or (H+1, S) array; when given, the
    sandwich V_up >= V* >= V_low is checked at every table entry at each checkpoint.
    """
    if not game.zero_sum or game.num_players != 2:
        raise NashQError("Nash Q-learning needs a two-player zero-sum game")
    H, S = game.horizon, game.num_states
    A, B = game.action_counts
    iota = nashq_iota(game, config.K, config.delta)
    ln = QLearner(H, S, A, B, iota, config.c)
    builder = VisitLogBuilder(H, S, A * B)
    sab = [[[[] for _ in range(A * B)] for _ in range(S)] for _ in range(H)]
    root = RngStream(config.seed)
    env = root.substream("env")
    act = root.substream("joint")
    P, R = game.transitions, game.rewards
    diag = NashQDiagnostics()
    ref = None if reference_values is None else np.asarray(reference_values, dtype=float)[:H]
    checkpoints = set(config.checkpoints)
    gap_sum = 0.0
    t0 = time.perf_counter()
    for k in range(1, config.K + 1):
        s = game.initial_state
        gap_sum += ln.V_up[0, s] - ln.V_low[0, s]
        for h in range(H):
            pol = ln.pi[h, s].ravel()
            builder.record(h, s, k, pol)
            j = sample_categorical(pol, act.random())
            a, b = divmod(j, B)
            s_next = sample_categorical(P[h, s, j], env.random())
            sab[h][s][j].append(k)
            nashq_step(ln, h, s, a, b, float(R[0, h, s, j]), s_next)
            s = s_next
        if k in checkpoints:
            viol = -1
            if ref is not None:
                ok = (ln.V_up[:H] >= ref - 1e-9) & (ref >= ln.V_low[:H] - 1e-9)
                diag.sandwich_total += ok.size
                diag.sandwich_ok += int(ok.sum())
                viol = int(ok.size - ok.sum())
            diag.rows.append({"episode": k, "sandwich_violations": viol,
                              "gap_trace": gap_sum / k,
                              "wallclock_ms": round((time.perf_counter() - t0) * 1000.0, 3)})
    diag.gap_trace = gap_sum / config.K
    vl = builder.build(final=ln.pi.reshape(H, S, A * B).copy())
    sab_arr = [[[np.array(e, dtype=np.int64) for e in col] for col in row] for row in sab]
    log = CertifiedPolicyLog(Q_STYLE, config.K, (A, B), [vl], config.seed, H, sab_arr)
    return NashQResult(log, diag, ln, iota)
