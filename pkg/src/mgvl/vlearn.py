"""Decentralized V-learning with pluggable weighted-regret bandits.

Each ``VLearner`` owns only its own value tables, counters and bandits. ``train``
plays the agents against each other in a shared environment; a learner never reads
another learner's state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bandit import alpha_weights, make_bandit
from .certified import V_STYLE, CertifiedPolicyLog, VisitLogBuilder
from .game import MarkovGame, RngStream, sample_categorical

__all__ = ["alpha_weights", "bonus_beta", "PlayerConfig", "TrainConfig", "VLearner",
           "TrainDiagnostics", "TrainResult", "train", "nash_v_preset", "compute_iota"]


def bonus_beta(t, A: int, H: int, iota: float, c: float = 1.0, mode: str = "external",
               h_power: int = 3):
    """Optimism bonus after t visits.

    external: c sqrt(H^3 A iota / t); swap: c A sqrt(H^3 iota / t). ``h_power=4``
    gives the two-sided Nash V-learning variant c sqrt(H^4 A iota / t).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 1):
        raise ValueError("bonus needs t >= 1")
    if mode == "external":
        out = c * np.sqrt(H ** h_power * A * iota / t)
    elif mode == "swap":
        out = c * A * np.sqrt(H ** h_power * iota / t)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(out) if out.ndim == 0 else out


def compute_iota(game: MarkovGame, K: int, delta: float) -> float:
    """iota = log(m H S A_max K / delta)."""
    return math.log(game.num_players * game.horizon * game.num_states
                    * max(game.action_counts) * K / delta)


@dataclass
class PlayerConfig:
    mode: str = "external"          # bandit: "external" (FTRL) or "swap" (FTRL_swap)
    c: float = 1.0
    bonus_h_power: int = 3
    eta_horizon: int | None = None  # H inside eta_t; None means the game horizon


def nash_v_preset(c: float = 1.0) -> list[PlayerConfig]:
    """Two-sided Nash V-learning: bonus c sqrt(H^4 A iota / t), eta_t = sqrt(log A / (A t))."""
    return [PlayerConfig("external", c, 4, 1), PlayerConfig("external", c, 4, 1)]


@dataclass
class TrainConfig:
    K: int
    seed: int = 0
    players: list[PlayerConfig] | None = None   # None: PlayerConfig(mode, c) for everyone
    mode: str = "external"
    c: float = 1.0
    delta: float = 0.1
    monotone: bool = False
    pessimistic: bool = False                   # track lower estimates and the gap trace
    checkpoints: tuple[int, ...] = ()
    update_rule: str = "V"                      # what counts as an update for monotone cuts

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.update_rule not in ("V", "Vtilde"):
            raise ValueError("update_rule must be 'V' or 'Vtilde'")
        self.checkpoints = tuple(sorted({int(k) for k in self.checkpoints if 1 <= k <= self.K}))

    def player_configs(self, m: int) -> list[PlayerConfig]:
        if self.players is not None:
            if len(self.players) != m:
                raise ValueError(f"need {m} player configs, got {len(self.players)}")
            return list(self.players)
        return [PlayerConfig(self.mode, self.c) for _ in range(m)]


class VLearner:
    """One agent's V-learning state: V, V~, N, bandits, optional pessimistic tables."""

    def __init__(self, player: int, H: int, S: int, A: int, iota: float, cfg: PlayerConfig,
                 K: int, monotone: bool = False, pessimistic: bool = False):
        self.player, self.H, self.S, self.A = player, H, S, A
        self.iota = iota
        self.cfg = cfg
        self.monotone = monotone
        self.pessimistic = pessimistic
        cap = H - np.arange(H, dtype=float)               # H + 1 - h for 1-based h
        self.cap = cap
        self.V = np.repeat(cap[:, None], S, axis=1)       # truncated optimistic value
        self.Vt = self.V.copy()                           # untruncated
        self.N = np.zeros((H, S), dtype=np.int64)
        self.V_low = np.zeros((H, S)) if pessimistic else None
        self.Vt_low = np.zeros((H, S)) if pessimistic else None
        # visit number and episode of the last strict decrease of V (resp. of V~)
        self.last_dec = np.zeros((H, S), dtype=np.int64)
        self.last_dec_tilde = np.zeros((H, S), dtype=np.int64)
        eta = None
        if cfg.eta_horizon is not None:
            scale = cfg.eta_horizon * math.log(A) / (1 if cfg.mode == "swap" else A)
            eta = lambda t: np.sqrt(scale / np.asarray(t, dtype=float))  # noqa: E731
        self.bandit = make_bandit(cfg.mode, A, H, n=H * S, eta=eta)
        self._beta = bonus_beta(np.arange(1, K + 1), A, H, iota, cfg.c, cfg.mode,
                                cfg.bonus_h_power) if K else np.zeros(0)

    def beta(self, t: int) -> float:
        if t <= self._beta.size:
            return float(self._beta[t - 1])
        return bonus_beta(t, self.A, self.H, self.iota, self.cfg.c, self.cfg.mode,
                          self.cfg.bonus_h_power)

    def policy(self, h: int, s: int) -> np.ndarray:
        return self.bandit.theta[h * self.S + s]

    def next_value(self, h: int, s_next: int, table=None) -> float:
        table = self.V if table is None else table
        return 0.0 if h + 1 >= self.H else float(table[h + 1, s_next])

    def step(self, h: int, s: int, a: int, r: float, s_next: int) -> float:
        """Incorporate one transition seen at step h; returns the bandit loss fed."""
        H = self.H
        t = int(self.N[h, s]) + 1
        self.N[h, s] = t
        alpha = (H + 1.0) / (H + t)
        beta = self.beta(t)
        v_next = self.next_value(h, s_next)
        old_vt = self.Vt[h, s]
        new_vt = (1.0 - alpha) * old_vt + alpha * (r + v_next + beta)
        self.Vt[h, s] = new_vt
        old_v = self.V[h, s]
        new_v = min(self.cap[h], new_vt)
        if self.monotone:
            new_v = min(new_v, old_v)
        if new_v < old_v:
            self.last_dec[h, s] = t
        if new_vt < old_vt:
            self.last_dec_tilde[h, s] = t
        self.V[h, s] = new_v
        if self.pessimistic:
            lo_next = self.next_value(h, s_next, self.V_low)
            vt_low = (1.0 - alpha) * self.Vt_low[h, s] + alpha * (r + lo_next - beta)
            self.Vt_low[h, s] = vt_low
            self.V_low[h, s] = max(0.0, vt_low)
        loss = (H - r - v_next) / H
        if not -1e-12 <= loss <= 1.0 + 1e-12:
            raise FloatingPointError(f"bandit loss {loss} outside [0,1]: value tables corrupted")
        self.bandit.update(h * self.S + s, a, min(max(loss, 0.0), 1.0))
        return loss

    def cut_counts(self, rule: str = "V") -> np.ndarray:
        return (self.last_dec if rule == "V" else self.last_dec_tilde).copy()


@dataclass
class TrainDiagnostics:
    rows: list[dict] = field(default_factory=list)
    visits: list[np.ndarray] = field(default_factory=list)   # per player N tables at the end

    def to_csv_rows(self):
        cols = ("episode", "player", "optimism_violations", "gap_trace", "wallclock_ms")
        return cols, [[r[c] for c in cols] for r in self.rows]


@dataclass
class TrainResult:
    log: CertifiedPolicyLog
    diagnostics: TrainDiagnostics
    learners: list[VLearner]
    iota: float
    cuts: dict = field(default_factory=dict)     # checkpoint -> per-player cut-count tables

    def player_logs(self) -> list[CertifiedPolicyLog]:
        """Split into the per-agent logs each learner would store on its own."""
        return [CertifiedPolicyLog(V_STYLE, self.log.K, (self.log.action_counts[j],),
                                   [self.log.players[j]], self.log.seed, self.log.H)
                for j in range(len(self.log.players))]


def train(game: MarkovGame, config: TrainConfig, reference_values=None,
          opponents=None) -> TrainResult:
    """Run K episodes of V-learning for every player.

    ``reference_values[j]`` (an (H, S) array, e.g. V* of a zero-sum game) enables the
    optimism-violation counts at checkpoints. ``opponents`` maps a player index to a
    callable ``(k, h, s) -> action`` that replaces that player's learner; its log
    entries are one-hot records of the actions it played.
    """
    H, S, m = game.horizon, game.num_states, game.num_players
    A = game.action_counts
    iota = compute_iota(game, config.K, config.delta)
    pcfgs = config.player_configs(m)
    opponents = opponents or {}
    learners = [VLearner(j, H, S, A[j], iota, pcfgs[j], config.K, config.monotone,
                         config.pessimistic) for j in range(m)]
    builders = [VisitLogBuilder(H, S, A[j]) for j in range(m)]
    root = RngStream(config.seed)
    env = root.substream("env")
    agent_rng = [root.substream(f"agent/{j}") for j in range(m)]
    strides = np.array([int(np.prod(A[j + 1:])) for j in range(m)])
    P = game.transitions
    R = game.rewards
    diag = TrainDiagnostics()
    gap_trace = np.zeros(m)
    checkpoints = set(config.checkpoints)
    cuts: dict[int, list[np.ndarray]] = {}
    t0 = time.perf_counter()

    for k in range(1, config.K + 1):
        s = game.initial_state
        if config.pessimistic:
            for j, ln in enumerate(learners):
                gap_trace[j] += ln.V[0, s] - ln.V_low[0, s]
        for h in range(H):
            acts = []
            for j in range(m):
                if j in opponents:
                    # a scripted player's "snapshot" is the action it played
                    b = int(opponents[j](k, h, s))
                    builders[j].record(h, s, k, np.eye(A[j])[b])
                    acts.append(b)
                    continue
                pol = learners[j].policy(h, s)
                builders[j].record(h, s, k, pol)
                acts.append(sample_categorical(pol, agent_rng[j].random()))
            ja = int(strides @ acts)
            s_next = sample_categorical(P[h, s, ja], env.random())
            for j in range(m):
                if j not in opponents:
                    learners[j].step(h, s, acts[j], float(R[j, h, s, ja]), s_next)
            s = s_next
        if k in checkpoints:
            if config.monotone:
                cuts[k] = [ln.cut_counts(config.update_rule) for ln in learners]
            ms = (time.perf_counter() - t0) * 1000.0
            for j, ln in enumerate(learners):
                viol = -1
                if reference_values is not None and reference_values[j] is not None:
                    viol = int(np.sum(ln.V < np.asarray(reference_values[j]) - 1e-12))
                diag.rows.append({"episode": k, "player": j, "optimism_violations": viol,
                                  "gap_trace": float(gap_trace[j]) if config.pessimistic else -1.0,
                                  "wallclock_ms": round(ms, 3)})
    diag.visits = [ln.N.copy() for ln in learners]
    logs = [builders[j].build(final=learners[j].bandit.theta.reshape(H, S, A[j]).copy())
            for j in range(m)]
    log = CertifiedPolicyLog(V_STYLE, config.K, A, logs, config.seed, H)
    if config.monotone:
        cuts[config.K] = [ln.cut_counts(config.update_rule) for ln in learners]
    return TrainResult(log, diag, learners, iota, cuts)
