"""Exact evaluation oracles: Nash values, best responses, certified gap bounds, Monte Carlo.

The certified-gap dynamic program runs over augmented states (h, chain index k, s).
For state-indexed (V-style) chains the value at (h, s) depends on k only through the
number t of visits to (h, s) before k, so tables are indexed by t and built with the
same alpha-weighted recursion the learner uses. For (s, a, b)-indexed (Q-style)
chains the tables are indexed by k directly and vectorized over k.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .certified import Q_STYLE, V_STYLE, CertifiedPolicyLog, CertifiedRunner
from .game import MarkovGame, MarkovPolicy, RngStream, rollout, sample_categorical
from .linprog import solve_matrix_game

MODES = ("best_response", "strategy_mod", "on_policy")
UNVISITED = ("optimistic", "execute")


class EvalError(RuntimeError):
    pass


# --- Markov policies -----------------------------------------------------------------

@dataclass
class NashTables:
    V: np.ndarray            # (H+1, S), V[H] = 0
    Q: np.ndarray            # (H, S, A, B)
    x: np.ndarray            # (H, S, A) max-player equilibrium strategy
    y: np.ndarray            # (H, S, B)
    duality_gap: float = 0.0

    def policy(self) -> MarkovPolicy:
        return MarkovPolicy([self.x, self.y])


def nash_values_zero_sum(game: MarkovGame) -> NashTables:
    """Backward induction with a matrix-game solve at every (h, s)."""
    if not game.zero_sum or game.num_players != 2:
        raise EvalError("Nash values need a two-player zero-sum game")
    H, S = game.horizon, game.num_states
    A, B = game.action_counts
    P = game.transition_tensor()
    R = game.reward_tensor(0)
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A, B))
    x = np.zeros((H, S, A))
    y = np.zeros((H, S, B))
    worst = 0.0
    for h in range(H - 1, -1, -1):
        Q[h] = R[h] + P[h] @ V[h + 1]
        for s in range(S):
            sol = solve_matrix_game(Q[h, s])
            V[h, s] = sol.value
            x[h, s], y[h, s] = sol.x, sol.y
            worst = max(worst, sol.duality_gap)
    return NashTables(V, Q, x, y, worst)


def policy_values(game: MarkovGame, policy: MarkovPolicy) -> np.ndarray:
    """V^pi for every player: array (m, H+1, S)."""
    H, S, m = game.horizon, game.num_states, game.num_players
    V = np.zeros((m, H + 1, S))
    for h in range(H - 1, -1, -1):
        for s in range(S):
            pj = policy.joint(h, s)
            cont = game.transitions[h, s] @ V[:, h + 1].T      # (J, m)
            V[:, h, s] = pj @ (game.rewards[:, h, s].T + cont)
    return V


def state_visitation(game: MarkovGame, policy: MarkovPolicy) -> np.ndarray:
    """Marginal distribution of s_h under ``policy``: (H, S)."""
    H, S = game.horizon, game.num_states
    d = np.zeros((H, S))
    d[0, game.initial_state] = 1.0
    for h in range(H - 1):
        for s in range(S):
            if d[h, s]:
                d[h + 1] += d[h, s] * (policy.joint(h, s) @ game.transitions[h, s])
    return d


def _other_weighted(game, h, s, i, dists, values_next):
    """Per own action a_i: E_{a_-i ~ dists}[r_i + P V_next] at (h, s)."""
    A = game.action_counts
    q = game.rewards[i, h, s] + game.transitions[h, s] @ values_next   # (J,)
    T = q.reshape(A)
    T = np.moveaxis(T, i, 0)
    others = [dists[p] for p in range(len(A)) if p != i]
    for d in reversed(others):
        T = T @ d
    return T


@dataclass
class BestResponse:
    values: np.ndarray        # (H+1, S) best-response value of player i
    actions: np.ndarray       # (H, S) deterministic best action (lowest index on ties)
    player: int

    def value(self, s: int) -> float:
        return float(self.values[0, s])

    def policy(self, game: MarkovGame) -> np.ndarray:
        return np.eye(game.action_counts[self.player])[self.actions]


def best_response_markov(game: MarkovGame, policy: MarkovPolicy, i: int) -> BestResponse:
    """Exact best response of player i to the other players' Markov policies."""
    H, S = game.horizon, game.num_states
    V = np.zeros((H + 1, S))
    act = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        for s in range(S):
            dists = [p[h, s] for p in policy.probs]
            g = _other_weighted(game, h, s, i, dists, V[h + 1])
            act[h, s] = int(np.argmax(g))
            V[h, s] = g[act[h, s]]
    return BestResponse(V, act, i)


def strategy_mod_markov(game: MarkovGame, joint_probs, i: int) -> np.ndarray:
    """Best strategy-modification value of player i under a Markov joint policy.

    ``joint_probs[h][s]`` is a distribution over flattened joint actions. At every
    (h, s) the recommended a_i may be remapped to the best response to the
    conditional distribution of the others' actions. Returns (H+1, S).
    """
    H, S = game.horizon, game.num_states
    A = game.action_counts
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        for s in range(S):
            pj = np.moveaxis(np.asarray(joint_probs[h][s]).reshape(A), i, 0).reshape(A[i], -1)
            q = game.rewards[i, h, s] + game.transitions[h, s] @ V[h + 1]
            Qm = np.moveaxis(q.reshape(A), i, 0).reshape(A[i], -1)      # (a', a_-i)
            # sum_{a_i} max_{a'} sum_{a_-i} pi(a_i, a_-i) Q(a', a_-i)
            V[h, s] = float((pj @ Qm.T).max(axis=1).sum())
    return V


def nash_gap_markov(game: MarkovGame, policy: MarkovPolicy) -> np.ndarray:
    """Per-player best-response improvement at s_1 for a product Markov policy."""
    if len(policy.probs) != game.num_players:
        raise EvalError("need one Markov policy per player (product form)")
    V = policy_values(game, policy)
    s1 = game.initial_state
    return np.array([best_response_markov(game, policy, i).value(s1) - V[i, 0, s1]
                     for i in range(game.num_players)])


# --- certified (nested-mixture) policies ----------------------------------------------

@dataclass
class GapReport:
    player: int
    mode: str
    K: int
    on_policy: float
    upper_bound: float
    gap: float
    exact: bool = True
    stderr: float = 0.0
    unvisited: str = "optimistic"

    def to_dict(self) -> dict:
        return {"player": self.player, "mode": self.mode, "K": self.K,
                "on_policy": self.on_policy, "upper_bound": self.upper_bound, "gap": self.gap,
                "exact_or_mc": "exact" if self.exact else "mc", "stderr": self.stderr,
                "unvisited": self.unvisited}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    CSV_COLUMNS = ("player", "mode", "K", "on_policy", "upper_bound", "gap", "exact_or_mc",
                   "stderr")

    def csv_row(self) -> list:
        d = self.to_dict()
        return [d[c] for c in self.CSV_COLUMNS]


def _log_prod_tail(H, N):
    """log P_t for t = 1..N, where P_t = prod_{l=2..t} (1 - alpha_l)."""
    l = np.arange(2, N + 1, dtype=float)
    out = np.zeros(N)
    if N > 1:
        out[1:] = np.cumsum(np.log((l - 1.0) / (H + l)))
    return out


def weighted_prefix_average(g: np.ndarray, H: int) -> np.ndarray:
    """Rows t = 1..N of sum_{j<=t} alpha_t^j g_j for g of shape (N, ...)."""
    N = g.shape[0]
    if N == 0:
        return g.copy()
    logP = _log_prod_tail(H, N)
    alpha = (H + 1.0) / (H + np.arange(1, N + 1, dtype=float))
    if -logP[-1] < 600.0:
        # alpha_t^j = alpha_j P_t / P_j
        scale = (alpha * np.exp(-logP)).reshape((N,) + (1,) * (g.ndim - 1))
        P = np.exp(logP).reshape(scale.shape)
        return P * np.cumsum(scale * g, axis=0)
    out = np.empty_like(g, dtype=float)
    acc = np.zeros(g.shape[1:])
    for t in range(N):
        acc = (1.0 - alpha[t]) * acc + alpha[t] * g[t]
        out[t] = acc
    return out


def suffix_alpha_mass(M: np.ndarray, H: int) -> np.ndarray:
    """w_j = sum_{t>=j} M_t alpha_t^j for j = 1..N, given masses M_t (t = 1..N)."""
    N = M.shape[0]
    if N == 0:
        return M.copy()
    logP = _log_prod_tail(H, N)
    alpha = (H + 1.0) / (H + np.arange(1, N + 1, dtype=float))
    if -logP[-1] < 600.0:
        suffix = np.cumsum((M * np.exp(logP))[::-1])[::-1]
        return alpha * np.exp(-logP) * suffix
    w = np.zeros(N)
    for t in range(1, N + 1):
        w[:t] += M[t - 1] * _alpha_row(t, H)
    return w


def _alpha_row(t, H):
    from .bandit import alpha_weights

    return alpha_weights(t, H)


def _as_log(logs) -> CertifiedPolicyLog:
    if isinstance(logs, CertifiedPolicyLog):
        return logs
    from .certified import merge_player_logs

    return merge_player_logs(list(logs))


class _VChainDP:
    """Backward DP for state-indexed chains (V-style logs)."""

    def __init__(self, game: MarkovGame, log: CertifiedPolicyLog, i: int, mode: str,
                 unvisited: str, memo_cap: int):
        self.game, self.log, self.i, self.mode = game, log, i, mode
        self.unvisited = unvisited if mode != "on_policy" else "execute"
        self.memo_cap = memo_cap
        self.memo: dict[tuple[int, int, int], float] = {}
        self.H = game.horizon
        self.eps = log.players[0].episodes
        self.F: list[list[np.ndarray]] = [[None] * game.num_states for _ in range(self.H + 1)]

    def W(self, h: int, s: int, k) -> np.ndarray:
        """Values at step h, state s, for chain indices k (array)."""
        k = np.atleast_1d(k)
        if h >= self.H:
            return np.zeros(k.shape)
        t = np.searchsorted(self.eps[h][s], k, side="left")
        out = self.F[h][s][t]            # index 0 is a placeholder for "no visit yet"
        zero = t == 0
        if zero.any():
            if self.unvisited == "optimistic":
                out[zero] = self.H - h
            else:
                out[zero] = [self._exec(h, s, int(kk)) for kk in k[zero]]
        return out

    def _exec(self, h: int, s: int, k: int) -> float:
        key = (h, s, k)
        v = self.memo.get(key)
        if v is not None:
            return v
        if len(self.memo) >= self.memo_cap:
            raise EvalError(f"memo cap of {self.memo_cap} augmented states exceeded")
        game = self.game
        A = game.action_counts
        nxt = np.zeros(game.num_states)
        reach = np.nonzero(game.transitions[h, s].max(axis=0) > 0)[0]
        for s2 in reach:
            nxt[s2] = self.W(h + 1, int(s2), k)[0]
        q = game.rewards[self.i, h, s] + game.transitions[h, s] @ nxt
        g = np.moveaxis(q.reshape(A), self.i, 0).reshape(A[self.i], -1).mean(axis=1)
        v = float(g.mean()) if self.mode == "on_policy" else float(g.max())
        self.memo[key] = v
        return v

    def build(self):
        game, log, i = self.game, self.log, self.i
        A = game.action_counts
        S = game.num_states
        for h in range(self.H - 1, -1, -1):
            for s in range(S):
                ep = self.eps[h][s]
                N = ep.size
                if N == 0:
                    self.F[h][s] = np.full(1, np.nan)
                    continue
                # continuation values W(h+1, s', k^j): (N, S)
                cont = np.zeros((N, S))
                reach = np.nonzero(game.transitions[h, s].max(axis=0) > 0)[0]
                for s2 in reach:
                    cont[:, s2] = self.W(h + 1, int(s2), ep)
                q = game.rewards[i, h, s][None, :] + cont @ game.transitions[h, s].T  # (N, J)
                T = q.reshape((N,) + A)
                T = np.moveaxis(T, 1 + i, 1)                                        # (N, A_i, ...)
                others = [p for p in range(len(A)) if p != i]
                for p in reversed(others):
                    pol = log.players[p].policies[h][s]                             # (N, A_p)
                    T = np.einsum("n...a,na->n...", T, pol)
                g = T                                                               # (N, A_i)
                own = log.players[i].policies[h][s]
                if self.mode == "best_response":
                    F = weighted_prefix_average(g, self.H).max(axis=1)
                elif self.mode == "strategy_mod":
                    F = weighted_prefix_average(g.max(axis=1), self.H)
                else:
                    F = weighted_prefix_average((g * own).sum(axis=1), self.H)
                self.F[h][s] = np.concatenate([[np.nan], F])
        K = log.K
        ks = np.arange(1, K + 1)
        return self.W(0, game.initial_state, ks)


class _QChainDP:
    """Backward DP for (s, a, b)-indexed chains (Q-style logs), vectorized over k."""

    def __init__(self, game: MarkovGame, log: CertifiedPolicyLog, i: int, mode: str,
                 unvisited: str):
        self.game, self.log, self.i, self.mode = game, log, i, mode
        self.unvisited = unvisited if mode != "on_policy" else "execute"

    def build(self):
        game, log, i = self.game, self.log, self.i
        H, S, K = game.horizon, game.num_states, log.K
        A, B = game.action_counts
        ks = np.arange(1, K + 1)
        jl = log.players[0]
        Wn = np.zeros((S, K))               # W(h+1, s', k) for k = 1..K
        for h in range(H - 1, -1, -1):
            W = np.zeros((S, K))
            for s in range(S):
                # joint policy in force at the start of each episode k
                t_pol = np.searchsorted(jl.episodes[h][s], ks, side="left")
                table = np.concatenate([jl.policies[h][s],
                                        jl.final[h, s][None, :] if jl.final is not None
                                        else np.full((1, A * B), 1.0 / (A * B))])
                joint = table[t_pol].reshape(K, A, B)
                mu, nu = joint.sum(2), joint.sum(1)
                val = np.zeros((K, A, B))
                for a in range(A):
                    for b in range(B):
                        j = a * B + b
                        val[:, a, b] = game.rewards[i, h, s, j]
                        pr = game.transitions[h, s, j]
                        reach = np.nonzero(pr > 0)[0]
                        if h == H - 1 or reach.size == 0:
                            continue
                        ep = log.sab_episodes[h][s][j]
                        t = np.searchsorted(ep, ks, side="left")
                        cont = np.zeros(K)
                        if ep.size:
                            D = weighted_prefix_average(Wn[reach][:, ep - 1].T, H) @ pr[reach]
                            cont = np.where(t > 0, D[np.maximum(t, 1) - 1], 0.0)
                        zero = t == 0
                        if zero.any():
                            if self.unvisited == "optimistic":
                                cont[zero] = H - h - 1
                            else:
                                cont[zero] = Wn[reach][:, zero].T @ pr[reach]
                        val[:, a, b] += cont
                if i == 0:
                    g = np.einsum("kab,kb->ka", val, nu)
                    own = mu
                else:
                    g = np.einsum("kab,ka->kb", val, mu)
                    own = nu
                if self.mode == "on_policy":
                    W[s] = (g * own).sum(1)
                else:
                    W[s] = g.max(1)
            Wn = W
        return Wn[game.initial_state]


def certified_values(game: MarkovGame, logs, i: int, mode: str = "best_response",
                     unvisited: str = "optimistic", memo_cap: int = 5_000_000) -> np.ndarray:
    """U_i(1, k, s_1) for every starting index k = 1..K."""
    log = _as_log(logs)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if unvisited not in UNVISITED:
        raise ValueError(f"unvisited must be one of {UNVISITED}")
    if log.variant == V_STYLE:
        return _VChainDP(game, log, i, mode, unvisited, memo_cap).build()
    if log.variant == Q_STYLE:
        return _QChainDP(game, log, i, mode, unvisited).build()
    raise EvalError(f"unknown log variant {log.variant!r}")


def certified_gap(game: MarkovGame, logs, i: int, mode: str = "best_response",
                  unvisited: str = "optimistic", memo_cap: int = 5_000_000) -> GapReport:
    """Upper bound on player i's deviation value for the certified policy, and its gap.

    The deviator observes the realized chain index from the next step on, so the
    reported ``upper_bound`` is never below the true deviation value.
    """
    if mode not in ("best_response", "strategy_mod"):
        raise ValueError("mode must be 'best_response' or 'strategy_mod'")
    log = _as_log(logs)
    upper = float(certified_values(game, log, i, mode, unvisited, memo_cap).mean())
    onp = float(certified_values(game, log, i, "on_policy", unvisited, memo_cap).mean())
    return GapReport(i, mode, log.K, onp, upper, upper - onp, True, 0.0, unvisited)


@dataclass
class OnPolicy:
    value: float
    visitation: np.ndarray      # (H, S)
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))  # per player, forward pass


def on_policy_value(game: MarkovGame, logs, i: int) -> OnPolicy:
    """Exact value of the executed certified policy for player i and s_h marginals."""
    log = _as_log(logs)
    v = float(certified_values(game, log, i, "on_policy").mean())
    visit, per_player = certified_visitation(game, log)
    return OnPolicy(v, visit, per_player)


def certified_visitation(game: MarkovGame, logs):
    """Forward pass over (s, k) masses: returns (H, S) state marginals and the expected
    return of every player computed from the same masses."""
    log = _as_log(logs)
    H, S, K = game.horizon, game.num_states, log.K
    A = game.action_counts
    J = game.num_joint
    mass = np.zeros((S, K))
    mass[game.initial_state] = 1.0 / K
    visit = np.zeros((H, S))
    ret = np.zeros(game.num_players)
    ks = np.arange(1, K + 1)
    for h in range(H):
        nxt = np.zeros((S, K))
        for s in range(S):
            m_s = mass[s]
            tot = m_s.sum()
            visit[h, s] = tot
            if tot == 0:
                continue
            P = game.transitions[h, s]
            if log.variant == V_STYLE:
                ep = log.players[0].episodes[h][s]
                t = np.searchsorted(ep, ks, side="left")
                zero = t == 0
                if zero.any():
                    pj = np.full(J, 1.0 / J)
                    ret += m_s[zero].sum() * (game.rewards[:, h, s] @ pj)
                    nxt[:, zero] += np.outer(pj @ P, m_s[zero])
                if ep.size:
                    M = np.bincount(t[~zero], weights=m_s[~zero], minlength=ep.size + 1)[1:]
                    w = suffix_alpha_mass(M, H)
                    joint = np.ones((ep.size, 1))
                    for p in range(len(A)):
                        joint = (joint[:, :, None] * log.players[p].policies[h][s][:, None, :]
                                 ).reshape(ep.size, -1)
                    ret += (w[:, None] * joint).sum(0) @ game.rewards[:, h, s].T
                    flow = (w[:, None] * joint) @ P            # (N, S)
                    np.add.at(nxt.T, ep - 1, flow)
            else:
                jl = log.players[0]
                t_pol = np.searchsorted(jl.episodes[h][s], ks, side="left")
                table = np.concatenate([jl.policies[h][s],
                                        jl.final[h, s][None, :] if jl.final is not None
                                        else np.full((1, J), 1.0 / J)])
                joint = table[t_pol].reshape(K, A[0], A[1])
                prod = (joint.sum(2)[:, :, None] * joint.sum(1)[:, None, :]).reshape(K, J)
                pm = prod * m_s[:, None]                       # mass on (k, joint action)
                ret += pm.sum(0) @ game.rewards[:, h, s].T
                for j in range(J):
                    mj = pm[:, j]
                    if not mj.any():
                        continue
                    ep = log.sab_episodes[h][s][j]
                    t = np.searchsorted(ep, ks, side="left")
                    zero = t == 0
                    nxt[:, zero] += np.outer(P[j], mj[zero])
                    if ep.size:
                        M = np.bincount(t[~zero], weights=mj[~zero], minlength=ep.size + 1)[1:]
                        w = suffix_alpha_mass(M, H)
                        np.add.at(nxt.T, ep - 1, np.outer(w, P[j]))
        mass = nxt
    return visit, ret


# --- Monte Carlo -------------------------------------------------------------------------

def mc_value(game: MarkovGame, policy, n: int, seed: int = 0):
    """Sample-mean returns and standard errors over ``n`` episodes.

    ``policy`` is a MarkovPolicy, a CertifiedPolicyLog, or a callable
    ``(episode, h, s, rng) -> joint action`` for anything else.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m = game.num_players
    returns = np.zeros((n, m))
    if isinstance(policy, MarkovPolicy):
        rng = RngStream(seed).substream("mc")
        for e in range(n):
            returns[e] = np.sum(rollout(game, policy, rng, e).rewards, axis=0)
    elif isinstance(policy, CertifiedPolicyLog) or isinstance(policy, (list, tuple)):
        runner = CertifiedRunner(_as_log(policy), game, seed)
        for e in range(n):
            returns[e] = np.sum(runner.episode(e).rewards, axis=0)
    else:
        rng = RngStream(seed).substream("mc")
        env = rng.substream("env")
        for e in range(n):
            s = game.initial_state
            tot = np.zeros(m)
            for h in range(game.horizon):
                a = tuple(policy(e, h, s, rng))
                j = game.joint_index(a)
                tot += game.rewards[:, h, s, j]
                s = sample_categorical(game.transitions[h, s, j], env.random())
            returns[e] = tot
    mean = returns.mean(axis=0)
    se = returns.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(m)
    return mean, se
