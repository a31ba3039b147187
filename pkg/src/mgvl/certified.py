"""Visit logs and the certified output policies built from them.

A visit log keeps, for every (h, s), the episodes in which the state was visited at
step h together with the policy in force at the start of each of those episodes.
From it we can execute the nested-mixture output policy (state-indexed chain for
V-learning, (s, a, b)-indexed chain for Nash Q-learning) or, after monotone
training, read off a Markov policy.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .game import MarkovGame, MarkovPolicy, RngStream, Trajectory, sample_categorical

V_STYLE = "v"
Q_STYLE = "q"


class LogError(ValueError):
    pass


# --- alpha-weighted index sampling --------------------------------------------

def alpha_cdf(I, t: int, H: int) -> float:
    """P(i <= I) under i ~ alpha_t^i, i.e. prod_{j=I+1..t} (1 - alpha_j) for 1 <= I <= t."""
    if I >= t:
        return 1.0
    if I <= 0:
        return 0.0
    # prod_{j=I+1..t} (j-1)/(H+j) = Gamma(t) Gamma(H+I+1) / (Gamma(I) Gamma(H+t+1))
    return math.exp(math.lgamma(t) - math.lgamma(I) + math.lgamma(H + I + 1)
                    - math.lgamma(H + t + 1))


def sample_alpha_index(t: int, H: int, u: float) -> int:
    """Draw i in {1..t} with probability alpha_t^i by inverting the CDF at ``u``."""
    lo, hi = 1, t
    while lo < hi:
        mid = (lo + hi) // 2
        if alpha_cdf(mid, t, H) > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


# --- logs --------------------------------------------------------------------------

@dataclass
class VisitLog:
    """Per (h, s): visit episodes (1-based, strictly increasing) and pre-visit policies.

    ``final`` holds the policy after the last update of each (h, s); it is what is in
    force at the start of any episode later than every logged visit.
    """

    H: int
    S: int
    A: int
    episodes: list[list[np.ndarray]]
    policies: list[list[np.ndarray]]
    final: np.ndarray | None = None

    def count_before(self, h: int, s: int, k: int) -> int:
        """N_h^k(s): visits to (h, s) in episodes strictly before k."""
        return int(np.searchsorted(self.episodes[h][s], k, side="left"))

    def policy_at(self, h: int, s: int, k: int) -> np.ndarray:
        """Policy in force at (h, s) at the beginning of episode k."""
        t = self.count_before(h, s, k)
        pol = self.policies[h][s]
        if t < len(pol):
            return pol[t]
        if self.final is not None:
            return self.final[h, s]
        if t == 0:
            return np.full(self.A, 1.0 / self.A)
        raise LogError("policy after the last visit is not stored")

    def num_entries(self) -> int:
        return sum(e.size * (1 + self.A) for row in self.episodes for e in row)

    def validate(self):
        for h in range(self.H):
            for s in range(self.S):
                e = self.episodes[h][s]
                p = self.policies[h][s]
                if e.size and np.any(np.diff(e) <= 0):
                    raise LogError(f"episode indices not increasing at (h={h}, s={s})")
                if p.shape != (e.size, self.A):
                    raise LogError(f"snapshot table shape mismatch at (h={h}, s={s})")
                if p.size and (np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1) > 1e-9)):
                    raise LogError(f"invalid snapshot distribution at (h={h}, s={s})")

    def __eq__(self, other):
        if not isinstance(other, VisitLog):
            return NotImplemented
        same = (self.H, self.S, self.A) == (other.H, other.S, other.A)
        same = same and all(np.array_equal(a, b) for ra, rb in zip(self.episodes, other.episodes)
                            for a, b in zip(ra, rb))
        same = same and all(np.array_equal(a, b) for ra, rb in zip(self.policies, other.policies)
                            for a, b in zip(ra, rb))
        if (self.final is None) != (other.final is None):
            return False
        return same and (self.final is None or np.array_equal(self.final, other.final))


class VisitLogBuilder:
    def __init__(self, H: int, S: int, A: int):
        self.H, self.S, self.A = H, S, A
        self._ep = [[[] for _ in range(S)] for _ in range(H)]
        self._pol = [[[] for _ in range(S)] for _ in range(H)]

    def record(self, h: int, s: int, k: int, policy):
        self._ep[h][s].append(k)
        self._pol[h][s].append(np.array(policy, dtype=float))

    def build(self, final=None) -> VisitLog:
        eps = [[np.array(self._ep[h][s], dtype=np.int64) for s in range(self.S)]
               for h in range(self.H)]
        pols = [[np.array(self._pol[h][s], dtype=float).reshape(-1, self.A)
                 for s in range(self.S)] for h in range(self.H)]
        return VisitLog(self.H, self.S, self.A, eps, pols,
                        None if final is None else np.array(final, dtype=float))


@dataclass
class CertifiedPolicyLog:
    """All players' visit logs plus what is needed to run the output policy.

    V-style: ``players[j]`` holds player j's own snapshots; every player sees the same
    state sequence so the episode lists coincide. Q-style: ``players`` has a single
    joint-policy log (A = n * m) and ``sab_episodes[h][s][joint]`` lists the episodes
    where (s, a, b) was played at step h.
    """

    variant: str
    K: int
    action_counts: tuple[int, ...]
    players: list[VisitLog]
    seed: int = 0
    H: int = 0
    sab_episodes: list | None = None

    def __post_init__(self):
        self.action_counts = tuple(int(a) for a in self.action_counts)
        if not self.H and self.players:
            self.H = self.players[0].H

    @property
    def S(self) -> int:
        return self.players[0].S

    def validate(self):
        if self.variant not in (V_STYLE, Q_STYLE):
            raise LogError(f"unknown variant {self.variant!r}")
        for log in self.players:
            log.validate()
        if self.variant == V_STYLE:
            first = self.players[0].episodes
            for log in self.players[1:]:
                if any(not np.array_equal(a, b) for ra, rb in zip(first, log.episodes)
                       for a, b in zip(ra, rb)):
                    raise LogError("players' visit lists disagree")
        elif self.sab_episodes is None:
            raise LogError("Q-style log without (s,a,b) visit lists")

    def __eq__(self, other):
        if not isinstance(other, CertifiedPolicyLog):
            return NotImplemented
        if (self.variant, self.K, self.action_counts, self.seed, self.H) != (
                other.variant, other.K, other.action_counts, other.seed, other.H):
            return False
        if self.players != other.players:
            return False
        if (self.sab_episodes is None) != (other.sab_episodes is None):
            return False
        if self.sab_episodes is None:
            return True
        return all(np.array_equal(x, y)
                   for ra, rb in zip(self.sab_episodes, other.sab_episodes)
                   for ca, cb in zip(ra, rb) for x, y in zip(ca, cb))


def check_same_K(logs: list[CertifiedPolicyLog]) -> int:
    Ks = {lg.K for lg in logs}
    if len(Ks) != 1:
        raise LogError(f"mismatched K across players: {sorted(Ks)}")
    return Ks.pop()


def merge_player_logs(logs: list[CertifiedPolicyLog]) -> CertifiedPolicyLog:
    """Combine single-player V-style logs (as each agent stores them) into one."""
    K = check_same_K(logs)
    players = [p for lg in logs for p in lg.players]
    counts = tuple(a for lg in logs for a in lg.action_counts)
    merged = CertifiedPolicyLog(V_STYLE, K, counts, players, logs[0].seed, logs[0].H)
    merged.validate()
    return merged


def truncate_log(log: CertifiedPolicyLog, k: int) -> CertifiedPolicyLog:
    """The log a run would have produced had it stopped after episode ``k``.

    The policy in force after the prefix is the snapshot taken at the next logged
    visit (policies change only at visits), or the stored final policy.
    """
    if not 1 <= k <= log.K:
        raise LogError(f"checkpoint {k} outside [1, {log.K}]")
    players = []
    for vl in log.players:
        eps, pols = [], []
        final = np.zeros((vl.H, vl.S, vl.A))
        for h in range(vl.H):
            er, pr = [], []
            for s in range(vl.S):
                n = int(np.searchsorted(vl.episodes[h][s], k, side="right"))
                er.append(vl.episodes[h][s][:n].copy())
                pr.append(vl.policies[h][s][:n].copy())
                if n < vl.episodes[h][s].size:
                    final[h, s] = vl.policies[h][s][n]
                elif vl.final is not None:
                    final[h, s] = vl.final[h, s]
                else:
                    final[h, s] = 1.0 / vl.A
            eps.append(er)
            pols.append(pr)
        players.append(VisitLog(vl.H, vl.S, vl.A, eps, pols, final))
    sab = None
    if log.sab_episodes is not None:
        sab = [[[e[: int(np.searchsorted(e, k, side="right"))].copy() for e in col]
                for col in row] for row in log.sab_episodes]
    return CertifiedPolicyLog(log.variant, k, log.action_counts, players, log.seed, log.H, sab)


# --- execution ---------------------------------------------------------------------------

def sample_next_index(episodes: np.ndarray, k: int, H: int, u: float):
    """Resample the chain index at one (h, s).

    Returns (k', i) with i 1-based, or None when the state had no visits before k.
    """
    t = int(np.searchsorted(episodes, k, side="left"))
    if t == 0:
        return None
    i = sample_alpha_index(t, H, u)
    return int(episodes[i - 1]), i


class CertifiedAgent:
    """One player's side of the output policy.

    Every agent builds its index stream from the same shared seed, so the sampled
    chain indices agree across agents without communication during play.
    """

    def __init__(self, log: CertifiedPolicyLog, player: int, seed: int):
        self.log = log
        self.player = player
        root = RngStream(seed)
        self.omega = root.substream("omega")
        self.own = root.substream(f"act/{player}")
        self.k = None
        self.trace: list[int | None] = []

    def start(self):
        self.k = int(self.omega.integers(1, self.log.K + 1))
        self.trace = []

    def act(self, h: int, s: int) -> int:
        lg = self.log
        if lg.variant == V_STYLE:
            vl = lg.players[self.player]
            res = sample_next_index(vl.episodes[h][s], self.k, lg.H, self.omega.random())
            if res is None:
                self.trace.append(None)
                return int(self.own.integers(0, vl.A))
            self.k, i = res
            self.trace.append(i)
            return self.own.categorical(vl.policies[h][s][i - 1])
        joint = lg.players[0].policy_at(h, s, self.k).reshape(lg.action_counts)
        marg = joint.sum(axis=1) if self.player == 0 else joint.sum(axis=0)
        return self.own.categorical(marg)

    def observe(self, h: int, s: int, actions):
        """Q-style chains resample after seeing the joint action."""
        if self.log.variant != Q_STYLE:
            return
        j = int(np.ravel_multi_index(tuple(actions), self.log.action_counts))
        res = sample_next_index(self.log.sab_episodes[h][s][j], self.k, self.log.H,
                                self.omega.random())
        if res is None:
            self.trace.append(None)
        else:
            self.k, i = res
            self.trace.append(i)


def execute_certified(logs: CertifiedPolicyLog, game: MarkovGame, seed: int,
                      episode: int = 0, agents: list[CertifiedAgent] | None = None) -> Trajectory:
    """Play one episode of the certified joint policy with shared seed ``seed``."""
    if agents is None:
        agents = [CertifiedAgent(logs, j, seed) for j in range(game.num_players)]
    env = RngStream(seed).substream("env")
    for ag in agents:
        ag.start()
    s = game.initial_state
    traj = Trajectory(episode, [s])
    for h in range(game.horizon):
        a = tuple(ag.act(h, s) for ag in agents)
        j = game.joint_index(a)
        r = tuple(float(x) for x in game.rewards[:, h, s, j])
        for ag in agents:
            ag.observe(h, s, a)
        s = sample_categorical(game.transitions[h, s, j], env.random())
        traj.actions.append(a)
        traj.rewards.append(r)
        traj.states.append(s)
    return traj


class CertifiedRunner:
    """Repeated executions sharing persistent streams (for Monte-Carlo estimates)."""

    def __init__(self, logs: CertifiedPolicyLog, game: MarkovGame, seed: int):
        self.logs, self.game = logs, game
        self.agents = [CertifiedAgent(logs, j, seed) for j in range(game.num_players)]
        self.env = RngStream(seed).substream("env")

    def episode(self, n: int = 0) -> Trajectory:
        game = self.game
        for ag in self.agents:
            ag.start()
        s = game.initial_state
        traj = Trajectory(n, [s])
        for h in range(game.horizon):
            a = tuple(ag.act(h, s) for ag in self.agents)
            j = game.joint_index(a)
            for ag in self.agents:
                ag.observe(h, s, a)
            traj.actions.append(a)
            traj.rewards.append(tuple(float(x) for x in game.rewards[:, h, s, j]))
            s = sample_categorical(game.transitions[h, s, j], self.env.random())
            traj.states.append(s)
        return traj


# --- monotone Markov output ---------------------------------------------------------------

@dataclass
class MonotoneMarkovPolicy:
    policy: MarkovPolicy
    cuts: list[np.ndarray] = field(default_factory=list)   # per player (H, S) cut index used


def mixture_at_cut(log: VisitLog, h: int, s: int, t_cut: int) -> np.ndarray:
    from .bandit import alpha_weights

    if t_cut <= 0:
        return np.full(log.A, 1.0 / log.A)
    w = alpha_weights(t_cut, log.H)
    return w @ log.policies[h][s][:t_cut]


def extract_monotone_markov(logs: CertifiedPolicyLog, last_update_counts) -> MonotoneMarkovPolicy:
    """Markov product policy from two monotone V-learners.

    ``last_update_counts[j][h, s]`` is the visit number at which player j's V_h(s)
    last strictly decreased (0 if it never did). Player 0 mixes its first t_2
    snapshots with weights alpha_{t_2}^i where t_2 comes from player 1, and vice versa.
    """
    if last_update_counts is None or len(last_update_counts) != 2:
        raise LogError("monotone provenance for both players is required")
    if logs.variant != V_STYLE or len(logs.players) != 2:
        raise LogError("monotone extraction needs a two-player V-style log")
    probs, cuts = [], []
    for j in range(2):
        other = np.asarray(last_update_counts[1 - j])
        vl = logs.players[j]
        P = np.zeros((vl.H, vl.S, vl.A))
        cut = np.zeros((vl.H, vl.S), dtype=np.int64)
        for h in range(vl.H):
            for s in range(vl.S):
                n = vl.episodes[h][s].size
                c = int(other[h, s])
                if c <= 0:
                    c = n
                cut[h, s] = min(c, n)
                P[h, s] = mixture_at_cut(vl, h, s, int(cut[h, s]))
        probs.append(P)
        cuts.append(cut)
    return MonotoneMarkovPolicy(MarkovPolicy(probs), cuts)


# --- serialization ---------------------------------------------------------------------------

def log_to_dict(log: CertifiedPolicyLog) -> dict:
    def visitlog(vl: VisitLog):
        tables = []
        for h in range(vl.H):
            for s in range(vl.S):
                tables.append({"h": h, "s": s, "visits": [
                    {"k": int(k), "policy": p.tolist()}
                    for k, p in zip(vl.episodes[h][s], vl.policies[h][s])]})
        d = {"A": vl.A, "tables": tables}
        if vl.final is not None:
            d["final"] = vl.final.tolist()
        return d

    doc = {"variant": log.variant, "K": log.K, "H": log.H, "S": log.S,
           "action_counts": list(log.action_counts), "seed": log.seed,
           "players": [visitlog(vl) for vl in log.players]}
    if log.sab_episodes is not None:
        doc["sab"] = [[[e.tolist() for e in col] for col in row] for row in log.sab_episodes]
    return doc


def log_from_dict(doc: dict) -> CertifiedPolicyLog:
    try:
        H, S = int(doc["H"]), int(doc["S"])
        players = []
        for pd in doc["players"]:
            A = int(pd["A"])
            b = VisitLogBuilder(H, S, A)
            for tab in pd["tables"]:
                for v in tab["visits"]:
                    b.record(int(tab["h"]), int(tab["s"]), int(v["k"]), v["policy"])
            players.append(b.build(pd.get("final")))
        sab = None
        if "sab" in doc:
            sab = [[[np.array(e, dtype=np.int64) for e in col] for col in row]
                   for row in doc["sab"]]
        log = CertifiedPolicyLog(doc["variant"], int(doc["K"]), tuple(doc["action_counts"]),
                                 players, int(doc.get("seed", 0)), H, sab)
    except (KeyError, TypeError, ValueError) as exc:
        raise LogError(f"corrupt log document: {exc}") from None
    log.validate()
    return log


def dumps_log(log: CertifiedPolicyLog) -> str:
    return json.dumps(log_to_dict(log))


def loads_log(text: str) -> CertifiedPolicyLog:
    try:
        return log_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise LogError(f"corrupt log document: {exc}") from None


# Binary container:
#   b"MGVL" | u32 version | u32 header length | header (UTF-8 JSON) | blocks
# each block is u64 byte length followed by a little-endian array; the header's
# "arrays" list gives (name, dtype, shape) for every block, in order.
MAGIC = b"MGVL"
VERSION = 1


def _flatten_arrays(log: CertifiedPolicyLog):
    arrays = []
    for j, vl in enumerate(log.players):
        for h in range(vl.H):
            for s in range(vl.S):
                arrays.append((f"p{j}/ep/{h}/{s}", vl.episodes[h][s]))
                arrays.append((f"p{j}/pol/{h}/{s}", vl.policies[h][s]))
        if vl.final is not None:
            arrays.append((f"p{j}/final", vl.final))
    if log.sab_episodes is not None:
        for h, row in enumerate(log.sab_episodes):
            for s, col in enumerate(row):
                for a, e in enumerate(col):
                    arrays.append((f"sab/{h}/{s}/{a}", e))
    return arrays


def dump_log_binary(log: CertifiedPolicyLog) -> bytes:
    arrays = _flatten_arrays(log)
    header = {"variant": log.variant, "K": log.K, "H": log.H, "S": log.S,
              "action_counts": list(log.action_counts), "seed": log.seed,
              "player_A": [vl.A for vl in log.players],
              "has_final": [vl.final is not None for vl in log.players],
              "has_sab": log.sab_episodes is not None,
              "arrays": [[name, "<i8" if arr.dtype.kind == "i" else "<f8", list(arr.shape)]
                         for name, arr in arrays]}
    hb = json.dumps(header).encode()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", VERSION, len(hb)))
    out.write(hb)
    for (_, arr), (_, dt, _) in zip(arrays, header["arrays"]):
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        out.write(struct.pack("<Q", len(raw)))
        out.write(raw)
    return out.getvalue()


def load_log_binary(data: bytes) -> CertifiedPolicyLog:
    if data[:4] != MAGIC:
        raise LogError("not a binary policy log")
    try:
        version, hlen = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise LogError(f"unsupported log version {version}")
        pos = 12
        header = json.loads(data[pos: pos + hlen])
        pos += hlen
        arrays = {}
        for name, dt, shape in header["arrays"]:
            (n,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            arr = np.frombuffer(data[pos: pos + n], dtype=dt).reshape(shape)
            if arr.nbytes != n:
                raise LogError("truncated block")
            arrays[name] = arr.astype(np.int64 if dt == "<i8" else float)
            pos += n
        H, S = header["H"], header["S"]
        players = []
        for j, A in enumerate(header["player_A"]):
            eps = [[arrays[f"p{j}/ep/{h}/{s}"] for s in range(S)] for h in range(H)]
            pols = [[arrays[f"p{j}/pol/{h}/{s}"].reshape(-1, A) for s in range(S)]
                    for h in range(H)]
            final = arrays.get(f"p{j}/final") if header["has_final"][j] else None
            players.append(VisitLog(H, S, A, eps, pols, final))
        sab = None
        if header["has_sab"]:
            J = int(np.prod(header["action_counts"]))
            sab = [[[arrays[f"sab/{h}/{s}/{a}"] for a in range(J)] for s in range(S)]
                   for h in range(H)]
        log = CertifiedPolicyLog(header["variant"], header["K"], tuple(header["action_counts"]),
                                 players, header["seed"], H, sab)
    except (struct.error, KeyError, ValueError) as exc:
        raise LogError(f"corrupt binary log: {exc}") from None
    log.validate()
    return log
