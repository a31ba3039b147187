"""Tabular episodic Markov games, trajectories, Markov policies and seeded randomness."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

ROW_TOL = 1e-9


class GameFormatError(ValueError):
    """Raised when a game document or in-memory game violates the model invariants."""


@dataclass(frozen=True, eq=False)
class MarkovGame:
    """An H-step Markov game with ``m`` players.

    ``transitions`` has shape (H, S, J, S) and ``rewards`` has shape (m, H, S, J),
    where J is the number of joint actions, flattened row-major with player 0 slowest.
    Steps, states and actions are 0-based everywhere in the code.
    """

    horizon: int
    num_states: int
    action_counts: tuple[int, ...]
    transitions: np.ndarray
    rewards: np.ndarray
    initial_state: int = 0
    zero_sum: bool = False
    state_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "action_counts", tuple(int(a) for a in self.action_counts))
        P = np.array(self.transitions, dtype=float)
        R = np.array(self.rewards, dtype=float)
        P, R = _validate(self.horizon, self.num_states, self.action_counts, P, R,
                         self.initial_state, self.zero_sum)
        P.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    @property
    def num_joint(self) -> int:
        return int(np.prod(self.action_counts))

    def joint_index(self, actions) -> int:
        return int(np.ravel_multi_index(tuple(actions), self.action_counts))

    def joint_actions(self, j: int) -> tuple[int, ...]:
        return tuple(int(a) for a in np.unravel_index(j, self.action_counts))

    def transition_tensor(self) -> np.ndarray:
        """Transitions as (H, S, A_1, ..., A_m, S)."""
        return self.transitions.reshape(self.horizon, self.num_states, *self.action_counts,
                                        self.num_states)

    def reward_tensor(self, player: int) -> np.ndarray:
        """Rewards of one player as (H, S, A_1, ..., A_m)."""
        return self.rewards[player].reshape(self.horizon, self.num_states, *self.action_counts)

    def __eq__(self, other):
        if not isinstance(other, MarkovGame):
            return NotImplemented
        return (self.horizon == other.horizon and self.num_states == other.num_states
                and self.action_counts == other.action_counts
                and self.initial_state == other.initial_state
                and self.zero_sum == other.zero_sum
                and np.array_equal(self.transitions, other.transitions)
                and np.array_equal(self.rewards, other.rewards))


def _validate(H, S, A, P, R, s1, zero_sum):
    if H < 1 or S < 1 or not A or min(A) < 1:
        raise GameFormatError(f"invalid dimensions H={H} S={S} players={list(A)}")
    J = int(np.prod(A))
    m = len(A)
    if P.shape != (H, S, J, S):
        raise GameFormatError(f"transitions have shape {P.shape}, expected {(H, S, J, S)}")
    if R.shape != (m, H, S, J):
        raise GameFormatError(f"rewards have shape {R.shape}, expected {(m, H, S, J)}")
    if not (0 <= s1 < S):
        raise GameFormatError(f"initial_state {s1} out of range")
    if not np.all(np.isfinite(P)) or not np.all(np.isfinite(R)):
        raise GameFormatError("non-finite entries")
    neg = np.argwhere(P < 0)
    if len(neg):
        h, s, a, _ = neg[0]
        raise GameFormatError(f"negative probability at (h={h}, s={s}, a={a})")
    sums = P.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
    if len(bad):
        h, s, a = bad[0]
        raise GameFormatError(
            f"transition row (h={h}, s={s}, a={a}) sums to {sums[h, s, a]!r}, not 1")
    # only rows off by more than rounding noise are rescaled, so parse(dump(g)) == g
    off = np.abs(sums - 1.0) > 1e-13
    if off.any():
        P = P.copy()
        P[off] = P[off] / sums[off][..., None]
    bad = np.argwhere((R < 0) | (R > 1))
    if len(bad):
        i, h, s, a = bad[0]
        raise GameFormatError(
            f"reward of player {i} at (h={h}, s={s}, a={a}) is {R[i, h, s, a]!r}, outside [0,1]")
    if zero_sum:
        if m != 2:
            raise GameFormatError("zero_sum requires exactly two players")
        bad = np.argwhere(np.abs(R[0] + R[1] - 1.0) > ROW_TOL)
        if len(bad):
            h, s, a = bad[0]
            raise GameFormatError(f"zero_sum violated at (h={h}, s={s}, a={a}): r1 + r2 != 1")
    return P, R


# --- serialization -----------------------------------------------------------

def game_to_dict(game: MarkovGame) -> dict:
    doc = {
        "horizon": game.horizon,
        "num_states": game.num_states,
        "players": list(game.action_counts),
        "initial_state": game.initial_state,
        "zero_sum": game.zero_sum,
        "transitions": game.transitions.tolist(),
        "rewards": game.rewards.tolist(),
    }
    if game.state_labels is not None:
        doc["state_labels"] = list(game.state_labels)
    return doc


def dump_game(game: MarkovGame) -> str:
    # repr-precision floats so parse(dump(g)) == g bit-for-bit
    return json.dumps(game_to_dict(game))


def game_from_dict(doc: dict) -> MarkovGame:
    required = ("horizon", "num_states", "players", "transitions", "rewards")
    missing = [k for k in required if k not in doc]
    if missing:
        raise GameFormatError(f"missing fields: {missing}")
    H = int(doc["horizon"])
    S = int(doc["num_states"])
    A = tuple(int(a) for a in doc["players"])
    try:
        P = np.array(doc["transitions"], dtype=float)
        R = np.array(doc["rewards"], dtype=float)
    except (ValueError, TypeError) as exc:
        raise GameFormatError(f"ragged or non-numeric tables: {exc}") from None
    labels = doc.get("state_labels")
    return MarkovGame(H, S, A, P, R, initial_state=int(doc.get("initial_state", 0)),
                      zero_sum=bool(doc.get("zero_sum", False)),
                      state_labels=tuple(labels) if labels is not None else None)


def parse_game(text: str) -> MarkovGame:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameFormatError(f"malformed document: {exc}") from None
    if not isinstance(doc, dict):
        raise GameFormatError("game document must be a JSON object")
    return game_from_dict(doc)


# --- randomness --------------------------------------------------------------

class RngStream:
    """Seeded random stream with independent named substreams.

    A substream is keyed by the root seed plus the path of names, so the draws of
    one consumer never depend on how many draws another consumer made.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, name: str | int) -> RngStream:
        key = name if isinstance(name, int) else zlib.crc32(name.encode())
        return RngStream(self.seed, self.path + (key,))

    def random(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def categorical(self, p) -> int:
        """Draw an index from the distribution ``p`` (one uniform per draw)."""
        return sample_categorical(p, self.gen.random())


def sample_categorical(p, u: float) -> int:
    c = np.cumsum(p)
    i = int(np.searchsorted(c, u * c[-1], side="right"))
    return min(i, len(c) - 1)


# --- dynamics ----------------------------------------------------------------

@dataclass
class Trajectory:
    episode: int
    states: list[int] = field(default_factory=list)      # s_1 .. s_{H+1}
    actions: list[tuple[int, ...]] = field(default_factory=list)
    rewards: list[tuple[float, ...]] = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    def to_dict(self) -> dict:
        return {"episode": self.episode, "states": list(self.states),
                "actions": [list(a) for a in self.actions],
                "rewards": [list(r) for r in self.rewards]}


def step_env(game: MarkovGame, h: int, s: int, actions, rng: RngStream | float):
    """Return (rewards of all players, next state) for 0-based step ``h``.

    ``rng`` may be a stream or a pre-drawn uniform in [0, 1).
    """
    if not (0 <= h < game.horizon):
        raise IndexError(f"step {h} out of range")
    if not (0 <= s < game.num_states):
        raise IndexError(f"state {s} out of range")
    if len(actions) != game.num_players or any(
            not (0 <= a < n) for a, n in zip(actions, game.action_counts)):
        raise IndexError(f"joint action {tuple(actions)} out of range")
    j = game.joint_index(actions)
    u = rng.random() if isinstance(rng, RngStream) else rng
    s_next = sample_categorical(game.transitions[h, s, j], u)
    return tuple(float(x) for x in game.rewards[:, h, s, j]), s_next


# --- policies ----------------------------------------------------------------

@dataclass
class MarkovPolicy:
    """Per-player tables ``probs[i]`` of shape (H, S, A_i)."""

    probs: list[np.ndarray]

    def __post_init__(self):
        self.probs = [np.asarray(p, dtype=float) for p in self.probs]
        for i, p in enumerate(self.probs):
            if np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1) > ROW_TOL):
                raise ValueError(f"player {i} policy is not a distribution everywhere")

    @classmethod
    def uniform(cls, game: MarkovGame) -> MarkovPolicy:
        return cls([np.full((game.horizon, game.num_states, a), 1.0 / a)
                    for a in game.action_counts])

    @classmethod
    def deterministic(cls, game: MarkovGame, choices) -> MarkovPolicy:
        """``choices[i][h][s]`` is player i's action."""
        probs = []
        for i, a in enumerate(game.action_counts):
            c = np.asarray(choices[i], dtype=int)
            probs.append(np.eye(a)[c])
        return cls(probs)

    def joint(self, h: int, s: int) -> np.ndarray:
        """Product distribution over flattened joint actions at (h, s)."""
        out = np.ones(1)
        for p in self.probs:
            out = np.multiply.outer(out, p[h, s]).ravel()
        return out


def rollout(game: MarkovGame, policy: MarkovPolicy, rng: RngStream, episode: int = 0) -> Trajectory:
    traj = Trajectory(episode, [game.initial_state])
    s = game.initial_state
    for h in range(game.horizon):
        a = tuple(rng.categorical(p[h, s]) for p in policy.probs)
        r, s = step_env(game, h, s, a, rng)
        traj.actions.append(a)
        traj.rewards.append(r)
        traj.states.append(s)
    return traj
