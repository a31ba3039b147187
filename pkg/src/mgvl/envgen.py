"""Game generators: seeded random tabular games and the parity hard instance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import MarkovGame, MarkovPolicy, RngStream

REWARD_MODES = ("zero-sum", "general-sum", "cooperative")


@dataclass
class RandomGameSpec:
    num_players: int = 2
    num_states: int = 4
    actions: tuple[int, ...] = (2, 2)
    horizon: int = 3
    reward_mode: str = "zero-sum"
    concentration: float | str = 1.0      # Dirichlet parameter, or "uniform" for the limit
    seed: int = 0

    def __post_init__(self):
        self.actions = tuple(int(a) for a in self.actions)
        if len(self.actions) != self.num_players:
            raise ValueError("one action count per player required")
        if self.num_states < 1 or self.horizon < 1 or min(self.actions) < 1:
            raise ValueError("dimensions must be positive")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
        if self.reward_mode == "zero-sum" and self.num_players != 2:
            raise ValueError("zero-sum games need two players")
        if self.concentration != "uniform" and not float(self.concentration) > 0:
            raise ValueError("concentration must be positive or 'uniform'")


def random_game(spec: RandomGameSpec) -> MarkovGame:
    rng = RngStream(spec.seed).substream("random_game").gen
    H, S, m = spec.horizon, spec.num_states, spec.num_players
    J = int(np.prod(spec.actions))
    if spec.concentration == "uniform":
        P = np.full((H, S, J, S), 1.0 / S)
    else:
        P = rng.dirichlet(np.full(S, float(spec.concentration)), size=(H, S, J))
        # guard rows that underflowed to all-zero under tiny concentrations
        P = np.maximum(P, 0.0)
        P /= P.sum(-1, keepdims=True)
    if spec.reward_mode == "zero-sum":
        r1 = rng.random((H, S, J))
        R = np.stack([r1, 1.0 - r1])
    elif spec.reward_mode == "cooperative":
        r = rng.random((H, S, J))
        R = np.stack([r] * m)
    else:
        R = rng.random((m, H, S, J))
    return MarkovGame(H, S, spec.actions, P, R, 0, spec.reward_mode == "zero-sum")


# --- parity hard instance -------------------------------------------------------------
#
# state i_z (1-based step i, subscript z) has index 2(i-1) + z; the terminal state is 2H.
# Player 0 is the max-player (actions a_0, a_1), player 1 the min-player (b_0, b_1).

def parity_state(i: int, z: int) -> int:
    return 2 * (i - 1) + z


# next subscript from i_z under (a, b), for steps i <= H-1
PARITY_NEXT = {
    0: {(0, 0): 0, (0, 1): 0, (1, 0): 0, (1, 1): 1},
    1: {(0, 0): 1, (0, 1): 0, (1, 0): 1, (1, 1): 1},
}
# reward at step H: H_0 pays 1 under b_0, H_1 pays 1 under b_1
PARITY_REWARD = {0: {0: 1.0, 1: 0.0}, 1: {0: 0.0, 1: 1.0}}


def parity_hard_instance(H: int) -> MarkovGame:
    if H < 2:
        raise ValueError("the hard instance needs H >= 2")
    S = 2 * H + 1
    term = 2 * H
    P = np.zeros((H, S, 4, S))
    R = np.zeros((2, H, S, 4))
    for h in range(H):
        i = h + 1
        for s in range(S):
            for a in (0, 1):
                for b in (0, 1):
                    j = 2 * a + b
                    if s == term or i == H:
                        P[h, s, j, term] = 1.0
                    elif s in (parity_state(i, 0), parity_state(i, 1)):
                        z = s - parity_state(i, 0)
                        P[h, s, j, parity_state(i + 1, PARITY_NEXT[z][(a, b)])] = 1.0
                    else:
                        # states off the step-i layer are unreachable; stay put
                        P[h, s, j, s] = 1.0
                    if i == H and s in (parity_state(H, 0), parity_state(H, 1)):
                        z = s - parity_state(H, 0)
                        R[0, h, s, j] = PARITY_REWARD[z][b]
    R[1] = 1.0 - R[0]
    labels = tuple([f"{i}_{z}" for i in range(1, H + 1) for z in (0, 1)] + ["bot"])
    return MarkovGame(H, S, (2, 2), P, R, parity_state(1, 0), True, labels)


def parity(x, T) -> int:
    return int(sum(int(x[i - 1]) for i in T) % 2)


@dataclass
class ParityOpponentSpec:
    H: int
    T: tuple[int, ...]             # 1-based positions in [H-1]
    noise: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.T = tuple(sorted({int(i) for i in self.T}))
        n = self.H - 1
        if not self.T or self.T[0] < 1 or self.T[-1] > n:
            raise ValueError(f"T must be a non-empty subset of [1..{n}]")
        if not 0.0 < self.noise < 0.5:
            raise ValueError("noise must be in (0, 1/2)")


class ParityOpponent:
    """Min-player that replays one noisy parity example per episode.

    In episode k it draws x uniform on {0,1}^(H-1) and y = parity_T(x) flipped with
    probability ``noise``; it plays b_{x_h} at step h <= H-1 and b_y at step H.
    """

    def __init__(self, spec: ParityOpponentSpec, noise_override: float | None = None):
        self.spec = spec
        self.noise = spec.noise if noise_override is None else noise_override
        self.rng = RngStream(spec.seed).substream("parity")
        self.k = None
        self.x = None
        self.y = None
        self.transcript: list[tuple[int, list[int], int]] = []

    def draw(self, k: int):
        n = self.spec.H - 1
        self.x = self.rng.integers(0, 2, size=n).astype(int)
        flip = self.rng.random() < self.noise
        self.y = parity(self.x, self.spec.T) ^ int(flip)
        self.k = k
        self.transcript.append((k, self.x.tolist(), int(self.y)))

    def __call__(self, k: int, h: int, s: int) -> int:
        """Action at 0-based step h of episode k."""
        if k != self.k:
            self.draw(k)
        if h < self.spec.H - 1:
            return int(self.x[h])
        return int(self.y)

    def actions(self) -> list[int]:
        return [int(v) for v in self.x] + [int(self.y)]


def parity_opponent(spec: ParityOpponentSpec) -> ParityOpponent:
    return ParityOpponent(spec)


def subset_policy(H: int, T_hat) -> MarkovPolicy:
    """Max-player Markov policy whose state subscript tracks parity_{T_hat}(x).

    From i_0 the subscript flips only under (a_1, b_1); from i_1 it flips only under
    (a_0, b_1). So at steps in T_hat the policy plays a_1 in i_0 and a_0 in i_1, and
    elsewhere it plays the action that never flips (a_0 in i_0, a_1 in i_1).
    """
    T_hat = set(T_hat)
    S = 2 * H + 1
    choice = np.zeros((H, S), dtype=int)
    for h in range(H):
        i = h + 1
        for z in (0, 1):
            choice[h, parity_state(i, z)] = z ^ int(i in T_hat)
    probs = [np.eye(2)[choice], np.full((H, S, 2), 0.5)]
    return MarkovPolicy(probs)
