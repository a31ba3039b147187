import itertools

import numpy as np
import pytest

from mgvl.envgen import (PARITY_NEXT, PARITY_REWARD, ParityOpponent, ParityOpponentSpec,
                         RandomGameSpec, parity, parity_hard_instance, parity_state,
                         random_game, subset_policy)
from mgvl.evalx import mc_value, policy_values
from mgvl.game import MarkovPolicy


def test_random_game_modes():
    zs = random_game(RandomGameSpec(seed=1))
    assert zs.zero_sum and np.allclose(zs.rewards.sum(0), 1.0)
    co = random_game(RandomGameSpec(3, 2, (2, 2, 3), 2, "cooperative", 0.5, 1))
    assert np.array_equal(co.rewards[0], co.rewards[2])
    assert co.num_joint == 12
    un = random_game(RandomGameSpec(2, 3, (2, 2), 1, "general-sum", "uniform", 0))
    assert np.all(un.transitions == 1 / 3)


def test_random_game_seeded():
    spec = RandomGameSpec(seed=3)
    assert random_game(spec) == random_game(RandomGameSpec(seed=3))
    assert random_game(spec) != random_game(RandomGameSpec(seed=4))


def test_tiny_concentration_rows_valid():
    g = random_game(RandomGameSpec(concentration=1e-3, seed=0))
    assert np.allclose(g.transitions.sum(-1), 1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        RandomGameSpec(num_players=3, actions=(2, 2, 2), reward_mode="zero-sum")
    with pytest.raises(ValueError):
        RandomGameSpec(actions=(2,))
    with pytest.raises(ValueError):
        RandomGameSpec(concentration=0.0)


# the two tables of the hard instance, written out independently of the generator:
# next subscript for i_0 and i_1 under (a, b), and the step-H payoff
NEXT_TABLE = {(0, 0, 0): 0, (0, 0, 1): 0, (0, 1, 0): 0, (0, 1, 1): 1,
              (1, 0, 0): 1, (1, 0, 1): 0, (1, 1, 0): 1, (1, 1, 1): 1}
PAYOFF_TABLE = {(0, 0): 1.0, (0, 1): 0.0, (1, 0): 0.0, (1, 1): 1.0}


@pytest.mark.parametrize("H", [2, 3, 6])
def test_parity_instance_tables(H):
    g = parity_hard_instance(H)
    term = 2 * H
    assert g.num_states == 2 * H + 1 and g.initial_state == parity_state(1, 0)
    for i, z, a, b in itertools.product(range(1, H + 1), (0, 1), (0, 1), (0, 1)):
        s, j = parity_state(i, z), 2 * a + b
        row = g.transitions[i - 1, s, j]
        if i < H:
            assert row[parity_state(i + 1, NEXT_TABLE[(z, a, b)])] == 1.0
            assert g.rewards[0, i - 1, s, j] == 0.0
        else:
            assert row[term] == 1.0
            assert g.rewards[0, i - 1, s, j] == PAYOFF_TABLE[(z, b)]
    assert all(PARITY_NEXT[z][(a, b)] == NEXT_TABLE[(z, a, b)]
               for z, a, b in itertools.product((0, 1), repeat=3))
    assert all(PARITY_REWARD[z][b] == PAYOFF_TABLE[(z, b)] for z in (0, 1) for b in (0, 1))
    np.testing.assert_array_equal(g.rewards[1], 1.0 - g.rewards[0])


def test_parity_helper():
    assert parity([1, 0, 1, 1], (1, 3)) == 0
    assert parity([1, 0, 1, 1], (1, 4)) == 0
    assert parity([1, 1, 1, 1], (1, 2, 3)) == 1


def test_subset_policy_tracks_parity_exhaustively():
    H, T = 5, (1, 3)
    g = parity_hard_instance(H)
    pol = subset_policy(H, T)
    choice = pol.probs[0].argmax(-1)
    for x in itertools.product((0, 1), repeat=H - 1):
        s = g.initial_state
        for h in range(H - 1):
            a = int(choice[h, s])
            s = int(np.argmax(g.transitions[h, s, 2 * a + x[h]]))
        assert s - parity_state(H, 0) == parity(x, T)


def test_opponent_draws_and_transcript():
    opp = ParityOpponent(ParityOpponentSpec(4, (1, 2), 0.25, seed=2))
    acts = [opp(1, h, 0) for h in range(4)]
    assert acts == opp.actions()
    k, x, y = opp.transcript[0]
    assert k == 1 and x == acts[:3] and y == acts[3]
    opp(2, 0, 0)
    assert len(opp.transcript) == 2


def test_opponent_noise_rate():
    opp = ParityOpponent(ParityOpponentSpec(4, (1, 3), 0.2, seed=0))
    n = 20_000
    flips = 0
    for k in range(1, n + 1):
        opp(k, 0, 0)
        flips += opp.y != parity(opp.x, (1, 3))
    assert abs(flips / n - 0.2) <= 3 * np.sqrt(0.2 * 0.8 / n)


def test_spec_checks():
    with pytest.raises(ValueError):
        ParityOpponentSpec(4, (4,))
    with pytest.raises(ValueError):
        ParityOpponentSpec(4, (1,), noise=0.6)
    with pytest.raises(ValueError):
        parity_hard_instance(1)


def test_true_subset_policy_value_exact():
    # against noiseless labels the tracking policy wins every episode; against the
    # noisy opponent it wins exactly when the label is not flipped
    H, T, noise = 4, (1, 2), 0.2
    g = parity_hard_instance(H)
    pol = subset_policy(H, T)
    opp = ParityOpponent(ParityOpponentSpec(H, T, noise, seed=5))
    choice = pol.probs[0].argmax(-1)

    def play(e, h, s, rng):
        return int(choice[h, s]), opp(e + 1, h, s)

    mean, se = mc_value(g, play, 20_000, seed=0)
    assert abs(mean[0] - (1 - noise)) <= 3 * se[0]
    # a uniform max-player earns 1/2 whatever the opponent does
    assert policy_values(g, MarkovPolicy.uniform(g))[0, 0, g.initial_state] == pytest.approx(0.5)
