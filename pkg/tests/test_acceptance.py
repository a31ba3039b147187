"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line with the measured numbers
and then asserts the criterion at its stated tolerance. The long-running ones train
10 seeds at full scale; run ``pytest tests/test_acceptance.py -s`` to watch them.
"""

import itertools
import json
import time

import numpy as np
import pytest

from mgvl.bandit import (ADVERSARIES, alpha_weights, audit_weighted_regret, external_iota,
                         ftrl_xi, simulate_bandit, swap_iota, swap_xi)
from mgvl.certified import extract_monotone_markov, truncate_log
from mgvl.cli import main as cli_main
from mgvl.cli import reference_values
from mgvl.envgen import (ParityOpponent, ParityOpponentSpec, RandomGameSpec,
                         parity_hard_instance, parity_state, random_game, subset_policy)
from mgvl.evalx import (best_response_markov, certified_gap, certified_values, mc_value,
                        nash_gap_markov, nash_values_zero_sum, policy_values,
                        strategy_mod_markov)
from mgvl.game import MarkovPolicy
from mgvl.linprog import solve_cce, solve_matrix_game
from mgvl.nashq import NashQConfig, train_nashq
from mgvl.vlearn import TrainConfig, VLearner, train
from oracles import QChainOracle, VChainOracle, support_enumeration_value

SEEDS = range(10)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, started):
        with capsys.disabled():
            status = "PASS" if ok else "FAIL"
            print(f"\nCRITERION {n}: {status} ({time.perf_counter() - started:.1f}s) {detail}")
        assert ok, f"criterion {n}: {detail}"
    return emit


def zs_suite(seed):
    return random_game(RandomGameSpec(num_states=4, horizon=3, seed=seed))


# 1 -----------------------------------------------------------------------------------------

def test_criterion_1_weight_identities(report):
    t0 = time.perf_counter()
    T = 10_000
    failures = []
    tail_ok = tail_total = 0
    worst_tail = 0.0
    for H in range(1, 11):
        # exact running recursions over all t <= T: w_t = ((1 - a_t) w_{t-1}, a_t)
        a = (H + 1.0) / (H + np.arange(1, T + 1))
        s = sq = inv = mx = 0.0
        for t in range(1, T + 1):
            f = 1.0 - a[t - 1]
            s = f * s + a[t - 1]
            sq = f * f * sq + a[t - 1] ** 2
            inv = f * inv + a[t - 1] / np.sqrt(t)
            mx = max(f * mx, a[t - 1])
            if abs(s - 1.0) > 1e-12:
                failures.append(("sum", H, t))
            if not 1 / np.sqrt(t) - 1e-12 <= inv <= 2 / np.sqrt(t) + 1e-12:
                failures.append(("sqrt", H, t))
            if mx > 2 * H / t + 1e-12 or sq > 2 * H / t + 1e-12:
                failures.append(("max/sq", H, t))
        # the library weights agree with the recursion on a stride of t
        for t in range(1, T + 1, 97):
            w = alpha_weights(t, H)
            i = np.arange(1, t + 1)
            if (abs(w.sum() - 1) > 1e-12 or w.max() > 2 * H / t + 1e-12
                    or (w ** 2).sum() > 2 * H / t + 1e-12
                    or not 1 / np.sqrt(t) - 1e-12 <= (w / np.sqrt(i)).sum() <= 2 / np.sqrt(t) + 1e-12):
                failures.append(("library", H, t))
        # partial sums sum_{t=i}^{T} alpha_t^i for every i <= 10^4, T up to i + 200H
        i = np.arange(1, T + 1, dtype=float)
        w = (H + 1.0) / (H + i)
        S = w.copy()
        limit = 1.0 + 1.0 / H
        for d in range(1, 200 * H + 1):
            w = w * (1.0 - (H + 1.0) / (H + i + d))
            if np.any(w < 0) or np.any(S + w > limit + 1e-12):
                failures.append(("partial-monotone", H, d))
                break
            S = S + w
        gap = limit - S
        tail_ok += int((gap <= 1e-6).sum())
        tail_total += gap.size
        worst_tail = max(worst_tail, float(gap.max()))
    tail_fine = tail_ok == tail_total
    ok = not failures and tail_fine
    detail = (f"identity failures={len(failures)}; partial sums within 1e-6 of 1+1/H at "
              f"T=i+200H for {tail_ok}/{tail_total} (H,i) cells, worst gap {worst_tail:.3g}")
    report(1, ok, detail, t0)


# 2, 3 --------------------------------------------------------------------------------------

def _regret_cells(mode):
    cells = []
    extra_ok = True
    for B, H, adv in itertools.product((2, 5), (1, 5), ADVERSARIES):
        th, lo = simulate_bandit(mode, B, H, 5000, adv, range(100))
        reg = audit_weighted_regret(th, lo, H, mode)
        if mode == "swap":
            ext = audit_weighted_regret(th, lo, H, "external")
            extra_ok &= bool(np.all(reg >= ext - 1e-12))
        for t in (100, 1000, 5000):
            if mode == "external":
                bound = ftrl_xi(B, t, external_iota(B, 0.01), H)
            else:
                bound = swap_xi(B, t, swap_iota(B, 0.01), H)
            cells.append(int((reg[:, t - 1] <= bound).sum()))
    return cells, extra_ok


def test_criterion_2_ftrl_regret(report):
    t0 = time.perf_counter()
    cells, _ = _regret_cells("external")
    report(2, min(cells) >= 95, f"seeds within bound per cell: min {min(cells)}/100 "
                                f"over {len(cells)} cells", t0)


def test_criterion_3_swap_regret(report):
    t0 = time.perf_counter()
    cells, dominance = _regret_cells("swap")
    ok = min(cells) >= 95 and dominance
    report(3, ok, f"min {min(cells)}/100 over {len(cells)} cells; swap >= external on every "
                  f"log: {dominance}", t0)


# 4 -----------------------------------------------------------------------------------------

def test_criterion_4_lp_cce(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_gap = worst_oracle = worst_exploit = 0.0
    for _ in range(100):
        M = rng.random((4, 4))
        sol = solve_matrix_game(M)
        worst_gap = max(worst_gap, sol.duality_gap)
        worst_oracle = max(worst_oracle, abs(sol.value - support_enumeration_value(M)))
        pi = solve_cce(M, M)
        mu, nu = pi.sum(1), pi.sum(0)
        exploit = (M @ nu).max() - (mu @ M).min()
        worst_exploit = max(worst_exploit, exploit)
    ok = worst_gap <= 1e-8 and worst_oracle <= 1e-6 and worst_exploit <= 1e-7
    report(4, ok, f"max duality gap {worst_gap:.2e}, max |v - oracle| {worst_oracle:.2e}, "
                  f"max marginal exploitability {worst_exploit:.2e}", t0)


# 5 -----------------------------------------------------------------------------------------

def test_criterion_5_vlearning_zero_sum(report):
    t0 = time.perf_counter()
    K = 30_000
    cps = tuple(range(K // 10, K + 1, K // 10))
    viol = total = 0
    gap_q, gap_k = [], []
    for seed in SEEDS:
        g = zs_suite(seed)
        res = train(g, TrainConfig(K=K, seed=seed, checkpoints=cps),
                    reference_values=reference_values(g))
        for r in res.diagnostics.rows:
            viol += r["optimism_violations"]
            total += g.horizon * g.num_states
        gap_k.append(max(certified_gap(g, res.log, i).gap for i in range(2)))
        short = truncate_log(res.log, K // 4)
        gap_q.append(max(certified_gap(g, short, i).gap for i in range(2)))
    frac = 1 - viol / total
    mq, mk = float(np.median(gap_q)), float(np.median(gap_k))
    a, b, c = frac >= 0.99, mk <= mq / 1.5, mk <= 0.25 * 3
    detail = (f"(a) optimism {frac:.4f} [{'ok' if a else 'fail'}]; (b) median gap K/4 "
              f"{mq:.4f} -> K {mk:.4f}, ratio {mq / mk:.3f} vs 1.5 [{'ok' if b else 'fail'}]; "
              f"(c) final median {mk:.4f} <= 0.75 [{'ok' if c else 'fail'}]")
    report(5, a and b and c, detail, t0)


# 6 -----------------------------------------------------------------------------------------

def test_criterion_6_monotone(report, monkeypatch):
    t0 = time.perf_counter()
    K = 30_000
    increases = []
    original = VLearner.step

    def checked(self, h, s, a, r, s_next):
        before = self.V.copy()
        out = original(self, h, s, a, r, s_next)
        if np.any(self.V > before):
            increases.append((self.player, h, s))
        return out

    monkeypatch.setattr(VLearner, "step", checked)
    gq, gk = [], []
    for seed in SEEDS:
        g = zs_suite(seed)
        res = train(g, TrainConfig(K=K, seed=seed, monotone=True, checkpoints=(K // 4,)))
        for k, bucket in ((K // 4, gq), (K, gk)):
            pol = extract_monotone_markov(truncate_log(res.log, k), res.cuts[k]).policy
            bucket.append(float(nash_gap_markov(g, pol).max()))
    mq, mk = float(np.median(gq)), float(np.median(gk))
    ok = not increases and mk < mq and mk <= 0.3 * 3
    report(6, ok, f"value increases {len(increases)}; median Nash gap K/4 {mq:.4f} -> K "
                  f"{mk:.4f} (<= 0.9)", t0)


# 7 -----------------------------------------------------------------------------------------

def test_criterion_7_nash_q(report):
    t0 = time.perf_counter()
    K = 30_000
    ordered = True
    ok_entries = total = 0
    ratios = []
    for seed in SEEDS:
        g = zs_suite(seed)
        Vstar = nash_values_zero_sum(g).V
        cps = tuple(sorted({*range(K // 10, K + 1, K // 10), K // 4}))
        res = train_nashq(g, NashQConfig(K=K, seed=seed, checkpoints=cps), Vstar)
        ordered &= bool(np.all(res.learner.Q_low <= res.learner.Q_up))
        ok_entries += res.diagnostics.sandwich_ok
        total += res.diagnostics.sandwich_total
        trace = {r["episode"]: r["gap_trace"] for r in res.diagnostics.rows}
        ratios.append(trace[K // 4] / trace[K])
    frac = ok_entries / total
    med = float(np.median(ratios))
    ok = ordered and frac >= 0.99 and med >= 1.5
    report(7, ok, f"Q_low <= Q_up: {ordered}; sandwich {frac:.4f}; median gap-trace ratio "
                  f"K/4 -> K {med:.3f} vs 1.5 (range {min(ratios):.3f}..{max(ratios):.3f})", t0)


# 8 -----------------------------------------------------------------------------------------

def test_criterion_8_multiplayer(report):
    t0 = time.perf_counter()
    K = 20_000
    gq, gk = [], []
    lowest = np.inf
    for seed in SEEDS:
        g = random_game(RandomGameSpec(3, 3, (2, 2, 2), 2, "general-sum", 1.0, seed))
        res = train(g, TrainConfig(K=K, seed=seed, mode="swap"))
        for k, bucket in ((K // 4, gq), (K, gk)):
            log = truncate_log(res.log, k)
            reps = [certified_gap(g, log, i, mode) for i in range(3)
                    for mode in ("best_response", "strategy_mod")]
            lowest = min(lowest, min(r.gap for r in reps))
            bucket.append(max(r.gap for r in reps if r.mode == "strategy_mod"))
    mq, mk = float(np.median(gq)), float(np.median(gk))
    ok = mk < mq and lowest >= -1e-8
    report(8, ok, f"median strategy-mod gap K/4 {mq:.4f} -> K {mk:.4f}; min reported gap "
                  f"{lowest:.2e}", t0)


# 9 -----------------------------------------------------------------------------------------

def test_criterion_9_gap_oracle(report):
    t0 = time.perf_counter()
    worst = 0.0
    checks = 0
    for seed in range(2):
        for mode_r in ("zero-sum", "general-sum"):
            g = random_game(RandomGameSpec(2, 2, (2, 2), 2, mode_r, 1.0, seed))
            logs = [("v", train(g, TrainConfig(K=3, seed=seed)).log)]
            if mode_r == "zero-sum":
                logs.append(("q", train_nashq(g, NashQConfig(K=3, seed=seed)).log))
            for style, log in logs:
                Oracle = VChainOracle if style == "v" else QChainOracle
                for i, mode in itertools.product(range(2), ("best_response", "strategy_mod")):
                    got = certified_gap(g, log, i, mode)
                    up = Oracle(g, log, i, mode).best()
                    onp = Oracle(g, log, i, "on_policy").best()
                    worst = max(worst, abs(got.upper_bound - up), abs(got.gap - (up - onp)))
                    checks += 1
    # K = 1: the chain is frozen at index 1, i.e. the uniform Markov policy
    for seed in range(3):
        g = random_game(RandomGameSpec(3, 2, (2, 2, 2), 2, "general-sum", 1.0, seed))
        log = train(g, TrainConfig(K=1, seed=seed, mode="swap")).log
        pol = MarkovPolicy.uniform(g)
        joint = [[pol.joint(h, s) for s in range(2)] for h in range(2)]
        V = policy_values(g, pol)
        for i in range(3):
            br = certified_gap(g, log, i, "best_response", "execute")
            sm = certified_gap(g, log, i, "strategy_mod", "execute")
            worst = max(worst,
                        abs(br.upper_bound - best_response_markov(g, pol, i).value(0)),
                        abs(sm.upper_bound - strategy_mod_markov(g, joint, i)[0, 0]),
                        abs(br.on_policy - V[i, 0, 0]))
            checks += 3
    report(9, worst <= 1e-10, f"{checks} comparisons, max abs difference {worst:.2e}", t0)


# 10 ----------------------------------------------------------------------------------------

def test_criterion_10_parity_instance(report):
    t0 = time.perf_counter()
    # the two tables, keyed by (subscript z, a, b): next subscript and step-H reward
    next_table = {(0, 0, 0): 0, (0, 0, 1): 0, (0, 1, 0): 0, (0, 1, 1): 1,
                  (1, 0, 0): 1, (1, 0, 1): 0, (1, 1, 0): 1, (1, 1, 1): 1}
    reward_table = {(0, 0): 1.0, (0, 1): 0.0, (1, 0): 0.0, (1, 1): 1.0}
    mismatches = 0
    for H in range(2, 9):
        g = parity_hard_instance(H)
        for i, z, a, b in itertools.product(range(1, H + 1), (0, 1), (0, 1), (0, 1)):
            s, j = parity_state(i, z), 2 * a + b
            if i < H:
                want = np.zeros(g.num_states)
                want[parity_state(i + 1, next_table[(z, a, b)])] = 1.0
                mismatches += not np.array_equal(g.transitions[i - 1, s, j], want)
                mismatches += g.rewards[0, i - 1, s, j] != 0.0
            else:
                mismatches += g.transitions[i - 1, s, j, 2 * H] != 1.0
                mismatches += g.rewards[0, i - 1, s, j] != reward_table[(z, b)]
    H, T, noise = 6, (2, 4), 0.2
    g = parity_hard_instance(H)
    choice = subset_policy(H, T).probs[0].argmax(-1)
    opp = ParityOpponent(ParityOpponentSpec(H, T, noise, seed=0))
    mean, se = mc_value(g, lambda e, h, s, rng: (int(choice[h, s]), opp(e + 1, h, s)),
                        100_000, seed=0)
    dev = abs(mean[0] - (1 - noise))
    ok = mismatches == 0 and dev <= 3 * se[0]
    report(10, ok, f"table mismatches {mismatches}; true-T value {mean[0]:.4f} vs "
                   f"{1 - noise} (|diff| {dev:.4f}, 3 se {3 * se[0]:.4f})", t0)


# 11 ----------------------------------------------------------------------------------------

def test_criterion_11_reproducibility(report, tmp_path):
    t0 = time.perf_counter()
    runs = [("vlearn-external", "random:zs,S=4,A=2,B=2,H=3,seed=7", "json"),
            ("vlearn-swap", "random:gs,m=3,actions=2x2x2,S=3,H=2,seed=1", "binary"),
            ("vlearn-monotone", "random:zs,S=3,H=2,seed=2", "json"),
            ("nash-v", "random:zs,S=3,H=2,seed=3", "binary"),
            ("nashq", "random:zs,S=3,H=2,seed=4", "json"),
            ("vlearn-external", "parity:H=4,T=1|3,alpha=0.2,seed=5", "binary")]
    differing = []
    for n, (algo, game, fmt) in enumerate(runs):
        first = tmp_path / f"run{n}"
        assert cli_main(["train", "--algo", algo, "--game", game, "--K", "500", "--seed",
                         str(n), "--format", fmt, "--checkpoints", "100,250",
                         "--out", str(first)]) == 0
        again = tmp_path / f"rerun{n}"
        assert cli_main(["train", "--manifest", str(first / "manifest.json"),
                         "--out", str(again)]) == 0
        manifest = json.loads((first / "manifest.json").read_text())
        for f in manifest["artifacts"]:
            if f == "diagnostics.csv":
                continue        # carries wall-clock timings
            if (first / f).read_bytes() != (again / f).read_bytes():
                differing.append(f"{algo}:{f}")
    report(11, not differing, f"{len(runs)} runs re-executed from manifests; differing "
                              f"artifacts: {differing or 'none'}", t0)
