"""Weighted-regret adversarial bandits (FTRL and its swap-regret variant) and a regret auditor.

Both learners hold ``n`` independent instances in stacked arrays so that a whole
table of bandits (one per (h, s)) or a batch of seeded runs can live in one object;
``update`` touches only the instances it is given.
"""

from __future__ import annotations

import math

import numpy as np


# --- step-size weights ---------------------------------------------------------

def learning_rate(t, H):
    """alpha_t = (H + 1) / (H + t)."""
    return (H + 1.0) / (H + np.asarray(t, dtype=float))


def alpha_weights(t: int, H: int) -> np.ndarray:
    """[alpha_t^1, ..., alpha_t^t] with alpha_t^i = alpha_i * prod_{j=i+1..t} (1 - alpha_j)."""
    if t < 0 or H < 1:
        raise ValueError("need t >= 0 and H >= 1")
    if t == 0:
        return np.zeros(0)
    j = np.arange(1, t + 1, dtype=float)
    a = (H + 1.0) / (H + j)
    tail = np.ones(t)
    # tail[i-1] = prod_{j=i+1..t} (1 - alpha_j)
    tail[:-1] = np.cumprod((1.0 - a[1:])[::-1])[::-1]
    return a * tail


def alpha_zero(t: int, H: int) -> float:
    """alpha_t^0 = prod_{j=1..t} (1 - alpha_j): 1 at t = 0 and 0 afterwards."""
    return 1.0 if t == 0 else 0.0


class WeightSchedule:
    """The alpha_t^i weights of horizon ``H`` with a small cache."""

    def __init__(self, H: int):
        self.H = H
        self._cache: dict[int, np.ndarray] = {}

    def alpha(self, t):
        return learning_rate(t, self.H)

    def weights(self, t: int) -> np.ndarray:
        w = self._cache.get(t)
        if w is None:
            w = alpha_weights(t, self.H)
            if len(self._cache) < 4096:
                self._cache[t] = w
        return w

    def cumulative(self, t: int) -> np.ndarray:
        """Cumulative sums of the weights, used for inverse-CDF sampling of i."""
        return np.cumsum(self.weights(t))


# --- regret bound profiles --------------------------------------------------------

def ftrl_xi(B, t, iota, H):
    return 10.0 * np.sqrt(H * B * iota / t)


def ftrl_Xi(B, t, iota, H):
    return 20.0 * np.sqrt(H * B * t * iota)


def swap_xi(B, t, iota, H):
    return 10.0 * B * np.sqrt(H * iota / t)


def swap_Xi(B, t, iota, H):
    return 20.0 * B * np.sqrt(H * t * iota)


def external_iota(B, delta):
    return math.log(B / delta)


def swap_iota(B, delta):
    return math.log(B * B / delta)


# --- learners ------------------------------------------------------------------------

def _softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def default_eta(H: int, B: int, swap: bool = False):
    """eta_t = gamma_t = sqrt(H log B / (B t)), or sqrt(H log B / t) for the swap learner."""
    scale = H * math.log(B) / (1 if swap else B)
    return lambda t: np.sqrt(scale / np.asarray(t, dtype=float))


class Ftrl:
    """Exponential-weights FTRL with implicit exploration, weighted by alpha_t^i.

    The running weighted average L_t = sum_i alpha_t^i lhat_i is kept instead of the raw
    sum of w_i lhat_i; since alpha_t^i / alpha_t = w_i / w_t the policy
    theta_{t+1} ∝ exp(-(eta_t / alpha_t) L_t) is unchanged and nothing overflows.
    """

    swap = False

    def __init__(self, B: int, H: int, n: int = 1, eta=None, gamma=None):
        if B < 1 or H < 1:
            raise ValueError("need B >= 1 and H >= 1")
        self.B, self.H, self.n = B, H, n
        self.eta = eta or default_eta(H, B, self.swap)
        self.gamma = gamma or self.eta
        self.t = np.zeros(n, dtype=np.int64)
        self.L = np.zeros(self._table_shape())
        self.theta = np.full((n, B), 1.0 / B)

    def _table_shape(self):
        return (self.n, self.B)

    def policy(self, idx=0) -> np.ndarray:
        return self.theta[idx]

    def _check(self, b, loss):
        b = np.asarray(b)
        loss = np.asarray(loss, dtype=float)
        if np.any(loss < 0) or np.any(loss > 1):
            raise ValueError(f"loss outside [0,1]: {loss}")
        if np.any(b < 0) or np.any(b >= self.B):
            raise IndexError(f"action out of range: {b}")
        return b, loss

    def update(self, idx, b, loss):
        """Feed played action ``b`` and its loss to instance(s) ``idx``; returns new theta."""
        if np.ndim(idx) == 0:
            return self._update_one(int(idx), int(b), float(loss))
        b, loss = self._check(b, loss)
        idx = np.asarray(idx)
        t = self.t[idx] + 1
        self.t[idx] = t
        alpha = learning_rate(t, self.H)
        theta = self.theta[idx]
        gam = self.gamma(t)
        pb = np.take_along_axis(theta, b[..., None], axis=-1)[..., 0]
        est = np.zeros_like(theta)
        np.put_along_axis(est, b[..., None], (loss / (pb + gam))[..., None], axis=-1)
        L = (1.0 - alpha)[..., None] * self.L[idx] + alpha[..., None] * est
        self.L[idx] = L
        new = _softmax_rows(-(self.eta(t) / alpha)[..., None] * L)
        self.theta[idx] = new
        return new

    def _update_one(self, k, b, loss):
        if not 0.0 <= loss <= 1.0:
            raise ValueError(f"loss outside [0,1]: {loss}")
        if not 0 <= b < self.B:
            raise IndexError(f"action out of range: {b}")
        t = int(self.t[k]) + 1
        self.t[k] = t
        alpha = (self.H + 1.0) / (self.H + t)
        L = self.L[k]
        L *= 1.0 - alpha
        L[b] += alpha * loss / (self.theta[k, b] + float(self.gamma(t)))
        z = L * (-float(self.eta(t)) / alpha)
        e = np.exp(z - z.max())
        self.theta[k] = e / e.sum()
        return self.theta[k]

    def state_dict(self) -> dict:
        return {"t": self.t.copy(), "L": self.L.copy(), "theta": self.theta.copy()}


class StationaryError(RuntimeError):
    pass


def stationary(M, start=None, tol=1e-12, max_iter=10_000):
    """Row vector theta with theta = theta @ M for stacked row-stochastic M (..., B, B).

    Power iteration from ``start``; when plain steps stall, the matrix is squared so each
    further step advances 2^k iterations. ``max_iter`` caps the equivalent step count.
    """
    M = np.asarray(M, dtype=float)
    B = M.shape[-1]
    theta = np.full(M.shape[:-1], 1.0 / B) if start is None else np.array(start, dtype=float)
    P = M
    stride = 1
    done = 0
    while True:
        for _ in range(16):
            nxt = np.matmul(theta[..., None, :], P)[..., 0, :]
            nxt /= nxt.sum(-1, keepdims=True)
            done += 1
            if stride == 1:
                res = np.abs(nxt - theta).sum(-1)
            else:
                res = np.abs(np.matmul(nxt[..., None, :], M)[..., 0, :] - nxt).sum(-1)
            theta = nxt
            if np.all(res <= tol):
                return theta
            if done >= max_iter:
                raise StationaryError(f"power iteration did not converge (residual {res.max():.3g})")
        P = P @ P
        stride *= 2


class SwapFtrl(Ftrl):
    """FTRL over per-recommendation conditional tables; plays their stationary distribution.

    ``cond[k, b, :]`` is the conditional distribution theta~(. | b) of instance k.
    """

    swap = True

    def __init__(self, B: int, H: int, n: int = 1, eta=None, gamma=None):
        super().__init__(B, H, n, eta, gamma)
        self.cond = np.full((n, B, B), 1.0 / B)

    def _table_shape(self):
        return (self.n, self.B, self.B)

    def _update_one(self, k, b, loss):
        if not 0.0 <= loss <= 1.0:
            raise ValueError(f"loss outside [0,1]: {loss}")
        if not 0 <= b < self.B:
            raise IndexError(f"action out of range: {b}")
        t = int(self.t[k]) + 1
        self.t[k] = t
        alpha = (self.H + 1.0) / (self.H + t)
        theta = self.theta[k]
        L = self.L[k]
        L *= 1.0 - alpha
        L[:, b] += theta * (alpha * loss / (theta[b] + float(self.gamma(t))))
        z = L * (-float(self.eta(t)) / alpha)
        e = np.exp(z - z.max(axis=1, keepdims=True))
        cond = e / e.sum(axis=1, keepdims=True)
        self.cond[k] = cond
        self.theta[k] = stationary(cond, start=theta)
        return self.theta[k]

    def update(self, idx, b, loss):
        if np.ndim(idx) == 0:
            return self._update_one(int(idx), int(b), float(loss))
        b, loss = self._check(b, loss)
        idx = np.asarray(idx)
        t = self.t[idx] + 1
        self.t[idx] = t
        alpha = learning_rate(t, self.H)
        theta = self.theta[idx]
        gam = self.gamma(t)
        pb = np.take_along_axis(theta, b[..., None], axis=-1)[..., 0]
        # lhat(. | r) = theta(r) * loss * 1{b_t = .} / (theta(.) + gamma)
        col = theta * (loss / (pb + gam))[..., None]
        est = np.zeros(theta.shape + (self.B,))
        np.put_along_axis(est, np.broadcast_to(b[..., None, None], theta.shape + (1,)),
                          col[..., None], axis=-1)
        a = alpha[..., None, None]
        L = (1.0 - a) * self.L[idx] + a * est
        self.L[idx] = L
        cond = _softmax_rows(-(self.eta(t) / alpha)[..., None, None] * L)
        self.cond[idx] = cond
        new = stationary(cond, start=theta)
        self.theta[idx] = new
        return new

    def state_dict(self) -> dict:
        d = super().state_dict()
        d["cond"] = self.cond.copy()
        return d


def make_bandit(mode: str, B: int, H: int, n: int = 1, eta=None, gamma=None) -> Ftrl:
    if mode == "external":
        return Ftrl(B, H, n, eta, gamma)
    if mode == "swap":
        return SwapFtrl(B, H, n, eta, gamma)
    raise ValueError(f"unknown bandit mode {mode!r}")


# --- auditing --------------------------------------------------------------------------

def audit_weighted_regret(thetas, losses, H: int, mode: str = "external") -> np.ndarray:
    """Realized alpha-weighted regret after each round t = 1..T.

    ``thetas`` and ``losses`` are (T, B) (or (..., T, B) for batches): the played
    distributions and the adversary's true loss vectors. Swap regret is the max over
    all maps psi: B -> B, which decomposes per recommended action.
    """
    thetas = np.asarray(thetas, dtype=float)
    losses = np.asarray(losses, dtype=float)
    T = thetas.shape[-2]
    B = thetas.shape[-1]
    out = np.zeros(thetas.shape[:-2] + (T,))
    if mode == "external":
        acc = np.zeros(thetas.shape[:-2] + (B,))
    elif mode == "swap":
        acc = np.zeros(thetas.shape[:-2] + (B, B))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    for t in range(1, T + 1):
        a = (H + 1.0) / (H + t)
        th = thetas[..., t - 1, :]
        lo = losses[..., t - 1, :]
        if mode == "external":
            inst = (th * lo).sum(-1, keepdims=True) - lo
            acc = (1 - a) * acc + a * inst
            out[..., t - 1] = acc.max(-1)
        else:
            # D[r, r'] = theta(r) (l(r) - l(r'))
            inst = th[..., :, None] * (lo[..., :, None] - lo[..., None, :])
            acc = (1 - a) * acc + a * inst
            out[..., t - 1] = acc.max(-1).sum(-1)
    return out


# --- loss adversaries for audits ------------------------------------------------------------

ADVERSARIES = ("bernoulli", "drifting", "best_response")


def simulate_bandit(mode: str, B: int, H: int, T: int, adversary: str, seeds) -> tuple:
    """Run one bandit per seed against ``adversary`` for T rounds, all seeds batched.

    Adversaries: i.i.d. Bernoulli losses with per-arm means drawn once per seed;
    Bernoulli losses whose means drift sinusoidally; and a best-response adversary
    that charges loss 1 to the arm the learner currently favours most and 0 elsewhere.
    Returns (thetas, losses), each (n_seeds, T, B), for ``audit_weighted_regret``.
    """
    if adversary not in ADVERSARIES:
        raise ValueError(f"unknown adversary {adversary!r}")
    seeds = [int(s) for s in seeds]
    n = len(seeds)
    gens = [np.random.default_rng([s, B, H, ADVERSARIES.index(adversary)]) for s in seeds]
    means = np.stack([g.random(B) for g in gens])
    phase = np.stack([g.random(B) * 2 * np.pi for g in gens])
    U = np.stack([g.random((T, B)) for g in gens])       # loss draws
    V = np.stack([g.random(T) for g in gens])            # action draws
    learner = make_bandit(mode, B, H, n)
    idx = np.arange(n)
    thetas = np.empty((n, T, B))
    losses = np.empty((n, T, B))
    for t in range(T):
        th = learner.theta.copy()
        thetas[:, t] = th
        if adversary == "bernoulli":
            lo = (U[:, t] < means).astype(float)
        elif adversary == "drifting":
            mu = 0.5 + 0.4 * np.sin(2 * np.pi * t / 500.0 + phase)
            lo = (U[:, t] < mu).astype(float)
        else:
            lo = np.zeros((n, B))
            lo[idx, th.argmax(1)] = 1.0
        losses[:, t] = lo
        c = np.cumsum(th, axis=1)
        b = np.minimum((c < (V[:, t] * c[:, -1])[:, None]).sum(1), B - 1)
        learner.update(idx, b, lo[idx, b])
    return thetas, losses
