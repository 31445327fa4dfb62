"""No-regret dynamics in the game induced by an Ising model.

Player ``i`` picks a spin and earns ``x_i (b_i + sum_j w_ij x_j)``.  Learners
see payoffs mapped affinely onto [0, 1] with ``R_i = |b_i| + sum_j |w_ij|``:

    mbar_i(a, x_-i) = (a h_i(x) + R_i) / (2 R_i)

which keeps every player's argmax unchanged.  Play is summarised by
sufficient statistics (per-node +1 counts and per-edge action-pair counts);
small models also keep the full table of joint-action counts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from isinggame import _kernels as K
from isinggame.classic import Marginals
from isinggame.exact import brute_force
from isinggame.model import IsingModel, all_assignments
from isinggame.rng import stream

JOINT_MAX_NODES = 25
JOINT_MAX_ROUNDS = 10**6
_CHUNK_CELLS = 1 << 20

# pair_counts columns: (x_u, x_v) = (-,-), (-,+), (+,-), (+,+)
_PAIR_U = np.array([-1.0, -1.0, 1.0, 1.0])
_PAIR_V = np.array([-1.0, 1.0, -1.0, 1.0])


class HistoryError(ValueError):
    pass


@dataclass
class PlayHistory:
    n: int
    rounds: int = 0
    node_plus: np.ndarray = None
    pair_counts: np.ndarray = None
    joint_counts: dict[int, int] | None = None

    @classmethod
    def empty(cls, model: IsingModel, keep_joint: bool = True) -> PlayHistory:
        return cls(
            n=model.n,
            node_plus=np.zeros(model.n, dtype=np.int64),
            pair_counts=np.zeros((model.num_edges, 4), dtype=np.int64),
            joint_counts={} if keep_joint and model.n <= JOINT_MAX_NODES else None,
        )

    @classmethod
    def from_assignments(cls, model: IsingModel, xs) -> PlayHistory:
        xs = np.asarray(xs, dtype=np.int64).reshape(-1, model.n)
        hist = cls.empty(model)
        hist.add(model, xs)
        return hist

    def add(self, model: IsingModel, xs: np.ndarray) -> None:
        xs = np.asarray(xs).reshape(-1, self.n)
        u, v = model.edges[:, 0], model.edges[:, 1]
        self.node_plus += (xs == 1).sum(axis=0)
        idx = 2 * (xs[:, u] == 1) + (xs[:, v] == 1)
        for c in range(4):
            self.pair_counts[:, c] += (idx == c).sum(axis=0)
        self.rounds += xs.shape[0]
        if self.joint_counts is not None:
            self._add_keys(((xs == 1).astype(np.int64) << np.arange(self.n)).sum(axis=1))

    def _add_keys(self, keys: np.ndarray) -> None:
        if self.joint_counts is None:
            return
        if self.rounds > JOINT_MAX_ROUNDS:
            self.joint_counts = None
            return
        vals, cnt = np.unique(keys, return_counts=True)
        for k, c in zip(vals.tolist(), cnt.tolist()):
            self.joint_counts[k] = self.joint_counts.get(k, 0) + c

    def copy(self) -> PlayHistory:
        return replace(
            self,
            node_plus=self.node_plus.copy(),
            pair_counts=self.pair_counts.copy(),
            joint_counts=None if self.joint_counts is None else dict(self.joint_counts),
        )

    @property
    def frequencies(self) -> np.ndarray:
        return self.node_plus / max(self.rounds, 1)

    def edge_means(self) -> np.ndarray:
        """Empirical ``E[x_u x_v]`` per edge."""
        return (self.pair_counts @ (_PAIR_U * _PAIR_V)) / max(self.rounds, 1)

    def empirical_distribution(self) -> np.ndarray:
        """Dense ``Q_hat`` over all ``2**n`` assignments (bit ``i`` of the index is node ``i``)."""
        if self.joint_counts is None:
            raise HistoryError("history does not retain joint-action counts")
        q = np.zeros(2**self.n)
        for k, c in self.joint_counts.items():
            q[k] = c
        return q / self.rounds

    def save(self, path) -> None:
        keys = np.array(sorted(self.joint_counts), dtype=np.int64) if self.joint_counts is not None else None
        arrays = dict(n=self.n, rounds=self.rounds, node_plus=self.node_plus, pair_counts=self.pair_counts)
        if keys is not None:
            arrays["joint_keys"] = keys
            arrays["joint_vals"] = np.array([self.joint_counts[k] for k in keys.tolist()], dtype=np.int64)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> PlayHistory:
        with np.load(path) as z:
            joint = None
            if "joint_keys" in z:
                joint = dict(zip(z["joint_keys"].tolist(), z["joint_vals"].tolist()))
            return cls(int(z["n"]), int(z["rounds"]), z["node_plus"].copy(), z["pair_counts"].copy(), joint)


@dataclass(frozen=True)
class MwuConfig:
    regret_kind: str = "external"  # external | swap
    step_kind: str = "constant"  # decaying | constant
    eta: float = 0.01
    iters: int = 10**5

    def __post_init__(self):
        if self.regret_kind not in ("external", "swap"):
            raise ValueError(f"unknown regret kind {self.regret_kind!r}")
        if self.step_kind not in ("decaying", "constant"):
            raise ValueError(f"unknown step kind {self.step_kind!r}")
        if self.step_kind == "constant" and not 0.0 < self.eta < 1.0:
            raise ValueError("constant step size must lie in (0, 1)")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")


MWU_VARIANTS = {
    "mw_er": MwuConfig("external", "decaying"),
    "mw_er_cf": MwuConfig("external", "constant"),
    "mw_sr": MwuConfig("swap", "decaying"),
    "mw_sr_cf": MwuConfig("swap", "constant"),
}


def mwu_update(p_plus: float, eta: float, gain_plus: float, gain_minus: float) -> float:
    """One multiplicative step on a two-action mixed strategy (returns new P(+1))."""
    a = p_plus * (1 - eta * (1 - gain_plus))
    b = (1 - p_plus) * (1 - eta * (1 - gain_minus))
    return a / (a + b)


def stationary_plus(q_given_minus: float, q_given_plus: float) -> float:
    """P(+1) under the stationary law of the 2x2 chain with columns ``q(. | a)``.

    ``q_given_a`` is the probability that the sub-learner attached to action
    ``a`` recommends +1.  A chain with two absorbing states has no unique
    stationary law; the uniform fixed point is returned then.
    """
    den = q_given_minus + (1.0 - q_given_plus)
    return 0.5 if den <= 0.0 else q_given_minus / den


def _graph_args(model):
    indptr, nbr, wts, _ = model.adjacency
    return (indptr, nbr, wts, model.biases, model.payoff_range,
            np.ascontiguousarray(model.edges[:, 0]), np.ascontiguousarray(model.edges[:, 1]))


def _run_chunks(model, iters, keep_joint, checkpoints, step):
    hist = PlayHistory.empty(model, keep_joint=keep_joint and iters <= JOINT_MAX_ROUNDS)
    snaps = {}
    marks = sorted({c for c in (checkpoints or ()) if 0 < c <= iters} | {iters})
    chunk = max(1, _CHUNK_CELLS // model.n)
    t = 0
    for mark in marks:
        while t < mark:
            s = min(chunk, mark - t)
            keys = np.zeros(s if hist.joint_counts is not None else 0, dtype=np.int64)
            step(t, s, hist, keys)
            hist.rounds += s
            hist._add_keys(keys)
            t += s
        snaps[mark] = hist.copy()
    return hist, snaps


def mwu_run(model: IsingModel, cfg: MwuConfig, seed: int = 0, keep_joint: bool = True,
            checkpoints=None):
    """Simultaneous multiplicative-weights play.

    Every round each player samples from its mixed strategy, then all
    players update on the realized opponents' actions.  The swap variant
    runs one sub-learner per action and plays the stationary distribution
    of their recommendations, feeding each sub-learner the loss weighted by
    the probability of its action.

    Returns ``(history, marginals)``; with ``checkpoints`` a third item maps
    each checkpoint round to a snapshot of the history.
    """
    rng = stream(seed, "mwu")
    args = _graph_args(model)
    n = model.n
    lw = np.zeros((n, 2))
    lsub = np.zeros((n, 2, 2))
    x = np.zeros(n, dtype=np.int64)
    swap = cfg.regret_kind == "swap"
    decaying = cfg.step_kind == "decaying"

    def step(t0, s, hist, keys):
        K.mwu_rounds(*args, lw, lsub, swap, decaying, cfg.eta, t0, rng.random((s, n)), x,
                     hist.node_plus, hist.pair_counts, keys)

    hist, snaps = _run_chunks(model, cfg.iters, keep_joint, checkpoints, step)
    marg = Marginals(hist.frequencies, True, cfg.iters, 0.0)
    return (hist, marg, snaps) if checkpoints else (hist, marg)


def nr_play_probability(last_action: int, avg_switch_regret: float, damping: float = 0.01,
                        mu: float = 1.0) -> float:
    """Probability of playing +1 next, given the last action and its average switching regret."""
    sw = min(max(avg_switch_regret / mu, 0.0), 1.0)
    p = 1.0 - sw if last_action == 1 else sw
    return (1.0 - damping) * p + damping * 0.5


def regret_matching_run(model: IsingModel, iters: int = 10**5, seed: int = 0,
                        damping: float = 0.01, mu: float = 1.0, keep_joint: bool = True,
                        checkpoints=None):
    """Damped regret matching.

    Each player switches away from its last action with probability equal
    to the positive part of its average (normalized) regret for that
    switch, divided by ``mu``; the resulting probability of +1 is then
    shrunk toward 1/2 by ``damping``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = stream(seed, "nr")
    args = _graph_args(model)
    n = model.n
    x = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int64)
    regret = np.zeros((n, 2))

    def step(t0, s, hist, keys):
        K.nr_rounds(*args, regret, mu, damping, t0, rng.random((s, n)), x,
                    hist.node_plus, hist.pair_counts, keys)

    hist, snaps = _run_chunks(model, iters, keep_joint, checkpoints, step)
    marg = Marginals(hist.frequencies, True, iters, 0.0)
    return (hist, marg, snaps) if checkpoints else (hist, marg)


@dataclass(frozen=True)
class RegretReport:
    external: np.ndarray
    swap: np.ndarray
    external_norm: np.ndarray
    swap_norm: np.ndarray

    @property
    def epsilon_cce(self) -> float:
        return float(self.external.max(initial=0.0))

    @property
    def epsilon_ce(self) -> float:
        return float(self.swap.max(initial=0.0))

    @property
    def epsilon_cce_norm(self) -> float:
        return float(self.external_norm.max(initial=0.0))

    @property
    def epsilon_ce_norm(self) -> float:
        return float(self.swap_norm.max(initial=0.0))


def _conditional_gains(model: IsingModel, hist: PlayHistory) -> tuple[np.ndarray, np.ndarray]:
    """Average gain of switching a -> -a over the rounds where player i played a.

    Returns ``(g_minus, g_plus)``; computed from per-edge action-pair counts.
    """
    T = hist.rounds
    n = model.n
    cnt_plus = hist.node_plus.astype(np.float64)
    cnt_minus = T - cnt_plus
    # sum over rounds with x_i = a of h_i = b_i * count_a + sum_j w_ij * sum x_j over those rounds
    hs_plus = model.biases * cnt_plus
    hs_minus = model.biases * cnt_minus
    pc = hist.pair_counts.astype(np.float64)
    u, v = model.edges[:, 0], model.edges[:, 1]
    w = model.weights
    # node u side: rounds with x_u = +1 are columns 2,3; x_v value is -1,+1
    np.add.at(hs_plus, u, w * (pc[:, 3] - pc[:, 2]))
    np.add.at(hs_minus, u, w * (pc[:, 1] - pc[:, 0]))
    # node v side: rounds with x_v = +1 are columns 1,3; x_u value is -1,+1
    np.add.at(hs_plus, v, w * (pc[:, 3] - pc[:, 1]))
    np.add.at(hs_minus, v, w * (pc[:, 2] - pc[:, 0]))
    # switching +1 -> -1 changes the payoff by -2h; -1 -> +1 by +2h
    g_plus = -2.0 * hs_plus / T
    g_minus = 2.0 * hs_minus / T
    return g_minus, g_plus


def empirical_regret(model: IsingModel, hist: PlayHistory) -> RegretReport:
    """External and swap regret of every player against the realized history.

    Both are reported raw and divided by the payoff range ``2 R_i``.  Regret
    is the positive part of the best deviation gain (the identity
    deviation is always available).
    """
    if hist.rounds < 1:
        raise HistoryError("empty history")
    g_minus, g_plus = _conditional_gains(model, hist)
    external = np.maximum(0.0, np.maximum(g_minus, g_plus))
    swap = np.maximum(0.0, g_minus) + np.maximum(0.0, g_plus)
    scale = 2.0 * model.payoff_range
    safe = np.where(scale > 0, scale, 1.0)
    return RegretReport(external, swap, np.where(scale > 0, external / safe, 0.0),
                        np.where(scale > 0, swap / safe, 0.0))


def _entropy(q: np.ndarray) -> float:
    q = q[q > 0]
    return float(-(q * np.log(q)).sum())


def _check_small(model: IsingModel, max_n: int):
    if model.n > max_n:
        raise HistoryError(f"explicit distributions need n <= {max_n}, model has {model.n}")


@dataclass(frozen=True)
class CertificateReport:
    epsilon_ce: float
    epsilon_ce_per_player: np.ndarray
    cross_entropy: float  # H(Q, P)
    cross_entropy_rhs: np.ndarray  # per player: min over fixed actions of H(Q'_i Q_-i, P)
    kl: float  # KL(Q || P)
    kl_rhs: np.ndarray  # per player: min_{Q'_i}[KL(Q'_i Q_-i || P) + H(Q'_i)] - H(Q_i | Q_-i)
    entropy: float

    @property
    def cross_entropy_slack(self) -> float:
        return float(self.cross_entropy_rhs.min() - self.cross_entropy)

    @property
    def kl_slack(self) -> float:
        return float(self.kl_rhs.min() - self.kl)

    @property
    def is_ce(self) -> bool:
        return self.epsilon_ce <= 1e-9


def ce_variational_certificate(model: IsingModel, q, max_n: int = 12) -> CertificateReport:
    """Check the cross-entropy and KL inequalities every correlated equilibrium satisfies.

    ``q`` is a dense distribution over the ``2**n`` assignments, indexed as
    in :func:`isinggame.model.all_assignments`.  The inner minimum over a
    player's replacement strategy is linear in that strategy, so it is
    attained at a pure action and evaluated there.
    """
    _check_small(model, max_n)
    q = np.asarray(q, dtype=np.float64)
    n = model.n
    if q.shape != (2**n,):
        raise HistoryError(f"distribution must have {2**n} entries")
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise HistoryError("distribution is not normalized")
    xs = all_assignments(n).astype(np.float64)
    u, v = model.edges[:, 0], model.edges[:, 1]
    psi = xs @ model.biases + (xs[:, u] * xs[:, v]) @ model.weights
    log_z = brute_force(model).log_Z
    logp = psi - log_z
    cross = float(-(q @ logp))
    h_q = _entropy(q)
    idx = np.arange(2**n)

    eps = np.zeros(n)
    ce_rhs = np.zeros(n)
    kl_rhs = np.zeros(n)
    for i in range(n):
        bit = 1 << i
        # deviation gain of switching i's action in each state: -2 x_i h_i(x)
        hi = model.biases[i] + xs @ _neighbor_row(model, i)
        gain = -2.0 * xs[:, i] * hi
        plus = xs[:, i] > 0
        eps[i] = max(0.0, float(q[plus] @ gain[plus]), float(q[~plus] @ gain[~plus]))
        # Q_-i(x_-i) indexed by the state with bit i cleared
        base = idx & ~bit
        q_minus = np.zeros(2**n)
        np.add.at(q_minus, base, q)
        q_minus_states = q_minus[base[~plus]]  # aligned with states where x_i = -1
        states_m = idx[~plus]
        states_p = states_m | bit
        ce_m = float(q_minus_states @ (-logp[states_m]))
        ce_p = float(q_minus_states @ (-logp[states_p]))
        ce_rhs[i] = min(ce_m, ce_p)
        h_minus = _entropy(q_minus_states)
        cond = h_q - h_minus
        # KL(delta_a Q_-i || P) + H(delta_a) = cross-entropy - H(Q_-i)
        kl_m = float(q_minus_states @ (np.log(np.where(q_minus_states > 0, q_minus_states, 1.0)) - logp[states_m]))
        kl_p = float(q_minus_states @ (np.log(np.where(q_minus_states > 0, q_minus_states, 1.0)) - logp[states_p]))
        kl_rhs[i] = min(kl_m, kl_p) - cond
    return CertificateReport(
        epsilon_ce=float(eps.max(initial=0.0)),
        epsilon_ce_per_player=eps,
        cross_entropy=cross,
        cross_entropy_rhs=ce_rhs,
        kl=cross - h_q,
        kl_rhs=kl_rhs,
        entropy=h_q,
    )


def _neighbor_row(model: IsingModel, i: int) -> np.ndarray:
    row = np.zeros(model.n)
    indptr, nbr, wts, _ = model.adjacency
    row[nbr[indptr[i]:indptr[i + 1]]] = wts[indptr[i]:indptr[i + 1]]
    return row


def logZ_lower_bound(model: IsingModel, hist: PlayHistory) -> float:
    """``E_Q[psi] + H(Q)`` at the empirical distribution of play; never exceeds ``ln Z``."""
    if hist.joint_counts is None:
        raise HistoryError("lower bound needs the joint-action counts of the history")
    counts = np.array(list(hist.joint_counts.values()), dtype=np.float64)
    keys = np.array(list(hist.joint_counts.keys()), dtype=np.int64)
    q = counts / hist.rounds
    xs = ((keys[:, None] >> np.arange(model.n)) & 1) * 2.0 - 1.0
    u, v = model.edges[:, 0], model.edges[:, 1]
    psi = xs @ model.biases + (xs[:, u] * xs[:, v]) @ model.weights
    return float(q @ psi) + _entropy(q)
