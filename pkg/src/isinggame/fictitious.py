"""Sequential fictitious play between a spanning-tree player and a joint-assignment player.

The tree player best-responds to the running edge statistics ``mu_hat`` by
picking a maximum spanning tree under scores ``w_ij * mu_hat_ij``.  The
assignment player best-responds to one tree drawn uniformly from the trees
played so far, i.e. it plays a MAP assignment of the model restricted to
that tree (all biases kept).  The estimate of ``P(X_i = +1)`` is the
frequency of +1 over all assignments played, the initial one included.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from isinggame.classic import Marginals
from isinggame.model import IsingModel, ModelError, check_tree
from isinggame.regret import PlayHistory, _entropy
from isinggame.rng import stream

_TIE_RTOL = 1e-12


class DisconnectedGraph(ModelError):
    pass


def max_spanning_tree(model: IsingModel, edge_scores, rng: np.random.Generator | int = 0) -> np.ndarray:
    """Kruskal's algorithm on descending scores; equal scores are scanned in random order.

    Returns sorted edge indices.  ``rng`` may be a generator or a seed.
    """
    scores = np.asarray(edge_scores, dtype=np.float64)
    if scores.shape != (model.num_edges,):
        raise ModelError("one score per edge required")
    if not isinstance(rng, np.random.Generator):
        rng = stream(int(rng), "tree")
    order = np.lexsort((rng.permutation(model.num_edges), -scores))
    parent = np.arange(model.n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chosen = []
    for e in order:
        a, b = find(model.edges[e, 0]), find(model.edges[e, 1])
        if a != b:
            parent[a] = b
            chosen.append(int(e))
            if len(chosen) == model.n - 1:
                break
    if len(chosen) != model.n - 1:
        raise DisconnectedGraph("graph is not connected; no spanning tree exists")
    return np.sort(np.asarray(chosen, dtype=np.int64))


def _tied(vals: np.ndarray) -> np.ndarray:
    top = vals.max()
    return vals >= top - _TIE_RTOL * max(1.0, abs(top))


def tree_map(model: IsingModel, tree, rng: np.random.Generator | int = 0) -> np.ndarray:
    """A maximizer of the tree-restricted potential, uniform over all maximizers.

    Max-product runs from the leaves to node 0.  Alongside each max message
    we keep, per parent spin, the set of optimal child spins and the number
    of optimal completions of the child's subtree; sampling top-down in
    proportion to those counts draws uniformly from the full argmax set.
    """
    tree = check_tree(model, tree)
    if not isinstance(rng, np.random.Generator):
        rng = stream(int(rng), "map")
    n = model.n
    adj = [[] for _ in range(n)]
    for e in tree:
        a, b = int(model.edges[e, 0]), int(model.edges[e, 1])
        w = float(model.weights[e])
        adj[a].append((b, w))
        adj[b].append((a, w))

    parent = np.full(n, -1)
    pw = np.zeros(n)
    order = []
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        a = queue.popleft()
        order.append(a)
        for b, w in adj[a]:
            if not seen[b]:
                seen[b] = True
                parent[b] = a
                pw[b] = w
                queue.append(b)

    spins = np.array([-1.0, 1.0])
    # node score over own spin (index 0 -> -1, 1 -> +1): bias + best child messages
    score = np.outer(model.biases, spins)
    count = np.ones((n, 2))
    choice = np.zeros((n, 2, 2), dtype=bool)  # choice[c, parent spin, child spin]
    for c in reversed(order[1:]):
        p = parent[c]
        msg = np.empty(2)
        cnt = np.empty(2)
        for sp in range(2):
            vals = score[c] + pw[c] * spins * spins[sp]
            tied = _tied(vals)
            choice[c, sp] = tied
            msg[sp] = vals.max()
            cnt[sp] = count[c][tied].sum()
        score[p] += msg
        count[p] *= cnt

    x = np.zeros(n, dtype=np.int8)
    root_tied = _tied(score[0])
    w0 = np.where(root_tied, count[0], 0.0)
    x[0] = 1 if rng.random() * w0.sum() >= w0[0] else -1
    for c in order[1:]:
        sp = 1 if x[parent[c]] == 1 else 0
        wc = np.where(choice[c, sp], count[c], 0.0)
        x[c] = 1 if rng.random() * wc.sum() >= wc[0] else -1
    return x


@dataclass(frozen=True)
class FpState:
    variant: str
    rounds: int
    mu_hat: np.ndarray  # final running edge statistics
    assignments: np.ndarray  # (m+1, n) spins x^(1..m+1)
    trees: list  # T^(1..m) as sorted edge-index arrays
    picks: np.ndarray  # s_l (1-based) for l = 1..m
    v_log: np.ndarray  # (m+1, E): v^(1) = x^(1) pair products, then v^(2..m+1)
    history: PlayHistory

    def write_log(self, fh) -> None:
        """Line-delimited trace: one line per round with x, T and s."""
        fh.write(f"# variant={self.variant} rounds={self.rounds}\n")
        fh.write("l=1 x=" + "".join("+" if s > 0 else "-" for s in self.assignments[0]) + "\n")
        for l in range(1, self.rounds + 1):
            x = "".join("+" if s > 0 else "-" for s in self.assignments[l])
            tree = ",".join(str(e) for e in self.trees[l - 1])
            fh.write(f"l={l + 1} s={int(self.picks[l - 1])} T={tree} x={x}\n")


def fp_run(model: IsingModel, m: int = 15, variant: str = "ce", seed: int = 0):
    """Run ``m`` rounds of fictitious play; returns ``(marginals, state)``.

    ``variant="ce"`` zeroes the edge statistic update on edges outside the
    tree the assignment player responded to; ``"msne"`` uses every edge.
    """
    if variant not in ("ce", "msne"):
        raise ValueError(f"unknown variant {variant!r}")
    if m < 1:
        raise ValueError("m must be >= 1")
    if not model.is_connected():
        raise DisconnectedGraph("fictitious play needs a connected graph")
    init_rng = stream(seed, "fp-init")
    tree_rng = stream(seed, "fp-tree")
    pick_rng = stream(seed, "fp-pick")
    map_rng = stream(seed, "fp-map")

    u, v = model.edges[:, 0], model.edges[:, 1]
    E = model.num_edges
    xs = np.empty((m + 1, model.n), dtype=np.int8)
    xs[0] = np.where(init_rng.random(model.n) < 0.5, 1, -1)
    v_log = np.empty((m + 1, E))
    v_log[0] = xs[0, u].astype(np.float64) * xs[0, v]
    mu = v_log[0].copy()
    trees = []
    picks = np.empty(m, dtype=np.int64)
    for l in range(1, m + 1):
        trees.append(max_spanning_tree(model, model.weights * mu, tree_rng))
        s = int(pick_rng.integers(1, l + 1))
        picks[l - 1] = s
        t_resp = trees[s - 1]
        x = tree_map(model, t_resp, map_rng)
        xs[l] = x
        vv = x[u].astype(np.float64) * x[v]
        if variant == "ce":
            mask = np.zeros(E)
            mask[t_resp] = 1.0
            vv = vv * mask
        v_log[l] = vv
        mu = (l * mu + vv) / (l + 1)

    p = (xs == 1).mean(axis=0)
    hist = PlayHistory.from_assignments(model, xs)
    state = FpState(variant, m, mu, xs, trees, picks, v_log, hist)
    return Marginals(p, True, m, 0.0), state


def fp_kl_upper_bound(model: IsingModel, state: FpState) -> tuple[float, float]:
    """Return ``(sum_ij w_ij v_ij, H(Q_hat))`` for the empirical distribution of play.

    ``v_ij`` is the empirical mean of ``x_i x_j``.  Their sum bounds ``ln Z``
    from below: it is the variational bound of the zero-field model, and
    ``ln Z`` as a convex function of the biases is smallest at zero field,
    where its gradient (the zero-field magnetization) vanishes.
    """
    hist = state.history
    if hist.joint_counts is None:
        raise ValueError("bound needs the joint counts of the play history")
    q = np.array(list(hist.joint_counts.values()), dtype=np.float64) / hist.rounds
    return float(model.weights @ hist.edge_means()), _entropy(q)
