"""Ising models, their Gibbs potential, and the induced local payoffs.

Spins live in {-1, +1}.  The potential of an assignment ``x`` is

    psi(x) = sum_i b_i x_i + sum_(i,j) w_ij x_i x_j

and player ``i`` of the induced game receives ``x_i * (b_i + sum_j w_ij x_j)``.
Flipping one player's spin changes that player's payoff by exactly the same
amount it changes ``psi``, which is what makes the game a potential game.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from isinggame.rng import stream


class ModelError(ValueError):
    """Raised for malformed models, trees or assignments."""


def build_grid(d: int) -> np.ndarray:
    """Edges of a ``d x d`` planar grid in canonical order.

    Nodes are numbered row-major (``r * d + c``).  Edges are emitted node by
    node in row-major order, the horizontal edge ``(v, v+1)`` before the
    vertical edge ``(v, v+d)``.
    """
    if int(d) != d or d < 2:
        raise ModelError(f"grid dimension must be an integer >= 2, got {d!r}")
    d = int(d)
    edges = []
    for r in range(d):
        for c in range(d):
            v = r * d + c
            if c + 1 < d:
                edges.append((v, v + 1))
            if r + 1 < d:
                edges.append((v, v + d))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class ModelClass:
    """Random model family: ``mixed``, ``attractive`` or ``signprob``."""

    kind: str
    w: float
    q: float | None = None

    def __post_init__(self):
        if self.kind not in ("mixed", "attractive", "signprob"):
            raise ModelError(f"unknown model class {self.kind!r}")
        if not self.w > 0:
            raise ModelError("class magnitude w must be positive")
        if self.kind == "signprob":
            if self.q is None or not 0.0 <= self.q <= 1.0:
                raise ModelError("signprob class needs 0 <= q <= 1")
        elif self.q is not None:
            raise ModelError(f"class {self.kind!r} takes no q")

    @property
    def label(self) -> str:
        if self.kind == "signprob":
            return f"signprob(w={self.w:g},q={self.q:g})"
        return f"{self.kind}(w={self.w:g})"


@dataclass(frozen=True, eq=False)
class IsingModel:
    n: int
    edges: np.ndarray
    weights: np.ndarray
    biases: np.ndarray
    grid_d: int | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        biases = np.array(self.biases, dtype=np.float64).reshape(-1)
        n = int(self.n)
        if n < 1:
            raise ModelError("model needs at least one node")
        if biases.shape != (n,):
            raise ModelError(f"expected {n} biases, got {biases.shape[0]}")
        if weights.shape[0] != edges.shape[0]:
            raise ModelError("one weight per edge required")
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ModelError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ModelError("self-loops are not allowed")
            if np.any(edges[:, 0] > edges[:, 1]):
                raise ModelError("edges must be stored with u < v")
            keys = edges[:, 0] * n + edges[:, 1]
            if np.unique(keys).size != keys.size:
                raise ModelError("duplicate edge")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise ModelError("parameters must be finite")
        if self.grid_d is not None:
            d = int(self.grid_d)
            if n != d * d or not np.array_equal(edges, build_grid(d)):
                raise ModelError(f"grid_d={d} does not match the edge list")
        for arr in (edges, weights, biases):
            arr.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """CSR neighbor structure ``(indptr, nbr, wts, eid)``."""
        n, E = self.n, self.num_edges
        u, v = self.edges[:, 0], self.edges[:, 1]
        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        eid = np.concatenate([np.arange(E), np.arange(E)])
        order = np.lexsort((dst, src))
        src, dst, eid = src[order], dst[order], eid[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        indptr = np.cumsum(indptr)
        return indptr, dst.astype(np.int64), self.weights[eid].copy(), eid.astype(np.int64)

    @cached_property
    def payoff_range(self) -> np.ndarray:
        """``R_i = |b_i| + sum_j |w_ij|``, the half-width of player i's payoffs."""
        r = np.abs(self.biases).copy()
        np.add.at(r, self.edges[:, 0], np.abs(self.weights))
        np.add.at(r, self.edges[:, 1], np.abs(self.weights))
        return r

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.reshape(-1), minlength=self.n)

    def is_connected(self) -> bool:
        parent = list(range(self.n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        comps = self.n
        for a, b in self.edges:
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[ra] = rb
                comps -= 1
        return comps == 1

    def is_tree(self) -> bool:
        return self.num_edges == self.n - 1 and self.is_connected()

    def local_fields(self, x: np.ndarray) -> np.ndarray:
        """``h_i = b_i + sum_j w_ij x_j`` for every node."""
        x = np.asarray(x, dtype=np.float64)
        h = self.biases.copy()
        u, v = self.edges[:, 0], self.edges[:, 1]
        np.add.at(h, u, self.weights * x[v])
        np.add.at(h, v, self.weights * x[u])
        return h

    def with_biases(self, biases: Sequence[float]) -> IsingModel:
        return IsingModel(self.n, self.edges, self.weights, biases, self.grid_d, dict(self.meta))

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "grid_d": self.grid_d,
            "biases": [float(b) for b in self.biases],
            "edges": [
                {"u": int(a), "v": int(b), "w": float(w)}
                for (a, b), w in zip(self.edges, self.weights)
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> IsingModel:
        try:
            edges = [(int(e["u"]), int(e["v"])) for e in data["edges"]]
            weights = [float(e["w"]) for e in data["edges"]]
            return cls(
                n=int(data["n"]),
                edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
                weights=weights,
                biases=[float(b) for b in data["biases"]],
                grid_d=data.get("grid_d"),
                meta=dict(data.get("meta") or {}),
            )
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed model document: {exc}") from exc

    def save(self, path: str | Path) -> None:
        # json writes floats with repr(), the shortest string that round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> IsingModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def grid_model(d: int, weights, biases, meta=None) -> IsingModel:
    return IsingModel(d * d, build_grid(d), weights, biases, grid_d=d, meta=meta or {})


def check_assignment(model: IsingModel, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (model.n,):
        raise ModelError(f"assignment has length {x.shape}, model has {model.n} nodes")
    if not np.all((x == 1) | (x == -1)):
        raise ModelError("assignment entries must be -1 or +1")
    return x.astype(np.int8)


def check_tree(model: IsingModel, tree) -> np.ndarray:
    """Validate a spanning tree given as edge indices into ``model.edges``."""
    tree = np.asarray(tree, dtype=np.int64).reshape(-1)
    if tree.size != model.n - 1:
        raise ModelError(f"spanning tree needs {model.n - 1} edges, got {tree.size}")
    if tree.size and (tree.min() < 0 or tree.max() >= model.num_edges):
        raise ModelError("tree edge index out of range")
    if np.unique(tree).size != tree.size:
        raise ModelError("tree lists an edge twice")
    parent = list(range(model.n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in tree:
        a, b = find(int(model.edges[e, 0])), find(int(model.edges[e, 1]))
        if a == b:
            raise ModelError("tree edges contain a cycle")
        parent[a] = b
    return tree


def potential(model: IsingModel, x) -> float:
    x = check_assignment(model, x).astype(np.float64)
    u, v = model.edges[:, 0], model.edges[:, 1]
    return float(model.biases @ x + model.weights @ (x[u] * x[v]))


def restricted_potential(model: IsingModel, x, tree) -> float:
    """Potential keeping every bias but only the edges listed in ``tree``."""
    x = check_assignment(model, x).astype(np.float64)
    tree = check_tree(model, tree)
    u, v = model.edges[tree, 0], model.edges[tree, 1]
    return float(model.biases @ x + model.weights[tree] @ (x[u] * x[v]))


def local_payoff(model: IsingModel, i: int, x) -> float:
    """Payoff ``x_i (b_i + sum_j w_ij x_j)`` of player ``i``."""
    x = check_assignment(model, x)
    if not 0 <= i < model.n:
        raise ModelError(f"node {i} out of range")
    indptr, nbr, wts, _ = model.adjacency
    lo, hi = indptr[i], indptr[i + 1]
    h = model.biases[i] + float(wts[lo:hi] @ x[nbr[lo:hi]].astype(np.float64))
    return float(x[i] * h)


def normalized_payoff(model: IsingModel, i: int, x) -> float:
    """Local payoff mapped affinely onto [0, 1] using ``R_i``."""
    r = model.payoff_range[i]
    if r == 0:
        return 0.5
    return (local_payoff(model, i, x) + r) / (2 * r)


def generate_model(d: int, model_class: ModelClass, seed: int) -> IsingModel:
    """Random ``d x d`` grid model of the given class.

    Weights and biases come from separate streams, so the bias draw does not
    depend on the class.
    """
    edges = build_grid(d)
    E = edges.shape[0]
    wrng = stream(seed, "weights")
    brng = stream(seed, "biases")
    if model_class.kind == "mixed":
        weights = wrng.uniform(-model_class.w, model_class.w, size=E)
    elif model_class.kind == "attractive":
        weights = wrng.uniform(0.0, model_class.w, size=E)
    else:
        signs = wrng.random(size=E) < model_class.q
        weights = np.where(signs, 1.0, -1.0) * model_class.w
    biases = brng.uniform(-1.0, 1.0, size=d * d)
    meta = {"class": model_class.kind, "w": model_class.w, "q": model_class.q, "seed": int(seed)}
    return IsingModel(d * d, edges, weights, biases, grid_d=d, meta=meta)


def all_assignments(n: int) -> np.ndarray:
    """Every spin vector of length ``n`` as rows; row ``k`` has bit ``i`` of ``k`` at node ``i``."""
    k = np.arange(2**n, dtype=np.int64)[:, None]
    bits = (k >> np.arange(n, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(np.int8)
