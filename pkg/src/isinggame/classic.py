"""Comparison baselines: constant 0.5, mean field, loopy BP, TRW and Gibbs sampling.

One "iteration" is a full sweep (mean field, Gibbs) or one parallel round of
message updates (BP, TRW), so iteration budgets are comparable across methods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from isinggame import _kernels as K
from isinggame.model import IsingModel
from isinggame.rng import stream

MESSAGE_JITTER = 1e-3
_GIBBS_CHUNK_CELLS = 1 << 20


@dataclass(frozen=True)
class Marginals:
    p: np.ndarray  # estimate of P(X_i = +1)
    converged: bool = True
    iterations_used: int = 0
    final_delta: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if np.any(p < 0) or np.any(p > 1) or np.any(np.isnan(p)):
            raise ValueError("marginal estimates must lie in [0, 1]")
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class IterationSpec:
    max_iters: int
    tolerance: float
    damping: float = 0.5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 <= self.damping <= 1.0:
            raise ValueError("damping must lie in [0, 1]")


MF_DEFAULT = IterationSpec(max_iters=10**6, tolerance=1e-5, damping=0.0)
BP_DEFAULT = IterationSpec(max_iters=10**5, tolerance=1e-7, damping=0.5)


def baseline(model: IsingModel) -> Marginals:
    return Marginals(np.full(model.n, 0.5), converged=True, iterations_used=0)


def mean_field(model: IsingModel, spec: IterationSpec = MF_DEFAULT, seed: int = 0,
               init: np.ndarray | None = None) -> Marginals:
    """Sequential mean-field (best-response) updates from a random start."""
    indptr, nbr, wts, _ = model.adjacency
    q = stream(seed, "mf-init").random(model.n) if init is None else np.array(init, dtype=np.float64)
    iters, delta, ok = K.mean_field(indptr, nbr, wts, model.biases, q, spec.max_iters, spec.tolerance)
    return Marginals(np.clip(q, 0.0, 1.0), bool(ok), int(iters), float(delta))


def _reverse_index(model: IsingModel) -> np.ndarray:
    indptr, nbr, _, _ = model.adjacency
    pos = {}
    for i in range(model.n):
        for k in range(indptr[i], indptr[i + 1]):
            pos[(i, int(nbr[k]))] = k
    rev = np.empty(nbr.shape[0], dtype=np.int64)
    for i in range(model.n):
        for k in range(indptr[i], indptr[i + 1]):
            rev[k] = pos[(int(nbr[k]), i)]
    return rev


def initial_messages(model: IsingModel, seed: int) -> np.ndarray:
    rng = stream(seed, "messages")
    return 0.5 + rng.uniform(-MESSAGE_JITTER, MESSAGE_JITTER, size=2 * model.num_edges)


def _run_messages(model, spec, seed, rho, record_iters, plain_bp):
    indptr, nbr, wts, _ = model.adjacency
    rev = _reverse_index(model)
    msg = initial_messages(model, seed)
    record = np.zeros((record_iters, msg.shape[0]))
    if plain_bp:
        it, delta, ok = K.bp_loop(indptr, nbr, wts, rev, model.biases, msg,
                                  spec.max_iters, spec.tolerance, spec.damping, record)
    else:
        it, delta, ok = K.trw_loop(indptr, nbr, wts, rev, model.biases, msg, rho,
                                   spec.max_iters, spec.tolerance, spec.damping, record)
    p = K.beliefs(indptr, model.biases, msg, 1.0 if plain_bp else rho)
    out = Marginals(np.clip(p, 0.0, 1.0), bool(ok), int(it), float(delta))
    return out, record[: min(int(it), record_iters)]


def belief_prop(model: IsingModel, spec: IterationSpec = BP_DEFAULT, seed: int = 0,
                record_iters: int = 0):
    """Damped loopy BP with simultaneous updates.

    Convergence means the largest change of any message (as a probability of
    +1) fell to ``spec.tolerance``.  Non-convergent runs report the
    last-iterate beliefs.  With ``record_iters > 0`` the message vectors of
    the first iterations are returned alongside the marginals.
    """
    out, rec = _run_messages(model, spec, seed, 1.0, record_iters, plain_bp=True)
    return (out, rec) if record_iters else out


def trw(model: IsingModel, rho: float = 0.55, spec: IterationSpec = BP_DEFAULT, seed: int = 0,
        record_iters: int = 0):
    """Tree-reweighted BP with every edge-appearance probability set to ``rho``."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    out, rec = _run_messages(model, spec, seed, rho, record_iters, plain_bp=False)
    return (out, rec) if record_iters else out


def gibbs(model: IsingModel, iters: int = 10**6, burn_in_fraction: float = 0.1,
          seed: int = 0, init: np.ndarray | None = None) -> Marginals:
    """Systematic-scan Gibbs sampler; estimates are +1 frequencies over kept sweeps."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not 0.0 <= burn_in_fraction < 1.0:
        raise ValueError("burn_in_fraction must lie in [0, 1)")
    indptr, nbr, wts, _ = model.adjacency
    rng = stream(seed, "gibbs")
    if init is None:
        x = np.where(rng.random(model.n) < 0.5, 1, -1).astype(np.int64)
    else:
        x = np.array(init, dtype=np.int64)
    first_kept = int(burn_in_fraction * iters)
    counts = np.zeros(model.n, dtype=np.int64)
    chunk = max(1, _GIBBS_CHUNK_CELLS // model.n)
    done = 0
    while done < iters:
        s = min(chunk, iters - done)
        K.gibbs_sweeps(indptr, nbr, wts, model.biases, x, rng.random((s, model.n)),
                       counts, first_kept, done)
        done += s
    return Marginals(counts / (iters - first_kept), True, iters, 0.0)
