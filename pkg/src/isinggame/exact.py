"""Exact marginals and log-partition function.

Two independent routes: exhaustive enumeration for any small graph, and a
column transfer matrix for ``d x d`` grids.  Both accumulate in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from isinggame.model import IsingModel, ModelError

BRUTE_FORCE_CAP = 25
TRANSFER_CAP = 16
_BLOCK_BITS = 16


class OracleInfeasible(ModelError):
    """The requested exact computation is too large or not applicable."""


@dataclass(frozen=True)
class ExactResult:
    marginals: np.ndarray
    log_Z: float
    edge_corr: np.ndarray | None = None  # E[x_u x_v] per edge, enumeration only


def brute_force(model: IsingModel, cap: int = BRUTE_FORCE_CAP) -> ExactResult:
    """Enumerate all ``2**n`` assignments.

    The state space is split into fixed blocks of low bits; each block is
    reduced with a max shift and blocks are merged in index order, so the
    result does not depend on how the work is scheduled.
    """
    n = model.n
    if n > cap:
        raise OracleInfeasible(
            f"brute force over n={n} nodes exceeds the cap of {cap}; "
            "use the transfer-matrix oracle for grid models"
        )
    low = min(n, _BLOCK_BITS)
    k = np.arange(2**low, dtype=np.int64)[:, None]
    low_bits = ((k >> np.arange(low)) & 1).astype(np.float64) * 2 - 1
    u, v = model.edges[:, 0], model.edges[:, 1]

    run_max = -np.inf
    z = 0.0
    plus = np.zeros(n)
    corr = np.zeros(model.num_edges)
    for hi in range(2 ** (n - low)):
        high_bits = ((hi >> np.arange(n - low)) & 1).astype(np.float64) * 2 - 1
        x = np.empty((low_bits.shape[0], n))
        x[:, :low] = low_bits
        x[:, low:] = high_bits
        pair = x[:, u] * x[:, v]
        psi = x @ model.biases + pair @ model.weights
        m = psi.max()
        wts = np.exp(psi - m)
        if m > run_max:
            scale = np.exp(run_max - m)
            z, plus, corr = z * scale, plus * scale, corr * scale
            run_max = m
        else:
            wts = wts * np.exp(m - run_max)
        z += wts.sum()
        plus += wts @ (x > 0)
        corr += wts @ pair
    return ExactResult(
        marginals=np.clip(plus / z, 0.0, 1.0),
        log_Z=float(run_max + np.log(z)),
        edge_corr=corr / z,
    )


def _couple(f: np.ndarray, w_rows: np.ndarray, spins: np.ndarray, d: int) -> np.ndarray:
    """``g(s') = logsumexp_s f(s) + sum_r w_r x_r(s) x_r(s')``, one row at a time."""
    for r in range(d):
        w = w_rows[r]
        g = f.reshape(2 ** (d - r - 1), 2, 2**r)
        down, up = g[:, 0, :], g[:, 1, :]  # spin -1 / +1 in row r
        out = np.empty_like(g)
        out[:, 0, :] = np.logaddexp(down + w, up - w)
        out[:, 1, :] = np.logaddexp(down - w, up + w)
        f = out.reshape(-1)
    return f


def transfer_matrix(model: IsingModel, cap: int = TRANSFER_CAP) -> ExactResult:
    """Column-by-column forward/backward pass over a grid model.

    A column state ``s`` packs the spins of column ``c`` with row ``r`` in
    bit ``r``.  Horizontal couplings are absorbed one row at a time, so each
    column step costs ``O(d 2^d)`` and holds two length-``2^d`` vectors.
    """
    d = model.grid_d
    if d is None:
        raise OracleInfeasible("transfer matrix needs a grid model (grid_d unset)")
    if d > cap:
        raise OracleInfeasible(f"grid dimension {d} exceeds transfer-matrix cap {cap}")
    S = 2**d
    k = np.arange(S, dtype=np.int64)[:, None]
    spins = ((k >> np.arange(d)) & 1).astype(np.float64) * 2 - 1  # (S, d)

    W = np.zeros((d, d))  # horizontal: (r, c) -- (r, c+1)
    V = np.zeros((d, d))  # vertical:   (r, c) -- (r+1, c)
    for (a, b), w in zip(model.edges, model.weights):
        ra, ca = divmod(int(a), d)
        if b == a + 1:
            W[ra, ca] = w
        else:
            V[ra, ca] = w
    B = model.biases.reshape(d, d)

    def column_energy(c: int) -> np.ndarray:
        e = spins @ B[:, c]
        if d > 1:
            e = e + (spins[:, :-1] * spins[:, 1:]) @ V[:-1, c]
        return e

    energies = [column_energy(c) for c in range(d)]
    alpha = [energies[0]]
    for c in range(1, d):
        alpha.append(_couple(alpha[-1], W[:, c - 1], spins, d) + energies[c])
    log_z = float(logsumexp(alpha[-1]))

    marg = np.zeros((d, d))
    beta = np.zeros(S)
    up_mask = spins > 0
    for c in range(d - 1, -1, -1):
        if c < d - 1:
            beta = _couple(energies[c + 1] + beta, W[:, c], spins, d)
        lp = alpha[c] + beta
        for r in range(d):
            marg[r, c] = np.exp(logsumexp(lp[up_mask[:, r]]) - log_z)
    return ExactResult(marginals=np.clip(marg.reshape(-1), 0.0, 1.0), log_Z=log_z)


def exact(model: IsingModel, method: str = "auto") -> ExactResult:
    if method == "brute":
        return brute_force(model)
    if method == "transfer":
        return transfer_matrix(model)
    if method != "auto":
        raise ValueError(f"unknown exact method {method!r}")
    if model.n <= 16:
        return brute_force(model)
    if model.grid_d is not None and model.grid_d <= TRANSFER_CAP:
        return transfer_matrix(model)
    if model.n <= BRUTE_FORCE_CAP:
        return brute_force(model)
    raise OracleInfeasible(f"no exact oracle for n={model.n} (grid_d={model.grid_d})")
