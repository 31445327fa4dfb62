"""End-to-end acceptance criteria, one test (or pair of tests) per criterion.

Each criterion appends a single PASS/FAIL/SKIP line that is printed in the
terminal summary.  Criteria that do not hold for the implemented
algorithms are strict xfails: the line still reads FAIL.
"""

import dataclasses
import gzip
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_graph_model, random_tree_model
from isinggame import harness, mnist, regret
from isinggame.classic import IterationSpec, belief_prop, trw
from isinggame.exact import brute_force, transfer_matrix
from isinggame.fictitious import fp_kl_upper_bound, fp_run, max_spanning_tree, tree_map
from isinggame.model import (ModelClass, all_assignments, generate_model, local_payoff, potential)
from isinggame.stats import (nonconvergence_proportion, paired_z_test, stratified_z_test,
                             two_proportion_test)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
ALPHA = 0.05


def record(num: int, title: str, ok, detail: str) -> None:
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    ACCEPTANCE_LINES.append(f"criterion {num:2d} {status}  {title}: {detail}")


def enum_psi(model, xs):
    xs = xs.astype(np.float64)
    u, v = model.edges[:, 0], model.edges[:, 1]
    return xs @ model.biases + (xs[:, u] * xs[:, v]) @ model.weights


def index_of(x) -> int:
    return int(((np.asarray(x) == 1).astype(np.int64) << np.arange(len(x))).sum())


# --- criterion 1 -----------------------------------------------------------

def test_c01_oracle_equivalence():
    gap_p, gap_z = 0.0, 0.0
    for d in (2, 3, 4):
        for s in range(50):
            m = generate_model(d, ModelClass("mixed", 4.0), 10_000 + 100 * d + s)
            a, b = brute_force(m), transfer_matrix(m)
            gap_p = max(gap_p, float(np.abs(a.marginals - b.marginals).max()))
            gap_z = max(gap_z, abs(a.log_Z - b.log_Z))
    ok = gap_p <= 1e-10 and gap_z <= 1e-9
    record(1, "oracle equivalence", ok, f"150 models, max marginal gap {gap_p:.2e}, max |dlnZ| {gap_z:.2e}")
    assert ok


# --- criterion 2 -----------------------------------------------------------

def test_c02_potential_identity():
    rng = np.random.default_rng(202)
    worst = 0.0
    for k in range(1000):
        d = int(rng.integers(2, 6))
        cls = ModelClass("mixed", 4.0) if k % 2 else ModelClass("signprob", 3.0, float(rng.random()))
        m = generate_model(d, cls, int(rng.integers(2**31)))
        x = rng.choice(np.array([-1, 1], dtype=np.int8), m.n)
        i = int(rng.integers(m.n))
        y = x.copy()
        y[i] = -y[i]
        lhs = local_payoff(m, i, y) - local_payoff(m, i, x)
        rhs = potential(m, y) - potential(m, x)
        worst = max(worst, abs(lhs - rhs))
    ok = worst <= 1e-12
    record(2, "potential-game identity", ok, f"1000 flips, max discrepancy {worst:.2e}")
    assert ok


# --- criterion 3 -----------------------------------------------------------

def test_c03_bp_tree_exactness():
    rng = np.random.default_rng(303)
    err, traj, unconverged = 0.0, 0.0, 0
    for _ in range(100):
        m = random_tree_model(rng, int(rng.integers(2, 13)))
        bp, rec_bp = belief_prop(m, seed=5, record_iters=40)
        _, rec_trw = trw(m, rho=1.0, seed=5, record_iters=40)
        unconverged += not bp.converged
        err = max(err, float(np.abs(bp.p - brute_force(m).marginals).max()))
        assert rec_bp.shape == rec_trw.shape
        traj = max(traj, float(np.abs(rec_bp - rec_trw).max()))
    ok = err <= 1e-6 and traj <= 1e-12 and unconverged == 0
    record(3, "BP tree exactness", ok,
           f"100 trees, max marginal error {err:.2e}, TRW(rho=1) vs BP trajectory gap {traj:.1e}")
    assert ok


# --- criterion 4 -----------------------------------------------------------

def test_c04_tree_map_optimality():
    rng = np.random.default_rng(404)
    bad = 0
    for _ in range(100):
        n = int(rng.integers(3, 13))
        m = random_graph_model(rng, n, extra=n)
        # integer-valued parameters on some models force genuine ties
        if rng.random() < 0.3:
            m = dataclasses.replace(m, weights=rng.integers(-2, 3, m.num_edges).astype(float),
                                    biases=rng.integers(-1, 2, n).astype(float))
        tree = max_spanning_tree(m, rng.normal(size=m.num_edges), rng)
        sub = dataclasses.replace(m, edges=m.edges[tree], weights=m.weights[tree])
        psi = enum_psi(sub, all_assignments(n))
        best = psi.max()
        for _ in range(5):
            x = tree_map(m, tree, rng)
            bad += psi[index_of(x)] != best
    ok = bad == 0
    record(4, "tree_map optimality", ok, f"100 (model, tree) pairs x 5 draws, {bad} non-maximal samples")
    assert ok


# --- criteria 5 and 6 ------------------------------------------------------

CHECKPOINTS = (10**3, 10**4, 10**5)


@pytest.fixture(scope="module")
def mw_runs():
    """``{model_seed: (model, [checkpoint snapshots per run seed])}`` for 10 models x 10 seeds."""
    cfg = regret.MWU_VARIANTS["mw_er"]
    out = {}
    for ms in range(10):
        m = generate_model(3, ModelClass("mixed", 2.0), 500 + ms)
        runs = [regret.mwu_run(m, cfg, seed, checkpoints=CHECKPOINTS)[2] for seed in range(10)]
        out[ms] = (m, runs)
    return out


def test_c05_no_regret_decay(mw_runs):
    medians = np.empty((10, len(CHECKPOINTS)))
    for ms, (m, runs) in mw_runs.items():
        for c, t in enumerate(CHECKPOINTS):
            medians[ms, c] = np.median([regret.empirical_regret(m, snaps[t]).epsilon_cce_norm for snaps in runs])
    final_ok = bool(np.all(medians[:, -1] <= 0.05))
    # "within noise": a later checkpoint may exceed an earlier one by at most 0.005
    mono_ok = bool(np.all(np.diff(medians, axis=1) <= 0.005))
    ok = final_ok and mono_ok
    worst = medians.max(axis=0)
    record(5, "no-regret decay", ok,
           "worst per-model median at 1e3/1e4/1e5 rounds = " + "/".join(f"{v:.4f}" for v in worst))
    assert ok


def test_c06_logz_bound_validity(mw_runs):
    checks = violations = 0
    worst = -np.inf
    for m, runs in mw_runs.values():
        log_z = brute_force(m).log_Z
        for snaps in runs:
            for h in snaps.values():
                gap = regret.logZ_lower_bound(m, h) - log_z
                worst = max(worst, gap)
                violations += gap > 1e-9
                checks += 1
    rng = np.random.default_rng(606)
    for k in range(40):
        d = 3 if k % 2 else 4
        cls = ModelClass("mixed", 4.0) if k % 4 < 2 else ModelClass("signprob", 4.0, 0.5)
        m = generate_model(d, cls, 600 + k)
        log_z = brute_force(m).log_Z
        for variant in ("ce", "msne"):
            _, state = fp_run(m, int(rng.integers(5, 40)), variant, seed=k)
            e_w, h = fp_kl_upper_bound(m, state)
            for bound in (regret.logZ_lower_bound(m, state.history), e_w + h):
                gap = bound - log_z
                worst = max(worst, gap)
                violations += gap > 1e-9
                checks += 1
    ok = violations == 0
    record(6, "ln Z bound validity", ok, f"{checks} histories, {violations} violations, max bound - lnZ {worst:.3g}")
    assert ok


# --- criterion 7 -----------------------------------------------------------

def pure_equilibria(m):
    xs = all_assignments(m.n)
    fields = np.stack([m.local_fields(x) for x in xs])
    return xs[np.all(xs * fields >= 0, axis=1)]


def test_c07_ce_certificate_consistency():
    rng = np.random.default_rng(707)
    certified, min_slack, non_ce = 0, np.inf, []
    while certified < 20:
        m = random_graph_model(rng, int(rng.integers(2, 7)), extra=3, scale=3.0)
        eq = pure_equilibria(m)
        q = np.zeros(2**m.n)
        if certified % 2 and len(eq) >= 2:
            q[[index_of(x) for x in eq]] = rng.dirichlet(np.ones(len(eq)))
        else:
            q[index_of(eq[0])] = 1.0
        rep = regret.ce_variational_certificate(m, q)
        assert rep.epsilon_ce <= 1e-9
        min_slack = min(min_slack, rep.cross_entropy_slack, rep.kl_slack)
        certified += 1
        # a point mass on a non-equilibrium profile is not a CE
        others = [k for k in range(2**m.n) if k not in {index_of(x) for x in eq}]
        if others:
            q = np.zeros(2**m.n)
            q[others[int(rng.integers(len(others)))]] = 1.0
            non_ce.append(regret.ce_variational_certificate(m, q).epsilon_ce)
    non_ce = np.array(non_ce)
    ok = min_slack >= -1e-9 and non_ce.size >= 5 and bool(np.all(non_ce > 0))
    record(7, "CE certificate consistency", ok,
           f"20 certified CEs, min slack {min_slack:.2e}; {non_ce.size} non-equilibria, min eps_CE {non_ce.min():.3g}")
    assert ok


# --- criterion 8 -----------------------------------------------------------

@pytest.fixture(scope="module")
def mixed_records(tmp_path_factory):
    cfg = harness.ExperimentConfig.load(CONFIGS / "desk_mixed.cfg")
    return harness.run_experiment(cfg, tmp_path_factory.mktemp("mixed") / "out.csv")


def gs_losses(records, w):
    errs = harness.errors_by(records, (8, "mixed", w, -1.0))
    lost = {}
    for a in errs:
        if a != "gs":
            t = paired_z_test(*harness.paired_arrays(errs, "gs", a), alpha=ALPHA)
            if t.decision != "better":
                lost[a] = t
    return lost


def test_c08_gs_best_mixed_w2(mixed_records):
    lost = {w: gs_losses(mixed_records, w) for w in (2.0, 4.0)}
    detail = "; ".join(
        f"w={w:g}: " + (", ".join(f"not better than {a} (p={t.p:.2g})" for a, t in sorted(v.items())) or "beats all")
        for w, v in lost.items())
    record(8, "gs best on mixed models", not any(lost.values()), detail)
    assert not lost[2.0]


@pytest.mark.xfail(strict=True, reason="at w=4 systematic-scan Gibbs from a uniform start is trapped in the "
                   "flipped basin on some models, so it does not beat bp and mw_sr_cf")
def test_c08_gs_best_mixed_w4(mixed_records):
    assert not gs_losses(mixed_records, 4.0)


# --- criteria 9 and 10 -----------------------------------------------------

Q_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@pytest.fixture(scope="module")
def constw_records(tmp_path_factory):
    cfg = harness.ExperimentConfig.load(CONFIGS / "desk_constw.cfg")
    return harness.run_experiment(cfg, tmp_path_factory.mktemp("constw") / "out.csv")


def cell(q):
    return (8, "signprob", 4.0, q)


def constw_tests(records):
    strata = [harness.paired_arrays(harness.errors_by(records, cell(q)), "fp_ce", "bl") for q in Q_GRID]
    fp = stratified_z_test(strata, alpha=ALPHA)
    mid = paired_z_test(*harness.paired_arrays(harness.errors_by(records, cell(0.5)), "trw", "bl"), alpha=ALPHA)
    return fp, mid


def test_c09_fp_ce_beats_baseline(constw_records):
    fp, mid = constw_tests(constw_records)
    ok = fp.decision == "better" and mid.decision == "indistinguishable"
    record(9, "constant-magnitude ordering", ok,
           f"fp_ce vs bl stratified: {fp.decision} (z={fp.z:.3g}); "
           f"trw vs bl at q=0.5: {mid.decision} (z={mid.z:.3g}, mean diff {mid.mean_diff:.2g})")
    assert fp.decision == "better"


@pytest.mark.xfail(strict=True, reason="trw beliefs at q=0.5 sit within ~1e-6 of the baseline, but that "
                   "consistent residual of the stopping tolerance makes the paired test significant")
def test_c09_trw_matches_baseline_at_half(constw_records):
    _, mid = constw_tests(constw_records)
    assert mid.decision == "indistinguishable"


def test_c10_bp_nonconvergence_peaks_mid(constw_records):
    mid = nonconvergence_proportion(constw_records, "bp", {"q": 0.5})
    ends = [r for r in constw_records if r.algorithm == "bp" and r.q in (0.0, 1.0)]
    end = nonconvergence_proportion(ends, "bp")
    p = two_proportion_test(mid.k, mid.n, end.k, end.n)
    ok = mid.value > end.value and (mid.lo > end.hi or p < ALPHA)
    record(10, "bp non-convergence shape", ok,
           f"q=0.5: {mid.k}/{mid.n} [{mid.lo:.2f}, {mid.hi:.2f}]; q in {{0,1}}: {end.k}/{end.n} "
           f"[{end.lo:.2f}, {end.hi:.2f}]; one-sided p={p:.2g}")
    assert ok


# --- criterion 11 ----------------------------------------------------------

def test_c11_determinism(tmp_path):
    cfg = harness.ExperimentConfig.from_dict({
        "name": "det", "d": [3, 4], "samples": 2, "seed": 11,
        "classes": [{"kind": "mixed", "w": 3.0}, {"kind": "signprob", "w": 2.0, "q": 0.5}],
        "algorithms": [{"name": a, **p} for a, p in [
            ("bl", {}), ("mf", {}), ("bp", {"max_iters": 2000}), ("trw", {"max_iters": 2000}),
            ("gs", {"iters": 3000}), ("nr", {"iters": 3000}), ("mw_er", {"iters": 3000}),
            ("mw_er_cf", {"iters": 3000}), ("mw_sr", {"iters": 3000}), ("mw_sr_cf", {"iters": 3000}),
            ("fp_ce", {"m": 8}), ("fp_msne", {"m": 8})]],
    })
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    harness.run_experiment(cfg, a)
    harness.run_experiment(cfg, b)
    # a resumed run from a truncated file must land on the same bytes
    c.write_text("\n".join(a.read_text().splitlines()[:30]) + "\n")
    harness.run_experiment(cfg, c)
    smoke = harness.ExperimentConfig.load(CONFIGS / "smoke.cfg")
    s1, s2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
    harness.run_experiment(smoke, s1)
    harness.run_experiment(smoke, s2, jobs=2)
    same = [a.read_bytes() == b.read_bytes(), a.read_bytes() == c.read_bytes(), s1.read_bytes() == s2.read_bytes()]
    ok = all(same)
    record(11, "determinism", ok, f"rerun / resumed / parallel CSVs identical: {same}")
    assert ok


# --- criterion 12 ----------------------------------------------------------

def idx_fixtures_ok(tmp_path) -> bool:
    rng = np.random.default_rng(1212)
    images = mnist.ImageSet(rng.integers(0, 256, (7, 5, 5), dtype=np.uint8))
    labels = rng.integers(0, 10, 7, dtype=np.uint8)
    raw = mnist.serialize_idx(images)
    back = mnist.parse_idx(raw)
    path = tmp_path / "img.gz"
    path.write_bytes(gzip.compress(raw))
    return (np.array_equal(back.pixels, images.pixels)
            and np.array_equal(mnist.parse_idx(mnist.serialize_idx(labels)), labels)
            and np.array_equal(mnist.read_idx(path).pixels, images.pixels))


def test_c12_mnist_pipeline(tmp_path):
    fixtures = idx_fixtures_ok(tmp_path)
    assert fixtures
    root = mnist.data_dir()
    if root is None or not root.exists():
        record(12, "MNIST pipeline", None, f"IDX fixtures round-trip; dataset absent (set {mnist.DATA_ENV})")
        pytest.skip("MNIST data not available")
    train = mnist.load_split(root, "train")
    weights, _ = mnist.learn_params(mnist.binarize(train.pixels))
    cfg = harness.ExperimentConfig.load(CONFIGS / "desk_mnist.cfg")
    cfg = dataclasses.replace(cfg, algorithms=[a for a in cfg.algorithms if a.name in ("bl", "bp")])
    recs = harness.run_experiment(cfg, tmp_path / "mnist.csv")
    t = paired_z_test(*harness.paired_arrays(harness.errors_by(recs), "bp", "bl"), alpha=ALPHA)
    ok = bool(np.all(weights >= 0)) and t.decision == "better"
    record(12, "MNIST pipeline", ok,
           f"IDX fixtures round-trip; min learned weight {weights.min():.3g}; bp vs bl: {t.decision} (z={t.z:.3g})")
    assert ok
