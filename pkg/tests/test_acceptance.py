"""Acceptance suite: one test per release criterion.

Each test prints a single CRITERION line so the -v log reads as a checklist.
The shared instance is an l2-regularized logistic problem with N=200
samples, M=32 features split over a K=4 ring, reg_coeff 1e-2, and the
default step-size schedule.
"""

import time

import numpy as np
import pytest

from featnet import algorithms, diffusion, harness, model, topology
from featnet.data import make_synthetic, partition_features, shard
from featnet.harness import build_topology, compute_reference, fit_linear_rate

REG_COEFF = 1e-2


class Instance:
    def __init__(self, N, M, K, topo, seed=0, loss_name="logistic"):
        self.dataset = make_synthetic(N, M, seed=seed, model=loss_name)
        self.shards = shard(self.dataset, partition_features(M, K))
        self.A = topo
        self.loss = model.make_loss(loss_name)
        self.reg = model.l2_regularizer(REG_COEFF)
        self.reference = compute_reference(self.dataset, self.loss, self.reg)
        self.mu = algorithms.default_step_size(
            self.loss, self.reg, float(np.max(self.shards[0].full_norms_sq)), N)


@pytest.fixture(scope="module")
def inst():
    return Instance(200, 32, 4, build_topology({"kind": "ring", "n_agents": 4}))


@pytest.fixture(scope="module")
def vrd2_trace(inst):
    # 200N iteration budget.
    return algorithms.run_vrd2(inst.shards, inst.A, inst.loss, inst.reg,
                               inst.mu, 200 * 200, seed=1,
                               reference=inst.reference, record_every=200)


def test_criterion_01_exact_convergence(inst, vrd2_trace):
    start = time.time()
    excess = vrd2_trace.column("excess_risk")
    iters = vrd2_trace.column("iteration")
    below = iters[excess < 1e-10]
    assert below.size > 0, "never reached excess risk < 1e-10"
    assert below[0] <= 200 * 200
    decaying = excess > 1e-10
    slope, r2 = fit_linear_rate(vrd2_trace,
                                window=(iters[decaying][0], iters[decaying][-1]),
                                return_r2=True)
    assert slope < 0
    assert r2 >= 0.98
    assert time.time() - start < 30.0
    print(f"CRITERION 1: PASS (excess<1e-10 at iter {int(below[0])}, R2={r2:.4f})")


def test_criterion_02_naive_bias_floor(inst):
    def plateau(mu, seed):
        tr = algorithms.run_naive(inst.shards, inst.A, inst.loss, inst.reg, mu,
                                  8000, seed=seed, reference=inst.reference,
                                  record_every=200)
        ex = tr.column("excess_risk")
        return float(np.median(ex[len(ex) // 2:]))

    ratios, full, half = [], [], []
    for seed in range(5):
        trv = algorithms.run_vrd2(inst.shards, inst.A, inst.loss, inst.reg,
                                  inst.mu, 8000, seed=seed,
                                  reference=inst.reference, record_every=200)
        terminal = max(float(np.median(trv.column("excess_risk")[-5:])), 1e-300)
        p = plateau(inst.mu, seed)
        full.append(p)
        half.append(plateau(inst.mu / 2, seed))
        ratios.append(p / terminal)
    assert np.median(ratios) >= 100.0
    assert np.median(half) < np.median(full)
    print(f"CRITERION 2: PASS (plateau/terminal median {np.median(ratios):.1e}, "
          f"plateau {np.median(full):.1e} -> {np.median(half):.1e} at mu/2)")


def test_criterion_03_reduction_equivalences():
    ds = make_synthetic(60, 8, seed=3, model="logistic")
    loss = model.LogisticLoss()
    reg = model.l2_regularizer(REG_COEFF)
    kw = dict(record_every=1, record_weights=True)

    def max_gap(t1, t2):
        assert len(t1.weights) == len(t2.weights) == 1000
        return max(float(np.max(np.abs(a - b))) for a, b in zip(t1.weights, t2.weights))

    start = time.time()
    A4 = build_topology({"kind": "ring", "n_agents": 4})
    sh4 = shard(ds, partition_features(8, 4))
    gap_p = max_gap(
        algorithms.run_pvrd2(sh4, A4, loss, reg, 0.05, 1, 1, 1000, seed=7, **kw),
        algorithms.run_vrd2(sh4, A4, loss, reg, 0.05, 1000, seed=7, **kw))
    assert gap_p <= 1e-12
    assert time.time() - start < 10.0

    start = time.time()
    A1 = build_topology({"kind": "complete", "n_agents": 1})
    sh1 = shard(ds, partition_features(8, 1))
    gap_s = max_gap(
        algorithms.run_vrd2(sh1, A1, loss, reg, 0.05, 1000, seed=7, **kw),
        algorithms.run_centralized_saga(ds, loss, reg, 0.05, 1000, seed=7, **kw))
    assert gap_s <= 1e-12
    assert time.time() - start < 10.0

    start = time.time()
    gap_n = max_gap(
        algorithms.run_naive(sh1, A1, loss, reg, 0.05, 1000, seed=7, **kw),
        algorithms.run_centralized_sgd(ds, loss, reg, 0.05, 1000, seed=7, **kw))
    assert gap_n <= 1e-12
    assert time.time() - start < 10.0
    print(f"CRITERION 3: PASS (gaps pvrd2={gap_p:.1e}, saga={gap_s:.1e}, sgd={gap_n:.1e})")


def test_criterion_04_unbiasedness_and_fault_injection(inst, vrd2_trace):
    worst = float(np.nanmax(vrd2_trace.column("unbias_max")))
    assert worst <= 1e-9
    report = harness.audit_invariants(vrd2_trace)
    assert report["unbiasedness"]["pass"]

    def corrupt(i, mem, w):
        if i == 50:
            mem.u += 1e-3

    tampered = algorithms.run_vrd2(inst.shards, inst.A, inst.loss, inst.reg,
                                   inst.mu, 200, seed=1, record_every=1,
                                   fault_hook=corrupt)
    bad = harness.audit_invariants(tampered)
    assert not bad["unbiasedness"]["pass"]
    assert not bad["all_pass"]
    print(f"CRITERION 4: PASS (worst residual {worst:.1e}, fault injection trips audit)")


def test_criterion_05_online_gradient_sum(inst, vrd2_trace):
    drift = vrd2_trace.column("gradsum_drift")
    finite = drift[np.isfinite(drift)]
    assert finite.size >= 10, "need at least 10 checkpoints"
    assert float(np.max(finite)) <= 1e-8
    print(f"CRITERION 5: PASS ({finite.size} checkpoints, worst drift {np.max(finite):.1e})")


@pytest.mark.parametrize("J", [1, 3, 7])
def test_criterion_06_pipeline_algebra(J):
    A = build_topology({"kind": "ring", "n_agents": 4})
    AJ = np.linalg.matrix_power(A.weights, J)
    q = diffusion.PipelineQueue(J, 4, batch_size=1, n_classes=1)
    rng = np.random.default_rng(J)
    pending = {}
    worst = 0.0
    for i in range(4 * J):
        z0 = rng.standard_normal((1, 4, 1))
        pending[i] = z0
        zJ, _, nout, _ = q.push_pop(A, z0, np.zeros((1, 4, 1)),
                                    np.array([i]), iteration=i)
        if nout[0] >= 0:
            pushed_round = int(nout[0])
            assert i - pushed_round == J - 1, "pop delay must be exactly J-1"
            expect = np.einsum("lk,blc->bkc", AJ, pending.pop(pushed_round))
            worst = max(worst, float(np.max(np.abs(zJ - expect))))
    assert worst <= 1e-12
    print(f"CRITERION 6: PASS (J={J}, worst pipeline residual {worst:.1e})")


def test_criterion_07_pipeline_depth_ordering():
    ds = make_synthetic(400, 64, seed=0, model="logistic")
    shards = shard(ds, partition_features(64, 8))
    A = build_topology({"kind": "ring", "n_agents": 8})
    loss = model.LogisticLoss()
    reg = model.l2_regularizer(REG_COEFF)
    ref = compute_reference(ds, loss, reg)
    medians = []
    for J in (1, 5, 10, 20):
        B = 30 - J
        slopes = []
        for seed in range(5):
            tr = algorithms.run_pvrd2(shards, A, loss, reg, 0.15, J, B, 3000,
                                      seed=seed, reference=ref, record_every=100)
            ex = tr.column("excess_risk")
            it = tr.column("iteration")
            sel = ex > 1e-12
            slopes.append(fit_linear_rate(tr, window=(it[sel][0], it[sel][-1]),
                                          x_axis="gradient_evals"))
        medians.append(float(np.median(slopes)))
    # Weakly improving with J, allowing saturation (5% slack on ties).
    for prev, nxt in zip(medians, medians[1:]):
        assert nxt <= prev + 0.05 * abs(prev)
    print("CRITERION 7: PASS (median slopes per gradient eval: "
          + ", ".join(f"{m:.2e}" for m in medians) + ")")


def test_criterion_08_topology_density_ordering():
    start = time.time()
    ds = make_synthetic(300, 56, seed=0, model="logistic")
    shards = shard(ds, partition_features(56, 28))
    loss = model.LogisticLoss()
    reg = model.l2_regularizer(REG_COEFF)
    ref = compute_reference(ds, loss, reg)
    medians = []
    lams = []
    for radius in (0.3, 0.4, 0.6, np.sqrt(2.0)):
        A = topology.build_metropolis_weights(
            topology.build_random_geometric_graph(28, radius, seed=1))
        lams.append(A.lam)
        slopes = []
        for seed in range(5):
            tr = algorithms.run_pvrd2(shards, A, loss, reg, 0.15, 20, 10, 2000,
                                      seed=seed, reference=ref, record_every=100)
            ex = tr.column("excess_risk")
            it = tr.column("iteration")
            sel = ex > 1e-12
            slopes.append(fit_linear_rate(tr, window=(it[sel][0], it[sel][-1])))
        medians.append(float(np.median(slopes)))
    assert all(a > b for a, b in zip(lams, lams[1:])), "density must reduce lambda"
    for prev, nxt in zip(medians, medians[1:]):
        assert nxt <= prev + 0.05 * abs(prev)
    assert time.time() - start < 300.0
    print("CRITERION 8: PASS (median slopes by radius: "
          + ", ".join(f"{m:.2e}" for m in medians) + ")")


def test_criterion_09_communication_accounting():
    from featnet.trace import comm_per_edge_per_iter

    pvrd2 = comm_per_edge_per_iter("pvrd2", J=10, C=10, B=10)
    dense = comm_per_edge_per_iter("model_distributed", C=10, M=3072)
    assert pvrd2 == 1000
    assert dense == 30720
    print(f"CRITERION 9: PASS (pvrd2 {pvrd2}, model-distributed {dense})")


def test_criterion_10_rate_bound_table_and_sanity(inst):
    # Hand-evaluated (lam, J, N, mu, nu) -> rho cases: eight from the
    # general J-depth bound, two from the J=1 corollary.
    table = [
        (0.5, 1, 100, 0.1, 1.0, 1.0 - 0.5 / 200.0),
        (0.0, 1, 1, 1.0, 1.0, 1.0 - 1.0 / 5.0),
        (0.9, 2, 10, 0.01, 0.5, 1.0 - 0.01 * 0.5 / 5.0),
        (0.9, 2, 10, 1.0, 0.5, 1.0 - (1.0 - 0.81) / 20.0),
        (1.0 / 3.0, 1, 200, 0.05, 0.02, 1.0 - 0.05 * 0.02 / 5.0),
        (0.8, 3, 50, 5.0, 0.5, 1.0 - (1.0 - 0.8 ** 3) / 100.0),
        (0.0, 5, 4, 0.4, 1.0, 1.0 - 0.4 / 5.0),
        (0.99, 1, 1000, 1.0, 1.0, 1.0 - 0.01 / 2000.0),
    ]
    for lam, J, N, mu, nu, expect in table:
        assert algorithms.rate_bound(lam, J, N, mu, nu) == expect
    assert algorithms.corollary_rate_bound(0.0, 10, 0.2, 1.0) == 1.0 - 1.0 / 20.0
    assert algorithms.corollary_rate_bound(0.5, 100, 0.1, 1.0) == 1.0 - 0.5 / 200.0

    # Measured decay of an accepted run is no slower than the bound.
    trace = algorithms.run_pvrd2(inst.shards, inst.A, inst.loss, inst.reg,
                                 inst.mu, 5, 2, 4000, seed=3,
                                 reference=inst.reference, record_every=100)
    ex = trace.column("excess_risk")
    it = trace.column("iteration")
    sel = ex > 1e-12
    slope = fit_linear_rate(trace, window=(it[sel][0], it[sel][-1]))
    rho = algorithms.rate_bound(inst.A.lam, 5, 200, inst.mu, inst.reg.nu)
    assert slope <= np.log10(rho)
    print(f"CRITERION 10: PASS (10-case table exact; slope {slope:.2e} "
          f"<= log10(rho) {np.log10(rho):.2e})")


def test_criterion_11_gradient_finite_differences():
    rng = np.random.default_rng(11)
    trials = 100
    worst = 0.0

    def rel_gap(analytic, fd):
        return float(np.max(np.abs(analytic - fd)) / (1.0 + np.max(np.abs(analytic))))

    for _ in range(trials):
        # Score gradients of every loss.
        for loss, y in ((model.LogisticLoss(), rng.choice([-1.0, 1.0])),
                        (model.SquaredLoss(), float(rng.standard_normal())),
                        (model.SoftmaxLoss(4), int(rng.integers(0, 4)))):
            z = rng.standard_normal(loss.n_classes)
            fd = model.central_difference_score_grad(loss, z, y, eps=1e-6)
            worst = max(worst, rel_gap(loss.score_grad(z[None, :], y)[0], fd))

        # Regularizer gradient.
        reg = model.l2_regularizer(float(rng.uniform(0.001, 0.1)))
        w = rng.standard_normal((5, 2))
        fd = np.zeros_like(w)
        for idx in np.ndindex(*w.shape):
            wp, wm = w.copy(), w.copy()
            wp[idx] += 1e-6
            wm[idx] -= 1e-6
            fd[idx] = (reg.value(wp) - reg.value(wm)) / 2e-6
        worst = max(worst, rel_gap(reg.grad(w), fd))

        # Softmax per-column weight gradients with the l2 term.
        C, m = 3, 4
        h = rng.standard_normal(m)
        W = rng.standard_normal((m, C))
        gamma = int(rng.integers(0, C))
        coeff = float(rng.uniform(0.001, 0.1))

        def risk(Wmat):
            z = Wmat.T @ h
            return -np.log(model.softmax_prob(z, gamma)) + 0.5 * coeff * np.sum(Wmat ** 2)

        analytic = model.softmax_column_grads(W.T @ h, gamma, h, W, coeff)
        fd = np.zeros_like(W)
        for idx in np.ndindex(*W.shape):
            Wp, Wm = W.copy(), W.copy()
            Wp[idx] += 1e-6
            Wm[idx] -= 1e-6
            fd[idx] = (risk(Wp) - risk(Wm)) / 2e-6
        worst = max(worst, rel_gap(analytic, fd))

    assert worst <= 1e-6
    print(f"CRITERION 11: PASS ({trials} trials, worst relative gap {worst:.1e})")


def test_criterion_12_determinism(tmp_path):
    cfg = {
        "version": 1,
        "loss": "logistic",
        "reg_coeff": REG_COEFF,
        "dataset": {"kind": "synthetic", "model": "logistic",
                    "n_samples": 100, "n_features": 16, "seed": 4},
        "topology": {"kind": "ring", "n_agents": 4},
        "algorithm": {"name": "pvrd2", "mu": 0.1, "depth": 3, "batch": 2,
                      "iters": 500, "seed": 2},
        "metrics": {"record_every": 10},
    }
    t1, _, ref = harness.run_experiment(cfg)
    t2, _, _ = harness.run_experiment(cfg, reference=ref)
    assert np.array_equal(t1.final_weights, t2.final_weights)
    for col in ("risk", "excess_risk", "msd", "unbias_max"):
        a, b = t1.column(col), t2.column(col)
        assert np.array_equal(a, b, equal_nan=True)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    t1.to_csv(p1)
    t2.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    print("CRITERION 12: PASS (bit-identical traces across invocations)")
