"""End-to-end acceptance checks.

Each test prints a single ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line with the measured numbers, then asserts the same condition.
"""

import itertools
import math
import time

import numpy as np
import pytest

from balclust.bicriteria import bicriteria_cluster, move_opening
from balclust.core import Constraints, Instance, nearest_index
from balclust.dispatch import estimate_weights, fit_dispatcher, second_sample_size
from balclust.errors import InfeasibleError, InvariantError, NoSolutionError
from balclust.harness import ExperimentConfig, default_scaling_config, run_once, scaling_run
from balclust.instances import brute_force_opt, gen_gaussian_mixture, gen_groups, gen_star
from balclust.kcenter_exact import kcenter_cluster
from balclust.kmeanspp import kmeanspp_balanced
from balclust.lp_relax import build_lp, solve_lp
from balclust.mincostflow import FlowNetwork, check_flow, residual_negative_cycle, solve_mcf


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        return ok
    return emit


def test_criterion_01_oracle_formulas(report):
    t0 = time.perf_counter()
    star = gen_star(3)
    star_vals = tuple(brute_force_opt(star, Constraints(k=k, ell=3 / 31))[0] for k in (1, 2, 3))
    groups = gen_groups(3, 2)
    group_vals = tuple(brute_force_opt(groups, Constraints(k=k, ell=2 / 9))[0] for k in (1, 2, 3))
    secs = time.perf_counter() - t0
    ok = star_vals == (30, 32, 33) and group_vals == (6, 3, 0) and secs < 60
    report(1, ok, f"star OPT_1..3={star_vals} (want (30, 32, 33)), groups={group_vals} "
                  f"(want (6, 3, 0)), {secs:.1f}s")
    assert ok


def _bicriteria_instances():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n = int(rng.integers(10, 21))
        yield Instance.from_points(rng.random((n, 2))), Constraints(k=4, p=2, ell=0.1, cap_L=0.6)


def test_criterion_02_bicriteria_guarantees(report):
    t0 = time.perf_counter()
    worst_med_lp = worst_med_opt = worst_means = worst_factor = 0.0
    bad = []
    for idx, (inst, cons) in enumerate(_bicriteria_instances()):
        n = inst.n
        cap_units = math.ceil(2 * n * cons.cap_L - 1e-9)
        for objective in ("kmedian", "kmeans"):
            a, rep, diag = bicriteria_cluster(inst, cons, objective)
            mult = a.multiplicity_matrix()
            if mult.max() > 2 or np.any(mult.sum(axis=0) != cons.p) or mult.sum(axis=1).max() > cap_units:
                bad.append((idx, objective, "structure"))
            worst_factor = max(worst_factor, rep.max_upper_factor)
            if rep.max_upper_factor > 2.0:
                bad.append((idx, objective, "upper factor"))
            if objective == "kmedian":
                opt, _ = brute_force_opt(inst, cons, "kmedian")
                r_lp = diag["value"] / diag["C_LP"] if diag["C_LP"] > 0 else 0.0
                r_opt = diag["value"] / opt if opt > 0 else 0.0
                worst_med_lp, worst_med_opt = max(worst_med_lp, r_lp), max(worst_med_opt, r_opt)
                if r_lp > 11 or r_opt > 11:
                    bad.append((idx, objective, "ratio"))
            else:
                r = diag["value"] / diag["C_LP"] if diag["C_LP"] > 0 else 0.0
                worst_means = max(worst_means, r)
                if r > 95:
                    bad.append((idx, objective, "ratio"))
    secs = time.perf_counter() - t0
    ok = not bad and secs < 600
    report(2, ok, f"50 instances, worst k-median cost/C_LP={worst_med_lp:.3f}, cost/OPT={worst_med_opt:.3f}, "
                  f"worst k-means cost/C_LP={worst_means:.3f}, worst upper factor={worst_factor:.3f}, "
                  f"failures={bad[:3]}, {secs:.0f}s")
    assert ok


def test_criterion_03_lemma_suites(report):
    rng = np.random.default_rng(7)
    runs = failures = 0
    for objective in ("kmedian", "kmeans", "kcenter"):
        for _ in range(10):
            inst = Instance.from_points(rng.random((int(rng.integers(8, 15)), 2)))
            try:
                bicriteria_cluster(inst, Constraints(k=4, p=2, ell=0.1, cap_L=0.6), objective, check=True)
            except InvariantError:
                failures += 1
            runs += 1
    moves = move_fail = 0
    while moves < 1000:
        inst = Instance.from_points(rng.random((6, 2)))
        prob = build_lp(inst, Constraints(k=3, p=2, ell=0.1, cap_L=0.8), "kmedian")
        sol = solve_lp(prob)
        x, y = sol.x.copy(), sol.y.copy()
        for _ in range(100):
            a = int(rng.choice(np.flatnonzero(y > 1e-9)))
            b = int(rng.choice([i for i in range(6) if i != a]))
            x, y = move_opening(x, y, a, b, float(rng.random() * y[a]))
            load = x @ prob.weights
            tol = 1e-7
            ok_move = (np.all(np.abs(x.sum(axis=0) - 2) <= tol) and np.all(load >= prob.lo * y - tol)
                       and np.all(load <= prob.hi * y + tol) and np.all(x <= y[:, None] + tol)
                       and y.sum() <= 3 + tol)
            move_fail += not ok_move
            moves += 1
    ok = failures == 0 and move_fail == 0
    report(3, ok, f"{runs} checked pipeline runs with {failures} invariant failures; "
                  f"{moves} random moves with {move_fail} broken LP rows")
    assert ok


def test_criterion_04_kcenter_exact(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    done = skipped = 0
    bad = []
    worst = 0.0
    while done < 30:
        n = int(rng.integers(5, 13))
        k = int(rng.integers(1, 4))
        p = int(rng.integers(1, min(2, k) + 1))
        ell = float(rng.choice([0.0, 0.1, 0.2]))
        cons = Constraints(k=k, p=p, ell=ell, cap_L=1.0 if k == 1 else float(rng.choice([0.6, 0.8, 1.0])))
        inst = Instance.from_points(rng.random((n, 2)))
        try:
            a, t, diag = kcenter_cluster(inst, cons)
        except NoSolutionError:
            skipped += 1
            continue
        opt, _ = brute_force_opt(inst, cons, "kcenter")
        mult = a.multiplicity_matrix()
        counts = mult.sum(axis=1)
        if (mult.max() > 1 or np.any(mult.sum(axis=0) != p) or counts.min() < cons.lower_count(n)
                or counts.max() > cons.upper_count(n) or diag["radius"] > 6 * opt + 1e-9):
            bad.append(done)
        if opt > 0:
            worst = max(worst, diag["radius"] / opt)
        done += 1
    secs = time.perf_counter() - t0
    ok = not bad and secs < 600
    report(4, ok, f"30 solved instances ({skipped} without solution skipped), worst radius/OPT={worst:.3f}, "
                  f"violations in {bad}, {secs:.0f}s")
    assert ok


def _enumerate_min_cost(net):
    caps = np.array(net.caps)
    m = caps.size
    grids = np.stack(np.meshgrid(*[np.arange(c + 1) for c in caps], indexing="ij"), -1).reshape(-1, m)
    inc = np.zeros((net.n_nodes, m))
    inc[net.tails, np.arange(m)] += 1
    inc[net.heads, np.arange(m)] -= 1
    feasible = np.all(grids @ inc.T == np.array(net.supply), axis=1)
    if not feasible.any():
        return None
    return float((grids[feasible] @ np.array(net.costs)).min())


def test_criterion_05_mincostflow(report):
    rng = np.random.default_rng(5)
    neg_cycles = non_int = mismatches = enumerated = 0
    for trial in range(100):
        small = trial < 50
        nodes = int(rng.integers(3, 7)) if small else int(rng.integers(5, 40))
        edges = int(rng.integers(3, 13)) if small else int(rng.integers(13, 201))
        net = FlowNetwork(nodes)
        for _ in range(edges):
            u, v = rng.choice(nodes, 2, replace=False)
            net.add_edge(int(u), int(v), int(rng.integers(0, 3 if small else 6)), float(rng.integers(-3, 10)))
        s, t = rng.choice(nodes, 2, replace=False)
        amt = int(rng.integers(1, 3))
        net.supply[s] += amt
        net.supply[t] -= amt
        ref = _enumerate_min_cost(net) if small else None
        try:
            res = solve_mcf(net)
        except InfeasibleError:
            if small:
                enumerated += 1
                mismatches += ref is not None
            continue
        check_flow(net, res)
        non_int += sum(type(f) is not int for f in res.flow)
        neg_cycles += residual_negative_cycle(net, res)
        if small:
            enumerated += 1
            mismatches += ref is None or abs(ref - res.cost) > 1e-9
    ok = neg_cycles == 0 and non_int == 0 and mismatches == 0
    report(5, ok, f"100 networks: {neg_cycles} negative residual cycles, {non_int} non-integral flows, "
                  f"{mismatches} cost mismatches over {enumerated} enumerated networks")
    assert ok


def test_criterion_06_kmeanspp_purity(report):
    t0 = time.perf_counter()
    pure_runs = balanced_runs = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(0, 0.1, (100, 2)), rng.normal(0, 0.1, (100, 2)) + [10.0, 0.0]])
        truth = np.repeat([0, 1], 100)
        a, rep = kmeanspp_balanced(X, Constraints(k=2, ell=0.25, cap_L=0.75), rng=rng)
        lab = a.labels()
        purities = [np.bincount(truth[lab == c]).max() / (lab == c).sum() for c in np.unique(lab)]
        pure_runs += min(purities) >= 0.95
        balanced_runs += rep.feasible
    secs = time.perf_counter() - t0
    ok = pure_runs >= 190 and balanced_runs == 200 and secs < 120
    report(6, ok, f"purity >= 0.95 in {pure_runs}/200 runs, balance held in {balanced_runs}/200, {secs:.1f}s")
    assert ok


def test_criterion_07_weight_estimation(report):
    t0 = time.perf_counter()
    n, eps, delta = 50, 0.1, 0.05
    n_prime = second_sample_size(n, eps, delta)
    rng = np.random.default_rng(70)
    S = rng.standard_normal((n, 2))
    w_ref = np.bincount(nearest_index(rng.standard_normal((10 ** 6, 2)), S), minlength=n) / 10 ** 6
    exceed = 0
    worst = 0.0
    for _ in range(100):
        w_hat = estimate_weights(S, rng.standard_normal((n_prime, 2))).w_hat
        masks = rng.random((1000, n)) < 0.5
        dev = np.abs(masks.astype(float) @ (w_ref - w_hat)).max()
        worst = max(worst, dev)
        exceed += dev > eps
    secs = time.perf_counter() - t0
    ok = exceed <= 10 and secs < 300
    report(7, ok, f"n'={n_prime}, trials exceeding eps={exceed}/100 (max deviation {worst:.4f}), {secs:.0f}s")
    assert ok


def test_criterion_08_dispatch_extension(report):
    k, ell, cap = 4, 0.1, 0.4
    eps = 0.05
    m = 500
    n2 = second_sample_size(m, eps, 0.05)
    fresh = 10 ** 5
    rng = np.random.default_rng(8)
    data = gen_gaussian_mixture(n=m + n2 + fresh, rng=rng).points
    S, Sp, Q = data[:m], data[m:m + n2], data[m + n2:]
    d = fit_dispatcher(S, Sp, Constraints(k=k, p=1, ell=ell, cap_L=cap), "kmeanspp", rng)
    mass = np.bincount(d.route(Q)[:, 0], minlength=d.n_clusters) / fresh
    sigma = np.sqrt(mass * (1 - mass) / fresh)
    lo, hi = ell - eps - 3 * sigma, cap + eps + 3 * sigma
    ok = bool(np.all(mass >= lo) and np.all(mass <= hi))
    report(8, ok, f"{d.n_clusters} clusters, fresh masses {np.round(mass, 4).tolist()} "
                  f"within [{ell - eps:.2f}-3s, {cap + eps:.2f}+3s] (max 3s={3 * sigma.max():.4f})")
    assert ok


@pytest.mark.slow
def test_criterion_09_harness_ordering(report):
    t0 = time.perf_counter()
    acc = {"kmeanspp": [], "bpt": [], "random": []}
    for seed in range(10):
        for disp in acc:
            cfg = ExperimentConfig(dataset="grid", n_train=20000, n_test=5000, dispatcher=disp, k=16,
                                   subsample=1000, seed=seed)
            acc[disp].append(run_once(cfg, seed)["accuracy"])
    med = {d: float(np.median(v)) for d, v in acc.items()}
    secs = time.perf_counter() - t0
    ok = (med["kmeanspp"] - med["bpt"] >= 0.05 and med["kmeanspp"] > med["random"]
          and med["bpt"] > med["random"] and secs < 900)
    report(9, ok, f"median accuracy over 10 seeds: kmeanspp={med['kmeanspp']:.4f}, bpt={med['bpt']:.4f}, "
                  f"random={med['random']:.4f}, {secs:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_10_strong_scaling(report):
    import os
    out = scaling_run(default_scaling_config(), (1, 4))
    w1, w4 = out["timings"][0]["wall"], out["timings"][1]["wall"]
    ratio = w4 / w1
    ok = ratio <= 0.7
    report(10, ok, f"wall 1 thread={w1:.2f}s, 4 threads={w4:.2f}s, ratio={ratio:.3f} (want <= 0.7), "
                   f"cpus available={len(os.sched_getaffinity(0))}")
    assert ok
