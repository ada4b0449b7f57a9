#!/usr/bin/env python3
"""Smoke test for the sgn_py extension module.

Builds nothing itself: it locates the compiled cdylib under target/
(release preferred), copies it to a temp directory under the importable
name, and exercises the main surface end to end.

    cargo build --release -p sgn-py
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent


def import_sgn_py():
    candidates = [
        REPO_ROOT / "target" / "release" / "libsgn_py.so",
        REPO_ROOT / "target" / "debug" / "libsgn_py.so",
        REPO_ROOT / "target" / "release" / "libsgn_py.dylib",
        REPO_ROOT / "target" / "debug" / "libsgn_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("no built extension found; run `cargo build --release -p sgn-py` first")
    staging = Path(tempfile.mkdtemp(prefix="sgn_py_"))
    shutil.copy2(built, staging / "sgn_py.so")
    sys.path.insert(0, str(staging))
    import sgn_py

    return sgn_py


def check(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))
    if not ok:
        sys.exit(1)


def main():
    sgn = import_sgn_py()

    # chi-square threshold
    q = sgn.chi2_quantile(1, 0.95)
    check("chi2 quantile", abs(q - 3.841458820694) < 1e-6, f"q={q:.6f}")

    # momentum analysis
    alpha, rate = sgn.optimal_alpha(0.1)
    check(
        "optimal momentum",
        abs(alpha - 0.47) <= 0.02 and abs(rate - 0.32) <= 0.01,
        f"alpha={alpha:.3f}, rate={rate:.3f}",
    )
    check("no-momentum rate", abs(sgn.companion_rate(0.2, 0.0) - 0.2) < 1e-12)
    check("momentum table rows", len(sgn.momentum_table()) == 8)

    # covering sequences
    sobol = [p[0] for p in sgn.covering_points("sobol", 1, 4)]
    check("sobol head", sobol == [0.5, 0.75, 0.25, 0.375], str(sobol))
    grid = [[(i + 0.5) / 32, (j + 0.5) / 32] for i in range(32) for j in range(32)]
    d_sobol = sgn.discrepancy(sgn.covering_points("sobol", 2, 256), grid)
    d_unif = sgn.discrepancy(sgn.covering_points("uniform", 2, 256, seed=3), grid)
    check("sobol beats uniform", d_sobol < d_unif, f"{d_sobol:.4f} < {d_unif:.4f}")

    # quantile estimation: solver vs order-statistic oracle
    problem = sgn.QuantileProblem.standard_normal(250, 0.7, 1)
    cfg = sgn.SolverConfig(
        gamma=0.1, eps=0.1, jacobian="closed_form", covering="none",
        theta0=[0.0], b_max=200,
    )
    result = problem.solve(cfg)
    oracle = problem.gmm_root_midpoint()
    check(
        "quantile solve",
        abs(result.theta_best[0] - oracle) <= 1e-3,
        f"estimate={result.theta_best[0]:.5f}, oracle={oracle:.5f}",
    )

    # the smoothed baseline carries visible bias at a wide bandwidth
    wide = sgn.SolverConfig(
        gamma=0.1, eps=0.5, jacobian="closed_form", covering="none",
        theta0=[0.0], b_max=200,
    )
    baseline = problem.solve_smoothed_baseline(wide)
    check(
        "smoothing bias visible",
        abs(baseline.theta_best[0] - oracle) > abs(result.theta_best[0] - oracle),
        f"baseline={baseline.theta_best[0]:.4f}",
    )

    # global step escapes the wrong basin of the toy map
    toy = sgn.TwoBasinProblem()
    global_cfg = sgn.SolverConfig(
        gamma=0.1, eps=0.1, jacobian="closed_form", covering="sobol",
        randomize=True, seed=11, theta0=[-2.5], b_max=300,
    )
    local_cfg = sgn.SolverConfig(
        gamma=0.1, eps=0.1, jacobian="closed_form", covering="none",
        theta0=[-2.5], b_max=300,
    )
    found = toy.solve(global_cfg).theta_best[0]
    stuck = toy.solve(local_cfg).theta_best[0]
    check(
        "global step escapes basin",
        abs(found - toy.global_root) <= 1e-2 and abs(stuck - toy.global_root) > 0.5,
        f"global={found:.4f}, local-only={stuck:.4f}",
    )
    kinds = {row[3] for row in toy.solve(global_cfg).trace}
    check("trace records step kinds", "global" in kinds and "local" in kinds)

    # quasi-Newton on the simulated panel problem
    ddc = sgn.DdcProblem.generate(100, 5, 3, data_seed=1, sim_seed=2)
    g0 = ddc.moments([0.0, 0.0, 0.0, 0.0])
    g_true = ddc.moments(ddc.theta_dagger())
    norm = lambda v: math.sqrt(sum(x * x for x in v))
    check("ddc moments separate", norm(g_true) < norm(g0), f"{norm(g_true):.4f} < {norm(g0):.4f}")
    ddc_cfg = sgn.SolverConfig(
        gamma=0.1, eps=0.1, alpha=0.47, jacobian="quasi_newton",
        covering="sobol", randomize=True, seed=3, theta0=[0.0, 0.0, 0.0, 0.0], b_max=200,
    )
    ddc_fit = ddc.solve(ddc_cfg)
    check("ddc solve improves fit", ddc_fit.best_obj_norm < 0.2 * norm(g0),
          f"final={ddc_fit.best_obj_norm:.4f}")

    # replication harness through the JSON surface
    import json

    spec = """
problem_kind = "quantile"
replications = 8
master_seed = 3

[problem_params]
n = 80
t = 0.5

[solver]
gamma = 0.1
eps = 0.2
b_max = 60
theta0 = [0.0]

[solver.jacobian]
mode = "closed_form"
"""
    summary = json.loads(sgn.run_experiment(spec))
    methods = {m["method"] for m in summary["methods"]}
    check("harness summary", "sgn" in methods and len(summary["theta_dagger"]) == 1)

    print("all smoke tests passed")


if __name__ == "__main__":
    main()
