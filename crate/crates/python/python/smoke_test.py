"""Smoke test for the fraclap extension module.

Build and install first, e.g. `pip install --no-build-isolation crates/python`
or `maturin develop -m crates/python/Cargo.toml`, then run this script.
"""

import math

import fraclap


def main():
    beta = 0.75
    nodes, weights = fraclap.gauss_jacobi(8, beta)
    assert len(nodes) == 8
    assert abs(sum(weights) - math.pi / math.sin(beta * math.pi)) < 1e-12 * sum(weights)

    op = fraclap.Laplacian(30)
    r = fraclap.RationalApproximation.for_operator(op, 12, beta)
    assert r.k == 12 and len(r.gamma) == 12
    assert abs(fraclap.RationalApproximation(5, beta, 1.0)(1.0) - 1.0) < 1e-14

    v = [math.sin(0.3 * i) for i in range(op.size)]
    approx = op.apply_rational(r, v)
    exact = op.frac_power(v, beta)
    rel = math.sqrt(sum((a - b) ** 2 for a, b in zip(approx, exact)))
    rel /= math.sqrt(sum(b * b for b in exact))
    assert rel < 1e-5, rel

    k, eps, reached = op.select_k(beta, 1e-6)
    assert reached and eps <= 1e-6, (k, eps)

    csv = fraclap.convergence(N=40, alphas=[1.2, 1.8], k_max=4)
    lines = csv.splitlines()
    assert lines[0].startswith("# config:")
    assert lines[1] == "alpha,k,relative_error,theorem_bound,convergence_factor_power"
    assert len(lines) == 2 + 8

    assert "rho_M" in fraclap.bound(N=40, alpha=1.5, k_max=5)

    run = fraclap.solve(example=1, N=40, t_end=0.1, snapshots=3, timing_runs=1)
    assert len(run["times"]) == 3
    assert max(run["rational"][2]["error"]) < 1e-1
    assert run["mt_seconds"] >= 0.0

    try:
        fraclap.solve(example=9)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown example accepted")

    print("fraclap smoke test passed")


if __name__ == "__main__":
    main()
