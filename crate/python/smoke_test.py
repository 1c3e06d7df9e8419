"""Smoke test for the `collapse` extension module.

Build first:
    cargo build --release -p collapse-python --features extension-module
    cp target/release/libcollapse.so python/collapse.so
"""

import cmath
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import collapse  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    model = collapse.Model.from_json(os.path.join(FIXTURES, "reference.json"))
    assert model.dim == 2 and model.lam == 1.0
    eta = [0.6, 0.8j]

    times = collapse.jump_times(1.0, 2.0, 7)
    assert all(0 <= a < b < 2.0 for a, b in zip(times, times[1:]))
    path = collapse.trajectory(model, times, eta, [0.0, 1.0, 2.0])
    assert len(path) == 3 and close(sum(abs(z) ** 2 for z in path[0]), 1.0, 1e-12)

    rho_ode = collapse.master(model, eta, [0.0, 1.0])[-1]
    rho_series, order = collapse.dyson(model, eta, 1.0)
    assert order > 0
    assert collapse.trace_dist(rho_ode, rho_series) < 1e-8

    ens = collapse.ensemble(model, eta, 4000, [0.0, 1.0], 11)
    assert collapse.trace_dist(ens["rho"][-1], rho_ode) <= 3 * ens["rho_stderr"][-1]

    s, residual = collapse.dilation(model.collapse, "nonhermitian")
    assert len(s) == 4 and residual <= 1e-12

    scalar = collapse.Model([[0j]], 1.0, c=[[0.5 + 0j]])
    rho = collapse.master(scalar, [1 + 0j], [0.0, 1.0])[-1]
    assert close(rho[0][0].real, math.exp(-0.75), 1e-8)

    r = 0.8
    grid, psi = collapse.diffusion([[0j]], [[r + 0j]], [1 + 0j], 1e-3, 1.0, 3, "euler-maruyama", 100)
    assert len(grid) == 11 and all(abs(abs(p[0]) - 1.0) < 0.2 for p in psi)

    rows = collapse.zeno([[1, 0], [0, -1]], [[0, 0], [0, 0.36]], [10.0, 100.0], eta, n=500, n_diffusion=200)
    assert len(rows) == 3 and rows[-1]["lambda"] is None

    try:
        collapse.Model([[0j]], 1.0, c=[[2 + 0j]])
    except ValueError as e:
        assert "contraction" in str(e)
    else:
        raise AssertionError("expanding collapse accepted")

    assert cmath.isclose(eta[1], 0.8j)
    print(f"collapse {collapse.__version__}: python smoke test passed")


if __name__ == "__main__":
    main()
