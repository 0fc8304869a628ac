"""Smoke test for the kslab Python extension.

Build and install first:
    pip install --no-build-isolation -e crates/py
then run:
    python3 python/smoke_test.py
"""

import json
import math
import tempfile

import kslab


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    spec = kslab.ModelSpec.reference()
    assert spec.phase_bound_n == 2
    close(spec.torus_length, 4 * math.pi, 1e-12)
    assert all(passed for _, passed, _ in spec.validate())

    # Free Dirichlet levels on [-1, 1].
    pairs = kslab.find_eigenvalues_in_window(spec, [0.0, 0.0], 1, 1e-12)
    assert [p.index_k for p in pairs] == [1]
    close(pairs[0].energy, (math.pi / 2) ** 2, 1e-8)
    close(pairs[0].l2_norm_check, 1.0, 1e-10)

    omega = spec.sample_couplings(4, 7)
    shoot = [p.energy for p in kslab.find_eigenvalues_in_window(spec, omega, 2, 1e-11)]
    dense = kslab.dense_oracle_eigenvalues(spec, omega, 2, 1e-3)
    assert len(shoot) == len(dense)
    for a, b in zip(shoot, dense):
        close(a, b, 1e-6)

    energy, j, thetas = kslab.phase_coordinates(spec, omega, 2, 2)
    back = kslab.reconstruct_couplings(spec, energy, j, thetas)
    for a, b in zip(omega, back):
        close(a, b, 1e-6)

    cell = kslab.CellProblem(spec, 0, 0.0)
    lam, residual, exists = cell.solve_lambda(0.0, math.pi / 4)
    assert exists
    close(lam, 0.0, 1e-8)
    norms = cell.norms(64)
    close(norms["t0_norm_11"], 1.0, 1e-2)
    assert norms["t1_norm_22"] < 1.0 + 5e-3
    close(max(norms["block_norms"]), norms["t1_norm_22"], 1e-6)

    closed, dense_det = kslab.structured_determinant([1.0, 2.0, 3.0], [0.0, 1.0, 1.0])
    close(closed, 2.0, 1e-12)
    close(dense_det, 2.0, 1e-12)

    mean, se = kslab.estimate_rho(spec, 2, 1, 2, 40, 3)
    assert mean > 0 and se >= 0

    series = kslab.correlator_series(spec, 3, [1, 2, 3], 40, 3)
    fit = kslab.decay_fit(series, 1)
    assert set(fit) >= {"c", "eta", "eta_std_error", "r_squared"}

    with tempfile.TemporaryDirectory() as out:
        config = {"scenario": "identities", "parameters": {"instances": 4}, "output_dir": out}
        report = kslab.run_scenario(json.dumps(config))
        assert report["passed"], report

    try:
        kslab.run_scenario(json.dumps({"scenario": "identities", "model": {"background": {"kind": "zero"}}}))
    except ValueError as e:
        assert "missing field" in str(e)
    else:
        raise AssertionError("incomplete model accepted")

    print("kslab smoke test passed")


if __name__ == "__main__":
    main()
