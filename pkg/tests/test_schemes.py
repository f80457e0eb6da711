import csv

import numpy as np
import pytest

from sphere_fem.analysis import SingularIC, SmoothTestProblem
from sphere_fem.assembly import Operators, dirichlet_energy
from sphere_fem.linsolve import SolverError, solve_saddle
from sphere_fem.mesh import build_structured_2d, build_structured_3d
from sphere_fem.schemes import (CSV_COLUMNS, FixedPointError, ModelParams, SchemeOperators, StepState,
                                cn_step, euler_step, euler_system, prepare_initial, recover_multiplier,
                                run_simulation, _flat, _unflat)

import oracles


@pytest.fixture(scope="module")
def smooth():
    m = build_structured_2d(8, 8, ((-1, -1), (1, 1)))
    so = SchemeOperators(Operators.build(m))
    return m, so, prepare_initial(SmoothTestProblem().u0, m)


def _state(u):
    return StepState(u.copy(), np.zeros(len(u)), 0.0)


def test_model_params_validation():
    with pytest.raises(ValueError, match="gamma"):
        ModelParams(0.0)
    with pytest.raises(ValueError, match="alpha"):
        ModelParams(1.0, -1.0)
    with pytest.raises(ValueError, match="integer multiple"):
        ModelParams(1.0, 0.0, 0.3, 1.0)
    assert ModelParams(1.0, 0.0, 0.1, 1.0).n_steps == 10
    with pytest.raises(ValueError, match="alpha must be 0"):
        ModelParams(1.0, 0.5).check_dimension(2)


def test_prepare_initial():
    m = build_structured_2d(34, 17, ((-2, -1), (2, 1)))
    u = prepare_initial(SingularIC(0.0625), m, 2)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-15)
    c = prepare_initial(lambda x: np.tile([0.0, 1.0], (len(x), 1)), m)
    np.testing.assert_array_equal(c, np.tile([0.0, 1.0], (m.n_vertices, 1)))


@pytest.mark.parametrize("solver", ["direct", "uzawa", "nullspace"])
def test_euler_constant_state(smooth, solver):
    m, so, _ = smooth
    u0 = np.tile([0.6, 0.8], (m.n_vertices, 1))
    st = euler_step(_state(u0), ModelParams(1.0, 0.0, 0.1), so, solver=solver)
    np.testing.assert_allclose(st.u, u0, atol=1e-13)
    np.testing.assert_allclose(st.q, 0, atol=1e-10)
    assert st.report.energy_residual <= 1e-14


def test_euler_matches_dense_reference(smooth):
    m, so, u0 = smooth
    p = ModelParams(0.5, 0.0, 0.01)
    st = euler_step(_state(u0), p, so)
    u_ref, sigma_ref = oracles.euler_reference_step(u0, so.ops.K, so.ops.mu, p.gamma, p.k)
    np.testing.assert_allclose(st.u, u_ref, atol=1e-11)
    np.testing.assert_allclose(st.q, sigma_ref / (p.gamma * so.ops.mu), rtol=1e-8, atol=1e-8)
    st_c = euler_step(_state(u0), p, so, multiplier="consistent")
    np.testing.assert_allclose(so.ops.M @ st_c.q, sigma_ref / p.gamma, rtol=1e-8, atol=1e-8)


def test_euler_mass_form_equivalent(smooth):
    m, so, u0 = smooth
    p = ModelParams(0.5, 0.0, 0.01)
    rng = np.random.default_rng(0)
    u = u0 * (1 + 0.1 * rng.random(m.n_vertices))[:, None]
    nodal = solve_saddle(euler_system(u, so, p, "nodal"), method="direct")
    mass = solve_saddle(euler_system(u, so, p, "mass"), method="direct")
    np.testing.assert_allclose(mass[0], nodal[0], atol=1e-12)
    # the mass-form unknown is q itself: gamma M q = sigma
    np.testing.assert_allclose(p.gamma * so.ops.M @ mass[1], nodal[1], rtol=1e-8, atol=1e-10)


def test_euler_identity_and_norms(smooth):
    m, so, u0 = smooth
    p = ModelParams(0.01, 0.0, 0.05, 1.0)
    tr = run_simulation(u0, so, p, scheme="euler")
    e0 = dirichlet_energy(u0, so.ops.K)
    assert tr.global_residual <= 1e-9
    mins = [r.min_norm for r in tr.reports]
    assert min(mins) >= 1 - 1e-10
    assert all(b >= a - 1e-14 for a, b in zip(mins, mins[1:]))
    assert all(r.energy_residual <= 1e-10 * (1 + e0) for r in tr.reports)


def test_euler_llg_3d_identity():
    m = build_structured_3d(3, 3, 3, ((-1, -1, -1), (1, 1, 1)))
    so = SchemeOperators(Operators.build(m))
    u0 = prepare_initial(SingularIC(0.3, 3), m, 3)
    p = ModelParams(1.0, 0.7, 0.01, 0.05)
    for solver in ("direct", "nullspace", "uzawa"):
        tr = run_simulation(u0, so, p, scheme="euler", solver=solver)
        assert tr.global_residual <= 1e-9
        assert min(r.min_norm for r in tr.reports) >= 1 - 1e-12


def test_euler_rejects_short_vectors(smooth):
    m, so, u0 = smooth
    with pytest.raises(SolverError):
        euler_step(_state(0.5 * u0), ModelParams(1.0), so)


def test_cn_constant_state(smooth):
    m, so, _ = smooth
    u0 = np.tile([1.0, 0.0], (m.n_vertices, 1))
    st = cn_step(_state(u0), ModelParams(1.0, 0.0, 0.1), so)
    assert st.report.fp_iters == 1
    np.testing.assert_allclose(st.u, u0, atol=1e-14)


def test_cn_identity_constraint(smooth):
    m, so, u0 = smooth
    p = ModelParams(0.01, 0.0, 0.05, 1.0)
    tr = run_simulation(u0, so, p, fp_tol=1e-13)
    e0 = dirichlet_energy(u0, so.ops.K)
    assert tr.global_residual <= 1e-10
    for r in tr.reports:
        assert r.energy_residual <= 1e-10 * (1 + e0)
        assert max(abs(r.min_norm - 1), abs(r.max_norm - 1)) <= 1e-12
        assert r.fp_iters <= 30


def test_cn_solvers_agree(smooth):
    m, so, u0 = smooth
    p = ModelParams(0.01, 0.0, 0.05)
    out = [cn_step(_state(u0), p, so, solver=s) for s in ("direct", "uzawa", "nullspace")]
    for st in out[1:]:
        np.testing.assert_allclose(st.u, out[0].u, atol=1e-12)
        np.testing.assert_allclose(st.q, out[0].q, rtol=1e-8, atol=1e-8)


def test_cn_fixed_point_limit(smooth):
    m, so, u0 = smooth
    with pytest.raises(FixedPointError) as exc:
        cn_step(_state(u0), ModelParams(0.01, 0.0, 0.05), so, fp_maxiter=2)
    assert exc.value.increment > 0


def test_cn_requires_alpha_zero():
    m = build_structured_3d(1, 1, 1)
    so = SchemeOperators(Operators.build(m))
    u0 = np.tile([0.0, 0.0, 1.0], (8, 1))
    with pytest.raises(ValueError):
        cn_step(_state(u0), ModelParams(1.0, 0.5, 0.1), so)


def test_cn_renormalize(smooth):
    m, so, u0 = smooth
    perturbed = u0 * 1.001
    st = cn_step(_state(perturbed), ModelParams(0.01, 0.0, 0.05), so, renormalize=True)
    np.testing.assert_allclose(np.linalg.norm(st.u, axis=1), 1.0, atol=1e-12)
    # without renormalisation the defect correction pulls the norms back to one as well
    st = cn_step(_state(perturbed), ModelParams(0.01, 0.0, 0.05), so)
    np.testing.assert_allclose(np.linalg.norm(st.u, axis=1), 1.0, atol=1e-12)


def test_cn_3d_runs():
    m = build_structured_3d(4, 3, 3, ((-2, -1, -1), (2, 1, 1)))
    so = SchemeOperators(Operators.build(m))
    u0 = prepare_initial(SingularIC(0.5, 3), m, 3)
    tr = run_simulation(u0, so, ModelParams(1.0, 0.0, 0.01, 0.05))
    E = [r.energy for r in tr.reports]
    assert all(b <= a + 1e-12 for a, b in zip(E, E[1:]))
    assert tr.global_residual <= 1e-10


def _neumann_field(m):
    # theta = cos(pi x) has zero normal derivative on the unit square; exact multiplier -|grad u|^2
    x = m.vertices[:, 0]
    th = np.cos(np.pi * x)
    return np.column_stack([np.cos(th), np.sin(th)]), -(np.pi * np.sin(np.pi * x)) ** 2


def test_recover_multiplier():
    m = build_structured_2d(20, 20)
    ops = Operators.build(m)
    const = np.tile([1.0, 0.0], (m.n_vertices, 1))
    np.testing.assert_allclose(recover_multiplier(const, ops.K, ops.M), 0, atol=1e-10)
    u, _ = _neumann_field(m)
    R = np.array([[np.cos(0.4), -np.sin(0.4)], [np.sin(0.4), np.cos(0.4)]])
    np.testing.assert_allclose(recover_multiplier(u @ R.T, ops.K, ops.M), recover_multiplier(u, ops.K, ops.M),
                               atol=1e-9)
    with pytest.raises(ValueError, match="nodally unit"):
        recover_multiplier(2 * u, ops.K, ops.M)


def test_recover_multiplier_weak_convergence():
    # nodal values oscillate with the checkerboard lumped mass; moments against smooth weights converge at O(h^2)
    errs = []
    for n in (10, 20, 40):
        m = build_structured_2d(n, n)
        ops = Operators.build(m)
        u, exact = _neumann_field(m)
        q = recover_multiplier(u, ops.K, ops.M, lumped=ops.mu)
        phi = np.cos(np.pi * m.vertices[:, 1]) + 2
        errs.append(abs(ops.mu @ ((q - exact) * phi)))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.9)


def test_zero_steps(smooth):
    m, so, u0 = smooth
    tr = run_simulation(u0, so, ModelParams(0.01, 0.0, 0.1, 0.0))
    assert len(tr.reports) == 1
    assert tr.reports[0].energy == pytest.approx(dirichlet_energy(u0, so.ops.K))
    assert tr.global_residual == 0.0


def test_csv(tmp_path, smooth):
    m, so, u0 = smooth
    tr = run_simulation(u0, so, ModelParams(0.01, 0.0, 0.1, 0.2))
    path = tmp_path / "log.csv"
    tr.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == CSV_COLUMNS
    assert len(rows) == 4  # header plus steps 0, 1, 2
    assert float(rows[3][2]) == tr.reports[2].energy  # round-trip exact


def test_flatten_roundtrip():
    u = np.arange(12.0).reshape(4, 3)
    f = _flat(u)
    np.testing.assert_array_equal(f[:4], u[:, 0])
    np.testing.assert_array_equal(_unflat(f, 4), u)


def test_multiplier_representations(smooth):
    m, so, u0 = smooth
    p = ModelParams(0.01, 0.0, 0.05)
    a = cn_step(_state(u0), p, so, multiplier="lumped")
    b = cn_step(_state(u0), p, so, multiplier="consistent")
    np.testing.assert_array_equal(a.u, b.u)
    np.testing.assert_allclose(so.ops.M @ b.q, so.ops.mu * a.q, rtol=1e-9, atol=1e-9)
    with pytest.raises(ValueError):
        cn_step(_state(u0), p, so, multiplier="spectral")
