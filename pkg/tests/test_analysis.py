"""Landscape slices, trajectory metrics, PSNR, profiles, convergence."""

import numpy as np
import pytest

from topokit import analysis, reparam
from topokit.analysis import MetricTable, convergence_iteration, performance_profile, psnr
from topokit.fields import DensityField
from topokit.optimizers import Trajectory
from topokit.problems import make_problem
from topokit.reparam import ArchitectureSpec


@pytest.fixture(scope="module")
def small_problem():
    return make_problem("mbb", (16, 8), 0.5, penalty=1.0)


def test_landscape_two_alphas_are_the_endpoints(small_problem):
    n = small_problem.n_elements
    rho1 = np.full(n, 0.5)
    rho2 = np.clip(np.full(n, 0.5) + 0.1 * np.sin(np.arange(n)), 0, 1) * 0.8
    result = analysis.landscape_1d(ArchitectureSpec(kind="direct"), rho1, rho2, 2, small_problem)
    assert [s.alpha for s in result.samples] == [0.0, 1.0]
    from topokit.runner import evaluate_design

    assert result.samples[0].objective == pytest.approx(
        evaluate_design(small_problem, rho1).value, abs=1e-10
    )
    assert result.samples[1].objective == pytest.approx(
        evaluate_design(small_problem, rho2).value, abs=1e-10
    )


def test_landscape_identical_references_is_flat(small_problem):
    rho = np.full(small_problem.n_elements, 0.5)
    result = analysis.landscape_1d(ArchitectureSpec(kind="direct"), rho, rho, 11, small_problem)
    objectives = result.objectives
    assert np.allclose(objectives, objectives[0], rtol=1e-12)
    assert analysis.count_interior_maxima(objectives) == 0


def test_landscape_direct_slice_feasible_when_endpoints_feasible(small_problem):
    n = small_problem.n_elements
    rho1 = np.full(n, 0.5)
    rng = np.random.default_rng(0)
    rho2 = rng.uniform(0, 1, n)
    rho2 *= 0.5 / rho2.mean()  # volume exactly at the target
    rho2 = np.clip(rho2, 0, 1)
    result = analysis.landscape_1d(
        ArchitectureSpec(kind="direct"), rho1, rho2, 21, small_problem
    )
    assert result.n_violations == 0
    assert result.fit_mse == (0.0, 0.0)


def test_landscape_warns_on_poor_fit(small_problem):
    # A one-hidden-unit network cannot represent a random field.
    spec = ArchitectureSpec(kind="mlp", width=1, hidden_layers=1)
    rng = np.random.default_rng(1)
    rho1 = np.full(small_problem.n_elements, 0.5)
    rho2 = (rng.uniform(0, 1, small_problem.n_elements) > 0.5).astype(float)
    result = analysis.landscape_1d(
        spec, rho1, rho2, 3, small_problem, fit_kwargs={"iteration_cap": 50}
    )
    assert any("rho_ref_2" in w for w in result.warnings)


def test_count_interior_maxima_with_noise_floor():
    flat = np.zeros(11)
    assert analysis.count_interior_maxima(flat) == 0
    bump = np.array([0.0, 1.0, 0.0, 5.0, 0.0])
    assert analysis.count_interior_maxima(bump) == 2
    # sub-floor jitter is ignored
    jitter = np.array([0.0, 1e-5, 0.0, 10.0, 0.0, 10.0])
    assert analysis.count_interior_maxima(jitter, noise_floor=1e-3) == 1


def test_trajectory_metrics_reference_angles():
    traj = Trajectory()
    gradients = [
        np.array([1.0, 0.0]),
        np.array([2.0, 0.0]),
        np.array([0.0, 1.0]),
        np.array([0.0, -3.0]),
        np.zeros(2),
    ]
    for g in gradients:
        traj.record(1.0, 0.5, 0.0, g, np.zeros(2))
    norms, angles = analysis.trajectory_metrics(traj)
    assert np.allclose(norms, [1, 2, 1, 3, 0])
    assert np.isnan(angles[0])
    assert angles[1] == pytest.approx(0.0, abs=1e-12)
    assert angles[2] == pytest.approx(np.pi / 2, abs=1e-12)
    assert angles[3] == pytest.approx(np.pi, abs=1e-12)
    assert np.isnan(angles[4])


def test_trajectory_metrics_needs_two_iterations():
    traj = Trajectory()
    traj.record(1.0, 0.5, 0.0, np.ones(3), np.zeros(2))
    with pytest.raises(ValueError):
        analysis.trajectory_metrics(traj)


def test_psnr_reference_values():
    base = np.zeros(100)
    off = np.full(100, 1e-3)  # MSE 1e-6
    assert psnr(base, off) == pytest.approx(60.0, abs=1e-9)
    half = np.full(100, 0.5)  # MSE 0.25
    assert psnr(base, half) == pytest.approx(10 * np.log10(4.0), abs=1e-9)
    assert psnr(base, half) == pytest.approx(6.0206, abs=1e-3)
    assert np.isinf(psnr(base, base))


def test_psnr_symmetry():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(0, 1, 50), rng.uniform(0, 1, 50)
    assert psnr(a, b) == psnr(b, a)


def test_expressivity_direct_is_exact():
    rng = np.random.default_rng(3)
    targets = [DensityField(rng.uniform(0, 1, 32), 8, 4) for _ in range(2)]
    rows = analysis.expressivity_study([ArchitectureSpec(kind="direct")], targets)
    assert np.isinf(rows[0].worst_psnr[0])
    assert np.isinf(rows[0].mean_psnr)


def test_expressivity_reports_worst_case_across_targets():
    rng = np.random.default_rng(4)
    easy = DensityField(np.full(32, 0.5), 8, 4)
    hard = DensityField((rng.uniform(0, 1, 32) > 0.5).astype(float), 8, 4)
    spec = ArchitectureSpec(kind="mlp", width=4, hidden_layers=1)
    rows = analysis.expressivity_study(
        [spec], [easy, hard], repeats=2, seed=0, fit_kwargs={"iteration_cap": 150}
    )
    row = rows[0]
    assert len(row.worst_psnr) == 2
    grid = reparam.coordinate_grid(8, 4)
    for repeat, worst in enumerate(row.worst_psnr):
        theta0 = reparam.init_params(row.spec, 8, 4, seed=0 + 1000 * repeat)
        fits = [
            reparam.fit_to_density(row.spec, theta0, grid, t.values, iteration_cap=150)
            for t in (easy, hard)
        ]
        scores = [
            psnr(reparam.forward(row.spec, f.theta, grid), t.values)
            for f, t in zip(fits, (easy, hard))
        ]
        assert worst == pytest.approx(min(scores), rel=1e-9)


def test_performance_profile_single_solver():
    table = MetricTable(values=np.array([[3.0, 5.0, 1.0]]), solvers=("s",), cases=("a", "b", "c"))
    curves = performance_profile(table, np.array([1.0, 2.0, 10.0]))
    assert np.all(curves == 1.0)


def test_performance_profile_hand_example():
    table = MetricTable(values=np.array([[1.0, 2.0], [2.0, 1.0]]), solvers=("s1", "s2"), cases=("a", "b"))
    curves = performance_profile(table, np.array([1.0, 1.5, 2.0]))
    assert np.allclose(curves[:, 0], [0.5, 0.5])
    assert np.allclose(curves[:, 2], [1.0, 1.0])


def test_performance_profile_ties_share_the_win():
    table = MetricTable(values=np.array([[1.0], [1.0]]), solvers=("s1", "s2"), cases=("a",))
    curves = performance_profile(table, np.array([1.0]))
    assert np.all(curves == 1.0)


def test_performance_profile_failures_and_monotonicity():
    values = np.array([[1.0, np.inf, 2.0], [1.5, 1.0, np.inf], [3.0, 4.0, 1.0]])
    table = MetricTable(values=values, solvers=("a", "b", "c"), cases=("x", "y", "z"))
    tau = np.linspace(1, 10, 40)
    curves = performance_profile(table, tau)
    assert np.all(np.diff(curves, axis=1) >= 0)
    assert np.all(curves <= 1.0) and np.all(curves >= 0.0)
    # solver c has finite entries everywhere, so it must reach 1
    assert curves[2, -1] == 1.0


def test_performance_profile_rejects_dead_case():
    table = MetricTable(
        values=np.array([[1.0, np.inf], [2.0, np.inf]]), solvers=("a", "b"), cases=("x", "y")
    )
    with pytest.raises(ValueError, match="y"):
        performance_profile(table, np.array([1.0]))


def test_metric_table_validation():
    with pytest.raises(ValueError):
        MetricTable(values=np.array([[-1.0]]), solvers=("a",), cases=("x",))
    with pytest.raises(ValueError):
        MetricTable(values=np.ones((2, 2)), solvers=("a",), cases=("x", "y"))


def test_convergence_iteration_examples():
    assert convergence_iteration([5.0, 5.0, 5.0]) == 0
    assert convergence_iteration([10.0, 5.0, 4.0, 4.001, 4.0], tol_fraction=0.01) == 2
    decreasing = [10.0, 8.0, 6.0, 5.0, 4.5]
    assert convergence_iteration(decreasing, tol_fraction=0.0) == len(decreasing) - 1
    with pytest.raises(ValueError):
        convergence_iteration([])
