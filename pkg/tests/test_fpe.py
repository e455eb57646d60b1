import numpy as np
import pytest
from scipy.linalg import expm

from logrowth import (
    ConfigError,
    Grid,
    HoldingTimeWarning,
    OutOfGridError,
    Params,
    ProbVector,
    TransitionDensity,
    build_generator,
    dirac,
    extinction_rate_check,
    implicit_euler_step,
    nearest_node,
    solve_evolution,
    solve_kernel,
    solve_kernel_batch,
)
from logrowth.fpe import ImplicitPropagator
from logrowth.model import boundary_derivatives, diffusion_sq, drift

pytestmark = pytest.mark.filterwarnings("ignore::logrowth.exceptions.HoldingTimeWarning")


class TestGrid:
    def test_validation(self):
        with pytest.raises(ConfigError):
            Grid(h=0.0, L=10)
        with pytest.raises(ConfigError):
            Grid(h=0.1, L=1)

    def test_for_model_default_bound(self, table1):
        g = Grid.for_model(table1, x0=0.25, h=1e-3)
        assert g.x_max == pytest.approx(8.0)  # max(4K, 2*x0) with K = 2

    def test_for_model_rejects_small_box(self, table1):
        with pytest.raises(ConfigError):
            Grid.for_model(table1, x0=0.25, h=1e-3, x_max=3.0)

    def test_cell_widths(self):
        g = Grid(h=0.5, L=4)
        assert np.array_equal(g.cell_widths, [0.25, 0.5, 0.5, 0.5, 0.25])


class TestNearestNode:
    def test_rounding_and_tie_break(self):
        g = Grid(h=0.1, L=10)
        assert nearest_node(g, 0.14) == 1
        assert nearest_node(g, 0.16) == 2
        assert nearest_node(g, 0.15) == 1  # tie goes to the lower node
        assert nearest_node(g, 0.0) == 0
        assert nearest_node(g, 1.0) == 10

    def test_outside_grid(self):
        g = Grid(h=0.1, L=10)
        with pytest.raises(OutOfGridError):
            nearest_node(g, 1.2)


class TestGenerator:
    def test_boundary_row_exact(self, table1, grid_table1):
        A = build_generator(table1, grid_table1)
        b1, a1, _ = boundary_derivatives(table1)
        expected = -(abs(b1) + a1 / grid_table1.h)
        assert A.diag[0] == expected  # bitwise: same formula, same floats
        assert A.diag[0] == pytest.approx(-382.0, abs=1e-9)
        assert A.upsilon_rate == -A.diag[0]
        assert A.upper[0] == 0.0

    def test_first_interior_row(self, table1, grid_table1, relerr):
        # b(h) > 0 so the left in-flow at node 1 is the pure diffusion half
        A = build_generator(table1, grid_table1)
        h = grid_table1.h
        assert drift(table1, h) > 0
        expected = diffusion_sq(table1, h) / (2 * h ** 2)
        assert relerr(A.lower[0], expected) < 1e-14
        assert A.lower[0] == pytest.approx(190.005, rel=1e-12)

    def test_reflecting_row(self, table1, grid_table1, relerr):
        A = build_generator(table1, grid_table1)
        h, xL = grid_table1.h, grid_table1.x_max
        expected = abs(drift(table1, xL)) / h + diffusion_sq(table1, xL) / h ** 2
        assert relerr(A.lower[-1], expected) < 1e-14
        assert A.diag[-1] == -A.lower[-1]

    @pytest.mark.parametrize("h,x_max", [(1e-2, 8.0), (5e-3, 6.0), (2e-2, 9.0)])
    def test_invariants_across_params(self, param_matrix, h, x_max):
        for p in param_matrix:
            L = int(round(x_max / h))
            g = Grid(h=h, L=L)
            A = build_generator(p, g)
            assert np.all(A.lower >= 0)
            assert np.all(A.upper >= 0)
            scale = np.max(np.abs(A.diag))
            assert np.max(np.abs(A.row_sums())) / scale < 1e-12

    def test_cemetery_row_zero(self, table1, grid_coarse):
        A = build_generator(table1, grid_coarse)
        dense = A.to_dense()
        assert np.all(dense[0] == 0.0)
        assert dense[1, 0] == A.upsilon_rate

    def test_holding_ratio(self, table1, grid_table1):
        A = build_generator(table1, grid_table1)
        assert A.holding_ratio(1e-3) > 10.0  # reference scenario runs hot
        g = Grid(h=0.2, L=40)
        A2 = build_generator(table1, g)
        assert A2.holding_ratio(1e-4) < 10.0


class TestImplicitEuler:
    def test_holding_time_warning_emitted(self, table1, grid_table1):
        A = build_generator(table1, grid_table1)
        with pytest.warns(HoldingTimeWarning):
            ImplicitPropagator(A, 1e-3)

    def test_no_warning_when_cool(self, table1):
        A = build_generator(table1, Grid(h=0.2, L=40))
        import warnings as w
        with w.catch_warnings():
            w.simplefilter("error", HoldingTimeWarning)
            ImplicitPropagator(A, 1e-4)

    def test_cemetery_mass_fixed_point(self, table1, grid_coarse):
        A = build_generator(table1, grid_coarse)
        P = ProbVector(p_upsilon=1.0, masses=np.zeros(grid_coarse.L + 1))
        out = implicit_euler_step(A, P, 1e-3)
        assert out.p_upsilon == 1.0
        assert np.all(out.masses == 0.0)

    def test_mass_conserved_and_nonnegative(self, table1, grid_coarse):
        A = build_generator(table1, grid_coarse)
        P = dirac(grid_coarse, 0.25)
        for _ in range(50):
            P = implicit_euler_step(A, P, 1e-3)
            assert abs(P.total_mass - 1.0) < 1e-10
            assert P.p_upsilon >= 0.0
            assert np.all(P.masses >= 0.0)

    def test_matrix_exponential_oracle(self, table1):
        # dense adjoint exponential on a small grid; one implicit step at tiny
        # delta agrees to O(delta^2 ||A||^2)
        g = Grid(h=0.1, L=50)
        A = build_generator(table1, g)
        delta = 1e-5
        dense = A.to_dense()
        P = dirac(g, 2.0)
        full = np.concatenate([[P.p_upsilon], P.masses])
        expected = expm(delta * dense.T) @ full
        out = implicit_euler_step(A, P, delta)
        got = np.concatenate([[out.p_upsilon], out.masses])
        assert np.max(np.abs(got - expected)) < 1e-6
        # the resolvent spreads beyond the three-point neighborhood only at O(delta^2)
        l0 = nearest_node(g, 2.0)
        inside = out.masses[l0 - 1: l0 + 2].sum() + out.p_upsilon
        assert 1.0 - inside < 1e-6

    def test_batch_matches_single(self, table1, grid_coarse):
        nodes = [10, 50, 120]
        atoms, densities = solve_kernel_batch(table1, grid_coarse, 1e-3, 100, nodes)
        for j, node in enumerate(nodes):
            x = node * grid_coarse.h
            td = solve_kernel(table1, x, 0.1, grid_coarse, 1e-3)
            assert atoms[j] == pytest.approx(td.atom, rel=1e-12, abs=1e-300)
            assert np.allclose(densities[:, j], td.values, rtol=1e-12, atol=1e-300)


class TestSolveKernel:
    def test_zero_start_pure_atom(self, table1, grid_coarse):
        td = solve_kernel(table1, 0.0, 1.0, grid_coarse, 1e-3)
        assert td.atom == 1.0
        assert np.all(td.values == 0.0)

    def test_mass_partition(self, table1, grid_coarse):
        td = solve_kernel(table1, 0.25, 1.0, grid_coarse, 1e-3)
        assert td.atom + td.continuous_mass() == pytest.approx(1.0, abs=1e-8)
        assert 0.0 < td.atom < 1.0

    def test_incompatible_steps_rejected(self, table1, grid_coarse):
        with pytest.raises(ConfigError):
            solve_kernel(table1, 0.25, 0.0505, grid_coarse, 1e-3)

    def test_density_interpolation(self, table1, grid_coarse):
        td = solve_kernel(table1, 0.25, 0.5, grid_coarse, 1e-3)
        h = grid_coarse.h
        v, is_atom = td.density_at(0.0)
        assert is_atom and v == td.atom
        v10, flag = td.density_at(10 * h)
        assert not flag and v10 == td.values[10]
        mid, _ = td.density_at(10.5 * h)
        assert mid == pytest.approx((td.values[10] + td.values[11]) / 2, rel=1e-12)
        with pytest.raises(OutOfGridError):
            td.density_at(grid_coarse.x_max + 1.0)

    def test_atom_monotone_in_time(self, table1, grid_coarse):
        evo = solve_evolution(table1, 0.25, 2.0, grid_coarse, 1e-3, record_every=40)
        assert np.all(np.diff(evo.atoms) >= 0)

    def test_mass_conserved_at_snapshots(self, table1, grid_coarse):
        evo = solve_evolution(table1, 0.25, 1.0, grid_coarse, 1e-3, record_every=100)
        for i in range(len(evo.times)):
            td = evo.to_density(i)
            assert td.atom + td.continuous_mass() == pytest.approx(1.0, abs=1e-8)


class TestExtinctionRateCheck:
    def test_stationary_zero(self, table1, grid_coarse):
        td = TransitionDensity(atom=1.0, grid=grid_coarse,
                               values=np.zeros(grid_coarse.L + 1))
        assert extinction_rate_check(table1, [td] * 4, 1e-3) == 0.0

    def test_first_order_in_delta(self, table1, grid_coarse):
        devs = {}
        for delta in (2e-3, 1e-3):
            evo = solve_evolution(table1, 0.25, 1.0, grid_coarse, delta)
            tds = [evo.to_density(i) for i in range(len(evo.times))
                   if evo.times[i] >= 0.1 - 1e-12]
            devs[delta] = extinction_rate_check(table1, tds, delta)
        assert devs[1e-3] < devs[2e-3] / 1.8  # halving delta at least ~halves it

    def test_reference_scenario_calibration(self, table1, grid_table1):
        # frozen from the oracle run: deviation 4.04e-3 at delta = 1e-3
        evo = solve_evolution(table1, 0.25, 1.0, grid_table1, 1e-3)
        tds = [evo.to_density(i) for i in range(len(evo.times))
               if evo.times[i] >= 0.1 - 1e-12]
        assert extinction_rate_check(table1, tds, 1e-3) < 1e-2


class TestCsv:
    def test_transition_density_format(self, table1, grid_coarse, tmp_path):
        td = solve_kernel(table1, 0.25, 0.2, grid_coarse, 1e-3)
        path = tmp_path / "kernel.csv"
        td.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == f"atom,{td.atom!r}"
        y, v = lines[1].split(",")
        assert float(y) == 0.0 and float(v) == td.values[0]
        assert len(lines) == grid_coarse.L + 2
