import math

import numpy as np
import pytest
from scipy.integrate import quad

from diamondspace.harmonic.energy import (check_maximum_principle, radial_coefficients,
                                          radial_energy, stated_radial_energy)
from diamondspace.harmonic.grid import (DIRECT_LIMIT, FactorizedDirichlet, SolverError,
                                        annulus_domain, box_graph, cube_domain,
                                        dirichlet_energy, doubled_cell_domain,
                                        gate_boundary_mask, shell_domain, skeleton_mask,
                                        solve_dirichlet, symmetry_factor)


def test_linear_data_is_reproduced():
    dom = cube_domain(8)
    a = np.array([1.0, -2.0, 0.5])
    field = solve_dirichlet(dom, lambda x: x @ a + 0.3)
    assert np.allclose(field.values, dom.graph.coords @ a + 0.3, atol=1e-10)
    # voxel conductances integrate |grad u|^2 exactly for linear u
    assert dirichlet_energy(field) == pytest.approx(float(a @ a), rel=1e-10)


def test_constant_has_zero_energy():
    dom = cube_domain(6)
    field = solve_dirichlet(dom, lambda x: np.full(len(x), 2.5))
    assert np.allclose(field.values, 2.5)
    assert dirichlet_energy(field) == pytest.approx(0.0, abs=1e-20)


def test_vector_data_solved_componentwise():
    dom = cube_domain(6)
    field = solve_dirichlet(dom, lambda x: np.stack([x[:, 0], x[:, 1] ** 2 - x[:, 2] ** 2], 1))
    assert field.components == 2
    single = solve_dirichlet(dom, lambda x: x[:, 1] ** 2 - x[:, 2] ** 2)
    assert np.allclose(field.values[:, 1], single.values)


def test_maximum_principle_on_random_data():
    dom = cube_domain(10)
    rng = np.random.default_rng(0)
    data = rng.normal(size=dom.graph.size)
    field = solve_dirichlet(dom, data)
    assert check_maximum_principle(field)


def test_cg_path_matches_direct(monkeypatch):
    dom = cube_domain(12)
    data = np.sin(3 * dom.graph.coords[:, 0]) * np.cos(2 * dom.graph.coords[:, 1])
    direct = solve_dirichlet(dom, data, tol=1e-10)
    monkeypatch.setattr("diamondspace.harmonic.grid.DIRECT_LIMIT", 10)
    iterative = solve_dirichlet(dom, data, tol=1e-10)
    assert iterative.iterations > 0 and direct.iterations == 0
    assert np.allclose(direct.values, iterative.values, atol=1e-8)
    assert DIRECT_LIMIT == 20_000


def test_solver_error_on_unreachable_tolerance(monkeypatch):
    monkeypatch.setattr("diamondspace.harmonic.grid.DIRECT_LIMIT", 10)
    dom = cube_domain(12)
    data = np.random.default_rng(1).normal(size=dom.graph.size)
    with pytest.raises(SolverError):
        solve_dirichlet(dom, data, tol=1e-12, max_iter=2)


def test_boundary_data_size_checked():
    dom = cube_domain(4)
    with pytest.raises(ValueError):
        solve_dirichlet(dom, np.zeros(3))


def test_octant_symmetry_factor():
    full = annulus_domain(12, 1 / 3)
    half = annulus_domain(12, 1 / 3, octant=True)
    quarter = annulus_domain(12, 1 / 3, octant=(True, True, False))
    assert symmetry_factor(full) == 1
    assert symmetry_factor(half) == 8
    assert symmetry_factor(quarter) == 4
    energies = []
    for dom in (full, half, quarter):
        # 1 on the inner cube, 0 on the outer boundary (full-domain index 0 or 12)
        outer = np.any(dom.index == 0, axis=1) | np.any(dom.index == 12, axis=1)
        data = np.where(outer, 0.0, 1.0)
        field = solve_dirichlet(dom, data)
        energies.append(dirichlet_energy(field) * symmetry_factor(dom))
    assert energies[1] == pytest.approx(energies[0], rel=1e-8)
    assert energies[2] == pytest.approx(energies[0], rel=1e-8)


def test_doubled_cell_carries_total_weight_one():
    dom = doubled_cell_domain(3, 4)
    a = np.array([0.2, 1.0, -0.7])
    # the same linear data on both copies: the energy is that of the cube
    field = solve_dirichlet(dom, lambda x: x @ a)
    assert dirichlet_energy(field) == pytest.approx(float(a @ a), rel=1e-10)
    assert set(np.unique(dom.copy)) == {0, 1, 2}
    n_k = (3 * 4 // 3 - 1) ** 3
    assert int(np.count_nonzero(dom.copy == 2)) == n_k == int(np.count_nonzero(dom.copy == 1))


def test_copies_decouple_inside_k():
    dom = doubled_cell_domain(3, 4)
    k = gate_boundary_mask(dom, 3, 4)
    mask = dom.dirichlet | k
    data = np.where(dom.copy == 2, 1.0, 0.0)
    # pin one red interior node at 1: the values spread through the red copy
    # only, the green copy stays at its zero boundary data
    red = np.flatnonzero(dom.copy == 2)[0]
    mask = mask.copy()
    mask[red] = True
    field = solve_dirichlet(dom, data, mask=mask)
    assert np.all(field.values[dom.copy == 1] == 0.0)
    assert field.values[dom.copy == 2].max() == pytest.approx(1.0)


def test_skeleton_and_gate_masks():
    dom = doubled_cell_domain(3, 2)
    sk = skeleton_mask(dom, 2)
    assert sk[dom.dirichlet].all()
    gm = gate_boundary_mask(dom, 3, 2)
    # the central subcell spans 2 steps: 3^3 nodes minus its one interior
    # node, all shared by the copies
    assert int(gm.sum()) == 26


def test_box_graph_weights():
    g = box_graph(2, 0.5, weights=np.array([[[1, 0], [0, 0]], [[0, 0], [0, 0]]], float))
    # only the edges bounding the first voxel carry conductance
    assert len(g.edges) == 12
    assert np.allclose(g.conductance, 0.5 / 4)


def test_factorized_solver_reuse():
    dom = cube_domain(6)
    solver = FactorizedDirichlet(dom.graph, dom.dirichlet)
    for c in (1.0, -2.0):
        f = solve_dirichlet(dom, lambda x: c * x[:, 0], solver=solver)
        assert np.allclose(f.values, c * dom.graph.coords[:, 0], atol=1e-10)


def test_radial_closed_forms():
    a, s, L = 1.0, 1 / 3, 1.0
    A, B = radial_coefficients(a, s, L)
    assert A / (s / 2) + B == pytest.approx(a)
    assert A / (L / 2) + B == pytest.approx(0.0, abs=1e-15)
    assert stated_radial_energy(a, s, L) == pytest.approx(math.pi / 2)
    # direct quadrature of 4 pi (A/r^2)^2 r^2 over [s/2, L/2]
    direct, _ = quad(lambda r: 4 * math.pi * A**2 / r**2, s / 2, L / 2)
    assert radial_energy(a, s, L) == pytest.approx(direct, rel=1e-8)
    assert radial_energy(a, s, L) == pytest.approx(2 * stated_radial_energy(a, s, L))


def test_shell_profile_is_radial():
    dom = shell_domain(32, 1 / 6, 1 / 2)
    field = solve_dirichlet(dom, dom.copy.astype(float))
    A, B = radial_coefficients(1.0, 1 / 3, 1.0)
    free = ~dom.dirichlet
    rad = np.linalg.norm(dom.graph.coords[free], axis=1)
    assert np.max(np.abs(field.values[free] - (A / rad + B))) < 0.05
    E = dirichlet_energy(field) * symmetry_factor(dom)
    assert E == pytest.approx(radial_energy(1.0, 1 / 3, 1.0), rel=0.05)


def test_dump_header():
    dom = cube_domain(3)
    field = solve_dirichlet(dom, lambda x: x[:, 0])
    header, blob = field.dump()
    assert header["nodes"] == dom.graph.size and header["components"] == 1
    assert len(blob) == 8 * dom.graph.size
