import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agfem.mesh import (Box, CellId, MaxLevelExceededError, QuadtreeMesh,
                        edge_neighbors, refine_and_coarsen, uniform_mesh,
                        vertex_lattice_coords)
from oracle import balanced_closure

UNIT = Box(0.0, 0.0, 1.0)


def total_area(mesh):
    return sum(mesh.h(c) ** 2 for c in mesh.leaves)


def test_uniform_counts():
    assert len(uniform_mesh(UNIT, 0)) == 1
    m = uniform_mesh(UNIT, 3)
    assert len(m) == 64
    assert m.h(next(iter(m.leaves))) == pytest.approx(1 / 8)
    assert len(uniform_mesh(UNIT, 6)) == 4096


def test_refine_corner_counts():
    m = uniform_mesh(UNIT, 2)
    m2 = refine_and_coarsen(m, [CellId(2, 0, 0)], [])
    assert len(m2) == 19  # 16 - 1 + 4
    m3 = uniform_mesh(UNIT, 3)
    m4 = refine_and_coarsen(m3, [CellId(3, 0, 0)], [])
    assert len(m4) == 67


def test_refine_coarsen_identity():
    m = uniform_mesh(UNIT, 3)
    m2 = refine_and_coarsen(m, [], [])
    assert m2.leaves == m.leaves


def test_coarsen_quadruple_and_partial():
    m = uniform_mesh(UNIT, 2)
    quad = [CellId(2, 0, 0), CellId(2, 1, 0), CellId(2, 0, 1), CellId(2, 1, 1)]
    m2 = refine_and_coarsen(m, [], quad)
    assert len(m2) == 13
    assert CellId(1, 0, 0) in m2.leaves
    # incomplete sibling group is silently kept
    m3 = refine_and_coarsen(m, [], quad[:3])
    assert m3.leaves == m.leaves


def test_double_refine_matches_balance_oracle():
    m = uniform_mesh(UNIT, 2)
    m = refine_and_coarsen(m, [CellId(2, 0, 0)], [])
    m = refine_and_coarsen(m, [CellId(3, 0, 0)], [])
    expected = balanced_closure(
        set(uniform_mesh(UNIT, 2).leaves) - {CellId(2, 0, 0)}
        | set(CellId(3, i, j) for i, j in [(1, 0), (0, 1), (1, 1)])
        | set(CellId(4, i, j) for i, j in [(0, 0), (1, 0), (0, 1), (1, 1)]),
        m.max_level)
    assert m.leaves == expected


def test_max_level_guard():
    m = uniform_mesh(UNIT, 1, max_level=1)
    with pytest.raises(MaxLevelExceededError):
        refine_and_coarsen(m, [CellId(1, 0, 0)], [])


def test_neighbors_uniform():
    m = uniform_mesh(UNIT, 3)
    inner = edge_neighbors(m, CellId(3, 3, 3))
    assert len(inner) == 4
    corner = edge_neighbors(m, CellId(3, 0, 0))
    assert len(corner) == 2


def test_neighbors_across_levels():
    m = uniform_mesh(UNIT, 2)
    m = refine_and_coarsen(m, [CellId(2, 0, 0)], [])
    nbrs = edge_neighbors(m, CellId(2, 1, 0))
    west = [n for n, side in nbrs if side == "W"]
    assert sorted(west) == [CellId(3, 1, 0), CellId(3, 1, 1)]


def test_neighbor_symmetry():
    m = uniform_mesh(UNIT, 2)
    m = refine_and_coarsen(m, [CellId(2, 0, 0), CellId(2, 3, 3)], [])
    for cid in m.leaves_sorted:
        for nb, _ in edge_neighbors(m, cid):
            back = [x for x, _ in edge_neighbors(m, nb)]
            assert cid in back


def test_vertex_lattice():
    m = uniform_mesh(UNIT, 1, max_level=3)
    assert vertex_lattice_coords(m, CellId(1, 0, 0)) == \
        ((0, 0), (4, 0), (0, 4), (4, 4))
    m0 = uniform_mesh(UNIT, 0, max_level=5)
    assert vertex_lattice_coords(m0, CellId(0, 0, 0)) == \
        ((0, 0), (32, 0), (0, 32), (32, 32))


def test_vertex_lattice_consistency_across_levels():
    m = uniform_mesh(UNIT, 1, max_level=4)
    m = refine_and_coarsen(m, [CellId(1, 0, 0)], [])
    coarse = vertex_lattice_coords(m, CellId(1, 1, 0))
    fine = vertex_lattice_coords(m, CellId(2, 1, 1))
    assert set(coarse) & set(fine)  # shared corner has identical integers


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=6),
       st.integers(0, 3))
def test_random_adaptation_invariants(picks, rounds):
    rng_mesh = uniform_mesh(UNIT, 2, max_level=7)
    for _ in range(rounds + 1):
        leaves = rng_mesh.leaves_sorted
        targets = []
        for i, j in picks:
            cand = [c for c in leaves if (c.i % 4, c.j % 4) == (i, j)]
            if cand:
                targets.append(cand[0])
        rng_mesh = refine_and_coarsen(rng_mesh, set(targets), [])
    # area conservation
    assert total_area(rng_mesh) == pytest.approx(1.0, rel=1e-12)
    # 2:1 balance against the independent pairwise oracle
    assert rng_mesh.leaves == balanced_closure(rng_mesh.leaves, rng_mesh.max_level)
    # neighbor symmetry
    for cid in rng_mesh.leaves_sorted:
        for nb, _ in edge_neighbors(rng_mesh, cid):
            assert cid in [x for x, _ in edge_neighbors(rng_mesh, nb)]
