import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specboltz.conservation import build_projector, constraint_matrix, project
from specboltz.diagnostics import maxwellian
from specboltz.grid import build_grid

import oracles


@pytest.fixture(scope="module")
def grid4():
    return build_grid(4, 2.0)


@pytest.fixture(scope="module")
def proj8(grid8):
    return build_projector(grid8)


def test_constraint_rows(grid8):
    C = constraint_matrix(grid8)
    w = grid8.quad_weights.ravel()
    assert C.shape == (5, grid8.M)
    assert np.array_equal(C[0], w)
    assert np.allclose(C[4], np.sum(grid8.velocities**2, 1) * w)


def test_maxwellian_moment_pattern():
    g = build_grid(16, 5.0)
    C = constraint_matrix(g)
    m = C @ maxwellian(1.0, 0.0, 1.0, g).ravel()
    assert m[0] == pytest.approx(1.0, abs=1e-4)
    assert np.abs(m[1:4]).max() <= 1e-4
    assert m[4] == pytest.approx(3.0, abs=1e-3)


def test_gram_positive_definite(proj8, grid4):
    assert np.all(np.linalg.eigvalsh(proj8.gram) > 0)
    assert np.allclose(proj8.gram, proj8.gram.T)
    c = build_projector(grid4).condition_number
    assert np.isfinite(c) and c > 1


def test_singular_constraints_rejected(grid4):
    C = constraint_matrix(grid4)
    C[4] = C[0]
    with pytest.raises(np.linalg.LinAlgError):
        build_projector(grid4, C)


def test_feasible_vector_unchanged(proj8):
    rng = np.random.default_rng(0)
    q = proj8.project(rng.normal(size=proj8.M))
    assert np.array_equal(project(proj8, q), q) or np.abs(project(proj8, q) - q).max() <= 1e-15


def test_row_space_maps_to_zero(proj8):
    rng = np.random.default_rng(1)
    y = rng.normal(size=5)
    q = proj8.C.T @ y
    assert np.abs(proj8.project(q)).max() <= 1e-12 * np.abs(q).max()


def test_matches_kkt_at_64(grid4):
    proj = build_projector(grid4)
    rng = np.random.default_rng(2)
    for _ in range(5):
        q = rng.normal(size=64)
        ref = oracles.kkt_projection(proj.C, q)
        assert np.abs(proj.project(q) - ref).max() <= 1e-10


def test_shape_preserved_and_validation(proj8, grid8):
    q = np.ones(grid8.shape)
    assert proj8.project(q).shape == grid8.shape
    with pytest.raises(ValueError):
        proj8.project(np.ones(10))
    bad = np.ones(grid8.M)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        proj8.project(bad)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 64, elements=st.floats(-1e3, 1e3)))
def test_conservation_and_idempotence_property(q):
    g = build_grid(4, 2.0)
    proj = build_projector(g)
    Q = proj.project(q)
    scale = max(np.abs(Q).sum(), np.abs(q).sum(), 1e-300)
    assert np.abs(proj.C @ Q).max() <= 1e-10 * scale
    assert np.abs(proj.project(Q) - Q).max() <= 1e-12 * max(1.0, np.abs(Q).max())


def test_optimality_against_feasible_points(proj8):
    rng = np.random.default_rng(3)
    q = rng.normal(size=proj8.M)
    dist = np.linalg.norm(q - proj8.project(q))
    for _ in range(100):
        z = proj8.project(rng.normal(size=proj8.M) * rng.uniform(0.1, 10))
        assert dist <= np.linalg.norm(q - z)
