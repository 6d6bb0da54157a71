import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from ldglab.tensor import (BASIS, DegenerateTensor, MaterialParams, QTensor, additive_k, bulk_gradient,
                           bulk_potential, from_matrix, invariants, project_vacuum, s_star, to_matrix,
                           uniaxial, vacuum_distance)

MP = MaterialParams()


def random_unit(rng, n):
    v = rng.standard_normal((3, n))
    return v / np.linalg.norm(v, axis=0)


def test_basis_orthonormal():
    gram = np.einsum("aij,bij->ab", BASIS, BASIS)
    assert np.allclose(gram, np.eye(5), atol=1e-15)
    assert np.allclose(np.trace(BASIS, axis1=1, axis2=2), 0)


def test_zero_matrix_maps_to_zero():
    assert np.array_equal(from_matrix(np.zeros((3, 3))), np.zeros(5))


def test_uniaxial_norm():
    c = from_matrix(np.diag([2 / 3, -1 / 3, -1 / 3]))
    assert abs(np.linalg.norm(c) - np.sqrt(2 / 3)) < 1e-15


def test_round_trip_random():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((1000, 3, 3))
    m = a + np.swapaxes(a, 1, 2)
    m -= np.trace(m, axis1=1, axis2=2)[:, None, None] * np.eye(3) / 3
    back = to_matrix(from_matrix(m))
    assert np.max(np.abs(back - m)) < 1e-13


def test_from_matrix_rejects():
    with pytest.raises(ValueError):
        from_matrix(np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0.0]]))
    with pytest.raises(ValueError):
        from_matrix(np.eye(3))


def test_invariants_examples():
    assert invariants(np.zeros(5)) == (0.0, 0.0)
    n = np.array([0.3, -0.4, 0.866])
    for s in (0.7, 1.5, 2.0):
        t2, t3 = invariants(uniaxial(n, s))
        assert abs(t2 - 2 * s * s / 3) < 1e-13
        assert abs(t3 - 2 * s ** 3 / 9) < 1e-13
    t2, t3 = invariants(from_matrix(np.diag([0.8, -0.8, 0.0])))
    assert abs(t3) < 1e-15


def test_trq3_matches_matrix_trace():
    rng = np.random.default_rng(2)
    c = rng.standard_normal((5, 500))
    m = to_matrix(c)
    t3 = np.trace(m @ m @ m, axis1=-2, axis2=-1)
    assert np.max(np.abs(invariants(c)[1] - t3)) < 1e-12


def test_s_star_and_k():
    assert s_star(1, 1, 1) == 1.5
    assert additive_k(0, 0, 1) == 0.0
    # 1D scan oracle over s in [0, 4 s_*]
    for a, b, c in [(1, 1, 1), (0.5, 2.0, 1.3), (2.0, 0.1, 0.7)]:
        mp = MaterialParams(a, b, c)
        g = lambda s: -(a / 3) * s * s - (2 * b / 27) * s ** 3 + (c / 9) * s ** 4
        ss = np.linspace(0, 4 * mp.s_star, 400001)
        assert abs(mp.k + g(ss).min()) < 1e-9
        res = minimize_scalar(g, bounds=(0, 4 * mp.s_star), method="bounded", options={"xatol": 1e-12})
        assert abs(res.x - mp.s_star) < 1e-6


def test_vacuum_zero_and_origin_k():
    rng = np.random.default_rng(3)
    for mp in (MP, MaterialParams(0.5, 2.0, 1.3)):
        q = uniaxial(random_unit(rng, 200), mp.s_star)
        assert np.max(np.abs(bulk_potential(q, mp))) < 1e-12
        assert np.max(np.abs(bulk_gradient(q, mp))) < 1e-12
    assert bulk_potential(np.zeros(5), MP) == MP.k
    assert np.array_equal(bulk_gradient(np.zeros(5), MP), np.zeros(5))


def test_potential_nonnegative_million_samples():
    rng = np.random.default_rng(4)
    for _ in range(10):
        c = rng.standard_normal((5, 100000))
        c *= 10 * rng.uniform(0, 1, 100000) ** (1 / 5) / np.linalg.norm(c, axis=0)
        assert bulk_potential(c, MP).min() >= -1e-12


def test_zero_set_is_vacuum():
    rng = np.random.default_rng(5)
    near = uniaxial(random_unit(rng, 1000), MP.s_star) + 1e-9 * rng.standard_normal((5, 1000))
    assert np.max(bulk_potential(near, MP)) < 1e-12
    far = rng.standard_normal((5, 20000))
    d = vacuum_distance(far, MP)
    keep = d > 1e-6
    assert np.all(bulk_potential(far[:, keep], MP) > 0)


def test_gradient_finite_difference():
    rng = np.random.default_rng(6)
    c = rng.standard_normal((5, 1000))
    g = bulk_gradient(c, MP)
    fd = np.zeros_like(c)
    for k in range(5):
        e = np.zeros((5, 1))
        e[k] = 1e-5
        fd[k] = (bulk_potential(c + e, MP) - bulk_potential(c - e, MP)) / 2e-5
    rel = np.linalg.norm(fd - g, axis=0) / np.maximum(np.linalg.norm(g, axis=0), 1e-300)
    assert rel.max() < 1e-6


def test_projection_idempotent_and_norm():
    rng = np.random.default_rng(7)
    q = rng.standard_normal((5, 2000))
    p = project_vacuum(q, MP)
    assert np.array_equal(project_vacuum(p, MP), p)
    assert np.max(np.abs(np.sum(p * p, axis=0) - 2 / 3 * MP.s_star ** 2)) < 1e-12
    assert np.max(np.abs(bulk_potential(p, MP))) < 1e-12


def test_projection_degenerate():
    with pytest.raises(DegenerateTensor):
        project_vacuum(np.zeros(5), MP)
    with pytest.raises(DegenerateTensor):
        project_vacuum(QTensor.from_matrix(np.diag([-0.2, -0.2, 0.4]) * -1), MP)


def test_projection_amplitude_reset_against_brute_force():
    e3 = np.array([0.0, 0.0, 1.0])
    for s in (0.1, 1.0, 3.0):
        q = uniaxial(e3, s)
        assert np.allclose(project_vacuum(q, MP), uniaxial(e3, MP.s_star), atol=1e-14)
    rng = np.random.default_rng(8)
    q = rng.standard_normal(5)
    dirs = random_unit(rng, 200000)
    cand = uniaxial(dirs, MP.s_star)
    best = np.min(np.linalg.norm(cand - q[:, None], axis=0))
    assert np.linalg.norm(project_vacuum(q, MP) - q) <= best + 1e-12


def test_traceless_symmetric_preserved():
    rng = np.random.default_rng(9)
    c = rng.standard_normal((5, 100))
    for out in (bulk_gradient(c, MP), project_vacuum(c, MP)):
        m = to_matrix(out)
        assert np.max(np.abs(m - np.swapaxes(m, -1, -2))) < 1e-13
        assert np.max(np.abs(np.trace(m, axis1=-2, axis2=-1))) < 1e-13


def test_eta_core_default():
    assert MP.eta_core == pytest.approx(0.158203125, abs=1e-15)
