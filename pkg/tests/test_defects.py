import json

import numpy as np
import pytest

import ldglab.defects as dm
from ldglab.defects import (Cylinder, LoopSpec, LoopThroughCore, circle_loop, core_mask,
                            cross_section_scan, loop_class, sharpness_lower_bound, write_loops_jsonl,
                            write_scan_csv)
from ldglab.field import GridSpec, RegionOutOfDomain, constant_bc, disclination_bc, hedgehog_bc
from ldglab.solver import SolveOptions, minimize
from ldglab.tensor import MaterialParams

from loop_corpus import corpus, line_field, polygon_loop

MP = MaterialParams()


@pytest.fixture(scope="module")
def loops():
    return corpus()


@pytest.fixture(scope="module")
def disc_sweep():
    g = GridSpec.centered((32, 32, 32), 2.0 / 31)
    fq = disclination_bc(g, 4 * g.h)
    out = []
    for k in (4, 2):
        fq, rep = minimize(fq.with_values(fq.values, epsilon=k * g.h), SolveOptions(scheme="lbfgs"))
        assert rep.converged
        out.append(fq)
    return out


@pytest.fixture(scope="module")
def hedgehog_sweep():
    g = GridSpec.centered((32, 32, 32), 2.0 / 31)
    fq = hedgehog_bc(g, 4 * g.h)
    out = []
    for k in (4, 2):
        fq, rep = minimize(fq.with_values(fq.values, epsilon=k * g.h), SolveOptions(scheme="lbfgs"))
        assert rep.converged
        out.append(fq)
    return out


@pytest.fixture(scope="module")
def hedgehog(hedgehog_sweep):
    return hedgehog_sweep[-1]


def test_corpus_labels(loops):
    assert len(loops) == 30
    for fq, loop, expected, tag in loops:
        assert loop_class(fq, loop).nontrivial == expected, tag


def test_metamorphic_invariance(loops, monkeypatch):
    rng = np.random.default_rng(0)
    for fq, loop, expected, tag in loops[::3]:
        assert loop_class(fq, loop.reversed()).nontrivial == expected, tag
        k = int(rng.integers(1, len(loop.points) - 1))
        assert loop_class(fq, loop.rotated(k)).nontrivial == expected, tag
        # reparameterize: insert midpoints
        p = loop.points
        dense = np.empty((2 * len(p) - 1, p.shape[1]))
        dense[0::2] = p
        dense[1::2] = 0.5 * (p[:-1] + p[1:])
        assert loop_class(fq, LoopSpec(dense)).nontrivial == expected, tag
    real = dm.leading_director

    def flipped(q):
        n, gap = real(q)
        return n * rng.choice([-1.0, 1.0], size=n.shape[1:]), gap

    monkeypatch.setattr(dm, "leading_director", flipped)
    for fq, loop, expected, tag in loops:
        assert loop_class(fq, loop).nontrivial == expected, tag


def test_multiplicativity():
    g = GridSpec.centered((64, 64), 0.05)
    h = g.h
    base = (0.0, -0.5)
    left = polygon_loop([base, (0.0, 0.5), (-0.8, 0.5), (-0.8, -0.5)], h)
    right = polygon_loop([base, (0.8, -0.5), (0.8, 0.5), (0.0, 0.5)], h)
    for w1, w2 in ((0.5, 0.5), (0.5, 1.0), (1.0, -0.5), (1.0, 1.0), (-0.5, 0.5)):
        fq = line_field(g, [((-0.4, 0.0), w1), ((0.4, 0.0), w2)])
        a = loop_class(fq, left).nontrivial
        b = loop_class(fq, right).nontrivial
        assert a == (w1 % 1 != 0) and b == (w2 % 1 != 0)
        assert loop_class(fq, left.compose(right)).nontrivial == (a != b)


def test_loop_preconditions(disc_sweep):
    fq = disc_sweep[-1]
    with pytest.raises(LoopThroughCore):
        loop_class(fq, circle_loop((0, 0, 0), fq.grid.h, fq.grid.h / 4))
    far = LoopSpec(np.array([[0, 0, 0], [0.5, 0, 0], [0.5, 0.5, 0], [0, 0, 0.0]]))
    with pytest.raises(ValueError):
        loop_class(fq, far)
    with pytest.raises(ValueError):
        LoopSpec(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]))
    with pytest.raises(RegionOutOfDomain):
        loop_class(fq, circle_loop((0, 0, 0), 1.5, fq.grid.h), check_spacing=False)


def test_core_masks(disc_sweep, hedgehog):
    g = GridSpec.centered((16, 16, 16), 0.1)
    assert not core_mask(constant_bc(g, (1, 0, 0), 0.2)).any()
    x = hedgehog.grid.coords()
    rho = np.sqrt(np.sum(x * x, axis=0))
    m = core_mask(hedgehog)
    assert m.any() and rho[m].max() <= 4 * hedgehog.epsilon
    from scipy import ndimage
    for fq in disc_sweep:
        m = core_mask(fq)
        rho2 = np.sqrt(x[0] ** 2 + x[1] ** 2)
        assert rho2[m].max() <= 4 * fq.epsilon
        assert ndimage.label(m)[1] == 1
        assert np.all(m[:, :, 1:-1].any(axis=(0, 1)))
    assert core_mask(disc_sweep[1]).sum() <= core_mask(disc_sweep[0]).sum()


def test_cross_section_scan(disc_sweep, hedgehog):
    fq = disc_sweep[-1]
    g = fq.grid
    hits = cross_section_scan(fq, 2, (0, 0, 0), 0.3, (-0.8, 0.8))
    assert len(hits) == int(np.sum(np.abs(g.axis(2)) <= 0.8 + 1e-9))
    assert all(s.found and s.max_f > MP.eta_core for s in hits)
    off = cross_section_scan(hedgehog, 2, (0.5, 0.5, 0), 0.2, (-0.8, 0.8))
    assert not any(s.found for s in off)
    vac = constant_bc(g, (0, 0, 1), fq.epsilon)
    assert not any(s.found for s in cross_section_scan(vac, 2, (0, 0, 0), 0.3, (-0.8, 0.8)))
    with pytest.raises(RegionOutOfDomain):
        cross_section_scan(fq, 2, (0, 0, 0), 0.3, (-1.0, 1.0))
    with pytest.raises(ValueError):
        cross_section_scan(constant_bc(GridSpec.centered((8, 8), 0.1), (1, 0, 0), 0.2), 1, (0, 0), 0.1, (0, 0.1))


def test_sharpness(disc_sweep, hedgehog_sweep):
    cyl = Cylinder((0, 0, 0), 0.3, 2, (-0.6, 0.6))
    coarse, fine = (sharpness_lower_bound(fq, cyl) for fq in disc_sweep)
    assert 0.25 * coarse <= fine <= 4 * coarse
    g = disc_sweep[0].grid
    assert sharpness_lower_bound(constant_bc(g, (1, 0, 0), 0.1), cyl) < 1e-12
    # no line: the off-core cylinder integral falls like ε
    off = Cylinder((0.5, 0.5, 0), 0.2, 2, (-0.6, 0.6))
    a, b = (sharpness_lower_bound(fq, off) for fq in hedgehog_sweep)
    assert b <= 0.6 * a


def test_outputs(tmp_path, disc_sweep, loops):
    fq = disc_sweep[-1]
    hits = cross_section_scan(fq, 2, (0, 0, 0), 0.3, (-0.3, 0.3))
    write_scan_csv(tmp_path / "scan.csv", hits)
    rows = (tmp_path / "scan.csv").read_text().splitlines()
    assert rows[0] == "t,found,y_x,y_y,y_z,max_f" and len(rows) == len(hits) + 1
    verdicts = [loop_class(f, l) for f, l, _, _ in loops[:3]]
    write_loops_jsonl(tmp_path / "loops.jsonl", verdicts)
    recs = [json.loads(s) for s in (tmp_path / "loops.jsonl").read_text().splitlines()]
    assert [r["class"] for r in recs] == [v.label for v in verdicts]
    assert all(r["min_gap"] > 0 for r in recs)
