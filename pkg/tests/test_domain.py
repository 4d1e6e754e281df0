import itertools

import numpy as np
import pytest

import refdiff as rd
from refdiff import domain as dom
from refdiff.errors import EmptyActiveSet, ParallelNormals


@pytest.fixture(scope="module")
def orthant2():
    return rd.make_example("orthant", J=2)


@pytest.fixture(scope="module")
def gps2():
    return rd.make_example("gps", J=2)


def test_contains_classification(orthant2):
    d = orthant2.domain
    assert rd.contains(d, [1.0, 1.0])[0] == dom.INTERIOR
    assert rd.contains(d, [0.0, 1.0])[0] == dom.BOUNDARY
    assert rd.contains(d, [-0.1, 0.5])[0] == dom.EXTERIOR


def test_active_set_examples(orthant2, gps2):
    assert rd.active_set(orthant2.domain, [0.0, 0.0]) == [0, 1]
    assert rd.active_set(orthant2.domain, [0.0, 1.0]) == [0]
    # all faces active at the origin of the shared-resource preset
    assert rd.active_set(gps2.domain, [0.0, 0.0]) == [0, 1, 2]
    with pytest.raises(EmptyActiveSet):
        rd.active_set(orthant2.domain, [1.0, 1.0])


def test_active_set_monotone_in_tolerance(orthant2):
    rng = np.random.default_rng(0)
    d = orthant2.domain
    for _ in range(40):
        x = rng.uniform(0, 0.5, size=2)
        x[rng.integers(2)] = rng.uniform(0, 1e-6)
        try:
            small = set(rd.active_set(d, x, tol=1e-8))
        except EmptyActiveSet:
            small = set()
        big = set(rd.active_set(d, x, tol=1e-3))
        assert small <= big


def test_direction_cone(orthant2, gps2):
    gam = rd.direction_cone(orthant2.domain, [0.0, 1.0])
    assert len(gam) == 1 and np.allclose(gam[0], [1.0, 0.0])
    gam = rd.direction_cone(gps2.domain, [0.0, 1.0])
    assert np.allclose(gam[0], [1.0, -1.0])


def test_positive_normal_certificate(orthant2, gps2):
    ok, cert, margin = rd.completely_s_at(orthant2.domain, [0.0, 0.0])
    assert ok and margin > 0
    # certificate actually separates: positive inner product with all gammas
    for i in rd.active_set(orthant2.domain, [0.0, 0.0]):
        assert np.dot(cert, orthant2.domain.pieces[i].gamma([0, 0])) > 0
    ok, cert, margin = rd.completely_s_at(gps2.domain, [0.0, 0.0])
    assert not ok


def test_wedge_vertex_condition():
    w = rd.make_example("wedge")          # alpha = 1: antiparallel at vertex
    ok, _, _ = rd.completely_s_at(w.domain, [0.0, 0.0])
    assert not ok
    w2 = rd.make_example("wedge", theta1=np.pi / 8, theta2=np.pi / 8)
    ok, _, _ = rd.completely_s_at(w2.domain, [0.0, 0.0])
    assert ok


def test_completely_s_report_matches_bruteforce(orthant2, gps2):
    for system in (orthant2, gps2):
        d = system.domain
        report = rd.check_completely_s(d)
        got = {tuple(r.indices): r.passed for r in report.strata}
        # independent enumeration of all 2^m strata via the LP representative
        expect = {}
        m = len(d.pieces)
        for size in range(1, m + 1):
            for subset in itertools.combinations(range(m), size):
                rep = dom._stratum_representative(d, set(subset))
                if rep is None:
                    continue
                ok, _, _ = rd.completely_s_at(d, rep)
                expect[tuple(sorted(rd.active_set(d, rep)))] = ok
        assert got == expect


def test_edge_normal_examples(orthant2):
    n12 = rd.edge_normal(orthant2.domain, 0, 1, [0.0, 0.0])
    assert np.allclose(n12, [0.0, 1.0])
    # oblique pair reduces to e2 after normalization
    pieces = [
        dom.BoundaryPiece("half-space", normal=[1, 0], offset=0, gamma=[1, 0]),
        dom.BoundaryPiece("half-space", normal=np.array([1, 1]) / np.sqrt(2),
                          offset=0, gamma=np.array([1, 1]) / np.sqrt(2)),
    ]
    d = dom.DomainSpec(2, pieces, bbox=([-1, -1], [1, 1]))
    nij = rd.edge_normal(d, 0, 1, [0.0, 0.0])
    assert np.allclose(nij, [0.0, 1.0], atol=1e-12)
    with pytest.raises(ParallelNormals):
        rd.edge_normal(orthant2.domain, 0, 0, [0.0, 0.0])


def test_edge_normal_orthogonal_unit(gps2):
    rng = np.random.default_rng(1)
    d = gps2.domain
    for _ in range(20):
        x = np.array([rng.uniform(0.1, 2), 0.0])
        v = rd.edge_normal(d, 0, 1, x)
        assert abs(np.linalg.norm(v) - 1) < 1e-10
        assert abs(np.dot(v, d.pieces[0].unit_normal(x))) < 1e-10


def test_boundary_quadrature_square_face():
    pieces = [
        dom.BoundaryPiece("half-space", normal=[1, 0], offset=0, gamma=[1, 0]),
        dom.BoundaryPiece("half-space", normal=[-1, 0], offset=-1, gamma=[-1, 0]),
        dom.BoundaryPiece("half-space", normal=[0, 1], offset=0, gamma=[0, 1]),
        dom.BoundaryPiece("half-space", normal=[0, -1], offset=-1, gamma=[0, -1]),
    ]
    sq = dom.DomainSpec(2, pieces, bbox=([0, 0], [1, 1]), bounded=True)
    pts, w = rd.boundary_quadrature(sq, 0, 10)
    assert len(pts) == 10
    assert np.allclose(w, 0.1)
    assert np.allclose(pts[:, 0], 0.0)
    assert np.all((pts[:, 1] > 0) & (pts[:, 1] < 1))


def test_boundary_quadrature_wedge_ray():
    w = rd.make_example("wedge", box=4.0)
    pts, wt = rd.boundary_quadrature(w.domain, 0, 8)
    # face 1 is the positive x axis clipped at the box
    assert np.allclose(pts[:, 1], 0.0)
    assert np.isclose(wt.sum(), 4.0)


def test_boundary_quadrature_disk_chart():
    disk = rd.make_example("disk")
    pts, w = rd.boundary_quadrature(disk.domain, 0, 16)
    assert len(pts) == 16
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    assert np.allclose(w, 2 * np.pi / 16)


def test_singular_certificate_gps_and_wedge():
    g = rd.make_example("gps", J=2)
    rep = rd.check_singular_certificate(g.domain, g.domain.singular_points[0],
                                        coefficients=g.coefficients,
                                        samples=1200, seed=2)
    assert rep.passed
    w = rd.make_example("wedge")
    sp = w.domain.singular_points[0]
    assert np.isclose(sp.c2, np.sqrt(2))
    rep = rd.check_singular_certificate(w.domain, sp,
                                        coefficients=w.coefficients,
                                        samples=1200, seed=2)
    assert rep.passed


def test_singular_certificate_detects_inflated_alpha():
    g = rd.make_example("gps", J=2)
    sp = g.domain.singular_points[0]
    bad = dom.SingularPoint(sp.x, sp.v, sp.radius, alpha=2.0 * sp.alpha,
                            c1=sp.c1, c2=sp.c2)
    rep = rd.check_singular_certificate(g.domain, bad,
                                        coefficients=g.coefficients,
                                        samples=1200, seed=3)
    assert rep.angle_margin < 0
    assert not rep.passed


def test_domain_json_roundtrip():
    o = rd.make_example("orthant", J=2)
    d2 = rd.domain_from_json(o.domain.dumps())
    assert d2.dimension == 2
    x = [0.3, 0.0]
    assert np.allclose(d2.piece_values(x), o.domain.piece_values(x))
    g = rd.make_example("gps", J=2)
    d3 = rd.domain_from_json(g.domain.dumps())
    assert len(d3.singular_points) == 1
    assert np.allclose(d3.singular_points[0].v, g.domain.singular_points[0].v)


def test_distance_to_boundary():
    o = rd.make_example("orthant", J=2)
    assert np.isclose(dom.distance_to_boundary(o.domain, [0.5, 2.0]), 0.5)
    disk = rd.make_example("disk")
    assert np.isclose(dom.distance_to_boundary(disk.domain, [0.25, 0.0]), 0.75,
                      atol=1e-8)
