import numpy as np
import pytest

import refdiff as rd
from refdiff import domain as dom
from refdiff.cones import MollifiedConeDistance, PolyCone, fattened_generators
from refdiff.errors import NotInU, RadiusTooLarge, TooClose
from refdiff.testfunctions import _stratum_model, combine


@pytest.fixture(scope="module")
def orthant2():
    return rd.make_example("orthant", J=2)


@pytest.fixture(scope="module")
def gps2():
    return rd.make_example("gps", J=2)


# ---------------------------------------------------------------------------
# cone machinery
# ---------------------------------------------------------------------------

def test_polycone_halfplane_distance():
    cone = PolyCone([[1.0, 0.0], [0.0, 1.0]])   # first quadrant
    Z = np.array([[1.0, 1.0], [-1.0, 0.5], [-3.0, -4.0], [2.0, -1.0]])
    d = cone.distance(Z)
    assert np.allclose(d, [0.0, 1.0, 5.0, 1.0])


def test_polycone_3d_matches_nnls():
    rng = np.random.default_rng(0)
    gens = fattened_generators(-np.array([[1.0, -0.5, 0.2], [-0.3, 1.0, 0.1]]), 0.2)
    cone = PolyCone(gens)
    from scipy.optimize import nnls
    Z = rng.standard_normal((50, 3)) * 2
    d_fast = cone.distance(Z)
    G = gens.T
    d_ref = np.array([np.linalg.norm(z - G @ nnls(G, z)[0]) for z in Z])
    assert np.allclose(d_fast, d_ref, atol=1e-9)


def test_mollified_distance_near_halfspace():
    # pointed fan nearly filling the lower half-plane: above it, and away
    # from the fan edges, the distance is the height, up to the fan opening
    th = np.linspace(-np.pi + 0.05, -0.05, 41)
    cone = PolyCone(np.stack([np.cos(th), np.sin(th)], axis=1))
    mol = MollifiedConeDistance(cone, eta=0.1, lam=1.0, eps=0.05)
    rng = np.random.default_rng(1)
    z2 = rng.uniform(0.12, 0.8, 200)
    z1 = rng.uniform(-0.5, 0.5, 200) * z2
    Z = np.column_stack([z1, z2])
    assert np.max(np.abs(mol.value(Z) - z2)) <= 0.08


def test_mollified_distance_bounds_and_descent():
    gam = np.array([[1.0, -0.5], [-0.5, 1.0]])
    gens = fattened_generators(-gam, 0.3)
    cone = PolyCone(gens)
    mol = MollifiedConeDistance(cone, eta=0.12, lam=0.8, eps=0.05)
    rng = np.random.default_rng(2)
    Z = rng.standard_normal((400, 2))
    band = mol.band_mask(Z)
    assert band.sum() > 50
    Zb = Z[band]
    # distance approximation within eps on the band
    assert np.max(np.abs(mol.value(Zb) - cone.distance(Zb))) <= 0.05
    # descent against every probe inside the fattened hull (the -gamma rays)
    margin = mol.gradient_margin(Zb, -gam)
    assert margin < 0
    # second differences bounded by 3/eta + 1
    H = mol.hessian(Zb)
    assert np.max(np.abs(H)) <= 3.0 / 0.12 + 1.0


# ---------------------------------------------------------------------------
# interior bumps
# ---------------------------------------------------------------------------

def test_interior_bump_values(orthant2):
    f = rd.interior_bump(orthant2.domain, [1.0, 1.0], 0.25)
    assert f.value([1.0, 1.0]) == 1.0
    assert f.value([1.0 + 0.5 * 1.1, 1.0]) == 0.0
    # plateau on the half-radius ball
    assert f.value([1.0 + 0.24, 1.0]) == 1.0
    rep = rd.check_admissible(f, orthant2.domain, samples=400, seed=1)
    assert rep.passed
    with pytest.raises(TooClose):
        rd.interior_bump(orthant2.domain, [0.3, 1.0], 0.25)


def test_interior_bump_derivative_consistency(orthant2):
    f = rd.interior_bump(orthant2.domain, [1.0, 1.2], 0.36)
    probes = np.random.default_rng(3).uniform(0.5, 1.7, size=(100, 2))
    out = f.check_derivatives(probes)
    assert out["grad_err"] <= 1e-5
    assert out["hess_err"] <= 1e-4


def test_interior_bump_boundary_gradient_zero(orthant2):
    f = rd.interior_bump(orthant2.domain, [1.0, 1.0], 0.25)
    Y = np.column_stack([np.linspace(0, 3, 60), np.zeros(60)])
    assert np.all(f.gradient(Y) == 0.0)


# ---------------------------------------------------------------------------
# singular bumps and ramps
# ---------------------------------------------------------------------------

def test_singular_bump_properties(gps2):
    sp = gps2.domain.singular_points[0]
    f = rd.singular_bump(gps2.domain, sp, r=0.4)
    assert f.value([0.0, 0.0]) == 1.0
    # one on the inner certificate ball (shrunk c1), zero past the slab
    assert f.value([0.1, 0.1]) == 1.0
    far = np.array([[3.0, 3.0], [0.0, 4.0]])
    assert np.all(f._value(far) == 0.0)
    # admissibility: gradient is a nonpositive multiple of v
    Y = rd.domain.sample_boundary(gps2.domain, 300, seed=4)
    G = f.gradient(Y)
    for i in range(2):
        gam = gps2.domain.pieces[i].gamma([1.0, 0.0])
        assert np.max(G @ gam) <= 1e-12
    with pytest.raises(RadiusTooLarge):
        rd.singular_bump(gps2.domain, sp, r=-1.0)


def test_singular_bump_derivative_consistency(gps2):
    sp = gps2.domain.singular_points[0]
    f = rd.singular_bump(gps2.domain, sp, r=0.4)
    probes = np.random.default_rng(19).uniform(0.0, 0.8, size=(100, 2))
    out = f.check_derivatives(probes)
    assert out["grad_ok"] and out["hess_ok"]


def test_singular_bump_bound_triple(gps2):
    sp = gps2.domain.singular_points[0]
    f = rd.singular_bump(gps2.domain, sp, r=0.5)
    A0, A1, A2 = f.bound_triple
    P = np.random.default_rng(5).uniform(0, 1.2, size=(500, 2))
    assert np.abs(f._value(P)).max() <= A0
    assert np.linalg.norm(f._gradient(P), axis=1).max() <= A1
    assert np.abs(f._hessian(P)).sum(axis=(1, 2)).max() <= A2


def test_singular_ramp_constants(gps2):
    sp = gps2.domain.singular_points[0]
    f, report = rd.singular_ramp(gps2.domain, sp, delta=2e-5, eps=0.04,
                                 coefficients=gps2.coefficients)
    assert f.value([0.0, 0.0]) == 0.0
    assert report["sup_value"] <= report["sup_bound"] * (1 + 1e-6)
    assert report["sup_gradient"] <= report["grad_bound"] * (1 + 1e-6)
    assert report["band_curvature_min"] >= 2.0 - 1e-9
    # negated ramp is admissible
    rep = rd.check_admissible(-f, gps2.domain, samples=400, seed=6)
    assert rep.passed


def test_singular_ramp_second_order_term_1d():
    hs = rd.make_example("halfline")
    sp = dom.SingularPoint([0.0], [1.0], radius=np.inf, alpha=1.0, c1=0.5, c2=1.5)
    d2 = dom.DomainSpec(1, hs.domain.pieces, singular_points=[sp],
                        bbox=hs.domain.bbox)
    delta, eps = 2e-5, 0.04
    f, _ = rd.singular_ramp(d2, sp, delta=delta, eps=eps)
    y = np.array([eps / 4.0])
    assert eps / 4.0 >= delta + 2 * np.sqrt(delta)
    # a = 1: second-order term equals the profile curvature >= 2
    assert f.hessian(y)[0, 0] >= 2.0 - 1e-9


# ---------------------------------------------------------------------------
# boundary bumps
# ---------------------------------------------------------------------------

def test_boundary_bump_face(orthant2):
    g = rd.boundary_bump(orthant2.domain, [1.0, 0.0], 0.5)
    assert g.value([1.0, 0.0]) == 1.0
    assert g.value([1.6, 0.0]) == 0.0
    assert g.value([1.0 + 0.9 * g.info["plateau_radius"], 0.0]) == 1.0
    Y = np.column_stack([np.linspace(0.55, 1.45, 200), np.zeros(200)])
    gam = orthant2.domain.pieces[1].gamma([1.0, 0.0])
    assert np.max(g.gradient(Y) @ gam) <= 1e-12
    rep = rd.check_admissible(g, orthant2.domain, samples=500, seed=7)
    assert rep.passed


def test_boundary_bump_support_in_ball(orthant2):
    g = rd.boundary_bump(orthant2.domain, [1.0, 0.0], 0.5)
    rng = np.random.default_rng(8)
    Y = np.array([1.0, 0.0]) + rng.uniform(-0.8, 0.8, size=(800, 2))
    Y = Y[np.linalg.norm(Y - [1.0, 0.0], axis=1) >= 0.5]
    assert np.all(g._value(Y) == 0.0)


def test_boundary_bump_reflected_cone_separation(orthant2):
    # the shifted reflected cone meets the closed domain only at the apex
    model = _stratum_model(orthant2.domain, np.array([1.0, 0.0]))
    rng = np.random.default_rng(9)
    m = len(model.cone.generators)
    coef = rng.uniform(0, 1, size=(300, m))
    pts = np.array([1.0, 0.0]) + 0.4 * (coef @ model.cone.generators)
    keep = np.linalg.norm(pts - [1.0, 0.0], axis=1) > 1e-8
    vals = orthant2.domain.piece_values_batch(pts[keep])
    assert np.all(np.min(vals, axis=1) < -1e-12)


def test_boundary_bump_oblique(gps2):
    g = rd.boundary_bump(gps2.domain, [1.0, 0.0], 0.4)
    Y = np.column_stack([np.random.default_rng(10).uniform(0.6, 1.4, 200),
                         np.zeros(200)])
    gam = gps2.domain.pieces[1].gamma([1.0, 0.0])
    inner = g.gradient(Y) @ gam
    assert np.max(inner) <= 1e-12
    assert np.min(inner) < -1e-6       # strictly decreasing somewhere


def test_boundary_bump_not_in_u(gps2):
    with pytest.raises(NotInU):
        rd.boundary_bump(gps2.domain, [0.0, 0.0], 0.1)


def test_boundary_bump_translation_covariance(orthant2):
    g1 = rd.boundary_bump(orthant2.domain, [1.0, 0.0], 0.4)
    g2 = rd.boundary_bump(orthant2.domain, [1.7, 0.0], 0.4)
    shift = np.array([0.7, 0.0])
    Y = np.random.default_rng(11).uniform([0.6, 0.0], [1.4, 0.5], size=(100, 2))
    assert np.max(np.abs(g1._value(Y) - g2._value(Y + shift))) <= 1e-10
    assert np.max(np.abs(g1._gradient(Y) - g2._gradient(Y + shift))) <= 1e-10


def test_boundary_bump_bound_triple_dominates(orthant2):
    g = rd.boundary_bump(orthant2.domain, [1.0, 0.0], 0.5)
    A0, A1, A2 = g.bound_triple
    P = np.array([1.0, 0.0]) + 0.5 * np.random.default_rng(12).uniform(
        -1, 1, size=(600, 2))
    assert np.abs(g._value(P)).max() <= A0
    assert np.linalg.norm(g._gradient(P), axis=1).max() <= A1
    assert np.abs(g._hessian(P)).sum(axis=(1, 2)).max() <= A2


def test_check_admissible_detects_violation(orthant2):
    gam = orthant2.domain.pieces[0].gamma([0.0, 1.0])

    def value(Y):
        return Y @ gam

    def gradient(Y):
        return np.tile(gam, (len(Y), 1))

    def hessian(Y):
        return np.zeros((len(Y), 2, 2))

    f = rd.TestFunction(2, value, gradient, hessian)
    rep = rd.check_admissible(f, orthant2.domain, samples=300, seed=13)
    assert rep.worst_boundary_inner >= np.dot(gam, gam) - 1e-9
    assert not rep.passed


# ---------------------------------------------------------------------------
# cover family
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_family():
    o = rd.make_example("orthant", J=2, box=4.0)
    fam = rd.assemble_cover_family(o.domain, o.coefficients, N=0.8, eps=0.3,
                                   seed=0)
    return o, fam


def test_family_member_zero_and_level(small_family):
    o, fam = small_family
    x = np.array([0.5, 0.5])
    f = fam.member(x)
    rng = np.random.default_rng(14)
    near = x + rng.uniform(-1, 1, size=(200, 2)) * 0.3 / np.sqrt(2)
    near = near[np.linalg.norm(near - x, axis=1) <= 0.15]
    near = near[np.all(near >= 0, axis=1)]
    assert np.all(f._value(near) == 0.0)
    far = rd.domain.sample_closure(o.domain, 400, seed=15)
    far = far[(np.linalg.norm(far - x, axis=1) > 0.9)
              & (np.linalg.norm(far, axis=1) <= 0.8 + 2 * 0.3)]
    assert np.all(f._value(far) > 0.5)


def test_family_gradient_condition(small_family):
    o, fam = small_family
    B = rd.domain.sample_boundary(o.domain, 800, seed=16)
    B = B[np.linalg.norm(B, axis=1) <= 1.4]
    ev = fam.precompute(B, o.coefficients)
    worst = -np.inf
    for k in range(0, len(fam.centers), max(1, len(fam.centers) // 10)):
        v, g, lf = ev.member_arrays(fam.centers[k])
        for i in range(2):
            gam = o.domain.pieces[i].gamma([1.0, 1.0])
            act = np.abs(B[:, i]) <= 1e-8
            if act.any():
                worst = max(worst, float(np.max(g[act] @ gam)))
    assert worst <= 1e-10


def test_family_generator_bound(small_family):
    o, fam = small_family
    pts = rd.domain.sample_closure(o.domain, 500, seed=17)
    ev = fam.precompute(pts, o.coefficients)
    for k in range(0, len(fam.centers), max(1, len(fam.centers) // 8)):
        _, _, lf = ev.member_arrays(fam.centers[k])
        assert np.abs(lf).max() <= fam.C


def test_family_manifest(small_family):
    _, fam = small_family
    man = fam.manifest()
    assert man["c"] == 0.5
    assert len(man["bumps"]) == len(fam.bumps)
    assert man["C"] >= 1.0


def test_family_members_translate_on_halfline():
    hs = rd.make_example("halfline", box=20.0)
    fam = rd.assemble_cover_family(hs.domain, hs.coefficients, N=10.0, eps=0.5,
                                   seed=0)
    # two deep-interior queries shifted by a vector commensurate with both the
    # bump lattice (0.425) and the cover-center lattice (0.25) have exactly
    # translated members
    deep = sorted(b.x[0] for b in fam.bumps if b.kind == "interior"
                  and 3.0 < b.x[0] < 10.0)
    assert len(deep) >= 12
    step = deep[1] - deep[0]
    shift = 10 * step
    assert np.isclose(shift % 0.25, 0.0, atol=1e-9) or \
        np.isclose(shift % 0.25, 0.25, atol=1e-9)
    x1 = np.array([deep[1]])
    x2 = x1 + shift
    z1 = fam.centers[fam.center_index(x1)]
    z2 = fam.centers[fam.center_index(x2)]
    assert np.isclose(z2[0] - z1[0], shift, atol=1e-9)
    f1, f2 = fam.member(x1), fam.member(x2)
    probes = (x1 + np.linspace(-1.2, 1.2, 41)[:, None])
    probes = probes[probes[:, 0] > 0.6]
    assert np.max(np.abs(f1._value(probes) - f2._value(probes + shift))) <= 1e-10


def test_family_rejects_plain_unbounded_curved():
    c = rd.make_example("cusp", beta=2.0)
    c.domain.allow_curved_family = False
    from refdiff.errors import UnboundedUnsupported
    with pytest.raises(UnboundedUnsupported):
        rd.assemble_cover_family(c.domain, c.coefficients, N=0.5, eps=0.2)


def test_singular_ramp_eps_guard():
    from refdiff.errors import BadParameters
    c = rd.make_example("cusp", beta=2.0)   # finite certificate radius
    sp = c.domain.singular_points[0]
    with pytest.raises(BadParameters):
        rd.singular_ramp(c.domain, sp, delta=1e-4, eps=0.3)


def test_combine_claims():
    o = rd.make_example("orthant", J=2)
    f1 = rd.interior_bump(o.domain, [1.0, 1.0], 0.16)
    f2 = rd.interior_bump(o.domain, [2.0, 1.0], 0.16)
    s = combine([f1, f2])
    assert s.claims_in_class and s.claims_negated_in_class
    assert np.isclose(s.value([1.0, 1.0]), 1.0)
