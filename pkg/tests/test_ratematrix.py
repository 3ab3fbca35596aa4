import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from travelsir import ratematrix as rm
from travelsir.params import ModelParams, ParameterError

LAM = 4.5


def params(n=10_000, **kw):
    return ModelParams.scaled(n=n, c=6, beta=1.5, gamma=3, **kw)


def oracle_generator(p: ModelParams, base: bool, home_degree=None, rate=None) -> np.ndarray:
    """Expected-census generator written column by column from the event list of one edge class.

    ``home_degree(k)`` is the mean number of at-home type-k neighbours of a
    newly infected node; ``rate(place)`` the transmission rate where the pair
    is co-located.
    """
    c_travel = 0.0 if base else p.c * p.n ** (-p.alpha) * math.log(p.n) ** 3
    rho_T = 0.0 if base else p.rho_T
    out_rate = {"H": rho_T, "T": p.rho_H}
    flip = {"H": "T", "T": "H"}
    home_degree = home_degree or (lambda k: p.c)
    rate = rate or (lambda place: p.beta)
    idx = {cls: rm.flat_index(cls[0], cls[1], "HT".index(cls[2]), "HT".index(cls[3]))
           for cls in itertools.product((1, 2), (1, 2), "HT", "HT")}
    g = np.zeros((16, 16))
    for (i, j, a, b), col in idx.items():
        g[col, col] -= p.gamma
        g[col, col] -= out_rate[a]
        g[idx[(i, j, flip[a], b)], col] += out_rate[a]
        g[col, col] -= out_rate[b]
        g[idx[(i, j, a, flip[b])], col] += out_rate[b]
        where_src = i if a == "H" else 3 - i
        where_dst = j if b == "H" else 3 - j
        if where_src == where_dst:
            r = rate(where_src)
            g[col, col] -= r
            for k, cc in itertools.product((1, 2), "HT"):
                g[idx[(j, k, b, cc)], col] += r * (home_degree(k) if cc == "H" else c_travel)
    return g


# ---------------------------------------------------------------- indexing

def test_flat_index_is_a_bijection():
    seen = set()
    for i, j, a, b in itertools.product((1, 2), (1, 2), (0, 1), (0, 1)):
        k = rm.flat_index(i, j, a, b)
        assert k == ((i - 1) * 2 + (j - 1)) * 4 + a * 2 + b
        assert rm.unflatten(k) == (i, j, a, b)
        seen.add(k)
    assert seen == set(range(16))
    assert rm.class_label(0) == "11HH"


# ---------------------------------------------------------------- assembly

@pytest.mark.parametrize("n", [1000, 10_000, 100_000])
def test_full_and_base_operators_match_oracle(n):
    p = params(n)
    assert np.allclose(rm.build("M", p).entries, oracle_generator(p, base=False), rtol=1e-14, atol=1e-14)
    assert np.allclose(rm.build("M0", p).entries, oracle_generator(p, base=True), rtol=1e-14, atol=1e-14)


def test_base_diagonal_at_home_class_is_growth_rate():
    m0 = rm.build("M0", params())
    assert m0.entries[rm.flat_index(1, 1, 0, 0), rm.flat_index(1, 1, 0, 0)] == pytest.approx(LAM)


def test_home_subspace_block():
    m0 = rm.build("M0", params()).entries
    sub = [rm.flat_index(1, 1, 0, 0), rm.flat_index(1, 2, 0, 0), rm.flat_index(2, 2, 0, 0),
           rm.flat_index(2, 1, 0, 0)]
    expected = np.array([[LAM, 0, 0, 0], [9, -3, 0, 0], [0, 0, LAM, 0], [0, 0, 9, -3]])
    assert np.allclose(m0[np.ix_(sub, sub)], expected)


@pytest.mark.parametrize("variant", rm.VARIANTS)
def test_every_variant_is_metzler(variant):
    m = rm.build(variant, params(), delta=0.1, beta_prime=0.5)
    if variant == "W":
        off = m.entries - np.diag(np.diag(m.entries))
        assert np.all(off >= -1e-12)
    else:
        assert m.is_metzler()


@pytest.mark.parametrize("base", [False, True])
def test_distancing_operator_matches_oracle(base):
    p = params()
    home = (lambda k: 6 * (0.5 - 0.1) if k == 1 else 6)
    rate = (lambda place: 1.5 if place == 1 else 0.5)
    m = rm.build("socdist0" if base else "socdist", p, delta=0.1, beta_prime=0.5).entries
    assert np.allclose(m, oracle_generator(p, base, home, rate), rtol=1e-14, atol=1e-14)


def test_herd_operator_matches_oracle():
    p = params()
    m = rm.build("herd", p, delta=0.1).entries
    assert np.allclose(m, oracle_generator(p, False, lambda k: 6 * 0.4), rtol=1e-14, atol=1e-14)


def test_distancing_rate_classes():
    p = params()
    reduced = {(2, 2, 0, 0), (2, 1, 0, 1), (1, 2, 1, 0), (1, 1, 1, 1)}
    for i, j, a, b in itertools.product((1, 2), (1, 2), (0, 1), (0, 1)):
        if rm.active(i, j, a, b):
            place = i if a == 0 else 3 - i
            assert (place == 2) == ((i, j, a, b) in reduced)


def test_knob_validation():
    p = params()
    with pytest.raises(ParameterError):
        rm.build("herd", p)
    with pytest.raises(ParameterError):
        rm.build("herd", p, delta=0.6)
    with pytest.raises(ParameterError):
        rm.build("socdist", p, delta=0.1, beta_prime=1.0)   # growth rate +2
    with pytest.raises(ParameterError):
        rm.build("nope", p)


def test_perturbation_norm_scaling():
    ns = [1000, 10_000, 100_000]
    norms = [rm.build("W", params(n)).norm() for n in ns]
    for n, w in zip(ns, norms):
        p = params(n)
        # each travelling-target column feeds both target types at beta * c_T
        assert w <= 2 * p.beta * 6 * n ** -0.5 * math.log(n) ** 3 + 4 * p.rho_T
    fit = stats.linregress(np.log(ns), np.log([w / math.log(n) ** 3 for n, w in zip(ns, norms)]))
    assert fit.slope == pytest.approx(-0.5, abs=0.1)


# ---------------------------------------------------------------- exponentials

def test_exponential_basics():
    m = rm.build("M", params())
    assert np.array_equal(rm.expm(m, 0.0), np.eye(16))
    d = np.diag(np.linspace(-2, 1, 16))
    assert np.allclose(rm.expm(d, 1.3), np.diag(np.exp(1.3 * np.diag(d))), rtol=1e-14)


def test_exponential_semigroup():
    m = rm.build("M", params())
    rng = np.random.default_rng(5)
    for s, t in rng.uniform(0, 2, size=(10, 2)):
        whole = rm.expm(m, s + t)
        assert rm.induced_norm(whole - rm.expm(m, s) @ rm.expm(m, t)) <= 1e-8 * rm.induced_norm(whole)


@pytest.mark.parametrize("variant", ["M", "M0", "herd", "travelban", "socdist0"])
def test_exponential_matches_ode(variant):
    m = rm.build(variant, params(), delta=0.1, beta_prime=0.5)
    for t in (0.3, 1.0, 2.5):
        a, b = rm.expm(m, t), rm.expm_ode(m, t)
        assert np.max(np.abs(a - b)) <= 1e-7 * np.max(np.abs(a))


def test_exponential_overflow_reports_time():
    with pytest.raises(rm.ExpmOverflowError) as err:
        rm.expm(np.eye(16) * 10.0, 100.0)
    assert err.value.t == 100.0


# ---------------------------------------------------------------- spectrum

@pytest.mark.parametrize("n", [1000, 10_000])
def test_base_spectrum(n):
    rep = rm.spectral_analysis(rm.build("M0", params(n)))
    assert rep.top_eigenvalue == pytest.approx(LAM, abs=1e-8)
    assert rep.top_multiplicity == 2
    rest = [z.real for z in rep.eigenvalues[2:]]
    assert max(rest) <= -3 + 1e-8
    assert rep.triangularizing_permutation is not None
    assert rep.triangular_defect <= 1e-14
    assert rep.projector_defect <= 1e-8
    assert rep.max_imag <= 1e-9
    reals = [z.real for z in rep.eigenvalues]
    assert reals == sorted(reals, reverse=True)


def test_numeric_eigenvalues_agree_with_diagonal():
    m0 = rm.build("M0", params()).entries
    numeric = np.sort(np.linalg.eigvals(m0).real)
    assert np.allclose(numeric, np.sort(np.diag(m0)), atol=1e-6)


def test_cyclic_support_has_no_triangular_order():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert rm.triangularizing_permutation(a) is None


def test_herd_and_distancing_spectra():
    p = params()
    herd = rm.spectral_analysis(rm.build("herd0", p, delta=0.05))
    assert herd.top_eigenvalue == pytest.approx(-1.5 * 6 * 0.05, abs=1e-8)
    for delta in (0.05, 0.2):
        soc = rm.spectral_analysis(rm.build("socdist0", p, delta=delta, beta_prime=0.5))
        expected = max(-6 * delta * 1.5, 6 * 0.5 - 0.5 - 3)
        assert soc.top_eigenvalue == pytest.approx(expected, abs=1e-8)
        assert soc.top_eigenvalue < 0


def test_projector_warning_near_unit_degree():
    p = ModelParams(n=1000, c=1.0 + 1e-8, beta=1.5, gamma=0.1, rho_T=0.01)
    with pytest.warns(RuntimeWarning):
        rm.spectral_analysis(rm.build("M0", p))


# ---------------------------------------------------------------- envelope constant

def test_envelope_constant_identity():
    assert rm.growth_constant(LAM * np.eye(16), LAM) == pytest.approx(1.0, rel=0.0101)


def test_envelope_constant_normal_matrix():
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.standard_normal((16, 16)))
    eig = np.concatenate([[LAM], rng.uniform(-8, 4, 15)])
    normal = q @ np.diag(eig) @ q.T
    assert rm.growth_constant(normal, LAM, norm_ord=2) == pytest.approx(1.0, rel=0.015)


def test_envelope_constant_base_operator():
    const = rm.growth_constant(rm.build("M0", params()), LAM)
    assert 1.0 <= const < math.inf
    # frozen value
    assert const == pytest.approx(2.222, abs=2e-3)


def test_envelope_constant_rejects_unbounded_envelope():
    jordan = np.zeros((16, 16))
    jordan[1, 0] = 1.0
    with pytest.raises(rm.EnvelopeError):
        rm.growth_constant(jordan, 0.0)


# ---------------------------------------------------------------- perturbation bound

def test_perturbation_zero_and_time_zero():
    m0 = rm.build("M0", params())
    z = rm.perturbation_check(m0, np.zeros((16, 16)), LAM, 1.0)
    assert z.lhs == 0 and z.rhs == 0 and z.ok
    w = rm.build("W", params())
    z = rm.perturbation_check(m0, w, LAM, 0.0)
    assert z.lhs == 0 and z.rhs == 0 and z.ok


def test_perturbation_bound_random_metzler():
    m0 = rm.build("M0", params())
    const = rm.growth_constant(m0, LAM)
    rng = np.random.default_rng(8)
    for _ in range(20):
        w = rng.random((16, 16))
        np.fill_diagonal(w, -rng.random(16))
        w *= 1e-3 / rm.induced_norm(w)
        for t in (0.5, 1.0, 5.0):
            assert rm.perturbation_check(m0, w, LAM, t, C=const).ok


# ---------------------------------------------------------------- bound curves

def test_bound_curves_at_zero():
    p = params()
    b = rm.expected_bound_curves(p, [0.0])
    assert b.B1[0] >= 1 and b.B2[0] >= 0
    assert b.B2[0] <= 6 * p.n ** -0.5 * math.log(p.n) ** 3


def test_bound_curves_against_library_integration():
    p = params()
    mat = rm.build("M", p).entries
    e0 = rm.initial_census(p)
    t = 1.2
    integral, _ = integrate.quad_vec(lambda s: rm.expm(mat, s) @ e0, 0.0, t, epsabs=1e-10, epsrel=1e-10)
    into = np.zeros((2, 16))
    for j, i, a, b in itertools.product((1, 2), (1, 2), (0, 1), (0, 1)):
        if rm.active(j, i, a, b):
            into[i - 1, rm.flat_index(j, i, a, b)] = p.beta
    y = into @ integral
    curves = rm.expected_bound_curves(p, [t])
    assert curves.B1[0] == pytest.approx(1 + y[0] + t / p.n, rel=1e-5)
    assert curves.B2[0] == pytest.approx(y[1] + t / p.n, rel=1e-5)


def test_closed_form_without_travel():
    p = ModelParams(n=10_000, c=6, beta=1.5, gamma=3, rho_T=0.0, alpha=0.99)
    ts = np.linspace(0, 2, 5)
    curves = rm.expected_bound_curves(p, ts)
    assert np.allclose(curves.closed_form_B1, 1 + 9 * np.expm1(LAM * ts) / LAM)


def test_bound_ratio_follows_travel_exponent():
    p = params()
    ln = math.log(p.n)
    ts = np.linspace(0.5, 0.9 * ln / LAM, 6)
    curves = rm.expected_bound_curves(p, ts)
    dev = np.log(curves.B2) - np.log(curves.B1) + 0.5 * ln
    assert np.all(np.abs(dev) <= 3 * math.log(ln))


def test_bound_curves_window_validation():
    with pytest.raises(ParameterError):
        rm.expected_bound_curves(params(), [math.log(10_000) ** 2 + 1])
