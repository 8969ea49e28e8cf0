import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hbinreg.errors import DomainError, IngestionError, InvalidShapeError, ShapeError
from hbinreg.glm import (
    LINK_KINDS,
    LinkFamily,
    build_design,
    design_terms,
    inverse_link,
    log_likelihood,
    probability_gradient,
)

ALL_LINKS = [
    LinkFamily("logit"),
    LinkFamily("probit"),
    LinkFamily("cloglog"),
    LinkFamily("skew-logistic", kappa=0.7),
    LinkFamily("negbin", r_nb=2.5),
]


class TestInverseLink:
    def test_examples(self):
        assert inverse_link(LinkFamily("logit"), 0.0) == 0.5
        np.testing.assert_allclose(inverse_link(LinkFamily("cloglog"), 0.0),
                                   1 - np.exp(-1), rtol=0, atol=1e-15)
        np.testing.assert_allclose(
            inverse_link(LinkFamily("skew-logistic", kappa=1.0), 0.0), 2 / 3,
            atol=1e-15)
        np.testing.assert_allclose(
            inverse_link(LinkFamily("cloglog"), np.log(np.log(2.0))), 0.5,
            atol=1e-15)

    def test_against_textbook_forms(self):
        eta = np.linspace(-6, 6, 121)
        np.testing.assert_allclose(LinkFamily("probit").inverse(eta),
                                   stats.norm.cdf(eta), atol=1e-15)
        kap = 0.7
        direct = (np.exp(eta) + kap) / (1 + np.exp(eta) + kap)
        np.testing.assert_allclose(ALL_LINKS[3].inverse(eta), direct, atol=1e-14)
        r = 2.5
        direct = 1 - (r / (r + np.exp(eta))) ** r
        np.testing.assert_allclose(ALL_LINKS[4].inverse(eta), direct, atol=1e-14)

    def test_errors(self):
        with pytest.raises(DomainError):
            LinkFamily("logit").inverse(np.nan)
        with pytest.raises(DomainError):
            LinkFamily("probit").inverse([0.0, np.inf])
        with pytest.raises(InvalidShapeError):
            LinkFamily("skew-logistic", kappa=-0.1)
        with pytest.raises(InvalidShapeError):
            LinkFamily("negbin", r_nb=0.0)
        with pytest.raises(InvalidShapeError):
            LinkFamily("negbin")
        with pytest.raises(InvalidShapeError):
            LinkFamily("tobit")

    @pytest.mark.parametrize("link", ALL_LINKS, ids=str)
    def test_strictly_increasing(self, link):
        eta = np.linspace(-20, 20, 10_000)
        # probabilities saturate in double precision in the far tails, so
        # check the derivative (strictly positive) and weak monotonicity
        p = link.inverse(eta)
        assert np.all(np.diff(p) >= 0)
        # strict where the derivative has not underflowed
        d = link.derivative(eta)
        ok = d > 1e-12
        assert ok.mean() > 0.3
        assert np.all(np.diff(p)[ok[1:] & ok[:-1]] > 0)

    @pytest.mark.parametrize("link", ALL_LINKS, ids=str)
    def test_round_trip(self, link):
        eta = np.linspace(-10, 10, 401)
        # an eta perturbation of 1e-8 must move p by more than rounding
        eta = eta[link.derivative(eta) * 1e-8 > 1e-15]
        np.testing.assert_allclose(link.link(link.inverse(eta)), eta, atol=1e-8)

    @pytest.mark.parametrize("link", ALL_LINKS, ids=str)
    def test_inverse_of_link(self, link):
        lo = max(1e-6, link.lower + 1e-6)
        p = np.linspace(lo, 1 - 1e-6, 500)
        np.testing.assert_allclose(link.inverse(link.link(p)), p, atol=1e-10)

    def test_link_domain(self):
        with pytest.raises(DomainError):
            LinkFamily("logit").link(1.0)
        with pytest.raises(DomainError):
            LinkFamily("skew-logistic", kappa=1.0).link(0.4)

    def test_skew_logistic_kappa_zero_is_logit(self):
        eta = np.linspace(-10, 10, 401)
        np.testing.assert_allclose(LinkFamily("skew-logistic", kappa=0.0).inverse(eta),
                                   LinkFamily("logit").inverse(eta), rtol=0, atol=1e-12)

    def test_negbin_poisson_limit(self):
        eta = np.linspace(-5, 3, 161)
        np.testing.assert_allclose(LinkFamily("negbin", r_nb=1e6).inverse(eta),
                                   LinkFamily("cloglog").inverse(eta), atol=1e-4)

    def test_symmetry(self):
        eta = np.linspace(-6, 6, 241)
        for kind in ("logit", "probit"):
            f = LinkFamily(kind).inverse
            np.testing.assert_allclose(f(eta), 1 - f(-eta), atol=1e-12)
        # p(eta) + p(-eta) > 1 away from 0 for both skewed links
        nz = eta[eta != 0]
        cl = LinkFamily("cloglog").inverse
        assert np.all(1 - cl(-nz) < cl(nz))
        sk = LinkFamily("skew-logistic", kappa=0.5).inverse
        assert np.all(1 - sk(-nz) < sk(nz))

    def test_lower_bound(self):
        assert LinkFamily("skew-logistic", kappa=1.0).lower == 0.5
        p = LinkFamily("skew-logistic", kappa=1.0).inverse(-30.0)
        assert 0.5 < p < 0.5 + 1e-12


class TestLogLikelihood:
    def test_examples(self):
        np.testing.assert_allclose(log_likelihood([1, 0], [0.8, 0.3]),
                                   np.log(0.8) + np.log(0.7), atol=1e-15)
        assert log_likelihood([1], [1 - 1e-15]) == pytest.approx(0, abs=1e-14)
        np.testing.assert_allclose(log_likelihood([0, 1, 1], [0.5] * 3),
                                   3 * np.log(0.5))

    def test_clamped_at_boundary(self):
        assert np.isfinite(log_likelihood([1, 0], [0.0, 1.0]))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            log_likelihood([1, 0], [0.5])


class TestProbabilityGradient:
    def test_examples(self):
        g = probability_gradient(LinkFamily("logit"), [0.0, 1.0], [1.0, 0.0])
        assert g[1] == pytest.approx(0.25)
        g = probability_gradient(LinkFamily("cloglog"), [0.0, 1.0], [1.0, 0.0])
        assert g[1] == pytest.approx(np.exp(-1))
        g = probability_gradient(LinkFamily("probit"), [0.0, 2.0], [1.0, 0.0])
        assert g[1] == pytest.approx(2 / np.sqrt(2 * np.pi))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            probability_gradient(LinkFamily("logit"), [1.0, 2.0], [1.0, 2.0, 3.0])

    @settings(max_examples=100, deadline=None)
    @given(link=st.sampled_from(ALL_LINKS),
           beta=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
           x=st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3))
    def test_matches_central_differences(self, link, beta, x):
        beta, x = np.array(beta), np.array(x)
        g = probability_gradient(link, beta, x)
        h = 1e-5
        fd = np.array([(link.inverse((x + h * e) @ beta) - link.inverse((x - h * e) @ beta))
                       / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def _table(n=40, seed=0):
    r = np.random.default_rng(seed)
    return pd.DataFrame({"elevation": r.uniform(250, 2750, n),
                         "forest": r.uniform(0, 100, n),
                         "date": r.integers(103, 209, n).astype(float),
                         "duration": r.uniform(1.5, 9.5, n)})


class TestDesign:
    def test_column_counts(self):
        t = _table()
        assert build_design(t, "Q", "occupancy").q == 7
        assert build_design(t, "L", "occupancy").q == 3
        assert build_design(t, "L", "detection").q == 3
        assert build_design(t, "Q", "detection").q == 4
        assert build_design(t, "Q", "occupancy", extra_interaction=True).q == 8
        assert build_design(t, "L", "occupancy", extra_interaction=True).q == 4

    def test_names(self):
        d = build_design(_table(), "Q", "occupancy")
        assert d.names == ("intercept", "elevation", "forest", "elevation^2",
                           "forest^2", "elevation^2:forest", "elevation:forest^2")
        assert build_design(_table(), "Q", "detection").names[-1] == "duration^2"

    def test_product_value(self):
        d = build_design(_table(), "Q", "occupancy")
        row = d.expand([[2.0, -1.0]])[0]
        assert row[d.names.index("elevation^2:forest")] == -4.0
        assert row[0] == 1.0

    def test_standardized(self):
        d = build_design(_table(), "L", "occupancy")
        np.testing.assert_allclose(d.values[:, 1:].mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(d.values[:, 1:].std(axis=0, ddof=1), 1, atol=1e-12)

    def test_stored_standardization_reused(self):
        t = _table()
        d = build_design(t, "Q", "occupancy")
        again = build_design(t.iloc[:5], "Q", "occupancy",
                             standardization=(d.center, d.scale))
        np.testing.assert_array_equal(again.values, d.values[:5])
        np.testing.assert_array_equal(d.rows(t.iloc[:5]), d.values[:5])

    def test_raw_base_round_trip(self):
        t = _table()
        d = build_design(t, "Q", "occupancy")
        np.testing.assert_allclose(d.raw_base(), t[["elevation", "forest"]].to_numpy(),
                                   rtol=1e-13)

    def test_missing_column(self):
        with pytest.raises(IngestionError):
            build_design(_table().drop(columns="forest"), "L", "occupancy")

    def test_bad_collection(self):
        with pytest.raises(DomainError):
            design_terms("C", "occupancy")

    @pytest.mark.parametrize("collection", ["L", "Q"])
    @pytest.mark.parametrize("kind", ["logit", "probit", "cloglog"])
    def test_gradient_in_raw_units(self, collection, kind, rng):
        t = _table(seed=3)
        d = build_design(t, collection, "occupancy")
        beta = rng.normal(0, 0.5, d.q)
        link = LinkFamily(kind)
        raw = t[["elevation", "forest"]].to_numpy()[:10]
        g = d.gradient(link, beta, raw)
        for k, h in enumerate([1e-2, 1e-3]):
            up, dn = raw.copy(), raw.copy()
            up[:, k] += h
            dn[:, k] -= h
            fd = (link.inverse(d.rows(up) @ beta) - link.inverse(d.rows(dn) @ beta)) / (2 * h)
            np.testing.assert_allclose(g[:, k], fd, rtol=1e-6, atol=1e-12)

    def test_link_kinds_exported(self):
        assert set(LINK_KINDS) == {"logit", "probit", "cloglog", "skew-logistic", "negbin"}
