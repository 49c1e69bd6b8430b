import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import DIST, models_for, moment_z, true_point
from sorcall.equations import (
    WorkingModels,
    build_cc,
    build_cor,
    build_corx,
    build_dr,
    build_ipw,
    build_multicall_dr,
    build_multicall_ipw,
    build_multicall_reg,
    build_reg,
    build_sensitivity,
    cc_estimator,
    cor_estimator,
    mar_estimator,
    pc_estimator,
)
from sorcall.equations.baselines import impute_unsure, pc_solve
from sorcall.errors import ConfigurationError, IdentificationError, PositivityError
from sorcall.model import (
    CovariateDistribution,
    EstimandSpec,
    SurveyDataset,
    empirical_distribution,
    intercept_only,
    linear_features,
)
from sorcall.simulate import generate, population_truth, scenario, substream
from sorcall.solver import fit, solve

MEAN = EstimandSpec()
BUILDERS = {
    "ipw": lambda d, m: build_ipw(d, m, MEAN, DIST),
    "reg": lambda d, m: build_reg(d, m, MEAN, DIST),
    "dr": lambda d, m: build_dr(d, m, MEAN, DIST),
}


def dataset(r, y, x, w=None):
    r = np.asarray(r, dtype=np.int8)
    resp = r[:, -1] == 1
    x = np.asarray(x, float).reshape(len(r), -1)
    return SurveyDataset(np.ones(len(r)) if w is None else np.asarray(w, float), r,
                         np.asarray(y, float)[resp], x[resp], np.zeros((len(r), 0)),
                         tuple(f"x{j}" for j in range(x.shape[1])))


@pytest.mark.parametrize("name", ["ipw", "reg", "dr"])
def test_exactly_identified(tt_draw, name):
    system = BUILDERS[name](tt_draw.data, models_for(scenario("TT")))
    assert system(system.initial()).shape == (system.dim,)
    assert len(system.layout.labels) == system.dim


@pytest.mark.parametrize("family", ["binary", "continuous"])
@pytest.mark.parametrize("name", ["ipw", "reg", "dr"])
def test_unbiased_at_truth(name, family):
    spec = scenario("TT", family)
    d = generate(spec, substream(5, 1), n=100_000).data
    system = BUILDERS[name](d, models_for(spec))
    z = moment_z(system, true_point(system, spec))
    assert np.max(np.abs(z)) < 4, dict(zip(system.layout.labels, z))


def test_ipw_without_missingness_gives_weighted_mean(rng):
    n = 50
    x = rng.uniform(-1, 1, (n, 2))
    y = rng.binomial(1, 0.4, n)
    w = rng.uniform(0.5, 2, n)
    d = dataset(np.ones((n, 2)), y, x, w)
    dist = empirical_distribution(x, w)
    system = build_ipw(d, WorkingModels.linear(2), MEAN, dist).fix(gamma=0.0)
    res = solve(system)
    theta = system.expand(res.params)["theta"][0]
    # with everyone responding at the first call pi1 is pushed towards one
    assert theta == pytest.approx(np.average(y, weights=w), abs=1e-6)


def test_dr_with_everyone_responding_by_second_call(rng):
    n = 400
    x = rng.uniform(-1, 1, (n, 2))
    y = rng.binomial(1, 0.5, n).astype(float)
    r1 = rng.random(n) < 0.5
    d = dataset(np.column_stack([r1, np.ones(n)]), y, x)
    dist = empirical_distribution(x)
    models = WorkingModels.linear(2)
    system = build_dr(d, models, MEAN, dist).fix(gamma=0.0)
    res = fit(system, warm_start=False)
    assert res.converged
    assert system.expand(res.params)["theta"][0] == pytest.approx(y.mean(), abs=1e-8)


def test_reg_without_tilt_and_no_missingness(rng):
    n = 300
    x = rng.uniform(-1, 1, (n, 2))
    y = rng.binomial(1, 0.5, n).astype(float)
    r1 = rng.random(n) < 0.6
    d = dataset(np.column_stack([r1, np.ones(n)]), y, x)
    system = build_reg(d, WorkingModels.linear(2), MEAN, empirical_distribution(x)).fix(gamma=0.0)
    res = fit(system, warm_start=False)
    assert system.expand(res.params)["theta"][0] == pytest.approx(y.mean(), abs=1e-8)


def test_sensitivity_zero_delta_is_bitwise_identical(tt_draw):
    models = models_for(scenario("TT"))
    for method, parent in (("dr", build_dr), ("ipw", build_ipw), ("reg", build_reg)):
        a = parent(tt_draw.data, models, MEAN, DIST)
        b = build_sensitivity(tt_draw.data, models, MEAN, DIST, 0.0, method=method)
        p = a.initial() + 0.01
        assert np.array_equal(a(p), b(p))


def test_sensitivity_delta_changes_second_call_only(tt_draw):
    models = models_for(scenario("TT"))
    a = build_ipw(tt_draw.data, models, MEAN, DIST)
    b = build_sensitivity(tt_draw.data, models, MEAN, DIST, 0.3, method="ipw")
    p = a.initial()
    ga, gb = a(p), b(p)
    sl = a.layout.slices()
    # the first-call calibration equations do not involve pi2
    np.testing.assert_array_equal(ga[sl["alpha1"]], gb[sl["alpha1"]])
    assert not np.allclose(ga[sl["alpha2"]], gb[sl["alpha2"]])


def test_positivity_error_names_unit(tt_draw):
    system = build_ipw(tt_draw.data, models_for(scenario("TT")), MEAN, DIST)
    p = system.layout.split(system.initial())
    p["alpha1"] = np.array([40.0, 0.0, 0.0])
    with pytest.raises(PositivityError) as err:
        system(system.layout.join(p))
    assert 0 <= err.value.unit < tt_draw.data.n
    assert "unit" in str(err.value)


def test_fix_is_chainable(tt_draw):
    system = build_dr(tt_draw.data, models_for(scenario("TT")), MEAN, DIST)
    sub = system.fix(gamma=0.0).fix(alpha2=[0.1, 0.2, 0.3])
    assert sub.layout.names == ["alpha1", "beta", "theta"]
    assert sub(sub.initial()).shape == (sub.dim,)
    with pytest.raises(ConfigurationError):
        sub.fix(gamma=1.0)


class TestMulticall:
    def test_everyone_responds_by_last_call(self, rng):
        n = 3000
        x = rng.uniform(-1, 1, (n, 2))
        y = rng.binomial(1, 0.45, n).astype(float)
        r1 = rng.random(n) < 0.3
        r2 = r1 | (rng.random(n) < 0.4)
        r = np.column_stack([r1, r2, np.ones(n)])
        d = dataset(r, y, x)
        models = WorkingModels.linear(2)
        system = build_multicall_ipw(d, models, MEAN, empirical_distribution(x))
        # pi_K = 1 for everyone is the boundary; fixing gamma_last = 0 and a large
        # intercept gives p_K ~ 1 and theta equal to the full-sample mean
        sub = system.fix(gamma_last=0.0, alpha_last=[20.0, 0.0, 0.0])
        res = fit(sub, warm_start=False, covariance=False)
        assert res.converged
        assert sub.expand(res.params)["theta"][0] == pytest.approx(y.mean(), abs=1e-7)

    @pytest.mark.parametrize("builder", [build_multicall_ipw, build_multicall_reg,
                                         build_multicall_dr])
    def test_mar_last_call_gives_null_odds_ratio(self, builder):
        spec = scenario("TT", alpha_last=(-1.5, 0.3, -0.2), gamma_last=0.0)
        d = generate(spec, substream(3, 3), n=20_000).data
        res = fit(builder(d, models_for(spec), MEAN, DIST))
        assert res.converged
        g, se = res.get("gamma_last[y]")
        assert abs(g) < 3 * se
        th, se_t = res.get("theta[theta]")
        assert abs(th - population_truth(spec)) < 4 * se_t


class TestBaselines:
    def test_cc_all_respond(self, rng):
        y = rng.normal(size=30)
        w = rng.uniform(1, 3, 30)
        d = dataset(np.ones((30, 2)), y, np.zeros((30, 0)), w)
        assert cc_estimator(d).params[0] == pytest.approx(np.average(y, weights=w))

    def test_cc_single_respondent(self):
        d = dataset([[1, 1], [0, 0], [0, 0]], [1.0, 0, 0], np.zeros((3, 0)))
        assert cc_estimator(d).params[0] == pytest.approx(1.0)

    def test_mar_consistent_under_mar(self):
        spec = scenario("TT", gamma=0.0)
        d = generate(spec, substream(4, 0), n=50_000).data
        res = mar_estimator(d, models_for(spec), MEAN, DIST)
        assert abs(res.get("theta[theta]")[0] - population_truth(spec)) < 0.01

    def test_cor_with_single_active_call_is_cc(self, rng):
        n = 40
        y = rng.binomial(1, 0.5, n).astype(float)
        r1 = rng.random(n) < 0.6
        d = dataset(np.column_stack([r1, r1]), y, np.zeros((n, 0)))
        assert cor_estimator(d).get("theta[theta]")[0] == pytest.approx(cc_estimator(d).params[0])

    def test_cor_homogeneous(self, rng):
        n = 40
        r1 = rng.random(n) < 0.4
        r2 = r1 | (rng.random(n) < 0.5)
        d = dataset(np.column_stack([r1, r2]), np.ones(n), np.zeros((n, 0)))
        assert cor_estimator(d).get("theta[theta]")[0] == pytest.approx(1.0)

    def test_cor_rejects_logistic(self, tt_draw):
        with pytest.raises(ConfigurationError):
            cor_estimator(tt_draw.data, EstimandSpec("logistic", intercept_only()))

    def test_corx_hand_computed(self):
        # one binary covariate; latest-call outcome model is saturated
        x = np.array([0, 0, 1, 1, 0, 1, 0, 1], float)
        y = np.array([1.0, 3.0, 2.0, 6.0, 0, 0, 0, 0])
        r = np.array([[1, 1], [0, 1], [1, 1], [0, 1], [0, 1], [0, 1], [0, 0], [0, 0]])
        y[4], y[5] = 5.0, 4.0
        d = dataset(r, y, x)
        dist = CovariateDistribution(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))
        system, setup = build_corx(d, linear_features([0]), "gaussian", dist)
        res = fit(system, warm_start=False)
        # respondent empirical mass: 3/8 at x=0, 3/8 at x=1 -> leftover 1/8 each
        np.testing.assert_allclose(setup.nonrespondent_mass, [0.5, 0.5])
        pred = np.array([(3.0 + 5.0) / 2, (6.0 + 4.0) / 2])
        want = (1 + 3 + 2 + 6 + 5 + 4) / 8 + 0.25 * pred.mean()
        assert res.get("theta[theta]")[0] == pytest.approx(want, abs=1e-9)
        assert setup.clipped == 0


class TestParameterCounting:
    def test_symmetric(self):
        p = pc_solve(0.125, 0.125, 0.125, 0.125)
        np.testing.assert_allclose(p[:2], [0.25, 0.25], atol=1e-10)

    @settings(max_examples=50)
    @given(st.lists(st.floats(0.02, 1.0), min_size=5, max_size=5))
    def test_forward_constructed(self, q):
        p1, p2, p3, p4, p5 = q
        p6 = p4 * p1 * p5 * (p2 + p4) / ((p1 + p3) * p2 * p3)
        p = np.array([p1, p2, p3, p4, p5, p6])
        p = p / p.sum()
        got = pc_solve(*p[2:])
        np.testing.assert_allclose(got, p, atol=1e-10)

    def test_invalid_cells(self):
        with pytest.raises(IdentificationError):
            pc_solve(0.5, 0.4, 0.3, 0.1)

    def test_estimator_on_collapsed_data(self, tt_draw):
        res = pc_estimator(tt_draw.data)
        assert res.p.sum() == pytest.approx(1.0)
        lo, hi = res.interval()
        assert lo < res.theta < hi and res.se > 0

    def test_rejects_continuous(self):
        d = dataset([[1, 1], [0, 1], [0, 0]], [0.3, 1.0, 0], np.zeros((3, 0)))
        with pytest.raises(ConfigurationError):
            pc_estimator(d)


def test_impute_unsure(rng):
    n = 400
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = (X[:, 1] > 0).astype(float)
    y[:5] = 0
    unsure = np.zeros(n, bool)
    unsure[:5] = True
    X[:5, 1] = [-3, -2, 2, 3, 4]
    out = impute_unsure(X, y, unsure)
    np.testing.assert_array_equal(out[:5], [0, 0, 1, 1, 1])
    np.testing.assert_array_equal(out[5:], y[5:])
    with pytest.raises(ConfigurationError):
        impute_unsure(X, y, unsure, stochastic=True)
