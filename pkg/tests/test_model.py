import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wflow import model as M


def _problem(pot, sigma, metric=None, n=1, law=None, box=None):
    metric = metric or M.MetricSpec(M.volatility("identity", n))
    law = law or M.gaussian(np.zeros(n), 1.0)
    box = box or ((-8.0, 8.0),) * n
    return M.DiffusionProblem(pot, sigma, metric, 1.0, n, law, box)


def test_drift_examples():
    p = _problem(M.potential("zero"), M.volatility("scalar_sine", base=2, amp=1))
    assert M.drift(p, [[0.0]])[0, 0] == pytest.approx(1.0, abs=1e-14)
    p = _problem(M.potential("quadratic"), M.volatility("identity"))
    assert M.drift(p, [[3.0]])[0, 0] == pytest.approx(-3.0, abs=1e-14)
    p = _problem(M.potential("quadratic"), M.volatility("gaussian_bump", base=0.0, amp=1.0))
    assert M.drift(p, [[1.0]])[0, 0] == pytest.approx(-2 * math.exp(-0.5), rel=1e-12)


def test_drift_rejects_non_finite_component():
    bad = M.PotentialSpec("bad", lambda x: np.zeros(len(x)), lambda x: np.full_like(x, np.nan))
    p = _problem(bad, M.volatility("identity"))
    with pytest.raises(M.ModelError, match="potential"):
        M.drift(p, [[0.5]])


def test_drift_is_deterministic():
    p = _problem(M.potential("double_well"), M.volatility("scalar_sine"))
    x = np.linspace(-3, 3, 101)[:, None]
    assert np.array_equal(M.drift(p, x), M.drift(p, x))


def test_invariant_density_examples():
    zero = _problem(M.potential("zero"), M.volatility("identity"))
    quad = _problem(M.potential("quadratic"), M.volatility("identity"))
    assert M.invariant_density(zero, [[5.0]])[0] == 1.0
    assert M.invariant_density(quad, [[0.0]])[0] == 1.0
    assert M.invariant_density(quad, [[2.0]])[0] == pytest.approx(math.exp(-2.0), rel=1e-15)


def test_admissibility_identity_passes_with_unit_bounds():
    rep = M.check_admissibility(_problem(M.potential("quadratic"), M.volatility("identity")))
    assert rep.passed
    assert rep.measured_bounds == pytest.approx((1.0, 1.0))
    assumed = {c.index for c in rep.conditions if c.status == "assumed"}
    assert {"iv", "v", "vi"} <= assumed


def test_admissibility_diag_trig_bounds():
    p = _problem(M.potential("quadratic", 2), M.volatility("diag_trig", 2), n=2,
                 box=((-6.0, 6.0), (-6.0, 6.0)))
    rep = M.check_admissibility(p)
    assert rep.passed
    c, C = rep.measured_bounds
    assert c == pytest.approx(1.0, abs=1e-3) and C == pytest.approx(3.0, abs=1e-3)


def test_admissibility_degenerate_volatility_fails_at_origin():
    def value(x):
        out = np.zeros((len(x), 2, 2))
        out[:, 0, 0] = x[:, 0] ** 2
        out[:, 1, 1] = 1.0
        return out

    sigma = M.SpdMatrixField("degenerate", value)
    p = _problem(M.potential("quadratic", 2), sigma, n=2, box=((-6.0, 6.0), (-6.0, 6.0)))
    rep = M.check_admissibility(p)
    assert not rep.passed
    fail = {c.index: c for c in rep.failures}
    assert "iii" in fail
    assert fail["iii"].witness[0] == pytest.approx(0.0)


def test_admissibility_sample_count_precondition():
    with pytest.raises(ValueError):
        M.check_admissibility(_problem(M.potential("zero"), M.volatility("identity")), sample_count=50)


def test_sign_changing_sine_fails_ellipticity():
    p = _problem(M.potential("quadratic"), M.volatility("scalar_sine", base=1.0, amp=1.5))
    rep = M.check_admissibility(p)
    assert {c.index for c in rep.failures} >= {"i", "iii"}


@pytest.mark.parametrize("name,params", [("zero", {}), ("quadratic", {"kappa": 2.5}),
                                         ("double_well", {"a": 0.5, "b": 2.0})])
@pytest.mark.parametrize("n", [1, 2])
def test_registered_potential_gradients_match_differences(name, params, n):
    pot = M.potential(name, n, **params)
    x = np.random.default_rng(0).uniform(-3, 3, (200, n))
    err = np.abs(pot.grad(x) - pot.fd_gradient(x)) / np.maximum(1.0, np.abs(pot.fd_gradient(x)))
    assert err.max() <= 1e-5


@pytest.mark.parametrize("name", ["identity", "scalar_sine", "diag_trig", "gaussian_bump"])
@pytest.mark.parametrize("n", [1, 2])
def test_registered_divergences_match_differences(name, n):
    fld = M.volatility(name, n)
    x = np.random.default_rng(1).uniform(-3, 3, (200, n))
    num = fld.fd_divergence(x)
    assert np.max(np.abs(fld.div(x) - num) / np.maximum(1.0, np.abs(num))) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(base=st.floats(1.1, 5.0), amp=st.floats(-1.0, 1.0), freq=st.floats(0.1, 3.0),
       x=st.lists(st.floats(-20, 20), min_size=1, max_size=20))
def test_scalar_sine_within_declared_bounds(base, amp, freq, x):
    fld = M.volatility("scalar_sine", 1, base=base, amp=amp, freq=freq)
    vals = fld(np.array(x)[:, None])[:, 0, 0]
    c, C = fld.bounds
    assert np.all(vals >= c - 1e-12) and np.all(vals <= C + 1e-12)


@settings(max_examples=30, deadline=None)
@given(d1=st.floats(0.2, 5.0), d2=st.floats(0.2, 5.0))
def test_metric_inverse_and_transfer_bounds(d1, d2):
    metric = M.MetricSpec(M.volatility("diagonal", 2, values=(d1, d2)))
    x = np.zeros((3, 2))
    assert np.allclose(metric.g(x) @ metric.a(x), np.eye(2), atol=1e-10)
    eig = np.linalg.eigvalsh(metric.g(x)[0])
    cA, CA = metric.bounds
    assert eig.min() >= 1 / CA - 1e-12 and eig.max() <= 1 / cA + 1e-12


def test_fd_divergence_fallback_matches_analytic():
    ref = M.volatility("diag_trig", 2)
    no_div = M.SpdMatrixField("diag_trig_fd", ref.value)
    x = np.random.default_rng(2).uniform(-4, 4, (50, 2))
    assert np.allclose(no_div.div(x), ref.div(x), atol=1e-7)


def test_problem_validation():
    with pytest.raises(M.ModelError):
        _problem(M.potential("zero"), M.volatility("identity"), box=((1.0, -1.0),))
    with pytest.raises(M.ModelError):
        M.DiffusionProblem(M.potential("zero"), M.volatility("identity"),
                           M.MetricSpec(M.volatility("identity")), 0.0, 1, M.gaussian(0, 1), ((-5, 5),))
    with pytest.raises(M.ModelError):
        M.GaussianMixture(np.array([1.0]), np.array([0.0]), np.array([-1.0]))


def test_mixture_pdf_normalized_and_sampling_moments():
    law = M.GaussianMixture(np.array([0.3, 0.7]), np.array([-1.0, 2.0]), np.array([0.5, 1.5]))
    x = np.linspace(-15, 15, 20001)
    assert np.trapezoid(law.pdf(x[:, None]), x) == pytest.approx(1.0, abs=1e-10)
    s = law.sample(3, np.arange(100_000))[:, 0]
    mean = 0.3 * -1 + 0.7 * 2
    assert abs(s.mean() - mean) < 5 * s.std() / math.sqrt(s.size)
    assert np.mean(s**2) == pytest.approx(law.second_moment(), rel=0.02)


def test_suggest_box_covers_initial_spread():
    box = M.suggest_box(M.gaussian(0.0, 4.0), 1.0, 1.0)
    lo, hi = box[0]
    assert lo < -10 and hi > 10


def test_registry_contents_and_growth():
    reg = M.default_registry()
    names = {name for _, name, _ in reg.listing()}
    assert {"quadratic", "zero", "scalar_sine", "identity", "double_well", "diag_trig",
            "gaussian_bump"} <= names
    before = len(reg.listing())
    reg.register_potential("tilted", lambda n, slope=1.0: M.PotentialSpec(
        "tilted", lambda x: slope * x[:, 0], lambda x: np.full_like(x, slope)))
    assert len(reg.listing()) == before + 1
    assert reg.potential("tilted", 1, slope=2.0)(np.array([[3.0]]))[0] == 6.0
    with pytest.raises(KeyError):
        reg.register_potential("tilted", lambda n: None)
    assert M.Registry().listing() == []
