import json
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_problem
from wflow import model as M
from wflow import verify as V


def test_part_and_report_verdicts():
    start = 0.0
    good = V._report("x", 1.0, 1.0, 0.0, 0.0, [V.Part("a", 0.1, 1.0), V.Part("b", 0.5, 2.0)], {"k": 1}, {}, start)
    assert good.passed and good.tolerance == 1.0 and good.residual == pytest.approx(0.25)
    bad = V._report("x", 1.0, 1.0, 0.0, 0.0, [V.Part("a", 0.1, 1.0), V.Part("b", math.nan, 2.0)], {}, {}, start)
    assert bad.verdict == "fail" and bad.residual > bad.tolerance
    assert [p["verdict"] for p in bad.details["parts"]] == ["pass", "fail"]


def test_report_json_is_finite_and_runtime_optional():
    r = V._report("x", 1.0, {"a": np.float64(2.0)}, 0.0, 0.0, [V.Part("a", math.inf, 1.0)],
                  {"arr": np.arange(3)}, {"v": np.array([1.0, np.nan])}, 0.0)
    d = json.loads(r.to_json())
    assert d["residual"] == "inf" and d["details"]["v"] == [1.0, "nan"]
    assert "runtime_seconds" in d
    assert "runtime_seconds" not in r.as_dict(include_runtime=False)


def test_jsonable_types():
    out = V.jsonable({1: np.int64(3), "b": np.bool_(True), "c": (np.float32(0.5), -np.inf)})
    assert out == {"1": 3, "b": True, "c": [0.5, "-inf"]}
    json.dumps(out, allow_nan=False)


@settings(max_examples=50)
@given(st.dictionaries(st.text(max_size=5), st.one_of(st.integers(), st.floats(allow_nan=False), st.text()),
                       max_size=6))
def test_inputs_digest_is_order_independent(d):
    reordered = dict(reversed(list(d.items())))
    assert V.inputs_digest(d) == V.inputs_digest(reordered)
    assert len(V.inputs_digest(d)) == 64


def test_inputs_digest_distinguishes_values():
    assert V.inputs_digest({"seed": 0}) != V.inputs_digest({"seed": 1})


def test_report_log_is_thread_safe():
    log = V.ReportLog()
    r = V._report("x", 0.0, 0.0, 0.0, 0.0, [V.Part("a", 0.0, 1.0)], {}, {}, 0.0)

    def worker():
        for _ in range(200):
            log.append(r)
    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(log) == 800 and log.all_passed


def test_robust_ols_recovers_coefficients():
    rs = np.random.default_rng(0)
    x = rs.normal(size=20_000)
    X = np.column_stack([np.ones_like(x), x])
    y = 1.5 - 2.0 * x + rs.normal(size=x.size) * (1 + np.abs(x))
    beta, se = V.robust_ols(X, y)
    assert np.all(np.abs(beta - [1.5, -2.0]) <= 4 * se)
    assert np.all(se > 0)


def test_centred_derivative_exact_for_quadratics():
    t = np.sort(np.random.default_rng(1).uniform(0, 1, 30))
    d = V.centred_derivative(t, 3 * t**2 - t + 2)
    assert np.allclose(d, 6 * t[1:-1] - 1, atol=1e-9)


def test_sigma_metric_relation():
    pts = np.linspace(-2, 2, 9)[:, None]
    assert V.sigma_metric_relation(make_problem(), pts)[0] == "equal"
    kind, c = V.sigma_metric_relation(make_problem(sigma_params={"scale": 2.0}), pts)
    assert kind == "proportional" and c == pytest.approx(2.0)
    sine = make_problem("quadratic", "scalar_sine", sigma_params={"base": 2, "amp": 1})
    assert V.sigma_metric_relation(sine, pts)[0] == "general"


def test_energy_distance_test_detects_shift():
    rs = np.random.default_rng(0)
    a = rs.normal(size=(1000, 1))
    _, p_same = V.energy_distance_test(a, rs.normal(size=(1000, 1)), permutations=99)
    _, p_shift = V.energy_distance_test(a, rs.normal(0.3, 1, size=(1000, 1)), permutations=99)
    assert p_same > 0.01 and p_shift == pytest.approx(0.01)
    _, p2 = V.energy_distance_test(rs.normal(size=(300, 2)), rs.normal(0.5, 1, size=(300, 2)), permutations=49)
    assert p2 == pytest.approx(0.02)


def test_entropy_identity_heat_small_grid(heat):
    r = V.check_entropy_identity(heat, nodes=1024, checkpoints=33)
    assert r.passed, r.to_json()
    assert r.lhs == pytest.approx(0.5 * math.log(3), abs=1e-3)


def test_energy_inequality_reports_slack(sine):
    r = V.check_energy_identity(sine, nodes=1024, checkpoints=33)
    assert r.passed, r.to_json()
    assert r.details["relation"] == "general"
    assert r.details["slack"] > 5 * r.details["error_bound"]


def test_debruijn_rejects_general_sigma(sine):
    with pytest.raises(ValueError):
        V.check_debruijn(sine)


def test_debruijn_ou(ou):
    r = V.check_debruijn(ou, nodes=1024)
    assert r.passed, r.to_json()


def test_backward_residual_ou(ou):
    r = V.check_backward_residual(ou)
    assert r.passed and min(r.details["ratios"]) >= 3


def test_checks_registry_complete():
    assert set(V.CHECKS) == {"entropy_identity", "energy_identity", "debruijn", "martingale",
                             "trajectorial_rate", "time_reversal", "weak_order", "backward_residual"}


def test_weak_order_requires_ou(heat):
    with pytest.raises(ValueError):
        V.check_weak_order(make_problem("quadratic", "scalar_sine", sigma_params={"base": 2, "amp": 1}), N=100)
