import json

import numpy as np
import pytest

from lstdkit.exceptions import ConfigError
from lstdkit.projections import oblique_projection
from lstdkit.verification import (
    CHECKS,
    CheckReport,
    _Tracker,
    check_oblique_conjecture,
    resolve_suite,
    run_suite,
    suite_passed,
)


def test_suite_is_deterministic():
    a = [r.to_json() for r in run_suite("all", count=5, seed=3)]
    b = [r.to_json() for r in run_suite("all", count=5, seed=3)]
    assert a == b
    assert [json.loads(x)["check_id"] for x in a] == sorted(CHECKS)


@pytest.mark.slow
def test_full_suite_passes():
    reports = run_suite("all", count=200, seed=0)
    failed = [r.check_id for r in reports if r.asserted and not r.passed]
    assert not failed
    assert suite_passed(reports)


def test_count_zero_is_vacuous():
    for rep in run_suite("design_agreement,tabular_exactness", count=0):
        d = rep.to_dict()
        assert d["instances_run"] == 0 and d["vacuous"] and d["passed"]


def test_resolve_suite():
    assert resolve_suite("all") == sorted(CHECKS)
    assert resolve_suite("td_orthogonality, error_bound") == ["error_bound", "td_orthogonality"]
    assert resolve_suite(["error_bound", "error_bound"]) == ["error_bound"]
    with pytest.raises(ConfigError, match="unknown check id"):
        resolve_suite("no_such_check")
    with pytest.raises(ConfigError):
        run_suite("all", count=-1)


def test_witness_only_on_failure():
    t = _Tracker("demo", 1e-3)
    t.count = 2
    t.record(1e-4, lambda: {"i": 0})
    assert t.report().passed and t.report().witness is None
    t.record(0.5, lambda: {"i": 1})
    rep = t.report()
    assert not rep.passed and rep.witness == {"i": 1}
    assert not suite_passed([rep])
    t.record(float("nan"), lambda: {"i": 2})
    assert t.report().max_violation == np.inf


def test_unasserted_failure_does_not_fail_suite():
    rep = CheckReport("probe", 3, 10.0, 1.0, False, asserted=False, witness={"x": 1})
    assert suite_passed([rep])
    assert json.loads(rep.to_json())["asserted"] is False


def test_conjecture_hand_counterexample():
    x = np.eye(2)
    y = np.array([[1.0], [1.0]])
    c = np.diag([1.0, 2.0])
    p = oblique_projection(x, y, use_pinv=True).projector
    p_c = oblique_projection(x @ c, y, use_pinv=True).projector
    np.testing.assert_allclose(p, [[0.5, 0.5], [0.5, 0.5]], atol=1e-14)
    np.testing.assert_allclose(p_c, [[0.2, 0.2], [0.8, 0.8]], atol=1e-14)


def test_conjecture_holds_with_full_cross_rank():
    rep = check_oblique_conjecture(count=100, seed=1)
    assert not rep.asserted
    assert rep.details["cross_rank_max"]["full"] <= 1e-8
    assert rep.details["cross_rank_max"]["deficient"] > 1e-8
    assert rep.witness is not None and rep.witness["case"] == "thin_test_space"
