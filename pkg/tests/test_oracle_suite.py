import os
import sys

sys.path.append(
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
)

import pytest

from polypin.oracle_suite import (
    RELATIVE_TOLERANCE,
    OracleReport,
    check_instance,
    random_instance,
    run_oracle_suite,
)

SEED = 20240917


def test_hundred_instances_match_enumeration():
    """Test 100 random instances agree with brute-force enumeration"""
    report = run_oracle_suite(SEED, 100)
    assert report.instances == 100
    assert report.failures == []
    assert report.passed
    assert not report.vacuous
    assert report.max_relative_error <= RELATIVE_TOLERANCE
    assert report.gof_pvalue > 1e-3


def test_random_instance_shapes():
    """Test instance sizes stay within the enumeration limits"""
    for index in range(40):
        instance = random_instance(SEED, index, 6, 3)
        d = instance.spec.d
        assert d == (1 if index % 2 == 0 else 2)
        assert 1 <= instance.window.radius <= (3 if d == 1 else 2)
        assert 1 <= instance.n2 - instance.n1 <= (6 if d == 1 else 4)
        assert max(abs(c) for c in instance.x1) <= instance.window.radius
        assert max(abs(c) for c in instance.x2) <= instance.window.radius
        for value in instance.spec.v0_table.values():
            assert abs(value) <= instance.spec.m1_bound


def test_random_instance_is_reproducible():
    """Test an instance depends only on (seed, index)"""
    a = random_instance(SEED, 5, 6, 3)
    b = random_instance(SEED, 5, 6, 3)
    assert a.to_dict() == b.to_dict()
    assert random_instance(SEED + 1, 5, 6, 3).to_dict() != a.to_dict()


def _reachable_instance():
    """First instance whose endpoints can be joined by a path"""
    for index in range(100):
        instance = random_instance(SEED, index, 6, 3)
        gap = sum(abs(a - b) for a, b in zip(instance.x1, instance.x2))
        if gap <= instance.n2 - instance.n1:
            return instance
    raise AssertionError("no reachable instance")


def test_check_instance_and_corruption():
    """Test a clean pass, and a partition failure under corruption"""
    instance = _reachable_instance()
    clean = OracleReport(instances=1)
    check_instance(instance, clean)
    assert clean.passed
    assert clean.max_relative_error <= RELATIVE_TOLERANCE

    corrupted = OracleReport(instances=1)
    check_instance(instance, corrupted, corrupt=True)
    assert not corrupted.passed
    assert corrupted.failures[0]["check"] == "partition"
    assert corrupted.failures[0]["instance"]["index"] == instance.index


def test_add_check_threshold():
    """Test errors at the tolerance pass and anything above fails"""
    instance = random_instance(SEED, 1, 6, 3)
    report = OracleReport(instances=1)
    report.add_check(instance, "transfer", RELATIVE_TOLERANCE)
    assert report.passed
    report.add_check(instance, "marginal", float("nan"))
    assert not report.passed
    assert report.failures[0]["check"] == "marginal"


def test_empty_suite_is_vacuous():
    """Test zero instances give a vacuous pass without the sampler check"""
    report = run_oracle_suite(SEED, 0)
    assert report.vacuous
    assert report.passed
    assert report.gof_pvalue is None
    assert report.to_dict()["instances"] == 0


if __name__ == "__main__":
    pytest.main([__file__])
