import math
import os
import sys

sys.path.append(
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polypin.environment import (
    constant_environment,
    environment_from_signs,
    sample_environment,
)
from polypin.errors import BudgetExceededError, DomainError, ParameterError
from polypin.lattice_potential import PotentialSpec, Window
from polypin.transfer import (
    Field,
    PathSegment,
    apply_adjoint_range,
    apply_normalized,
    apply_transfer,
    apply_transfer_range,
    enumerate_paths_oracle,
    kappa_log_series,
    log_partition_function,
    log_partition_matrix,
    partition_function,
    path_energy,
    truncated_transfer,
)


@pytest.fixture
def free_spec():
    return PotentialSpec.free(1)


@pytest.fixture
def reference_spec():
    """d=1, M0=6, M1=0.1"""
    return PotentialSpec(d=1, lambda_pin=6.0, m1_bound=0.1)


def test_free_one_step_constant(free_spec):
    """Test T 1 is 1 inside and 2/3 on the window boundary"""
    window = Window(2, 1)
    env = constant_environment(1, 0, 1)
    image = apply_transfer(free_spec, env, Field.constant(window), 0)
    np.testing.assert_allclose(image.to_array(), [2 / 3, 1, 1, 1, 2 / 3])


def test_free_one_step_delta(free_spec):
    """Test T delta_0 is 1/3 on |x| <= 1"""
    window = Window(2, 1)
    env = constant_environment(-1, 0, 1)
    image = apply_transfer(free_spec, env, Field.delta(window, (0,)), 0)
    np.testing.assert_allclose(image.to_array(), [0, 1 / 3, 1 / 3, 1 / 3, 0])


def test_free_partition_function(free_spec):
    """Test Z_{0,1}(0,0) = 1 and Z_{0,2}(0,0) = 3 for the lazy walk"""
    window = Window(3, 1)
    env = constant_environment(1, 0, 2)
    assert partition_function(free_spec, env, (0,), (0,), 0, 1, window) == (
        pytest.approx(1.0)
    )
    assert partition_function(free_spec, env, (0,), (0,), 0, 2, window) == (
        pytest.approx(3.0)
    )
    # out of reach
    assert log_partition_function(free_spec, env, (0,), (3,), 0, 2, window) == (
        -math.inf
    )


def test_pinned_partition_function(reference_spec):
    """Test Z_{0,1}(0,0) = exp(phi_1(0)) for a single step"""
    window = Window(2, 1)
    env = environment_from_signs([-1, 1], n_lo=0)
    assert log_partition_function(
        reference_spec, env, (0,), (0,), 0, 1, window
    ) == pytest.approx(6.0)
    # identity on an empty interval
    assert log_partition_function(
        reference_spec, env, (1,), (1,), 0, 0, window
    ) == pytest.approx(0.0)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**32),
    length=st.integers(min_value=0, max_value=6),
    x1=st.integers(min_value=-2, max_value=2),
    x2=st.integers(min_value=-2, max_value=2),
)
def test_transfer_matches_enumeration(seed, length, x1, x2):
    """Test the transfer product against brute-force path enumeration"""
    spec = PotentialSpec(d=1, v0_table={(1,): -0.1}, lambda_pin=6.0, m1_bound=0.1)
    env = sample_environment(seed, 0, 6)
    window = Window(2, 1)
    oracle = enumerate_paths_oracle(spec, env, (x1,), (x2,), 0, length, window)
    log_z = log_partition_function(spec, env, (x1,), (x2,), 0, length, window)
    if oracle.count == 0:
        assert log_z == -math.inf
    else:
        assert log_z == pytest.approx(oracle.log_value, rel=1e-12, abs=1e-12)


def test_transfer_matches_enumeration_2d():
    """Test the transfer product against enumeration in two dimensions"""
    spec = PotentialSpec(
        d=2, v0_table={(1, 0): 0.2, (0, -1): -0.3}, lambda_pin=5.0, m1_bound=0.3
    )
    env = sample_environment(9, 0, 4)
    window = Window(1, 2)
    oracle = enumerate_paths_oracle(
        spec, env, (1, 1), (0, -1), 0, 4, window, collect_paths=True
    )
    assert oracle.count == len(oracle.paths)
    assert all(path.is_admissible() for path in oracle.paths)
    assert math.fsum(math.exp(e) for e in oracle.energies) == pytest.approx(
        oracle.value
    )
    log_z = log_partition_function(spec, env, (1, 1), (0, -1), 0, 4, window)
    assert log_z == pytest.approx(oracle.log_value, rel=1e-12)


def test_enumeration_budget(reference_spec):
    """Test the path budget guard"""
    env = constant_environment(1, 0, 20)
    with pytest.raises(BudgetExceededError):
        enumerate_paths_oracle(reference_spec, env, (0,), (0,), 0, 13, Window(3, 1))
    with pytest.raises(ParameterError):
        enumerate_paths_oracle(reference_spec, env, (0,), (0,), 3, 1, Window(3, 1))


def test_cocycle_identity(reference_spec):
    """Test T^{n1,n3} = T^{n2,n3} T^{n1,n2}"""
    env = sample_environment(4, -10, 10)
    window = Window(4, 1)
    f = Field.from_values(window, np.linspace(0.1, 1.0, window.size))
    whole = apply_transfer_range(reference_spec, env, f, -7, 6)
    split = apply_transfer_range(
        reference_spec,
        env,
        apply_transfer_range(reference_spec, env, f, -7, -2),
        -2,
        6,
    )
    assert split.log_scale == pytest.approx(whole.log_scale)
    np.testing.assert_allclose(split.values, whole.values, rtol=1e-12)
    # identity on an empty interval
    same = apply_transfer_range(reference_spec, env, f, 3, 3)
    np.testing.assert_array_equal(same.values, f.values)


def test_linearity(reference_spec):
    """Test T(a f + b g) = a T f + b T g"""
    env = sample_environment(2, 0, 8)
    window = Window(3, 1)
    rng = np.random.default_rng(0)
    f = rng.random(window.size)
    g = rng.random(window.size)

    def image(values):
        return apply_transfer_range(
            reference_spec, env, Field.from_values(window, values), 0, 8
        ).to_array()

    np.testing.assert_allclose(
        image(2.0 * f + 0.5 * g), 2.0 * image(f) + 0.5 * image(g), rtol=1e-12
    )


def test_adjoint_pairing(reference_spec):
    """Test <T f, h> = <f, T* h>"""
    env = sample_environment(5, 0, 6)
    window = Window(3, 1)
    rng = np.random.default_rng(1)
    f = Field.from_values(window, rng.random(window.size))
    h = Field.from_values(window, rng.random(window.size))
    forward = apply_transfer_range(reference_spec, env, f, 0, 6).to_array()
    backward = apply_adjoint_range(reference_spec, env, h, 0, 6).to_array()
    assert forward @ h.to_array() == pytest.approx(f.to_array() @ backward, rel=1e-12)


def test_log_partition_matrix(reference_spec):
    """Test the batched matrix agrees with single-source partition functions"""
    env = sample_environment(6, 0, 5)
    window = Window(2, 1)
    matrix = log_partition_matrix(reference_spec, env, 0, 5, window)
    for i, x in enumerate(window.points):
        for j, y in enumerate(window.points):
            expected = log_partition_function(
                reference_spec, env, tuple(x), tuple(y), 0, 5, window
            )
            assert matrix[i, j] == pytest.approx(expected, rel=1e-12)


def test_rebalancing_keeps_log_scale():
    """Test long products stay finite and match the per-step log norms"""
    spec = PotentialSpec(d=1, lambda_pin=50.0)
    env = constant_environment(1, 0, 200)
    window = Window(3, 1)
    v = Field.delta(window, (0,))
    image = apply_transfer_range(spec, env, v, 0, 200)
    assert np.all(np.isfinite(image.values))
    assert image.sup() <= 2.0**512
    increments, last = kappa_log_series(spec, env, v, 0, 200)
    assert len(increments) == 200
    assert image.log_sup() == pytest.approx(increments.sum(), rel=1e-12)
    np.testing.assert_allclose(
        last.values, image.normalized().values, rtol=1e-10, atol=1e-12
    )


def test_apply_normalized(reference_spec):
    """Test the normalised step has unit sup norm and returns the log norm"""
    env = sample_environment(8, 0, 4)
    window = Window(2, 1)
    f = Field.constant(window)
    image, log_norm = apply_normalized(reference_spec, env, f, 0, 4)
    assert image.sup() == pytest.approx(1.0)
    raw = apply_transfer_range(reference_spec, env, f, 0, 4)
    assert log_norm == pytest.approx(raw.log_sup())
    with pytest.raises(DomainError):
        apply_normalized(reference_spec, env, Field(window, np.zeros(5)), 0, 4)


def test_truncated_transfer_splits(reference_spec):
    """Test the inside and outside parts add up to the full image"""
    env = sample_environment(3, 0, 6)
    window = Window(4, 1)
    f = Field.constant(window)
    inside, outside = truncated_transfer(reference_spec, env, f, 0, 6, 2)
    whole = apply_transfer_range(reference_spec, env, f, 0, 6)
    np.testing.assert_allclose(
        inside.to_array() + outside.to_array(), whole.to_array(), rtol=1e-12
    )
    with pytest.raises(ParameterError):
        truncated_transfer(reference_spec, env, f, 0, 6, 5)


def test_field_validation():
    """Test field construction and scaling rules"""
    window = Window(1, 1)
    with pytest.raises(DomainError):
        Field.from_values(window, [1.0, -1.0, 0.0])
    with pytest.raises(DomainError):
        Field.from_values(window, [1.0, 1.0])
    with pytest.raises(DomainError):
        Field(window, np.zeros(3)).normalized()
    with pytest.raises(DomainError):
        Field(window, [1.0, np.inf, 1.0])
    with pytest.raises(DomainError):
        Field(window, [1.0, np.nan, 1.0])

    f = Field.from_values(window, [1.0, 2.0, 4.0])
    scaled = f.scaled(8.0)
    np.testing.assert_array_equal(scaled.values, f.values)
    assert scaled.log_sup() == pytest.approx(math.log(32.0))
    assert f.normalized().to_array().tolist() == [0.25, 0.5, 1.0]

    large = f.embed_into(Window(3, 1))
    assert large.value_at((3,)) == 0.0
    assert large.restrict_to(window).to_array().tolist() == [1.0, 2.0, 4.0]


def test_path_energy(reference_spec):
    """Test Phi sums V(gamma(n)) sign(n) over (n1, n2]"""
    env = environment_from_signs([1, 1, -1, 1], n_lo=0)
    path = PathSegment(0, 3, [0, 0, 0, 1])
    # n=1: +6, n=2: -6, n=3: V(1) = 0
    assert path_energy(path, reference_spec, env) == pytest.approx(0.0)
    path = PathSegment(0, 3, [1, 0, 1, 0])
    assert path_energy(path, reference_spec, env) == pytest.approx(12.0)
    with pytest.raises(ValueError):
        path_energy(PathSegment(0, 1, [0, 2]), reference_spec, env)


if __name__ == "__main__":
    pytest.main([__file__])
