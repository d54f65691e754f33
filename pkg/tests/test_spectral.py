import math
import os
import sys

sys.path.append(
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src")
)

import numpy as np
import pytest

from polypin.environment import sample_environment
from polypin.errors import (
    DomainError,
    NotConvergedError,
    ParameterError,
    PreconditionError,
)
from polypin.lattice_potential import PotentialSpec, Window, check_conditions
from polypin.spectral import (
    CocycleEigenpair,
    PullbackSolver,
    autonomous_environment,
    dominant_eigenpair,
    forward_attraction_test,
    localization_fit,
    lyapunov_exponent,
    one_step_matrix,
    pullback_eigenfunction,
    radius_localization_ratio,
    truncation_stability,
    uniqueness_condition_probe,
    verify_eigen_relation,
)
from polypin.transfer import Field, apply_transfer, kappa_log_series


@pytest.fixture
def reference_spec():
    """d=1, M0=6, M1=0.1"""
    return PotentialSpec(d=1, lambda_pin=6.0, m1_bound=0.1)


@pytest.fixture
def all_plus():
    return autonomous_environment(1, 256, 1)


@pytest.fixture(scope="module")
def sampled_pair():
    """Pullback eigenpair on a seeded environment"""
    spec = PotentialSpec(d=1, lambda_pin=6.0, m1_bound=0.1)
    env = sample_environment(2024, -4200, 10)
    pair = pullback_eigenfunction(spec, env, Field.constant(Window(6, 1)))
    return spec, env, pair


def test_all_plus_matches_dominant_eigenvector(reference_spec, all_plus):
    """Test the autonomous pullback limit is the Perron vector"""
    window = Window(4, 1)
    pair = pullback_eigenfunction(
        reference_spec, all_plus, Field.constant(window), tol=1e-12, max_depth=256
    )
    dominant = dominant_eigenpair(reference_spec, window)
    assert isinstance(pair, CocycleEigenpair)
    assert pair.converged
    assert dominant.converged
    assert pair.u.sup_distance(dominant.vector) < 1e-9
    assert pair.residual < 1e-9
    assert pair.kappa_log[-1] == pytest.approx(dominant.log_eigenvalue, rel=1e-9)
    # the Perron vector peaks at the pinning site
    assert int(np.argmax(dominant.vector.values)) == window.origin_index


def test_pullback_requires_conditions():
    """Test the free walk is rejected"""
    env = autonomous_environment(1, 64)
    with pytest.raises(PreconditionError):
        pullback_eigenfunction(PotentialSpec.free(1), env, Field.constant(Window(2)))


def test_pullback_rejects_zero_field(reference_spec, all_plus):
    with pytest.raises(DomainError):
        pullback_eigenfunction(
            reference_spec, all_plus, Field(Window(2), np.zeros(5)), max_depth=64
        )


def test_pullback_converges_on_sampled_environment(sampled_pair):
    """Test convergence, normalisation and the time-1 residual"""
    _, _, pair = sampled_pair
    assert pair.converged
    assert pair.last_change < 1e-10
    assert pair.u.sup() == pytest.approx(1.0)
    assert np.all(pair.u.values > 0)
    assert pair.residual < 1e-8
    assert len(pair.kappa_log) == pair.pullback_depth
    assert pair.lyapunov_estimate == pytest.approx(pair.kappa_log.mean())


def test_pullback_scale_invariance(reference_spec):
    """Test scaling the start field leaves u unchanged"""
    env = sample_environment(5, -600, 2)
    window = Window(4, 1)
    v0 = Field.from_values(window, np.linspace(0.2, 1.0, window.size))
    a = pullback_eigenfunction(reference_spec, env, v0, max_depth=512)
    b = pullback_eigenfunction(reference_spec, env, v0.scaled(1e300), max_depth=512)
    np.testing.assert_array_equal(a.u.values, b.u.values)


def test_unconverged_pair(reference_spec):
    """Test an exhausted depth cap gives an unconverged pair"""
    env = sample_environment(5, -64, 4)
    pair = pullback_eigenfunction(
        reference_spec, env, Field.constant(Window(4)), tol=0.0, max_depth=32
    )
    assert not pair.converged
    assert pair.pullback_depth == 32
    with pytest.raises(NotConvergedError):
        verify_eigen_relation(pair, reference_spec, env, 1)


def test_verify_eigen_relation(sampled_pair):
    """Test T u_{k-1} / ||T u_{k-1}|| = u_k for independent pullbacks"""
    spec, env, pair = sampled_pair
    residuals = verify_eigen_relation(pair, spec, env, 3)
    assert len(residuals) == 3
    assert max(residuals) < 1e-8


def test_forward_attraction_all_plus(reference_spec, all_plus):
    """Test forward iterates of a delta approach the Perron vector"""
    window = Window(4, 1)
    dominant = dominant_eigenpair(reference_spec, window)
    residuals = forward_attraction_test(
        reference_spec,
        all_plus,
        Field.delta(window, (2,)),
        pair_source=lambda n: dominant.vector,
        horizon=1,
    )
    assert len(residuals) == 1
    assert residuals[0] > 1e-3

    env = autonomous_environment(1, 256, 60)
    residuals = forward_attraction_test(
        reference_spec,
        env,
        Field.delta(window, (2,)),
        pair_source=lambda n: dominant.vector,
        horizon=50,
    )
    assert residuals[-1] < 1e-10
    with pytest.raises(DomainError):
        forward_attraction_test(reference_spec, env, Field(window, np.zeros(9)))


def test_localization_fit_exact():
    """Test the fit recovers an exact exponential profile"""
    window = Window(10, 1)
    u = Field.from_values(window, 2.0 * np.exp(-0.7 * window.norms))
    fit = localization_fit(u, 0.5)
    assert fit.fit_range == (2, 8)
    assert fit.lambda_hat == pytest.approx(0.7)
    assert fit.c_hat == pytest.approx(2.0)
    assert fit.max_excess == 0.0
    assert fit.n_points == 14
    assert not fit.flagged

    steep = localization_fit(u, 0.9)
    assert steep.max_excess == pytest.approx(0.2 * 8)


def test_localization_fit_zeros():
    """Test zeros are excluded and flagged"""
    window = Window(10, 1)
    values = np.exp(-0.7 * window.norms)
    values[window.norms == 8] = 0.0
    fit = localization_fit(Field.from_values(window, values), 0.5)
    assert fit.excluded_points == 2
    assert fit.flagged
    assert fit.lambda_hat == pytest.approx(0.7)
    assert fit.to_dict()["excluded_points"] == 2

    values[window.norms == 3] = 0.0
    with pytest.raises(DomainError):
        localization_fit(Field.from_values(window, values), 0.5, fit_range=(2, 3))
    with pytest.raises(ParameterError):
        localization_fit(Field.from_values(window, values), 0.5, fit_range=(5, 3))


def test_lyapunov_exponent():
    """Test the block mean and its standard error"""
    estimate = lyapunov_exponent([0.5] * 100, n_blocks=10)
    assert estimate.value == pytest.approx(0.5)
    assert estimate.stderr == pytest.approx(0.0, abs=1e-15)
    assert estimate.n_blocks == 10

    estimate = lyapunov_exponent([100.0] * 5 + [1.0, 3.0] * 50, discard=5)
    assert estimate.value == pytest.approx(2.0)
    assert estimate.n_steps == 100
    with pytest.raises(ParameterError):
        lyapunov_exponent([1.0])


def test_lyapunov_all_plus(reference_spec):
    """Test the all-plus exponent is the log Perron eigenvalue"""
    window = Window(4, 1)
    env = autonomous_environment(1, 1, 200)
    increments, _ = kappa_log_series(
        reference_spec, env, Field.constant(window), 0, 200
    )
    estimate = lyapunov_exponent(increments, discard=20)
    dominant = dominant_eigenpair(reference_spec, window)
    assert estimate.value == pytest.approx(dominant.log_eigenvalue, rel=1e-9)


def test_one_step_matrix(reference_spec):
    """Test the dense one-step matrix against the transfer sweep"""
    free = one_step_matrix(PotentialSpec.free(1), Window(1), 1)
    np.testing.assert_allclose(
        free, [[1 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 1 / 3]]
    )
    window = Window(3)
    env = sample_environment(1, 0, 1)
    f = Field.from_values(window, np.linspace(0.1, 1.0, window.size))
    matrix = one_step_matrix(reference_spec, window, env.sign(1))
    np.testing.assert_allclose(
        matrix @ f.values, apply_transfer(reference_spec, env, f, 0).to_array()
    )
    with pytest.raises(ParameterError):
        one_step_matrix(reference_spec, window, 0)


def test_uniqueness_condition_probe(reference_spec):
    """Test the probe reads u(0) of shifted pullbacks"""
    env = autonomous_environment(1, 200, 2)
    values = uniqueness_condition_probe(
        reference_spec, env, [1, 5], window=Window(3), tol=1e-12, max_depth=64
    )
    assert values == pytest.approx([1.0, 1.0])
    with pytest.raises(ParameterError):
        uniqueness_condition_probe(reference_spec, env, [0], window=Window(3))
    with pytest.raises(ParameterError):
        uniqueness_condition_probe(reference_spec, env, [1])


def test_radius_localization_ratio(reference_spec, all_plus):
    """Test the empirical K1 is the running max of the per-depth ratios"""
    window = Window(4)
    k1, per_depth = radius_localization_ratio(
        reference_spec, all_plus, Field.constant(window), 1.0, 1.0, [4, 8]
    )
    assert len(per_depth) == 2
    assert k1 == max(per_depth)
    assert 0 < k1 < math.inf
    bad = Field.from_values(window, [1.0] * 4 + [0.1] + [1.0] * 4)
    with pytest.raises(DomainError):
        radius_localization_ratio(reference_spec, all_plus, bad, 1.0, 1.0, [4])


def test_truncation_stability(reference_spec, all_plus):
    """Test enlarging the window barely moves u near the origin"""
    assert truncation_stability(reference_spec, all_plus, 3, 6, max_depth=256) < 1e-6
    with pytest.raises(ParameterError):
        truncation_stability(reference_spec, all_plus, 6, 3)


def test_solver_records_unconverged_times(reference_spec, caplog):
    """Test eigenfunctions cut off at the depth cap are logged and listed"""
    env = sample_environment(2024, -100, 10)
    solver = PullbackSolver(
        reference_spec, env, Field.constant(Window(6)), tol=0.0, max_depth=32
    )
    solver(1)
    solver(1)
    assert solver.unconverged == [1]
    assert "time 1 is an unconverged pullback" in caplog.text

    converged = PullbackSolver(reference_spec, env, Field.constant(Window(6)))
    converged(1)
    assert converged.unconverged == []


# Reference configuration: d=1, M0=6, M1=0.1, R=16, seed 20240917


@pytest.fixture(scope="module")
def reference_run():
    """Converged pullback from the constant field at the reference configuration"""
    spec = PotentialSpec(d=1, lambda_pin=6.0, m1_bound=0.1)
    env = sample_environment(20240917, -4200, 260)
    window = Window(16, 1)
    pair = pullback_eigenfunction(spec, env, Field.constant(window))
    return spec, env, pair


def test_reference_limit_independent_of_start(reference_run):
    """Test the pullbacks of delta_0 and of 1 share one limit"""
    spec, env, pair = reference_run
    window = pair.u.window
    from_delta = pullback_eigenfunction(spec, env, Field.delta(window, (0,)))
    assert pair.converged
    assert from_delta.converged
    assert from_delta.u.sup_distance(pair.u) < 2e-10


def test_reference_eigen_relation(reference_run):
    """Test the eigen-relation over 50 forward steps"""
    spec, env, pair = reference_run
    residuals = verify_eigen_relation(pair, spec, env, 50)
    assert len(residuals) == 50
    assert max(residuals) < 1e-8


def test_reference_localization(reference_run):
    """Test the decay fit over |x| in [2, 14] against 0.9 lambda0"""
    spec, _, pair = reference_run
    target = 0.9 * check_conditions(spec).lambda0
    fit = localization_fit(pair.u, target, (2, 14))
    assert fit.max_excess <= 0.5
    assert fit.lambda_hat >= target
    assert fit.excluded_points == 0


def test_reference_truncation_stability(reference_run):
    """Test the R=16 and R=20 eigenfunctions agree on the smaller window"""
    spec, env, _ = reference_run
    assert truncation_stability(spec, env, 16, 20) < 1e-8


def test_reference_forward_attraction(reference_run):
    """Test forward iterates of delta_0 and of 1 settle on u within 200 steps"""
    spec, env, pair = reference_run
    window = pair.u.window
    solver = PullbackSolver(spec, env, Field.constant(window))
    for start in (Field.delta(window, (0,)), Field.constant(window)):
        residuals = forward_attraction_test(spec, env, start, solver, horizon=200)
        assert len(residuals) == 200
        assert max(residuals[-100:]) < 1e-6
    assert solver.unconverged == []


def test_reference_lyapunov_across_seeds(reference_spec):
    """Test four seeds give Lyapunov estimates within 3 combined standard errors"""
    window = Window(16, 1)
    horizon = 10_000
    estimates = []
    for seed in range(4):
        env = sample_environment(seed, 0, horizon)
        increments, _ = kappa_log_series(
            reference_spec, env, Field.constant(window), 0, horizon
        )
        estimates.append(lyapunov_exponent(increments, discard=32))
    for i, a in enumerate(estimates):
        assert a.stderr > 0
        for b in estimates[i + 1 :]:
            assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


if __name__ == "__main__":
    pytest.main([__file__])
