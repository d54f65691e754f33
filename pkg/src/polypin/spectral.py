"""
Cocycle eigenfunction by pullback iteration, the eigen-relation and attraction
checks, localisation fits and Lyapunov exponent estimates.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .environment import Environment, constant_environment, shift
from .errors import DomainError, NotConvergedError, ParameterError, PreconditionError
from .hilbert import FClass, class_membership
from .lattice_potential import PotentialSpec, Window, check_conditions
from .transfer import (
    Field,
    _evolve_field,
    apply_normalized,
    apply_transfer_range,
    kappa_log_series,
)

logger = logging.getLogger(__name__)

PairSource = Callable[[int], Field]


@dataclass
class CocycleEigenpair:
    """
    Pullback limit candidate u at time 0 and its normalisation history.

    Attributes:
        u: Normalised eigenfunction candidate, sup = 1
        kappa_log: ln ||T u_k|| per step along the final pullback run
        lyapunov_estimate: Mean of kappa_log
        pullback_depth: Depth of the final pullback run
        residual: Sup distance between the normalised image T^{0,1} u and
            the pullback solution at time 1
        converged: Whether the Cauchy criterion was met before max_depth
        last_change: Sup distance between the last two depths
        tol: Cauchy tolerance
        max_depth: Depth cap
        start: Field the pullback runs started from
    """

    u: Optional[Field] = None
    kappa_log: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    lyapunov_estimate: Optional[float] = None
    pullback_depth: Optional[int] = None
    residual: Optional[float] = None
    converged: bool = False
    last_change: Optional[float] = None
    tol: Optional[float] = None
    max_depth: Optional[int] = None
    start: Optional[Field] = field(default=None, repr=False)

    def __str__(self) -> str:
        return (
            f"\n\t pullback_depth: {self.pullback_depth}"
            f"\n\t converged: {self.converged}"
            f"\n\t last_change: {self.last_change}"
            f"\n\t residual: {self.residual}"
            f"\n\t lyapunov_estimate: {self.lyapunov_estimate}"
        )

    def set_history(self, kappa_log: np.ndarray) -> None:
        self.kappa_log = np.asarray(kappa_log, dtype=np.float64)
        self.lyapunov_estimate = (
            float(self.kappa_log.mean()) if len(self.kappa_log) else None
        )


@dataclass
class LocalizationFit:
    """
    Least-squares fit ln u(x) ~ ln c_hat - lambda_hat |x| over a radius range.

    Attributes:
        lambda_hat: Fitted decay exponent
        c_hat: Fitted prefactor
        fit_range: (r_min, r_max) of |x| used in the fit
        lambda_target: Exponent the bound is checked at
        max_excess: max(0, max over the fit range of
            ln u - (ln c_hat - lambda_target |x|))
        n_points: Points entering the fit
        excluded_points: Points with u = 0 dropped from the fit
    """

    lambda_hat: Optional[float] = None
    c_hat: Optional[float] = None
    fit_range: Optional[Tuple[int, int]] = None
    lambda_target: Optional[float] = None
    max_excess: Optional[float] = None
    n_points: int = 0
    excluded_points: int = 0

    def __str__(self) -> str:
        return (
            f"\n\t lambda_hat: {self.lambda_hat}"
            f"\n\t c_hat: {self.c_hat}"
            f"\n\t fit_range: {self.fit_range}"
            f"\n\t lambda_target: {self.lambda_target}"
            f"\n\t max_excess: {self.max_excess}"
            f"\n\t excluded_points: {self.excluded_points}"
        )

    @property
    def flagged(self) -> bool:
        return self.excluded_points > 0

    def to_dict(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "c_hat": self.c_hat,
            "fit_range": list(self.fit_range) if self.fit_range else None,
            "lambda_target": self.lambda_target,
            "max_excess": self.max_excess,
            "n_points": self.n_points,
            "excluded_points": self.excluded_points,
        }


@dataclass
class LyapunovEstimate:
    """
    Block-averaged mean of ln kappa increments.

    Attributes:
        value: Mean increment, (1/n) ln kappa_n
        stderr: Standard error across block means
        n_blocks: Number of blocks
        n_steps: Increments used after discarding burn-in
    """

    value: float
    stderr: float
    n_blocks: int
    n_steps: int

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n_blocks": self.n_blocks,
            "n_steps": self.n_steps,
        }


@dataclass
class DominantEigenpair:
    """Top eigenpair of the constant-sign one-step kernel."""

    vector: Field
    eigenvalue: float
    iterations: int
    converged: bool

    @property
    def log_eigenvalue(self) -> float:
        return math.log(self.eigenvalue)


def _require_conditions(spec: PotentialSpec) -> None:
    report = check_conditions(spec)
    if not report.ok:
        raise PreconditionError(
            f"Potential fails the standing conditions: lambda0={report.lambda0}, "
            f"lambda1={report.lambda1}"
        )


def _pullback(
    spec: PotentialSpec, env: Environment, v0: Field, time: int, depth: int
) -> Field:
    """Normalised T^{time-depth, time} v0."""
    image = _evolve_field(spec, env, v0, time - depth, time)
    if image.is_zero():
        raise DomainError(f"Pullback image vanished at depth {depth}")
    return image.normalized()


def pullback_eigenfunction(
    spec: PotentialSpec,
    env: Environment,
    v0: Field,
    tol: float = 1e-10,
    max_depth: int = 4096,
    initial_depth: int = 8,
) -> CocycleEigenpair:
    """
    Iterate normalised T^{-n,0} v0 over doubling depths n until two
    consecutive depths agree within ``tol`` in sup norm.

    The first depth is at least 2 R d so the candidate is positive on the
    whole window. Reaching ``max_depth`` first returns an unconverged pair.

    Args:
        spec: Potential satisfying the standing conditions
        env: Environment covering [-max_depth + 1, 1]
        v0: Nonnegative, nonzero start field
        tol: Cauchy tolerance in sup norm
        max_depth: Depth cap
        initial_depth: First depth tried

    Returns:
        CocycleEigenpair
    """
    _require_conditions(spec)
    if v0.is_zero():
        raise DomainError("Pullback start field must be nonzero")
    window = v0.window
    depth = min(max(initial_depth, 2 * window.radius * window.d), max_depth)

    previous = _pullback(spec, env, v0, 0, depth)
    change = math.inf
    converged = False
    while depth < max_depth:
        next_depth = min(2 * depth, max_depth)
        current = _pullback(spec, env, v0, 0, next_depth)
        change = current.sup_distance(previous)
        logger.debug("Pullback depth %d: change %.3e", next_depth, change)
        depth, previous = next_depth, current
        if change < tol:
            converged = True
            break

    if not converged:
        logger.warning(
            "Pullback did not reach tol=%g by depth %d (last change %.3e)",
            tol,
            depth,
            change,
        )

    pair = CocycleEigenpair(
        u=previous,
        pullback_depth=depth,
        converged=converged,
        last_change=change,
        tol=tol,
        max_depth=max_depth,
        start=v0,
    )
    image, _ = apply_normalized(spec, env, previous, 0, 1)
    pair.residual = image.sup_distance(_pullback(spec, env, v0, 1, depth))
    increments, _ = kappa_log_series(spec, env, v0, -depth, 0)
    pair.set_history(increments)
    return pair


class PullbackSolver:
    """
    Eigenfunction at time n, computed as the pullback limit on theta^n omega
    and cached per time.

    Times whose pullback stopped at the depth cap are listed in ``unconverged``.
    """

    def __init__(
        self,
        spec: PotentialSpec,
        env: Environment,
        v0: Field,
        tol: float = 1e-10,
        max_depth: int = 4096,
    ) -> None:
        self.spec = spec
        self.env = env
        self.v0 = v0
        self.tol = tol
        self.max_depth = max_depth
        self._pairs: Dict[int, CocycleEigenpair] = {}
        self.unconverged: List[int] = []

    def remember(self, n: int, pair: CocycleEigenpair) -> None:
        self._pairs[n] = pair

    def pair(self, n: int) -> CocycleEigenpair:
        if n not in self._pairs:
            pair = pullback_eigenfunction(
                self.spec, shift(self.env, n), self.v0, self.tol, self.max_depth
            )
            if not pair.converged:
                logger.warning(
                    "Eigenfunction at time %d is an unconverged pullback", n
                )
                self.unconverged.append(n)
            self._pairs[n] = pair
        return self._pairs[n]

    def __call__(self, n: int) -> Field:
        return self.pair(n).u


def verify_eigen_relation(
    pair: CocycleEigenpair, spec: PotentialSpec, env: Environment, steps: int
) -> List[float]:
    """
    Sup distance between normalised T^{k-1,k} u_{k-1} and u_k for k = 1..steps,
    each u_k an independent pullback solution on theta^k omega.
    """
    if not pair.converged:
        raise NotConvergedError(
            f"Eigenpair did not converge (last change {pair.last_change})"
        )
    solver = PullbackSolver(spec, env, pair.start, pair.tol, pair.max_depth)
    solver.remember(0, pair)
    residuals = []
    for k in range(1, steps + 1):
        image, _ = apply_normalized(spec, env, solver(k - 1), k - 1, k)
        residuals.append(image.sup_distance(solver(k)))
    return residuals


def forward_attraction_test(
    spec: PotentialSpec,
    env: Environment,
    v: Field,
    pair_source: Optional[PairSource] = None,
    horizon: int = 50,
) -> List[float]:
    """
    residual_n = sup distance between normalised T^{0,n} v and the
    eigenfunction at time n, for n = 1..horizon.

    ``pair_source`` maps a time to the eigenfunction there; by default a
    :class:`PullbackSolver` started from the constant field.
    """
    if v.is_zero():
        raise DomainError("Forward attraction needs a nonzero start field")
    if pair_source is None:
        pair_source = PullbackSolver(spec, env, Field.constant(v.window))
    f = v
    residuals = []
    for n in range(1, horizon + 1):
        f, _ = apply_normalized(spec, env, f, n - 1, n)
        residuals.append(f.sup_distance(pair_source(n)))
    return residuals


def localization_fit(
    u: Field,
    lambda_target: float,
    fit_range: Optional[Tuple[int, int]] = None,
) -> LocalizationFit:
    """
    Ordinary least squares of ln u(x) against -|x| for |x| in ``fit_range``
    (default [2, R-2]); points where u vanishes are dropped and counted.
    """
    window = u.window
    if u.values[window.origin_index] <= 0:
        raise DomainError("Localisation fit needs u(0) > 0")
    if fit_range is None:
        fit_range = (2, window.radius - 2)
    r_min, r_max = fit_range
    if not 0 <= r_min < r_max <= window.radius:
        raise ParameterError(
            f"Fit range {fit_range} must be increasing within [0, {window.radius}]"
        )

    in_range = (window.norms >= r_min) & (window.norms <= r_max)
    positive = u.values > 0
    used = in_range & positive
    radii = window.norms[used].astype(np.float64)
    logs = u.log_values()[used]

    result = LocalizationFit(fit_range=(r_min, r_max), lambda_target=lambda_target)
    result.excluded_points = int(np.count_nonzero(in_range & ~positive))
    result.n_points = int(np.count_nonzero(used))
    if len(np.unique(radii)) < 2:
        raise DomainError("Fewer than two distinct radii carry positive mass")
    if result.flagged:
        logger.warning(
            "Excluded %d zero points from the localisation fit",
            result.excluded_points,
        )

    slope, intercept = np.polyfit(radii, logs, 1)
    result.lambda_hat = float(-slope)
    result.c_hat = float(math.exp(intercept))
    excess = logs - (intercept - lambda_target * radii)
    result.max_excess = max(0.0, float(excess.max()))
    return result


def lyapunov_exponent(
    kappa_log: Sequence[float], n_blocks: int = 20, discard: int = 0
) -> LyapunovEstimate:
    """
    Mean of the ln kappa increments with a standard error from block means.

    The first ``discard`` increments are dropped as burn-in.
    """
    increments = np.asarray(kappa_log, dtype=np.float64)[discard:]
    if len(increments) < 2:
        raise ParameterError(
            f"Need at least 2 increments after burn-in, got {len(increments)}"
        )
    n_blocks = max(2, min(n_blocks, len(increments)))
    block_means = np.array([b.mean() for b in np.array_split(increments, n_blocks)])
    stderr = float(block_means.std(ddof=1) / math.sqrt(n_blocks))
    return LyapunovEstimate(
        value=float(increments.mean()),
        stderr=stderr,
        n_blocks=n_blocks,
        n_steps=len(increments),
    )


def uniqueness_condition_probe(
    spec: PotentialSpec,
    env: Environment,
    depths: Sequence[int],
    v0: Optional[Field] = None,
    window: Optional[Window] = None,
    tol: float = 1e-10,
    max_depth: int = 4096,
) -> List[float]:
    """u^{theta^{-n} omega}(0) for each n in ``depths``."""
    if any(n <= 0 for n in depths):
        raise ParameterError(f"Depths must be positive, got {list(depths)}")
    if v0 is None:
        if window is None:
            raise ParameterError("Pass either a start field or a window")
        v0 = Field.constant(window)
    solver = PullbackSolver(spec, env, v0, tol, max_depth)
    origin = v0.window.origin_index
    return [float(solver(-n).to_array()[origin]) for n in depths]


def one_step_matrix(spec: PotentialSpec, window: Window, sign: int) -> np.ndarray:
    """
    Dense (N, N) matrix of T^{n,n+1} for a step with sign(n+1) = ``sign``.

    Row x carries exp(sign V(x)) / (2d+1) on every in-window neighbour of x.
    """
    if sign not in (-1, 1):
        raise ParameterError(f"Sign must be +1 or -1, got {sign}")
    weight = np.exp(sign * spec.potential_vector(window)) / (2 * spec.d + 1)
    matrix = np.zeros((window.size, window.size))
    for x, row in enumerate(window.neighbor_table):
        matrix[x, row[row >= 0]] = weight[x]
    return matrix


def dominant_eigenpair(
    spec: PotentialSpec,
    window: Window,
    sign: int = 1,
    tol: float = 1e-14,
    max_iter: int = 100_000,
) -> DominantEigenpair:
    """Power iteration on :func:`one_step_matrix`, sup-normalised."""
    matrix = one_step_matrix(spec, window, sign)
    vector = np.ones(window.size)
    eigenvalue = 0.0
    for iteration in range(1, max_iter + 1):
        image = matrix @ vector
        eigenvalue = float(image.max())
        image /= eigenvalue
        change = float(np.max(np.abs(image - vector)))
        vector = image
        if change < tol:
            return DominantEigenpair(Field(window, vector), eigenvalue, iteration, True)
    logger.warning("Power iteration stopped at %d iterations", max_iter)
    return DominantEigenpair(Field(window, vector), eigenvalue, max_iter, False)


def autonomous_environment(sign: int, depth: int, ahead: int = 1) -> Environment:
    """Constant-sign environment on [-depth + 1, ahead]."""
    return constant_environment(sign, -depth + 1, ahead)


def radius_localization_ratio(
    spec: PotentialSpec,
    env: Environment,
    phi: Field,
    lam: float,
    c: float,
    depths: Sequence[int],
    time: int = 0,
) -> Tuple[float, List[float]]:
    """
    Running max over n and y of
    [T^{time-n,time} phi(y) / T^{time-n,time} phi(0)] / (e^{-lam |y|} + c e^{-lam n}).

    Returns:
        (empirical K1, per-depth maxima)
    """
    if not class_membership(phi, FClass(c)):
        raise DomainError(f"Start field is not in F({c})")
    window = phi.window
    envelope_radial = -lam * window.norms
    per_depth = []
    for n in depths:
        image = apply_transfer_range(spec, env, phi, time - n, time)
        logs = image.log_values()
        at_origin = logs[window.origin_index]
        if not np.isfinite(at_origin):
            raise DomainError(f"Image vanishes at the origin for depth {n}")
        envelope = np.logaddexp(envelope_radial, math.log(c) - lam * n)
        per_depth.append(math.exp(float(np.max(logs - at_origin - envelope))))
    return (max(per_depth) if per_depth else 0.0), per_depth


def truncation_stability(
    spec: PotentialSpec,
    env: Environment,
    radius_small: int,
    radius_large: int,
    tol: float = 1e-10,
    max_depth: int = 4096,
) -> float:
    """
    Sup distance on the small window between the pullback eigenfunctions
    computed on windows of the two radii, both started from the constant field.
    """
    if radius_small >= radius_large:
        raise ParameterError(
            f"Need radius_small < radius_large, got {radius_small}, {radius_large}"
        )
    small = Window(radius_small, spec.d)
    large = Window(radius_large, spec.d)
    u_small = pullback_eigenfunction(
        spec, env, Field.constant(small), tol, max_depth
    ).u
    u_large = pullback_eigenfunction(
        spec, env, Field.constant(large), tol, max_depth
    ).u
    return u_large.restrict_to(small).sup_distance(u_small)
