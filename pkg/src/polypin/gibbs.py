"""
Finite-volume Gibbs distributions on polymer paths.

Marginals are forward-backward products of partition functions, carried in
log space and exp-normalised once per time slice.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .environment import Environment, uniform01
from .errors import DomainError, EnvironmentRangeError, ParameterError, ShapeError
from .lattice_potential import Point, PotentialSpec, Window
from .transfer import (
    Field,
    PathSegment,
    apply_adjoint_range,
    apply_transfer_range,
    enumerate_paths_oracle,
    log_partition_function,
    log_partition_matrix,
    path_energy,
)

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Pinned:
    """Path fixed at x1 at the first time and at x2 at the last time."""

    x1: Point
    x2: Point


@dataclass(frozen=True)
class Free:
    """Endpoints summed over B_radius, or over the whole window when radius is None."""

    radius: Optional[int] = None


Boundary = Union[Pinned, Free]


def _check_normalized(probabilities: np.ndarray) -> None:
    if not np.all(probabilities >= 0):
        raise DomainError("Probabilities must be nonnegative")
    total = float(probabilities.sum())
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise DomainError(f"Probabilities sum to {total}, not 1")


@dataclass(frozen=True, eq=False)
class GibbsMarginal:
    """
    Law of the path position at one time.

    Attributes:
        window: Window indexing the probabilities
        time: Time of the marginal
        probabilities: One entry per window point, summing to 1
    """

    window: Window
    time: int
    probabilities: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        probabilities = np.array(self.probabilities, dtype=np.float64)
        if probabilities.shape != (self.window.size,):
            raise ShapeError(
                f"Marginal has shape {probabilities.shape}, window needs "
                f"({self.window.size},)"
            )
        _check_normalized(probabilities)
        probabilities.setflags(write=False)
        object.__setattr__(self, "probabilities", probabilities)

    def probability_at(self, x: Sequence[int]) -> float:
        return float(self.probabilities[self.window.index_of(x)])

    def tail_mass(self, r: int) -> float:
        """Mass outside B_r."""
        return float(self.probabilities[self.window.norms > r].sum())

    def rows(self) -> List[Tuple[Point, float]]:
        return [
            (self.window.point(i), float(p)) for i, p in enumerate(self.probabilities)
        ]

    def __str__(self) -> str:
        return f"GibbsMarginal(time={self.time}, {self.window})"


@dataclass(frozen=True, eq=False)
class TwoPointDistribution:
    """
    Joint law of the positions at two times.

    Attributes:
        window: Window indexing both axes
        times: (n_a, n_b)
        probabilities: (N, N) array, rows n_a positions, columns n_b positions
    """

    window: Window
    times: Tuple[int, int]
    probabilities: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        probabilities = np.array(self.probabilities, dtype=np.float64)
        size = self.window.size
        if probabilities.shape != (size, size):
            raise ShapeError(
                f"Joint law has shape {probabilities.shape}, window needs "
                f"({size}, {size})"
            )
        _check_normalized(probabilities)
        probabilities.setflags(write=False)
        object.__setattr__(self, "probabilities", probabilities)

    def marginal(self, axis: int) -> GibbsMarginal:
        """Law of the first (axis=0) or second (axis=1) coordinate."""
        summed = self.probabilities.sum(axis=1 - axis)
        return GibbsMarginal(self.window, self.times[axis], summed / summed.sum())


@dataclass
class CouplingProbe:
    """
    Measured minorisation constant of a time-0 marginal.

    Attributes:
        r: Boundary ball radius
        n_half: Half-length of the time interval
        applicable: Whether the all-plus block around 0 was present
        c: min over window points x != 0 of mu(0) / mu(x)
        excluded_points: Window points x != 0 with zero mass
    """

    r: Optional[int] = None
    n_half: Optional[int] = None
    applicable: bool = False
    c: Optional[float] = None
    excluded_points: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class UniquenessReport:
    """
    Total variation between two pinned approximants and the coupling envelope.

    Attributes:
        l: Boundary times are -l and l
        m1: First approximant
        m2: Second approximant
        tv: TV distance of the two-point boundary laws
        coupling: Coupling probe the envelope is computed from
        envelope: 1 - (c / ((2r+1)^d - 1 + c))^2
        ball_size_convention: Formula used for the number of points in B_r
    """

    l: Optional[int] = None
    m1: Optional[int] = None
    m2: Optional[int] = None
    tv: Optional[float] = None
    coupling: Optional[CouplingProbe] = None
    envelope: Optional[float] = None
    ball_size_convention: str = "(2r+1)^d"

    def set_envelope(self, d: int) -> None:
        """Compute the iteration-bound envelope from the measured coupling constant."""
        if self.coupling is None or self.coupling.c is None:
            self.envelope = None
            return
        c = self.coupling.c
        points = (2 * self.coupling.r + 1) ** d
        self.envelope = 1.0 - (c / (points - 1 + c)) ** 2

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "m1": self.m1,
            "m2": self.m2,
            "tv": self.tv,
            "coupling": None if self.coupling is None else self.coupling.to_dict(),
            "envelope": self.envelope,
            "ball_size_convention": self.ball_size_convention,
        }


@dataclass
class TailProfile:
    """Tail masses outside B_r and their fitted log-slope in r."""

    radii: List[int] = field(default_factory=list)
    masses: List[float] = field(default_factory=list)
    log_slope: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _boundary_field(window: Window, boundary: Boundary, end: int) -> Field:
    """Indicator of the admissible endpoints at the start (end=0) or finish (end=1)."""
    if isinstance(boundary, Pinned):
        point = boundary.x1 if end == 0 else boundary.x2
        if not window.contains(point):
            raise DomainError(f"Pinned point {tuple(point)} lies outside {window}")
        return Field.delta(window, point)
    if boundary.radius is None:
        return Field.constant(window)
    if not 0 <= boundary.radius <= window.radius:
        raise ParameterError(
            f"Free boundary radius {boundary.radius} must lie in [0, {window.radius}]"
        )
    return Field(window, window.ball_mask(boundary.radius).astype(np.float64))


def _normalize_logs(logs: np.ndarray) -> np.ndarray:
    total = logsumexp(logs)
    if not np.isfinite(total):
        raise DomainError("Boundary is unreachable: every weight vanishes")
    probabilities = np.exp(logs - total)
    return probabilities / probabilities.sum()


def _default_window(x1: Point, x2: Point, length: int) -> Window:
    reach = max([abs(c) for c in x1] + [abs(c) for c in x2] + [0])
    return Window(max(1, reach + length // 2 + 1), len(x1))


def gibbs_path_probability(
    seg: PathSegment,
    spec: PotentialSpec,
    env: Environment,
    window: Optional[Window] = None,
) -> float:
    """
    exp(Phi(gamma)) / Z_{n1,n2}(gamma(n1), gamma(n2)).

    Without a window, one large enough to hold every path between the
    endpoints is used.
    """
    x1, x2 = seg.position(seg.n1), seg.position(seg.n2)
    if window is None:
        window = _default_window(x1, x2, seg.n2 - seg.n1)
    if not all(window.contains(p) for p in seg.key()):
        raise DomainError(f"Path leaves {window}")
    log_z = log_partition_function(spec, env, x1, x2, seg.n1, seg.n2, window)
    if log_z == -math.inf:
        raise DomainError(f"Z vanishes between {x1} and {x2}")
    return math.exp(path_energy(seg, spec, env) - log_z)


def marginal_at(
    spec: PotentialSpec,
    env: Environment,
    n: int,
    n1: int,
    n2: int,
    boundary: Boundary,
    window: Window,
) -> GibbsMarginal:
    """
    mu{alpha_n = x} proportional to Z_{n1,n}(x1, x) Z_{n,n2}(x, x2), summed over
    the boundary points for a free boundary.
    """
    if not n1 <= n <= n2:
        raise ParameterError(f"Need n1 <= n <= n2, got {n1}, {n}, {n2}")
    forward = apply_transfer_range(
        spec, env, _boundary_field(window, boundary, 0), n1, n
    )
    backward = apply_adjoint_range(
        spec, env, _boundary_field(window, boundary, 1), n, n2
    )
    logs = forward.log_values() + backward.log_values()
    return GibbsMarginal(window, n, _normalize_logs(logs))


def pinned_approximant_marginal(
    spec: PotentialSpec, env: Environment, m: int, n: int, window: Window
) -> GibbsMarginal:
    """Time-n marginal of mu^m, the measure pinned at the origin at -m and m."""
    if abs(n) > m:
        raise EnvironmentRangeError(f"Time {n} lies outside [-{m}, {m}]")
    origin = (0,) * window.d
    return marginal_at(spec, env, n, -m, m, Pinned(origin, origin), window)


def two_point_boundary(
    spec: PotentialSpec, env: Environment, l: int, m: int, window: Window
) -> TwoPointDistribution:
    """
    Joint law of (alpha_{-l}, alpha_l) under mu^m from
    Z_{-m,-l}(0, x) Z_{-l,l}(x, y) Z_{l,m}(y, 0).
    """
    if not 0 <= l <= m:
        raise ParameterError(f"Need 0 <= l <= m, got l={l}, m={m}")
    pin = Field.delta(window, (0,) * window.d)
    head = apply_transfer_range(spec, env, pin, -m, -l).log_values()
    tail = apply_adjoint_range(spec, env, pin, l, m).log_values()
    middle = log_partition_matrix(spec, env, -l, l, window)
    logs = head[:, None] + middle + tail[None, :]
    return TwoPointDistribution(window, (-l, l), _normalize_logs(logs))


def tv_distance(a, b) -> float:
    """(1/2) sum |a - b| for two laws on the same support."""
    if hasattr(a, "window") and hasattr(b, "window") and a.window != b.window:
        raise ShapeError(f"Supports differ: {a.window} vs {b.window}")
    pa = np.asarray(getattr(a, "probabilities", a), dtype=np.float64)
    pb = np.asarray(getattr(b, "probabilities", b), dtype=np.float64)
    if pa.shape != pb.shape:
        raise ShapeError(f"Supports differ: shapes {pa.shape} vs {pb.shape}")
    return float(min(1.0, 0.5 * np.abs(pa - pb).sum()))


def coupling_constant_probe(
    spec: PotentialSpec,
    env: Environment,
    r: int,
    n_half: int,
    window: Window,
    n2_hat: int = 1,
) -> CouplingProbe:
    """
    Minorisation constant c of the time-0 marginal of the measure on
    [-n_half, n_half] with both endpoints free in B_r.

    The probe needs +1 signs on (-n2_hat, n2_hat]; otherwise it is returned
    flagged inapplicable.
    """
    probe = CouplingProbe(r=r, n_half=n_half)
    if not np.all(env.signs(-n2_hat + 1, n2_hat) == 1):
        logger.info("No all-plus block of half-width %d around 0", n2_hat)
        return probe
    probe.applicable = True

    marginal = marginal_at(spec, env, 0, -n_half, n_half, Free(r), window)
    masses = np.delete(marginal.probabilities, window.origin_index)
    positive = masses > 0
    probe.excluded_points = int(np.count_nonzero(~positive))
    at_origin = marginal.probabilities[window.origin_index]
    if np.any(positive):
        probe.c = float(at_origin / masses[positive].max())
    return probe


def uniqueness_diagnostic(
    spec: PotentialSpec,
    env: Environment,
    m1: int,
    m2: int,
    l: int,
    window: Window,
    coupling_radius: int = 2,
    n2_hat: int = 1,
) -> UniquenessReport:
    """TV between the two-point boundary laws of mu^m1 and mu^m2 at (-l, l)."""
    if not 0 <= l < min(m1, m2):
        raise ParameterError(
            f"Need 0 <= l < min(m1, m2), got l={l}, m1={m1}, m2={m2}"
        )
    report = UniquenessReport(l=l, m1=m1, m2=m2)
    report.tv = tv_distance(
        two_point_boundary(spec, env, l, m1, window),
        two_point_boundary(spec, env, l, m2, window),
    )
    report.coupling = coupling_constant_probe(
        spec, env, coupling_radius, min(m1, m2), window, n2_hat
    )
    report.set_envelope(spec.d)
    return report


def sample_path(
    spec: PotentialSpec,
    env: Environment,
    n1: int,
    n2: int,
    boundary: Boundary,
    seed: int,
    count: int,
    window: Window,
) -> List[PathSegment]:
    """
    Exact draws by sequential conditionals: from x at time t the walk moves to
    y with weight exp(phi_{t+1}(y)) Z_{t+1,n2}(y, boundary).

    Path i reads its uniforms from stream i of the counter hash; counter 0
    picks a free start, counter k > 0 drives step k.
    """
    if n1 > n2:
        raise ParameterError(f"Need n1 <= n2, got [{n1}, {n2}]")
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")

    # backward[k] is ln of the boundary-summed Z from time n1 + k.
    length = n2 - n1
    h = _boundary_field(window, boundary, 1)
    backward = [h.log_values()]
    for t in range(n2 - 1, n1 - 1, -1):
        h = apply_adjoint_range(spec, env, h, t, t + 1)
        backward.append(h.log_values())
    backward.reverse()

    start = _boundary_field(window, boundary, 0).log_values() + backward[0]
    if not np.isfinite(logsumexp(start)):
        raise DomainError("Boundary is unreachable: every weight vanishes")

    streams = np.arange(count, dtype=np.int64)
    table = window.neighbor_table
    potential = spec.potential_vector(window)
    positions = np.empty((count, length + 1), dtype=np.int64)

    start_probs = np.exp(start - logsumexp(start))
    positions[:, 0] = _inverse_cdf(
        np.broadcast_to(start_probs, (count, window.size)),
        uniform01(seed, streams, 0),
    )
    signs = env.signs(n1 + 1, n2)
    for k in range(1, length + 1):
        candidates = table[positions[:, k - 1]]
        logs = np.where(
            candidates >= 0,
            signs[k - 1] * potential[candidates] + backward[k][candidates],
            -np.inf,
        )
        probs = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        choice = _inverse_cdf(probs, uniform01(seed, streams, k))
        positions[:, k] = candidates[np.arange(count), choice]

    logger.debug("Sampled %d paths on [%d, %d]", count, n1, n2)
    points = window.points
    return [PathSegment(n1, n2, points[row]) for row in positions]


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise index of the first CDF entry exceeding u, never a zero-mass entry."""
    cdf = np.cumsum(probs, axis=1)
    choice = (cdf <= np.asarray(u)[:, None]).sum(axis=1)
    last_positive = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(choice, last_positive)


def tail_mass_profile(marginal: GibbsMarginal, radii: Sequence[int]) -> TailProfile:
    """Tail masses outside B_r for each r and the least-squares slope of their logs."""
    profile = TailProfile(radii=[int(r) for r in radii])
    profile.masses = [marginal.tail_mass(r) for r in radii]
    usable = [(r, m) for r, m in zip(profile.radii, profile.masses) if m > 0]
    if len(usable) >= 2:
        rs, ms = zip(*usable)
        profile.log_slope = float(np.polyfit(rs, np.log(ms), 1)[0])
    return profile


def path_distribution(
    spec: PotentialSpec,
    env: Environment,
    x1: Sequence[int],
    x2: Sequence[int],
    n1: int,
    n2: int,
    window: Window,
) -> Dict[Tuple[Point, ...], float]:
    """Exact Gibbs probability of every in-window path, by enumeration."""
    oracle = enumerate_paths_oracle(
        spec, env, x1, x2, n1, n2, window, collect_paths=True
    )
    if oracle.count == 0:
        raise DomainError(f"No admissible path from {tuple(x1)} to {tuple(x2)}")
    logs = np.array(oracle.energies)
    probabilities = np.exp(logs - logsumexp(logs))
    return {seg.key(): float(p) for seg, p in zip(oracle.paths, probabilities)}


def path_marginal_from_enumeration(
    spec: PotentialSpec,
    env: Environment,
    n: int,
    n1: int,
    n2: int,
    x1: Sequence[int],
    x2: Sequence[int],
    window: Window,
) -> GibbsMarginal:
    """Time-n marginal of the pinned measure, summed path by path."""
    if not n1 <= n <= n2:
        raise ParameterError(f"Need n1 <= n <= n2, got {n1}, {n}, {n2}")
    mass: Dict[Point, float] = defaultdict(float)
    for key, p in path_distribution(spec, env, x1, x2, n1, n2, window).items():
        mass[key[n - n1]] += p
    probabilities = np.zeros(window.size)
    for point, p in mass.items():
        probabilities[window.index_of(point)] = p
    return GibbsMarginal(window, n, probabilities / probabilities.sum())
