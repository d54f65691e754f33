"""
Hilbert projective metric on positive functions over B_r, the function
classes F(c), G(lambda, r), H(lambda, r), the contraction coefficient of a
positive kernel and the audits that measure contraction along regeneration
intervals.

All ratios are taken as differences of logs.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, KernelConfigurationError, ParameterError
from .lattice_potential import Point, PotentialSpec, Window, check_conditions
from .transfer import (
    Field,
    apply_transfer_range,
    log_partition_matrix,
    truncated_transfer,
)

if TYPE_CHECKING:
    from .environment import Environment, RegenerationReport

logger = logging.getLogger(__name__)

BIRKHOFF_SLACK_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """
    Positive kernel K(x, y) = (2d+1)^{-(n2-n1)} Z_{n1,n2}(x, y) on B_r x B_r.

    Rows are start points x, columns end points y; the kernel acts as
    (K f)(y) = sum_x K(x, y) f(x). Stored as entries * exp(log_scale).

    Attributes:
        entries: Mantissas, max entry 1
        log_scale: Shared log exponent
        r: Ball radius, None for synthetic kernels
        n1: Start time of the interval, if built from an environment
        n2: End time of the interval, if built from an environment
    """

    entries: np.ndarray = field(repr=False)
    log_scale: float = 0.0
    r: Optional[int] = None
    n1: Optional[int] = None
    n2: Optional[int] = None

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DomainError(f"Kernel must be square, got shape {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def log_entries(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.entries) + self.log_scale

    def is_positive(self) -> bool:
        return bool(np.all(self.entries > 0))


def build_kernel(
    spec: PotentialSpec,
    env: "Environment",
    n1: int,
    n2: int,
    r: int,
    window: Window,
) -> KernelMatrix:
    """
    Restricted kernel of T^{n1,n2} on B_r; paths may leave B_r but not the window.
    """
    if r > window.radius:
        raise KernelConfigurationError(
            f"r={r} exceeds the window radius {window.radius}"
        )
    reach = 2 * r * spec.d
    if n2 - n1 < reach:
        raise KernelConfigurationError(
            f"Interval [{n1}, {n2}] is shorter than {reach} steps; "
            "the restricted kernel is not positive"
        )
    ball = np.flatnonzero(window.ball_mask(r))
    logs = log_partition_matrix(spec, env, n1, n2, window, sources=ball)[:, ball]
    logs = logs - (n2 - n1) * spec.log_moves
    if not np.all(np.isfinite(logs)):
        raise KernelConfigurationError(f"Kernel on [{n1}, {n2}] has zero entries")
    top = float(logs.max())
    return KernelMatrix(np.exp(logs - top), top, r=r, n1=n1, n2=n2)


def apply_kernel(kernel: KernelMatrix, values: np.ndarray) -> np.ndarray:
    """(K f)(y) = sum_x K(x, y) f(x), up to the kernel's log scale."""
    return kernel.entries.T @ np.asarray(values, dtype=np.float64)


def _ball_logs(f: Field, r: int) -> np.ndarray:
    if r > f.window.radius:
        raise ParameterError(f"r={r} exceeds the window radius {f.window.radius}")
    values = f.values[f.window.ball_mask(r)]
    if not np.all(values > 0):
        raise DomainError(f"Field is not strictly positive on B_{r}")
    return np.log(values)


def log_ratio_spread(a: np.ndarray, b: np.ndarray) -> float:
    """ln(max a/b * max b/a) for positive arrays a, b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.all(a > 0) and np.all(b > 0)):
        raise DomainError("Hilbert metric needs strictly positive arrays")
    diff = np.log(a) - np.log(b)
    return float(diff.max() - diff.min())


def hilbert_metric(f: Field, g: Field, r: int) -> float:
    """rho_r(f, g) = ln(max_{B_r} f/g * max_{B_r} g/f)."""
    if f.window != g.window:
        raise DomainError("Fields live on different windows")
    diff = _ball_logs(f, r) - _ball_logs(g, r)
    return float(diff.max() - diff.min())


def projective_diameter(fields: Sequence[Field], r: int) -> float:
    """Largest pairwise Hilbert distance on B_r."""
    if not fields:
        raise DomainError("Diameter of an empty set is undefined")
    logs = [_ball_logs(f, r) for f in fields]
    diameter = 0.0
    for a, b in itertools.combinations(logs, 2):
        diff = a - b
        diameter = max(diameter, float(diff.max() - diff.min()))
    return diameter


def contraction_coefficient(kernel: KernelMatrix) -> float:
    """
    L = min over x1, x2, y1, y2 of K(x1,y1) K(x2,y2) / (K(x2,y1) K(x1,y2)).

    Reduced to min over (x1, x2) of [min_y D] - [max_y D] with
    D(y) = ln K(x1, y) - ln K(x2, y).
    """
    if not kernel.is_positive():
        raise DomainError("Contraction coefficient needs a strictly positive kernel")
    logs = np.log(kernel.entries)
    log_l = 0.0
    for row in logs:
        diff = row[None, :] - logs
        log_l = min(log_l, float((diff.min(axis=1) - diff.max(axis=1)).min()))
    return math.exp(log_l)


def birkhoff_bound(contraction: float) -> float:
    """(1 - sqrt(L)) / (1 + sqrt(L))."""
    if not 0 < contraction <= 1:
        raise DomainError(f"L must lie in (0, 1], got {contraction}")
    root = math.sqrt(contraction)
    return (1 - root) / (1 + root)


def n0_threshold(lam: float, r: int, c: float) -> float:
    """ln(c)/lambda + r + 1."""
    if lam <= 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    if c < 1:
        raise ParameterError(f"c must be >= 1, got {c}")
    return math.log(c) / lam + r + 1


@dataclass(frozen=True)
class FClass:
    """F(c): ||phi|| <= c phi(0)."""

    c: float


@dataclass(frozen=True)
class GClass:
    """G(lambda, r): F(2 K1) with ||phi 1_{B_r^c}|| <= ||phi 1_{B_r}||."""

    lam: float
    r: int
    k1_hat: float = 1.0


@dataclass(frozen=True)
class HClass:
    """H(lambda, r): G with ||phi|| = 1 and phi >= lower_bound on B_r."""

    lam: float
    r: int
    lower_bound: float
    k1_hat: float = 1.0


ClassQuery = Union[FClass, GClass, HClass]


@dataclass
class MembershipResult:
    """
    Outcome of a class membership check.

    Attributes:
        member: Whether the defining inequalities hold
        witness: Point where a violated inequality is attained
        reason: Which inequality failed
    """

    member: bool = True
    witness: Optional[Point] = None
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.member

    def set_violation(self, witness: Point, reason: str) -> None:
        self.member = False
        self.witness = witness
        self.reason = reason


def class_membership(f: Field, query: ClassQuery) -> MembershipResult:
    """Evaluate the defining inequalities of F(c), G(lambda, r) or H(lambda, r)."""
    window = f.window
    values = f.values
    result = MembershipResult()
    argmax = window.point(int(np.argmax(values)))

    c = query.c if isinstance(query, FClass) else 2 * query.k1_hat
    if values.max() > c * values[window.origin_index]:
        result.set_violation(argmax, f"sup exceeds {c} * phi(0)")
        return result
    if isinstance(query, FClass):
        return result

    inside = window.ball_mask(query.r)
    interior = values[inside].max()
    if np.any(~inside) and values[~inside].max() > interior:
        outside = np.where(inside, -np.inf, values)
        result.set_violation(
            window.point(int(np.argmax(outside))), "exterior sup exceeds interior sup"
        )
        return result
    if isinstance(query, GClass):
        return result

    plain = f.to_array()
    if abs(plain.max() - 1.0) > 1e-12:
        result.set_violation(argmax, "sup norm is not 1")
        return result
    ball_values = np.where(inside, plain, np.inf)
    lowest = int(np.argmin(ball_values))
    if ball_values[lowest] < query.lower_bound:
        result.set_violation(window.point(lowest), "below the lower bound on B_r")
    return result


@dataclass
class IntervalAudit:
    """
    Contraction measurements on one regeneration interval.

    Attributes:
        start: n_i
        end: n_{i-1}
        contraction_coefficient: L of the restricted kernel
        birkhoff_bound: (1 - sqrt(L)) / (1 + sqrt(L))
        diameter_before: diam_r of the trial fields at n_i
        diameter_after_full: diam_r of the untruncated images
        diameter_after_truncated: diam_r of the truncated images
        truncated_factor: diameter_after_truncated / diameter_before
        min_birkhoff_slack: min over pairs of bound * rho - rho_truncated
        birkhoff_holds: Whether every pair respects the Birkhoff bound
        influx_ratio: max over fields and B_r of hat(T) f / T_r f
        k2_measured: max over fields of max/min of the images on B_r
    """

    start: Optional[int] = None
    end: Optional[int] = None
    contraction_coefficient: Optional[float] = None
    birkhoff_bound: Optional[float] = None
    diameter_before: Optional[float] = None
    diameter_after_full: Optional[float] = None
    diameter_after_truncated: Optional[float] = None
    truncated_factor: Optional[float] = None
    min_birkhoff_slack: Optional[float] = None
    birkhoff_holds: Optional[bool] = None
    influx_ratio: Optional[float] = None
    k2_measured: Optional[float] = None

    def __str__(self) -> str:
        return (
            f"\n\t interval: [{self.start}, {self.end}]"
            f"\n\t contraction_coefficient: {self.contraction_coefficient}"
            f"\n\t birkhoff_bound: {self.birkhoff_bound}"
            f"\n\t diameter_before: {self.diameter_before}"
            f"\n\t diameter_after_full: {self.diameter_after_full}"
            f"\n\t diameter_after_truncated: {self.diameter_after_truncated}"
            f"\n\t truncated_factor: {self.truncated_factor}"
            f"\n\t birkhoff_holds: {self.birkhoff_holds}"
            f"\n\t influx_ratio: {self.influx_ratio}"
            f"\n\t k2_measured: {self.k2_measured}"
        )

    def set_kernel(self, contraction: float) -> None:
        """
        Set the contraction coefficient and compute the Birkhoff bound.

        Args:
            contraction: L of the restricted kernel
        """
        self.contraction_coefficient = contraction
        self.birkhoff_bound = birkhoff_bound(contraction)

    def set_diameters(self, before: float, full: float, truncated: float) -> None:
        """
        Set the measured diameters and compute the truncated contraction factor.

        Args:
            before: Diameter of the trial fields
            full: Diameter of the untruncated images
            truncated: Diameter of the truncated images
        """
        self.diameter_before = before
        self.diameter_after_full = full
        self.diameter_after_truncated = truncated
        self.truncated_factor = truncated / before if before > 0 else None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TerminalAudit:
    """
    Growth of the Hilbert diameter on the last segment [n_1, 0].

    Attributes:
        start: n_1
        end: Terminal time
        diameter_before: diam_r at n_1
        diameter_after: diam_r at the terminal time
        growth: diameter_after - diameter_before
        reference_decay: exp(-lambda2 r)
    """

    start: Optional[int] = None
    end: Optional[int] = None
    diameter_before: Optional[float] = None
    diameter_after: Optional[float] = None
    growth: Optional[float] = None
    reference_decay: Optional[float] = None

    def __str__(self) -> str:
        return (
            f"\n\t interval: [{self.start}, {self.end}]"
            f"\n\t diameter_before: {self.diameter_before}"
            f"\n\t diameter_after: {self.diameter_after}"
            f"\n\t growth: {self.growth}"
            f"\n\t reference_decay: {self.reference_decay}"
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ContractionAudit:
    """
    Contraction audit along a sequence of regeneration times.

    Attributes:
        r: Ball radius
        intervals: One record per regeneration interval, chronological
        terminal: Record for the segment from the latest time to 0
        reference_l_scale: (2d+1)^{-4r-2} exp(-8 M1 r), the scale of the
            analytic lower bound on L
        all_birkhoff_hold: Whether every interval respected the Birkhoff bound
    """

    r: Optional[int] = None
    intervals: List[IntervalAudit] = field(default_factory=list)
    terminal: Optional[TerminalAudit] = None
    reference_l_scale: Optional[float] = None
    all_birkhoff_hold: bool = True

    def __str__(self) -> str:
        intervals = "".join(str(interval) for interval in self.intervals)
        return (
            f"ContractionAudit:\n"
            f"\t r: {self.r}\n"
            f"\t reference_l_scale: {self.reference_l_scale}\n"
            f"\t all_birkhoff_hold: {self.all_birkhoff_hold}\n"
            f"\t intervals: {intervals}\n"
            f"\t terminal: {self.terminal}"
        )

    def add_interval(self, interval: IntervalAudit) -> None:
        self.intervals.append(interval)
        if not interval.birkhoff_holds:
            self.all_birkhoff_hold = False

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "reference_l_scale": self.reference_l_scale,
            "all_birkhoff_hold": self.all_birkhoff_hold,
            "intervals": [interval.to_dict() for interval in self.intervals],
            "terminal": None if self.terminal is None else self.terminal.to_dict(),
        }


def _audit_interval(
    spec: PotentialSpec,
    env: "Environment",
    fields: Sequence[Field],
    start: int,
    end: int,
    r: int,
) -> Tuple[IntervalAudit, List[Field]]:
    window = fields[0].window
    audit = IntervalAudit(start=start, end=end)
    audit.set_kernel(
        contraction_coefficient(build_kernel(spec, env, start, end, r, window))
    )

    full = [apply_transfer_range(spec, env, f, start, end) for f in fields]
    split = [truncated_transfer(spec, env, f, start, end, r) for f in fields]
    truncated = [inner for inner, _ in split]
    audit.set_diameters(
        projective_diameter(fields, r),
        projective_diameter(full, r),
        projective_diameter(truncated, r),
    )

    slacks = [
        audit.birkhoff_bound * hilbert_metric(fields[i], fields[j], r)
        - hilbert_metric(truncated[i], truncated[j], r)
        for i, j in itertools.combinations(range(len(fields)), 2)
    ]
    audit.min_birkhoff_slack = min(slacks) if slacks else 0.0
    audit.birkhoff_holds = audit.min_birkhoff_slack >= -BIRKHOFF_SLACK_TOLERANCE
    if not audit.birkhoff_holds:
        logger.error(
            "Birkhoff bound violated on [%d, %d] by %g",
            start,
            end,
            -audit.min_birkhoff_slack,
        )

    inside = window.ball_mask(r)
    influx = -math.inf
    for inner, outer in split:
        with np.errstate(divide="ignore"):
            log_ratio = outer.log_values()[inside] - inner.log_values()[inside]
        influx = max(influx, float(log_ratio.max()))
    audit.influx_ratio = math.exp(influx)
    audit.k2_measured = max(
        math.exp(float(np.ptp(_ball_logs(image, r)))) for image in full
    )
    return audit, [image.normalized() for image in full]


def terminal_segment_audit(
    spec: PotentialSpec,
    env: "Environment",
    fields: Sequence[Field],
    start: int,
    end: int,
    r: int,
) -> TerminalAudit:
    """Diameter growth of ``fields`` under T^{start,end}, against exp(-lambda2 r)."""
    images = [apply_transfer_range(spec, env, f, start, end) for f in fields]
    audit = TerminalAudit(start=start, end=end)
    audit.diameter_before = projective_diameter(fields, r)
    audit.diameter_after = projective_diameter(images, r)
    audit.growth = audit.diameter_after - audit.diameter_before
    audit.reference_decay = math.exp(-check_conditions(spec).lambda2 * r)
    return audit


def contraction_audit(
    spec: PotentialSpec,
    env: "Environment",
    times: "RegenerationReport",
    r: int,
    trial_fields: Sequence[Field],
    terminal_time: int = 0,
) -> ContractionAudit:
    """
    Measure Hilbert-metric contraction of ``trial_fields`` across consecutive
    regeneration intervals, starting from the earliest time.

    The fields are taken at the earliest regeneration time and carried forward
    interval by interval, then over the terminal segment up to ``terminal_time``.
    """
    intervals = times.intervals
    if len(intervals) < 2:
        raise ParameterError(
            f"Audit needs at least 2 regeneration intervals, got {len(intervals)}"
        )
    if not trial_fields:
        raise DomainError("Audit needs at least one trial field")
    for f in trial_fields:
        _ball_logs(f, r)

    report = ContractionAudit(r=r)
    report.reference_l_scale = (2 * spec.d + 1) ** (-4 * r - 2) * math.exp(
        -8 * spec.m1 * r
    )

    fields = list(trial_fields)
    for start, end in intervals:
        interval, fields = _audit_interval(spec, env, fields, start, end, r)
        logger.info(
            "Interval [%d, %d]: L=%.3e bound=%.6f factor=%s",
            start,
            end,
            interval.contraction_coefficient,
            interval.birkhoff_bound,
            interval.truncated_factor,
        )
        report.add_interval(interval)

    latest = intervals[-1][1]
    if latest <= terminal_time:
        report.terminal = terminal_segment_audit(
            spec, env, fields, latest, terminal_time, r
        )
    return report


def check_g_class_entry(
    spec: PotentialSpec,
    env: "Environment",
    phi: Field,
    lam: float,
    r: int,
    c: float,
    time: int,
    depths: Sequence[int],
    k1_hat: float = 1.0,
) -> List[Tuple[int, bool, MembershipResult]]:
    """
    G(lambda, r)-membership of T^{time-n, time} phi for each depth n.

    Returns:
        (n, n > n0(lambda, r, c), membership) per depth
    """
    if not class_membership(phi, FClass(c)):
        raise DomainError(f"Starting field is not in F({c})")
    threshold = n0_threshold(lam, r, c)
    query = GClass(lam, r, k1_hat)
    results = []
    for depth in depths:
        image = apply_transfer_range(spec, env, phi, time - depth, time)
        results.append((depth, depth > threshold, class_membership(image, query)))
    return results
