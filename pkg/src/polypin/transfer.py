"""
Feynman-Kac transfer operator on a truncated window, partition functions and
the brute-force path enumeration they are checked against.

Paths are lazy-walk trajectories confined to the window (hard truncation).
Fields carry a separate log scale; mantissas are rebalanced by exact powers
of two whenever their maximum leaves [2^-512, 2^512].
"""

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BudgetExceededError, DomainError, ParameterError
from .lattice_potential import Point, PotentialSpec, Window

if TYPE_CHECKING:
    from .environment import Environment

logger = logging.getLogger(__name__)

REBALANCE_HIGH = 2.0**512
REBALANCE_LOW = 2.0**-512
LOG2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class Field:
    """
    Nonnegative function on a window, stored as values * exp(log_scale).

    Attributes:
        window: Window the field lives on
        values: Mantissas, one per window point in window order
        log_scale: Additive log exponent shared by all values
    """

    window: Window
    values: np.ndarray = field(repr=False)
    log_scale: float = 0.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.window.size,):
            raise DomainError(
                f"Field has shape {values.shape}, window needs ({self.window.size},)"
            )
        if not np.all(np.isfinite(values) & (values >= 0)):
            raise DomainError("Field values must be nonnegative and finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "log_scale", float(self.log_scale))

    @classmethod
    def delta(cls, window: Window, x: Sequence[int]) -> "Field":
        values = np.zeros(window.size)
        values[window.index_of(x)] = 1.0
        return cls(window, values)

    @classmethod
    def constant(cls, window: Window, value: float = 1.0) -> "Field":
        return cls(window, np.full(window.size, float(value)))

    @classmethod
    def from_values(
        cls, window: Window, values: Sequence[float], log_scale: float = 0.0
    ) -> "Field":
        return cls(window, np.asarray(values, dtype=np.float64), log_scale)

    def sup(self) -> float:
        """Largest mantissa; the sup norm is sup() * exp(log_scale)."""
        return float(self.values.max())

    def is_zero(self) -> bool:
        return not np.any(self.values > 0)

    def log_sup(self) -> float:
        """ln of the sup norm, -inf for the zero field."""
        top = self.sup()
        if top == 0:
            return -math.inf
        return math.log(top) + self.log_scale

    def log_values(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.values) + self.log_scale

    def to_array(self) -> np.ndarray:
        """Plain values; may overflow for fields that are far from normalised."""
        return self.values * math.exp(self.log_scale)

    def value_at(self, x: Sequence[int]) -> float:
        return float(self.values[self.window.index_of(x)] * math.exp(self.log_scale))

    def normalized(self) -> "Field":
        """Field divided by its sup norm, log scale reset to 0."""
        if self.is_zero():
            raise DomainError("Cannot normalise an identically zero field")
        return Field(self.window, self.values / self.sup(), 0.0)

    def scaled(self, factor: float) -> "Field":
        """factor * self; only the log scale changes."""
        if factor <= 0:
            raise DomainError(f"Scale factor must be positive, got {factor}")
        return Field(self.window, self.values, self.log_scale + math.log(factor))

    def masked(self, mask: np.ndarray) -> "Field":
        return Field(self.window, np.where(mask, self.values, 0.0), self.log_scale)

    def restrict_to(self, window: Window) -> "Field":
        """Restriction to a smaller, concentric window."""
        if window.d != self.window.d or window.radius > self.window.radius:
            raise DomainError(f"{window} does not fit inside {self.window}")
        indices = [self.window.index_of(x) for x in window.points]
        return Field(window, self.values[indices], self.log_scale)

    def embed_into(self, window: Window) -> "Field":
        """Zero extension to a larger, concentric window."""
        if window.d != self.window.d or window.radius < self.window.radius:
            raise DomainError(f"{self.window} does not fit inside {window}")
        values = np.zeros(window.size)
        indices = [window.index_of(x) for x in self.window.points]
        values[indices] = self.values
        return Field(window, values, self.log_scale)

    def sup_distance(self, other: "Field") -> float:
        """Sup-norm distance between the plain values of two fields."""
        if other.window != self.window:
            raise DomainError("Fields live on different windows")
        return float(np.max(np.abs(self.to_array() - other.to_array())))

    def __str__(self) -> str:
        return (
            f"\n\t window: {self.window}"
            f"\n\t sup: {self.sup()}"
            f"\n\t log_scale: {self.log_scale}"
        )


@dataclass(frozen=True, eq=False)
class PathSegment:
    """
    Lattice trajectory on the time interval [n1, n2].

    Attributes:
        n1: First time
        n2: Last time
        positions: (n2 - n1 + 1, d) integer array, row k is the position at n1 + k
    """

    n1: int
    n2: int
    positions: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        positions = np.array(self.positions, dtype=np.int64)
        if positions.ndim == 1:
            positions = positions.reshape(-1, 1)
        if self.n1 > self.n2 or positions.shape[0] != self.n2 - self.n1 + 1:
            raise ValueError(
                f"Path on [{self.n1}, {self.n2}] needs {self.n2 - self.n1 + 1} "
                f"positions, got {positions.shape[0]}"
            )
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def position(self, n: int) -> Point:
        return tuple(int(c) for c in self.positions[n - self.n1])

    def is_admissible(self) -> bool:
        """Every step is one of the 2d+1 lazy-walk moves."""
        steps = np.abs(np.diff(self.positions, axis=0)).sum(axis=1)
        return bool(np.all(steps <= 1))

    def key(self) -> Tuple[Point, ...]:
        return tuple(tuple(int(c) for c in row) for row in self.positions)

    def __str__(self) -> str:
        return f"PathSegment[{self.n1}, {self.n2}]: {list(self.key())}"


def path_energy(seg: PathSegment, spec: PotentialSpec, env: "Environment") -> float:
    """Phi_{n1,n2}(gamma) = sum over n in (n1, n2] of V(gamma(n)) sign(n)."""
    if not seg.is_admissible():
        raise ValueError(f"Path is not admissible: {seg}")
    signs = env.signs(seg.n1 + 1, seg.n2)
    energy = 0.0
    for k, sign in enumerate(signs, start=1):
        energy += spec.potential(seg.positions[k]) * int(sign)
    return energy


def _rebalance(values: np.ndarray, log_scale: np.ndarray) -> None:
    """In-place: rescale rows whose max left the band by an exact power of two."""
    top = values.max(axis=1)
    drifted = (top > 0) & ((top > REBALANCE_HIGH) | (top < REBALANCE_LOW))
    if not np.any(drifted):
        return
    _, exponent = np.frexp(top[drifted])
    values[drifted] = np.ldexp(values[drifted], -exponent[:, None])
    log_scale[drifted] += exponent * LOG2


def _evolve(
    spec: PotentialSpec,
    env: "Environment",
    window: Window,
    values: np.ndarray,
    log_scale: np.ndarray,
    n1: int,
    n2: int,
    adjoint: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Propagate a stack of fields, shape (B, N), from n1 to n2.

    The forward step at time n multiplies by exp(phi_{n+1}(x)) after summing
    the in-window neighbours; the adjoint step weights the neighbours instead
    and runs from n2 back to n1.
    """
    if n1 > n2:
        raise ParameterError(f"Need n1 <= n2, got [{n1}, {n2}]")
    values = np.array(values, dtype=np.float64)
    log_scale = np.array(log_scale, dtype=np.float64)
    if n1 == n2:
        return values, log_scale

    potential = spec.potential_vector(window)
    moves = 2 * spec.d + 1
    weights = {1: np.exp(potential) / moves, -1: np.exp(-potential) / moves}
    table = window.neighbor_table
    pad = np.zeros((values.shape[0], 1))

    signs = env.signs(n1 + 1, n2)
    if adjoint:
        signs = signs[::-1]
    for sign in signs:
        weight = weights[int(sign)]
        if adjoint:
            padded = np.concatenate([values * weight, pad], axis=1)
            values = padded[:, table].sum(axis=2)
        else:
            padded = np.concatenate([values, pad], axis=1)
            values = weight * padded[:, table].sum(axis=2)
        _rebalance(values, log_scale)
    return values, log_scale


def _evolve_field(
    spec: PotentialSpec,
    env: "Environment",
    f: Field,
    n1: int,
    n2: int,
    adjoint: bool = False,
) -> Field:
    values, log_scale = _evolve(
        spec, env, f.window, f.values[None, :], np.array([f.log_scale]), n1, n2, adjoint
    )
    return Field(f.window, values[0], log_scale[0])


def apply_transfer(
    spec: PotentialSpec, env: "Environment", f: Field, n: int
) -> Field:
    """One step T^{n,n+1} f."""
    return _evolve_field(spec, env, f, n, n + 1)


def apply_transfer_range(
    spec: PotentialSpec, env: "Environment", f: Field, n1: int, n2: int
) -> Field:
    """T^{n1,n2} f as a composition of single steps (identity when n1 = n2)."""
    return _evolve_field(spec, env, f, n1, n2)


def apply_adjoint_range(
    spec: PotentialSpec, env: "Environment", h: Field, n1: int, n2: int
) -> Field:
    """
    Adjoint of T^{n1,n2} applied to h.

    (2d+1)^{n2-n1} times the result at x equals Z_{n1,n2}(x, x2) for h = delta_{x2}.
    """
    return _evolve_field(spec, env, h, n1, n2, adjoint=True)


def apply_normalized(
    spec: PotentialSpec, env: "Environment", f: Field, n1: int, n2: int
) -> Tuple[Field, float]:
    """
    Normalised cocycle step.

    Returns:
        (T^{n1,n2} f / ||T^{n1,n2} f||, ln ||T^{n1,n2} f||)
    """
    if f.is_zero():
        raise DomainError("Cannot apply the normalised cocycle to a zero field")
    image = apply_transfer_range(spec, env, f, n1, n2)
    log_norm = image.log_sup()
    if log_norm == -math.inf:
        raise DomainError("Image vanished on the window")
    return image.normalized(), log_norm


def kappa_log_series(
    spec: PotentialSpec, env: "Environment", v: Field, n1: int, n2: int
) -> Tuple[np.ndarray, Field]:
    """
    Per-step ln ||T u_k|| along the normalised iterates u_k of v on [n1, n2].

    Returns:
        (increments, normalised field at n2)
    """
    if v.is_zero():
        raise DomainError("Cannot iterate a zero field")
    window = v.window
    potential = spec.potential_vector(window)
    moves = 2 * spec.d + 1
    weights = {1: np.exp(potential) / moves, -1: np.exp(-potential) / moves}
    table = window.neighbor_table

    values = v.values / v.sup()
    signs = env.signs(n1 + 1, n2)
    increments = np.empty(len(signs))
    for k, sign in enumerate(signs):
        values = weights[int(sign)] * np.append(values, 0.0)[table].sum(axis=1)
        top = values.max()
        increments[k] = math.log(top)
        values = values / top
    return increments, Field(window, values)


def log_partition_function(
    spec: PotentialSpec,
    env: "Environment",
    x1: Sequence[int],
    x2: Sequence[int],
    n1: int,
    n2: int,
    window: Window,
) -> float:
    """ln Z_{n1,n2}(x1, x2) = ln[(2d+1)^{n2-n1} T^{n1,n2} delta_{x1}(x2)]."""
    image = apply_transfer_range(spec, env, Field.delta(window, x1), n1, n2)
    mantissa = image.values[window.index_of(x2)]
    if mantissa == 0:
        return -math.inf
    return math.log(mantissa) + image.log_scale + (n2 - n1) * spec.log_moves


def partition_function(
    spec: PotentialSpec,
    env: "Environment",
    x1: Sequence[int],
    x2: Sequence[int],
    n1: int,
    n2: int,
    window: Window,
) -> float:
    """Z_{n1,n2}(x1, x2); overflows for long intervals, prefer the log form."""
    return math.exp(log_partition_function(spec, env, x1, x2, n1, n2, window))


def log_partition_matrix(
    spec: PotentialSpec,
    env: "Environment",
    n1: int,
    n2: int,
    window: Window,
    sources: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    ln Z_{n1,n2}(x, y) for x in ``sources`` (window indices, default all) and
    every window point y. Rows are sources, columns targets.
    """
    if sources is None:
        sources = np.arange(window.size)
    stack = np.zeros((len(sources), window.size))
    stack[np.arange(len(sources)), sources] = 1.0
    values, log_scale = _evolve(
        spec, env, window, stack, np.zeros(len(sources)), n1, n2
    )
    with np.errstate(divide="ignore"):
        logs = np.log(values)
    return logs + log_scale[:, None] + (n2 - n1) * spec.log_moves


@dataclass
class OracleResult:
    """
    Exhaustive sum over admissible in-window paths with fixed endpoints.

    Attributes:
        value: Z as a plain float (exact up to the final rounding of fsum)
        count: Number of contributing paths
        paths: Enumerated paths when requested
        energies: Energy of each enumerated path when requested
    """

    value: float = 0.0
    count: int = 0
    paths: List[PathSegment] = field(default_factory=list)
    energies: List[float] = field(default_factory=list)

    @property
    def log_value(self) -> float:
        return math.log(self.value) if self.value > 0 else -math.inf

    def __str__(self) -> str:
        return f"\n\t value: {self.value}\n\t count: {self.count}"


def enumerate_paths_oracle(
    spec: PotentialSpec,
    env: "Environment",
    x1: Sequence[int],
    x2: Sequence[int],
    n1: int,
    n2: int,
    window: Window,
    collect_paths: bool = False,
    max_steps: int = 12,
    max_paths: int = 3**12,
) -> OracleResult:
    """
    Brute-force Z_{n1,n2}(x1, x2) by enumerating every admissible path that
    stays in the window.
    """
    length = n2 - n1
    if length < 0:
        raise ParameterError(f"Need n1 <= n2, got [{n1}, {n2}]")
    if length > max_steps or (2 * spec.d + 1) ** length > max_paths:
        raise BudgetExceededError(
            f"Enumerating {(2 * spec.d + 1)}^{length} paths exceeds the budget "
            f"(max_steps={max_steps}, max_paths={max_paths})"
        )

    potential = spec.potential_vector(window)
    signs = env.signs(n1 + 1, n2)
    table = window.neighbor_table
    start = window.index_of(x1)
    target = window.index_of(x2)
    distance = np.abs(window.points - np.asarray(x2)).sum(axis=1)

    weights: List[float] = []
    result = OracleResult()
    trail = [start]

    def visit(index: int, step: int, energy: float) -> None:
        remaining = length - step
        if distance[index] > remaining:
            return
        if remaining == 0:
            weights.append(math.exp(energy))
            result.count += 1
            if collect_paths:
                positions = window.points[trail]
                result.paths.append(PathSegment(n1, n2, positions))
                result.energies.append(energy)
            return
        sign = int(signs[step])
        for neighbor in table[index]:
            if neighbor < 0:
                continue
            trail.append(int(neighbor))
            visit(int(neighbor), step + 1, energy + potential[neighbor] * sign)
            trail.pop()

    if window.contains(x1) and window.contains(x2):
        visit(start, 0, 0.0)
    logger.debug("Enumerated %d paths from %s to %s", result.count, x1, x2)
    result.value = math.fsum(weights)
    return result


def truncated_transfer(
    spec: PotentialSpec, env: "Environment", f: Field, n1: int, n2: int, r: int
) -> Tuple[Field, Field]:
    """
    Split T^{n1,n2} f by where the path starts.

    Returns:
        (T^{n1,n2}(f 1_{B_r}), T^{n1,n2}(f 1_{B_r^c}))
    """
    if not 0 <= r <= f.window.radius:
        raise ParameterError(f"r={r} must lie in [0, {f.window.radius}]")
    inside = f.window.ball_mask(r)
    stack = np.stack([np.where(inside, f.values, 0.0), np.where(inside, 0.0, f.values)])
    values, log_scale = _evolve(
        spec, env, f.window, stack, np.full(2, f.log_scale), n1, n2
    )
    return (
        Field(f.window, values[0], log_scale[0]),
        Field(f.window, values[1], log_scale[1]),
    )
