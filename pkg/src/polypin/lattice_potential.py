import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import PotentialSpecError

if TYPE_CHECKING:
    from .environment import Environment

Point = Tuple[int, ...]


def _as_point(x: Sequence[int], d: int) -> Point:
    point = tuple(int(c) for c in x)
    if len(point) != d:
        raise ValueError(f"Point {point} does not have dimension {d}")
    return point


@dataclass(frozen=True)
class PotentialSpec:
    """
    Spatial potential V = V0 + Lambda * delta_0 on Z^d.

    Attributes:
        d: Spatial dimension
        v0_table: Base potential on finitely many points, 0 elsewhere
        lambda_pin: Pinning strength Lambda at the origin
        m1_bound: Declared bound M1 on |V0|
        require_pinning: Enforce M0 > 0; only the free-walk control turns it off
    """

    d: int = 1
    v0_table: Dict[Point, float] = field(default_factory=dict)
    lambda_pin: float = 0.0
    m1_bound: float = 0.0
    require_pinning: bool = True

    def __post_init__(self) -> None:
        if self.d < 1:
            raise PotentialSpecError(f"Dimension must be >= 1, got {self.d}")
        if self.lambda_pin < 0:
            raise PotentialSpecError(
                f"Pinning strength must be >= 0, got {self.lambda_pin}"
            )
        if self.m1_bound < 0:
            raise PotentialSpecError(f"M1 bound must be >= 0, got {self.m1_bound}")

        table = {
            _as_point(x, self.d): float(value) for x, value in self.v0_table.items()
        }
        for x, value in table.items():
            if abs(value) > self.m1_bound:
                raise PotentialSpecError(
                    f"|V0{x}| = {abs(value)} exceeds the declared M1 = {self.m1_bound}"
                )
        object.__setattr__(self, "v0_table", table)

        if self.require_pinning and self.m0 <= 0:
            raise PotentialSpecError(
                f"V(0) = V0(0) + Lambda must be positive, got {self.m0}"
            )

    @classmethod
    def free(cls, d: int = 1) -> "PotentialSpec":
        """V identically zero: the plain lazy walk."""
        return cls(d=d, require_pinning=False)

    @property
    def origin(self) -> Point:
        return (0,) * self.d

    @property
    def m0(self) -> float:
        """M0 = V(0)."""
        return self.v0(self.origin) + self.lambda_pin

    @property
    def m1(self) -> float:
        return self.m1_bound

    @property
    def log_moves(self) -> float:
        """ln(2d+1), the entropy of one lazy-walk step."""
        return math.log(2 * self.d + 1)

    def v0(self, x: Sequence[int]) -> float:
        return self.v0_table.get(_as_point(x, self.d), 0.0)

    def potential(self, x: Sequence[int]) -> float:
        """V(x) = V0(x) + Lambda * [x = 0]."""
        point = _as_point(x, self.d)
        value = self.v0_table.get(point, 0.0)
        if point == self.origin:
            value += self.lambda_pin
        return value

    def potential_vector(self, window: "Window") -> np.ndarray:
        """V evaluated at every window point, in window order."""
        if window.d != self.d:
            raise ValueError(
                f"Window dimension {window.d} does not match dimension {self.d}"
            )
        values = np.zeros(window.size)
        for x, value in self.v0_table.items():
            if window.contains(x):
                values[window.index_of(x)] = value
        values[window.origin_index] += self.lambda_pin
        return values

    def __str__(self) -> str:
        return (
            f"\n\t d: {self.d}"
            f"\n\t v0_table: {self.v0_table}"
            f"\n\t lambda_pin: {self.lambda_pin}"
            f"\n\t m1_bound: {self.m1_bound}"
            f"\n\t m0: {self.m0}"
        )


@dataclass(frozen=True)
class Window:
    """
    Sup-norm box [-R, R]^d, enumerated lexicographically.

    Attributes:
        radius: Box radius R
        d: Spatial dimension
    """

    radius: int
    d: int = 1

    def __post_init__(self) -> None:
        if self.radius < 1:
            raise ValueError(f"Window radius must be >= 1, got {self.radius}")
        if self.d < 1:
            raise ValueError(f"Window dimension must be >= 1, got {self.d}")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def size(self) -> int:
        return self.side**self.d

    @cached_property
    def points(self) -> np.ndarray:
        """All points as an (N, d) integer array."""
        axis = range(-self.radius, self.radius + 1)
        return np.array(list(itertools.product(axis, repeat=self.d)), dtype=np.int64)

    @cached_property
    def norms(self) -> np.ndarray:
        """Sup-norm |x| of every point."""
        return np.abs(self.points).max(axis=1)

    @property
    def origin_index(self) -> int:
        return self.index_of((0,) * self.d)

    def contains(self, x: Sequence[int]) -> bool:
        return len(x) == self.d and all(abs(int(c)) <= self.radius for c in x)

    def index_of(self, x: Sequence[int]) -> int:
        if not self.contains(x):
            raise IndexError(
                f"Point {tuple(x)} is outside the window of radius {self.radius}"
            )
        index = 0
        for c in x:
            index = index * self.side + (int(c) + self.radius)
        return index

    def point(self, index: int) -> Point:
        return tuple(int(c) for c in self.points[index])

    def ball_mask(self, r: int) -> np.ndarray:
        """Boolean mask of B_r = {|x| <= r}."""
        return self.norms <= r

    @cached_property
    def moves(self) -> np.ndarray:
        """The 2d+1 lazy-walk moves: stay, then -e_i, +e_i for each axis."""
        moves = [np.zeros(self.d, dtype=np.int64)]
        for axis in range(self.d):
            for step in (-1, 1):
                move = np.zeros(self.d, dtype=np.int64)
                move[axis] = step
                moves.append(move)
        return np.array(moves)

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """
        (N, 2d+1) table of neighbour indices; -1 marks a move leaving the window.

        Index -1 addresses the trailing zero of an array padded by one entry,
        which is how the transfer sweep implements hard truncation.
        """
        table = np.full((self.size, len(self.moves)), -1, dtype=np.int64)
        strides = self.side ** np.arange(self.d - 1, -1, -1)
        for k, move in enumerate(self.moves):
            target = self.points + move
            inside = np.all(np.abs(target) <= self.radius, axis=1)
            table[inside, k] = (target[inside] + self.radius) @ strides
        return table

    def __str__(self) -> str:
        return f"Window(radius={self.radius}, d={self.d}, size={self.size})"


@dataclass
class ConditionReport:
    """
    Derived exponents of a potential and the standing conditions on them.

    Attributes:
        d: Spatial dimension
        m0: V(0)
        m1: Bound on |V0|
        lambda0: (M0 - 3 M1)/2 - ln(2d+1)
        lambda1: 2 M1 + ln(2d+1)
        lambda2: 2 (M0 - M1 - ln(2d+1))
        cond3_ok: lambda0 > 0
        cond4_ok: lambda1 < lambda0
    """

    d: Optional[int] = None
    m0: Optional[float] = None
    m1: Optional[float] = None
    lambda0: Optional[float] = None
    lambda1: Optional[float] = None
    lambda2: Optional[float] = None

    # Computed properties
    cond3_ok: Optional[bool] = None
    cond4_ok: Optional[bool] = None

    def __str__(self) -> str:
        return (
            f"\n\t d: {self.d}"
            f"\n\t m0: {self.m0}"
            f"\n\t m1: {self.m1}"
            f"\n\t lambda0: {self.lambda0}"
            f"\n\t lambda1: {self.lambda1}"
            f"\n\t lambda2: {self.lambda2}"
            f"\n\t cond3_ok: {self.cond3_ok}"
            f"\n\t cond4_ok: {self.cond4_ok}"
        )

    @property
    def ok(self) -> bool:
        return bool(self.cond3_ok and self.cond4_ok)

    def set_bounds(self, d: int, m0: float, m1: float) -> None:
        """
        Set the potential bounds and compute the exponents and conditions.

        Args:
            d: Spatial dimension
            m0: V(0)
            m1: Bound on |V0|
        """
        self.d = d
        self.m0 = m0
        self.m1 = m1

        log_moves = math.log(2 * d + 1)
        self.lambda0 = 0.5 * (m0 - 3 * m1) - log_moves
        self.lambda1 = 2 * m1 + log_moves
        self.lambda2 = 2 * (m0 - m1 - log_moves)

        self.cond3_ok = self.lambda0 > 0
        self.cond4_ok = self.lambda1 < self.lambda0

    def epsilon(self, lam: float) -> float:
        """Margin (M0 - M1)/2 - M1 - ln(2d+1) - lambda; equals lambda0 - lambda."""
        return (self.m0 - self.m1) / 2 - self.m1 - math.log(2 * self.d + 1) - lam

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "m0": self.m0,
            "m1": self.m1,
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "cond3_ok": self.cond3_ok,
            "cond4_ok": self.cond4_ok,
        }


def check_conditions(spec: PotentialSpec) -> ConditionReport:
    """Evaluate the derived exponents and standing conditions of ``spec``."""
    report = ConditionReport()
    report.set_bounds(spec.d, spec.m0, spec.m1)
    return report


def evaluate_potential(
    spec: PotentialSpec, env: "Environment", x: Sequence[int], n: int
) -> float:
    """phi_n(x) = V(x) * sign(n)."""
    return spec.potential(x) * env.sign(n)
