"""
Random sign environment omega, its shift, the xi variables, the nu thresholds,
regeneration times and the optimal path.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import EnvironmentRangeError, ParameterError
from .hilbert import n0_threshold
from .lattice_potential import PotentialSpec, check_conditions
from .transfer import PathSegment

logger = logging.getLogger(__name__)

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB

DIRECTIONS = ("forward", "backward")


def hash64(seed: int, n: int) -> int:
    """
    Counter-based 64-bit finalizer of (seed, n).

    n enters as its two's-complement 64-bit encoding, so negative times are
    valid counters.
    """
    z = (seed + (n & MASK64) * GOLDEN_GAMMA) & MASK64
    z ^= z >> 30
    z = (z * MIX_1) & MASK64
    z ^= z >> 27
    z = (z * MIX_2) & MASK64
    z ^= z >> 31
    return z


def _hash64_array(seeds, counters: np.ndarray) -> np.ndarray:
    """Vectorised :func:`hash64`; uint64 arithmetic wraps mod 2^64."""
    with np.errstate(over="ignore"):
        z = np.asarray(seeds, dtype=np.uint64) + np.asarray(counters).astype(
            np.uint64
        ) * np.uint64(GOLDEN_GAMMA)
        z = z ^ (z >> np.uint64(30))
        z = z * np.uint64(MIX_1)
        z = z ^ (z >> np.uint64(27))
        z = z * np.uint64(MIX_2)
        z = z ^ (z >> np.uint64(31))
    return z


def uniform01(seed: int, stream, counter: int):
    """
    Deterministic uniform in [0, 1) from (seed, stream, counter).

    Each stream is an independent sub-sequence keyed by hash64(seed, stream).
    ``stream`` may be an integer array, in which case an array is returned.
    """
    streams = np.asarray(stream, dtype=np.int64)
    keys = _hash64_array(np.uint64(seed), streams)
    z = _hash64_array(keys, np.full(streams.shape, counter, dtype=np.int64))
    u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
    if u.ndim == 0:
        return float(u)
    return u


@dataclass(frozen=True, eq=False)
class Environment:
    """
    Sign sequence omega on a finite time range.

    sign(n) is read from ``table`` at absolute counter origin_offset + n. A
    shifted environment shares the table and only moves the offset.

    Attributes:
        seed: Seed of the hashed sequence; None for explicit sign tables
        origin_offset: Absolute counter of time 0
        table_lo: Absolute counter of table[0]
        table: Signs (+1/-1) as int8
    """

    seed: Optional[int]
    origin_offset: int
    table_lo: int
    table: np.ndarray = field(repr=False)

    @property
    def n_lo(self) -> int:
        return self.table_lo - self.origin_offset

    @property
    def n_hi(self) -> int:
        return self.table_lo + len(self.table) - 1 - self.origin_offset

    def covers(self, lo: int, hi: int) -> bool:
        return self.n_lo <= lo and hi <= self.n_hi

    def require(self, lo: int, hi: int) -> None:
        if not self.covers(lo, hi):
            raise EnvironmentRangeError(
                f"Times [{lo}, {hi}] are outside the environment range "
                f"[{self.n_lo}, {self.n_hi}]"
            )

    def sign(self, n: int) -> int:
        self.require(n, n)
        return int(self.table[self.origin_offset + n - self.table_lo])

    def signs(self, lo: int, hi: int) -> np.ndarray:
        """Signs at times lo..hi inclusive (empty if hi < lo)."""
        if hi < lo:
            return np.empty(0, dtype=np.int8)
        self.require(lo, hi)
        start = self.origin_offset + lo - self.table_lo
        return self.table[start : start + hi - lo + 1]

    def __str__(self) -> str:
        return (
            f"\n\t seed: {self.seed}"
            f"\n\t origin_offset: {self.origin_offset}"
            f"\n\t range: [{self.n_lo}, {self.n_hi}]"
        )


def sample_environment(seed: int, n_lo: int, n_hi: int) -> Environment:
    """Environment with sign(n) = +1 iff the low bit of hash64(seed, n) is set."""
    if not 0 <= seed <= MASK64:
        raise ParameterError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    if n_lo > n_hi:
        raise ParameterError(f"Empty time range [{n_lo}, {n_hi}]")
    counters = np.arange(n_lo, n_hi + 1, dtype=np.int64)
    bits = _hash64_array(np.uint64(seed), counters) & np.uint64(1)
    table = np.where(bits == 1, 1, -1).astype(np.int8)
    table.setflags(write=False)
    logger.debug("Sampled environment seed=%d on [%d, %d]", seed, n_lo, n_hi)
    return Environment(seed=seed, origin_offset=0, table_lo=n_lo, table=table)


def environment_from_signs(signs: Sequence[int], n_lo: int = 0) -> Environment:
    """Environment with explicitly given signs at times n_lo, n_lo+1, ..."""
    table = np.asarray(signs, dtype=np.int8).copy()
    if table.ndim != 1 or len(table) == 0:
        raise ParameterError("Sign table must be a non-empty sequence")
    if not np.all(np.abs(table) == 1):
        raise ParameterError("Signs must be +1 or -1")
    table.setflags(write=False)
    return Environment(seed=None, origin_offset=0, table_lo=n_lo, table=table)


def constant_environment(sign: int, n_lo: int, n_hi: int) -> Environment:
    """Deterministic environment with the same sign at every time."""
    if n_lo > n_hi:
        raise ParameterError(f"Empty time range [{n_lo}, {n_hi}]")
    return environment_from_signs([sign] * (n_hi - n_lo + 1), n_lo)


def shift(env: Environment, k: int) -> Environment:
    """theta^k: the returned environment has sign'(n) = sign(k + n)."""
    return Environment(
        seed=env.seed,
        origin_offset=env.origin_offset + k,
        table_lo=env.table_lo,
        table=env.table,
    )


def xi(env: Environment, spec: PotentialSpec, m: int) -> float:
    """M0 if sign(m) = +1, -M1 otherwise."""
    return spec.m0 if env.sign(m) == 1 else -spec.m1


def _xi_block(env: Environment, spec: PotentialSpec, lo: int, hi: int) -> np.ndarray:
    return np.where(env.signs(lo, hi) == 1, spec.m0, -spec.m1)


def estimate_nu(
    env: Environment,
    spec: PotentialSpec,
    lam: float,
    direction: str,
    horizon: int,
) -> Optional[int]:
    """
    Smallest nu in [1, horizon] after which the xi partial sums stay above
    k (ln(2d+1) + M1 + lambda) up to the horizon.

    Forward sums run over m in [1, k], backward sums over m in [-k+1, 0].

    Returns:
        nu, or None when no such nu exists within the horizon
    """
    lambda0 = check_conditions(spec).lambda0
    if not 0 < lam < lambda0:
        raise ParameterError(f"lambda must lie in (0, lambda0={lambda0}), got {lam}")
    if horizon < 1:
        raise ParameterError(f"Horizon must be >= 1, got {horizon}")
    if direction not in DIRECTIONS:
        raise ParameterError(f"Direction must be one of {DIRECTIONS}, got {direction}")

    if direction == "forward":
        increments = _xi_block(env, spec, 1, horizon)
    else:
        increments = _xi_block(env, spec, -horizon + 1, 0)[::-1]

    k = np.arange(1, horizon + 1)
    holds = np.cumsum(increments) > k * (spec.log_moves + spec.m1 + lam)

    failing = np.flatnonzero(~holds)
    if len(failing) == 0:
        return 1
    last_failure = int(failing[-1]) + 1
    if last_failure == horizon:
        return None
    return last_failure + 1


@dataclass
class RegenerationReport:
    """
    Regeneration times n_1 > n_2 > ... of an environment.

    Attributes:
        r: Window radius the sign runs are checked on
        times: Regeneration times, decreasing into the past
        nu_plus_at: Forward nu at theta^(n_i + r) for each time
        nu_minus_at: Backward nu at theta^(n_i - r) for each time
        horizon: Search horizon for candidate times
        nu_horizon: Horizon on which nu was certified
        spacing_bound: Required gap 2 n0(lambda, r, 2 K1_hat)
        k1_hat: Stand-in for the constant K1
        requested: Number of times asked for
        complete: Whether all requested times were found
    """

    r: Optional[int] = None
    times: List[int] = field(default_factory=list)
    nu_plus_at: List[int] = field(default_factory=list)
    nu_minus_at: List[int] = field(default_factory=list)
    horizon: Optional[int] = None
    nu_horizon: Optional[int] = None
    spacing_bound: Optional[float] = None
    k1_hat: Optional[float] = None
    requested: Optional[int] = None
    complete: bool = False

    def __str__(self) -> str:
        return (
            f"\n\t r: {self.r}"
            f"\n\t times: {self.times}"
            f"\n\t nu_plus_at: {self.nu_plus_at}"
            f"\n\t nu_minus_at: {self.nu_minus_at}"
            f"\n\t horizon: {self.horizon}"
            f"\n\t nu_horizon: {self.nu_horizon}"
            f"\n\t spacing_bound: {self.spacing_bound}"
            f"\n\t k1_hat: {self.k1_hat}"
            f"\n\t complete: {self.complete}"
        )

    def add_time(self, n: int, nu_plus: int, nu_minus: int) -> None:
        """
        Append a regeneration time.

        Args:
            n: The time, earlier than every time already recorded
            nu_plus: Forward nu certified at theta^(n + r)
            nu_minus: Backward nu certified at theta^(n - r)
        """
        if self.times and n >= self.times[-1]:
            raise ValueError(f"Time {n} is not earlier than {self.times[-1]}")
        self.times.append(n)
        self.nu_plus_at.append(nu_plus)
        self.nu_minus_at.append(nu_minus)
        if self.requested is not None:
            self.complete = len(self.times) >= self.requested

    @property
    def intervals(self) -> List[tuple]:
        """Consecutive (n_i, n_{i-1}) pairs in chronological order."""
        ordered = sorted(self.times)
        return list(zip(ordered[:-1], ordered[1:]))

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "times": list(self.times),
            "nu_plus_at": list(self.nu_plus_at),
            "nu_minus_at": list(self.nu_minus_at),
            "horizon": self.horizon,
            "nu_horizon": self.nu_horizon,
            "spacing_bound": self.spacing_bound,
            "k1_hat": self.k1_hat,
            "requested": self.requested,
            "complete": self.complete,
        }


def find_regeneration_times(
    env: Environment,
    spec: PotentialSpec,
    lam: float,
    r: int,
    count: int,
    horizon: int,
    k1_hat: float = 1.0,
    nu_horizon: Optional[int] = None,
) -> RegenerationReport:
    """
    Scan n = 0, -1, ..., -horizon for times with +1 runs on (n-r, n+r],
    nu = 1 on both sides and the configured spacing from the previous time.

    An exhausted horizon yields a report with ``complete`` False.
    """
    if r < 1:
        raise ParameterError(f"r must be >= 1, got {r}")
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    nu_horizon = horizon if nu_horizon is None else nu_horizon
    env.require(-horizon - r - nu_horizon + 1, r + nu_horizon)

    report = RegenerationReport(
        r=r,
        horizon=horizon,
        nu_horizon=nu_horizon,
        spacing_bound=2 * n0_threshold(lam, r, 2 * k1_hat),
        k1_hat=k1_hat,
        requested=count,
    )

    for n in range(0, -horizon - 1, -1):
        if report.times and report.times[-1] - n <= report.spacing_bound:
            continue
        if not np.all(env.signs(n - r + 1, n + r) == 1):
            continue
        nu_plus = estimate_nu(shift(env, n + r), spec, lam, "forward", nu_horizon)
        if nu_plus != 1:
            continue
        nu_minus = estimate_nu(shift(env, n - r), spec, lam, "backward", nu_horizon)
        if nu_minus != 1:
            continue
        report.add_time(n, nu_plus, nu_minus)
        if report.complete:
            break

    if not report.complete:
        logger.warning(
            "Found %d of %d regeneration times within horizon %d",
            len(report.times),
            count,
            horizon,
        )
    return report


def optimal_path(env: Environment, n1: int, n2: int, d: int = 1) -> PathSegment:
    """
    The path sitting at 0 on + times and at e1 on - times over (n1, n2].

    The free starting point is pinned to the position at n1 + 1.
    """
    if n1 >= n2:
        raise ParameterError(f"Need n1 < n2, got [{n1}, {n2}]")
    signs = env.signs(n1 + 1, n2)
    positions = np.zeros((n2 - n1 + 1, d), dtype=np.int64)
    positions[1:, 0] = np.where(signs == 1, 0, 1)
    positions[0] = positions[1]
    return PathSegment(n1=n1, n2=n2, positions=positions)
