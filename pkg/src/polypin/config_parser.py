import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .errors import ConfigError, PotentialSpecError
from .lattice_potential import ConditionReport, PotentialSpec, Window, check_conditions

logger = logging.getLogger(__name__)

SEED_MAX = 2**64 - 1

REQUIRED_KEYS = ("dimension", "window_radius", "lambda_pin", "m1_bound", "seed")


@dataclass
class ExperimentConfig:
    """
    One experiment, as read from a JSON document.

    Attributes:
        dimension: Spatial dimension d
        window_radius: Window radius R
        lambda_pin: Pinning strength Lambda
        m1_bound: Declared bound M1 on |V0|
        seed: Environment seed, unsigned 64-bit
        v0_entries: (point, value) pairs of the base potential
        lam: Localisation target; 0.9 lambda0 when absent (JSON key "lambda")
        tol_sup: Pullback Cauchy tolerance
        max_depth: Pullback depth cap
        all_plus: Replace the sampled environment by the all-plus control
        horizon: Steps for eigen residuals and forward attraction
        lyapunov_horizon: Steps of the forward normalised run
        regeneration_r: Radius of the regeneration sign runs
        regeneration_lambda: lambda for nu certification; 0.25 lambda0 when absent
        regeneration_search_horizon: Candidate times scanned into the past
        k1_hat: Stand-in for K1 in the regeneration spacing
        n2_hat: Half-width of the all-plus block the coupling probe needs
        coupling_radius: Boundary ball radius of the coupling probe
        sha256: SHA-256 of the canonical JSON document
    """

    dimension: Optional[int] = None
    window_radius: Optional[int] = None
    lambda_pin: Optional[float] = None
    m1_bound: Optional[float] = None
    seed: Optional[int] = None
    v0_entries: List[Tuple[Tuple[int, ...], float]] = field(default_factory=list)
    lam: Optional[float] = None
    tol_sup: float = 1e-10
    max_depth: int = 4096
    all_plus: bool = False
    horizon: int = 50
    lyapunov_horizon: int = 10000
    regeneration_r: int = 4
    regeneration_lambda: Optional[float] = None
    regeneration_search_horizon: int = 5000
    k1_hat: float = 1.0
    n2_hat: int = 1
    coupling_radius: int = 2

    # Computed properties
    sha256: Optional[str] = None

    def __str__(self) -> str:
        return (
            f"\n\t dimension: {self.dimension}"
            f"\n\t window_radius: {self.window_radius}"
            f"\n\t lambda_pin: {self.lambda_pin}"
            f"\n\t m1_bound: {self.m1_bound}"
            f"\n\t seed: {self.seed}"
            f"\n\t v0_entries: {self.v0_entries}"
            f"\n\t all_plus: {self.all_plus}"
            f"\n\t sha256: {self.sha256}"
        )

    def potential_spec(self) -> PotentialSpec:
        try:
            return PotentialSpec(
                d=self.dimension,
                v0_table=dict(self.v0_entries),
                lambda_pin=self.lambda_pin,
                m1_bound=self.m1_bound,
            )
        except (PotentialSpecError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def window(self) -> Window:
        return Window(self.window_radius, self.dimension)

    def conditions(self) -> ConditionReport:
        return check_conditions(self.potential_spec())

    def lambda_target(self) -> float:
        if self.lam is not None:
            return self.lam
        return 0.9 * self.conditions().lambda0

    def regeneration_lam(self) -> float:
        if self.regeneration_lambda is not None:
            return self.regeneration_lambda
        return 0.25 * self.conditions().lambda0


# JSON key -> (attribute, kind)
_SCHEMA = {
    "dimension": ("dimension", "int"),
    "window_radius": ("window_radius", "int"),
    "lambda_pin": ("lambda_pin", "real"),
    "m1_bound": ("m1_bound", "real"),
    "seed": ("seed", "int"),
    "v0_entries": ("v0_entries", "entries"),
    "lambda": ("lam", "real"),
    "tol_sup": ("tol_sup", "real"),
    "max_depth": ("max_depth", "int"),
    "all_plus": ("all_plus", "bool"),
    "horizon": ("horizon", "int"),
    "lyapunov_horizon": ("lyapunov_horizon", "int"),
    "regeneration_r": ("regeneration_r", "int"),
    "regeneration_lambda": ("regeneration_lambda", "real"),
    "regeneration_search_horizon": ("regeneration_search_horizon", "int"),
    "k1_hat": ("k1_hat", "real"),
    "n2_hat": ("n2_hat", "int"),
    "coupling_radius": ("coupling_radius", "int"),
}

_POSITIVE = (
    "dimension",
    "window_radius",
    "tol_sup",
    "max_depth",
    "horizon",
    "lyapunov_horizon",
    "regeneration_r",
    "regeneration_search_horizon",
    "n2_hat",
)


def _coerce(key: str, kind: str, value):
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"Expected an integer, got {value!r}", key=key)
        return value
    if kind == "real":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"Expected a number, got {value!r}", key=key)
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"Expected true or false, got {value!r}", key=key)
        return value
    if not isinstance(value, list):
        raise ConfigError("Expected a list of [point, value] pairs", key=key)
    entries = []
    for entry in value:
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or not isinstance(entry[0], list)
            or not all(isinstance(c, int) and not isinstance(c, bool) for c in entry[0])
        ):
            raise ConfigError(f"Malformed entry {entry!r}", key=key)
        entries.append((tuple(entry[0]), float(_coerce(key, "real", entry[1]))))
    return entries


def canonical_sha256(document: dict) -> str:
    """SHA-256 of the document dumped with sorted keys and compact separators."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment document."""
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"Malformed JSON: {exc.msg}", line=exc.lineno, column=exc.colno
        ) from exc
    if not isinstance(document, dict):
        raise ConfigError("Config must be a JSON object")

    unknown = sorted(set(document) - set(_SCHEMA))
    if unknown:
        raise ConfigError("Unknown configuration key", key=unknown[0])
    for key in REQUIRED_KEYS:
        if key not in document:
            raise ConfigError("Missing required key", key=key)

    config = ExperimentConfig()
    for key, value in document.items():
        attribute, kind = _SCHEMA[key]
        setattr(config, attribute, _coerce(key, kind, value))

    for key in _POSITIVE:
        attribute = _SCHEMA[key][0]
        if getattr(config, attribute) <= 0:
            raise ConfigError("Must be positive", key=key)
    if not 0 <= config.seed <= SEED_MAX:
        raise ConfigError("Seed must be an unsigned 64-bit integer", key="seed")
    for point, _ in config.v0_entries:
        if len(point) != config.dimension:
            raise ConfigError(
                f"Point {point} does not have dimension {config.dimension}",
                key="v0_entries",
            )

    config.sha256 = canonical_sha256(document)
    config.potential_spec()
    logger.debug("Parsed config %s", config.sha256)
    return config


def config_parser(file_path) -> ExperimentConfig:
    """
    The function receives a path to a JSON experiment file, parses the file,
    and returns a validated ExperimentConfig object
    """
    try:
        with open(file_path, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"Could not read config file {file_path}: {exc}") from exc
    return parse_config(text)
