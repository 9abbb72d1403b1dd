"""Experiment configuration: a flat ``section.key = value`` text format.

Lines are ``dotted.key = value``; ``#`` starts a comment. Points are written
``x,y`` and device pairs ``x,y x,y`` separated by ``;``. Every key has a
default, so a config file only needs the keys it changes.

Random streams derive from one 64-bit base seed: component ``name`` gets
``SeedSequence([seed, crc32(name)])``, so adding a component never shifts
the stream of another.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .acoustic_sim import AcousticConfig
from .fusion_solver import FusionWeights, SolverOptions, weights_from_noise
from .geometry import LOS, NLOS, Arena, LinkGeometry, Point2D, SpeakerPair
from .scenario import DEFAULT_DEVICE_PAIRS, DeviceLayout
from .trajectory_sim import SHAPES, MotionProfile, SampledTrajectory, generate_shape, sample_trajectory
from .wifi_features import RankDeficiencyError, WifiConfig, induced_velocity_sigma

# Floors applied when a noise level of zero would give an infinite weight.
MIN_SIGMA_V = 1e-3
MIN_SIGMA_D = 1e-6
SWEEP_PARAMETERS = ("links", "noise", "grid", "segmentation")
GENERATORS = ("oracle", "waveform")
U64 = 2 ** 64


class ConfigError(ValueError):
    """A config value failed validation; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# --- value codecs ------------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def _parse_float(s: str) -> float:
    return float(s)


def _parse_point(s: str) -> tuple[float, float]:
    parts = [p for p in s.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ValueError(f"expected 'x,y', got {s!r}")
    return float(parts[0]), float(parts[1])


def _fmt_point(p) -> str:
    return f"{_fmt_float(p[0])},{_fmt_float(p[1])}"


def _parse_pairs(s: str):
    out = []
    for chunk in s.split(";"):
        pts = chunk.split()
        if len(pts) != 2:
            raise ValueError(f"expected 'x,y x,y' per pair, got {chunk.strip()!r}")
        out.append((_parse_point(pts[0]), _parse_point(pts[1])))
    return tuple(out)


def _fmt_pairs(pairs) -> str:
    return "; ".join(f"{_fmt_point(a)} {_fmt_point(b)}" for a, b in pairs)


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_values(s: str) -> tuple[str, ...]:
    return tuple(v for v in s.replace(",", " ").split() if v)


_CODECS = {
    float: (_parse_float, _fmt_float),
    int: (int, str),
    str: (str.strip, str),
    bool: (_parse_bool, lambda b: "true" if b else "false"),
    "point": (_parse_point, _fmt_point),
    "pairs": (_parse_pairs, _fmt_pairs),
    "values": (_parse_values, lambda v: " ".join(v)),
}


def _key(f) -> str:
    return f.metadata.get("key", f.name.replace("__", "."))


# --- the config ----------------------------------------------------------------

def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Everything needed to simulate, track and evaluate one scene.

    Field names map to dotted keys by replacing ``__`` with ``.``.
    ``fusion.sigma_v`` of ``nan`` means "derive from the PLCR noise".
    """

    seed: int = 0
    arena__x_min: float = 0.0
    arena__x_max: float = 5.0
    arena__y_min: float = 0.0
    arena__y_max: float = 5.0
    layout__mode: str = LOS
    layout__links: int = 2
    layout__pairs: tuple = DEFAULT_DEVICE_PAIRS
    layout__s1: tuple = (2.0, 0.0)
    layout__s2: tuple = (3.0, 0.0)
    path__shape: str = "square"
    path__center: tuple = (2.5, 2.5)
    path__size: float = 4.0
    path__laps: int = 4
    path__rate: float = 100.0
    motion__cruise_speed: float = 1.0
    motion__max_accel: float = 1.5
    motion__corner_slowdown: float = 0.5
    wifi__carrier_frequency: float = 5.32e9
    wifi__noise_sigma_r: float = 0.05
    acoustic__noise_sigma_d: float = 1e-4
    acoustic__speed_of_sound: float = 343.0
    acoustic__coverage_range: float = math.inf
    acoustic__generator: str = "oracle"
    acoustic__frame_stride: int = 10
    fusion__sigma_v: float = math.nan
    fusion__sigma_p: float = 0.01
    fusion__iterations: int = 1
    fusion__gate: float = 0.1
    fusion__max_speed: float = 5.0
    search__cell: float = 0.25
    search__window: float = 10.0
    search__segment: bool = False
    search__min_high_conf: int = 1
    sweep__parameter: str = "links"
    sweep__values: tuple = ("1", "2", "3")
    sweep__repeats: int = 20

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return all(_same(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))

    def __hash__(self) -> int:
        return hash(self.serialize())

    # --- text form -----------------------------------------------------------

    @classmethod
    def _kinds(cls) -> dict:
        kinds = {}
        for f in fields(cls):
            if f.name in ("layout__s1", "layout__s2", "path__center"):
                kinds[f.name] = "point"
            elif f.name == "layout__pairs":
                kinds[f.name] = "pairs"
            elif f.name == "sweep__values":
                kinds[f.name] = "values"
            else:
                kinds[f.name] = {"float": float, "int": int, "str": str,
                                 "bool": bool}[f.type]
        return kinds

    @classmethod
    def keys(cls) -> list[str]:
        return [_key(f) for f in fields(cls)]

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        """Parse config text and validate it; raises :class:`ConfigError`."""
        kinds = cls._kinds()
        by_key = {_key(f): f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(key or f"line {lineno}", "expected 'key = value'")
            if key not in by_key:
                raise ConfigError(key, "unknown key")
            name = by_key[key]
            if name in values:
                raise ConfigError(key, "given more than once")
            try:
                values[name] = _CODECS[kinds[name]][0](value.strip())
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def serialize(self) -> str:
        kinds = self._kinds()
        lines = []
        section = None
        for f in fields(self):
            key = _key(f)
            head = key.split(".")[0] if "." in key else None
            if head != section and head is not None:
                lines.append(f"\n# {head}")
                section = head
            lines.append(f"{key} = {_CODECS[kinds[f.name]][1](getattr(self, f.name))}")
        return "\n".join(lines).lstrip("\n") + "\n"

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
        return cls.parse(text)

    def with_values(self, **changes) -> "ExperimentConfig":
        cfg = replace(self, **changes)
        cfg.validate()
        return cfg

    # --- validation ----------------------------------------------------------

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(key, msg)

        need(0 <= self.seed < U64, "seed", "must be an unsigned 64-bit integer")
        for name in ("arena__x_min", "arena__x_max", "arena__y_min", "arena__y_max"):
            need(math.isfinite(getattr(self, name)), name.replace("__", "."), "must be finite")
        need(self.arena__x_max > self.arena__x_min, "arena.x_max", "must exceed arena.x_min")
        need(self.arena__y_max > self.arena__y_min, "arena.y_max", "must exceed arena.y_min")
        need(self.layout__mode in (LOS, NLOS), "layout.mode", "must be 'los' or 'nlos'")
        need(len(self.layout__pairs) >= 1, "layout.pairs", "needs at least one device pair")
        need(1 <= self.layout__links <= len(self.layout__pairs), "layout.links",
             f"must be between 1 and {len(self.layout__pairs)}")
        for a, b in self.layout__pairs:
            need(a != b, "layout.pairs", "pair endpoints must differ")
        arena = self.arena
        for name in ("layout__s1", "layout__s2"):
            need(arena.contains(getattr(self, name)), name.replace("__", "."),
                 "speaker must lie inside the arena")
        need(self.layout__s1 != self.layout__s2, "layout.s2", "speakers must differ")
        need(self.path__shape in SHAPES, "path.shape", f"must be one of {', '.join(SHAPES)}")
        need(self.path__size > 0, "path.size", "must be positive")
        need(self.path__laps >= 1, "path.laps", "must be >= 1")
        need(self.path__rate > 0, "path.rate", "must be positive")
        need(arena.contains(self.path__center), "path.center", "must lie inside the arena")
        need(self.motion__cruise_speed > 0, "motion.cruise_speed", "must be positive")
        need(self.motion__max_accel > 0, "motion.max_accel", "must be positive")
        need(0 < self.motion__corner_slowdown <= 1, "motion.corner_slowdown",
             "must lie in (0, 1]")
        need(self.wifi__carrier_frequency > 0, "wifi.carrier_frequency", "must be positive")
        need(self.wifi__noise_sigma_r >= 0, "wifi.noise_sigma_r", "must be >= 0")
        need(self.acoustic__noise_sigma_d >= 0, "acoustic.noise_sigma_d", "must be >= 0")
        need(self.acoustic__speed_of_sound > 0, "acoustic.speed_of_sound", "must be positive")
        need(self.acoustic__coverage_range > 0, "acoustic.coverage_range",
             "must be positive (inf for full coverage)")
        need(self.acoustic__generator in GENERATORS, "acoustic.generator",
             "must be 'oracle' or 'waveform'")
        need(self.acoustic__frame_stride >= 1, "acoustic.frame_stride", "must be >= 1")
        need(math.isnan(self.fusion__sigma_v) or self.fusion__sigma_v > 0, "fusion.sigma_v",
             "must be positive or nan (derived)")
        need(self.fusion__sigma_p > 0, "fusion.sigma_p", "must be positive (inf disables)")
        need(1 <= self.fusion__iterations <= 5, "fusion.iterations", "must be in [1, 5]")
        need(self.fusion__gate > 0, "fusion.gate", "must be positive")
        need(self.fusion__max_speed > 0, "fusion.max_speed", "must be positive")
        need(self.search__cell > 0, "search.cell", "must be positive")
        need(self.search__window > 0, "search.window", "must be positive")
        need(self.search__min_high_conf >= 1, "search.min_high_conf", "must be >= 1")
        need(self.sweep__parameter in SWEEP_PARAMETERS, "sweep.parameter",
             f"must be one of {', '.join(SWEEP_PARAMETERS)}")
        need(self.sweep__repeats >= 1, "sweep.repeats", "must be >= 1")
        try:
            path = generate_shape(self.path__shape, self.path__center, self.path__size,
                                  self.path__laps)
        except ValueError as exc:
            raise ConfigError("path", str(exc)) from None
        if not all(arena.contains(p, tol=1e-9) for p in path.waypoints):
            raise ConfigError("path.size", "path leaves the arena")

    # --- builders ------------------------------------------------------------

    @property
    def arena(self) -> Arena:
        return Arena(self.arena__x_min, self.arena__x_max, self.arena__y_min, self.arena__y_max)

    @property
    def pair(self) -> SpeakerPair:
        return SpeakerPair(self.layout__s1, self.layout__s2)

    def layout(self) -> DeviceLayout:
        return DeviceLayout(self.arena,
                            tuple(LinkGeometry(a, b, LOS) for a, b in self.layout__pairs),
                            tuple(LinkGeometry(a, b, NLOS) for a, b in self.layout__pairs),
                            self.pair)

    def links(self, mode: str | None = None, count: int | None = None) -> list[LinkGeometry]:
        return self.layout().links(mode or self.layout__mode, count or self.layout__links)

    def wifi(self) -> WifiConfig:
        return WifiConfig(self.wifi__carrier_frequency, self.path__rate, self.wifi__noise_sigma_r)

    def acoustic(self) -> AcousticConfig:
        cfg = AcousticConfig(speed_of_sound=self.acoustic__speed_of_sound,
                             noise_sigma_d=self.acoustic__noise_sigma_d)
        if math.isfinite(self.acoustic__coverage_range):
            cfg = cfg.with_coverage(self.acoustic__coverage_range)
        return cfg

    def profile(self) -> MotionProfile:
        return MotionProfile(self.motion__cruise_speed, self.motion__max_accel,
                             self.motion__corner_slowdown)

    def trajectory(self) -> SampledTrajectory:
        path = generate_shape(self.path__shape, self.path__center, self.path__size,
                              self.path__laps)
        return sample_trajectory(path, self.profile(), self.path__rate)

    def sigma_v(self, links) -> float:
        if not math.isnan(self.fusion__sigma_v):
            return self.fusion__sigma_v
        a = self.arena
        centre = Point2D(0.5 * (a.x_min + a.x_max), 0.5 * (a.y_min + a.y_max))
        try:
            sigma = induced_velocity_sigma(links, centre, self.wifi__noise_sigma_r)
        except (RankDeficiencyError, np.linalg.LinAlgError):
            # one link cannot resolve a velocity; fall back to the feature noise
            sigma = self.wifi__noise_sigma_r
        return max(sigma, MIN_SIGMA_V)

    def weights(self, links) -> FusionWeights:
        return weights_from_noise(self.sigma_v(links),
                                  max(self.acoustic__noise_sigma_d, MIN_SIGMA_D),
                                  self.acoustic__speed_of_sound, self.fusion__sigma_p)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(self.acoustic__speed_of_sound, self.fusion__iterations,
                             self.fusion__gate, self.fusion__max_speed)

    def rng(self, component: str) -> np.random.Generator:
        return component_rng(self.seed, component)


def component_rng(seed: int, component: str) -> np.random.Generator:
    """Independent generator for ``component`` under base ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(component.encode())]))
