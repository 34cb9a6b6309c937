"""Run configuration: one JSON document, validated before any computation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """A configuration field violates its precondition."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class CheckOptions:
    delta0: float = 0.4
    m0: int = 10
    eps0: float | None = None  # None: the largest admissible value from (A2)
    pilot: bool = True  # run a sampled tower to measure C~, theta, D for (A3)
    pilot_seeds: int = 100


@dataclass
class TowerOptions:
    growth: int = 4**8
    time_cap: int = 400
    seeds: int = 400  # stratified sample of reference tiles; 0 means every tile
    derivative_stride: int = 256
    distortion_samples: int = 64
    markov_seeds: int = 2
    markov_points: int = 200
    growth_trials: int = 100
    halved_hole: bool = True
    operator: bool = False  # also build the coarse full tower and its transfer operator
    operator_growth: int = 64
    operator_levels: int = 24
    operator_bins: int = 3


@dataclass
class AccimOptions:
    K: int = 12
    tol: float = 1e-10
    max_iter: int = 100_000
    tower_operator: bool = False
    admissibility: bool = False  # also run the admissibility checks on the same hole


@dataclass
class EscapeOptions:
    n_max: int = 200
    window: list[int] | None = None
    init: str = "uniform"  # uniform | center_bump
    hist_steps: list[int] = field(default_factory=list)
    hist_bins: int = 64
    conditional_n: int | None = None  # run the two-density comparison at this step


@dataclass
class ShrinkOptions:
    holes: list[list[list[float]]] = field(default_factory=list)
    labels: list[float] | None = None


@dataclass
class RunConfig:
    a: float = 2.0
    hole: list[list[float]] = field(default_factory=list)
    k0: int = 6
    kmax: int = 40
    horizon: int = 1000
    excursion_horizon: int = 100
    n_cells: int = 8192
    samples: int = 1_000_000
    seed: int = 0
    check: CheckOptions = field(default_factory=CheckOptions)
    tower: TowerOptions = field(default_factory=TowerOptions)
    accim: AccimOptions = field(default_factory=AccimOptions)
    escape: EscapeOptions = field(default_factory=EscapeOptions)
    shrink: ShrinkOptions = field(default_factory=ShrinkOptions)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = {
    "check": CheckOptions,
    "tower": TowerOptions,
    "accim": AccimOptions,
    "escape": EscapeOptions,
    "shrink": ShrinkOptions,
}


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "config", "expected a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown key")
    kwargs: dict[str, Any] = {}
    for k, v in data.items():
        if cls is RunConfig and k in _SECTIONS:
            kwargs[k] = _build(_SECTIONS[k], v, f"{k}.")
        else:
            kwargs[k] = v
    return cls(**kwargs)


def _require(cond: bool, name: str, msg: str):
    if not cond:
        raise ConfigError(name, msg)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def validate(cfg: RunConfig) -> RunConfig:
    """Check every field against the precondition of the module that consumes it."""
    _require(_is_real(cfg.a) and 0.0 < cfg.a <= 2.0, "a", "must be a real in (0, 2]")
    _require(isinstance(cfg.hole, list), "hole", "must be a list of [left, right] pairs")
    for i, c in enumerate(cfg.hole):
        _require(
            isinstance(c, list) and len(c) == 2 and all(_is_real(x) for x in c) and c[0] < c[1],
            f"hole[{i}]",
            "must be [left, right] with left < right",
        )
        _require(-1.0 <= c[0] and c[1] <= 1.0, f"hole[{i}]", "must lie in [-1, 1]")
    _require(_is_int(cfg.k0) and cfg.k0 >= 1, "k0", "must be an integer >= 1")
    _require(_is_int(cfg.kmax) and cfg.kmax > cfg.k0, "kmax", "must be an integer > k0")
    _require(_is_int(cfg.horizon) and cfg.horizon >= 1, "horizon", "must be a positive integer")
    _require(
        _is_int(cfg.excursion_horizon) and cfg.excursion_horizon >= 1,
        "excursion_horizon",
        "must be a positive integer",
    )
    _require(_is_int(cfg.n_cells) and cfg.n_cells >= 64, "n_cells", "must be an integer >= 64")
    _require(_is_int(cfg.samples) and cfg.samples >= 10_000, "samples", "must be an integer >= 10^4")
    _require(_is_int(cfg.seed) and 0 <= cfg.seed < 2**64, "seed", "must be an integer in [0, 2^64)")

    c = cfg.check
    _require(_is_real(c.delta0) and 0.0 < c.delta0 < 1.0, "check.delta0", "must be in (0, 1)")
    _require(_is_int(c.m0) and c.m0 >= 1, "check.m0", "must be an integer >= 1")
    _require(c.eps0 is None or (_is_real(c.eps0) and c.eps0 > 0), "check.eps0", "must be positive or null")
    _require(isinstance(c.pilot, bool), "check.pilot", "must be a boolean")
    _require(_is_int(c.pilot_seeds) and c.pilot_seeds >= 1, "check.pilot_seeds", "must be a positive integer")

    t = cfg.tower
    _require(_is_int(t.growth) and t.growth >= 16, "tower.growth", "must be an integer >= 16")
    _require(_is_int(t.time_cap) and t.time_cap >= 1, "tower.time_cap", "must be a positive integer")
    _require(_is_int(t.seeds) and t.seeds >= 0, "tower.seeds", "must be a nonnegative integer")
    _require(
        _is_int(t.derivative_stride) and t.derivative_stride >= 1,
        "tower.derivative_stride",
        "must be a positive integer",
    )
    _require(
        _is_int(t.distortion_samples) and t.distortion_samples >= 3,
        "tower.distortion_samples",
        "must be an integer >= 3",
    )
    _require(_is_int(t.markov_seeds) and t.markov_seeds >= 0, "tower.markov_seeds", "must be >= 0")
    _require(_is_int(t.markov_points) and t.markov_points >= 1, "tower.markov_points", "must be >= 1")
    _require(_is_int(t.growth_trials) and t.growth_trials >= 1, "tower.growth_trials", "must be >= 1")
    _require(isinstance(t.halved_hole, bool), "tower.halved_hole", "must be a boolean")
    _require(isinstance(t.operator, bool), "tower.operator", "must be a boolean")
    _require(_is_int(t.operator_growth) and t.operator_growth >= 16, "tower.operator_growth", "must be >= 16")
    _require(_is_int(t.operator_levels) and t.operator_levels >= 2, "tower.operator_levels", "must be >= 2")
    _require(_is_int(t.operator_bins) and t.operator_bins >= 1, "tower.operator_bins", "must be >= 1")

    a = cfg.accim
    _require(_is_int(a.K) and 1 <= a.K <= 20, "accim.K", "must be an integer in 1..20")
    _require(_is_real(a.tol) and a.tol > 0, "accim.tol", "must be positive")
    _require(_is_int(a.max_iter) and a.max_iter >= 1, "accim.max_iter", "must be a positive integer")
    _require(isinstance(a.tower_operator, bool), "accim.tower_operator", "must be a boolean")
    _require(isinstance(a.admissibility, bool), "accim.admissibility", "must be a boolean")

    e = cfg.escape
    _require(_is_int(e.n_max) and e.n_max >= 5, "escape.n_max", "must be an integer >= 5")
    _require(
        e.window is None or (isinstance(e.window, list) and len(e.window) == 2 and all(_is_int(x) for x in e.window)
                             and 0 <= e.window[0] < e.window[1] <= e.n_max),
        "escape.window",
        "must be null or [start, stop] with 0 <= start < stop <= n_max",
    )
    _require(e.init in ("uniform", "center_bump"), "escape.init", "must be 'uniform' or 'center_bump'")
    _require(
        isinstance(e.hist_steps, list) and all(_is_int(x) and 0 <= x <= e.n_max for x in e.hist_steps),
        "escape.hist_steps",
        "must be a list of steps in [0, n_max]",
    )
    _require(_is_int(e.hist_bins) and e.hist_bins >= 2, "escape.hist_bins", "must be an integer >= 2")
    _require(
        e.conditional_n is None or (_is_int(e.conditional_n) and 1 <= e.conditional_n <= e.n_max),
        "escape.conditional_n",
        "must be null or a step in [1, n_max]",
    )

    s = cfg.shrink
    _require(isinstance(s.holes, list), "shrink.holes", "must be a list of hole lists")
    for i, h in enumerate(s.holes):
        _require(isinstance(h, list) and len(h) >= 1, f"shrink.holes[{i}]", "must be a nonempty list of pairs")
        for j, c in enumerate(h):
            _require(
                isinstance(c, list) and len(c) == 2 and all(_is_real(x) for x in c) and c[0] < c[1],
                f"shrink.holes[{i}][{j}]",
                "must be [left, right] with left < right",
            )
    _require(
        s.labels is None or (isinstance(s.labels, list) and len(s.labels) == len(s.holes)),
        "shrink.labels",
        "must be null or one label per hole",
    )
    return cfg


def load_config(source: str | dict | None) -> RunConfig:
    """Parse and validate a config from a path, a JSON object, or defaults."""
    if source is None:
        data: dict = {}
    elif isinstance(source, dict):
        data = source
    else:
        try:
            with open(source, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON ({exc})") from exc
        except OSError as exc:
            raise ConfigError("config", f"cannot read {source!r} ({exc.strerror})") from exc
    try:
        cfg = _build(RunConfig, data, "")
    except TypeError as exc:  # wrong shape for a section
        raise ConfigError("config", str(exc)) from exc
    return validate(cfg)
