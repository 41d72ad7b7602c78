"""Flat key = value configuration with dotted namespaces.

Every parameter of the pipeline lives here with a documented default.
Loading validates ranges and rejects unknown keys; every CLI run writes an
effective-config snapshot next to its outputs so results are reproducible.
"""

from __future__ import annotations

import math


def _pos(v):
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _nonneg(v):
    if v < 0:
        raise ValueError("must be non-negative")
    return v


def _unit(v):
    if not (0.0 <= v <= 1.0):
        raise ValueError("must be in [0, 1]")
    return v


def _open_percentile(v):
    if not (0.0 < v < 100.0):
        raise ValueError("must be in (0, 100)")
    return v


def _int_pos(v):
    return int(_pos(int(v)))


def _int_nonneg(v):
    return int(_nonneg(int(v)))


# key -> (default, parser/validator)
SCHEMA = {
    "seed": (0, _int_nonneg),

    "camera.width": (64, _int_pos),
    "camera.height": (64, _int_pos),
    "camera.fov_deg": (60.0, lambda v: v if 0 < v < 180 else (_ for _ in ()).throw(ValueError("must be in (0, 180)"))),

    "sim.duration_us": (800_000, _int_pos),
    "sim.frame_dt_us": (2_000, _int_pos),
    "sim.noise_rate": (0.0, _nonneg),
    "sim.orbit_radius": (1.0, _pos),
    "sim.orbit_arc_deg": (50.0, _pos),

    "detector.num_maps": (5, lambda v: int(v) if int(v) >= 2 else (_ for _ in ()).throw(ValueError("must be >= 2"))),
    "detector.patch_size": (8, lambda v: int(v) if int(v) >= 2 else (_ for _ in ()).throw(ValueError("must be >= 2"))),
    "detector.overlap_ratio": (0.5, lambda v: v if 0.0 <= v < 1.0 else (_ for _ in ()).throw(ValueError("must be in [0, 1)"))),
    "detector.sigma": (1.0, _pos),
    "detector.tau_percentile": (80.0, _open_percentile),
    "detector.smooth_sigma": (2.0, _pos),
    "detector.keep_percentile": (65.0, _open_percentile),
    "detector.closing_radius": (2, _int_nonneg),

    "init.knn": (8, lambda v: int(v) if int(v) >= 2 else (_ for _ in ()).throw(ValueError("must be >= 2"))),
    "init.tile_size": (32, lambda v: int(v) if int(v) >= 2 else (_ for _ in ()).throw(ValueError("must be >= 2"))),
    "init.angle_threshold": (0.2, _pos),
    "init.max_depth": (3, _int_nonneg),
    "init.n_total": (600, _int_pos),
    "init.r_edge": (0.3, _unit),
    "init.d_min": (1.0, _pos),
    "init.d_max": (4.0, _pos),
    "init.opacity": (0.5, lambda v: v if 0 < v < 1 else (_ for _ in ()).throw(ValueError("must be in (0, 1)"))),
    "init.color": (0.5, _unit),
    "init.confidence_min": (0.1, lambda v: v if 0 < v <= 1 else (_ for _ in ()).throw(ValueError("must be in (0, 1]"))),
    "init.base_scale_px": (2.0, _pos),

    "loss.beta": (2.0, _nonneg),
    "loss.lambda": (0.2, _unit),

    "loop.chunk_duration_us": (100_000, _int_pos),
    "loop.window": (4, _int_pos),
    "loop.n_samples": (8, _int_pos),
    "loop.tracking_iters": (150, _int_pos),
    "loop.mapping_iters": (300, _int_pos),
    "loop.bootstrap_iters": (150, _int_pos),
    "loop.bootstrap_probe_iters": (25, _int_pos),
    "loop.bootstrap_step": (0.1, _nonneg),
    "loop.cv_prior_weight": (0.0, _nonneg),
    "loop.dt_min_us": (20_000, _int_pos),
    "loop.dt_max_us": (60_000, _int_pos),
    "loop.contrast_threshold": (0.2, _pos),
    "loop.background": (0.4, lambda v: v if 0 < v <= 1 else (_ for _ in ()).throw(ValueError("must be in (0, 1]"))),
    "loop.near": (0.01, _pos),
    "loop.lr_decay": (0.97, lambda v: v if 0 < v <= 1 else (_ for _ in ()).throw(ValueError("must be in (0, 1]"))),
    "loop.lr_pose": (2e-3, _pos),
    "loop.lr_mu": (2e-3, _pos),
    "loop.lr_scales": (1e-3, _pos),
    "loop.lr_quat": (1e-3, _pos),
    "loop.lr_opacity": (5e-3, _pos),
    "loop.lr_color": (5e-3, _pos),
}


class ConfigError(ValueError):
    pass


class Config:
    """Validated flat configuration; access values with [] or get()."""

    def __init__(self, overrides: dict | None = None):
        self._values = {k: v for k, (v, _) in SCHEMA.items()}
        if overrides:
            for key, value in overrides.items():
                self.set(key, value)
        self._check_cross_constraints()

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        _, validator = SCHEMA[key]
        try:
            self._values[key] = validator(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid value for {key}: {value!r} ({exc})") from exc

    def _check_cross_constraints(self) -> None:
        if self["loop.dt_min_us"] > self["loop.dt_max_us"]:
            raise ConfigError("loop.dt_min_us must be <= loop.dt_max_us")
        if self["init.d_min"] >= self["init.d_max"]:
            raise ConfigError("init.d_min must be < init.d_max")

    def __getitem__(self, key: str):
        return self._values[key]

    def get(self, key: str):
        return self._values[key]

    def items(self):
        return self._values.items()

    def copy_with(self, **overrides) -> "Config":
        merged = dict(self._values)
        merged.update({k.replace("__", "."): v for k, v in overrides.items()})
        return Config(merged)


def _parse_scalar(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError
        return value
    except ValueError:
        return text


def load_config(path, overrides: dict | None = None) -> Config:
    """Parse a `key = value` file (# comments allowed) and validate."""
    values = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = _parse_scalar(value)
    if overrides:
        values.update(overrides)
    return Config(values)


def save_config(path, config: Config) -> None:
    with open(path, "w") as f:
        for key in sorted(dict(config.items())):
            f.write(f"{key} = {config[key]}\n")
