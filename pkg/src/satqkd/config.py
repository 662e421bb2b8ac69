"""Transmitter and receiver parameter sets, and the JSON config loader.

Defaults are the Micius source and Zvenigorod receiver values.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

CHANNELS = ("H", "V", "D", "A")


class ConfigError(ValueError):
    pass


def contrast_to_error(contrast):
    """Error probability for a polarization contrast ratio ``contrast:1``."""
    return 1.0 / (contrast + 1.0)


@dataclass(frozen=True)
class SourceConfig:
    mu: float = 0.8
    nu: float = 0.1
    lambda_vac: float = 0.0
    p_s: float = 0.5
    p_d: float = 0.25
    p_v: float = 0.25
    pulse_rate_hz: float = 1e8
    divergence_rad: float = 1e-5
    tx_mean_error: float = contrast_to_error(225.0)

    def __post_init__(self):
        probs = (self.p_s, self.p_d, self.p_v)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError("source probabilities must lie in [0, 1]")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigError("p_s + p_d + p_v must equal 1")
        if not 0.0 <= self.nu < self.mu:
            raise ConfigError("need 0 <= nu < mu")
        if self.lambda_vac != 0.0:
            raise ConfigError("lambda_vac must be 0")
        if not self.pulse_rate_hz > 0 or not self.divergence_rad > 0:
            raise ConfigError("pulse_rate_hz and divergence_rad must be positive")
        if not 0.0 <= self.tx_mean_error < 0.5:
            raise ConfigError("tx_mean_error must lie in [0, 0.5)")

    @property
    def intensities(self):
        """(name, mean photon number, probability) for signal, decoy, vacuum."""
        return (("signal", self.mu, self.p_s),
                ("decoy", self.nu, self.p_d),
                ("vacuum", self.lambda_vac, self.p_v))

    @property
    def period_ns(self):
        return 1e9 / self.pulse_rate_hz


@dataclass(frozen=True)
class ReceiverConfig:
    aperture_m: float = 0.6
    obstruction: float = 0.73
    eta_opt: dict = field(default_factory=lambda: {"H": 0.21, "V": 0.35, "D": 0.37, "A": 0.19})
    eta_det: float = 0.60
    p_channel: dict = field(default_factory=lambda: {c: 0.25 for c in CHANNELS})
    sat_noise_T: float = 1.8e6
    bg_noise_C: float = 290.0
    kappa: float = 0.22
    filter_suppression: float = 5.0
    filter_window_ns: float = 2.0
    # decoder contrast ratio (>350:1) converted to an error probability
    rx_intrinsic_error: float = contrast_to_error(350.0)

    def __post_init__(self):
        for name in ("eta_opt", "p_channel"):
            d = getattr(self, name)
            if set(d) != set(CHANNELS):
                raise ConfigError(f"{name} must have exactly the channels {CHANNELS}")
            object.__setattr__(self, name, {c: float(d[c]) for c in CHANNELS})
        if any(not 0.0 < v <= 1.0 for v in self.eta_opt.values()) or not 0.0 < self.eta_det <= 1.0:
            raise ConfigError("efficiencies must lie in (0, 1]")
        if not 0.0 < self.obstruction <= 1.0:
            raise ConfigError("obstruction must lie in (0, 1]")
        if any(not 0.0 <= v <= 1.0 for v in self.p_channel.values()):
            raise ConfigError("p_channel entries must lie in [0, 1]")
        if abs(sum(self.p_channel.values()) - 1.0) > 1e-12:
            raise ConfigError("p_channel must sum to 1")
        if self.kappa < 0 or self.sat_noise_T < 0 or self.bg_noise_C < 0:
            raise ConfigError("kappa, sat_noise_T and bg_noise_C must be nonnegative")
        if self.filter_suppression < 1:
            raise ConfigError("filter_suppression must be >= 1")
        if not self.aperture_m > 0 or not self.filter_window_ns > 0:
            raise ConfigError("aperture_m and filter_window_ns must be positive")
        if not 0.0 <= self.rx_intrinsic_error <= 0.5:
            raise ConfigError("rx_intrinsic_error must lie in [0, 0.5]")

    def with_eta_opt(self, **values):
        eta = dict(self.eta_opt)
        eta.update(values)
        return replace(self, eta_opt=eta)


@dataclass(frozen=True)
class PassConfig:
    orbit_altitude_m: float = 500e3
    peak_elevation_rad: float = math.radians(54.0)
    duration_s: float = 220.0
    step_s: float = 1.0
    min_operational_elevation_rad: float = math.radians(20.0)

    def __post_init__(self):
        if not self.step_s > 0 or not self.duration_s > 0:
            raise ConfigError("step_s and duration_s must be positive")


@dataclass(frozen=True)
class SecurityConfig:
    eta_z: float = 0.60
    eta_x: float = 0.51
    f_ec: float = 1.44
    epsilon: float = 1e-9
    p_z: float = 0.5
    # composition of decoy bounds with the mismatch bound, see security.mismatch_key_length
    delta_convention: str = "main"

    def __post_init__(self):
        if not 0.0 < self.eta_z <= 1.0 or not 0.0 < self.eta_x <= 1.0:
            raise ConfigError("eta_z and eta_x must lie in (0, 1]")
        if self.f_ec < 1.0:
            raise ConfigError("f_ec must be >= 1")
        if not 0.0 < self.epsilon < 1.0 or not 0.0 < self.p_z < 1.0:
            raise ConfigError("epsilon and p_z must lie in (0, 1)")
        if self.delta_convention not in ("main", "appendix"):
            raise ConfigError("delta_convention must be 'main' or 'appendix'")


@dataclass(frozen=True)
class Config:
    source: SourceConfig = field(default_factory=SourceConfig)
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    pass_: PassConfig = field(default_factory=PassConfig)
    security: SecurityConfig = field(default_factory=SecurityConfig)

    def to_dict(self):
        return {"source": asdict(self.source), "receiver": asdict(self.receiver),
                "pass": asdict(self.pass_), "security": asdict(self.security)}


_SECTIONS = {"source": ("source", SourceConfig), "receiver": ("receiver", ReceiverConfig),
             "pass": ("pass_", PassConfig), "security": ("security", SecurityConfig)}


def _build(cls, values, section):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def config_from_dict(data, base=None):
    """Overlay ``data`` (sectioned dict) on ``base`` (built-in defaults if None)."""
    base = base or Config()
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, (attr, cls) in _SECTIONS.items():
        current = asdict(getattr(base, attr))
        current.update(data.get(key, {}))
        kwargs[attr] = _build(cls, current, key)
    return Config(**kwargs)


def load_config(path=None):
    """Load a JSON config; ``None`` gives the bundled defaults."""
    if path is None:
        text = resources.files("satqkd").joinpath("data/default_config.json").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in config: {exc}") from None
    return config_from_dict(data)
