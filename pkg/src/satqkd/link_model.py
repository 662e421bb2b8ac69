"""Link efficiency, per-channel count rate and overall noise rate."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .config import CHANNELS

MIN_ELEVATION_RAD = math.radians(0.5)


class EfficiencyClampWarning(RuntimeWarning):
    """Raised (as a warning) when the link formula exceeds unit efficiency."""


def geometric_factor(range_m, rx, src):
    return rx.obstruction * rx.aperture_m ** 2 / (src.divergence_rad * np.asarray(range_m)) ** 2


def atmospheric_factor(elevation_rad, kappa):
    """Transmittance ``10**(-0.4 kappa csc(el) (1 - 0.0012 cot(el)**2))``."""
    el = np.asarray(elevation_rad, dtype=np.float64)
    if np.any(el < MIN_ELEVATION_RAD):
        raise ValueError("elevation below 0.5 deg is outside the extinction model")
    s = np.sin(el)
    cot = np.cos(el) / s
    return 10.0 ** (-0.4 * kappa / s * (1.0 - 0.0012 * cot * cot))


def link_efficiency(range_m, elevation_rad, rx, src, eta_opt, kappa=None):
    """Vectorised link efficiency for one optical efficiency value.

    Returns ``(eta, clamped)`` where ``clamped`` marks values cut back to 1.
    """
    kappa = rx.kappa if kappa is None else kappa
    eta = (geometric_factor(range_m, rx, src) * atmospheric_factor(elevation_rad, kappa)
           * eta_opt * rx.eta_det)
    clamped = eta > 1.0
    return np.minimum(eta, 1.0), clamped


def channel_efficiency(sample, rx, src, channel):
    if channel not in rx.eta_opt:
        raise KeyError(f"unknown channel {channel!r}")
    eta, clamped = link_efficiency(sample.range_m, sample.elevation_rad, rx, src, rx.eta_opt[channel])
    if clamped:
        warnings.warn(f"link efficiency for channel {channel} clamped to 1", EfficiencyClampWarning,
                      stacklevel=2)
    return float(eta)


def detection_probability(alpha, eta):
    """Click probability of a coherent pulse with mean photon number ``alpha``."""
    return -np.expm1(-alpha * np.asarray(eta))


def count_rate(eta_xi, rx, src, channel):
    """Expected click rate (1/s) of one receiver channel."""
    eta_xi = np.asarray(eta_xi, dtype=np.float64)
    signal = sum(src.pulse_rate_hz * p * detection_probability(a, eta_xi)
                 for _, a, p in src.intensities)
    return rx.p_channel[channel] * ((rx.sat_noise_T * eta_xi + rx.bg_noise_C) + signal)


def noise_rate(eta_mean, rx):
    return rx.sat_noise_T * np.asarray(eta_mean) + rx.bg_noise_C


@dataclass(frozen=True)
class ChannelEfficiencySeries:
    t: np.ndarray
    eta: dict
    eta_mean: np.ndarray
    clamped: np.ndarray

    def matrix(self):
        """Efficiencies as an (n_samples, 4) array in H, V, D, A order."""
        if not len(self.t):
            return np.zeros((0, 4))
        return np.column_stack([self.eta[c] for c in CHANNELS])


def efficiency_series(profile, rx, src, kappa=None, eta_opt=None):
    eta_opt = rx.eta_opt if eta_opt is None else eta_opt
    eta = {}
    clamped = np.zeros(len(profile), dtype=bool)
    for c in CHANNELS:
        eta[c], cl = link_efficiency(profile.range_m, profile.elevation_rad, rx, src, eta_opt[c], kappa)
        clamped |= cl
    if clamped.any():
        warnings.warn(f"link efficiency clamped to 1 at {int(clamped.sum())} sample(s)",
                      EfficiencyClampWarning, stacklevel=2)
    eta_mean = (eta["H"] + eta["V"] + eta["D"] + eta["A"]) / 4.0
    return ChannelEfficiencySeries(np.asarray(profile.t), eta, eta_mean, clamped)


def total_count_rate(series, rx, src):
    return sum(count_rate(series.eta[c], rx, src, c) for c in CHANNELS)
