"""Sifted rates, QBER bounds, Monte Carlo detections, temporal filtering and sync.

Analytic per-sample quantities for an intensity ``alpha`` sent with
probability ``p_alpha``::

    R_sift = f p_alpha / 2 * [Y0 + sum_xi p_xi (1 - exp(-alpha eta_xi))]
    N_err  = f p_alpha / 2 * [Y0 / 2 + 1/4 sum_xi e_xi (1 - exp(-alpha eta_xi))]
    QBER   = N_err / R_sift

Note the fixed 1/4 weight in ``N_err`` against ``p_xi`` in ``R_sift``; both
are kept as written, they coincide for a symmetric receiver.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import kernels
from .config import CHANNELS
from .geometry import OPERATIONAL_MIN_ELEVATION_RAD, clamp_elevation
from .link_model import detection_probability, efficiency_series, noise_rate

INTENSITIES = ("signal", "decoy", "vacuum")
BACKGROUND_ERROR = 0.5
SYNC_SIGMA_NS = 0.5
SYNC_CENTER_NS = 6.0
# per-pulse Monte Carlo materialises eight uniforms per pulse
MAX_PER_PULSE = 50_000_000


class SyncFitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# analytic model

def background_yield(noise_total, pulse_rate_hz, suppression=5.0):
    """Background clicks per sent pulse after temporal filtering."""
    return np.asarray(noise_total, dtype=np.float64) / (suppression * pulse_rate_hz)


def _eta_matrix(eta):
    if isinstance(eta, dict):
        return np.stack([np.asarray(eta[c], dtype=np.float64) for c in CHANNELS], axis=-1)
    return np.asarray(eta, dtype=np.float64)


def _pvec(p_channel):
    if p_channel is None:
        return np.full(4, 0.25)
    return np.array([p_channel[c] for c in CHANNELS])


def sifted_rate(alpha, p_alpha, y0, eta, src, p_channel=None):
    eta = _eta_matrix(eta)
    click = detection_probability(alpha, eta) @ _pvec(p_channel)
    return 0.5 * src.pulse_rate_hz * p_alpha * (np.asarray(y0) + click)


def intrinsic_error_upper(e_rx, e_tx_mean):
    return np.minimum(np.asarray(e_rx) + e_tx_mean, 0.5)


def error_count_upper(alpha, p_alpha, y0, e_det_upper, eta, src):
    eta = _eta_matrix(eta)
    e_det = _eta_matrix(e_det_upper)
    weighted = 0.25 * np.sum(e_det * detection_probability(alpha, eta), axis=-1)
    return 0.5 * src.pulse_rate_hz * p_alpha * (BACKGROUND_ERROR * np.asarray(y0) + weighted)


def qber_upper(n_err, r_sift):
    r_sift = np.asarray(r_sift, dtype=np.float64)
    if np.any(r_sift == 0):
        raise ZeroDivisionError("sifted rate is zero")
    q = np.asarray(n_err, dtype=np.float64) / r_sift
    return float(q) if q.ndim == 0 else q


# ---------------------------------------------------------------------------
# data series

@dataclass(frozen=True)
class IntrinsicErrorSeries:
    t: np.ndarray
    e_rx: dict

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        e = {c: np.asarray(self.e_rx[c], dtype=np.float64) for c in CHANNELS}
        if t.ndim != 1 or t.size == 0:
            raise ValueError("intrinsic error series needs at least one sample")
        for c in CHANNELS:
            if e[c].shape != t.shape:
                raise ValueError(f"e_{c} length differs from t")
            if np.any((e[c] < 0) | (e[c] > 0.5)):
                raise ValueError(f"e_{c} must lie in [0, 0.5]")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "e_rx", e)

    @classmethod
    def constant(cls, value, t_end=0.0):
        return cls(np.array([0.0, max(t_end, 0.0)]), {c: np.full(2, float(value)) for c in CHANNELS})

    def lookup(self, t):
        """Nearest-sample values at times ``t``; returns an (n, 4) array."""
        t = np.asarray(t, dtype=np.float64)
        if self.t.size == 1:
            idx = np.zeros(t.shape, dtype=np.int64)
        else:
            mid = 0.5 * (self.t[1:] + self.t[:-1])
            idx = np.searchsorted(mid, t, side="right")
        return np.stack([self.e_rx[c][idx] for c in CHANNELS], axis=-1)

    def write_csv(self, path):
        buf = io.StringIO()
        buf.write("t_s,e_H,e_V,e_D,e_A\n")
        for i, t in enumerate(self.t):
            buf.write(",".join([repr(float(t))] + [repr(float(self.e_rx[c][i])) for c in CHANNELS]) + "\n")
        Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")

    @classmethod
    def load_csv(cls, path):
        header, rows = _read_csv(path)
        want = ["t_s", "e_H", "e_V", "e_D", "e_A"]
        missing = [c for c in want if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        cols = {c: np.array([float(r[header.index(c)]) for r in rows]) for c in want}
        return cls(cols["t_s"], {c: cols[f"e_{c}"] for c in CHANNELS})


@dataclass(frozen=True)
class SiftedRateSeries:
    t: np.ndarray
    rate: dict
    qber_upper: dict
    y0: np.ndarray
    n_err: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    _COLUMNS = ("t_s", "y0") + tuple(f"rate_{a}" for a in INTENSITIES) \
        + tuple(f"err_{a}" for a in INTENSITIES) + tuple(f"qber_{a}" for a in INTENSITIES)

    def write_csv(self, path, comments=()):
        buf = io.StringIO()
        for line in comments:
            buf.write(f"# {line}\n")
        buf.write(",".join(self._COLUMNS) + "\n")
        for i in range(len(self.t)):
            vals = [self.t[i], self.y0[i]]
            vals += [self.rate[a][i] for a in INTENSITIES]
            vals += [self.n_err[a][i] if a in self.n_err else math.nan for a in INTENSITIES]
            vals += [self.qber_upper[a][i] for a in INTENSITIES]
            buf.write(",".join(repr(float(v)) for v in vals) + "\n")
        _atomic_write(path, buf.getvalue())

    @classmethod
    def load_csv(cls, path):
        header, rows = _read_csv(path)
        missing = [c for c in cls._COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {c: np.array([float(r[header.index(c)]) for r in rows]) for c in cls._COLUMNS}
        return cls(col["t_s"], {a: col[f"rate_{a}"] for a in INTENSITIES},
                   {a: col[f"qber_{a}"] for a in INTENSITIES}, col["y0"],
                   {a: col[f"err_{a}"] for a in INTENSITIES})

    def totals(self, step_s):
        return {a: float(np.sum(self.rate[a]) * step_s) for a in INTENSITIES}


@dataclass(frozen=True)
class DetectionRecord:
    pulse_index: int
    channel: str
    alice_basis: str
    alice_bit: int
    bob_basis: str
    bob_bit: int
    intensity: str
    timestamp_ns: float

    def __post_init__(self):
        if self.bob_basis != ("Z" if self.channel in ("H", "V") else "X"):
            raise ValueError("bob_basis inconsistent with channel")


_BASES = ("Z", "X")
RECORD_COLUMNS = ("pulse_index", "channel", "alice_basis", "alice_bit", "bob_basis", "bob_bit",
                  "intensity", "timestamp_ns")


@dataclass
class DetectionTable:
    """Column store of detection events (codes as in :mod:`satqkd.kernels`)."""

    pulse_index: np.ndarray
    channel: np.ndarray
    alice_basis: np.ndarray
    alice_bit: np.ndarray
    bob_bit: np.ndarray
    intensity: np.ndarray
    timestamp_ns: np.ndarray
    is_noise: np.ndarray = None

    def __post_init__(self):
        n = len(self.pulse_index)
        if self.is_noise is None:
            self.is_noise = np.zeros(n, dtype=bool)
        for name in ("channel", "alice_basis", "alice_bit", "bob_bit", "intensity", "timestamp_ns",
                     "is_noise"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has the wrong length")

    def __len__(self):
        return len(self.pulse_index)

    @property
    def bob_basis(self):
        return (np.asarray(self.channel) // 2).astype(np.int8)

    @classmethod
    def empty(cls):
        z8 = np.zeros(0, dtype=np.int8)
        return cls(np.zeros(0, dtype=np.int64), z8, z8, z8, z8, z8, np.zeros(0), np.zeros(0, dtype=bool))

    @classmethod
    def concat(cls, tables):
        tables = [t for t in tables if len(t)]
        if not tables:
            return cls.empty()
        names = ("pulse_index", "channel", "alice_basis", "alice_bit", "bob_bit", "intensity",
                 "timestamp_ns", "is_noise")
        return cls(**{n: np.concatenate([getattr(t, n) for t in tables]) for n in names})

    def take(self, idx):
        names = ("pulse_index", "channel", "alice_basis", "alice_bit", "bob_bit", "intensity",
                 "timestamp_ns", "is_noise")
        return DetectionTable(**{n: np.asarray(getattr(self, n))[idx] for n in names})

    def records(self):
        bb = self.bob_basis
        return [DetectionRecord(int(self.pulse_index[i]), CHANNELS[self.channel[i]],
                                _BASES[self.alice_basis[i]], int(self.alice_bit[i]), _BASES[bb[i]],
                                int(self.bob_bit[i]), INTENSITIES[self.intensity[i]],
                                float(self.timestamp_ns[i]))
                for i in range(len(self))]

    @classmethod
    def from_records(cls, records):
        recs = list(records)
        if not recs:
            return cls.empty()
        return cls(
            np.array([r.pulse_index for r in recs], dtype=np.int64),
            np.array([CHANNELS.index(r.channel) for r in recs], dtype=np.int8),
            np.array([_BASES.index(r.alice_basis) for r in recs], dtype=np.int8),
            np.array([r.alice_bit for r in recs], dtype=np.int8),
            np.array([r.bob_bit for r in recs], dtype=np.int8),
            np.array([INTENSITIES.index(r.intensity) for r in recs], dtype=np.int8),
            np.array([r.timestamp_ns for r in recs], dtype=np.float64),
        )

    def write_csv(self, path, comments=()):
        ch = np.array(CHANNELS)[self.channel]
        ab = np.array(_BASES)[self.alice_basis]
        bb = np.array(_BASES)[self.bob_basis]
        it = np.array(INTENSITIES)[self.intensity]
        parts = [f"# {line}\n" for line in comments]
        parts.append(",".join(RECORD_COLUMNS) + "\n")
        ts = self.timestamp_ns.tolist()
        for i, (p, c, a, abit, b, bbit, k) in enumerate(zip(
                self.pulse_index.tolist(), ch.tolist(), ab.tolist(), self.alice_bit.tolist(),
                bb.tolist(), self.bob_bit.tolist(), it.tolist())):
            parts.append(f"{p},{c},{a},{abit},{b},{bbit},{k},{ts[i]!r}\n")
        _atomic_write(path, "".join(parts))

    @classmethod
    def load_csv(cls, path):
        header, rows = _read_csv(path)
        missing = [c for c in RECORD_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        if not rows:
            return cls.empty()
        cols = list(zip(*rows))

        def codes(name, names):
            lookup = {v: k for k, v in enumerate(names)}
            try:
                return np.array([lookup[v] for v in cols[header.index(name)]], dtype=np.int8)
            except KeyError as exc:
                raise ValueError(f"{path}: bad {name} value {exc.args[0]!r}") from None

        def ints(name):
            return np.array(cols[header.index(name)], dtype=np.int64)

        channel = codes("channel", CHANNELS)
        if np.any(codes("bob_basis", _BASES) != channel // 2):
            raise ValueError(f"{path}: bob_basis inconsistent with channel")
        alice_bit, bob_bit = ints("alice_bit"), ints("bob_bit")
        if np.any((alice_bit < 0) | (alice_bit > 1) | (bob_bit < 0) | (bob_bit > 1)):
            raise ValueError(f"{path}: bits must be 0 or 1")
        return cls(ints("pulse_index"), channel, codes("alice_basis", _BASES), alice_bit.astype(np.int8),
                   bob_bit.astype(np.int8), codes("intensity", INTENSITIES),
                   np.array(cols[header.index("timestamp_ns")], dtype=np.float64))


def _read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValueError(f"{path}: empty file") from None
    return header, [r for r in reader if r]


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    tmp.replace(path)


# ---------------------------------------------------------------------------
# pass simulation

@dataclass
class PassSimulation:
    profile: object
    efficiencies: object
    series: SiftedRateSeries
    analytic: SiftedRateSeries
    detections: DetectionTable = None
    mode: str = "analytic"
    e_det: np.ndarray = None

    def decoy_counts(self, src):
        """Sent pulses, sifted bits and sifted errors per intensity over the pass."""
        dt = self.profile.step_s
        n = len(self.profile)
        out = {}
        for k, (name, _, p) in enumerate(src.intensities):
            sent = int(round(src.pulse_rate_hz * p * dt * n))
            if self.detections is not None:
                d = self.detections
                sel = (d.intensity == k) & (d.alice_basis == d.bob_basis)
                sifted = int(np.count_nonzero(sel))
                errors = int(np.count_nonzero(sel & (d.alice_bit != d.bob_bit)))
            else:
                sifted = float(np.sum(self.series.rate[name]) * dt)
                errors = float(np.sum(self.series.n_err[name]) * dt)
            out[name] = (sent, sifted, errors)
        return out

    def channel_tallies(self, src, p_channel=None, intensity="signal"):
        """Basis-matched clicks and errors per channel (H, V, D, A) for one intensity.

        Analytic runs give expectations: clicks ``f p_a / 2 * p_xi (Y0 + 1 - exp(-a eta_xi))``
        and errors with the background at 1/2 and the fixed 1/4 channel weight.
        """
        k = INTENSITIES.index(intensity)
        if self.detections is not None:
            d = self.detections
            sel = (d.intensity == k) & (d.alice_basis == d.bob_basis)
            clicks = np.bincount(d.channel[sel], minlength=4).astype(np.float64)
            errors = np.bincount(d.channel[sel & (d.alice_bit != d.bob_bit)],
                                 minlength=4).astype(np.float64)
            return clicks, errors
        _, alpha, p = src.intensities[k]
        dt = self.profile.step_s
        pvec = _pvec(p_channel)
        eta = self.efficiencies.matrix()
        y0 = self.analytic.y0[:, None]
        click_p = detection_probability(alpha, eta)
        clicks = 0.5 * src.pulse_rate_hz * p * dt * (pvec * (y0 + click_p)).sum(axis=0)
        errors = 0.5 * src.pulse_rate_hz * p * dt * (
            pvec * BACKGROUND_ERROR * y0 + 0.25 * self.e_det * click_p).sum(axis=0)
        return clicks, errors


def analytic_series(profile, rx, src, err_series, eff=None):
    eff = efficiency_series(profile, rx, src) if eff is None else eff
    eta = eff.matrix()
    y0 = background_yield(noise_rate(eff.eta_mean, rx), src.pulse_rate_hz, rx.filter_suppression)
    e_det = intrinsic_error_upper(err_series.lookup(profile.t), src.tx_mean_error)
    rate, n_err, qber = {}, {}, {}
    for name, alpha, p in src.intensities:
        rate[name] = sifted_rate(alpha, p, y0, eta, src, rx.p_channel)
        n_err[name] = error_count_upper(alpha, p, y0, e_det, eta, src)
        qber[name] = n_err[name] / rate[name] if len(profile) else np.zeros(0)
    return SiftedRateSeries(np.asarray(profile.t), rate, qber, y0, n_err), eff, e_det


def simulate_pass(profile, rx, src, err_series=None, rng_seed=None, mode="analytic",
                  per_pulse=False, min_elevation_rad=OPERATIONAL_MIN_ELEVATION_RAD,
                  sync_center_ns=SYNC_CENTER_NS, sync_sigma_ns=SYNC_SIGMA_NS):
    """Run the rate model over a pass.

    ``mode="montecarlo"`` draws Poisson click counts per sample and channel
    with the analytic means (post-filter), then assigns bases and bits. With
    ``per_pulse=True`` every pulse is simulated individually instead, which
    resolves double clicks; this is only sensible for small pulse counts.
    """
    if mode not in ("analytic", "montecarlo"):
        raise ValueError(f"unknown mode {mode!r}")
    if err_series is None:
        err_series = IntrinsicErrorSeries.constant(rx.rx_intrinsic_error)
    if min_elevation_rad is not None and len(profile):
        profile = clamp_elevation(profile, min_elevation_rad)
    analytic, eff, e_det = analytic_series(profile, rx, src, err_series)
    if mode == "analytic":
        return PassSimulation(profile, eff, analytic, analytic, None, mode, e_det)

    if rng_seed is None:
        raise ValueError("montecarlo mode needs an explicit rng_seed")
    if per_pulse:
        table = _montecarlo_per_pulse(profile, rx, src, eff, analytic.y0, e_det, rng_seed,
                                      sync_center_ns, sync_sigma_ns)
    else:
        table = _montecarlo_binned(profile, rx, src, eff, analytic.y0, e_det, rng_seed,
                                   sync_center_ns, sync_sigma_ns)
    observed = observed_series(table, profile, src, analytic.y0)
    return PassSimulation(profile, eff, observed, analytic, table, mode, e_det)


def _sample_streams(seed, n):
    # counter-based generator, one independent stream per time sample
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _event_times(rng, pulse, is_noise, period, center, sigma, window):
    offset = np.where(is_noise,
                      center + (rng.random(pulse.size) - 0.5) * window,
                      rng.normal(center, sigma, pulse.size))
    return pulse * period + offset


def _montecarlo_binned(profile, rx, src, eff, y0, e_det, seed, center, sigma):
    f = src.pulse_rate_hz
    dt = profile.step_s
    pulses_per_bin = int(round(f * dt))
    pvec = _pvec(rx.p_channel)
    eta = eff.matrix()
    streams = _sample_streams(seed, len(profile))
    period = src.period_ns
    tables = []
    for i, rng in enumerate(streams):
        base = int(round(profile.t[i] * f))
        cols = {k: [] for k in ("pulse", "ch", "inten", "noise")}
        for k, (_, alpha, p) in enumerate(src.intensities):
            sig_mean = f * p * dt * pvec * detection_probability(alpha, eta[i])
            noise_mean = f * p * dt * pvec * y0[i]
            for noise, means in ((False, sig_mean), (True, noise_mean)):
                counts = rng.poisson(means)
                for ch in range(4):
                    c = int(counts[ch])
                    if c:
                        cols["pulse"].append(base + rng.integers(0, pulses_per_bin, c))
                        cols["ch"].append(np.full(c, ch, dtype=np.int8))
                        cols["inten"].append(np.full(c, k, dtype=np.int8))
                        cols["noise"].append(np.full(c, noise))
        if not cols["pulse"]:
            continue
        pulse = np.concatenate(cols["pulse"])
        order = np.argsort(pulse, kind="stable")
        pulse = pulse[order]
        ch = np.concatenate(cols["ch"])[order]
        inten = np.concatenate(cols["inten"])[order]
        noise = np.concatenate(cols["noise"])[order]
        u = rng.random((3, pulse.size))
        ab, abit, bbit = kernels.assign_bits(ch, noise, e_det[i][ch], u[0], u[1], u[2])
        ts = _event_times(rng, pulse, noise, period, center, sigma, rx.filter_window_ns)
        tables.append(DetectionTable(pulse, ch, ab, abit, bbit, inten, ts, noise))
    return DetectionTable.concat(tables)


def _montecarlo_per_pulse(profile, rx, src, eff, y0, e_det, seed, center, sigma):
    f = src.pulse_rate_hz
    dt = profile.step_s
    pulses_per_bin = int(round(f * dt))
    if pulses_per_bin * len(profile) > MAX_PER_PULSE:
        raise ValueError(f"per-pulse Monte Carlo limited to {MAX_PER_PULSE} pulses; "
                         "lower pulse_rate_hz or use the binned sampler")
    pvec = _pvec(rx.p_channel)
    probs = np.array([p for _, _, p in src.intensities])
    alphas = np.array([a for _, a, _ in src.intensities])
    eta = eff.matrix()
    streams = _sample_streams(seed, len(profile))
    tables = []
    for i, rng in enumerate(streams):
        inten = rng.choice(3, size=pulses_per_bin, p=probs)
        # photons split over channels by p_xi: Poisson thinning per channel
        p_signal = -np.expm1(-alphas[:, None] * pvec[None, :] * eta[i][None, :])
        p_noise = y0[i] * pvec
        u = rng.random((pulses_per_bin, 8))
        pulse, ch, ab, abit, bbit, noise, _ = kernels.per_pulse_events(
            inten, p_signal, p_noise, e_det[i], u)
        base = int(round(profile.t[i] * f))
        pulse = pulse + base
        ts = _event_times(rng, pulse, noise, src.period_ns, center, sigma, rx.filter_window_ns)
        tables.append(DetectionTable(pulse, ch, ab, abit, bbit, inten[pulse - base].astype(np.int8),
                                     ts, noise))
    return DetectionTable.concat(tables)


def observed_series(table, profile, src, y0):
    """Per-sample sifted rates and QBER measured from detection events."""
    n = len(profile)
    dt = profile.step_s
    f = src.pulse_rate_hz
    t0 = profile.t[0] if n else 0.0
    sample = np.clip(((table.pulse_index / f) - t0) // dt, 0, max(n - 1, 0)).astype(np.int64)
    sifted = table.alice_basis == table.bob_basis
    err = sifted & (table.alice_bit != table.bob_bit)
    rate, n_err, qber = {}, {}, {}
    for k, name in enumerate(INTENSITIES):
        sel = table.intensity == k
        s = np.bincount(sample[sel & sifted], minlength=n)[:n].astype(np.float64)
        e = np.bincount(sample[sel & err], minlength=n)[:n].astype(np.float64)
        rate[name] = s / dt
        n_err[name] = e / dt
        with np.errstate(invalid="ignore", divide="ignore"):
            qber[name] = np.where(s > 0, e / np.where(s > 0, s, 1), 0.0)
    return SiftedRateSeries(np.asarray(profile.t), rate, qber, np.asarray(y0), n_err)


# ---------------------------------------------------------------------------
# timing

def simulate_timing(n_signal, n_noise, period_ns, center_ns=SYNC_CENTER_NS, sigma_ns=SYNC_SIGMA_NS,
                    rng=None, n_periods=1_000_000):
    """Raw arrival times: Gaussian signal around ``center_ns`` and uniform noise.

    Returns ``(timestamps_ns, is_noise)``; pulses are spread over ``n_periods``.
    """
    rng = np.random.default_rng(rng)
    sig_pulse = rng.integers(0, n_periods, n_signal)
    noise_pulse = rng.integers(0, n_periods, n_noise)
    ts = np.concatenate([sig_pulse * period_ns + rng.normal(center_ns, sigma_ns, n_signal),
                         noise_pulse * period_ns + rng.random(n_noise) * period_ns])
    is_noise = np.concatenate([np.zeros(n_signal, bool), np.ones(n_noise, bool)])
    return ts, is_noise


def temporal_filter(events, window_ns, center_ns, period_ns):
    """Keep events whose arrival phase lies within ``window_ns/2`` of ``center_ns``.

    ``events`` is a :class:`DetectionTable`, a list of :class:`DetectionRecord`
    or a bare array of timestamps; the same kind is returned.
    """
    if not window_ns > 0:
        raise ValueError("window_ns must be positive")
    if isinstance(events, DetectionTable):
        return events.take(kernels.window_mask(events.timestamp_ns, period_ns, center_ns, window_ns / 2))
    if isinstance(events, list):
        if not events:
            return []
        ts = np.array([e.timestamp_ns for e in events])
        keep = kernels.window_mask(ts, period_ns, center_ns, window_ns / 2)
        return [e for e, k in zip(events, keep) if k]
    ts = np.asarray(events, dtype=np.float64)
    return ts[kernels.window_mask(ts, period_ns, center_ns, window_ns / 2)]


@dataclass(frozen=True)
class SyncFit:
    counts: np.ndarray
    edges: np.ndarray
    mean_ns: float
    sigma_ns: float
    amplitude: float
    floor: float

    @property
    def peak_to_floor(self):
        per_bin_peak = self.amplitude * (self.edges[1] - self.edges[0]) / (
            self.sigma_ns * math.sqrt(2 * math.pi))
        return (per_bin_peak + self.floor) / self.floor if self.floor > 0 else math.inf


def sync_histogram(events, bin_ns=0.1, period_ns=10.0):
    """Fold arrival times modulo the pulse period and fit a Gaussian on a flat floor.

    The Gaussian is integrated over each bin, so a spike confined to one bin
    fits with a sigma below the bin width.
    """
    from .fitting import FitError, least_squares

    if not bin_ns > 0:
        raise ValueError("bin_ns must be positive")
    ts = events.timestamp_ns if isinstance(events, DetectionTable) else np.asarray(events, np.float64)
    nbins = int(round(period_ns / bin_ns))
    counts = kernels.fold_histogram(ts, period_ns, bin_ns, nbins)
    edges = np.arange(nbins + 1) * bin_ns
    if counts.sum() == 0:
        raise SyncFitError("no events to histogram")

    # rotate so the peak sits mid-period; avoids wrap-around in the fit
    peak = int(np.argmax(counts))
    shift = nbins // 2 - peak
    rolled = np.roll(counts, shift).astype(np.float64)
    floor0 = float(np.median(rolled))
    top = float(rolled.max())
    if top < 2.0 * max(floor0, 1e-300) or top - floor0 < 5.0 * math.sqrt(max(floor0, 1.0)):
        raise SyncFitError("histogram has no dominant peak (peak-to-floor < 2)")

    lo, hi = edges[:-1], edges[1:]
    excess = np.clip(rolled - floor0, 0, None)
    centers = 0.5 * (lo + hi)
    m0 = float(np.sum(excess * centers) / excess.sum())
    s0 = float(np.sqrt(max(np.sum(excess * (centers - m0) ** 2) / excess.sum(), bin_ns ** 2 / 4)))

    def model(p, x=None):
        a, m, s, b = p
        return a * (ndtr((hi - m) / s) - ndtr((lo - m) / s)) + b

    weights = 1.0 / np.sqrt(np.maximum(rolled, 1.0))
    try:
        fit = least_squares(model, rolled, [excess.sum(), m0, s0, floor0],
                            bounds=([0, 0, 1e-6 * bin_ns, 0], [np.inf, period_ns, period_ns, np.inf]),
                            weights=weights, names=("amplitude", "mean", "sigma", "floor"))
    except FitError as exc:
        raise SyncFitError(str(exc)) from None
    a, m, s, b = (fit.params[k] for k in ("amplitude", "mean", "sigma", "floor"))
    mean = (m - shift * bin_ns) % period_ns
    return SyncFit(counts, edges, float(mean), float(s), float(a), float(b))
