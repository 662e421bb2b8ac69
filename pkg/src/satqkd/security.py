"""Finite-key decoy-state bounds and the four-detector efficiency-mismatch key rate.

Mismatch rate per emitted pulse, summed over the bases b in {z, x}::

    K = sum_b p_b**2 p_det_b [ h((1 - d_bb)/2)
                               - h((1 - sqrt(d_bc**2 + d_bb**2))/2)
                               - f_ec h(Q_b) ]

with c the conjugate basis and

    d_bb = (p_b0 - p_b1) / p_det_b
    d_bc = sqrt(eta_?) (t_b - 2 q_c) / p_det_b,   t_b = p_b0 + p_b1 / eta_b

The square-root prefactor of ``d_bc`` has two readings. ``convention="main"``
(default) takes the conjugate basis ratio, ``eta_c``; ``convention="appendix"``
takes the same basis ratio, ``eta_b``.

Decoy bounds are the vacuum + weak decoy estimators with every gain and
error-gain replaced by the worst end of its Chernoff interval::

    Y1_L = mu / (mu nu - nu^2) [Q_nu^L e^nu - Q_mu^U e^mu nu^2/mu^2 - (mu^2 - nu^2)/mu^2 Y0^U]
    e1_U = (EQ_nu^U e^nu - EQ_0^L) / (nu Y1_L)

where gains are sifted counts per basis-matched pulse.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

DEFAULT_EPSILON = 1e-9
F_EC = 1.44


class InvalidParamsError(ValueError):
    pass


class KeyRateDiagnostic(RuntimeWarning):
    pass


def binary_entropy(p):
    """Shannon entropy of a Bernoulli(p) variable, in bits."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("binary entropy defined on [0, 1] only")
    inner = (arr > 0) & (arr < 1)
    q = np.where(inner, arr, 0.5)
    h = np.where(inner, -q * np.log2(q) - (1 - q) * np.log2(1 - q), 0.0)
    return float(h) if h.ndim == 0 else h


# ---------------------------------------------------------------------------
# mismatch bound

@dataclass(frozen=True)
class MismatchParams:
    p_z: float
    p_x: float
    p_det_z: float
    p_det_x: float
    q_z_bit0: float
    q_z_bit1: float
    q_x_bit0: float
    q_x_bit1: float
    eta_z: float
    eta_x: float
    qber_z: float
    qber_x: float
    q_err_z: float
    q_err_x: float
    f_ec: float = F_EC
    # ratio of detection probabilities between bases; informational only
    t_xz: float = 1.0

    def __post_init__(self):
        for name in ("eta_z", "eta_x"):
            if not 0 < getattr(self, name) <= 1:
                raise InvalidParamsError(f"{name} must lie in (0, 1]")
        for name in ("p_z", "p_x", "p_det_z", "p_det_x", "q_z_bit0", "q_z_bit1", "q_x_bit0",
                     "q_x_bit1", "qber_z", "qber_x", "q_err_z", "q_err_x"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise InvalidParamsError(f"{name} must lie in [0, 1]")
        for b in ("z", "x"):
            tot = getattr(self, f"q_{b}_bit0") + getattr(self, f"q_{b}_bit1")
            if abs(tot - getattr(self, f"p_det_{b}")) > 1e-12:
                raise InvalidParamsError(f"p_det_{b} must equal q_{b}_bit0 + q_{b}_bit1")
        if self.f_ec < 1:
            raise InvalidParamsError("f_ec must be >= 1")

    @classmethod
    def from_detector_counts(cls, clicks, errors, pulses, eta_z, eta_x, p_z=0.5, f_ec=F_EC):
        """Build parameters from basis-matched click and error tallies.

        ``clicks[b][i]`` counts clicks of the bit-``i`` detector of basis ``b``
        (``"z"``/``"x"``) among ``pulses[b]`` pulses where both parties chose
        ``b``; ``errors[b][i]`` counts those clicks that disagreed with Alice.
        Bit 0 must be the detector with the higher efficiency.
        """
        kw = {}
        for b, eta in (("z", eta_z), ("x", eta_x)):
            n = float(pulses[b])
            c0, c1 = clicks[b]
            e0, e1 = errors[b]
            kw[f"q_{b}_bit0"] = c0 / n
            kw[f"q_{b}_bit1"] = c1 / n
            kw[f"p_det_{b}"] = kw[f"q_{b}_bit0"] + kw[f"q_{b}_bit1"]
            kw[f"qber_{b}"] = (e0 + e1) / (c0 + c1) if c0 + c1 else 0.0
            # erroneous ones weighted by 1/eta, erroneous zeros by 1
            kw[f"q_err_{b}"] = (e1 / eta + e0) / n
        return cls(p_z=p_z, p_x=1 - p_z, eta_z=eta_z, eta_x=eta_x, f_ec=f_ec, **kw)

    def swapped(self):
        """Same parameters with the roles of the Z and X bases exchanged."""
        return MismatchParams(self.p_x, self.p_z, self.p_det_x, self.p_det_z, self.q_x_bit0,
                              self.q_x_bit1, self.q_z_bit0, self.q_z_bit1, self.eta_x, self.eta_z,
                              self.qber_x, self.qber_z, self.q_err_x, self.q_err_z, self.f_ec,
                              1.0 / self.t_xz if self.t_xz else self.t_xz)


def transparency(q_bit0, q_bit1, eta):
    return q_bit0 + q_bit1 / eta


def delta_terms(m, convention="main"):
    """Return ``(d_zz, d_zx, d_xx, d_xz)``."""
    if convention not in ("main", "appendix"):
        raise ValueError(f"unknown convention {convention!r}")
    if m.p_det_z == 0 or m.p_det_x == 0:
        raise ZeroDivisionError("detection probability is zero")
    t_z = transparency(m.q_z_bit0, m.q_z_bit1, m.eta_z)
    t_x = transparency(m.q_x_bit0, m.q_x_bit1, m.eta_x)
    root_zx = m.eta_x if convention == "main" else m.eta_z
    root_xz = m.eta_z if convention == "main" else m.eta_x
    d_zz = (m.q_z_bit0 - m.q_z_bit1) / m.p_det_z
    d_zx = math.sqrt(root_zx) * (t_z - 2 * m.q_err_x) / m.p_det_z
    d_xx = (m.q_x_bit0 - m.q_x_bit1) / m.p_det_x
    d_xz = math.sqrt(root_xz) * (t_x - 2 * m.q_err_z) / m.p_det_x
    return d_zz, d_zx, d_xx, d_xz


@dataclass
class BasisTerms:
    weight: float           # p_b**2 * p_det_b
    delta_same: float
    delta_cross: float
    radius: float
    eve_ignorance: float    # h((1-d_bb)/2) - h((1-radius)/2)
    leakage: float          # f_ec h(Q_b)
    bracket: float
    radius_clamped: bool = False


def _basis_terms(weight, d_same, d_cross, qber, f_ec):
    for d in (d_same, d_cross):
        if abs(d) > 1 + 1e-9:
            raise InvalidParamsError(f"delta term {d:.6g} exceeds 1 in magnitude")
    d_same = max(-1.0, min(1.0, d_same))
    d_cross = max(-1.0, min(1.0, d_cross))
    radius = math.sqrt(d_cross ** 2 + d_same ** 2)
    clamped = radius > 1.0
    if clamped:
        warnings.warn(f"delta radius {radius:.12g} capped at 1", KeyRateDiagnostic, stacklevel=3)
        radius = 1.0
    eve = binary_entropy((1 - d_same) / 2) - binary_entropy((1 - radius) / 2)
    leak = f_ec * binary_entropy(qber)
    return BasisTerms(weight, d_same, d_cross, radius, eve, leak, eve - leak, clamped)


def mismatch_key_terms(m, convention="main"):
    d_zz, d_zx, d_xx, d_xz = delta_terms(m, convention)
    z = _basis_terms(m.p_z ** 2 * m.p_det_z, d_zz, d_zx, m.qber_z, m.f_ec)
    x = _basis_terms(m.p_x ** 2 * m.p_det_x, d_xx, d_xz, m.qber_x, m.f_ec)
    return {"z": z, "x": x}


def mismatch_key_rate(m, convention="main"):
    """Secret bits per emitted pulse, clamped at zero."""
    terms = mismatch_key_terms(m, convention)
    k = sum(t.weight * t.bracket for t in terms.values())
    if k < 0:
        warnings.warn("negative key rate clamped to 0", KeyRateDiagnostic, stacklevel=2)
        return 0.0
    return k


# ---------------------------------------------------------------------------
# Chernoff intervals

def _poisson_exponent(lam, x):
    # Chernoff exponent of P(X <= x) (lam > x) or P(X >= x) (lam < x), X ~ Poisson(lam)
    if x == 0:
        return lam
    return lam - x + x * math.log(x / lam)


def _bisect(f, lo, hi, rtol=1e-9):
    flo = f(lo)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= rtol * max(abs(hi), abs(lo), 1e-300):
            break
    return 0.5 * (lo + hi)


def chernoff_interval(observed, failure_prob=DEFAULT_EPSILON):
    """Two-sided interval for a Poisson mean given one observation.

    Each tail gets ``failure_prob / 2``; the ends solve
    ``lam - x + x ln(x / lam) = ln(2 / failure_prob)`` by bisection.
    """
    x = float(observed)
    if x < 0:
        raise ValueError("observed count must be nonnegative")
    if not 0 < failure_prob < 1:
        raise ValueError("failure_prob must lie in (0, 1)")
    target = math.log(2.0 / failure_prob)
    g = lambda lam: _poisson_exponent(lam, x) - target  # noqa: E731
    hi = x + target + math.sqrt(2 * x * target) + 1.0
    while g(hi) < 0:
        hi *= 2
    upper = _bisect(g, max(x, 1e-300), hi)
    if x == 0:
        return 0.0, upper
    lo = x
    # g(x) = -target < 0 and g -> +inf as lam -> 0
    lo_end = x * math.exp(-1.0 - target / x) if x > 0 else 0.0
    while g(lo_end) < 0:
        lo_end *= 0.5
    lower = _bisect(g, lo_end, lo)
    return lower, upper


# ---------------------------------------------------------------------------
# decoy-state analysis

@dataclass(frozen=True)
class IntensityStats:
    sent_pulses: float
    sifted_bits: float
    error_bits: float

    def __post_init__(self):
        if not 0 <= self.error_bits <= self.sifted_bits <= self.sent_pulses:
            raise ValueError("need 0 <= error_bits <= sifted_bits <= sent_pulses")


@dataclass(frozen=True)
class DecoyStats:
    signal: IntensityStats
    decoy: IntensityStats
    vacuum: IntensityStats
    failure_prob: float = DEFAULT_EPSILON
    # probability that Alice's and Bob's bases agree
    sift_fraction: float = 0.5

    @classmethod
    def from_counts(cls, counts, failure_prob=DEFAULT_EPSILON, sift_fraction=0.5):
        """``counts[name] = (sent, sifted, errors)`` for signal, decoy, vacuum."""
        return cls(*(IntensityStats(*counts[n]) for n in ("signal", "decoy", "vacuum")),
                   failure_prob=failure_prob, sift_fraction=sift_fraction)

    def to_dict(self):
        return asdict(self)


@dataclass
class DecoyBounds:
    y1_lower: float
    e1_upper: float
    corners: dict = field(default_factory=dict)
    feasible: bool = True
    message: str = ""


class InfeasibleStatisticsWarning(RuntimeWarning):
    pass


def decoy_bounds(stats, src, failure_prob=None):
    mu, nu = src.mu, src.nu
    if not nu < mu:
        raise ValueError("decoy intensity must be below the signal intensity")
    eps = stats.failure_prob if failure_prob is None else failure_prob
    m = {k: getattr(stats, k).sent_pulses * stats.sift_fraction for k in ("signal", "decoy", "vacuum")}
    if any(v <= 0 for v in m.values()):
        raise ValueError("every intensity needs sent pulses")
    n_mu = chernoff_interval(stats.signal.sifted_bits, eps)
    n_nu = chernoff_interval(stats.decoy.sifted_bits, eps)
    n_0 = chernoff_interval(stats.vacuum.sifted_bits, eps)
    err_nu = chernoff_interval(stats.decoy.error_bits, eps)
    err_0 = chernoff_interval(stats.vacuum.error_bits, eps)
    q_mu_u = n_mu[1] / m["signal"]
    q_nu_l = n_nu[0] / m["decoy"]
    y0_u = n_0[1] / m["vacuum"]
    eq_nu_u = err_nu[1] / m["decoy"]
    eq_0_l = err_0[0] / m["vacuum"]
    corners = {"Q_mu_upper": q_mu_u, "Q_nu_lower": q_nu_l, "Y0_upper": y0_u,
               "EQ_nu_upper": eq_nu_u, "EQ_0_lower": eq_0_l,
               "n_mu": list(n_mu), "n_nu": list(n_nu), "n_0": list(n_0),
               "err_nu": list(err_nu), "err_0": list(err_0)}
    y1 = mu / (mu * nu - nu * nu) * (q_nu_l * math.exp(nu) - q_mu_u * math.exp(mu) * nu * nu / (mu * mu)
                                     - (mu * mu - nu * nu) / (mu * mu) * y0_u)
    if y1 <= 0:
        warnings.warn("single-photon yield bound is not positive; reporting 0",
                      InfeasibleStatisticsWarning, stacklevel=2)
        return DecoyBounds(0.0, 0.5, corners, False, "Y1 lower bound <= 0")
    e1 = (eq_nu_u * math.exp(nu) - eq_0_l) / (nu * y1)
    e1 = min(max(e1, 0.0), 0.5)
    return DecoyBounds(y1, e1, corners)


def single_photon_bits(stats, bounds, src):
    """Lower bound on sifted signal bits that came from single-photon pulses."""
    m_mu = stats.signal.sent_pulses * stats.sift_fraction
    n1 = m_mu * src.mu * math.exp(-src.mu) * bounds.y1_lower
    return min(n1, stats.signal.sifted_bits)


def ec_leakage_bits(n, qber, f_ec):
    return f_ec * n * binary_entropy(qber)


def decoy_key_length(stats, bounds, qber_signal, f_ec=F_EC, src=None):
    """``n1 (1 - h(e1)) - f_ec n_sift h(Q)``, floored at zero."""
    if src is None:
        from .config import SourceConfig
        src = SourceConfig()
    n1 = single_photon_bits(stats, bounds, src) if bounds.feasible else 0.0
    length = n1 * (1 - binary_entropy(bounds.e1_upper)) - ec_leakage_bits(
        stats.signal.sifted_bits, qber_signal, f_ec)
    return max(int(math.floor(length)), 0)


# ---------------------------------------------------------------------------
# composition: mismatch bound on the single-photon part

@dataclass(frozen=True)
class DetectorTallies:
    """Basis-matched signal-state clicks and errors per detector.

    ``clicks[b] = (strong, weak)`` and ``errors[b]`` likewise, for b in
    ``"z"``, ``"x"``; ``pulses[b]`` is the number of pulses where both
    parties chose ``b``.
    """

    clicks: dict
    errors: dict
    pulses: dict

    @classmethod
    def from_channels(cls, clicks, errors, sent_pulses, p_z=0.5):
        """Tallies from per-channel (H, V, D, A) counts.

        Within each basis the detector with more clicks is labelled bit 0, so
        the efficiency ratios are <= 1 as the bound requires.
        """
        out_c, out_e = {}, {}
        for b, (i, j) in (("z", (0, 1)), ("x", (2, 3))):
            if clicks[j] > clicks[i]:
                i, j = j, i
            out_c[b] = (float(clicks[i]), float(clicks[j]))
            out_e[b] = (float(errors[i]), float(errors[j]))
        pulses = {"z": sent_pulses * p_z * p_z, "x": sent_pulses * (1 - p_z) ** 2}
        return cls(out_c, out_e, pulses)

    def qber(self, b):
        c = sum(self.clicks[b])
        return sum(self.errors[b]) / c if c else 0.0

    def to_dict(self):
        return {"clicks": {k: list(v) for k, v in self.clicks.items()},
                "errors": {k: list(v) for k, v in self.errors.items()},
                "pulses": dict(self.pulses)}


def mismatch_params_from_tallies(tallies, eta_z, eta_x, p_z=0.5, f_ec=F_EC):
    return MismatchParams.from_detector_counts(tallies.clicks, tallies.errors, tallies.pulses,
                                               eta_z, eta_x, p_z=p_z, f_ec=f_ec)


def mismatch_key_length(stats, bounds, tallies, src, eta_z, eta_x, f_ec=F_EC, p_z=0.5,
                        convention="main"):
    """Pass key length with the mismatch bound applied to single-photon detections.

    The single-photon share of each detector's clicks is the decoy lower
    bound ``n1 / n_sift``; its error rate is ``e1_U``, split over the two
    detectors in proportion to their clicks. Eve's ignorance per basis comes
    from the mismatch bracket on these single-photon quantities, and error
    correction leaks ``f_ec h(Q_b)`` on all sifted bits of that basis.
    With ``eta_z = eta_x = 1`` and symmetric detectors this is exactly
    :func:`decoy_key_length`.

    Returns ``(length, details)``.
    """
    n_sift = stats.signal.sifted_bits
    n1 = single_photon_bits(stats, bounds, src) if bounds.feasible and n_sift else 0.0
    frac = n1 / n_sift if n_sift else 0.0
    e1 = bounds.e1_upper
    clicks1 = {b: (c[0] * frac, c[1] * frac) for b, c in tallies.clicks.items()}
    errors1 = {b: (c[0] * frac * e1, c[1] * frac * e1) for b, c in tallies.clicks.items()}
    details = {"single_photon_fraction": frac, "n1": n1, "e1_upper": e1}
    if n1 <= 0 or any(sum(c) == 0 for c in clicks1.values()):
        details["message"] = "no single-photon detections"
        return 0, details
    m1 = MismatchParams.from_detector_counts(clicks1, errors1, tallies.pulses, eta_z, eta_x,
                                             p_z=p_z, f_ec=f_ec)
    terms = mismatch_key_terms(m1, convention)
    length = 0.0
    for b in ("z", "x"):
        t = terms[b]
        n_b = sum(tallies.clicks[b])
        pulses_b = tallies.pulses[b]
        # weight is p_b^2 p_det_b per emitted pulse; pulses_b = N p_b^2
        p_b = p_z if b == "z" else 1 - p_z
        emitted = pulses_b / (p_b * p_b)
        eve_bits = emitted * t.weight * t.eve_ignorance
        leak = ec_leakage_bits(n_b, tallies.qber(b), f_ec)
        details[b] = {"delta_same": t.delta_same, "delta_cross": t.delta_cross,
                      "radius": t.radius, "radius_clamped": t.radius_clamped,
                      "h_same": binary_entropy((1 - t.delta_same) / 2),
                      "h_radius": binary_entropy((1 - t.radius) / 2),
                      "eve_ignorance": t.eve_ignorance,
                      "single_photon_bits": emitted * t.weight, "eve_bits": eve_bits, "sifted_bits": n_b,
                      "qber": tallies.qber(b), "h_qber": binary_entropy(tallies.qber(b)),
                      "leakage_bits": leak}
        length += eve_bits - leak
    details["mismatch_params"] = asdict(m1)
    details["convention"] = convention
    if length < 0:
        warnings.warn("negative key length clamped to 0", KeyRateDiagnostic, stacklevel=2)
    return max(int(math.floor(length)), 0), details


@dataclass
class KeyReport:
    sifted_total_bits: float
    qber_signal: float
    decoy_key_bits: int
    mismatch_key_bits: int
    diagnostics: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def analyze(stats, tallies, src, eta_z=0.60, eta_x=0.51, f_ec=F_EC, p_z=0.5, convention="main",
            sifted_total=None):
    """Run both key-length pipelines and collect every intermediate value."""
    bounds = decoy_bounds(stats, src)
    qber = stats.signal.error_bits / stats.signal.sifted_bits if stats.signal.sifted_bits else 0.0
    decoy_len = decoy_key_length(stats, bounds, qber, f_ec, src)
    mm_len, mm_details = mismatch_key_length(stats, bounds, tallies, src, eta_z, eta_x, f_ec, p_z,
                                             convention)
    if sifted_total is None:
        sifted_total = stats.signal.sifted_bits + stats.decoy.sifted_bits + stats.vacuum.sifted_bits
    diag = {
        "decoy_stats": stats.to_dict(),
        "decoy_bounds": {"y1_lower": bounds.y1_lower, "e1_upper": bounds.e1_upper,
                         "feasible": bounds.feasible, "message": bounds.message,
                         "chernoff_corners": bounds.corners},
        "single_photon_bits": single_photon_bits(stats, bounds, src) if bounds.feasible else 0.0,
        "h_e1": binary_entropy(bounds.e1_upper),
        "h_qber_signal": binary_entropy(qber),
        "ec_leakage_bits": ec_leakage_bits(stats.signal.sifted_bits, qber, f_ec),
        "f_ec": f_ec, "eta_z": eta_z, "eta_x": eta_x, "epsilon": stats.failure_prob,
        "detector_tallies": tallies.to_dict(),
        "mismatch": mm_details,
    }
    return KeyReport(float(sifted_total), float(qber), decoy_len, mm_len, diag)
