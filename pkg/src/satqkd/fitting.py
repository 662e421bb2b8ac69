"""Levenberg-Marquardt fitting of the count-rate and noise models."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import CHANNELS
from .link_model import count_rate, link_efficiency, noise_rate
from .protocol import _atomic_write, _read_csv

_EPS = np.finfo(float).eps


class FitError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ParameterAtBoundWarning(RuntimeWarning):
    pass


class IllConditionedWarning(RuntimeWarning):
    pass


@dataclass
class FitResult:
    params: dict
    stderr: dict
    residual_rms: float
    iterations: int
    converged: bool
    at_bound: list = field(default_factory=list)
    message: str = ""
    covariance: np.ndarray = None
    residuals: np.ndarray = None

    def to_dict(self):
        return {"params": self.params, "stderr": self.stderr, "residual_rms": self.residual_rms,
                "iterations": self.iterations, "converged": self.converged,
                "at_bound": self.at_bound, "message": self.message}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def forward_jacobian(func, p, lower=None, upper=None, f0=None):
    """Forward differences; steps flip sign where they would leave the box."""
    p = np.asarray(p, dtype=np.float64)
    f0 = func(p) if f0 is None else f0
    jac = np.empty((f0.size, p.size))
    for j in range(p.size):
        h = math.sqrt(_EPS) * max(abs(p[j]), 1.0)
        if upper is not None and p[j] + h > upper[j]:
            h = -h
        q = p.copy()
        q[j] += h
        h = q[j] - p[j]
        jac[:, j] = (func(q) - f0) / h
    return jac


def central_jacobian(func, p, h):
    p = np.asarray(p, dtype=np.float64)
    cols = []
    for j in range(p.size):
        a, b = p.copy(), p.copy()
        a[j] += h
        b[j] -= h
        cols.append((func(a) - func(b)) / (2 * h))
    return np.column_stack(cols)


def least_squares(model, data, init, bounds=None, tol=1e-10, max_iter=200, weights=None,
                  names=None, raise_on_failure=True):
    """Minimise ``sum(weights**2 * (model(p) - data)**2)`` by Levenberg-Marquardt.

    ``bounds`` is ``(lower, upper)``; iterates are projected onto the box.
    Stops when the relative parameter step or the gradient infinity-norm
    falls below ``tol``.
    """
    data = np.asarray(data, dtype=np.float64).ravel()
    p = np.array(init, dtype=np.float64)
    n = p.size
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(n))
    lower = np.full(n, -np.inf) if bounds is None else np.asarray(bounds[0], dtype=np.float64)
    upper = np.full(n, np.inf) if bounds is None else np.asarray(bounds[1], dtype=np.float64)
    if not np.all(np.isfinite(p)) or np.any(p < lower) or np.any(p > upper):
        raise ValueError("initial parameters must be finite and inside the bounds")
    w = np.ones_like(data) if weights is None else np.asarray(weights, dtype=np.float64).ravel()

    def resid(q):
        return w * (np.asarray(model(q), dtype=np.float64).ravel() - data)

    r = resid(p)
    cost = 0.5 * float(r @ r)
    lam = 0.0
    converged = False
    message = "maximum iterations exceeded"
    it = 0
    jac = forward_jacobian(resid, p, lower, upper, r)
    while it < max_iter:
        g = jac.T @ r
        if np.max(np.abs(_free_gradient(g, p, lower, upper)), initial=0.0) < tol:
            converged, message = True, "gradient norm below tolerance"
            break
        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-300)
        # parameters pinned at a bound by an outward gradient are held fixed
        free = ~(((p <= lower) & (g > 0)) | ((p >= upper) & (g < 0)))
        fi = np.flatnonzero(free)
        accepted = False
        while True:
            a = (jtj + lam * np.diag(diag))[np.ix_(fi, fi)]
            step = np.zeros(n)
            try:
                step[fi] = np.linalg.solve(a, -g[fi])
            except np.linalg.LinAlgError:
                step[fi] = np.linalg.lstsq(a, -g[fi], rcond=None)[0]
            trial = np.clip(p + step, lower, upper)
            with np.errstate(over="ignore", invalid="ignore"):
                r_new = resid(trial)
                cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam = 1e-3 * float(diag.max()) if lam == 0.0 else lam * 10.0
            if lam > 1e20 * float(diag.max()):
                break
        if not accepted:
            converged, message = True, "no further decrease possible"
            break
        it += 1
        dp = trial - p
        p, r, cost = trial, r_new, cost_new
        lam = lam / 10.0 if lam > 1e-12 * float(diag.max()) else 0.0
        jac = forward_jacobian(resid, p, lower, upper, r)
        if np.linalg.norm(dp) <= tol * (np.linalg.norm(p) + tol):
            converged, message = True, "relative step below tolerance"
            break

    m = data.size
    jtj = jac.T @ jac
    dof = max(m - n, 1)
    cov = np.linalg.pinv(jtj) * (2.0 * cost / dof)
    stderr = np.sqrt(np.clip(np.diag(cov), 0, None))
    raw = np.asarray(model(p), dtype=np.float64).ravel() - data
    at_bound = []
    g = jac.T @ r
    for j in range(n):
        # at a bound with the descent direction pointing outward
        if (p[j] <= lower[j] and g[j] > 0) or (p[j] >= upper[j] and g[j] < 0):
            at_bound.append(names[j])
    if at_bound:
        warnings.warn(f"parameter(s) at bound: {', '.join(at_bound)}", ParameterAtBoundWarning,
                      stacklevel=2)
    result = FitResult({k: float(v) for k, v in zip(names, p)},
                       {k: float(v) for k, v in zip(names, stderr)},
                       float(np.sqrt(np.mean(raw ** 2))) if m else 0.0, it, converged, at_bound,
                       message, cov, raw)
    if not converged and raise_on_failure:
        raise FitError(f"no convergence after {max_iter} iterations", result)
    return result


def _free_gradient(g, p, lower, upper):
    # gradient components pushing into an active bound are not descent directions
    g = g.copy()
    g[(p <= lower) & (g > 0)] = 0.0
    g[(p >= upper) & (g < 0)] = 0.0
    return g


# ---------------------------------------------------------------------------
# observation data

OBS_COLUMNS = ("t_s",) + tuple(f"counts_{c}" for c in CHANNELS)


@dataclass(frozen=True)
class ObservationSeries:
    t: np.ndarray
    counts: dict
    noise: np.ndarray = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        counts = {c: np.asarray(self.counts[c], dtype=np.float64) for c in CHANNELS}
        for c in CHANNELS:
            if counts[c].shape != t.shape:
                raise ValueError(f"counts_{c} length differs from t")
            if np.any(counts[c] < 0):
                raise ValueError(f"counts_{c} must be nonnegative")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "counts", counts)
        if self.noise is not None:
            object.__setattr__(self, "noise", np.asarray(self.noise, dtype=np.float64))

    def write_csv(self, path, comments=()):
        cols = list(OBS_COLUMNS) + (["noise"] if self.noise is not None else [])
        lines = [f"# {c}\n" for c in comments] + [",".join(cols) + "\n"]
        for i in range(self.t.size):
            vals = [self.t[i]] + [self.counts[c][i] for c in CHANNELS]
            if self.noise is not None:
                vals.append(self.noise[i])
            lines.append(",".join(repr(float(v)) for v in vals) + "\n")
        _atomic_write(path, "".join(lines))

    @classmethod
    def load_csv(cls, path):
        header, rows = _read_csv(path)
        for c in OBS_COLUMNS:
            if c not in header:
                raise ValueError(f"{path}: missing column {c}")
        col = {c: np.array([float(r[header.index(c)]) for r in rows]) for c in header}
        return cls(col["t_s"], {c: col[f"counts_{c}"] for c in CHANNELS}, col.get("noise"))


def _aligned_geometry(obs_t, profile):
    t = np.asarray(profile.t)
    if obs_t.size and (obs_t.min() < t[0] - 1e-6 or obs_t.max() > t[-1] + 1e-6):
        raise ValueError("observation times fall outside the pass profile")
    return np.interp(obs_t, t, profile.range_m), np.interp(obs_t, t, profile.elevation_rad)


def _check_span(elev):
    if elev.size and math.degrees(elev.max() - elev.min()) < 15.0:
        warnings.warn("elevation span below 15 deg: extinction and optical efficiency are "
                      "poorly separable", IllConditionedWarning, stacklevel=3)


def count_rate_model(rng, elev, rx, src, kappa, eta_opt):
    """Stacked (4, n) model rates for channels H, V, D, A."""
    out = []
    for c in CHANNELS:
        eta, _ = link_efficiency(rng, elev, rx, src, eta_opt[c], kappa)
        out.append(count_rate(eta, rx, src, c))
    return np.vstack(out)


DEFAULT_FREE = ("kappa",) + CHANNELS


def fit_count_rate(obs, profile, rx, src, free=DEFAULT_FREE, init=None, tol=1e-10, max_iter=200):
    """Fit extinction and per-channel optical efficiencies to per-channel count rates.

    ``free`` lists the parameters to fit: ``"kappa"`` and any of the channel
    names. Fixed ones are taken from ``rx``. Residuals are weighted by
    ``1/sqrt(max(counts, 1))``.
    """
    free = tuple(free)
    unknown = set(free) - set(DEFAULT_FREE)
    if unknown:
        raise ValueError(f"unknown free parameter(s): {', '.join(sorted(unknown))}")
    rng, elev = _aligned_geometry(obs.t, profile)
    _check_span(elev)
    data = np.vstack([obs.counts[c] for c in CHANNELS])
    weights = 1.0 / np.sqrt(np.maximum(data, 1.0))
    init = dict(init or {})
    p0 = [init.get(k, 0.3 if k == "kappa" else 0.25) for k in free]
    lower = [0.0 if k == "kappa" else 1e-6 for k in free]
    upper = [5.0 if k == "kappa" else 1.0 for k in free]

    def model(p):
        vals = dict(zip(free, p))
        kappa = vals.get("kappa", rx.kappa)
        eta_opt = {c: vals.get(c, rx.eta_opt[c]) for c in CHANNELS}
        return count_rate_model(rng, elev, rx, src, kappa, eta_opt)

    names = tuple("kappa" if k == "kappa" else f"eta_opt_{k}" for k in free)
    return least_squares(model, data, p0, bounds=(lower, upper), tol=tol, max_iter=max_iter,
                         weights=weights, names=names)


def fit_noise(noise_series, profile, rx, src, fixed_eta_opt_total=0.27, tol=1e-10, max_iter=200,
              init_kappa=0.3):
    """Fit ``N = T * eta(t) + C`` over ``T``, ``C`` and the extinction coefficient."""
    noise = noise_series.noise if isinstance(noise_series, ObservationSeries) else None
    t = noise_series.t if isinstance(noise_series, ObservationSeries) else np.asarray(noise_series[0])
    if noise is None:
        noise = np.asarray(noise_series[1], dtype=np.float64)
    if noise.size == 0:
        raise ValueError("noise series is empty")
    rng, elev = _aligned_geometry(np.asarray(t, dtype=np.float64), profile)
    _check_span(elev)

    def eta_mean(kappa):
        return link_efficiency(rng, elev, rx, src, fixed_eta_opt_total, kappa)[0]

    # linear start for T, C at the initial extinction
    e0 = eta_mean(init_kappa)
    A = np.column_stack([e0, np.ones_like(e0)])
    t0, c0 = np.linalg.lstsq(A, noise, rcond=None)[0]
    t0, c0 = max(float(t0), 0.0), max(float(c0), 0.0)
    scale = np.array([1e6, 1e2, 1.0])

    def model(p):
        T, C, kappa = p * scale
        return T * eta_mean(kappa) + C

    weights = 1.0 / np.sqrt(np.maximum(noise, 1.0))
    res = least_squares(model, noise, [t0 / scale[0], c0 / scale[1], init_kappa],
                        bounds=([0, 0, 0], [np.inf, np.inf, 5.0]), tol=tol, max_iter=max_iter,
                        weights=weights, names=("T", "C", "kappa"))
    for k, s in zip(("T", "C", "kappa"), scale):
        res.params[k] *= s
        res.stderr[k] *= s
    return res


# ---------------------------------------------------------------------------
# synthetic data

def synthetic_observations(profile, rx, src, rng=None, poisson=True, with_noise=True):
    """Per-channel count rates (and out-of-window noise) drawn from the model.

    Counts are integrated over each ``profile.step_s`` bin. The noise column
    mimics the out-of-window estimate: clicks in one filter-window-wide
    frame scaled by ``rx.filter_suppression``.
    """
    rng = np.random.default_rng(rng)
    r, e = profile.range_m, profile.elevation_rad
    dt = profile.step_s
    rates = count_rate_model(r, e, rx, src, rx.kappa, rx.eta_opt)
    eta_mean = np.mean([link_efficiency(r, e, rx, src, rx.eta_opt[c])[0] for c in CHANNELS], axis=0)
    n_rate = noise_rate(eta_mean, rx)
    if poisson:
        counts = rng.poisson(rates * dt) / dt
        noise = rng.poisson(n_rate * dt / rx.filter_suppression) * rx.filter_suppression / dt
    else:
        counts, noise = rates, n_rate
    return ObservationSeries(np.asarray(profile.t), {c: counts[i] for i, c in enumerate(CHANNELS)},
                             noise if with_noise else None)
