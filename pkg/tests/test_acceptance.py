"""End-to-end acceptance checks, one printed PASS/FAIL line per criterion.

Each test states its target and tolerance, measures the quantity, prints
the line and then asserts. Targets are fixed reference numbers; where the
implementation disagrees the test fails rather than moving the target.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy.special import erf

import test_fitting as _fit
import test_link_model as _link
import test_postproc as _post
import test_protocol as _proto
import test_security as _sec
from conftest import ACCEPTANCE_LINES, flat_profile
from satqkd.config import CHANNELS, Config
from satqkd.fitting import ParameterAtBoundWarning, fit_count_rate, fit_noise, synthetic_observations
from satqkd.geometry import EARTH_RADIUS_M, reference_pass, slant_range
from satqkd.protocol import simulate_pass, simulate_timing, temporal_filter
from satqkd.security import DecoyStats, DetectorTallies, KeyRateDiagnostic, analyze


def report(capsys, label, ok, detail, elapsed):
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail} ({elapsed:.2f} s)"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def within(value, target, rel):
    return abs(value - target) <= rel * abs(target)


def elevation_at_range(range_m, altitude_m, earth_radius_m=EARTH_RADIUS_M):
    s = ((earth_radius_m + altitude_m) ** 2 - earth_radius_m ** 2 - range_m ** 2) / (2 * earth_radius_m * range_m)
    return math.asin(s)


def _signal_rate_at(range_m):
    cfg = Config()
    el = elevation_at_range(range_m, cfg.pass_.orbit_altitude_m)
    assert slant_range(el, cfg.pass_.orbit_altitude_m) == pytest.approx(range_m, rel=1e-12)
    prof = flat_profile(1, range_m=range_m, elevation_deg=math.degrees(el))
    return simulate_pass(prof, cfg.receiver, cfg.source).series.rate["signal"][0], math.degrees(el)


@pytest.mark.parametrize("range_km,target", [(600, 20.7e3), (1100, 2.9e3)])
def test_criterion_1_link_budget(capsys, range_km, target):
    t0 = time.perf_counter()
    rate, el = _signal_rate_at(range_km * 1e3)
    dt = time.perf_counter() - t0
    ok = within(rate, target, 0.25) and dt < 1.0
    report(capsys, f"1 link budget @ {range_km} km", ok,
           f"signal sifted {rate / 1e3:.2f} kbit/s at {el:.1f} deg, target {target / 1e3:.1f} +-25%", dt)


def test_criterion_2_qber(capsys):
    cfg = Config()
    t0 = time.perf_counter()
    sim = simulate_pass(reference_pass(), cfg.receiver, cfg.source)
    q_sig = sim.series.qber_upper["signal"]
    q_vac = sim.series.qber_upper["vacuum"]
    dt = time.perf_counter() - t0
    ok = (0.007 <= q_sig.min() and q_sig.max() <= 0.012 and np.all(np.abs(q_vac - 0.5) <= 0.01) and dt < 1.0)
    report(capsys, "2 QBER", ok,
           f"signal {100 * q_sig.min():.3f}..{100 * q_sig.max():.3f}% in [0.7, 1.2]%, "
           f"vacuum {100 * q_vac.min():.2f}..{100 * q_vac.max():.2f}% (50 +-1%)", dt)


@pytest.mark.parametrize("mode", ["analytic", "montecarlo"])
def test_criterion_3_pass_total(capsys, mode):
    cfg = Config()
    t0 = time.perf_counter()
    sim = simulate_pass(reference_pass(), cfg.receiver, cfg.source, rng_seed=2024, mode=mode,
                        min_elevation_rad=cfg.pass_.min_operational_elevation_rad)
    total = sum(sim.series.totals(sim.profile.step_s).values())
    dt = time.perf_counter() - t0
    limit = 10.0 if mode == "analytic" else 300.0
    ok = within(total, 2491e3, 0.25) and dt < limit
    report(capsys, f"3 pass total ({mode})", ok,
           f"{total / 1e3:.1f} kbit vs 2491 kbit +-25%, limit {limit:.0f} s", dt)


@pytest.fixture(scope="module")
def key_report():
    cfg = Config()
    sec = cfg.security
    t0 = time.perf_counter()
    sim = simulate_pass(reference_pass(), cfg.receiver, cfg.source,
                        min_elevation_rad=cfg.pass_.min_operational_elevation_rad)
    counts = sim.decoy_counts(cfg.source)
    clicks, errors = sim.channel_tallies(cfg.source, cfg.receiver.p_channel)
    stats = DecoyStats.from_counts(counts, failure_prob=sec.epsilon)
    tallies = DetectorTallies.from_channels(clicks, errors, stats.signal.sent_pulses, sec.p_z)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KeyRateDiagnostic)
        rep = analyze(stats, tallies, cfg.source, 0.60, 0.51, 1.44, sec.p_z, sec.delta_convention)
    return rep, time.perf_counter() - t0


def test_criterion_4_decoy_key(capsys, key_report):
    rep, dt = key_report
    ok = within(rep.decoy_key_bits, 629_000, 0.15)
    report(capsys, "4 decoy key length", ok, f"{rep.decoy_key_bits} bit vs 629000 +-15%", dt)


def test_criterion_4_mismatch_key(capsys, key_report):
    rep, dt = key_report
    ok = within(rep.mismatch_key_bits, 310_400, 0.20)
    report(capsys, "4 mismatch key length", ok,
           f"{rep.mismatch_key_bits} bit vs 310400 +-20% (eta_z=0.60, eta_x=0.51, f_ec=1.44)", dt)


def test_criterion_5_fit_recovery(capsys):
    cfg = Config()
    rx, src = cfg.receiver, cfg.source
    prof = reference_pass()
    t0 = time.perf_counter()
    clean = fit_count_rate(synthetic_observations(prof, rx, src, poisson=False), prof, rx, src)
    exact = (abs(clean.params["kappa"] / rx.kappa - 1) <= 1e-6
             and all(abs(clean.params[f"eta_opt_{c}"] / rx.eta_opt[c] - 1) <= 1e-6 for c in CHANNELS))
    good = 0
    for seed in range(100):
        res = fit_count_rate(synthetic_observations(prof, rx, src, rng=seed), prof, rx, src)
        good += (0.18 <= res.params["kappa"] <= 0.26
                 and all(abs(res.params[f"eta_opt_{c}"] - rx.eta_opt[c]) <= 0.02 for c in CHANNELS))
    dt = time.perf_counter() - t0
    ok = exact and good >= 95 and dt < 120
    report(capsys, "5 count-rate fit recovery", ok,
           f"noiseless within 1e-6: {exact}; Poisson trials in tolerance {good}/100 (need 95)", dt)


def test_criterion_6_noise_fit(capsys):
    cfg = Config()
    rx, src = cfg.receiver, cfg.source
    prof = reference_pass()
    t0 = time.perf_counter()
    obs = synthetic_observations(prof, rx, src, poisson=False)
    res = fit_noise(obs, prof, rx, src, fixed_eta_opt_total=0.27)
    dt = time.perf_counter() - t0
    T, C = res.params["T"], res.params["C"]
    ok = within(T, 1.8e6, 0.10) and abs(C - 290.0) <= 60.0 and dt < 10
    report(capsys, "6 noise fit recovery", ok,
           f"T={T:.4g} (1.8e6 +-10%), C={C:.1f} (290 +-60), kappa={res.params['kappa']:.4f}", dt)


def test_criterion_6_noise_fit_poisson_information(capsys):
    """Poisson-noisy variant, reported for context.

    With one-second bins the attainable standard error on T is near 20%, so
    this line checks consistency within three standard errors instead.
    """
    cfg = Config()
    rx, src = cfg.receiver, cfg.source
    prof = reference_pass()
    t0 = time.perf_counter()
    inside_box, consistent = 0, 0
    truth_T = 1.8e6 * np.mean(list(rx.eta_opt.values())) / 0.27
    for seed in range(20):
        obs = synthetic_observations(prof, rx, src, rng=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ParameterAtBoundWarning)
            res = fit_noise(obs, prof, rx, src, fixed_eta_opt_total=0.27)
        T, C = res.params["T"], res.params["C"]
        inside_box += within(T, 1.8e6, 0.10) and abs(C - 290.0) <= 60.0
        consistent += abs(T - truth_T) <= 3 * res.stderr["T"]
    dt = time.perf_counter() - t0
    report(capsys, "6 (info) noise fit on Poisson data", consistent >= 19,
           f"T within 3 stderr in {consistent}/20; inside T+-10%/C+-60 box in {inside_box}/20", dt)


def _run_all(checks):
    failed = []
    for name, func in checks:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", KeyRateDiagnostic)
                func()
        except AssertionError as exc:
            failed.append(f"{name}: {exc}")
    return failed


def test_criterion_7_property_suites(capsys):
    cfg = Config()
    prof = reference_pass()
    checks = [
        ("entropy values", _sec.test_entropy_values),
        ("entropy symmetry", _sec.test_entropy_symmetry_grid),
        ("Z/X symmetry", _sec.test_zx_symmetry),
        ("balanced reduction", lambda: [_sec.test_balanced_reduction(q) for q in (0.0, 0.005, 0.01, 0.03, 0.06)]),
        ("decoy soundness x100", _sec.test_decoy_soundness_random_instances),
        ("MC vs analytic (3 sigma)", _proto.test_montecarlo_mean_over_30_seeds),
        ("Poisson series 1e-12", lambda: [_link.test_detection_probability_series(a, e)
                                          for a in (0.05, 0.1, 0.5, 0.8, 1.0) for e in (1e-6, 1e-4, 9e-4, 1e-2)]),
        ("PA linearity", _post.test_toeplitz_linearity),
        ("OTP round trip", _post.test_otp_round_trip),
        ("sync sigma 500 ps +-10%", _proto.test_sync_histogram_recovers_sigma),
        ("noiseless count fit", lambda: _fit.test_count_fit_noiseless_recovery(cfg, prof)),
    ]
    t0 = time.perf_counter()
    failed = _run_all(checks)
    dt = time.perf_counter() - t0
    detail = f"{len(checks) - len(failed)}/{len(checks)} suites green"
    if failed:
        detail += "; failing: " + "; ".join(failed)
    report(capsys, "7 property suites", not failed, detail, dt)


def test_criterion_8_temporal_filter(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(808)
    ts, noise = simulate_timing(1_000_000, 1_000_000, 10.0, 6.0, 0.5, rng)
    frac = temporal_filter(ts[~noise], 2.0, 6.0, 10.0).size / 1_000_000
    oracle = erf(1.0 / (0.5 * math.sqrt(2)))
    grid = (np.arange(1_000_000) + 0.5) * 1e-5 + 5e6
    uniform = temporal_filter(grid, 2.0, 6.0, 10.0).size / grid.size
    dt = time.perf_counter() - t0
    ok = abs(frac - 0.954) <= 0.005 and abs(frac - oracle) <= 0.005 and uniform == 0.2
    report(capsys, "8 temporal filter", ok,
           f"Gaussian retained {100 * frac:.2f}% (CDF oracle {100 * oracle:.2f}%, target 95.4 +-0.5%), "
           f"uniform {uniform!r} = 2/10", dt)
