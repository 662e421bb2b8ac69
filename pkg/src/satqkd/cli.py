"""Command-line front end: ``satqkd simulate|fit|keyrate|otp``.

Exit status is 0 on success, 1 for bad configuration or input, 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import CHANNELS, ConfigError, load_config
from .link_model import link_efficiency
from .fitting import FitError, ObservationSeries, count_rate_model, fit_count_rate, fit_noise
from .geometry import EphemerisParseError, GeometryError, clamp_elevation, load_ephemeris, reference_pass
from .postproc import BitString, KeyExhausted, KeyFileError, KeyStore, PaSeed, privacy_amplify, shuffle, sift
from .protocol import (INTENSITIES, DetectionTable, IntrinsicErrorSeries, SyncFitError, _atomic_write,
                       simulate_pass)
from .security import (DecoyStats, DetectorTallies, InvalidParamsError, MismatchParams, analyze,
                       mismatch_key_terms)

EXIT_INPUT = 1
EXIT_RUNTIME = 2


class InputError(Exception):
    pass


def _manifest(args):
    return {
        "tool": "satqkd",
        "version": __version__,
        "command": args.command,
        "config": args.config or "<builtin>",
        "ephemeris": getattr(args, "ephemeris", None),
        "seed": getattr(args, "seed", None),
        "mode": getattr(args, "mode", None),
        "epsilon": getattr(args, "epsilon", None),
        "out_dir": getattr(args, "out_dir", None),
    }


def _comments(manifest):
    return [f"{k}={json.dumps(v)}" for k, v in manifest.items()]


def _write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args):
    cfg = load_config(args.config)
    sec = cfg.security
    updates = {}
    if getattr(args, "epsilon", None) is not None:
        updates["epsilon"] = args.epsilon
    for flag, key in (("eta_z", "eta_z"), ("eta_x", "eta_x"), ("f_ec", "f_ec"), ("convention", "delta_convention")):
        if getattr(args, flag, None) is not None:
            updates[key] = getattr(args, flag)
    if updates:
        cfg = replace(cfg, security=replace(sec, **updates))
    return cfg


def _profile(args, cfg):
    if getattr(args, "ephemeris", None):
        return load_ephemeris(args.ephemeris)
    p = cfg.pass_
    return reference_pass(p.step_s, p.duration_s, p.orbit_altitude_m, math.degrees(p.peak_elevation_rad))


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sent_pulses(profile, src):
    n = int(round(src.pulse_rate_hz * profile.step_s * len(profile)))
    return {name: int(round(n * p)) for name, _, p in src.intensities}


def _stats_payload(counts, clicks, errors):
    return {"counts": {k: list(v) for k, v in counts.items()},
            "channel_clicks": [float(x) for x in clicks],
            "channel_errors": [float(x) for x in errors]}


def _report(counts, clicks, errors, cfg, sifted_total=None):
    sec = cfg.security
    stats = DecoyStats.from_counts(counts, failure_prob=sec.epsilon)
    tallies = DetectorTallies.from_channels(clicks, errors, stats.signal.sent_pulses, sec.p_z)
    return analyze(stats, tallies, cfg.source, sec.eta_z, sec.eta_x, sec.f_ec, sec.p_z,
                   sec.delta_convention, sifted_total)


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args):
    cfg = _config(args)
    profile = _profile(args, cfg)
    err = IntrinsicErrorSeries.load_csv(args.intrinsic_errors) if args.intrinsic_errors else None
    if args.mode == "montecarlo" and args.seed is None:
        raise InputError("--mode montecarlo needs --seed")
    sim = simulate_pass(profile, cfg.receiver, cfg.source, err, rng_seed=args.seed, mode=args.mode,
                        per_pulse=args.per_pulse,
                        min_elevation_rad=cfg.pass_.min_operational_elevation_rad)
    out = _out_dir(args)
    manifest = _manifest(args)
    comments = _comments(manifest)
    sim.series.write_csv(out / "sifted_rates.csv", comments)
    table = sim.detections if sim.detections is not None else DetectionTable.empty()
    table.write_csv(out / "detections.csv", comments)
    counts = sim.decoy_counts(cfg.source)
    clicks, errors = sim.channel_tallies(cfg.source, cfg.receiver.p_channel)
    payload = _stats_payload(counts, clicks, errors)
    payload["manifest"] = manifest
    _write_json(out / "decoy_stats.json", payload)
    totals = sim.series.totals(sim.profile.step_s)
    report = _report(counts, clicks, errors, cfg, sum(totals.values()))
    report.diagnostics["sifted_totals_by_intensity"] = totals
    report.manifest = manifest
    _atomic_write(out / "key_report.json", report.to_json() + "\n")
    print(f"sifted {report.sifted_total_bits / 1e3:.1f} kbit, QBER {100 * report.qber_signal:.3f}%, "
          f"decoy key {report.decoy_key_bits} bit, mismatch key {report.mismatch_key_bits} bit")
    return 0


def _reference_observations():
    return resources.files("satqkd").joinpath("data/reference_observations.csv")


def cmd_fit(args):
    cfg = _config(args)
    profile = _profile(args, cfg)
    if args.observations == "reference":
        with resources.as_file(_reference_observations()) as path:
            obs = ObservationSeries.load_csv(path)
    else:
        obs = ObservationSeries.load_csv(args.observations)
    rx, src = cfg.receiver, cfg.source
    out = _out_dir(args)
    manifest = _manifest(args)
    if args.noise:
        if obs.noise is None:
            raise InputError(f"{args.observations}: missing column noise")
        res = fit_noise(obs, profile, rx, src, fixed_eta_opt_total=args.eta_opt_total)
        T, C, kappa = res.params["T"], res.params["C"], res.params["kappa"]
        rng = np.interp(obs.t, profile.t, profile.range_m)
        elev = np.interp(obs.t, profile.t, profile.elevation_rad)
        model = T * link_efficiency(rng, elev, rx, src, args.eta_opt_total, kappa)[0] + C
        cols = {"noise": (obs.noise, model)}
    else:
        free = tuple(x.strip() for x in args.free.split(",") if x.strip())
        res = fit_count_rate(obs, profile, rx, src, free=free)
        vals = {k: v for k, v in res.params.items()}
        kappa = vals.get("kappa", rx.kappa)
        eta_opt = {c: vals.get(f"eta_opt_{c}", rx.eta_opt[c]) for c in CHANNELS}
        rng = np.interp(obs.t, profile.t, profile.range_m)
        elev = np.interp(obs.t, profile.t, profile.elevation_rad)
        model = count_rate_model(rng, elev, rx, src, kappa, eta_opt)
        cols = {f"counts_{c}": (obs.counts[c], model[i]) for i, c in enumerate(CHANNELS)}
    header = ["t_s"]
    for name in cols:
        header += [f"{name}_observed", f"{name}_model", f"{name}_residual"]
    lines = [f"# {c}\n" for c in _comments(manifest)] + [",".join(header) + "\n"]
    for i, t in enumerate(obs.t):
        vals = [t]
        for o, m in cols.values():
            vals += [o[i], m[i], o[i] - m[i]]
        lines.append(",".join(repr(float(v)) for v in vals) + "\n")
    _atomic_write(out / "fit_residuals.csv", "".join(lines))
    payload = res.to_dict()
    payload["manifest"] = manifest
    _write_json(out / "fit_result.json", payload)
    print(" ".join(f"{k}={v:.6g}+-{res.stderr[k]:.2g}" for k, v in res.params.items()))
    return 0


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None


def cmd_keyrate(args):
    cfg = _config(args)
    sec = cfg.security
    out = _out_dir(args)
    manifest = _manifest(args)
    given = [x for x in (args.detections, args.stats, args.mismatch_params) if x]
    if len(given) != 1:
        raise InputError("give exactly one of --detections, --stats, --mismatch-params")

    if args.mismatch_params:
        data = _load_json(args.mismatch_params)
        data.setdefault("f_ec", sec.f_ec)
        try:
            m = MismatchParams(**data)
        except TypeError as exc:
            raise InputError(f"{args.mismatch_params}: {exc}") from None
        terms = mismatch_key_terms(m, sec.delta_convention)
        rate = max(sum(t.weight * t.bracket for t in terms.values()), 0.0)
        payload = {"mismatch_key_rate_per_pulse": rate,
                   "terms": {b: vars(t) for b, t in terms.items()},
                   "convention": sec.delta_convention, "manifest": manifest}
        _write_json(out / "key_report.json", payload)
        print(f"mismatch key rate {rate:.6g} per pulse")
        return 0

    if args.stats:
        data = _load_json(args.stats)
        try:
            counts = {k: tuple(data["counts"][k]) for k in INTENSITIES}
            clicks, errors = data["channel_clicks"], data["channel_errors"]
        except KeyError as exc:
            raise InputError(f"{args.stats}: missing key {exc.args[0]}") from None
        report = _report(counts, clicks, errors, cfg)
    else:
        table = DetectionTable.load_csv(args.detections)
        profile = clamp_elevation(_profile(args, cfg), cfg.pass_.min_operational_elevation_rad)
        sent = _sent_pulses(profile, cfg.source)
        res = sift(table)
        counts = {k: (sent[k],) + res.per_intensity[k] for k in INTENSITIES}
        sig = (table.intensity == 0) & (table.alice_basis == table.bob_basis)
        clicks = np.bincount(table.channel[sig], minlength=4)
        errors = np.bincount(table.channel[sig & (table.alice_bit != table.bob_bit)], minlength=4)
        report = _report(counts, clicks, errors, cfg)
        if args.key_out:
            _write_final_key(args, res, report, table)
    report.manifest = manifest
    _atomic_write(out / "key_report.json", report.to_json() + "\n")
    print(f"decoy key {report.decoy_key_bits} bit, mismatch key {report.mismatch_key_bits} bit")
    return 0


def _write_final_key(args, res, report, table):
    """Signal-state sifted key, shuffled and hashed to the mismatch key length.

    Error correction is not run; Alice's sifted bits stand in for the
    corrected key.
    """
    sig = np.asarray(table.intensity)[np.asarray(table.alice_basis) == table.bob_basis] == 0
    key = BitString(res.alice_key.bits[sig])
    seed = 0 if args.seed is None else args.seed
    key = shuffle(key, [seed, 1])
    m = min(report.mismatch_key_bits, len(key))
    rng = np.random.Generator(np.random.Philox([seed, 2]))
    final = privacy_amplify(key, m, PaSeed.random(len(key), m, rng)) if m else BitString()
    KeyStore.create(args.key_out, final)


def cmd_otp(args):
    store = KeyStore(args.key_file)
    data = Path(args.input).read_bytes()
    out = store.encrypt(data) if args.action == "encrypt" else store.decrypt(data)
    _atomic_bytes(args.output, out)
    print(f"{args.action}ed {len(data)} bytes, {store.remaining} key bytes left")
    return 0


def _atomic_bytes(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def cmd_keygen(args):
    """Import raw bytes as a fresh key store."""
    KeyStore.create(args.key_file, Path(args.input).read_bytes())
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="satqkd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="JSON config overlaying the built-in defaults")
        sp.add_argument("--ephemeris", help="pass CSV (t_s, range_m, elevation_deg)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--epsilon", type=float, help="failure probability of each statistical bound")
        if out:
            sp.add_argument("--out-dir", default=".")

    s = sub.add_parser("simulate", help="simulate a pass and analyse the resulting key")
    common(s)
    s.add_argument("--mode", choices=("analytic", "montecarlo"), default="analytic")
    s.add_argument("--per-pulse", action="store_true", help="simulate every pulse (small runs only)")
    s.add_argument("--intrinsic-errors", help="CSV of receiver intrinsic errors (t_s, e_H..e_A)")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit the count-rate or noise model to observations")
    common(f)
    f.add_argument("--observations", required=True, help="CSV path, or 'reference' for the bundled set")
    f.add_argument("--free", default="kappa,H,V,D,A")
    f.add_argument("--noise", action="store_true", help="fit T, C and kappa to the noise column")
    f.add_argument("--eta-opt-total", type=float, default=0.27)
    f.set_defaults(func=cmd_fit)

    k = sub.add_parser("keyrate", help="key length from detections, statistics or mismatch parameters")
    common(k)
    k.add_argument("--detections")
    k.add_argument("--stats")
    k.add_argument("--mismatch-params")
    k.add_argument("--eta-z", type=float)
    k.add_argument("--eta-x", type=float)
    k.add_argument("--f-ec", type=float)
    k.add_argument("--convention", choices=("main", "appendix"))
    k.add_argument("--key-out", help="write the hashed key to this key store (needs --detections)")
    k.set_defaults(func=cmd_keyrate)

    o = sub.add_parser("otp", help="one-time pad with a key store")
    o.add_argument("action", choices=("encrypt", "decrypt"))
    o.add_argument("key_file")
    o.add_argument("input")
    o.add_argument("output")
    o.set_defaults(func=cmd_otp, config=None)

    g = sub.add_parser("keygen", help="create a key store from raw key bytes")
    g.add_argument("key_file")
    g.add_argument("input")
    g.set_defaults(func=cmd_keygen, config=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, EphemerisParseError, GeometryError, KeyExhausted, KeyFileError,
            InvalidParamsError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"satqkd: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError, SyncFitError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"satqkd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
