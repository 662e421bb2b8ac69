import json
import warnings
from dataclasses import replace

import numpy as np
import pytest

from satqkd.cli import main
from satqkd.config import Config
from satqkd.fitting import synthetic_observations
from satqkd.geometry import load_ephemeris, reference_pass, write_ephemeris
from satqkd.security import KeyRateDiagnostic


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KeyRateDiagnostic)
        yield


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def short_ephemeris(tmp_path_factory):
    p = tmp_path_factory.mktemp("eph") / "pass.csv"
    write_ephemeris(reference_pass(duration_s=30.0), p)
    return p


def test_simulate_writes_outputs(tmp_path, capsys):
    assert run("simulate", "--out-dir", tmp_path) == 0
    for name in ("sifted_rates.csv", "detections.csv", "decoy_stats.json", "key_report.json"):
        assert (tmp_path / name).is_file()
    report = json.loads((tmp_path / "key_report.json").read_text())
    assert report["manifest"]["command"] == "simulate"
    assert report["decoy_key_bits"] > report["mismatch_key_bits"] > 0
    assert (tmp_path / "sifted_rates.csv").read_text().startswith("# ")
    assert "QBER" in capsys.readouterr().out


def test_simulate_is_deterministic(tmp_path, short_ephemeris):
    def once():
        assert run("simulate", "--mode", "montecarlo", "--seed", 4, "--ephemeris", short_ephemeris,
                   "--out-dir", tmp_path) == 0
        return {p.name: p.read_bytes() for p in sorted(tmp_path.iterdir())}
    assert once() == once()


def test_montecarlo_needs_seed(tmp_path):
    assert run("simulate", "--mode", "montecarlo", "--out-dir", tmp_path) == 1


def test_fit_reference(tmp_path):
    assert run("fit", "--observations", "reference", "--out-dir", tmp_path) == 0
    res = json.loads((tmp_path / "fit_result.json").read_text())
    assert 0.18 <= res["params"]["kappa"] <= 0.26
    assert (tmp_path / "fit_residuals.csv").is_file()


def test_fit_recovers_self_generated_series(tmp_path):
    cfg = Config()
    rx = replace(cfg.receiver.with_eta_opt(H=0.2, V=0.3, D=0.33, A=0.18), kappa=0.25)
    eph = tmp_path / "pass.csv"
    write_ephemeris(reference_pass(), eph)
    obs = synthetic_observations(load_ephemeris(eph), rx, cfg.source, poisson=False, with_noise=False)
    path = tmp_path / "obs.csv"
    obs.write_csv(path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert run("fit", "--observations", path, "--ephemeris", eph, "--out-dir", tmp_path) == 0
    p = json.loads((tmp_path / "fit_result.json").read_text())["params"]
    assert p["kappa"] == pytest.approx(0.25, rel=1e-6)
    for c, v in dict(H=0.2, V=0.3, D=0.33, A=0.18).items():
        assert p[f"eta_opt_{c}"] == pytest.approx(v, rel=1e-6)


def test_fit_missing_column(tmp_path):
    path = tmp_path / "obs.csv"
    path.write_text("t_s,counts_H,counts_D,counts_A\n0,1,2,3\n1,1,2,3\n")
    assert run("fit", "--observations", path, "--out-dir", tmp_path) == 1


def test_keyrate_from_stats(tmp_path):
    assert run("simulate", "--out-dir", tmp_path) == 0
    before = json.loads((tmp_path / "key_report.json").read_text())
    out = tmp_path / "k"
    assert run("keyrate", "--stats", tmp_path / "decoy_stats.json", "--out-dir", out) == 0
    after = json.loads((out / "key_report.json").read_text())
    assert after["decoy_key_bits"] == before["decoy_key_bits"]
    assert after["mismatch_key_bits"] == before["mismatch_key_bits"]


def _balanced(q):
    p = 2e-3
    return {"p_z": 0.5, "p_x": 0.5, "p_det_z": p, "p_det_x": p, "q_z_bit0": p / 2, "q_z_bit1": p / 2,
            "q_x_bit0": p / 2, "q_x_bit1": p / 2, "eta_z": 1.0, "eta_x": 1.0, "qber_z": q, "qber_x": q,
            "q_err_z": p * q, "q_err_x": p * q}


def test_keyrate_mismatch_params(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(_balanced(0.0)))
    assert run("keyrate", "--mismatch-params", path, "--out-dir", tmp_path) == 0
    rate = json.loads((tmp_path / "key_report.json").read_text())["mismatch_key_rate_per_pulse"]
    assert rate == pytest.approx(1e-3, rel=1e-12)
    path.write_text(json.dumps(_balanced(0.11)))
    assert run("keyrate", "--mismatch-params", path, "--out-dir", tmp_path) == 0
    assert json.loads((tmp_path / "key_report.json").read_text())["mismatch_key_rate_per_pulse"] == 0.0


def test_keyrate_input_errors(tmp_path):
    assert run("keyrate", "--out-dir", tmp_path) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**_balanced(0.0), "q_z_bit1": 0.0, "q_z_bit0": 0.0}))
    assert run("keyrate", "--mismatch-params", bad, "--out-dir", tmp_path) == 1
    bad.write_text("{")
    assert run("keyrate", "--stats", bad, "--out-dir", tmp_path) == 1
    assert run("keyrate", "--stats", tmp_path / "nope.json", "--out-dir", tmp_path) == 1


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"source": {"bogus": 1}}))
    assert run("simulate", "--config", cfg, "--out-dir", tmp_path) == 1


def test_detections_to_key_to_otp(tmp_path, short_ephemeris):
    assert run("simulate", "--mode", "montecarlo", "--seed", 8, "--ephemeris", short_ephemeris,
               "--out-dir", tmp_path) == 0
    alice = tmp_path / "alice.key"
    assert run("keyrate", "--detections", tmp_path / "detections.csv", "--ephemeris", short_ephemeris,
               "--seed", 8, "--key-out", alice, "--out-dir", tmp_path / "k") == 0
    report = json.loads((tmp_path / "k" / "key_report.json").read_text())
    raw = alice.read_bytes()
    assert raw[:4] == b"QKEY" and report["mismatch_key_bits"] > 0
    # Bob's copy of the same key
    bob = tmp_path / "bob.key"
    bob.write_bytes(raw)
    msg = np.random.default_rng(0).integers(0, 256, 2048, dtype=np.uint8).tobytes()
    (tmp_path / "msg").write_bytes(msg)
    assert run("otp", "encrypt", alice, tmp_path / "msg", tmp_path / "ct") == 0
    assert run("otp", "decrypt", bob, tmp_path / "ct", tmp_path / "pt") == 0
    assert (tmp_path / "pt").read_bytes() == msg
    assert (tmp_path / "ct").read_bytes() != msg


def test_otp_exhausted_and_empty(tmp_path):
    key = tmp_path / "k.key"
    (tmp_path / "raw").write_bytes(bytes(range(256)) * 4)
    assert run("keygen", key, tmp_path / "raw") == 0
    (tmp_path / "big").write_bytes(b"x" * 2000)
    assert run("otp", "encrypt", key, tmp_path / "big", tmp_path / "ct") == 1
    assert not (tmp_path / "ct").exists()
    (tmp_path / "empty").write_bytes(b"")
    assert run("otp", "encrypt", key, tmp_path / "empty", tmp_path / "ct") == 0
    assert (tmp_path / "ct").read_bytes() == b""
    (tmp_path / "m").write_bytes(b"y" * 1024)
    assert run("otp", "encrypt", key, tmp_path / "m", tmp_path / "ct") == 0
    assert run("otp", "encrypt", key, tmp_path / "empty", tmp_path / "ct2") == 0
    (tmp_path / "one").write_bytes(b"z")
    assert run("otp", "encrypt", key, tmp_path / "one", tmp_path / "ct3") == 1


def test_otp_corrupt_key_file(tmp_path):
    key = tmp_path / "k.key"
    key.write_bytes(b"garbage")
    (tmp_path / "m").write_bytes(b"hi")
    assert run("otp", "encrypt", key, tmp_path / "m", tmp_path / "ct") == 1
