import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satqkd.config import Config
from satqkd.postproc import (HEADER_SIZE, BitString, KeyExhausted, KeyFileError, KeyStore, PaSeed,
                             ec_leakage, otp_decrypt, otp_encrypt, privacy_amplify, shuffle, sift)
from satqkd.protocol import INTENSITIES, DetectionRecord, DetectionTable, simulate_pass

from conftest import flat_profile


_CHANNELS = (("H", "V"), ("D", "A"))


def _record(i, a_basis, b_basis, a_bit, b_bit, intensity=0):
    return DetectionRecord(pulse_index=i, channel=_CHANNELS[b_basis][b_bit], alice_basis="ZX"[a_basis],
                           alice_bit=a_bit, bob_basis="ZX"[b_basis], bob_bit=b_bit,
                           intensity=INTENSITIES[intensity], timestamp_ns=float(i))


def test_sift_identity():
    recs = [_record(i, i % 2, i % 2, (i // 2) % 2, (i // 2) % 2) for i in range(40)]
    res = sift(recs)
    assert res.alice_key == res.bob_key and len(res.alice_key) == 40
    assert res.qber == 0.0
    assert res.per_basis == {"Z": (20, 0), "X": (20, 0)}


def test_sift_empty():
    res = sift([])
    assert len(res.alice_key) == 0 and res.qber == 0.0


def test_sift_drops_mismatched_and_counts_errors():
    recs = [_record(0, 0, 1, 0, 0), _record(1, 1, 1, 0, 1, intensity=1), _record(2, 0, 0, 1, 1)]
    res = sift(recs)
    assert res.alice_key.bits.tolist() == [0, 1] and res.bob_key.bits.tolist() == [1, 1]
    assert res.per_basis == {"Z": (1, 0), "X": (1, 1)}
    assert res.per_intensity["decoy"] == (1, 1)


def test_sift_fraction_large_sample():
    cfg = Config()
    sim = simulate_pass(flat_profile(4, range_m=600e3, elevation_deg=60), cfg.receiver, cfg.source,
                        mode="montecarlo", rng_seed=3)
    table = sim.detections
    assert len(table) > 100_000
    res = sift(table)
    assert len(res.alice_key) / len(table) == pytest.approx(0.5, abs=0.01)


def test_sift_accepts_table():
    recs = [_record(i, i % 2, (i // 3) % 2, 0, 1) for i in range(12)]
    assert sift(DetectionTable.from_records(recs)).alice_key == sift(recs).alice_key


def test_ec_leakage():
    assert ec_leakage(1_440_000, 0.0093, 1.0) == 109608
    assert ec_leakage(1000, 0.0, 1.44) == 0
    assert ec_leakage(1000, 0.5, 1.0) == 1000
    vals = [ec_leakage(10**6, q, 1.2) for q in np.linspace(0, 0.5, 51)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        ec_leakage(10, 0.6, 1.0)


def test_toeplitz_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(20):
        seed = PaSeed.random(8, 4, rng)
        key = BitString.random(8, rng)
        want = seed.matrix() @ key.bits % 2
        assert privacy_amplify(key, 4, seed).bits.tolist() == want.tolist()


def test_toeplitz_matrix_shape():
    seed = PaSeed(BitString([1, 0, 0, 1, 1]), 3, 3)
    # constant along diagonals
    m = seed.matrix()
    assert m.shape == (3, 3)
    for d in range(-2, 3):
        assert len(set(np.diagonal(m, d).tolist())) == 1


@pytest.mark.parametrize("n,m", [(1000, 300), (4096, 4096), (20000, 1)])
def test_toeplitz_larger_sizes(n, m):
    rng = np.random.default_rng(n)
    seed = PaSeed.random(n, m, rng)
    key = BitString.random(n, rng)
    if n * m <= 5_000_000:
        want = (seed.matrix().astype(np.int64) @ key.bits) % 2
        assert np.array_equal(privacy_amplify(key, m, seed).bits, want)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_toeplitz_linearity(n, s):
    rng = np.random.default_rng(s)
    m = int(rng.integers(1, n + 1))
    seed = PaSeed.random(n, m, rng)
    a, b = BitString.random(n, rng), BitString.random(n, rng)
    assert privacy_amplify(a ^ b, m, seed) == privacy_amplify(a, m, seed) ^ privacy_amplify(b, m, seed)


def test_toeplitz_edge_cases():
    rng = np.random.default_rng(0)
    key = BitString.random(16, rng)
    assert len(privacy_amplify(key, 0, PaSeed(BitString(), 16, 0))) == 0
    seed = PaSeed.random(16, 8, rng)
    assert privacy_amplify(BitString([0] * 16), 8, seed).bits.sum() == 0
    with pytest.raises(ValueError):
        privacy_amplify(key, 7, seed)
    with pytest.raises(ValueError):
        privacy_amplify(BitString.random(15, rng), 8, seed)
    with pytest.raises(ValueError):
        PaSeed(BitString.random(10, rng), 8, 4)


def test_shuffle_is_seeded_permutation():
    key = BitString.random(1000, np.random.default_rng(2))
    a, b = shuffle(key, 7), shuffle(key, 7)
    assert a == b and a != shuffle(key, 8)
    assert a.bits.sum() == key.bits.sum()


def test_bitstring_behaviour():
    b = BitString.from_bytes(b"\xa5")
    assert b.bits.tolist() == [1, 0, 1, 0, 0, 1, 0, 1]
    assert b.to_bytes() == b"\xa5"
    assert b[0] == 1 and b[1:3].bits.tolist() == [0, 1]
    with pytest.raises(ValueError):
        b.bits[0] = 0
    with pytest.raises(ValueError):
        BitString([0, 2])
    with pytest.raises(ValueError):
        b ^ BitString([1])


@settings(max_examples=1000, deadline=None)
@given(st.binary(max_size=256), st.integers(0, 2**32 - 1))
def test_otp_round_trip(msg, s):
    key = BitString.random(8 * len(msg) + 5, np.random.default_rng(s))
    ct = otp_encrypt(msg, key)
    assert len(ct) == len(msg)
    assert otp_decrypt(ct, key) == msg


def test_otp_short_key():
    with pytest.raises(KeyExhausted):
        otp_encrypt(b"abc", BitString.random(23, np.random.default_rng(0)))


def test_keystore_round_trip_and_reuse(tmp_path):
    rng = np.random.default_rng(4)
    key = BitString.random(8 * 4096, rng)
    alice = KeyStore.create(tmp_path / "alice.key", key)
    bob = KeyStore.create(tmp_path / "bob.key", key)
    msg = rng.integers(0, 256, 2048, dtype=np.uint8).tobytes()
    ct = alice.encrypt(msg)
    assert ct != msg and bob.decrypt(ct) == msg
    assert alice.remaining == 2048
    # the spent region is zeroed and the offset persists
    reopened = KeyStore(tmp_path / "alice.key")
    assert reopened.spent == 2048
    raw = (tmp_path / "alice.key").read_bytes()
    assert raw[HEADER_SIZE:HEADER_SIZE + 2048] == bytes(2048)
    reopened.encrypt(msg)
    with pytest.raises(KeyExhausted):
        reopened.encrypt(b"x")
    assert reopened.encrypt(b"") == b""


def test_keystore_rejects_corruption(tmp_path):
    p = tmp_path / "k.key"
    KeyStore.create(p, b"\x01" * 32)
    raw = bytearray(p.read_bytes())
    bad = tmp_path / "bad.key"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(KeyFileError):
        KeyStore(bad)
    bad.write_bytes(raw[:-1])
    with pytest.raises(KeyFileError):
        KeyStore(bad)
    bad.write_bytes(raw[:5])
    with pytest.raises(KeyFileError):
        KeyStore(bad)
