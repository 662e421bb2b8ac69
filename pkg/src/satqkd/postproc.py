"""Sifting, error-correction leakage, Toeplitz privacy amplification and one-time pad."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .protocol import INTENSITIES, DetectionTable
from .security import binary_entropy

KEY_MAGIC = b"QKEY"
KEY_VERSION = 1
_HEADER = struct.Struct("<4sHHII")  # magic, version, reserved, length (bytes), spent offset (bytes)
HEADER_SIZE = _HEADER.size


class KeyExhausted(RuntimeError):
    pass


class KeyFileError(ValueError):
    pass


class BitString:
    """Immutable 0/1 sequence backed by a uint8 array."""

    __slots__ = ("_bits",)

    def __init__(self, bits=()):
        arr = np.array(bits, dtype=np.uint8).ravel()
        if arr.size and arr.max() > 1:
            raise ValueError("bits must be 0 or 1")
        arr.setflags(write=False)
        self._bits = arr

    @classmethod
    def from_bytes(cls, data):
        return cls(np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8)))

    @classmethod
    def random(cls, n, rng):
        return cls(rng.integers(0, 2, size=n, dtype=np.uint8))

    @property
    def bits(self):
        return self._bits

    @property
    def length(self):
        return int(self._bits.size)

    def __len__(self):
        return self.length

    def __eq__(self, other):
        if not isinstance(other, BitString):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __xor__(self, other):
        if len(other) != len(self):
            raise ValueError("length mismatch")
        return BitString(self._bits ^ other._bits)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return BitString(self._bits[idx])
        return int(self._bits[idx])

    def __repr__(self):
        head = "".join(map(str, self._bits[:32].tolist()))
        return f"BitString({head}{'...' if self.length > 32 else ''}, length={self.length})"

    def to_bytes(self):
        """Pack to bytes, MSB first; a partial last byte is zero padded."""
        return np.packbits(self._bits).tobytes()


@dataclass(frozen=True)
class PaSeed:
    """First column then first row of an ``out_len x in_len`` Toeplitz matrix."""

    seed_bits: BitString
    in_len: int
    out_len: int

    def __post_init__(self):
        if self.in_len < 0 or self.out_len < 0:
            raise ValueError("dimensions must be nonnegative")
        want = self.in_len + self.out_len - 1 if self.in_len and self.out_len else 0
        if len(self.seed_bits) != want:
            raise ValueError(f"Toeplitz seed needs {want} bits, got {len(self.seed_bits)}")

    @classmethod
    def random(cls, in_len, out_len, rng):
        n = in_len + out_len - 1 if in_len and out_len else 0
        return cls(BitString.random(n, rng), in_len, out_len)

    def matrix(self):
        """Dense matrix, ``T[i, j] = seed[i - j + in_len - 1]``. For small sizes only."""
        i = np.arange(self.out_len)[:, None]
        j = np.arange(self.in_len)[None, :]
        return self.seed_bits.bits[i - j + self.in_len - 1]


# ---------------------------------------------------------------------------
# sifting and leakage

@dataclass
class SiftResult:
    alice_key: BitString
    bob_key: BitString
    per_basis: dict
    per_intensity: dict = field(default_factory=dict)

    @property
    def qber(self):
        n = len(self.alice_key)
        return float(np.count_nonzero(self.alice_key.bits != self.bob_key.bits)) / n if n else 0.0


def sift(records):
    """Keep basis-matched detections, in input order.

    ``per_basis`` and ``per_intensity`` map to ``(sifted, errors)``.
    """
    table = records if isinstance(records, DetectionTable) else DetectionTable.from_records(records)
    keep = np.asarray(table.alice_basis) == table.bob_basis
    a = np.asarray(table.alice_bit)[keep].astype(np.uint8)
    b = np.asarray(table.bob_bit)[keep].astype(np.uint8)
    err = a != b
    basis = np.asarray(table.alice_basis)[keep]
    inten = np.asarray(table.intensity)[keep]
    per_basis = {name: (int(np.count_nonzero(basis == k)), int(np.count_nonzero(err & (basis == k))))
                 for k, name in enumerate(("Z", "X"))}
    per_int = {name: (int(np.count_nonzero(inten == k)), int(np.count_nonzero(err & (inten == k))))
               for k, name in enumerate(INTENSITIES)}
    return SiftResult(BitString(a), BitString(b), per_basis, per_int)


def ec_leakage(n, qber, f_ec):
    """Bits disclosed by error correction, ``ceil(f_ec n h(qber))``."""
    if not 0.0 <= qber <= 0.5:
        raise ValueError("qber must lie in [0, 0.5]")
    return int(math.ceil(f_ec * n * binary_entropy(qber) - 1e-9))


# ---------------------------------------------------------------------------
# privacy amplification

def shuffle(key, seed):
    """Seeded Fisher-Yates permutation of the key bits."""
    rng = np.random.Generator(np.random.Philox(seed))
    return BitString(rng.permutation(key.bits))


def _conv_mod2(a, b):
    n = a.size + b.size - 1
    size = 1 << (n - 1).bit_length()
    prod = np.fft.irfft(np.fft.rfft(a.astype(np.float64), size) * np.fft.rfft(b.astype(np.float64), size),
                        size)[:n]
    return np.rint(prod).astype(np.int64) & 1


def privacy_amplify(key, out_len, seed):
    """Toeplitz hash ``T key`` over GF(2), computed as a convolution."""
    if out_len != seed.out_len or len(key) != seed.in_len:
        raise ValueError(f"seed is for {seed.in_len} -> {seed.out_len} bits, "
                         f"got {len(key)} -> {out_len}")
    if out_len > len(key):
        raise ValueError("output longer than input")
    if out_len == 0:
        return BitString()
    n = len(key)
    full = _conv_mod2(seed.seed_bits.bits, key.bits)
    return BitString(full[n - 1:n - 1 + out_len].astype(np.uint8))


# ---------------------------------------------------------------------------
# one-time pad

def _xor(message, key):
    message = bytes(message)
    need = 8 * len(message)
    if len(key) < need:
        raise KeyExhausted(f"message needs {need} key bits, {len(key)} available")
    if not message:
        return b""
    pad = np.packbits(key.bits[:need])
    return (np.frombuffer(message, dtype=np.uint8) ^ pad).tobytes()


def otp_encrypt(message, key):
    return _xor(message, key)


def otp_decrypt(ciphertext, key):
    return _xor(ciphertext, key)


class KeyStore:
    """Key material on disk with a spent-offset that only moves forward.

    One writer per file. The header and the zeroed spent region are
    rewritten through a temp file and rename.
    """

    def __init__(self, path):
        self.path = Path(path)
        raw = self.path.read_bytes()
        if len(raw) < HEADER_SIZE:
            raise KeyFileError(f"{path}: truncated header")
        magic, version, _, length, spent = _HEADER.unpack_from(raw)
        if magic != KEY_MAGIC:
            raise KeyFileError(f"{path}: not a key file")
        if version != KEY_VERSION:
            raise KeyFileError(f"{path}: unsupported version {version}")
        if len(raw) != HEADER_SIZE + length or spent > length:
            raise KeyFileError(f"{path}: inconsistent length")
        self._data = bytearray(raw[HEADER_SIZE:])
        self.length = length
        self.spent = spent

    @classmethod
    def create(cls, path, key):
        data = key.to_bytes() if isinstance(key, BitString) else bytes(key)
        _write_atomic(path, _HEADER.pack(KEY_MAGIC, KEY_VERSION, 0, len(data), 0) + data)
        return cls(path)

    @property
    def remaining(self):
        return self.length - self.spent

    def consume(self, nbytes):
        """Return the next ``nbytes`` of key and mark them spent on disk."""
        if nbytes < 0:
            raise ValueError("nbytes must be nonnegative")
        if nbytes > self.remaining:
            raise KeyExhausted(f"{self.path}: need {nbytes} key bytes, {self.remaining} unspent")
        start = self.spent
        out = bytes(self._data[start:start + nbytes])
        if nbytes:
            self._data[start:start + nbytes] = bytes(nbytes)
            self.spent += nbytes
            _write_atomic(self.path, _HEADER.pack(KEY_MAGIC, KEY_VERSION, 0, self.length, self.spent)
                          + bytes(self._data))
        return BitString.from_bytes(out)

    def encrypt(self, message):
        return otp_encrypt(message, self.consume(len(message)))

    decrypt = encrypt


def _write_atomic(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    tmp.replace(path)
