"""Diffusion primitives: seed chains, fixed-point readings, MACs, sealed channels.

A sensor reading is concealed by adding a per-round keyed seed to its
fixed-point encoding modulo M = 2**64 ("diffusion").  Addition makes the
scheme an additive privacy homomorphism: the sum of diffused values reverts
to the sum of readings once the matching seed sum is subtracted.  Every node
keeps two independent seed chains (keys K and K') over the same origin, so an
aggregate travels as a pair of independently masked copies of the same sum.

All primitives here are pure functions of their inputs and safe to call from
any number of threads.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from .errors import AuthFailure, ReadingOutOfRange, ReplayDetected

# === Ring arithmetic ========================================================

MODULUS = 1 << 64
MASK = MODULUS - 1

KEY_LEN = 16
TAG_LEN = 8
CHANNEL_TAG_LEN = 16
ZERO_TAG = bytes(TAG_LEN)

# Domain-separation labels for the keyed PRF (blake2b "person" parameter).
_PERSON_SEED = b"diff.seed"
_PERSON_MAC = b"diff.mac"
_PERSON_STREAM = b"diff.chan.ks"
_PERSON_CHANTAG = b"diff.chan.tag"
_PERSON_SENSE = b"diff.sense"


def add_mod(a: int, b: int) -> int:
    return (a + b) & MASK


def sub_mod(a: int, b: int) -> int:
    return (a - b) & MASK


# === Fixed-point reading codec ==============================================


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps real readings in [low, high] to ring residues and back.

    raw = round((m - low) * scale); decoding is exact to within 1/(2*scale).
    Sums of raws decode with the participant count restoring the offsets.
    """

    low: float = 0.0
    high: float = 1000.0
    scale: int = 100

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValueError("codec requires low < high")
        if self.scale <= 0:
            raise ValueError("codec requires positive scale")

    @property
    def max_raw(self) -> int:
        return round((self.high - self.low) * self.scale)

    def encode(self, reading: float) -> int:
        raw = round((reading - self.low) * self.scale)
        if not 0 <= raw <= self.max_raw:
            raise ReadingOutOfRange(f"reading {reading!r} outside [{self.low}, {self.high}]")
        return raw

    def decode(self, raw: int) -> float:
        return self.low + raw / self.scale

    def decode_sum(self, raw_sum: int, count: int) -> float:
        # A sum of k encoded readings carries k copies of the low offset.
        return count * self.low + raw_sum / self.scale

    def decode_mean(self, raw_sum: int, count: int) -> float:
        return self.decode_sum(raw_sum, count) / count


# === Keys and the generator map =============================================


def new_key(rng) -> bytes:
    """Draw a fresh 16-byte key from a random.Random-like source."""
    return rng.randbytes(KEY_LEN)


def _check_key(key: bytes) -> bytes:
    if len(key) != KEY_LEN:
        raise ValueError(f"key must be {KEY_LEN} bytes, got {len(key)}")
    return key


def _prf(key: bytes, person: bytes, data: bytes, out_len: int) -> bytes:
    return hashlib.blake2b(data, digest_size=out_len, key=key, person=person).digest()


def next_seed(key: bytes, prev: int, round_no: int) -> int:
    """Advance a seed chain one step: keyed PRF over (prev || round || label)."""
    _check_key(key)
    data = (prev & MASK).to_bytes(8, "big") + round_no.to_bytes(8, "big")
    return int.from_bytes(_prf(key, _PERSON_SEED, data, 8), "big")


def seed_at(key: bytes, origin: int, round_no: int) -> int:
    """Seed value after round_no applications of next_seed to the origin."""
    seed = origin & MASK
    for j in range(1, round_no + 1):
        seed = next_seed(key, seed, j)
    return seed


@dataclass
class SeedState:
    """Current position of one diffusion seed chain."""

    seed: int
    round: int
    origin: int

    @classmethod
    def from_origin(cls, origin: int) -> "SeedState":
        return cls(seed=origin & MASK, round=0, origin=origin & MASK)

    def advance_to(self, key: bytes, round_no: int) -> int:
        """Advance the chain to round_no and return the seed there.

        Rounds are replayed one at a time so a node that missed queries
        still lands on the same value the base station computes.
        """
        if round_no < self.round:
            raise ValueError(f"seed chain cannot rewind from {self.round} to {round_no}")
        while self.round < round_no:
            self.round += 1
            self.seed = next_seed(key, self.seed, self.round)
        return self.seed


def diffuse(seed: int, reading: int) -> int:
    """Conceal an encoded reading under a seed: (seed + reading) mod M."""
    return (seed + reading) & MASK


def undiffuse(diffused_sum: int, seed_sum: int) -> int:
    """Reverse diffusion on an aggregate: (diffused_sum - seed_sum) mod M."""
    return (diffused_sum - seed_sum) & MASK


def sense_raw(sense_key: bytes, round_no: int, max_raw: int) -> int:
    """Deterministic per-round synthetic reading in [0, max_raw]."""
    digest = _prf(sense_key, _PERSON_SENSE, round_no.to_bytes(8, "big"), 8)
    return int.from_bytes(digest, "big") % (max_raw + 1)


# === Authentication tags ====================================================


def pair_bytes(dsum: int, dsum_prime: int) -> bytes:
    """Wire form of a diffused pair: two 8-byte big-endian words, K then K'."""
    return (dsum & MASK).to_bytes(8, "big") + (dsum_prime & MASK).to_bytes(8, "big")


def mac(key: bytes, payload: bytes) -> bytes:
    _check_key(key)
    return _prf(key, _PERSON_MAC, payload, TAG_LEN)


def mac_pair(key: bytes, dsum: int, dsum_prime: int) -> bytes:
    return mac(key, pair_bytes(dsum, dsum_prime))


def xor_tags(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def combine_macs(own: bytes, children: list[bytes]) -> bytes:
    """XOR-fold child tags into a node's own tag; order-independent."""
    out = own
    for tag in children:
        out = xor_tags(out, tag)
    return out


# === Sealed pairwise channels ===============================================


def _keystream(key: bytes, counter: int, length: int) -> bytes:
    blocks = []
    counter_be = counter.to_bytes(8, "big")
    for block_no in range((length + 31) // 32):
        blocks.append(_prf(key, _PERSON_STREAM, counter_be + block_no.to_bytes(4, "big"), 32))
    return b"".join(blocks)[:length]


def seal(channel_key: bytes, counter: int, plaintext: bytes) -> bytes:
    """Encrypt-then-MAC under the channel key; the counter is authenticated."""
    _check_key(channel_key)
    ct = bytes(p ^ k for p, k in zip(plaintext, _keystream(channel_key, counter, len(plaintext))))
    tag = _prf(channel_key, _PERSON_CHANTAG, counter.to_bytes(8, "big") + ct, CHANNEL_TAG_LEN)
    return ct + tag


def open_sealed(channel_key: bytes, counter: int, blob: bytes) -> bytes:
    """Inverse of seal; raises AuthFailure on any bit of tampering."""
    _check_key(channel_key)
    if len(blob) < CHANNEL_TAG_LEN:
        raise AuthFailure("sealed blob shorter than its tag")
    ct, tag = blob[:-CHANNEL_TAG_LEN], blob[-CHANNEL_TAG_LEN:]
    want = _prf(channel_key, _PERSON_CHANTAG, counter.to_bytes(8, "big") + ct, CHANNEL_TAG_LEN)
    if not hmac.compare_digest(tag, want):
        raise AuthFailure("channel tag mismatch")
    return bytes(c ^ k for c, k in zip(ct, _keystream(channel_key, counter, len(ct))))


class SecureChannel:
    """One endpoint of a sealed pairwise link with replay protection.

    Counters are strictly increasing per direction: the sender stamps each
    blob with the next counter, the receiver accepts a blob only if its
    counter exceeds the last one accepted.
    """

    __slots__ = ("key", "_send_counter", "_recv_last")

    def __init__(self, key: bytes):
        self.key = _check_key(key)
        self._send_counter = 0
        self._recv_last = 0

    @property
    def last_accepted(self) -> int:
        return self._recv_last

    def seal_next(self, plaintext: bytes) -> tuple[int, bytes]:
        self._send_counter += 1
        return self._send_counter, seal(self.key, self._send_counter, plaintext)

    def open(self, counter: int, blob: bytes) -> bytes:
        if counter <= self._recv_last:
            raise ReplayDetected(f"counter {counter} <= last accepted {self._recv_last}")
        plaintext = open_sealed(self.key, counter, blob)
        self._recv_last = counter
        return plaintext


def derive_bs_channel_key(node_key: bytes, node_id: int) -> bytes:
    """Key for the node's direct logical channel to the base station.

    Derived from the node's long-term key so provisioning stays two keys per
    node plus one per edge; domain-separated from every other PRF use.
    """
    return _prf(node_key, b"diff.bschan", node_id.to_bytes(4, "big"), KEY_LEN)
