"""Prime-order group arithmetic and bounded discrete-log recovery.

The group is the quadratic-residue subgroup of Z_P* for a fixed 256-bit
safe prime P = 2q + 1, generated by g = 4, with prime order q (255 bits).
Elements are Python ints in [1, P) serialized as 32-byte little-endian
strings; scalars are ints in [0, q) with the same 32-byte encoding. The
parameter set matches the protocol's element-size accounting (32-byte
elements); a hardened deployment would swap an elliptic-curve group in
behind this module's interface without touching the callers.

All exponent arithmetic is delegated to gmpy2, which is the difference
between microseconds and milliseconds per operation at this size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from hashlib import blake2b

import gmpy2

from .errors import ConfigError, DecodeError, NotInRange

# Smallest 256-bit safe prime: P = 2^255 + 0x2ff7f, with q = (P - 1) / 2
# also prime. g = 4 generates the order-q quadratic-residue subgroup.
SAFE_PRIME = (1 << 255) + 0x2FF7F
GROUP_ORDER = (SAFE_PRIME - 1) // 2
GENERATOR = 4
IDENTITY = 1
ELEMENT_LEN = 32
SCALAR_LEN = 32
GROUP_ID = "qr-safeprime-256-v1"

_P = gmpy2.mpz(SAFE_PRIME)


@dataclass(frozen=True)
class GroupParams:
    """Named-group parameters.

    Attributes:
        group_id: Stable identifier of the parameter set.
        p: Prime order of the subgroup (the scalar field size).
        g: Generator of the order-p subgroup.
        element_len: Bytes per serialized element.
        modulus: The safe prime defining the ambient field Z_modulus*.
    """

    group_id: str
    p: int
    g: int
    element_len: int
    modulus: int


_PARAMS = GroupParams(
    group_id=GROUP_ID,
    p=GROUP_ORDER,
    g=GENERATOR,
    element_len=ELEMENT_LEN,
    modulus=SAFE_PRIME,
)


def group_params() -> GroupParams:
    """Returns the fixed group parameters. Deterministic: no trusted setup."""
    return _PARAMS


def group_gen(security_level: int = 128) -> GroupParams:
    """Returns the named group for a supported security level.

    Only the 128-bit parameter set (32-byte elements) is defined.
    """
    if security_level != 128:
        raise ConfigError(f"unsupported security level {security_level}")
    return _PARAMS


def exp(base: int, e: int) -> int:
    """Computes base**e in the group.

    The exponent is reduced mod the group order, so negative exponents
    denote inverses as usual.
    """
    return int(gmpy2.powmod(base, e % GROUP_ORDER, _P))


def exp_g(e: int) -> int:
    """Computes g**e for the fixed generator."""
    return int(gmpy2.powmod(GENERATOR, e % GROUP_ORDER, _P))


def mul(a: int, b: int) -> int:
    """Group operation (modular multiplication)."""
    return a * b % SAFE_PRIME


def inv(a: int) -> int:
    """Group inverse."""
    return int(gmpy2.invert(a, _P))


def div(a: int, b: int) -> int:
    """Computes a / b, i.e. a * inv(b)."""
    return a * int(gmpy2.invert(b, _P)) % SAFE_PRIME


def encode_element(x: int) -> bytes:
    """Serializes a group element to its fixed-width canonical form."""
    return x.to_bytes(ELEMENT_LEN, "little")


def decode_element(data: bytes) -> int:
    """Parses and validates a serialized group element.

    Raises:
        DecodeError: wrong length, out of range, or not in the subgroup.
    """
    if len(data) != ELEMENT_LEN:
        raise DecodeError(f"element must be {ELEMENT_LEN} bytes, got {len(data)}")
    x = int.from_bytes(data, "little")
    if not 1 <= x < SAFE_PRIME:
        raise DecodeError("element out of range")
    # Subgroup membership: quadratic residues have Legendre symbol +1.
    if x != 1 and gmpy2.legendre(x, _P) != 1:
        raise DecodeError("element not in the prime-order subgroup")
    return x


def encode_scalar(s: int) -> bytes:
    """Serializes a scalar in [0, group order)."""
    return s.to_bytes(SCALAR_LEN, "little")


def decode_scalar(data: bytes) -> int:
    """Parses a serialized scalar, validating its range."""
    if len(data) != SCALAR_LEN:
        raise DecodeError(f"scalar must be {SCALAR_LEN} bytes, got {len(data)}")
    s = int.from_bytes(data, "little")
    if s >= GROUP_ORDER:
        raise DecodeError("scalar exceeds the group order")
    return s


class SeededRng:
    """Deterministic byte-oriented randomness source.

    A keyed BLAKE2b counter generator: seedable for reproducible key
    generation and protocol runs, with output indistinguishable from
    uniform for anything short of breaking the hash. Exposes the subset
    of the random.Random interface the toolkit uses, so callers may pass
    either this or secrets.SystemRandom wherever an rng is accepted.
    """

    def __init__(self, seed: int | bytes | str):
        if isinstance(seed, int):
            seed_bytes = seed.to_bytes((seed.bit_length() + 8) // 8, "little", signed=True)
        elif isinstance(seed, str):
            seed_bytes = seed.encode()
        else:
            seed_bytes = bytes(seed)
        self._key = blake2b(seed_bytes, digest_size=32).digest()
        self._counter = 0
        self._buffer = b""

    def randbytes(self, n: int) -> bytes:
        while len(self._buffer) < n:
            block = blake2b(
                self._counter.to_bytes(8, "little"), key=self._key, digest_size=64
            ).digest()
            self._counter += 1
            self._buffer += block
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def getrandbits(self, k: int) -> int:
        if k <= 0:
            return 0
        nbytes = (k + 7) // 8
        x = int.from_bytes(self.randbytes(nbytes), "little")
        return x >> (8 * nbytes - k)

    def randrange(self, start: int, stop: int | None = None) -> int:
        if stop is None:
            start, stop = 0, start
        width = stop - start
        if width <= 0:
            raise ValueError("empty range for randrange()")
        k = width.bit_length()
        while True:  # rejection sampling keeps the draw exactly uniform
            r = self.getrandbits(k)
            if r < width:
                return start + r


def random_scalar(rng) -> int:
    """Draws a uniform scalar in [0, group order)."""
    return rng.randrange(GROUP_ORDER)


# ---------------------------------------------------------------------------
# Bounded discrete-log recovery.
#
# The aggregate decryption ends with E = g^S where S is a small non-negative
# count, so recovery is a table lookup over g^0 .. g^bound. The table is
# extended incrementally and cached for the process lifetime; baby-step
# giant-step is the memory-light fallback and must agree with the table.
# ---------------------------------------------------------------------------

_table: dict[bytes, int] = {}
_table_bound = -1
_table_last = IDENTITY


def _extend_table(bound: int) -> None:
    global _table_bound, _table_last
    if bound <= _table_bound:
        return
    power = _table_last
    if _table_bound < 0:
        _table[encode_element(IDENTITY)] = 0
        _table_bound = 0
        power = IDENTITY
    for e in range(_table_bound + 1, bound + 1):
        power = power * GENERATOR % SAFE_PRIME
        _table.setdefault(encode_element(power), e)
    _table_bound = bound
    _table_last = power


def dlog_table(element: int, bound: int) -> int:
    """Recovers e with g**e == element and 0 <= e <= bound via lookup.

    Raises:
        NotInRange: the element is not a power of g within the bound.
    """
    if bound < 0:
        raise NotInRange("bound must be non-negative")
    _extend_table(bound)
    e = _table.get(encode_element(element))
    if e is None or e > bound:
        raise NotInRange(f"no exponent <= {bound} found")
    return e


def dlog_bsgs(element: int, bound: int) -> int:
    """Baby-step giant-step recovery of e with g**e == element, e <= bound."""
    if bound < 0:
        raise NotInRange("bound must be non-negative")
    if element == IDENTITY:
        return 0
    m = math.isqrt(bound) + 1
    baby: dict[int, int] = {}
    power = IDENTITY
    for j in range(m):
        baby.setdefault(power, j)
        power = power * GENERATOR % SAFE_PRIME
    # power now holds g^m; step the target down by g^-m per giant step.
    step = int(gmpy2.invert(power, _P))
    gamma = element
    for i in range(m + 1):
        j = baby.get(gamma)
        if j is not None:
            e = i * m + j
            if e <= bound:
                return e
        gamma = gamma * step % SAFE_PRIME
    raise NotInRange(f"no exponent <= {bound} found")


def dlog_recover(element: int, bound: int) -> int:
    """Bounded discrete log: table lookup for small bounds, BSGS above."""
    if bound <= 1 << 20:
        return dlog_table(element, bound)
    return dlog_bsgs(element, bound)
