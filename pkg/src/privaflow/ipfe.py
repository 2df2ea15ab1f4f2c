"""Multi-client functional encryption for additive traffic aggregates.

Per-driver key material, single untrusting aggregator:

  setup:    a_i, W_i = (w_i0, w_i1), u_i uniform in Z_p per driver i.
  driver key i:  [avec_i] = (g, g^{a_i}),  [W_i avec_i] = g^{w_i0 + w_i1 a_i},
                 and the pad u_i in the clear (the key is private to driver i).
  encrypt(key_i, l):  r uniform;  t = (g^r, g^{a_i r});
                      c = g^{l + u_i} * [W_i avec_i]^r.
  functional key for weights y:  d_i = y_i * W_i,  z = sum_i y_i u_i.
  aggregate:  E = prod_i c_i^{y_i} / (t_i0^{d_i0} * t_i1^{d_i1}) / g^z
                = g^{sum_i y_i l_i},
  finished by bounded discrete-log recovery of the weighted sum.

The per-driver terms telescope away in the aggregate, so no ciphertext is
individually decryptable: only the y-weighted sum is recoverable, and only
by a holder of the functional key. Ciphertexts cost three exponentiations;
aggregation costs two per driver plus one inversion.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from . import group
from .errors import ConfigError, DecodeError, MissingDriver, ProtocolError
from .group import GroupParams

WIRE_VERSION = 1

# Serialized layouts (little-endian throughout).
KEY_MATERIAL_LEN = 4 * 32  # avec (2 elements) + [W avec] + pad scalar
KEY_RECORD_LEN = 1 + 4 + KEY_MATERIAL_LEN  # version, driver id, material
CT_ELEMENTS_LEN = 3 * 32  # t0, t1, c

_SMALL_POWERS = [group.exp_g(i) for i in range(17)]


def _g_pow(e: int) -> int:
    if 0 <= e < len(_SMALL_POWERS):
        return _SMALL_POWERS[e]
    return group.exp_g(e)


@dataclass(frozen=True)
class DriverSecrets:
    a: int
    w0: int
    w1: int
    u: int


@dataclass(frozen=True)
class MasterSecret:
    params: GroupParams
    secrets: dict[int, DriverSecrets]

    @property
    def driver_ids(self) -> list[int]:
        return sorted(self.secrets)


@dataclass(frozen=True)
class DriverKey:
    """Per-driver encryption key: group elements plus the additive pad."""

    driver_id: int
    e_avec: tuple[int, int]
    e_w_avec: int
    u: int

    @cached_property
    def u_element(self) -> int:
        # g^{u}, reused by every encryption under this key.
        return group.exp_g(self.u)


@dataclass(frozen=True)
class FunctionalKey:
    """Aggregation key for a fixed weight vector y over a driver set."""

    y: dict[int, int]
    d: dict[int, tuple[int, int]]
    z: int

    @cached_property
    def z_element(self) -> int:
        return group.exp_g(self.z)


@dataclass(frozen=True)
class Ciphertext:
    driver_id: int
    t: tuple[int, int]
    c: int


def setup(driver_ids: Sequence[int], rng, params: GroupParams | None = None) -> MasterSecret:
    """Draws fresh per-driver secrets for every id in ``driver_ids``.

    Deterministic for a seeded rng. Raises ConfigError on an empty or
    duplicated id list, or ids that do not fit the wire's u32 field.
    """
    params = params or group.group_params()
    ids = list(driver_ids)
    if not ids:
        raise ConfigError("driver set must be non-empty")
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate driver ids")
    secrets: dict[int, DriverSecrets] = {}
    for i in ids:
        if not 0 <= i < 1 << 32:
            raise ConfigError(f"driver id {i} does not fit u32")
        secrets[i] = DriverSecrets(
            a=group.random_scalar(rng),
            w0=group.random_scalar(rng),
            w1=group.random_scalar(rng),
            u=group.random_scalar(rng),
        )
    return MasterSecret(params=params, secrets=secrets)


def derive_driver_key(msk: MasterSecret, driver_id: int) -> DriverKey:
    """Builds driver_id's private encryption key from the master secret."""
    try:
        s = msk.secrets[driver_id]
    except KeyError:
        raise MissingDriver(f"driver {driver_id} not in master secret") from None
    p = msk.params.p
    return DriverKey(
        driver_id=driver_id,
        e_avec=(group.GENERATOR, group.exp_g(s.a)),
        e_w_avec=group.exp_g((s.w0 + s.w1 * s.a) % p),
        u=s.u,
    )


def derive_functional_key(msk: MasterSecret, y: Mapping[int, int]) -> FunctionalKey:
    """Derives the aggregation key for weight vector y (driver id -> weight)."""
    if not y:
        raise ConfigError("weight vector must be non-empty")
    p = msk.params.p
    d: dict[int, tuple[int, int]] = {}
    z = 0
    y_norm: dict[int, int] = {}
    for driver_id, weight in y.items():
        try:
            s = msk.secrets[driver_id]
        except KeyError:
            raise MissingDriver(f"driver {driver_id} not in master secret") from None
        w = weight % p
        y_norm[driver_id] = w
        d[driver_id] = (w * s.w0 % p, w * s.w1 % p)
        z = (z + w * s.u) % p
    return FunctionalKey(y=y_norm, d=d, z=z)


def encrypt(key: DriverKey, plaintext: int, rng) -> Ciphertext:
    """Encrypts a small non-negative integer under a driver key."""
    if plaintext < 0:
        raise ProtocolError("plaintext must be non-negative")
    r = group.random_scalar(rng)
    t0 = group.exp(key.e_avec[0], r)
    t1 = group.exp(key.e_avec[1], r)
    c = group.mul(group.mul(_g_pow(plaintext), key.u_element), group.exp(key.e_w_avec, r))
    return Ciphertext(driver_id=key.driver_id, t=(t0, t1), c=c)


def aggregate_element(dk: FunctionalKey, ciphertexts: Iterable[Ciphertext]) -> int:
    """Evaluates the aggregate to the group element g^{sum y_i l_i}.

    The ciphertext set must cover the functional key's driver set exactly,
    one ciphertext per driver: gaps raise MissingDriver, strays and
    duplicates raise ProtocolError.
    """
    num = group.IDENTITY
    den = group.IDENTITY
    seen: set[int] = set()
    for ct in ciphertexts:
        weight_d = dk.d.get(ct.driver_id)
        if weight_d is None:
            raise ProtocolError(f"ciphertext from driver {ct.driver_id} outside key support")
        if ct.driver_id in seen:
            raise ProtocolError(f"duplicate ciphertext for driver {ct.driver_id}")
        seen.add(ct.driver_id)
        y_i = dk.y[ct.driver_id]
        if y_i == 0:
            continue
        num = group.mul(num, ct.c if y_i == 1 else group.exp(ct.c, y_i))
        den = group.mul(den, group.mul(group.exp(ct.t[0], weight_d[0]), group.exp(ct.t[1], weight_d[1])))
    missing = [i for i, w in dk.y.items() if w != 0 and i not in seen]
    if missing:
        raise MissingDriver(f"no ciphertext for drivers {sorted(missing)[:5]}")
    return group.mul(num, group.inv(group.mul(den, dk.z_element)))


def aggregate_decrypt(dk: FunctionalKey, ciphertexts: Iterable[Ciphertext], bound: int) -> int:
    """Recovers sum_i y_i * l_i, assuming it lies in [0, bound]."""
    return group.dlog_recover(aggregate_element(dk, ciphertexts), bound)


# ---------------------------------------------------------------------------
# Wire formats. Little-endian; group elements and scalars use the canonical
# 32-byte encodings.
#
# Driver key record (133 bytes):
#   [u8 version][u32 driver_id][32B g][32B g^a][32B g^{W avec}][32B u]
# Ciphertext element payload (96 bytes): [32B t0][32B t1][32B c]
# Functional key record (variable): [u8 version][u32 n] then per driver,
#   ascending id: [u32 id][32B y][32B d0][32B d1], then [32B z].
# ---------------------------------------------------------------------------


def encode_driver_key(key: DriverKey) -> bytes:
    return (
        struct.pack("<BI", WIRE_VERSION, key.driver_id)
        + group.encode_element(key.e_avec[0])
        + group.encode_element(key.e_avec[1])
        + group.encode_element(key.e_w_avec)
        + group.encode_scalar(key.u)
    )


def decode_driver_key(data: bytes) -> DriverKey:
    if len(data) != KEY_RECORD_LEN:
        raise DecodeError(f"driver key record must be {KEY_RECORD_LEN} bytes")
    version, driver_id = struct.unpack_from("<BI", data)
    if version != WIRE_VERSION:
        raise DecodeError(f"unsupported key version {version}")
    off = 5
    e0 = group.decode_element(data[off : off + 32])
    e1 = group.decode_element(data[off + 32 : off + 64])
    ew = group.decode_element(data[off + 64 : off + 96])
    u = group.decode_scalar(data[off + 96 : off + 128])
    return DriverKey(driver_id=driver_id, e_avec=(e0, e1), e_w_avec=ew, u=u)


def encode_ciphertext_elements(ct: Ciphertext) -> bytes:
    return (
        group.encode_element(ct.t[0])
        + group.encode_element(ct.t[1])
        + group.encode_element(ct.c)
    )


def decode_ciphertext_elements(driver_id: int, data: bytes) -> Ciphertext:
    if len(data) != CT_ELEMENTS_LEN:
        raise DecodeError(f"ciphertext payload must be {CT_ELEMENTS_LEN} bytes")
    t0 = group.decode_element(data[:32])
    t1 = group.decode_element(data[32:64])
    c = group.decode_element(data[64:96])
    return Ciphertext(driver_id=driver_id, t=(t0, t1), c=c)


def encode_functional_key(dk: FunctionalKey) -> bytes:
    out = [struct.pack("<BI", WIRE_VERSION, len(dk.y))]
    for driver_id in sorted(dk.y):
        d0, d1 = dk.d[driver_id]
        out.append(struct.pack("<I", driver_id))
        out.append(group.encode_scalar(dk.y[driver_id]))
        out.append(group.encode_scalar(d0))
        out.append(group.encode_scalar(d1))
    out.append(group.encode_scalar(dk.z))
    return b"".join(out)


def decode_functional_key(data: bytes) -> FunctionalKey:
    if len(data) < 5:
        raise DecodeError("functional key record truncated")
    version, n = struct.unpack_from("<BI", data)
    if version != WIRE_VERSION:
        raise DecodeError(f"unsupported key version {version}")
    expected = 5 + n * (4 + 96) + 32
    if len(data) != expected:
        raise DecodeError(f"functional key record must be {expected} bytes")
    off = 5
    y: dict[int, int] = {}
    d: dict[int, tuple[int, int]] = {}
    for _ in range(n):
        (driver_id,) = struct.unpack_from("<I", data, off)
        off += 4
        y[driver_id] = group.decode_scalar(data[off : off + 32])
        d0 = group.decode_scalar(data[off + 32 : off + 64])
        d1 = group.decode_scalar(data[off + 64 : off + 96])
        d[driver_id] = (d0, d1)
        off += 96
    z = group.decode_scalar(data[off : off + 32])
    return FunctionalKey(y=y, d=d, z=z)
