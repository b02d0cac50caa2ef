"""NTPv4 packet codec.

Fixed 48-byte header, optionally followed by a 4-byte key ID and a 16-byte
MD5 digest. Extension fields are not supported. All multi-byte fields are
big-endian.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Optional

HEADER_LEN = 48
MAC_LEN = 20
DIGEST_LEN = 16
NTP_VERSION = 4
MAX_STRATUM = 16
FRAC_SCALE = 1 << 32

KISS_RATE = b"RATE"

_HEADER = struct.Struct("!BBbbII4sQQQQ")
_MAC = struct.Struct("!I16s")


class PacketError(ValueError):
    """A packet violates a structural rule and cannot be encoded."""


class MalformedPacket(PacketError):
    """Bytes on the wire do not decode to a valid packet."""


class Mode(enum.IntEnum):
    SYMMETRIC_ACTIVE = 1
    SYMMETRIC_PASSIVE = 2
    CLIENT = 3
    SERVER = 4
    BROADCAST = 5


class MacStatus(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNAUTHENTICATED = "unauthenticated"


@dataclass(frozen=True, order=True)
class NtpTimestamp:
    """64-bit NTP timestamp: whole seconds since 1900 (era 0) and a binary fraction."""

    seconds: int = 0
    fraction: int = 0

    def __post_init__(self):
        if not 0 <= self.seconds < FRAC_SCALE or not 0 <= self.fraction < FRAC_SCALE:
            raise PacketError(f"timestamp out of range: {self.seconds}.{self.fraction}")

    @classmethod
    def from_seconds(cls, value) -> "NtpTimestamp":
        value = Fraction(value)
        if value < 0:
            raise PacketError(f"timestamp before the NTP epoch: {float(value)}")
        ticks = int(value * FRAC_SCALE)  # floor for non-negative values
        return cls.from_int(ticks)

    @classmethod
    def from_int(cls, raw: int) -> "NtpTimestamp":
        return cls(raw >> 32, raw & 0xFFFFFFFF)

    def to_int(self) -> int:
        return (self.seconds << 32) | self.fraction

    def to_seconds(self) -> Fraction:
        return Fraction(self.to_int(), FRAC_SCALE)

    @property
    def is_null(self) -> bool:
        return self.seconds == 0 and self.fraction == 0

    def __str__(self):
        return f"{self.seconds}.{self.fraction:08x}"


NULL_TS = NtpTimestamp()


@dataclass(frozen=True)
class Mac:
    key_id: int
    digest: bytes

    def __post_init__(self):
        if not 0 <= self.key_id < FRAC_SCALE:
            raise PacketError(f"key id out of range: {self.key_id}")
        if len(self.digest) != DIGEST_LEN:
            raise PacketError(f"digest must be {DIGEST_LEN} bytes, got {len(self.digest)}")


@dataclass(frozen=True)
class SymmetricKey:
    key_id: int
    secret: bytes

    def __post_init__(self):
        if not 0 < self.key_id < FRAC_SCALE:
            raise ValueError(f"key id must be a nonzero 32-bit value, got {self.key_id}")
        if not 1 <= len(self.secret) <= 64:
            raise ValueError("key secret must be 1..64 bytes")


@dataclass(frozen=True)
class NtpPacket:
    mode: Mode
    leap: int = 0
    version: int = NTP_VERSION
    stratum: int = 0
    poll: int = 0
    precision: int = 0
    root_delay: int = 0
    root_dispersion: int = 0
    reference_id: bytes = b"\x00\x00\x00\x00"
    reference_ts: NtpTimestamp = NULL_TS
    origin_ts: NtpTimestamp = NULL_TS
    receive_ts: NtpTimestamp = NULL_TS
    transmit_ts: NtpTimestamp = NULL_TS
    mac: Optional[Mac] = None

    def validate(self) -> None:
        if not 0 <= self.leap <= 3:
            raise PacketError(f"leap indicator out of range: {self.leap}")
        if self.version != NTP_VERSION:
            raise PacketError(f"unsupported version: {self.version}")
        if self.mode not in Mode.__members__.values():
            raise PacketError(f"unsupported mode: {self.mode}")
        if not 0 <= self.stratum <= MAX_STRATUM:
            raise PacketError(f"stratum out of range: {self.stratum}")
        if not -128 <= self.poll <= 127 or not -128 <= self.precision <= 127:
            raise PacketError("poll/precision must fit a signed byte")
        if not 0 <= self.root_delay < FRAC_SCALE or not 0 <= self.root_dispersion < FRAC_SCALE:
            raise PacketError("root delay/dispersion must fit 32 bits")
        if len(self.reference_id) != 4:
            raise PacketError("reference id must be 4 bytes")
        if self.mode == Mode.BROADCAST and not (self.origin_ts.is_null and self.receive_ts.is_null):
            raise PacketError("broadcast packets carry NULL origin and receive timestamps")

    @property
    def is_kod(self) -> bool:
        return self.stratum == 0 and self.kiss_code is not None

    @property
    def kiss_code(self) -> Optional[str]:
        """The ASCII kiss code when stratum is 0, else None."""
        if self.stratum != 0:
            return None
        try:
            code = self.reference_id.decode("ascii")
        except UnicodeDecodeError:
            return None
        return code if code.isalpha() and code.isupper() else None

    @property
    def poll_interval(self) -> Fraction:
        return Fraction(2) ** self.poll

    def without_mac(self) -> "NtpPacket":
        return replace(self, mac=None)


def encode_header(pkt: NtpPacket) -> bytes:
    pkt.validate()
    return _HEADER.pack(
        (pkt.leap << 6) | (pkt.version << 3) | int(pkt.mode),
        pkt.stratum,
        pkt.poll,
        pkt.precision,
        pkt.root_delay,
        pkt.root_dispersion,
        pkt.reference_id,
        pkt.reference_ts.to_int(),
        pkt.origin_ts.to_int(),
        pkt.receive_ts.to_int(),
        pkt.transmit_ts.to_int(),
    )


def encode(pkt: NtpPacket) -> bytes:
    header = encode_header(pkt)
    if pkt.mac is None:
        return header
    return header + _MAC.pack(pkt.mac.key_id, pkt.mac.digest)


def decode(data: bytes) -> NtpPacket:
    if len(data) not in (HEADER_LEN, HEADER_LEN + MAC_LEN):
        raise MalformedPacket(f"bad packet length {len(data)}")
    (lvm, stratum, poll, precision, root_delay, root_disp, refid,
     ref, org, rec, xmt) = _HEADER.unpack_from(data)
    mode = lvm & 0x7
    if mode not in Mode.__members__.values():
        raise MalformedPacket(f"mode {mode} not accepted")
    mac = None
    if len(data) > HEADER_LEN:
        key_id, digest = _MAC.unpack_from(data, HEADER_LEN)
        mac = Mac(key_id, digest)
    pkt = NtpPacket(
        mode=Mode(mode),
        leap=lvm >> 6,
        version=(lvm >> 3) & 0x7,
        stratum=stratum,
        poll=poll,
        precision=precision,
        root_delay=root_delay,
        root_dispersion=root_disp,
        reference_id=refid,
        reference_ts=NtpTimestamp.from_int(ref),
        origin_ts=NtpTimestamp.from_int(org),
        receive_ts=NtpTimestamp.from_int(rec),
        transmit_ts=NtpTimestamp.from_int(xmt),
        mac=mac,
    )
    try:
        pkt.validate()
    except PacketError as exc:
        raise MalformedPacket(str(exc)) from None
    return pkt


def mode_of(data: bytes) -> Optional[int]:
    """Mode bits of a raw frame without a full decode; None for non-NTP payloads."""
    if len(data) not in (HEADER_LEN, HEADER_LEN + MAC_LEN):
        return None
    return data[0] & 0x7


def compute_mac(header: bytes, key: SymmetricKey) -> Mac:
    if len(header) != HEADER_LEN:
        raise PacketError(f"MAC input must be a {HEADER_LEN}-byte header")
    return Mac(key.key_id, hashlib.md5(key.secret + header).digest())


def sign(pkt: NtpPacket, key: SymmetricKey) -> NtpPacket:
    return replace(pkt, mac=compute_mac(encode_header(pkt), key))


def verify_mac(pkt: NtpPacket, keyring: Iterable[SymmetricKey]) -> MacStatus:
    if pkt.mac is None:
        return MacStatus.UNAUTHENTICATED
    header = encode_header(pkt)
    for key in keyring:
        if key.key_id == pkt.mac.key_id and compute_mac(header, key).digest == pkt.mac.digest:
            return MacStatus.VALID
    return MacStatus.INVALID


def make_kod(poll_exponent: int, echo_origin: NtpTimestamp, code: bytes = KISS_RATE) -> NtpPacket:
    """Kiss-o'-Death reply; the query's transmit timestamp goes back as origin."""
    if poll_exponent < 0:
        raise PacketError("KoD poll exponent must be non-negative")
    if len(code) != 4:
        raise PacketError("kiss code must be 4 ASCII characters")
    return NtpPacket(
        mode=Mode.SERVER,
        leap=3,
        stratum=0,
        poll=poll_exponent,
        reference_id=code,
        origin_ts=echo_origin,
    )


def describe(data: bytes) -> str:
    """Short label for a raw NTP frame: mode3, mode4, mode5, kod or ntp?"""
    try:
        pkt = decode(data)
    except PacketError:
        return "malformed"
    if pkt.mode == Mode.SERVER and pkt.is_kod:
        return "kod"
    return f"mode{int(pkt.mode)}"
