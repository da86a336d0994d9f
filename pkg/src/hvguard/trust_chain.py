"""Software model of TPM measurement, sealing and attestation.

Measurement registers follow the usual extend rule
``value' = SHA256(value || SHA256(measurement))`` from an all-zero start.
Sealed blobs are AES-GCM ciphertexts under a device-internal key with the
required measurement bound in as associated data. Quotes are HMAC-SHA256
tags over ``register value || nonce || SHA256(output)``.

Sealed-blob store file format (big-endian, no header, records back to back)::

    u32  blob length L
    L    blob bytes (12-byte GCM nonce || ciphertext || 16-byte tag)
    32   required measurement
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import IntegrityFailure, IsolationViolation, MeasurementMismatch, StoreCorrupt, TooLarge
from .guest import Isolation
from .monitor import digest

ZERO_MEASUREMENT = bytes(32)
DEFAULT_SEAL_LIMIT = 256
GCM_NONCE = 12


@dataclass(frozen=True)
class MeasurementRegister:
    value: bytes = ZERO_MEASUREMENT
    history: tuple[bytes, ...] = ()


def extend(register: MeasurementRegister, measurement: bytes) -> MeasurementRegister:
    return MeasurementRegister(
        digest(register.value + digest(measurement)),
        register.history + (bytes(measurement),),
    )


def measure(measurements: list[bytes] | tuple[bytes, ...]) -> MeasurementRegister:
    register = MeasurementRegister()
    for m in measurements:
        register = extend(register, m)
    return register


@dataclass(frozen=True)
class SealedBlob:
    payload: bytes
    required_measurement: bytes


@dataclass(frozen=True)
class Quote:
    register_value: bytes
    nonce: bytes
    output_digest: bytes
    tag: bytes


def _derive(secret: bytes, label: bytes) -> bytes:
    return hmac.new(secret, label, hashlib.sha256).digest()


def quote_message(register_value: bytes, nonce: bytes, output_digest: bytes) -> bytes:
    return register_value + nonce + output_digest


def verify_quote(quote: Quote, key: bytes, output: bytes | None = None) -> bool:
    """Check the tag, and when ``output`` is given, that the quote covers it."""
    if output is not None and not hmac.compare_digest(digest(output), quote.output_digest):
        return False
    expected = hmac.new(
        key, quote_message(quote.register_value, quote.nonce, quote.output_digest), hashlib.sha256
    ).digest()
    return hmac.compare_digest(expected, quote.tag)


class _KeyedEngine:
    """Seal/unseal/quote under keys derived from one root secret."""

    def __init__(self, secret: bytes, seal_limit: int, rng: Callable[[int], bytes]):
        self._seal_key = _derive(secret, b"hvguard seal")
        self.quote_key = _derive(secret, b"hvguard quote")
        self.seal_limit = seal_limit
        self._rng = rng

    def seal(self, data: bytes, required: bytes) -> SealedBlob:
        if len(data) > self.seal_limit:
            raise TooLarge(f"{len(data)} bytes exceeds the {self.seal_limit}-byte sealed storage limit")
        if len(required) != 32:
            raise ValueError("required measurement must be 32 bytes")
        nonce = self._rng(GCM_NONCE)
        ct = AESGCM(self._seal_key).encrypt(nonce, bytes(data), required)
        return SealedBlob(nonce + ct, bytes(required))

    def unseal(self, blob: SealedBlob, register: MeasurementRegister) -> bytes:
        if register.value != blob.required_measurement:
            raise MeasurementMismatch("current measurement does not match the sealed one")
        if len(blob.payload) < GCM_NONCE + 16:
            raise IntegrityFailure("sealed blob is truncated")
        nonce, ct = blob.payload[:GCM_NONCE], blob.payload[GCM_NONCE:]
        try:
            return AESGCM(self._seal_key).decrypt(nonce, ct, blob.required_measurement)
        except InvalidTag:
            raise IntegrityFailure("sealed blob failed authentication") from None

    def quote(self, register: MeasurementRegister, nonce: bytes, output: bytes) -> Quote:
        out = digest(output)
        tag = hmac.new(self.quote_key, quote_message(register.value, nonce, out), hashlib.sha256).digest()
        return Quote(register.value, bytes(nonce), out, tag)


class TpmDevice:
    """The slow hardware chip. ``calls`` counts every operation issued to it."""

    def __init__(self, device_key: bytes | None = None, seal_limit: int = DEFAULT_SEAL_LIMIT,
                 rng: Callable[[int], bytes] = os.urandom):
        self.device_key = device_key if device_key is not None else rng(32)
        self._engine = _KeyedEngine(self.device_key, seal_limit, rng)
        self.calls = 0

    @property
    def quote_key(self) -> bytes:
        return self._engine.quote_key

    @property
    def seal_limit(self) -> int:
        return self._engine.seal_limit

    def seal(self, data: bytes, required: bytes) -> SealedBlob:
        self.calls += 1
        return self._engine.seal(data, required)

    def unseal(self, blob: SealedBlob, register: MeasurementRegister) -> bytes:
        self.calls += 1
        return self._engine.unseal(blob, register)

    def quote(self, register: MeasurementRegister, nonce: bytes, output: bytes) -> Quote:
        self.calls += 1
        return self._engine.quote(register, nonce, output)

    def verify(self, quote: Quote, output: bytes | None = None) -> bool:
        self.calls += 1
        return verify_quote(quote, self._engine.quote_key, output)


class FlickerSession:
    """One isolated module execution under a fresh dynamic measurement.

    The module image and input are copied into ``workspace`` for the run;
    the workspace is zeroed before the session returns, whatever happens.
    """

    def __init__(self, device: TpmDevice, isolation: Isolation | None = None):
        self.device = device
        self.isolation = isolation or Isolation()
        self.workspace = bytearray()
        self.register: MeasurementRegister | None = None

    def run(self, module_image: bytes, input: bytes, executor: Callable[[bytes, bytes], bytes],
            nonce: bytes = b"") -> tuple[bytes, Quote]:
        self.register = extend(MeasurementRegister(), module_image)
        self.workspace = bytearray(module_image) + bytearray(input)
        split = len(module_image)
        before = self.isolation.violations
        try:
            with self.isolation.session():
                output = bytes(executor(bytes(self.workspace[:split]), bytes(self.workspace[split:])))
        finally:
            self.workspace[:] = bytes(len(self.workspace))
        if self.isolation.violations != before:
            raise IsolationViolation("guest activity interleaved with the isolated session")
        return output, self.device.quote(self.register, nonce, output)


def flicker_session(device: TpmDevice, module_image: bytes, input: bytes,
                    executor: Callable[[bytes, bytes], bytes], nonce: bytes = b"",
                    isolation: Isolation | None = None) -> tuple[bytes, Quote]:
    return FlickerSession(device, isolation).run(module_image, input, executor, nonce)


class BlobStore:
    """Persistent sealed-blob file (format in the module docstring)."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def load(self) -> list[SealedBlob]:
        if not self.path.exists():
            return []
        data = self.path.read_bytes()
        blobs, pos = [], 0
        while pos < len(data):
            if pos + 4 > len(data):
                raise StoreCorrupt("truncated length prefix")
            (length,) = struct.unpack_from(">I", data, pos)
            pos += 4
            if pos + length + 32 > len(data):
                raise StoreCorrupt("truncated record")
            blobs.append(SealedBlob(data[pos:pos + length], data[pos + length:pos + length + 32]))
            pos += length + 32
        return blobs

    def save(self, blobs: list[SealedBlob]) -> None:
        out = bytearray()
        for blob in blobs:
            out += struct.pack(">I", len(blob.payload)) + blob.payload + blob.required_measurement
        self.path.write_bytes(bytes(out))


@dataclass
class MicroTpm:
    """Software TPM keyed by the long-term secret; never touches the device."""

    long_term_secret: bytes
    backing: SealedBlob
    seal_limit: int = DEFAULT_SEAL_LIMIT
    rng: Callable[[int], bytes] = os.urandom
    registers: dict[int, MeasurementRegister] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._engine = _KeyedEngine(self.long_term_secret, self.seal_limit, self.rng)

    @property
    def quote_key(self) -> bytes:
        return self._engine.quote_key

    def extend(self, index: int, measurement: bytes) -> MeasurementRegister:
        self.registers[index] = extend(self.registers.get(index, MeasurementRegister()), measurement)
        return self.registers[index]

    def seal(self, data: bytes, required: bytes) -> SealedBlob:
        return self._engine.seal(data, required)

    def unseal(self, blob: SealedBlob, register: MeasurementRegister) -> bytes:
        return self._engine.unseal(blob, register)

    def quote(self, register: MeasurementRegister, nonce: bytes, output: bytes) -> Quote:
        return self._engine.quote(register, nonce, output)

    def verify(self, quote: Quote, output: bytes | None = None) -> bool:
        return verify_quote(quote, self._engine.quote_key, output)


def utpm_bootstrap(device: TpmDevice, hypervisor_measurement: bytes, srtm: MeasurementRegister,
                   store: BlobStore, rng: Callable[[int], bytes] = os.urandom) -> MicroTpm:
    """Create (first boot) or recover (later boots) the μTPM long-term secret.

    The secret is sealed to ``hypervisor_measurement``; it is only released
    when the static measurement chain of this boot reproduces that value.
    """
    if srtm.value != hypervisor_measurement:
        raise MeasurementMismatch("loaded hypervisor does not match the expected measurement")
    blobs = store.load()
    if not blobs:
        secret = rng(32)
        blob = device.seal(secret, hypervisor_measurement)
        store.save([blob])
    else:
        blob = blobs[0]
        try:
            secret = device.unseal(blob, srtm)
        except IntegrityFailure as exc:
            raise StoreCorrupt(str(exc)) from exc
        if len(secret) != 32:
            raise StoreCorrupt("sealed long-term secret has the wrong length")
    return MicroTpm(secret, blob, device.seal_limit, rng)
