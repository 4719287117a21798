"""Section-scoped hybrid payload encryption.

Default suite: X25519 key agreement with a per-message ephemeral key,
HKDF-SHA256 key derivation and ChaCha20-Poly1305 sealing. Ciphertext layout
is ``ephemeral_public(32) || nonce(12) || sealed(len(m) + 16)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from dhlink.errors import DecryptFailure, ValidationError

SUITE = "x25519-hkdf-sha256-chacha20poly1305"
PUBLIC_KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
OVERHEAD = PUBLIC_KEY_SIZE + NONCE_SIZE + TAG_SIZE
_INFO = b"dhlink/e2e-payload/" + SUITE.encode()

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes


def generate_keypair() -> KeyPair:
    priv = X25519PrivateKey.generate()
    return KeyPair(
        public_key=priv.public_key().public_bytes(_RAW, _RAW_PUB),
        private_key=priv.private_bytes(_RAW, _RAW_PRIV, serialization.NoEncryption()),
    )


def public_from_private(private_key: bytes) -> bytes:
    return X25519PrivateKey.from_private_bytes(private_key).public_key().public_bytes(_RAW, _RAW_PUB)


def _derive(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=eph_pub + recipient_pub,
        info=_INFO,
    ).derive(shared)


def encrypt_payload(public_key: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    if not plaintext:
        raise ValidationError("plaintext must be non-empty")
    if len(public_key) != PUBLIC_KEY_SIZE:
        raise ValidationError("public key must be 32 bytes")
    recipient = X25519PublicKey.from_public_bytes(public_key)
    eph = X25519PrivateKey.generate()
    eph_pub = eph.public_key().public_bytes(_RAW, _RAW_PUB)
    key = _derive(eph.exchange(recipient), eph_pub, public_key)
    nonce = os.urandom(NONCE_SIZE)
    return eph_pub + nonce + ChaCha20Poly1305(key).encrypt(nonce, bytes(plaintext), aad or None)


def decrypt_payload(private_key: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    if len(ciphertext) < OVERHEAD:
        raise DecryptFailure("ciphertext shorter than suite minimum")
    try:
        priv = X25519PrivateKey.from_private_bytes(private_key)
        eph_pub = bytes(ciphertext[:PUBLIC_KEY_SIZE])
        nonce = bytes(ciphertext[PUBLIC_KEY_SIZE:PUBLIC_KEY_SIZE + NONCE_SIZE])
        sealed = bytes(ciphertext[PUBLIC_KEY_SIZE + NONCE_SIZE:])
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        recipient_pub = priv.public_key().public_bytes(_RAW, _RAW_PUB)
        key = _derive(shared, eph_pub, recipient_pub)
        return ChaCha20Poly1305(key).decrypt(nonce, sealed, aad or None)
    except (InvalidTag, ValueError) as exc:
        raise DecryptFailure(f"payload authentication failed: {type(exc).__name__}") from None
