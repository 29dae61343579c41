"""Ed25519 signing identities.

An account id is the lowercase hex of the 32-byte public key, so ids
are self-authenticating: verification needs nothing but the id string.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)


@dataclass(frozen=True)
class KeyPair:
    private: Ed25519PrivateKey
    account: str

    @staticmethod
    def generate() -> "KeyPair":
        priv = Ed25519PrivateKey.generate()
        return KeyPair(private=priv, account=account_id(priv.public_key()))


def account_id(public: Ed25519PublicKey) -> str:
    from cryptography.hazmat.primitives.serialization import (
        Encoding,
        PublicFormat,
    )

    raw = public.public_bytes(Encoding.Raw, PublicFormat.Raw)
    return raw.hex()


def deterministic_keypair(label: str) -> KeyPair:
    """Key pair derived from a label. Test and demo fixtures only."""
    seed = hashlib.sha256(b"transactive-key:" + label.encode()).digest()
    return keypair_from_seed(seed)


def keypair_from_seed(seed: bytes) -> KeyPair:
    priv = Ed25519PrivateKey.from_private_bytes(seed)
    return KeyPair(private=priv, account=account_id(priv.public_key()))


def private_seed(keypair: KeyPair) -> bytes:
    from cryptography.hazmat.primitives.serialization import (
        Encoding,
        NoEncryption,
        PrivateFormat,
    )

    return keypair.private.private_bytes(
        Encoding.Raw, PrivateFormat.Raw, NoEncryption()
    )


def sign(keypair: KeyPair, message: bytes) -> bytes:
    return keypair.private.sign(message)


def verify(account: str, signature: bytes, message: bytes) -> bool:
    try:
        raw = bytes.fromhex(account)
    except ValueError:
        return False
    if len(raw) != 32:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(raw).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True
