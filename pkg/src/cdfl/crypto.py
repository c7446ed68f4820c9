"""Simulation-grade cryptographic primitives.

These preserve the *contracts* the protocol logic consumes (verification
predicates, threshold semantics, verifiable randomness) without real
public-key cryptography. Signature and VRF verification go through a
:class:`KeyRegistry` that maps public keys back to secrets; the registry is
owned by the simulation harness, which is what makes forgery impossible
inside the model. Do not reuse outside a simulation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CryptoError

SHAMIR_PRIME = 2**31 - 1  # Mersenne prime; small enough for exhaustive tests
VRF_BITS = 256


def _h(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(4, "little"))
        h.update(p)
    return h.digest()


@dataclass(frozen=True)
class KeyPair:
    secret: bytes
    public: str  # hex digest derived from the secret

    def __repr__(self) -> str:  # never leak the secret into logs
        return f"KeyPair(public={self.public[:12]}...)"


@dataclass(frozen=True)
class VrfOutput:
    value: int  # uniform in [0, 2**VRF_BITS)
    proof: str


@dataclass
class QuorumCert:
    digest: str
    signatures: list[tuple[str, str]]  # (signer public key, signature)
    threshold: int


class KeyRegistry:
    """Key generation plus the trusted lookup used for verification."""

    def __init__(self):
        self._by_public: dict[str, bytes] = {}

    def new_keypair(self, rng: np.random.Generator) -> KeyPair:
        secret = rng.bytes(32)
        public = _h(b"pk", secret).hex()
        self._by_public[public] = secret
        return KeyPair(secret=secret, public=public)

    @staticmethod
    def public_of(secret: bytes) -> str:
        return _h(b"pk", secret).hex()

    def sign(self, secret: bytes, message: bytes) -> str:
        return _h(b"sig", secret, message).hex()

    def verify(self, public: str, message: bytes, signature: str) -> bool:
        secret = self._by_public.get(public)
        if secret is None:
            return False
        return self.sign(secret, message) == signature

    # --- VRF stub -------------------------------------------------------

    def vrf_eval(self, secret: bytes, seed: bytes) -> VrfOutput:
        value = int.from_bytes(_h(b"vrf-value", secret, seed), "big")
        proof = _h(b"vrf-proof", secret, seed).hex()
        return VrfOutput(value=value, proof=proof)

    def vrf_verify(self, public: str, seed: bytes, out: VrfOutput) -> bool:
        secret = self._by_public.get(public)
        if secret is None:
            return False
        expected = self.vrf_eval(secret, seed)
        return expected.value == out.value and expected.proof == out.proof


def vrf_extend(value: int, count: int) -> list[int]:
    """Iterated-hash chain of ``count`` values starting at ``value``."""
    if count < 1:
        raise CryptoError("chain length must be >= 1")
    chain = [value % (2**VRF_BITS)]
    for _ in range(count - 1):
        nxt = int.from_bytes(_h(b"chain", chain[-1].to_bytes(32, "big")), "big")
        chain.append(nxt)
    return chain


# --- Shamir secret sharing ----------------------------------------------


@dataclass(frozen=True)
class ShamirShare:
    index: int  # nonzero evaluation point
    value: int
    prime: int
    threshold: int
    total: int


def shamir_share(
    secret: int,
    threshold: int,
    total: int,
    rng: np.random.Generator,
    prime: int = SHAMIR_PRIME,
) -> list[ShamirShare]:
    """Split ``secret`` into ``total`` shares, any ``threshold`` of which reconstruct."""
    if not (1 <= threshold <= total):
        raise CryptoError(f"need 1 <= threshold <= total, got ({threshold}, {total})")
    if not (0 <= secret < prime):
        raise CryptoError("secret must lie in [0, prime)")
    if total >= prime:
        raise CryptoError("too many shares for the field size")
    coeffs = [secret] + [int(rng.integers(0, prime)) for _ in range(threshold - 1)]
    shares = []
    for x in range(1, total + 1):
        y = 0
        for c in reversed(coeffs):  # Horner evaluation mod p
            y = (y * x + c) % prime
        shares.append(ShamirShare(index=x, value=y, prime=prime, threshold=threshold, total=total))
    return shares


def shamir_reconstruct(shares: list[ShamirShare]) -> int:
    """Lagrange interpolation at 0 over the shared prime field."""
    if not shares:
        raise CryptoError("no shares given")
    threshold = shares[0].threshold
    prime = shares[0].prime
    if any(s.prime != prime or s.threshold != threshold for s in shares):
        raise CryptoError("shares come from different sharings")
    if len(shares) < threshold:
        raise CryptoError(f"need {threshold} shares, got {len(shares)}")
    use = shares[:threshold]
    xs = [s.index for s in use]
    if len(set(xs)) != len(xs):
        raise CryptoError("duplicate share indices")
    secret = 0
    for i, s_i in enumerate(use):
        num, den = 1, 1
        for j, s_j in enumerate(use):
            if i == j:
                continue
            num = (num * (-s_j.index)) % prime
            den = (den * (s_i.index - s_j.index)) % prime
        secret = (secret + s_i.value * num * pow(den, -1, prime)) % prime
    return secret


# --- Quorum certificates --------------------------------------------------


def build_quorum_cert(
    digest: str, partials: list[tuple[str, str]], threshold: int
) -> QuorumCert:
    """Bundle (public key, signature) pairs over a digest."""
    return QuorumCert(digest=digest, signatures=list(partials), threshold=threshold)


def verify_quorum_cert(cert: QuorumCert, registry: KeyRegistry) -> bool:
    """True iff the cert carries >= threshold distinct valid signatures.

    Duplicate signers count once; invalid signatures are ignored rather than
    fatal.
    """
    message = cert.digest.encode("utf-8")
    valid_signers = set()
    for public, signature in cert.signatures:
        if public in valid_signers:
            continue
        if registry.verify(public, message, signature):
            valid_signers.add(public)
    return len(valid_signers) >= cert.threshold
