"""Group arithmetic, authenticated encryption, key derivation, and NIZKs.

The group is the quadratic-residue subgroup of Z_p* for a 256-bit safe
prime p, so it has prime order q = (p-1)/2 and every element fits a
canonical 32-byte little-endian encoding.  Nothing outside this module
depends on the concrete group: swap in any prime-order group with
32-byte encodings by reimplementing Scalar / GroupElement / dh.

Proofs are Schnorr (knowledge of discrete log) and Chaum-Pedersen
(equality of discrete logs), made non-interactive with the Fiat-Shamir
heuristic over domain-tagged transcripts.
"""

from __future__ import annotations

import hashlib
import hmac

try:  # gmpy2's powmod is ~6x faster than built-in pow at this size
    from gmpy2 import powmod as _gmpy_powmod

    def _powmod(base: int, exp: int, mod: int) -> int:
        return int(_gmpy_powmod(base, exp, mod))
except ImportError:  # pragma: no cover
    _powmod = pow

# p = 2^256 - 36113 is the largest 256-bit safe prime; q = (p-1)/2 is prime.
# Regenerate with scripts/find_group_prime.py.
P = (1 << 256) - 36113
Q = (P - 1) // 2
ELEMENT_BYTES = 32
SCALAR_BYTES = 32
KEY_BYTES = 32
TAG_BYTES = 32
AEAD_OVERHEAD = TAG_BYTES
NONCE_BYTES = 16

# Fiat-Shamir domain tags, one per proof site.
TAG_CLIENT_SUBMISSION = b"mixmesh/client-submission"
TAG_MIX_BLIND = b"mixmesh/mix-blind"
TAG_BLAME_KEY = b"mixmesh/blame-key"
TAG_BLAME_DECRYPT = b"mixmesh/blame-decrypt"
TAG_KEYGEN_BLIND = b"mixmesh/keygen-blind"
TAG_KEYGEN_MIX = b"mixmesh/keygen-mix"

# A symmetric key is 32 opaque bytes derived from a group element.
SymmetricKey = bytes


class Scalar:
    """Exponent modulo the group order q, canonically reduced."""

    __slots__ = ("value",)

    def __init__(self, value: int):
        self.value = value % Q

    def __add__(self, other: "Scalar") -> "Scalar":
        return Scalar(self.value + other.value)

    def __sub__(self, other: "Scalar") -> "Scalar":
        return Scalar(self.value - other.value)

    def __mul__(self, other: "Scalar") -> "Scalar":
        return Scalar(self.value * other.value)

    def __eq__(self, other) -> bool:
        return isinstance(other, Scalar) and self.value == other.value

    def __hash__(self) -> int:
        return hash(("Scalar", self.value))

    def __repr__(self) -> str:
        return f"Scalar({self.value:#x})"

    def encode(self) -> bytes:
        return self.value.to_bytes(SCALAR_BYTES, "little")

    @classmethod
    def decode(cls, data: bytes) -> "Scalar":
        if len(data) != SCALAR_BYTES:
            raise ValueError(f"scalar encoding must be {SCALAR_BYTES} bytes")
        value = int.from_bytes(data, "little")
        if value >= Q:
            raise ValueError("scalar encoding not reduced")
        return cls(value)


def scalar_sum(scalars) -> Scalar:
    total = 0
    for s in scalars:
        total += s.value
    return Scalar(total)


class GroupElement:
    """Element of the prime-order group, i.e. a quadratic residue mod p."""

    __slots__ = ("value", "_enc")

    def __init__(self, value: int):
        self.value = value
        self._enc = None

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.value * other.value % P)

    def __eq__(self, other) -> bool:
        return isinstance(other, GroupElement) and self.value == other.value

    def __hash__(self) -> int:
        return hash(("GroupElement", self.value))

    def __repr__(self) -> str:
        return f"GroupElement({self.value:#x})"

    def pow(self, exponent: Scalar) -> "GroupElement":
        return GroupElement(_powmod(self.value, exponent.value, P))

    def inverse(self) -> "GroupElement":
        return GroupElement(_powmod(self.value, P - 2, P))

    @property
    def is_identity(self) -> bool:
        return self.value == 1

    def encode(self) -> bytes:
        if self._enc is None:
            self._enc = self.value.to_bytes(ELEMENT_BYTES, "little")
        return self._enc

    @classmethod
    def decode(cls, data: bytes) -> "GroupElement":
        if len(data) != ELEMENT_BYTES:
            raise ValueError(f"element encoding must be {ELEMENT_BYTES} bytes")
        value = int.from_bytes(data, "little")
        if not 0 < value < P:
            raise ValueError("element encoding out of range")
        if _powmod(value, Q, P) != 1:
            raise ValueError("element encoding not in the prime-order subgroup")
        return cls(value)


IDENTITY = GroupElement(1)
GENERATOR = GroupElement(4)  # 2^2, a residue; generates the full order-q subgroup


def element_product(elements) -> GroupElement:
    total = 1
    for e in elements:
        total = total * e.value % P
    return GroupElement(total)


class Drbg:
    """Deterministic random byte generator (SHAKE-128 in counter mode).

    The simulator derives every random choice from one of these so runs
    are reproducible from a single seed.  Child generators are domain
    separated by label.
    """

    _BLOCK = 4096

    def __init__(self, seed: bytes):
        self._key = hashlib.sha256(b"mixmesh.drbg.v1" + seed).digest()
        self._counter = 0
        self._buf = b""

    def child(self, label: str) -> "Drbg":
        return Drbg(self._key + b"/" + label.encode())

    def bytes(self, n: int) -> bytes:
        while len(self._buf) < n:
            block = hashlib.shake_128(
                self._key + self._counter.to_bytes(8, "little")
            ).digest(self._BLOCK)
            self._counter += 1
            self._buf += block
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randbelow(self, bound: int) -> int:
        if bound <= 0:
            raise ValueError("bound must be positive")
        nbytes = (bound.bit_length() + 7) // 8
        limit = (1 << (8 * nbytes)) - (1 << (8 * nbytes)) % bound
        while True:
            v = int.from_bytes(self.bytes(nbytes), "little")
            if v < limit:
                return v % bound

    def randrange(self, low: int, high: int) -> int:
        return low + self.randbelow(high - low + 1)

    def scalar(self) -> Scalar:
        return Scalar(self.randbelow(Q))

    def scalar_nonzero(self) -> Scalar:
        return Scalar(1 + self.randbelow(Q - 1))

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]


def keygen(rng: Drbg, base: GroupElement = GENERATOR) -> tuple[Scalar, GroupElement]:
    """Draw a nonzero private scalar and return (sk, base^sk)."""
    if base.is_identity:
        raise ValueError("key base must not be the identity")
    sk = rng.scalar_nonzero()
    return sk, base.pow(sk)


def dh(pub: GroupElement, priv: Scalar) -> GroupElement:
    """Diffie-Hellman: pub^priv."""
    if pub.is_identity:
        raise ValueError("DH public input must not be the identity")
    return pub.pow(priv)


def derive_key(element: GroupElement, tag: bytes = b"mixmesh.key.v1") -> SymmetricKey:
    """Hash a group element down to a symmetric key."""
    return hashlib.sha256(tag + element.encode()).digest()


def kdf(shared: GroupElement, context: GroupElement) -> SymmetricKey:
    """Derive a directional key from a DH secret and a context element."""
    return hashlib.sha256(
        b"mixmesh.kdf.v1" + shared.encode() + context.encode()
    ).digest()


def _nonce(round_number: int) -> bytes:
    # 8-byte little-endian round number, zero-padded to the nonce width.
    return round_number.to_bytes(8, "little") + b"\x00" * (NONCE_BYTES - 8)


def _aead_subkeys(key: SymmetricKey) -> tuple[bytes, bytes]:
    digest = hashlib.sha512(key + b"mixmesh.aead.v1").digest()
    return digest[:32], digest[32:]


def _keystream(enc_key: bytes, nonce: bytes, n: int) -> bytes:
    return hashlib.shake_128(enc_key + nonce).digest(n)


def aenc(key: SymmetricKey, round_number: int, message: bytes) -> bytes:
    """Encrypt-then-MAC: SHAKE-128 keystream + HMAC-SHA256 tag.

    The MAC covers (nonce, ciphertext) under a key derived from `key`,
    so a ciphertext authenticates under exactly one key and round.
    """
    enc_key, mac_key = _aead_subkeys(key)
    nonce = _nonce(round_number)
    stream = _keystream(enc_key, nonce, len(message))
    body = (
        int.from_bytes(message, "little") ^ int.from_bytes(stream, "little")
    ).to_bytes(len(message), "little")
    tag = hmac.new(mac_key, nonce + body, hashlib.sha256).digest()
    return body + tag


def adec(key: SymmetricKey, round_number: int, ciphertext: bytes):
    """Authenticated decrypt.  Returns (True, plaintext) or (False, None)."""
    if len(ciphertext) < TAG_BYTES:
        return False, None
    enc_key, mac_key = _aead_subkeys(key)
    nonce = _nonce(round_number)
    body, tag = ciphertext[:-TAG_BYTES], ciphertext[-TAG_BYTES:]
    expect = hmac.new(mac_key, nonce + body, hashlib.sha256).digest()
    if not hmac.compare_digest(tag, expect):
        return False, None
    stream = _keystream(enc_key, nonce, len(body))
    message = (
        int.from_bytes(body, "little") ^ int.from_bytes(stream, "little")
    ).to_bytes(len(body), "little")
    return True, message


def _challenge(tag: bytes, *elements: GroupElement) -> int:
    h = hashlib.sha256()
    h.update(tag)
    h.update(b"\x00")
    for e in elements:
        h.update(e.encode())
    return int.from_bytes(h.digest(), "big") % Q


def _proof_nonce(sk: Scalar, tag: bytes, *elements: GroupElement) -> Scalar:
    # Deterministic commitment nonce (RFC 6979 flavour): no rng to misuse.
    h = hashlib.sha256()
    h.update(b"mixmesh.proofnonce" + sk.encode() + tag)
    for e in elements:
        h.update(e.encode())
    w = int.from_bytes(h.digest(), "big") % Q
    return Scalar(w if w != 0 else 1)


class DlogProof:
    """Schnorr proof of knowledge of sk with pub = base^sk."""

    __slots__ = ("commitment", "response")

    def __init__(self, commitment: GroupElement, response: Scalar):
        self.commitment = commitment
        self.response = response

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DlogProof)
            and self.commitment == other.commitment
            and self.response == other.response
        )

    def encode(self) -> bytes:
        return self.commitment.encode() + self.response.encode()

    @classmethod
    def decode(cls, data: bytes) -> "DlogProof":
        if len(data) != 64:
            raise ValueError("dlog proof encoding must be 64 bytes")
        return cls(GroupElement.decode(data[:32]), Scalar.decode(data[32:]))


def prove_dlog(
    base: GroupElement, pub: GroupElement, sk: Scalar, tag: bytes
) -> DlogProof:
    w = _proof_nonce(sk, tag, base, pub)
    commitment = base.pow(w)
    c = _challenge(tag, base, pub, commitment)
    response = Scalar(w.value + c * sk.value)
    return DlogProof(commitment, response)


def verify_dlog(
    base: GroupElement, pub: GroupElement, proof: DlogProof, tag: bytes
) -> bool:
    c = _challenge(tag, base, pub, proof.commitment)
    lhs = base.pow(proof.response)
    rhs = proof.commitment.value * _powmod(pub.value, c, P) % P
    return lhs.value == rhs


class DleqProof:
    """Chaum-Pedersen proof that log_baseA(pubA) = log_baseB(pubB)."""

    __slots__ = ("commitment_a", "commitment_b", "response")

    def __init__(
        self, commitment_a: GroupElement, commitment_b: GroupElement, response: Scalar
    ):
        self.commitment_a = commitment_a
        self.commitment_b = commitment_b
        self.response = response

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DleqProof)
            and self.commitment_a == other.commitment_a
            and self.commitment_b == other.commitment_b
            and self.response == other.response
        )

    def encode(self) -> bytes:
        return (
            self.commitment_a.encode()
            + self.commitment_b.encode()
            + self.response.encode()
        )

    @classmethod
    def decode(cls, data: bytes) -> "DleqProof":
        if len(data) != 96:
            raise ValueError("dleq proof encoding must be 96 bytes")
        return cls(
            GroupElement.decode(data[:32]),
            GroupElement.decode(data[32:64]),
            Scalar.decode(data[64:]),
        )


def prove_dleq(
    base_a: GroupElement,
    pub_a: GroupElement,
    base_b: GroupElement,
    pub_b: GroupElement,
    s: Scalar,
    tag: bytes,
) -> DleqProof:
    w = _proof_nonce(s, tag, base_a, pub_a, base_b, pub_b)
    commitment_a = base_a.pow(w)
    commitment_b = base_b.pow(w)
    c = _challenge(tag, base_a, pub_a, base_b, pub_b, commitment_a, commitment_b)
    response = Scalar(w.value + c * s.value)
    return DleqProof(commitment_a, commitment_b, response)


def verify_dleq(
    base_a: GroupElement,
    pub_a: GroupElement,
    base_b: GroupElement,
    pub_b: GroupElement,
    proof: DleqProof,
    tag: bytes,
) -> bool:
    c = _challenge(
        tag, base_a, pub_a, base_b, pub_b, proof.commitment_a, proof.commitment_b
    )
    z = proof.response
    if base_a.pow(z).value != proof.commitment_a.value * _powmod(pub_a.value, c, P) % P:
        return False
    if base_b.pow(z).value != proof.commitment_b.value * _powmod(pub_b.value, c, P) % P:
        return False
    return True
