"""Per-round message construction and mailbox decryption for one user.

Each round a user submits exactly one onion per distinct chain in her
set: a conversation message on the single chain she shares with her
partner, loopbacks addressed to herself everywhere else.  Message count
and sizes are identical whether or not she is conversing, so the
traffic shape reveals nothing.

Every onion is a double envelope: the payload is encrypted once to the
product of the chain's per-round inner keys ("one-shot" onion), then
wrapped in k authenticated layers under the chain's mixing keys, all
layers sharing a single ephemeral DH key g^x accompanied by a Schnorr
proof of knowledge of x.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Optional, Sequence

from .crypto import (
    AEAD_OVERHEAD,
    ELEMENT_BYTES,
    GENERATOR,
    TAG_CLIENT_SUBMISSION,
    DlogProof,
    Drbg,
    GroupElement,
    Scalar,
    SymmetricKey,
    adec,
    aenc,
    derive_key,
    dh,
    element_product,
    kdf,
    keygen,
    prove_dlog,
)
from .topology import assign_group, build_group_sets, intersect_chain

DEFAULT_MESSAGE_SIZE = 256
LENGTH_PREFIX = 2
# Distinguished conversation payload announcing the sender has gone offline.
OFFLINE_NOTICE = b"\x01"


def pad_plaintext(content: bytes, size: int = DEFAULT_MESSAGE_SIZE) -> bytes:
    """2-byte big-endian true length, content, zero padding to `size`."""
    if len(content) > size - LENGTH_PREFIX:
        raise ValueError(
            f"plaintext of {len(content)} bytes exceeds the "
            f"{size - LENGTH_PREFIX}-byte limit; fragmentation is unsupported"
        )
    return len(content).to_bytes(LENGTH_PREFIX, "big") + content.ljust(
        size - LENGTH_PREFIX, b"\x00"
    )


def unpad_plaintext(padded: bytes) -> bytes:
    length = int.from_bytes(padded[:LENGTH_PREFIX], "big")
    return padded[LENGTH_PREFIX : LENGTH_PREFIX + length]


@dataclass(frozen=True)
class ChainKeys:
    """Public key material a user needs for one chain, in hop order."""

    chain_id: int
    mix_pks: tuple[GroupElement, ...]
    inner_pks: tuple[GroupElement, ...]

    @cached_property
    def inner_product(self) -> GroupElement:
        return element_product(self.inner_pks)


@dataclass(frozen=True)
class UserIdentity:
    """A user's key pair plus her publicly derivable group and chain set."""

    sk: Scalar
    pk: GroupElement
    group: int
    chains: tuple[int, ...]

    @classmethod
    def create(cls, rng: Drbg, ell: int, n: int) -> "UserIdentity":
        sk, pk = keygen(rng)
        group = assign_group(pk, ell)
        chains = build_group_sets(ell, n).dedup_for(group)
        return cls(sk=sk, pk=pk, group=group, chains=chains)

    @cached_property
    def _self_secret(self) -> GroupElement:
        return dh(self.pk, self.sk)

    def loopback_key(self, chain_id: int) -> SymmetricKey:
        """Chain-specific secret only this user can derive."""
        return hashlib.sha256(
            b"mixmesh.loopback.v1"
            + self._self_secret.encode()
            + chain_id.to_bytes(8, "little")
        ).digest()

    def send_key(self, partner_pk: GroupElement) -> SymmetricKey:
        """Key for messages this user sends to `partner_pk`'s mailbox."""
        return kdf(dh(partner_pk, self.sk), partner_pk)

    def inbox_key(self, partner_pk: GroupElement) -> SymmetricKey:
        """Key the partner uses for messages arriving in this user's mailbox."""
        return kdf(dh(partner_pk, self.sk), self.pk)


@dataclass(frozen=True)
class InnerCiphertext:
    """One-shot envelope: (g^y, AEnc(key(product-of-inner-pks ^ y), rho, payload))."""

    eph_pub: GroupElement
    body: bytes

    def to_bytes(self) -> bytes:
        return self.eph_pub.encode() + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "InnerCiphertext":
        return cls(
            eph_pub=GroupElement.decode(data[:ELEMENT_BYTES]),
            body=data[ELEMENT_BYTES:],
        )


@dataclass(frozen=True)
class OuterCiphertext:
    """Submission wire format: eph_pub (32B) | dlog proof (64B) | onion."""

    eph_pub: GroupElement
    proof: DlogProof
    onion: bytes

    def to_bytes(self) -> bytes:
        return self.eph_pub.encode() + self.proof.encode() + self.onion

    @classmethod
    def from_bytes(cls, data: bytes) -> "OuterCiphertext":
        return cls(
            eph_pub=GroupElement.decode(data[:32]),
            proof=DlogProof.decode(data[32:96]),
            onion=data[96:],
        )


def outer_ciphertext_size(k: int, message_size: int = DEFAULT_MESSAGE_SIZE) -> int:
    """Total submission bytes: identical for every user of a k-hop chain."""
    payload = ELEMENT_BYTES + message_size + AEAD_OVERHEAD
    inner = ELEMENT_BYTES + payload + AEAD_OVERHEAD
    return 2 * ELEMENT_BYTES + 64 + inner + k * AEAD_OVERHEAD


def build_payload(
    dest_pk: GroupElement,
    key: SymmetricKey,
    round_number: int,
    content: bytes,
    message_size: int = DEFAULT_MESSAGE_SIZE,
) -> bytes:
    """Routable payload: dest_pk | AEnc(key, rho, padded content)."""
    return dest_pk.encode() + aenc(key, round_number, pad_plaintext(content, message_size))


def encrypt_inner(
    dest_pk: GroupElement,
    body: bytes,
    round_number: int,
    inner_pks: Sequence[GroupElement],
    rng: Drbg,
    inner_product: Optional[GroupElement] = None,
) -> InnerCiphertext:
    """Encrypt (dest_pk | body) so that only the sum of all inner keys opens it."""
    payload = dest_pk.encode() + body
    y, eph = keygen(rng)
    product = inner_product if inner_product is not None else element_product(inner_pks)
    shared = dh(product, y)
    return InnerCiphertext(
        eph_pub=eph, body=aenc(derive_key(shared), round_number, payload)
    )


def decrypt_inner(inner: InnerCiphertext, isk_total: Scalar, round_number: int):
    """Open an inner envelope with the sum of the chain's inner keys."""
    shared = dh(inner.eph_pub, isk_total)
    ok, payload = adec(derive_key(shared), round_number, inner.body)
    if not ok:
        return False, None, None
    return True, GroupElement.decode(payload[:ELEMENT_BYTES]), payload[ELEMENT_BYTES:]


def encrypt_outer(
    inner_bytes: bytes,
    round_number: int,
    mix_pks: Sequence[GroupElement],
    rng: Drbg,
) -> OuterCiphertext:
    """Wrap inner-ciphertext bytes in k layers sharing one ephemeral key."""
    x, eph = keygen(rng)
    proof = prove_dlog(GENERATOR, eph, x, TAG_CLIENT_SUBMISSION)
    onion = inner_bytes
    for mpk in reversed(mix_pks):
        onion = aenc(derive_key(dh(mpk, x)), round_number, onion)
    return OuterCiphertext(eph_pub=eph, proof=proof, onion=onion)


def _build_message_set(
    me: UserIdentity,
    partner_pk: Optional[GroupElement],
    round_number: int,
    chain_keys: Mapping[int, ChainKeys],
    ell: int,
    n: int,
    rng: Drbg,
    conversation_content: bytes,
    message_size: int,
):
    missing = [c for c in me.chains if c not in chain_keys]
    if missing:
        raise ValueError(f"missing chain keys for chains {missing}")

    conversation_chain = None
    if partner_pk is not None:
        partner_group = assign_group(partner_pk, ell)
        conversation_chain = intersect_chain(me.group, partner_group, ell, n)

    messages = []
    for chain_id in me.chains:
        keys = chain_keys[chain_id]
        if chain_id == conversation_chain:
            payload = build_payload(
                partner_pk,
                me.send_key(partner_pk),
                round_number,
                conversation_content,
                message_size,
            )
            dest = partner_pk
        else:
            payload = build_payload(
                me.pk,
                me.loopback_key(chain_id),
                round_number,
                b"",
                message_size,
            )
            dest = me.pk
        inner = encrypt_inner(
            dest,
            payload[ELEMENT_BYTES:],
            round_number,
            keys.inner_pks,
            rng,
            inner_product=keys.inner_product,
        )
        outer = encrypt_outer(inner.to_bytes(), round_number, keys.mix_pks, rng)
        messages.append((chain_id, outer))
    return messages


def build_round_messages(
    me: UserIdentity,
    partner_pk: Optional[GroupElement],
    round_number: int,
    chain_keys: Mapping[int, ChainKeys],
    ell: int,
    n: int,
    rng: Drbg,
    content: bytes = b"",
    message_size: int = DEFAULT_MESSAGE_SIZE,
):
    """One onion per distinct chain: conversation on the shared chain, loopbacks elsewhere."""
    return _build_message_set(
        me, partner_pk, round_number, chain_keys, ell, n, rng, content, message_size
    )


def build_cover_messages(
    me: UserIdentity,
    partner_pk: Optional[GroupElement],
    next_round: int,
    chain_keys: Mapping[int, ChainKeys],
    ell: int,
    n: int,
    rng: Drbg,
    message_size: int = DEFAULT_MESSAGE_SIZE,
):
    """Next-round message set submitted in advance.

    Played by the servers if this user disappears: loopbacks keep her
    traffic shape, and the conversation slot carries the offline notice
    so her partner knows to fall back to loopback-only rounds.
    """
    return _build_message_set(
        me,
        partner_pk,
        next_round,
        chain_keys,
        ell,
        n,
        rng,
        OFFLINE_NOTICE,
        message_size,
    )


@dataclass(frozen=True)
class FetchResult:
    """Classification of one fetched mailbox message."""

    source: str  # "self" | "partner" | "foreign"
    content: Optional[bytes]
    offline_notice: bool = False


def fetch_and_decrypt(
    me: UserIdentity,
    partner_pk: Optional[GroupElement],
    round_number: int,
    mailbox_msgs: Sequence[tuple],
) -> list[FetchResult]:
    """Try each mailbox message against loopback keys, then the partner key.

    Unclassifiable messages come back as "foreign" (a data outcome, not
    an error: mailboxes are only trusted for availability).
    """
    loopback_keys = [(c, me.loopback_key(c)) for c in me.chains]
    partner_key = me.inbox_key(partner_pk) if partner_pk is not None else None

    results = []
    for _eph, body in mailbox_msgs:
        classified = None
        for _chain_id, key in loopback_keys:
            ok, padded = adec(key, round_number, body)
            if ok:
                classified = FetchResult(source="self", content=unpad_plaintext(padded))
                break
        if classified is None and partner_key is not None:
            ok, padded = adec(partner_key, round_number, body)
            if ok:
                content = unpad_plaintext(padded)
                classified = FetchResult(
                    source="partner",
                    content=content,
                    offline_notice=content == OFFLINE_NOTICE,
                )
        results.append(
            classified
            if classified is not None
            else FetchResult(source="foreign", content=None)
        )
    return results
