"""Per-chain mix server state machine.

A chain of k servers runs, per round: input agreement over the sorted
submission set, k decrypt-blind-shuffle hops each carrying an aggregate
discrete-log-equality proof, verification of every hop by every member,
and finally the reveal of per-round inner keys once nobody reported an
error.

Key ceremony: blinding and mixing key pairs chain off the previous
server's blinding public key (bpk_0 = g), so a user's single ephemeral
key g^x, blinded hop by hop, always performs the same DH the user did
when onion-encrypting.  The aggregate proof only binds the product of
the blinded keys; individual tampering instead surfaces as an
authenticated-decryption failure at the first honest server, which
triggers the blame protocol.

The blame protocol walks the accused entry back to hop 1, each server
revealing the matching key/ciphertext pair with equality proofs, so the
verdict either pins a submitter whose onion was malformed or the server
that cannot justify its step.  Honest users are never attributable:
their ciphertexts authenticate at every layer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .client import InnerCiphertext, OuterCiphertext
from .crypto import (
    GENERATOR,
    TAG_BLAME_DECRYPT,
    TAG_BLAME_KEY,
    TAG_CLIENT_SUBMISSION,
    TAG_KEYGEN_BLIND,
    TAG_KEYGEN_MIX,
    TAG_MIX_BLIND,
    DleqProof,
    DlogProof,
    Drbg,
    GroupElement,
    Scalar,
    adec,
    aenc,
    derive_key,
    dh,
    element_product,
    keygen,
    prove_dleq,
    prove_dlog,
    scalar_sum,
    verify_dleq,
    verify_dlog,
)


class ChainAbort(Exception):
    """The chain cannot continue this round; no privacy is lost by halting."""


@dataclass
class ServerKeys:
    """One server's keys for one chain position.

    Blinding and mixing keys are long-term and based on the previous
    server's blinding public key; the inner key pair is regenerated
    every round.
    """

    position: int
    bsk: Scalar
    msk: Scalar
    isk: Scalar
    bpk_prev: GroupElement
    bpk: GroupElement
    mpk: GroupElement
    ipk: GroupElement
    proof_bsk: DlogProof
    proof_msk: DlogProof


def gen_keys(position: int, bpk_prev: GroupElement, rng: Drbg) -> ServerKeys:
    """Generate a server's key triple; positions must run in order from 1."""
    if bpk_prev.is_identity:
        raise ValueError("previous blinding key must not be the identity")
    bsk, bpk = keygen(rng, bpk_prev)
    msk, mpk = keygen(rng, bpk_prev)
    isk, ipk = keygen(rng)
    return ServerKeys(
        position=position,
        bsk=bsk,
        msk=msk,
        isk=isk,
        bpk_prev=bpk_prev,
        bpk=bpk,
        mpk=mpk,
        ipk=ipk,
        proof_bsk=prove_dlog(bpk_prev, bpk, bsk, TAG_KEYGEN_BLIND),
        proof_msk=prove_dlog(bpk_prev, mpk, msk, TAG_KEYGEN_MIX),
    )


def verify_keygen(
    bpk_prev: GroupElement,
    bpk: GroupElement,
    mpk: GroupElement,
    proof_bsk: DlogProof,
    proof_msk: DlogProof,
) -> bool:
    return verify_dlog(bpk_prev, bpk, proof_bsk, TAG_KEYGEN_BLIND) and verify_dlog(
        bpk_prev, mpk, proof_msk, TAG_KEYGEN_MIX
    )


@dataclass(frozen=True)
class ChainDirectory:
    """Public key material of a whole chain, as every participant sees it.

    bpks[0] is the generator; bpks[i] / mpks[i-1] belong to position i.
    Inner public keys are per round: `ipks` serves the current round and
    `next_ipks` is published one round ahead so users can pre-encrypt
    the cover messages they submit for the following round.
    """

    chain_id: int
    bpks: tuple[GroupElement, ...]
    mpks: tuple[GroupElement, ...]
    ipks: list
    next_ipks: list

    @property
    def k(self) -> int:
        return len(self.mpks)

    def bpk_prev(self, position: int) -> GroupElement:
        return self.bpks[position - 1]

    def bpk(self, position: int) -> GroupElement:
        return self.bpks[position]

    def mpk(self, position: int) -> GroupElement:
        return self.mpks[position - 1]


def agree_inputs(submissions: Sequence[OuterCiphertext]):
    """Canonicalize a round's inputs: drop bad proofs and replayed keys.

    Submissions whose knowledge proof fails are excluded.  Among
    submissions sharing an ephemeral key, only the lexicographically
    first survives (a replayed key was not generated independently).
    The accepted list is sorted by canonical bytes and hashed; chain
    members proceed only if their digests match.
    """
    by_eph: dict[bytes, OuterCiphertext] = {}
    for sub in submissions:
        if not verify_dlog(GENERATOR, sub.eph_pub, sub.proof, TAG_CLIENT_SUBMISSION):
            continue
        key = sub.eph_pub.encode()
        current = by_eph.get(key)
        if current is None or sub.to_bytes() < current.to_bytes():
            by_eph[key] = sub
    accepted = sorted(by_eph.values(), key=lambda s: s.to_bytes())
    digest = hashlib.sha256(b"".join(s.to_bytes() for s in accepted)).digest()
    return digest, accepted


@dataclass
class MixBatch:
    """Entries in flight at one hop: (blinded DH key, ciphertext) pairs."""

    entries: list
    round_number: int
    hop: int


@dataclass(frozen=True)
class HopProof:
    """Aggregate proof for one hop plus the blinded keys it covers."""

    dleq: DleqProof
    out_keys: tuple


@dataclass(frozen=True)
class BlameTrigger:
    """Raised data when decryptions fail at a hop: the offending entries."""

    hop: int
    entry_ids: tuple[int, ...]
    entries: tuple  # (GroupElement, bytes) pairs as received


def verify_mix(
    in_keys: Sequence[GroupElement],
    out_keys: Sequence[GroupElement],
    bpk_prev: GroupElement,
    bpk: GroupElement,
    proof: HopProof,
) -> bool:
    """Check a hop: sizes match and the aggregate blinding relation holds."""
    if len(in_keys) != len(out_keys):
        return False
    if tuple(out_keys) != tuple(proof.out_keys):
        return False
    return verify_dleq(
        element_product(in_keys),
        element_product(out_keys),
        bpk_prev,
        bpk,
        proof.dleq,
        TAG_MIX_BLIND,
    )


@dataclass
class _RoundState:
    round_number: int = 0
    received: list = field(default_factory=list)
    decrypted: list = field(default_factory=list)
    sent: list = field(default_factory=list)
    perm: list = field(default_factory=list)
    observed_keys: dict = field(default_factory=dict)


class MixServer:
    """State machine for one (server, chain-position) pair.

    Single-owner mutable state; hops within the chain are strictly
    sequential, so the simulator drives one method at a time.
    """

    def __init__(
        self,
        server_id: str,
        directory: ChainDirectory,
        keys: ServerKeys,
        rng: Drbg,
    ):
        self.server_id = server_id
        self.directory = directory
        self.keys = keys
        self.rng = rng
        self.state = _RoundState()
        self._next_inner = None

    @property
    def position(self) -> int:
        return self.keys.position

    def begin_round(self, round_number: int, rng: Drbg) -> None:
        """Rotate inner keys: promote the pre-published pair, draw the next."""
        self.state = _RoundState(round_number=round_number)
        if self._next_inner is None:
            self.keys.isk, self.keys.ipk = keygen(rng)
        else:
            self.keys.isk, self.keys.ipk = self._next_inner
        self._next_inner = keygen(rng)
        self.directory.ipks[self.position - 1] = self.keys.ipk
        self.directory.next_ipks[self.position - 1] = self._next_inner[1]

    def observe_inputs(self, accepted: Sequence[OuterCiphertext]) -> None:
        self.state.observed_keys[1] = [s.eph_pub for s in accepted]

    def mix(self, batch: MixBatch):
        """Decrypt, then blind and shuffle under one permutation.

        Returns (MixBatch, HopProof) on success or a BlameTrigger naming
        every entry whose authenticated decryption failed; nothing is
        forwarded unless every decryption succeeded.
        """
        if batch.hop != self.position:
            raise ValueError(f"batch at hop {batch.hop} given to position {self.position}")
        if len(batch.entries) < 2:
            raise ChainAbort(
                f"round {batch.round_number}: {len(batch.entries)} entries cannot mix"
            )
        self.state.received = list(batch.entries)

        decrypted = []
        failed = []
        for idx, (blinded, ciphertext) in enumerate(batch.entries):
            ok, inner = adec(
                derive_key(dh(blinded, self.keys.msk)),
                batch.round_number,
                ciphertext,
            )
            if ok:
                decrypted.append(inner)
            else:
                failed.append(idx)
        if failed:
            return BlameTrigger(
                hop=self.position,
                entry_ids=tuple(failed),
                entries=tuple(batch.entries[i] for i in failed),
            )

        self.state.decrypted = decrypted
        return self._blind_shuffle_prove(batch.round_number)

    def _blind_shuffle_prove(self, round_number: int):
        received = self.state.received
        decrypted = self.state.decrypted
        blinded = [x.pow(self.keys.bsk) for x, _ in received]
        perm = list(range(len(received)))
        self.rng.shuffle(perm)
        self.state.perm = perm
        out_entries = [(blinded[src], decrypted[src]) for src in perm]
        self.state.sent = out_entries

        proof = HopProof(
            dleq=prove_dleq(
                element_product(x for x, _ in received),
                element_product(x for x, _ in out_entries),
                self.keys.bpk_prev,
                self.keys.bpk,
                self.keys.bsk,
                TAG_MIX_BLIND,
            ),
            out_keys=tuple(x for x, _ in out_entries),
        )
        self.state.observed_keys[self.position + 1] = [x for x, _ in out_entries]
        batch = MixBatch(
            entries=list(out_entries),
            round_number=round_number,
            hop=self.position + 1,
        )
        return batch, proof

    def drop_and_remix(self, entry_ids: Sequence[int], round_number: int):
        """After a blame verdict removed entries, mix the reduced batch."""
        keep = [e for i, e in enumerate(self.state.received) if i not in set(entry_ids)]
        if len(keep) < 2:
            raise ChainAbort(
                f"round {round_number}: {len(keep)} entries left after blame"
            )
        return self.mix(MixBatch(entries=keep, round_number=round_number, hop=self.position))

    def observe_hop(self, hop: int, batch_keys, proof: HopProof) -> bool:
        """Verify another server's hop against the keys retained for it."""
        in_keys = self.state.observed_keys.get(hop)
        if in_keys is None:
            return False
        ok = verify_mix(
            in_keys,
            batch_keys,
            self.directory.bpk_prev(hop),
            self.directory.bpk(hop),
            proof,
        )
        if ok:
            self.state.observed_keys[hop + 1] = list(batch_keys)
        return ok

    def observe_reduced_inputs(self, hop: int, removed_keys: Sequence[GroupElement]) -> None:
        """Shrink the retained key list for `hop` after a blame removal."""
        remaining = list(self.state.observed_keys[hop])
        for key in removed_keys:
            remaining.remove(key)
        self.state.observed_keys[hop] = remaining

    # -- blame protocol -------------------------------------------------

    def blame_reveal(self, query_key: GroupElement, query_cipher: bytes):
        """Reveal the input entry behind one of this server's outputs.

        Returns a BlameStepMsg proving the blinding step and the
        decryption key, or None if the queried entry is not ours.
        """
        target = None
        for out_idx, (x, c) in enumerate(self.state.sent):
            if x == query_key and c == query_cipher:
                target = out_idx
                break
        if target is None:
            return None
        src = self.state.perm[target]
        x_in, c_in = self.state.received[src]
        key = dh(x_in, self.keys.msk)
        return BlameStepMsg(
            round_number=self.state.round_number,
            hop=self.position,
            x=x_in,
            key=key,
            dleq_blind=prove_dleq(
                x_in, query_key, self.keys.bpk_prev, self.keys.bpk, self.keys.bsk,
                TAG_BLAME_KEY,
            ),
            dleq_key=prove_dleq(
                x_in, key, self.keys.bpk_prev, self.keys.mpk, self.keys.msk,
                TAG_BLAME_DECRYPT,
            ),
            ciphertext=c_in,
        )

    def accuser_reveal(self, query_key: GroupElement):
        """Reveal the DH key this server used on the entry it accuses."""
        key = dh(query_key, self.keys.msk)
        proof = prove_dleq(
            query_key, key, self.keys.bpk_prev, self.keys.mpk, self.keys.msk,
            TAG_BLAME_DECRYPT,
        )
        return key, proof

    def reissue_proof(self, removed_pairs) -> HopProof:
        """Re-prove the aggregate relation after entries were removed.

        removed_pairs holds (input key, output key) for every removed
        entry at this hop.
        """
        in_keys = [x for x, _ in self.state.received]
        out_keys = [x for x, _ in self.state.sent]
        out_ciphers = [c for _, c in self.state.sent]
        for x_in, x_out in removed_pairs:
            in_keys.remove(x_in)
            idx = out_keys.index(x_out)
            del out_keys[idx]
            del out_ciphers[idx]
        self.state.received = [e for e in self.state.received if e[0] in set(in_keys)]
        self.state.sent = list(zip(out_keys, out_ciphers))
        self.state.observed_keys[self.position + 1] = list(out_keys)
        dleq = prove_dleq(
            element_product(in_keys),
            element_product(out_keys),
            self.keys.bpk_prev,
            self.keys.bpk,
            self.keys.bsk,
            TAG_MIX_BLIND,
        )
        return HopProof(dleq=dleq, out_keys=tuple(out_keys))


@dataclass
class BlameVerdict:
    """Outcome of a blame session.

    malicious_submissions holds the canonical ephemeral-key encodings of
    submissions whose onions provably fail under correct keys.  If a
    server could not justify its step (or the accusation was false),
    failed_prover names its position and the round ends with inner keys
    deleted.  resolved=False means the evidence chain broke without a
    clean attribution; the chain still halts without revealing keys.
    """

    malicious_submissions: set
    failed_prover: Optional[int]
    resolved: bool
    walks: dict = field(default_factory=dict)

    @property
    def users_identified(self) -> bool:
        return self.resolved and self.failed_prover is None


def run_blame(
    directory: ChainDirectory,
    servers,
    accuser_pos: int,
    trigger: BlameTrigger,
    submissions: Sequence[OuterCiphertext],
    round_number: int,
    upstream_sent: Optional[Sequence] = None,
) -> BlameVerdict:
    """Walk failing entries from the accuser back to the submissions.

    `servers` maps position -> MixServer (adversarial implementations
    included).  `upstream_sent` is what hop accuser_pos-1 actually
    forwarded (the submissions themselves when the accuser is first):
    accusing an entry that was never sent flags the accuser outright.
    """
    if upstream_sent is None:
        upstream_sent = [(s.eph_pub, s.onion) for s in submissions]
    known = set((x.encode(), c) for x, c in upstream_sent)
    for x, c in trigger.entries:
        if (x.encode(), c) not in known:
            return BlameVerdict(
                malicious_submissions=set(),
                failed_prover=accuser_pos,
                resolved=True,
            )

    submissions_by_pair = {(s.eph_pub.encode(), s.onion): s for s in submissions}
    malicious = set()
    walks: dict[int, list] = {}

    for entry_idx, (x_cur, c_cur) in enumerate(trigger.entries):
        walk = []
        for position in range(accuser_pos - 1, 0, -1):
            step = servers[position].blame_reveal(x_cur, c_cur)
            if step is None:
                return BlameVerdict(set(), position, True, walks)
            if not verify_dleq(
                step.x, x_cur,
                directory.bpk_prev(position), directory.bpk(position),
                step.dleq_blind, TAG_BLAME_KEY,
            ):
                return BlameVerdict(set(), position, True, walks)
            if not verify_dleq(
                step.x, step.key,
                directory.bpk_prev(position), directory.mpk(position),
                step.dleq_key, TAG_BLAME_DECRYPT,
            ):
                return BlameVerdict(set(), position, True, walks)
            ok, decrypted = adec(derive_key(step.key), round_number, step.ciphertext)
            if not ok or decrypted != c_cur:
                # every member re-executes the decryption; a mismatch
                # means this server cannot justify what it forwarded
                return BlameVerdict(set(), position, True, walks)
            walk.append((position, step.x, x_cur, step.ciphertext))
            x_cur, c_cur = step.x, step.ciphertext

        submission = submissions_by_pair.get((x_cur.encode(), c_cur))
        if submission is None:
            # all steps verified yet no submission matches: some upstream
            # reveal was fabricated consistently; halt without attribution
            return BlameVerdict(set(), None, False, walks)

        key_h, proof = servers[accuser_pos].accuser_reveal(trigger.entries[entry_idx][0])
        if not verify_dleq(
            trigger.entries[entry_idx][0], key_h,
            directory.bpk_prev(accuser_pos), directory.mpk(accuser_pos),
            proof, TAG_BLAME_DECRYPT,
        ):
            return BlameVerdict(set(), accuser_pos, True, walks)
        ok, _ = adec(derive_key(key_h), round_number, trigger.entries[entry_idx][1])
        if ok:
            # the entry decrypts fine under the proven-correct key: the
            # accusation was false
            return BlameVerdict(set(), accuser_pos, True, walks)

        malicious.add(submission.eph_pub.encode())
        walks[entry_idx] = walk

    return BlameVerdict(malicious, None, True, walks)


def reveal_and_final_decrypt(
    all_isk: Sequence[Scalar],
    final_entries,
    round_number: int,
):
    """Open inner envelopes with the sum of revealed inner keys.

    Returns (deliveries, dropped) where deliveries are (dest_pk,
    eph_pub, body) triples and dropped counts entries whose inner layer
    was malformed -- such an entry only ever harms its own sender.
    """
    isk_total = scalar_sum(all_isk)
    deliveries = []
    dropped = 0
    for _blinded, inner_bytes in final_entries:
        try:
            inner = InnerCiphertext.from_bytes(inner_bytes)
            shared = dh(inner.eph_pub, isk_total)
        except ValueError:
            dropped += 1
            continue
        ok, payload = adec(derive_key(shared), round_number, inner.body)
        if not ok:
            dropped += 1
            continue
        try:
            dest = GroupElement.decode(payload[:32])
        except ValueError:
            dropped += 1
            continue
        deliveries.append((dest, inner.eph_pub, payload[32:]))
    return deliveries, dropped


# -- inter-server wire formats -----------------------------------------
#
# Every message is: 1-byte type tag | 8-byte little-endian round | body.
# Group elements, scalars, and proofs use the canonical fixed layouts
# from the crypto module; variable-length lists carry 4-byte LE counts
# and ciphertexts 4-byte LE lengths.

MSG_KEYGEN = 1
MSG_INPUT_DIGEST = 2
MSG_HOP = 3
MSG_REVEAL = 4
MSG_BLAME_OPEN = 5
MSG_BLAME_STEP = 6
MSG_VERDICT = 7


def _header(msg_type: int, round_number: int) -> bytes:
    return bytes([msg_type]) + round_number.to_bytes(8, "little")


def _u16(v: int) -> bytes:
    return v.to_bytes(2, "little")


def _u32(v: int) -> bytes:
    return v.to_bytes(4, "little")


@dataclass(frozen=True)
class KeygenMsg:
    round_number: int
    position: int
    bpk: GroupElement
    mpk: GroupElement
    proof_bsk: DlogProof
    proof_msk: DlogProof

    def encode(self) -> bytes:
        return (
            _header(MSG_KEYGEN, self.round_number)
            + _u16(self.position)
            + self.bpk.encode()
            + self.mpk.encode()
            + self.proof_bsk.encode()
            + self.proof_msk.encode()
        )


@dataclass(frozen=True)
class InputDigestMsg:
    round_number: int
    digest: bytes

    def encode(self) -> bytes:
        return _header(MSG_INPUT_DIGEST, self.round_number) + self.digest


@dataclass(frozen=True)
class HopMsg:
    round_number: int
    hop: int
    out_keys: tuple
    ciphertexts: tuple
    dleq: DleqProof

    def encode(self) -> bytes:
        parts = [
            _header(MSG_HOP, self.round_number),
            _u16(self.hop),
            _u32(len(self.out_keys)),
        ]
        parts += [k.encode() for k in self.out_keys]
        parts.append(self.dleq.encode())
        parts.append(_u32(len(self.ciphertexts[0]) if self.ciphertexts else 0))
        parts += list(self.ciphertexts)
        return b"".join(parts)


@dataclass(frozen=True)
class RevealMsg:
    round_number: int
    position: int
    isk: Scalar

    def encode(self) -> bytes:
        return _header(MSG_REVEAL, self.round_number) + _u16(self.position) + self.isk.encode()


@dataclass(frozen=True)
class BlameOpenMsg:
    round_number: int
    hop: int
    entry_ids: tuple[int, ...]
    entries: tuple  # (GroupElement, bytes)

    def encode(self) -> bytes:
        parts = [
            _header(MSG_BLAME_OPEN, self.round_number),
            _u16(self.hop),
            _u32(len(self.entries)),
        ]
        for entry_id, (x, c) in zip(self.entry_ids, self.entries):
            parts.append(_u32(entry_id))
            parts.append(x.encode())
            parts.append(_u32(len(c)))
            parts.append(c)
        return b"".join(parts)


@dataclass(frozen=True)
class BlameStepMsg:
    round_number: int
    hop: int
    x: GroupElement
    key: GroupElement
    dleq_blind: DleqProof
    dleq_key: DleqProof
    ciphertext: bytes

    def encode(self) -> bytes:
        return (
            _header(MSG_BLAME_STEP, self.round_number)
            + _u16(self.hop)
            + self.x.encode()
            + self.key.encode()
            + self.dleq_blind.encode()
            + self.dleq_key.encode()
            + _u32(len(self.ciphertext))
            + self.ciphertext
        )


@dataclass(frozen=True)
class VerdictMsg:
    round_number: int
    malicious_submissions: tuple[bytes, ...]
    failed_prover: Optional[int]

    def encode(self) -> bytes:
        parts = [
            _header(MSG_VERDICT, self.round_number),
            _u32(len(self.malicious_submissions)),
        ]
        parts += list(self.malicious_submissions)
        if self.failed_prover is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + _u16(self.failed_prover))
        return b"".join(parts)


def decode_message(data: bytes):
    """Parse any inter-server message; raises ValueError on malformed input."""
    if len(data) < 9:
        raise ValueError("message too short")
    msg_type = data[0]
    round_number = int.from_bytes(data[1:9], "little")
    body = data[9:]
    if msg_type == MSG_KEYGEN:
        if len(body) != 2 + 32 + 32 + 64 + 64:
            raise ValueError("bad keygen length")
        return KeygenMsg(
            round_number,
            int.from_bytes(body[:2], "little"),
            GroupElement.decode(body[2:34]),
            GroupElement.decode(body[34:66]),
            DlogProof.decode(body[66:130]),
            DlogProof.decode(body[130:194]),
        )
    if msg_type == MSG_INPUT_DIGEST:
        if len(body) != 32:
            raise ValueError("bad digest length")
        return InputDigestMsg(round_number, body)
    if msg_type == MSG_HOP:
        hop = int.from_bytes(body[:2], "little")
        count = int.from_bytes(body[2:6], "little")
        off = 6
        keys = []
        for _ in range(count):
            keys.append(GroupElement.decode(body[off : off + 32]))
            off += 32
        dleq = DleqProof.decode(body[off : off + 96])
        off += 96
        clen = int.from_bytes(body[off : off + 4], "little")
        off += 4
        ciphertexts = []
        for _ in range(count):
            ciphertexts.append(body[off : off + clen])
            off += clen
        if off != len(body):
            raise ValueError("bad hop message length")
        return HopMsg(round_number, hop, tuple(keys), tuple(ciphertexts), dleq)
    if msg_type == MSG_REVEAL:
        if len(body) != 2 + 32:
            raise ValueError("bad reveal length")
        return RevealMsg(
            round_number,
            int.from_bytes(body[:2], "little"),
            Scalar.decode(body[2:]),
        )
    if msg_type == MSG_BLAME_OPEN:
        hop = int.from_bytes(body[:2], "little")
        count = int.from_bytes(body[2:6], "little")
        off = 6
        ids = []
        entries = []
        for _ in range(count):
            ids.append(int.from_bytes(body[off : off + 4], "little"))
            off += 4
            x = GroupElement.decode(body[off : off + 32])
            off += 32
            clen = int.from_bytes(body[off : off + 4], "little")
            off += 4
            entries.append((x, body[off : off + clen]))
            off += clen
        if off != len(body):
            raise ValueError("bad blame-open length")
        return BlameOpenMsg(round_number, hop, tuple(ids), tuple(entries))
    if msg_type == MSG_BLAME_STEP:
        hop = int.from_bytes(body[:2], "little")
        x = GroupElement.decode(body[2:34])
        key = GroupElement.decode(body[34:66])
        dleq_blind = DleqProof.decode(body[66:162])
        dleq_key = DleqProof.decode(body[162:258])
        clen = int.from_bytes(body[258:262], "little")
        ciphertext = body[262 : 262 + clen]
        if 262 + clen != len(body):
            raise ValueError("bad blame-step length")
        return BlameStepMsg(round_number, hop, x, key, dleq_blind, dleq_key, ciphertext)
    if msg_type == MSG_VERDICT:
        count = int.from_bytes(body[:4], "little")
        off = 4
        users = []
        for _ in range(count):
            users.append(body[off : off + 32])
            off += 32
        if body[off] == 0:
            failed = None
            off += 1
        else:
            failed = int.from_bytes(body[off + 1 : off + 3], "little")
            off += 3
        if off != len(body):
            raise ValueError("bad verdict length")
        return VerdictMsg(round_number, tuple(users), failed)
    raise ValueError(f"unknown message type {msg_type}")
