"""Deterministic round simulator.

Builds a world (servers, chains, key ceremonies, users, mailboxes) from
a config, then drives discrete rounds: submit -> input agreement -> k
verified mix hops -> inner-key reveal -> final decrypt -> mailbox
delivery -> user fetch.  Chains advance as independent tasks over a
shared event queue ordered by simulated time (ties broken by chain id,
then sequence), so a single seed reproduces every run byte for byte.
Injected latencies only shape the reported timings, never the logic.

Adversaries are scripted server or client implementations placed
upstream of the first honest server; server churn is fail-stop at round
start, and only the chains containing a failed server are affected.
"""

from __future__ import annotations

import heapq
import json
import random
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

import yaml

from .client import (
    DEFAULT_MESSAGE_SIZE,
    ChainKeys,
    OuterCiphertext,
    UserIdentity,
    build_cover_messages,
    build_payload,
    build_round_messages,
    encrypt_inner,
    fetch_and_decrypt,
    outer_ciphertext_size,
)
from .crypto import (
    AEAD_OVERHEAD,
    GENERATOR,
    TAG_CLIENT_SUBMISSION,
    Drbg,
    aenc,
    derive_key,
    dh,
    keygen,
    prove_dlog,
)
from .mailbox import MailboxStore
from .mixserver import (
    BlameTrigger,
    ChainAbort,
    ChainDirectory,
    HopMsg,
    HopProof,
    MixBatch,
    MixServer,
    RevealMsg,
    agree_inputs,
    gen_keys,
    reveal_and_final_decrypt,
    run_blame,
    verify_keygen,
)
from .topology import SystemParams, compute_ell, form_chains, intersect_chain

ADVERSARY_MODES = (
    "none",
    "tamper_replace",
    "tamper_drop",
    "tamper_product_preserving",
    "tamper_reorder_keys",
    "replay_duplicate",
    "malicious_client_bad_inner",
    "false_accuse",
)
TAMPER_MODES = (
    "tamper_replace",
    "tamper_drop",
    "tamper_product_preserving",
    "tamper_reorder_keys",
    "replay_duplicate",
)


@dataclass(frozen=True)
class ChurnSpec:
    server_fail_prob: float = 0.0
    user_offline_prob: float = 0.0


@dataclass(frozen=True)
class AdversarySpec:
    """Which scripted misbehaviour to inject, where, and how much.

    For tamper modes the target hop must lie strictly upstream of an
    honest server (target_hop < k), the only placement where tampering
    could pay off at all.
    """

    mode: str
    target_chain: int = 1
    target_hop: int = 1
    count: int = 1


@dataclass(frozen=True)
class WorldConfig:
    n: int
    user_count: int
    conversation_fraction: float = 0.0
    message_size: int = DEFAULT_MESSAGE_SIZE
    rng_seed: str = "mixmesh"
    f: str = "0.2"
    k: Optional[int] = None
    sec_exponent: int = 64
    server_count: Optional[int] = None
    adversary: Optional[AdversarySpec] = None
    churn: ChurnSpec = field(default_factory=ChurnSpec)
    latency_ms: tuple = (5, 50)

    def __post_init__(self):
        if self.user_count < 2:
            raise ValueError("worlds need at least two users")
        if not 0.0 <= self.conversation_fraction <= 1.0:
            raise ValueError("conversation_fraction must lie in [0, 1]")
        for p in (self.churn.server_fail_prob, self.churn.user_offline_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("churn probabilities must lie in [0, 1]")
        if self.adversary is not None and self.adversary.mode not in ADVERSARY_MODES:
            raise ValueError(f"unknown adversary mode {self.adversary.mode!r}")

    def to_dict(self) -> dict:
        d = {
            "n": self.n,
            "user_count": self.user_count,
            "conversation_fraction": self.conversation_fraction,
            "message_size": self.message_size,
            "rng_seed": self.rng_seed,
            "f": self.f,
            "sec_exponent": self.sec_exponent,
            "latency_ms": list(self.latency_ms),
            "churn": {
                "server_fail_prob": self.churn.server_fail_prob,
                "user_offline_prob": self.churn.user_offline_prob,
            },
        }
        if self.k is not None:
            d["k"] = self.k
        if self.server_count is not None:
            d["server_count"] = self.server_count
        if self.adversary is not None:
            d["adversary"] = {
                "mode": self.adversary.mode,
                "target_chain": self.adversary.target_chain,
                "target_hop": self.adversary.target_hop,
                "count": self.adversary.count,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        adversary = None
        if d.get("adversary") is not None:
            adversary = AdversarySpec(**d["adversary"])
        churn = ChurnSpec(**d.get("churn", {}))
        return cls(
            n=int(d["n"]),
            user_count=int(d["user_count"]),
            conversation_fraction=float(d.get("conversation_fraction", 0.0)),
            message_size=int(d.get("message_size", DEFAULT_MESSAGE_SIZE)),
            rng_seed=str(d.get("rng_seed", "mixmesh")),
            f=str(d.get("f", "0.2")),
            k=int(d["k"]) if d.get("k") is not None else None,
            sec_exponent=int(d.get("sec_exponent", 64)),
            server_count=int(d["server_count"]) if d.get("server_count") else None,
            adversary=adversary,
            churn=churn,
            latency_ms=tuple(d.get("latency_ms", (5, 50))),
        )

    def dump(self, stream) -> None:
        yaml.safe_dump(self.to_dict(), stream, sort_keys=False)

    @classmethod
    def load(cls, stream) -> "WorldConfig":
        return cls.from_dict(yaml.safe_load(stream))


@dataclass
class UserState:
    identity: UserIdentity
    partner_idx: Optional[int] = None
    online: bool = True
    sent_loopbacks: int = 0
    sent_conversation: bool = False


@dataclass
class RoundReport:
    """Everything observable about one simulated round.

    wall_ms is informational only and excluded from to_record(), whose
    output is byte-identical across runs of the same config; reported
    timings come from the simulated clock.
    """

    round_number: int
    active_conversations: int = 0
    delivered_conversations: int = 0
    failed_conversations: int = 0
    loopbacks_sent: int = 0
    loopbacks_returned: int = 0
    offline_notices: int = 0
    detections: list = field(default_factory=list)
    aborted_chains: list = field(default_factory=list)
    inner_reveals: list = field(default_factory=list)
    phase_ms: dict = field(default_factory=dict)
    sim_duration_ms: int = 0
    bytes_moved: int = 0
    mailbox_counts: list = field(default_factory=list)
    observable: dict = field(default_factory=dict)
    wall_ms: float = 0.0

    def to_record(self) -> dict:
        return {
            "round": self.round_number,
            "active_conversations": self.active_conversations,
            "delivered_conversations": self.delivered_conversations,
            "failed_conversations": self.failed_conversations,
            "loopbacks_sent": self.loopbacks_sent,
            "loopbacks_returned": self.loopbacks_returned,
            "offline_notices": self.offline_notices,
            "detections": self.detections,
            "aborted_chains": self.aborted_chains,
            "inner_reveals": self.inner_reveals,
            "phase_ms": self.phase_ms,
            "sim_duration_ms": self.sim_duration_ms,
            "bytes_moved": self.bytes_moved,
            "mailbox_counts": self.mailbox_counts,
            "observable": self.observable,
        }


@dataclass
class World:
    config: WorldConfig
    params: SystemParams
    server_ids: list
    chains: list
    directories: dict
    servers: dict  # (chain_id, position) -> MixServer
    users: list
    mailbox: MailboxStore
    rng: Drbg
    round_number: int = 0
    cover_store: dict = field(default_factory=dict)
    scripted_bad_users: set = field(default_factory=set)
    chain_servers: dict = field(default_factory=dict)

    @property
    def ell(self) -> int:
        return self.params.ell

    def set_pair(self, a: int, b: int) -> None:
        self.users[a].partner_idx = b
        self.users[b].partner_idx = a


# -- scripted adversaries ------------------------------------------------


class TamperReplaceServer(MixServer):
    """Mixes honestly, then swaps `count` output ciphertexts for garbage."""

    def __init__(self, *args, count: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        self.count = count

    def mix(self, batch):
        result = super().mix(batch)
        if isinstance(result, BlameTrigger):
            return result
        out_batch, proof = result
        for j in range(min(self.count, len(out_batch.entries))):
            x, c = out_batch.entries[j]
            out_batch.entries[j] = (x, self.rng.bytes(len(c)))
        self.state.sent = list(out_batch.entries)
        return out_batch, proof


class TamperDropServer(MixServer):
    """Silently drops `count` entries; no proof can cover the gap."""

    def __init__(self, *args, count: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        self.count = count

    def mix(self, batch):
        result = super().mix(batch)
        if isinstance(result, BlameTrigger):
            return result
        out_batch, proof = result
        keep = max(1, len(out_batch.entries) - self.count)
        out_batch.entries = out_batch.entries[:keep]
        self.state.sent = list(out_batch.entries)
        forged = HopProof(
            dleq=proof.dleq, out_keys=tuple(x for x, _ in out_batch.entries)
        )
        return out_batch, forged


class TamperProductPreservingServer(MixServer):
    """Re-keys two entries while preserving the product the proof binds."""

    def mix(self, batch):
        result = super().mix(batch)
        if isinstance(result, BlameTrigger):
            return result
        out_batch, proof = result
        if len(out_batch.entries) >= 2:
            blind = GENERATOR.pow(self.rng.scalar_nonzero())
            x0, c0 = out_batch.entries[0]
            x1, c1 = out_batch.entries[1]
            out_batch.entries[0] = (x0 * blind, c0)
            out_batch.entries[1] = (x1 * blind.inverse(), c1)
            self.state.sent = list(out_batch.entries)
            proof = HopProof(
                dleq=proof.dleq, out_keys=tuple(x for x, _ in out_batch.entries)
            )
        return out_batch, proof


class TamperReorderKeysServer(MixServer):
    """Swaps two blinded keys without moving their ciphertexts."""

    def mix(self, batch):
        result = super().mix(batch)
        if isinstance(result, BlameTrigger):
            return result
        out_batch, proof = result
        if len(out_batch.entries) >= 2:
            (x0, c0), (x1, c1) = out_batch.entries[0], out_batch.entries[1]
            out_batch.entries[0] = (x1, c0)
            out_batch.entries[1] = (x0, c1)
            self.state.sent = list(out_batch.entries)
            proof = HopProof(
                dleq=proof.dleq, out_keys=tuple(x for x, _ in out_batch.entries)
            )
        return out_batch, proof


class ReplayDuplicateServer(MixServer):
    """Emits an extra copy of one entry; the size check exposes it."""

    def mix(self, batch):
        result = super().mix(batch)
        if isinstance(result, BlameTrigger):
            return result
        out_batch, proof = result
        out_batch.entries.append(out_batch.entries[0])
        self.state.sent = list(out_batch.entries)
        forged = HopProof(
            dleq=proof.dleq, out_keys=tuple(x for x, _ in out_batch.entries)
        )
        return out_batch, forged


class FalseAccuserServer(MixServer):
    """Accuses `count` healthy entries instead of forwarding its output."""

    def __init__(self, *args, count: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        self.count = count
        self.fired = False

    def mix(self, batch):
        result = super().mix(batch)
        if isinstance(result, BlameTrigger) or self.fired:
            return result
        self.fired = True
        take = min(self.count, len(self.state.received))
        return BlameTrigger(
            hop=self.position,
            entry_ids=tuple(range(take)),
            entries=tuple(self.state.received[:take]),
        )


_ADVERSARY_SERVERS = {
    "tamper_replace": TamperReplaceServer,
    "tamper_drop": TamperDropServer,
    "tamper_product_preserving": TamperProductPreservingServer,
    "tamper_reorder_keys": TamperReorderKeysServer,
    "replay_duplicate": ReplayDuplicateServer,
    "false_accuse": FalseAccuserServer,
}
_COUNTED_SERVERS = (TamperReplaceServer, TamperDropServer, FalseAccuserServer)


def build_corrupt_onion(
    user: UserIdentity,
    keys: ChainKeys,
    round_number: int,
    bad_layer: int,
    rng: Drbg,
    message_size: int,
) -> OuterCiphertext:
    """Onion whose authenticated layer `bad_layer` is random garbage.

    Sizes match honest submissions exactly; only the failed decryption
    at the targeted hop gives it away.
    """
    payload = build_payload(
        user.pk, user.loopback_key(keys.chain_id), round_number, b"", message_size
    )
    inner = encrypt_inner(
        user.pk, payload[32:], round_number, keys.inner_pks, rng, keys.inner_product
    )
    x, eph = keygen(rng)
    proof = prove_dlog(GENERATOR, eph, x, TAG_CLIENT_SUBMISSION)
    onion = inner.to_bytes()
    for layer in range(len(keys.mix_pks), 0, -1):
        if layer == bad_layer:
            onion = rng.bytes(len(onion) + AEAD_OVERHEAD)
        else:
            onion = aenc(derive_key(dh(keys.mix_pks[layer - 1], x)), round_number, onion)
    return OuterCiphertext(eph_pub=eph, proof=proof, onion=onion)


# -- world construction --------------------------------------------------


def build_params(config: WorldConfig) -> SystemParams:
    seed = config.rng_seed.encode()
    if config.k is not None:
        return SystemParams(
            n=config.n,
            server_count=config.server_count or config.n,
            f=Fraction(config.f),
            k=config.k,
            ell=compute_ell(config.n),
            sec_exponent=config.sec_exponent,
            seed=seed,
        )
    return SystemParams.derive(
        n=config.n,
        f=config.f,
        sec_exponent=config.sec_exponent,
        seed=seed,
        server_count=config.server_count,
    )


def build_world(config: WorldConfig) -> World:
    params = build_params(config)
    rng = Drbg(config.rng_seed.encode())
    server_ids = [f"s{i:04d}" for i in range(params.server_count)]
    chains = form_chains(params.seed, server_ids, params)

    adversary = config.adversary
    directories = {}
    servers = {}
    chain_servers = {}
    for chain in chains:
        directory = ChainDirectory(
            chain_id=chain.chain_id,
            bpks=(GENERATOR,),
            mpks=(),
            ipks=[None] * params.k,
            next_ipks=[None] * params.k,
        )
        bpks = [GENERATOR]
        mpks = []
        by_pos = {}
        bpk_prev = GENERATOR
        for position, server_id in enumerate(chain.servers, start=1):
            keys = gen_keys(position, bpk_prev, rng.child(f"keys/{chain.chain_id}/{position}"))
            if not verify_keygen(
                bpk_prev, keys.bpk, keys.mpk, keys.proof_bsk, keys.proof_msk
            ):
                raise RuntimeError("key ceremony proof failed")
            bpks.append(keys.bpk)
            mpks.append(keys.mpk)
            bpk_prev = keys.bpk

            server_cls = MixServer
            extra = {}
            if (
                adversary is not None
                and adversary.mode in _ADVERSARY_SERVERS
                and chain.chain_id == adversary.target_chain
                and position == adversary.target_hop
            ):
                server_cls = _ADVERSARY_SERVERS[adversary.mode]
                if server_cls in _COUNTED_SERVERS:
                    extra = {"count": adversary.count}
            node = server_cls(
                server_id=server_id,
                directory=directory,
                keys=keys,
                rng=rng.child(f"server/{chain.chain_id}/{position}"),
                **extra,
            )
            by_pos[position] = node
            servers[(chain.chain_id, position)] = node

        directory = replace(directory, bpks=tuple(bpks), mpks=tuple(mpks))
        for node in by_pos.values():
            node.directory = directory
        directories[chain.chain_id] = directory
        chain_servers[chain.chain_id] = by_pos

    users = [
        UserState(identity=UserIdentity.create(rng.child(f"user/{i}"), params.ell, config.n))
        for i in range(config.user_count)
    ]

    world = World(
        config=config,
        params=params,
        server_ids=server_ids,
        chains=chains,
        directories=directories,
        servers=servers,
        users=users,
        mailbox=MailboxStore(),
        rng=rng,
        chain_servers=chain_servers,
    )

    if config.conversation_fraction > 0:
        pair_rng = rng.child("pairing")
        order = list(range(config.user_count))
        pair_rng.shuffle(order)
        pair_count = int(config.user_count * config.conversation_fraction) // 2
        for p in range(pair_count):
            world.set_pair(order[2 * p], order[2 * p + 1])
    return world


def _conversation_content(round_number: int, sender: int, receiver: int) -> bytes:
    return f"r{round_number}|{sender}->{receiver}".encode()


def _conversation_chain(world: World, idx: int) -> Optional[int]:
    user = world.users[idx]
    if user.partner_idx is None:
        return None
    partner = world.users[user.partner_idx]
    return intersect_chain(
        user.identity.group, partner.identity.group, world.params.ell, world.config.n
    )


def _tamper_constraint_ok(spec: AdversarySpec, k: int) -> bool:
    if spec.mode in TAMPER_MODES:
        return 1 <= spec.target_hop < k
    if spec.mode in ("false_accuse", "malicious_client_bad_inner"):
        return 1 <= spec.target_hop <= k
    return True


# -- the round driver ----------------------------------------------------


@dataclass
class _ChainRun:
    chain_id: int
    submissions: list  # (user_idx, OuterCiphertext)
    accepted: list = field(default_factory=list)
    submitter_by_pair: dict = field(default_factory=dict)
    batch: Optional[MixBatch] = None
    hop: int = 1
    outcome: str = "pending"
    abort_reason: str = ""
    detections: list = field(default_factory=list)
    revealed: bool = False
    deliveries: list = field(default_factory=list)
    dropped_inner: int = 0
    delivery_time: int = 0


def run_round(world: World) -> RoundReport:
    """Drive one full round; deterministic given the world's seed."""
    wall_start = time.perf_counter()
    world.round_number += 1
    rho = world.round_number
    config = world.config
    params = world.params
    k = params.k
    report = RoundReport(round_number=rho)

    if config.adversary is not None and config.adversary.mode != "none":
        if not _tamper_constraint_ok(config.adversary, k):
            raise ValueError(
                f"adversary at hop {config.adversary.target_hop} is not upstream "
                f"of an honest server in a {k}-hop chain"
            )

    # fail-stop server churn, drawn at round start
    failed_servers = set()
    if config.churn.server_fail_prob > 0:
        churn_rng = world.rng.child(f"round/{rho}/server-churn")
        threshold = int(config.churn.server_fail_prob * 10**9)
        failed_servers = {
            sid for sid in world.server_ids if churn_rng.randbelow(10**9) < threshold
        }

    # sticky user churn from round 2 on (everyone submits on their first round)
    if rho >= 2 and config.churn.user_offline_prob > 0:
        churn_rng = world.rng.child(f"round/{rho}/user-churn")
        threshold = int(config.churn.user_offline_prob * 10**9)
        for user in world.users:
            if user.online and churn_rng.randbelow(10**9) < threshold:
                user.online = False

    # rotate per-round inner keys everywhere
    for chain in world.chains:
        for position in range(1, k + 1):
            world.servers[(chain.chain_id, position)].begin_round(
                rho, world.rng.child(f"round/{rho}/inner/{chain.chain_id}/{position}")
            )

    chain_keys = {}
    next_chain_keys = {}
    for chain in world.chains:
        directory = world.directories[chain.chain_id]
        chain_keys[chain.chain_id] = ChainKeys(
            chain_id=chain.chain_id,
            mix_pks=tuple(directory.mpks),
            inner_pks=tuple(directory.ipks),
        )
        next_chain_keys[chain.chain_id] = ChainKeys(
            chain_id=chain.chain_id,
            mix_pks=tuple(directory.mpks),
            inner_pks=tuple(directory.next_ipks),
        )

    # scripted malicious clients submit corrupt onions on the target chain
    adversary = config.adversary
    bad_clients: set[int] = set()
    if adversary is not None and adversary.mode == "malicious_client_bad_inner":
        for idx, user in enumerate(world.users):
            if adversary.target_chain in user.identity.chains:
                bad_clients.add(idx)
            if len(bad_clients) >= adversary.count:
                break

    submissions_by_chain = {chain.chain_id: [] for chain in world.chains}
    new_cover: dict[int, list] = {}
    expected_partner_content: dict[int, tuple] = {}
    world.scripted_bad_users = set()

    for idx, user in enumerate(world.users):
        user.sent_loopbacks = 0
        user.sent_conversation = False
        if not user.online:
            continue
        partner_pk = (
            world.users[user.partner_idx].identity.pk
            if user.partner_idx is not None
            else None
        )
        conv_chain = _conversation_chain(world, idx)
        content = b""
        if user.partner_idx is not None:
            content = _conversation_content(rho, idx, user.partner_idx)
            expected_partner_content[user.partner_idx] = (idx, content)
        msgs = build_round_messages(
            user.identity,
            partner_pk,
            rho,
            chain_keys,
            params.ell,
            config.n,
            world.rng.child(f"round/{rho}/user/{idx}"),
            content=content,
            message_size=config.message_size,
        )
        if idx in bad_clients:
            corrupt = build_corrupt_onion(
                user.identity,
                chain_keys[adversary.target_chain],
                rho,
                adversary.target_hop,
                world.rng.child(f"round/{rho}/bad-client/{idx}"),
                config.message_size,
            )
            msgs = [
                (cid, corrupt if cid == adversary.target_chain else outer)
                for cid, outer in msgs
            ]
            world.scripted_bad_users.add(idx)
        for chain_id, outer in msgs:
            submissions_by_chain[chain_id].append((idx, outer))
            if chain_id == conv_chain:
                user.sent_conversation = True
            else:
                user.sent_loopbacks += 1

        covers = build_cover_messages(
            user.identity,
            partner_pk,
            rho + 1,
            next_chain_keys,
            params.ell,
            config.n,
            world.rng.child(f"round/{rho}/cover/{idx}"),
            message_size=config.message_size,
        )
        for chain_id, outer in covers:
            new_cover.setdefault(chain_id, []).append((idx, outer))

    # offline users are represented by the covers they banked last round
    for chain_id, entries in world.cover_store.items():
        for idx, outer in entries:
            if not world.users[idx].online:
                submissions_by_chain[chain_id].append((idx, outer))
    world.cover_store = new_cover

    report.active_conversations = sum(
        1 for u in world.users if u.online and u.partner_idx is not None
    )
    report.loopbacks_sent = sum(u.sent_loopbacks for u in world.users)

    # run every chain over the shared scheduler
    runs: dict[int, _ChainRun] = {}
    events: list = []
    seq = 0

    def schedule(at_ms, chain_id, phase, fn):
        nonlocal seq
        heapq.heappush(events, (at_ms, chain_id, seq, phase, fn))
        seq += 1

    for chain in world.chains:
        cid = chain.chain_id
        run = _ChainRun(chain_id=cid, submissions=submissions_by_chain[cid])
        runs[cid] = run
        if any(s in failed_servers for s in chain.servers):
            run.outcome = "aborted"
            run.abort_reason = "server_failure"
            continue
        chain_rng = world.rng.child(f"round/{rho}/latency/{cid}")
        stepper = _make_chain_stepper(world, run, rho, chain_rng, report)
        schedule(chain_rng.randrange(*map(int, config.latency_ms)), cid, "submit", stepper)

    while events:
        at_ms, cid, _, phase, fn = heapq.heappop(events)
        report.sim_duration_ms = max(report.sim_duration_ms, at_ms)
        nxt = fn(phase, at_ms)
        if nxt is not None:
            nxt_phase, nxt_at, nxt_fn = nxt
            schedule(nxt_at, cid, nxt_phase, nxt_fn)
            report.sim_duration_ms = max(report.sim_duration_ms, nxt_at)

    # mailbox delivery in simulated completion order
    world.mailbox.open_round(rho)
    for cid in sorted(runs, key=lambda c: (runs[c].delivery_time, c)):
        run = runs[cid]
        if run.outcome == "delivered":
            for dest, eph, body in run.deliveries:
                world.mailbox.put(dest, eph, body)
                report.bytes_moved += 32 + 32 + len(body)

    mailbox_stats = world.mailbox.end_round()
    report.mailbox_counts = sorted(
        (pk.hex()[:16], count) for pk, count in mailbox_stats.items()
    )

    # fetch + classify
    delivered_pairs = set()
    notice_receivers = []
    for idx, user in enumerate(world.users):
        if not user.online:
            continue
        partner_pk = (
            world.users[user.partner_idx].identity.pk
            if user.partner_idx is not None
            else None
        )
        results = fetch_and_decrypt(
            user.identity, partner_pk, rho, world.mailbox.get(user.identity.pk)
        )
        report.loopbacks_returned += sum(1 for r in results if r.source == "self")
        for r in results:
            if r.source != "partner":
                continue
            if r.offline_notice:
                report.offline_notices += 1
                notice_receivers.append(idx)
            elif idx in expected_partner_content:
                sender, content = expected_partner_content[idx]
                if r.content == content:
                    delivered_pairs.add((sender, idx))

    report.delivered_conversations = len(delivered_pairs)
    sent_conversations = sum(1 for u in world.users if u.online and u.sent_conversation)
    report.failed_conversations = sent_conversations - len(delivered_pairs)

    # an offline notice ends the conversation for the survivor
    for idx in notice_receivers:
        world.users[idx].partner_idx = None

    for cid in sorted(runs):
        run = runs[cid]
        if run.outcome == "aborted":
            report.aborted_chains.append([cid, run.abort_reason])
        if run.revealed:
            report.inner_reveals.append(cid)
        report.detections.extend(run.detections)

    report.observable = _observable_transcript(world, runs, report)
    report.wall_ms = (time.perf_counter() - wall_start) * 1000.0
    return report


def _make_chain_stepper(world, run: _ChainRun, rho, chain_rng, report):
    """Per-chain state machine, advanced one phase per scheduler event."""
    k = world.params.k
    cid = run.chain_id
    directory = world.directories[cid]
    servers = world.chain_servers[cid]
    message_size = world.config.message_size
    lat_lo, lat_hi = map(int, world.config.latency_ms)

    def latency(phase):
        ms = chain_rng.randrange(lat_lo, lat_hi)
        report.phase_ms[phase] = report.phase_ms.get(phase, 0) + ms
        return ms

    def step(phase, at_ms):
        if phase == "submit":
            outers = [outer for _, outer in run.submissions]
            _digest, accepted = agree_inputs(outers)
            if len(accepted) < 2:
                run.outcome = "aborted"
                run.abort_reason = "batch_too_small"
                return None
            run.accepted = accepted
            run.submitter_by_pair = {
                (outer.eph_pub.encode(), outer.onion): idx
                for idx, outer in run.submissions
            }
            for node in servers.values():
                node.observe_inputs(accepted)
            size = outer_ciphertext_size(k, message_size)
            report.bytes_moved += size * len(outers) * k + 32 * k * (k - 1)
            run.batch = MixBatch(
                entries=[(s.eph_pub, s.onion) for s in accepted],
                round_number=rho,
                hop=1,
            )
            run.hop = 1
            return ("hop", at_ms + latency("submit"), step)

        if phase == "hop":
            node = servers[run.hop]
            try:
                result = node.mix(run.batch)
            except ChainAbort as exc:
                run.outcome = "aborted"
                run.abort_reason = str(exc)
                return None
            if isinstance(result, BlameTrigger):
                return _handle_blame(result, at_ms)
            batch, proof = result
            hop_msg = HopMsg(
                round_number=rho,
                hop=run.hop,
                out_keys=tuple(x for x, _ in batch.entries),
                ciphertexts=tuple(c for _, c in batch.entries),
                dleq=proof.dleq,
            )
            keys_only = HopMsg(rho, run.hop, hop_msg.out_keys, (), proof.dleq)
            report.bytes_moved += len(hop_msg.encode()) + len(keys_only.encode()) * (k - 1)
            verified = all(
                other.observe_hop(run.hop, list(hop_msg.out_keys), proof)
                for pos, other in servers.items()
                if pos != run.hop
            )
            if not verified:
                run.outcome = "aborted"
                run.abort_reason = "proof_rejected"
                run.detections.append(
                    {
                        "chain": cid,
                        "kind": "proof",
                        "hop": run.hop,
                        "malicious_users": [],
                        "failed_prover": node.server_id,
                        "failed_prover_pos": run.hop,
                    }
                )
                return None
            run.batch = batch
            run.hop += 1
            ms = latency("mix")
            return ("hop" if run.hop <= k else "reveal", at_ms + ms, step)

        if phase == "reveal":
            # no member reported an error: reveal per-round inner keys
            run.revealed = True
            reveal_size = len(RevealMsg(rho, 1, servers[1].keys.isk).encode())
            report.bytes_moved += reveal_size * k * (k - 1)
            all_isk = [servers[pos].keys.isk for pos in range(1, k + 1)]
            run.deliveries, run.dropped_inner = reveal_and_final_decrypt(
                all_isk, run.batch.entries, rho
            )
            run.outcome = "delivered"
            run.delivery_time = at_ms + latency("reveal")
            return None

        raise RuntimeError(f"unknown phase {phase}")

    def _handle_blame(trigger: BlameTrigger, at_ms):
        upstream_sent = (
            servers[run.hop - 1].state.sent
            if run.hop > 1
            else [(s.eph_pub, s.onion) for s in run.accepted]
        )
        verdict = run_blame(
            directory,
            servers,
            run.hop,
            trigger,
            run.accepted,
            rho,
            upstream_sent=upstream_sent,
        )
        ms = latency("blame") * max(1, run.hop - 1) + latency("blame")
        run.detections.append(
            {
                "chain": cid,
                "kind": "blame",
                "hop": run.hop,
                "malicious_users": _map_verdict_users(run, verdict),
                "failed_prover": (
                    servers[verdict.failed_prover].server_id
                    if verdict.failed_prover is not None
                    else ""
                ),
                "failed_prover_pos": (
                    verdict.failed_prover if verdict.failed_prover is not None else 0
                ),
                "resolved": verdict.resolved,
            }
        )
        if not verdict.users_identified:
            run.outcome = "aborted"
            run.abort_reason = "blame"
            return None

        # users removed: every member shrinks its retained submission keys,
        # upstream servers re-prove over the reduced sets (each verification
        # cascades the reduction to the next hop's retained list), then the
        # accuser mixes the cleaned batch and the round resumes
        removed_by_hop: dict[int, list] = {}
        for walk in verdict.walks.values():
            for position, x_in, x_out, _c in walk:
                removed_by_hop.setdefault(position, []).append((x_in, x_out))
        if run.hop == 1:
            removed_hop1 = [x for x, _ in trigger.entries]
        else:
            removed_hop1 = [x_in for x_in, _ in removed_by_hop.get(1, [])]
        for other in servers.values():
            other.observe_reduced_inputs(1, removed_hop1)

        ok = True
        for position in range(1, run.hop):
            pairs = removed_by_hop.get(position, [])
            proof = servers[position].reissue_proof(pairs)
            report.bytes_moved += len(proof.dleq.encode()) * (k - 1)
            for pos, other in servers.items():
                if pos == position:
                    continue
                if not other.observe_hop(position, list(proof.out_keys), proof):
                    ok = False
        if not ok:
            run.outcome = "aborted"
            run.abort_reason = "blame_reproof_failed"
            return None

        try:
            result = servers[run.hop].drop_and_remix(trigger.entry_ids, rho)
        except ChainAbort as exc:
            run.outcome = "aborted"
            run.abort_reason = str(exc)
            return None
        if isinstance(result, BlameTrigger):
            run.outcome = "aborted"
            run.abort_reason = "blame_looped"
            return None
        batch, proof = result
        verified = all(
            other.observe_hop(run.hop, [x for x, _ in batch.entries], proof)
            for pos, other in servers.items()
            if pos != run.hop
        )
        if not verified:
            run.outcome = "aborted"
            run.abort_reason = "proof_rejected"
            return None
        run.batch = batch
        run.hop += 1
        return ("hop" if run.hop <= k else "reveal", at_ms + ms, step)

    return step


def _map_verdict_users(run: _ChainRun, verdict) -> list:
    """Translate blamed submissions back to the simulator's user indices."""
    users = []
    for sub in run.accepted:
        if sub.eph_pub.encode() in verdict.malicious_submissions:
            idx = run.submitter_by_pair.get((sub.eph_pub.encode(), sub.onion))
            users.append(idx if idx is not None else -1)
    return sorted(users)


def _observable_transcript(world: World, runs, report: RoundReport) -> dict:
    """What a network observer sees: counts and sizes, never ciphertext bytes."""
    chains = []
    for cid in sorted(runs):
        run = runs[cid]
        chains.append(
            {
                "chain": cid,
                "submissions": len(run.submissions),
                "submission_bytes": outer_ciphertext_size(
                    world.params.k, world.config.message_size
                ),
                "batch_sizes": (
                    [len(run.accepted)] * world.params.k
                    if run.outcome == "delivered"
                    else []
                ),
                "delivered": len(run.deliveries),
                "outcome": run.outcome,
            }
        )
    return {
        "message_size": world.config.message_size,
        "chains": chains,
        "mailboxes": report.mailbox_counts,
    }


def run_epoch(world: World, rounds: int) -> list:
    """Sequential rounds with carried state: covers, churn, key rotation."""
    return [run_round(world) for _ in range(rounds)]


# -- availability model --------------------------------------------------


def availability_closed_form(q: float, k: int) -> float:
    """Probability a k-server chain contains at least one failed server."""
    return 1.0 - (1.0 - q) ** k


def availability_sim(n: int, k: int, q: float, trials: int, seed: int = 1) -> float:
    """Monte-Carlo estimate of the per-conversation failure fraction.

    Each conversation rides one chain of k independently sampled
    servers, each failing with probability q; n sets the nominal network
    size but cancels out of the per-chain estimate.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError("failure probability must lie in [0, 1]")
    if trials < 1:
        raise ValueError("trials must be positive")
    rand = random.Random(seed).random
    failures = 0
    for _ in range(trials):
        for _ in range(k):
            if rand() < q:
                failures += 1
                break
    return failures / trials


# -- attack suite ---------------------------------------------------------


def _attack_config(base: WorldConfig, mode: str, trial: int) -> WorldConfig:
    k = base.k if base.k is not None else 3
    if mode in TAMPER_MODES:
        hop = 1 + trial % (k - 1) if k > 1 else 1
        count = 1
    elif mode == "malicious_client_bad_inner":
        hop = 1 + trial % k
        count = 1 + trial % 5
    else:  # false_accuse
        hop = 1 + trial % k
        count = 1
    return replace(
        base,
        rng_seed=f"{base.rng_seed}/{mode}/{trial}",
        adversary=AdversarySpec(mode=mode, target_chain=1, target_hop=hop, count=count),
    )


def run_attack_trial(config: WorldConfig):
    """One seeded adversarial round; returns (report, world)."""
    world = build_world(config)
    report = run_round(world)
    return report, world


def attack_suite(base_config: WorldConfig, modes=None, trials: int = 100) -> list:
    """Detection and privacy outcomes per adversary mode over seeded trials.

    For server-side tampering and false accusations detection means the
    chain halted (or the accuser was flagged) with its inner keys never
    revealed.  For malicious clients it means the blame verdict named
    exactly the scripted users; revealing inner keys after their removal
    is the protocol working as intended.
    """
    if modes is None:
        modes = [m for m in ADVERSARY_MODES if m != "none"]
    rows = []
    for mode in modes:
        detected = 0
        privacy_ok = True
        for trial in range(trials):
            config = _attack_config(base_config, mode, trial)
            report, world = run_attack_trial(config)
            target = config.adversary.target_chain
            chain_detections = [d for d in report.detections if d["chain"] == target]
            revealed = target in report.inner_reveals
            if mode in TAMPER_MODES:
                if chain_detections and not revealed:
                    detected += 1
                elif revealed:
                    privacy_ok = False
            elif mode == "false_accuse":
                hit = any(
                    d["kind"] == "blame"
                    and d.get("failed_prover_pos") == config.adversary.target_hop
                    and not d["malicious_users"]
                    for d in chain_detections
                )
                if hit and not revealed:
                    detected += 1
                elif revealed:
                    privacy_ok = False
            elif mode == "malicious_client_bad_inner":
                scripted = sorted(world.scripted_bad_users)
                hit = any(
                    d["kind"] == "blame" and d["malicious_users"] == scripted
                    for d in chain_detections
                )
                if hit:
                    detected += 1
                if revealed and not hit:
                    privacy_ok = False
        rows.append(
            {
                "mode": mode,
                "trials": trials,
                "detection_rate": detected / trials,
                "privacy_outcome": "ok" if privacy_ok else "violated",
            }
        )
    return rows


# -- paired-world transcripts ---------------------------------------------


def paired_transcripts(config: WorldConfig, pair=(0, 1)):
    """Transcripts of a conversing world and an idle twin, same seed.

    The pairing is injected after construction, so both worlds consume
    identical randomness everywhere else.
    """
    base = replace(config, conversation_fraction=0.0)
    world_a = build_world(base)
    world_a.set_pair(*pair)
    world_b = build_world(base)
    return run_round(world_a).observable, run_round(world_b).observable


# -- smoke benchmark ------------------------------------------------------


def bench_chain(
    message_count: int = 10000,
    k: int = 3,
    message_size: int = DEFAULT_MESSAGE_SIZE,
    seed: str = "bench",
) -> dict:
    """Push `message_count` loopback onions through one k-hop chain.

    Reports wall-clock per-phase timings; asserts every hop proof
    verified and every payload survived the trip.
    """
    rng = Drbg(seed.encode())
    timings = {}

    t0 = time.perf_counter()
    directory = ChainDirectory(
        chain_id=1, bpks=(GENERATOR,), mpks=(), ipks=[None] * k, next_ipks=[None] * k
    )
    bpks, mpks = [GENERATOR], []
    nodes = {}
    bpk_prev = GENERATOR
    for position in range(1, k + 1):
        keys = gen_keys(position, bpk_prev, rng.child(f"keys/{position}"))
        bpks.append(keys.bpk)
        mpks.append(keys.mpk)
        bpk_prev = keys.bpk
        nodes[position] = MixServer(
            server_id=f"s{position}",
            directory=directory,
            keys=keys,
            rng=rng.child(f"server/{position}"),
        )
    directory = replace(directory, bpks=tuple(bpks), mpks=tuple(mpks))
    for node in nodes.values():
        node.directory = directory
        node.begin_round(1, rng.child(f"inner/{node.position}"))
    chain_keys = ChainKeys(
        chain_id=1, mix_pks=tuple(directory.mpks), inner_pks=tuple(directory.ipks)
    )
    timings["keygen_ms"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    submissions = []
    expected = set()
    for i in range(message_count):
        user = UserIdentity.create(rng.child(f"user/{i}"), 1, 1)
        msgs = build_round_messages(
            user,
            None,
            1,
            {1: chain_keys},
            1,
            1,
            rng.child(f"msg/{i}"),
            message_size=message_size,
        )
        submissions.append(msgs[0][1])
        expected.add(user.pk.encode())
    timings["client_encrypt_ms"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    _digest, accepted = agree_inputs(submissions)
    for node in nodes.values():
        node.observe_inputs(accepted)
    timings["agree_ms"] = (time.perf_counter() - t0) * 1000

    batch = MixBatch(
        entries=[(s.eph_pub, s.onion) for s in accepted], round_number=1, hop=1
    )
    proofs_verified = 0
    for position in range(1, k + 1):
        t0 = time.perf_counter()
        result = nodes[position].mix(batch)
        if isinstance(result, BlameTrigger):
            raise RuntimeError("unexpected decryption failure in benchmark")
        batch, proof = result
        for pos, other in nodes.items():
            if pos == position:
                continue
            if not other.observe_hop(position, [x for x, _ in batch.entries], proof):
                raise RuntimeError(f"hop {position} proof rejected")
            proofs_verified += 1
        timings[f"hop{position}_ms"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    deliveries, dropped = reveal_and_final_decrypt(
        [nodes[p].keys.isk for p in range(1, k + 1)], batch.entries, 1
    )
    timings["reveal_decrypt_ms"] = (time.perf_counter() - t0) * 1000

    delivered_to = {dest.encode() for dest, _, _ in deliveries}
    return {
        "messages": message_count,
        "k": k,
        "accepted": len(accepted),
        "delivered": len(deliveries),
        "dropped": dropped,
        "proofs_verified": proofs_verified,
        "all_proofs_ok": proofs_verified == k * (k - 1),
        "all_delivered": delivered_to == expected and len(deliveries) == message_count,
        "timings_ms": {name: round(v, 2) for name, v in timings.items()},
    }


# -- report output --------------------------------------------------------


def write_reports_csv(reports, stream) -> None:
    import csv

    writer = csv.writer(stream)
    writer.writerow(
        [
            "round",
            "active_conversations",
            "delivered_conversations",
            "failed_conversations",
            "loopbacks_sent",
            "loopbacks_returned",
            "offline_notices",
            "detections",
            "aborted_chains",
            "inner_reveals",
            "sim_duration_ms",
            "bytes_moved",
        ]
    )
    for r in reports:
        writer.writerow(
            [
                r.round_number,
                r.active_conversations,
                r.delivered_conversations,
                r.failed_conversations,
                r.loopbacks_sent,
                r.loopbacks_returned,
                r.offline_notices,
                len(r.detections),
                len(r.aborted_chains),
                len(r.inner_reveals),
                r.sim_duration_ms,
                r.bytes_moved,
            ]
        )


def write_reports_jsonl(reports, stream) -> None:
    for r in reports:
        stream.write(json.dumps(r.to_record(), sort_keys=True) + "\n")


def write_detections_csv(reports, stream) -> None:
    import csv

    writer = csv.writer(stream)
    writer.writerow(
        ["round", "chain", "kind", "hop", "malicious_users", "failed_prover"]
    )
    for r in reports:
        for d in r.detections:
            writer.writerow(
                [
                    r.round_number,
                    d["chain"],
                    d["kind"],
                    d.get("hop", ""),
                    ";".join(str(u) for u in d.get("malicious_users", [])),
                    d.get("failed_prover", ""),
                ]
            )
