"""Shared builders for chain-level tests: a k-hop chain with honest
servers, plus a driver that pushes submissions through it."""

from dataclasses import replace

from mixmesh.client import ChainKeys
from mixmesh.crypto import GENERATOR, Drbg
from mixmesh.harness import WorldConfig
from mixmesh.mixserver import (
    BlameTrigger,
    ChainDirectory,
    MixBatch,
    MixServer,
    agree_inputs,
    gen_keys,
    reveal_and_final_decrypt,
)


def small_config(**overrides) -> WorldConfig:
    base = dict(
        n=6, k=3, user_count=12, conversation_fraction=0.5,
        rng_seed="test", latency_ms=(1, 2),
    )
    base.update(overrides)
    return WorldConfig(**base)


def build_chain(k: int, rng: Drbg, chain_id: int = 1, round_number: int = 1):
    """An honest k-hop chain, keys rotated for `round_number`."""
    directory = ChainDirectory(
        chain_id=chain_id, bpks=(GENERATOR,), mpks=(),
        ipks=[None] * k, next_ipks=[None] * k,
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
            server_id=f"srv{position}",
            directory=directory,
            keys=keys,
            rng=rng.child(f"server/{position}"),
        )
    directory = replace(directory, bpks=tuple(bpks), mpks=tuple(mpks))
    for node in nodes.values():
        node.directory = directory
        node.begin_round(round_number, rng.child(f"inner/{node.position}"))
    chain_keys = ChainKeys(
        chain_id=chain_id,
        mix_pks=tuple(directory.mpks),
        inner_pks=tuple(directory.ipks),
    )
    return directory, nodes, chain_keys


def run_chain(nodes, submissions, round_number: int):
    """Agree, mix all hops with verification, reveal, final-decrypt.

    Returns (deliveries, dropped).  Raises on any proof rejection or
    decryption failure; tests that expect those drive the hops manually.
    """
    k = len(nodes)
    _digest, accepted = agree_inputs(submissions)
    for node in nodes.values():
        node.observe_inputs(accepted)
    batch = MixBatch(
        entries=[(s.eph_pub, s.onion) for s in accepted],
        round_number=round_number,
        hop=1,
    )
    for position in range(1, k + 1):
        result = nodes[position].mix(batch)
        if isinstance(result, BlameTrigger):
            raise AssertionError(f"unexpected blame trigger at hop {position}")
        batch, proof = result
        for pos, other in nodes.items():
            if pos != position:
                assert other.observe_hop(
                    position, [x for x, _ in batch.entries], proof
                ), f"hop {position} proof rejected by position {pos}"
    return reveal_and_final_decrypt(
        [nodes[p].keys.isk for p in range(1, k + 1)], batch.entries, round_number
    )
