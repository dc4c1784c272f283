"""Chain formation and the chain-selection scheme.

Servers are grouped into n chains of k members each, sampled from public
randomness so anyone can recompute the assignment.  k is sized so that
the probability any chain is all-malicious stays below 2^-sec_exponent.

Users are hashed into ell+1 groups; group i is connected to an ordered
set of ell chains C_i built by a recurrence that guarantees every pair
of groups shares at least one chain.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction

import yaml

from .crypto import Drbg, GroupElement


def _as_fraction(f) -> Fraction:
    # Floats are interpreted by their shortest decimal repr, so 0.2 means 1/5.
    if isinstance(f, float):
        return Fraction(str(f))
    return Fraction(f)


def compute_chain_length(f, n: int, sec_exponent: int) -> int:
    """Smallest k with n * f^k < 2^-sec_exponent (exact rational comparison)."""
    if n < 1:
        raise ValueError("chain count must be at least 1")
    frac = _as_fraction(f)
    if frac < 0 or frac >= 1:
        raise ValueError("malicious fraction must lie in [0, 1)")
    if frac == 0:
        return 1
    bound = Fraction(1, 1 << sec_exponent)
    # float estimate of ceil((lambda + log2 n) / -log2 f), then exact adjust
    k = max(1, math.ceil((sec_exponent + math.log2(n)) / -math.log2(frac)))
    while n * frac**k >= bound:
        k += 1
    while k > 1 and n * frac ** (k - 1) < bound:
        k -= 1
    return k


def compute_ell(n: int) -> int:
    """ceil(sqrt(2n + 0.25) - 0.5): smallest ell with ell(ell+1)/2 >= n."""
    if n < 1:
        raise ValueError("chain count must be at least 1")
    ell = (math.isqrt(8 * n + 1) - 1) // 2
    if ell * (ell + 1) < 2 * n:
        ell += 1
    return max(ell, 1)


@dataclass(frozen=True)
class SystemParams:
    """Epoch-wide public parameters.

    n: chain count (= server count N), f: assumed malicious fraction,
    k: chain length, ell: chains per user, sec_exponent: target lambda,
    seed: public randomness the chain assignment derives from.
    """

    n: int
    server_count: int
    f: Fraction
    k: int
    ell: int
    sec_exponent: int
    seed: bytes

    @classmethod
    def derive(
        cls, n: int, f, sec_exponent: int, seed: bytes, server_count: int | None = None
    ) -> "SystemParams":
        frac = _as_fraction(f)
        return cls(
            n=n,
            server_count=n if server_count is None else server_count,
            f=frac,
            k=compute_chain_length(frac, n, sec_exponent),
            ell=compute_ell(n),
            sec_exponent=sec_exponent,
            seed=seed,
        )

    def to_config_dict(self) -> dict:
        return {
            "n": self.n,
            "N": self.server_count,
            "f": str(self.f),
            "k": self.k,
            "ell": self.ell,
            "sec_exponent": self.sec_exponent,
            "seed-hex": self.seed.hex(),
        }

    @classmethod
    def from_config_dict(cls, d: dict) -> "SystemParams":
        return cls(
            n=int(d["n"]),
            server_count=int(d["N"]),
            f=_as_fraction(d["f"]),
            k=int(d["k"]),
            ell=int(d["ell"]),
            sec_exponent=int(d["sec_exponent"]),
            seed=bytes.fromhex(d["seed-hex"]),
        )

    def dump(self, stream) -> None:
        yaml.safe_dump(self.to_config_dict(), stream, sort_keys=False)

    @classmethod
    def load(cls, stream) -> "SystemParams":
        return cls.from_config_dict(yaml.safe_load(stream))


@dataclass(frozen=True)
class ChainConfig:
    """One chain: its 1-based id and its k server ids in hop order."""

    chain_id: int
    servers: tuple[str, ...]


def form_chains(randomness: bytes, servers: list[str], params: SystemParams):
    """Sample n chains of k servers each from a PRG seeded with `randomness`.

    Sampling is uniform per slot (a server may fill several slots).  A
    server appearing in several chains has its positions staggered
    round-robin so it is not always at the same hop.
    """
    if not servers:
        raise ValueError("server list must not be empty")
    prg = Drbg(randomness).child("chain-sampling")
    count = len(servers)
    sampled = [
        [servers[prg.randbelow(count)] for _ in range(params.k)]
        for _ in range(params.n)
    ]

    memberships: dict[str, int] = {}
    chains = []
    for chain_index, picks in enumerate(sampled):
        placed: list[str | None] = [None] * params.k
        for server in picks:
            target = memberships.get(server, 0) % params.k
            memberships[server] = memberships.get(server, 0) + 1
            while placed[target] is not None:
                target = (target + 1) % params.k
            placed[target] = server
        chains.append(ChainConfig(chain_id=chain_index + 1, servers=tuple(placed)))
    return chains


def export_chains_csv(chains, stream) -> None:
    writer = csv.writer(stream)
    writer.writerow(["chain_id", "position", "server_id"])
    for chain in chains:
        for position, server in enumerate(chain.servers, start=1):
            writer.writerow([chain.chain_id, position, server])


@dataclass(frozen=True)
class GroupChainSets:
    """The ell+1 ordered chain sets C_1..C_{ell+1}.

    `raw` keeps the recurrence output after index wrapping (duplicates
    possible when the triangular number exceeds n); `dedup` is the
    order-preserving deduplicated view users actually send to.
    """

    ell: int
    n: int
    raw: tuple[tuple[int, ...], ...]
    dedup: tuple[tuple[int, ...], ...]

    def raw_for(self, group: int) -> tuple[int, ...]:
        self._check(group)
        return self.raw[group - 1]

    def dedup_for(self, group: int) -> tuple[int, ...]:
        self._check(group)
        return self.dedup[group - 1]

    def _check(self, group: int) -> None:
        if not 1 <= group <= self.ell + 1:
            raise ValueError(f"group index {group} outside [1, {self.ell + 1}]")


def build_group_sets(ell: int, n: int) -> GroupChainSets:
    """Evaluate the chain-set recurrence for all ell+1 groups.

    C_1 = (1..ell); C_{i+1} = (C_1[i], ..., C_i[i], C_i[ell]+1, ...,
    C_i[ell]+(ell-i)).  The recurrence runs in unwrapped index space;
    indices then wrap modulo n.  Every pair of groups shares a chain:
    groups i < j meet at C_i[j], and wrapping preserves equality.
    """
    if ell < 1 or n < 1:
        raise ValueError("ell and n must be at least 1")
    unwrapped: list[list[int]] = [list(range(1, ell + 1))]
    for i in range(1, ell + 1):
        prev = unwrapped[i - 1]
        nxt = [unwrapped[x][i - 1] for x in range(i)]
        nxt += [prev[ell - 1] + d for d in range(1, ell - i + 1)]
        unwrapped.append(nxt)

    raw = tuple(
        tuple((idx - 1) % n + 1 for idx in group_set) for group_set in unwrapped
    )
    dedup = tuple(tuple(dict.fromkeys(group_set)) for group_set in raw)
    return GroupChainSets(ell=ell, n=n, raw=raw, dedup=dedup)


def chains_for_group(group: int, ell: int, n: int) -> tuple[int, ...]:
    """Ordered (wrapped) chain list for one group, 1-based index."""
    return build_group_sets(ell, n).raw_for(group)


def assign_group(user_pk: GroupElement, ell: int) -> int:
    """Hash a public key into one of the ell+1 groups (1-based)."""
    digest = hashlib.sha256(user_pk.encode()).digest()
    return int.from_bytes(digest, "big") % (ell + 1) + 1


def intersect_chain(group_a: int, group_b: int, ell: int, n: int) -> int:
    """Smallest-index chain shared by two groups' deduplicated sets."""
    sets = build_group_sets(ell, n)
    a = set(sets.dedup_for(group_a))
    b = set(sets.dedup_for(group_b))
    common = a & b
    if not common:
        raise RuntimeError(
            f"groups {group_a} and {group_b} share no chain (ell={ell}, n={n}); "
            "the selection recurrence guarantees this cannot happen"
        )
    return min(common)
