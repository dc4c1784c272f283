"""Per-user mailboxes keyed by public key, trusted for availability only.

A deployment would authenticate fetches; the simulator does not, since
the threat model never relies on mailbox servers for privacy -- every
stored body is end-to-end encrypted and uniform in size.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .crypto import GroupElement


class MailboxClosed(Exception):
    pass


@dataclass
class MailboxStore:
    """Current-round message store: dest_pk -> [(eph_pub, body)].

    Mailboxes auto-create on first put.  Duplicates are kept; reader
    deduplication is the client's concern.  end_round clears everything
    and reports per-mailbox counts.
    """

    round_number: int = 0
    open: bool = True
    boxes: dict = field(default_factory=dict)

    def open_round(self, round_number: int) -> None:
        self.round_number = round_number
        self.open = True
        self.boxes = {}

    def put(self, dest_pk: GroupElement, eph_pub: GroupElement, body: bytes) -> None:
        if not self.open:
            raise MailboxClosed(f"round {self.round_number} is closed")
        self.boxes.setdefault(dest_pk.encode(), []).append((eph_pub, body))

    def get(self, pk: GroupElement) -> list:
        return list(self.boxes.get(pk.encode(), []))

    def end_round(self) -> dict:
        self.open = False
        return {pk: len(msgs) for pk, msgs in self.boxes.items()}

    def dump_round(self, stream) -> None:
        """Persist the round: records of dest_pk(32) | 4B LE len | body."""
        for pk, msgs in sorted(self.boxes.items()):
            for eph, body in msgs:
                record = eph.encode() + body
                stream.write(pk + len(record).to_bytes(4, "little") + record)

    @classmethod
    def load_round(cls, stream, round_number: int = 0) -> "MailboxStore":
        store = cls(round_number=round_number)
        while True:
            head = stream.read(36)
            if not head:
                break
            if len(head) != 36:
                raise ValueError("truncated mailbox record")
            pk, length = head[:32], int.from_bytes(head[32:], "little")
            record = stream.read(length)
            if len(record) != length:
                raise ValueError("truncated mailbox record body")
            store.boxes.setdefault(pk, []).append(
                (GroupElement.decode(record[:32]), record[32:])
            )
        return store


def shard_for(dest_pk: GroupElement, shard_count: int) -> int:
    """Stable mailbox-server shard assignment by hash of the address."""
    digest = hashlib.sha256(b"mixmesh.shard" + dest_pk.encode()).digest()
    return int.from_bytes(digest, "big") % shard_count
