"""mixmesh: parallel mix-net chains with verifiable blind-and-shuffle mixing.

Modules:
  crypto    -- group arithmetic, AEAD, KDF, Schnorr and Chaum-Pedersen NIZKs
  topology  -- chain formation and the intersecting chain-selection scheme
  client    -- per-round message construction and mailbox decryption
  mixserver -- per-chain server state machine, hop proofs, blame protocol
  mailbox   -- availability-trusted per-user inboxes
  harness   -- deterministic round simulator, adversaries, availability model
  cli       -- command-line entry point
"""

__version__ = "0.1.0"
