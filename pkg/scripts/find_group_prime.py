#!/usr/bin/env python3
"""Regenerate the group modulus used by mixmesh.crypto.

Searches downward from 2^256 for the largest safe prime p (p and
(p-1)/2 both prime).  The quadratic residues mod p then form a group of
prime order q = (p-1)/2 with 32-byte canonical encodings; 4 = 2^2 is a
residue and generates it.
"""

import sympy


def find_safe_prime(bits: int = 256) -> int:
    p = (1 << bits) - 1
    while True:
        # p = 2q+1 with q odd prime forces p ≡ 3 (mod 4)
        if p % 4 == 3 and sympy.isprime((p - 1) // 2) and sympy.isprime(p):
            return p
        p -= 2


if __name__ == "__main__":
    p = find_safe_prime()
    q = (p - 1) // 2
    print(f"P = (1 << 256) - {(1 << 256) - p}")
    print(f"p = {p:#x}")
    print(f"q = {q:#x}")
    print(f"4 generates the order-q subgroup: {pow(4, q, p) == 1}")
