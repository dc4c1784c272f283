import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixmesh.crypto import (
    GENERATOR,
    IDENTITY,
    P,
    Q,
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
    kdf,
    keygen,
    prove_dleq,
    prove_dlog,
    scalar_sum,
    verify_dleq,
    verify_dlog,
)

scalars = st.integers(min_value=1, max_value=Q - 1)


def slow_pow(base: int, exp: int, mod: int) -> int:
    """Reference square-and-multiply, independent of the production path."""
    result = 1
    acc = base % mod
    while exp:
        if exp & 1:
            result = result * acc % mod
        acc = acc * acc % mod
        exp >>= 1
    return result


class TestGroup:
    def test_exponent_one(self):
        assert GENERATOR.pow(Scalar(1)) == GENERATOR

    def test_pow_matches_double_and_add_oracle(self):
        rng = Drbg(b"pow-oracle")
        for _ in range(25):
            sk = rng.scalar_nonzero()
            assert GENERATOR.pow(sk).value == slow_pow(GENERATOR.value, sk.value, P)

    def test_keygen_deterministic_under_seed(self):
        a = keygen(Drbg(b"seed-x"))
        b = keygen(Drbg(b"seed-x"))
        assert a == b
        assert a != keygen(Drbg(b"seed-y"))

    def test_keygen_rejects_identity_base(self):
        with pytest.raises(ValueError):
            keygen(Drbg(b"k"), base=IDENTITY)

    def test_keygen_nonzero_secret(self):
        for i in range(50):
            sk, pub = keygen(Drbg(f"kgn{i}".encode()))
            assert sk.value != 0
            assert not pub.is_identity

    @settings(max_examples=50)
    @given(a=scalars, b=scalars)
    def test_dh_commutes(self, a, b):
        pa = GENERATOR.pow(Scalar(a))
        pb = GENERATOR.pow(Scalar(b))
        assert dh(pa, Scalar(b)) == dh(pb, Scalar(a))

    def test_dh_commutes_bulk(self):
        # invariant exercised over >= 1000 random trials
        rng = Drbg(b"dh-bulk")
        for _ in range(1000):
            a, b = rng.scalar_nonzero(), rng.scalar_nonzero()
            assert dh(GENERATOR.pow(a), b) == dh(GENERATOR.pow(b), a)

    def test_dh_generator_case(self):
        s = Scalar(123456789)
        assert dh(GENERATOR, s) == GENERATOR.pow(s)

    def test_dh_rejects_identity(self):
        with pytest.raises(ValueError):
            dh(IDENTITY, Scalar(5))

    def test_chained_key_exchange_identity(self):
        # a blinded ephemeral key meeting a chained mixing key performs the
        # same DH the sender did: dh(mpk_i, x) == dh(X_i, msk_i) where
        # X_i = g^(x * prod(bsk_a, a<i)) and mpk_i = bpk_(i-1)^msk_i
        rng = Drbg(b"chained")
        x = rng.scalar_nonzero()
        bsk_1, bsk_2 = rng.scalar_nonzero(), rng.scalar_nonzero()
        msk_3 = rng.scalar_nonzero()
        bpk_2 = GENERATOR.pow(bsk_1).pow(bsk_2)
        mpk_3 = bpk_2.pow(msk_3)
        x_3 = GENERATOR.pow(x).pow(bsk_1).pow(bsk_2)
        assert dh(mpk_3, x) == dh(x_3, msk_3)

    def test_element_product_and_scalar_sum(self):
        rng = Drbg(b"sum")
        sks = [rng.scalar_nonzero() for _ in range(5)]
        pubs = [GENERATOR.pow(s) for s in sks]
        assert element_product(pubs) == GENERATOR.pow(scalar_sum(sks))


class TestEncoding:
    def test_roundtrip_random_elements(self):
        rng = Drbg(b"enc")
        for _ in range(1000):
            e = GENERATOR.pow(rng.scalar_nonzero())
            assert GroupElement.decode(e.encode()) == e

    def test_decode_rejects_at_expected_rate(self):
        # valid encodings are the quadratic residues in [1, p-1]:
        # acceptance rate for uniform 32-byte strings is Q / 2^256
        rng = Drbg(b"reject")
        accepted = 0
        trials = 1000
        for _ in range(trials):
            try:
                GroupElement.decode(rng.bytes(32))
                accepted += 1
            except ValueError:
                pass
        expected = Q / 2**256
        sigma = (expected * (1 - expected) / trials) ** 0.5
        assert abs(accepted / trials - expected) <= 3 * sigma

    def test_decode_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GroupElement.decode(b"\x00" * 32)
        with pytest.raises(ValueError):
            GroupElement.decode(P.to_bytes(32, "little"))
        with pytest.raises(ValueError):
            GroupElement.decode(b"\x01" * 16)

    def test_decode_rejects_non_residue(self):
        # g generates the residues; g^s * nonresidue is never a residue
        non_residue = None
        for candidate in range(2, 100):
            if pow(candidate, Q, P) != 1:
                non_residue = candidate
                break
        assert non_residue is not None
        bad = GENERATOR.value * non_residue % P
        with pytest.raises(ValueError):
            GroupElement.decode(bad.to_bytes(32, "little"))

    def test_scalar_roundtrip_and_reduction(self):
        s = Scalar(Q - 2)
        assert Scalar.decode(s.encode()) == s
        with pytest.raises(ValueError):
            Scalar.decode(Q.to_bytes(32, "little"))
        with pytest.raises(ValueError):
            Scalar.decode(b"\x00" * 16)


class TestAead:
    def test_roundtrip(self):
        key = derive_key(GENERATOR)
        c = aenc(key, 7, b"hello world")
        assert adec(key, 7, c) == (True, b"hello world")

    def test_wrong_key_fails(self):
        key = derive_key(GENERATOR)
        other = derive_key(GENERATOR.pow(Scalar(2)))
        c = aenc(key, 7, b"hello")
        assert adec(other, 7, c) == (False, None)

    def test_nonce_binding(self):
        key = derive_key(GENERATOR)
        c = aenc(key, 7, b"hello")
        assert adec(key, 8, c) == (False, None)

    def test_every_flipped_byte_is_rejected(self):
        key = derive_key(GENERATOR.pow(Scalar(3)))
        c = aenc(key, 1, b"12345678")
        for i in range(len(c)):
            corrupted = bytearray(c)
            corrupted[i] ^= 0x01
            assert adec(key, 1, bytes(corrupted)) == (False, None)

    def test_ciphertext_length_is_plaintext_plus_constant(self):
        key = derive_key(GENERATOR)
        for n in (0, 1, 13, 256, 1000):
            assert len(aenc(key, 1, b"x" * n)) == n + 32

    def test_truncated_ciphertext(self):
        key = derive_key(GENERATOR)
        assert adec(key, 1, b"short") == (False, None)


class TestKdf:
    def test_deterministic(self):
        a = GENERATOR.pow(Scalar(5))
        b = GENERATOR.pow(Scalar(9))
        assert kdf(a, b) == kdf(a, b)

    def test_context_separation(self):
        shared = GENERATOR.pow(Scalar(5))
        pk_a = GENERATOR.pow(Scalar(11))
        pk_b = GENERATOR.pow(Scalar(13))
        assert kdf(shared, pk_a) != kdf(shared, pk_b)

    def test_output_length(self):
        assert len(kdf(GENERATOR, GENERATOR)) == 32
        assert len(derive_key(GENERATOR)) == 32


class TestDlogProof:
    def test_completeness(self):
        rng = Drbg(b"dlog")
        sk, pub = keygen(rng)
        proof = prove_dlog(GENERATOR, pub, sk, b"tag-a")
        assert verify_dlog(GENERATOR, pub, proof, b"tag-a")

    def test_wrong_statement(self):
        rng = Drbg(b"dlog2")
        sk, pub = keygen(rng)
        proof = prove_dlog(GENERATOR, pub, sk, b"tag-a")
        shifted = pub * GENERATOR
        assert not verify_dlog(GENERATOR, shifted, proof, b"tag-a")

    def test_wrong_tag(self):
        rng = Drbg(b"dlog3")
        sk, pub = keygen(rng)
        proof = prove_dlog(GENERATOR, pub, sk, b"tag-a")
        assert not verify_dlog(GENERATOR, pub, proof, b"tag-b")

    def test_perturbed_statements_never_verify(self):
        rng = Drbg(b"dlog4")
        sk, pub = keygen(rng)
        proof = prove_dlog(GENERATOR, pub, sk, b"tag-a")
        for _ in range(100):
            fake = GENERATOR.pow(rng.scalar_nonzero())
            if fake == pub:
                continue
            assert not verify_dlog(GENERATOR, fake, proof, b"tag-a")

    def test_encoding_roundtrip(self):
        rng = Drbg(b"dlog5")
        sk, pub = keygen(rng)
        proof = prove_dlog(GENERATOR, pub, sk, b"tag-a")
        data = proof.encode()
        assert len(data) == 64
        assert DlogProof.decode(data) == proof


class TestDleqProof:
    def test_completeness(self):
        rng = Drbg(b"dleq")
        s = rng.scalar_nonzero()
        h = GENERATOR.pow(rng.scalar_nonzero())
        proof = prove_dleq(GENERATOR, GENERATOR.pow(s), h, h.pow(s), s, b"t")
        assert verify_dleq(GENERATOR, GENERATOR.pow(s), h, h.pow(s), proof, b"t")

    def test_unequal_exponents(self):
        rng = Drbg(b"dleq2")
        s, t = rng.scalar_nonzero(), rng.scalar_nonzero()
        h = GENERATOR.pow(rng.scalar_nonzero())
        proof = prove_dleq(GENERATOR, GENERATOR.pow(s), h, h.pow(s), s, b"t")
        assert not verify_dleq(GENERATOR, GENERATOR.pow(s), h, h.pow(t), proof, b"t")

    def test_aggregate_relation_after_honest_blind_step(self):
        # exactly the statement one mix hop proves: the product of the
        # blinded keys equals the product of the inputs raised to bsk
        rng = Drbg(b"dleq3")
        bsk = rng.scalar_nonzero()
        bpk_prev = GENERATOR.pow(rng.scalar_nonzero())
        bpk = bpk_prev.pow(bsk)
        xs = [GENERATOR.pow(rng.scalar_nonzero()) for _ in range(8)]
        blinded = [x.pow(bsk) for x in xs]
        proof = prove_dleq(
            element_product(xs), element_product(blinded), bpk_prev, bpk, bsk,
            TAG_MIX_BLIND,
        )
        assert verify_dleq(
            element_product(xs), element_product(blinded), bpk_prev, bpk, proof,
            TAG_MIX_BLIND,
        )

    def test_perturbed_statements_never_verify(self):
        rng = Drbg(b"dleq4")
        s = rng.scalar_nonzero()
        h = GENERATOR.pow(rng.scalar_nonzero())
        pub_a, pub_b = GENERATOR.pow(s), h.pow(s)
        proof = prove_dleq(GENERATOR, pub_a, h, pub_b, s, b"t")
        for _ in range(100):
            fake = h.pow(rng.scalar_nonzero())
            if fake == pub_b:
                continue
            assert not verify_dleq(GENERATOR, pub_a, h, fake, proof, b"t")

    def test_encoding_roundtrip(self):
        rng = Drbg(b"dleq5")
        s = rng.scalar_nonzero()
        h = GENERATOR.pow(rng.scalar_nonzero())
        proof = prove_dleq(GENERATOR, GENERATOR.pow(s), h, h.pow(s), s, b"t")
        data = proof.encode()
        assert len(data) == 96
        assert DleqProof.decode(data) == proof


class TestDrbg:
    def test_deterministic_and_label_separated(self):
        assert Drbg(b"s").bytes(64) == Drbg(b"s").bytes(64)
        assert Drbg(b"s").bytes(64) != Drbg(b"t").bytes(64)
        root = Drbg(b"s")
        assert root.child("a").bytes(16) != root.child("b").bytes(16)

    def test_randbelow_range(self):
        rng = Drbg(b"rb")
        for bound in (1, 2, 7, 255, 256, 10**9):
            for _ in range(20):
                assert 0 <= rng.randbelow(bound) < bound

    def test_shuffle_is_permutation(self):
        rng = Drbg(b"sh")
        items = list(range(100))
        shuffled = list(items)
        rng.shuffle(shuffled)
        assert sorted(shuffled) == items
        assert shuffled != items


@settings(max_examples=30)
@given(a=scalars, b=scalars)
def test_scalar_arithmetic_mod_order(a, b):
    assert (Scalar(a) + Scalar(b)).value == (a + b) % Q
    assert (Scalar(a) * Scalar(b)).value == (a * b) % Q
    assert (Scalar(a) - Scalar(b)).value == (a - b) % Q
