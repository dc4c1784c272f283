import io
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixmesh.crypto import GENERATOR, Drbg, Scalar
from mixmesh.topology import (
    ChainConfig,
    SystemParams,
    assign_group,
    build_group_sets,
    chains_for_group,
    compute_chain_length,
    compute_ell,
    export_chains_csv,
    form_chains,
    intersect_chain,
)


def ell_oracle(n: int) -> int:
    """Hand enumeration: smallest ell whose triangular number reaches n."""
    ell = 1
    while ell * (ell + 1) // 2 < n:
        ell += 1
    return ell


class TestChainLength:
    def test_reference_point_and_documented_delta(self):
        # published reference: k=32 for f=0.2, lambda=64, n<6000; the exact
        # strict bound gives 33 over part of that range (delta of one)
        exact = compute_chain_length(Fraction(1, 5), 6000, 64)
        assert exact == 33
        assert exact - 32 == 1
        # the quoted constant is exact for small enough n
        assert compute_chain_length(Fraction(1, 5), 1261, 64) == 32
        assert compute_chain_length(Fraction(1, 5), 1262, 64) == 33

    def test_strict_boundary_tiny_f(self):
        # n=1, f=2^-64: f^1 equals 2^-64 exactly, which is not strictly
        # below the bound, so the exact comparison lands on k=2
        assert compute_chain_length(Fraction(1, 2**64), 1, 64) == 2

    def test_strict_boundary_half(self):
        # 0.5^64 == 2^-64 exactly; strictness forces k=65
        assert compute_chain_length(Fraction(1, 2), 1, 64) == 65

    def test_zero_fraction(self):
        assert compute_chain_length(0, 100, 64) == 1

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            compute_chain_length(1, 10, 64)
        with pytest.raises(ValueError):
            compute_chain_length(Fraction(3, 2), 10, 64)
        with pytest.raises(ValueError):
            compute_chain_length(-0.1, 10, 64)

    def test_decimal_strings_are_exact(self):
        assert compute_chain_length("0.2", 6000, 64) == 33
        assert compute_chain_length(0.2, 6000, 64) == 33  # shortest-repr float

    def test_result_is_smallest(self):
        for f, n, lam in [(Fraction(1, 5), 100, 64), (Fraction(1, 3), 17, 40),
                          (Fraction(9, 10), 2, 20)]:
            k = compute_chain_length(f, n, lam)
            bound = Fraction(1, 2**lam)
            assert n * f**k < bound
            if k > 1:
                assert n * f ** (k - 1) >= bound

    @settings(max_examples=40)
    @given(
        f=st.fractions(min_value=Fraction(1, 100), max_value=Fraction(9, 10)),
        n=st.integers(min_value=1, max_value=10000),
        lam=st.integers(min_value=8, max_value=128),
    )
    def test_monotone_in_all_arguments(self, f, n, lam):
        k = compute_chain_length(f, n, lam)
        assert compute_chain_length(f, n + 100, lam) >= k
        assert compute_chain_length(f, n, lam + 8) >= k
        bigger_f = f + (1 - f) / 2
        assert compute_chain_length(bigger_f, n, lam) >= k


class TestEll:
    def test_known_values(self):
        assert compute_ell(1) == 1
        assert compute_ell(6) == 3
        assert compute_ell(100) == 14

    def test_matches_oracle_small(self):
        for n in range(1, 501):
            assert compute_ell(n) == ell_oracle(n)

    @settings(max_examples=60)
    @given(n=st.integers(min_value=1, max_value=10**9))
    def test_matches_float_formula(self, n):
        assert compute_ell(n) == math.ceil(math.sqrt(2 * n + 0.25) - 0.5)


class TestGroupSets:
    def test_recurrence_example(self):
        sets = build_group_sets(3, 6)
        assert sets.raw == ((1, 2, 3), (1, 4, 5), (2, 4, 6), (3, 5, 6))
        assert sets.dedup == sets.raw  # triangular n: no wrapping

    def test_first_set_is_prefix(self):
        for n in (1, 2, 5, 17, 100):
            ell = compute_ell(n)
            sets = build_group_sets(ell, n)
            assert sets.raw_for(1) == tuple(
                (i - 1) % n + 1 for i in range(1, ell + 1)
            )

    def test_single_chain(self):
        sets = build_group_sets(1, 1)
        assert sets.raw == ((1,), (1,))

    def test_wrapping_dedup(self):
        # ell=2 over n=2: the recurrence's index 3 wraps to 1
        sets = build_group_sets(2, 2)
        assert sets.raw == ((1, 2), (1, 1), (2, 1))
        assert sets.dedup == ((1, 2), (1,), (2, 1))

    def test_group_index_bounds(self):
        sets = build_group_sets(3, 6)
        with pytest.raises(ValueError):
            sets.raw_for(0)
        with pytest.raises(ValueError):
            sets.raw_for(5)
        assert chains_for_group(4, 3, 6) == (3, 5, 6)

    def test_all_pairs_intersect_up_to_500(self):
        # enumeration oracle over every network size and group pair
        for n in range(1, 501):
            ell = compute_ell(n)
            sets = build_group_sets(ell, n)
            dedup = [set(s) for s in sets.dedup]
            for i in range(len(dedup)):
                for j in range(i, len(dedup)):
                    assert dedup[i] & dedup[j], (n, i + 1, j + 1)

    def test_triangular_load_is_exactly_double_covered(self):
        ell = 1
        while ell * (ell + 1) // 2 <= 500:
            n = ell * (ell + 1) // 2
            sets = build_group_sets(ell, n)
            coverage = {c: 0 for c in range(1, n + 1)}
            for group_set in sets.dedup:
                for c in set(group_set):
                    coverage[c] += 1
            assert all(v == 2 for v in coverage.values()), (ell, n)
            ell += 1

    def test_intersect_chain_examples(self):
        assert intersect_chain(2, 3, 3, 6) == 4
        assert intersect_chain(1, 1, 3, 6) == 1
        assert intersect_chain(1, 2, 1, 1) == 1


class TestAssignGroup:
    def test_deterministic(self):
        pk = GENERATOR.pow(Scalar(42))
        assert assign_group(pk, 3) == assign_group(pk, 3)

    def test_range_ell_one(self):
        rng = Drbg(b"groups")
        seen = set()
        for _ in range(50):
            pk = GENERATOR.pow(rng.scalar_nonzero())
            g = assign_group(pk, 1)
            assert g in (1, 2)
            seen.add(g)
        assert seen == {1, 2}

    def test_distribution_uniform(self):
        ell = 3
        trials = 10000
        rng = Drbg(b"dist")
        counts = {g: 0 for g in range(1, ell + 2)}
        for _ in range(trials):
            counts[assign_group(GENERATOR.pow(rng.scalar_nonzero()), ell)] += 1
        expected = 1 / (ell + 1)
        sigma = (expected * (1 - expected) / trials) ** 0.5
        for g, count in counts.items():
            assert abs(count / trials - expected) <= 3 * sigma, (g, count)


def _params(n, k, count=None, seed=b"chains"):
    return SystemParams(
        n=n, server_count=count if count is not None else n,
        f=Fraction(1, 5), k=k, ell=compute_ell(n), sec_exponent=64, seed=seed,
    )


class TestFormChains:
    def test_deterministic(self):
        servers = [f"s{i}" for i in range(10)]
        params = _params(20, 4, 10)
        assert form_chains(b"r", servers, params) == form_chains(b"r", servers, params)
        assert form_chains(b"r", servers, params) != form_chains(b"q", servers, params)

    def test_shape(self):
        servers = [f"s{i}" for i in range(10)]
        chains = form_chains(b"r", servers, _params(20, 4, 10))
        assert len(chains) == 20
        assert all(len(c.servers) == 4 for c in chains)
        assert [c.chain_id for c in chains] == list(range(1, 21))
        assert all(s in servers for c in chains for s in c.servers)

    def test_single_server_fills_every_slot(self):
        chains = form_chains(b"r", ["solo"], _params(1, 3, 1))
        assert chains == [ChainConfig(chain_id=1, servers=("solo", "solo", "solo"))]

    def test_empty_server_list(self):
        with pytest.raises(ValueError):
            form_chains(b"r", [], _params(1, 3, 1))

    def test_staggering_spreads_positions(self):
        servers = [f"s{i}" for i in range(5)]
        chains = form_chains(b"stagger", servers, _params(40, 4, 5))
        positions = {}
        for chain in chains:
            for pos, server in enumerate(chain.servers):
                positions.setdefault(server, set()).add(pos)
        # every server appears ~32 times; round-robin placement must use
        # every position at least once
        for server, spots in positions.items():
            assert spots == {0, 1, 2, 3}, (server, spots)

    def test_all_malicious_rate_matches_union_bound_term(self):
        # Monte-Carlo: fraction of all-malicious chains approaches f^k
        server_count, k, marked = 10, 3, 3
        chains = form_chains(
            b"mc", [f"s{i}" for i in range(server_count)],
            _params(10000, k, server_count),
        )
        bad = {f"s{i}" for i in range(marked)}
        all_bad = sum(1 for c in chains if all(s in bad for s in c.servers))
        p = (marked / server_count) ** k
        sigma = (p * (1 - p) / len(chains)) ** 0.5
        assert abs(all_bad / len(chains) - p) <= 3 * sigma


class TestParamsSerialization:
    def test_yaml_roundtrip(self):
        params = SystemParams.derive(n=100, f="0.2", sec_exponent=64, seed=b"\x01\x02")
        buf = io.StringIO()
        params.dump(buf)
        buf.seek(0)
        assert SystemParams.load(buf) == params
        assert "seed-hex" in buf.getvalue()

    def test_derive_fills_consistent_fields(self):
        params = SystemParams.derive(n=100, f="0.2", sec_exponent=64, seed=b"")
        assert params.server_count == 100
        assert params.ell == 14
        assert params.k == compute_chain_length(Fraction(1, 5), 100, 64)

    def test_csv_export(self):
        chains = form_chains(b"r", ["a", "b"], _params(2, 2, 2))
        buf = io.StringIO()
        export_chains_csv(chains, buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "chain_id,position,server_id"
        assert len(lines) == 1 + 2 * 2
