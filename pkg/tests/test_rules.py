import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doallsim.errors import FormatError, ParameterError
from doallsim.rng import SplitMix64, key_order_permutation, mix64
from doallsim.rules import (BalanceLoadRule, PermutationPair, PermutationRule,
                            RuleState, balance_rank, balance_select,
                            derive_pair, dump_permutations,
                            load_fixed_permutations, make_random_permutations,
                            pad_permute_compact, pi1_order, pi2_domain)


class TestBalanceRank:
    def test_exact_division(self):
        assert balance_rank(100, 3, 10) == 30

    def test_top_processor_takes_last(self):
        assert balance_rank(7, 10, 10) == 7

    def test_singleton(self):
        for v in (1, 3, 10):
            assert balance_rank(1, v, 10) == 1

    def test_spread_for_two_processors(self):
        tasks = list(range(1, 101))
        assert balance_select(tasks, 1, 2) == 50
        assert balance_select(tasks, 2, 2) == 100

    @given(st.integers(1, 1000), st.integers(1, 64))
    def test_rank_sandwich(self, k, p):
        for v in range(1, p + 1):
            r = balance_rank(k, v, p)
            assert 1 <= r <= k
            assert k * v / p - 1 < r < k * v / p + 1

    def test_empty_list_rejected(self):
        with pytest.raises(ParameterError):
            balance_rank(0, 1, 4)


class TestBalanceSelect:
    def test_position_formula(self):
        assert balance_select([10, 20, 30, 40], 2, 4) == 20

    def test_singleton(self):
        assert balance_select([5], 3, 4) == 5


def explicit_pair(pi1, pi2):
    return PermutationPair(pi1=np.asarray(pi1, dtype=np.int64),
                           domain=len(pi2),
                           pi2_images=np.asarray(pi2, dtype=np.int64))


class TestPadPermuteCompact:
    def test_hand_built_order(self):
        # positions drawn in the order 3,1,4,2 among the real entries; the
        # remaining images are dummies and disappear
        pi2 = [3, 5, 1, 6, 4, 2]
        pair = explicit_pair([1, 2], pi2)
        assert pad_permute_compact([1, 2, 3, 4], pair) == [3, 1, 4, 2]

    def test_identity(self):
        pair = explicit_pair([1, 2], list(range(1, 7)))
        assert pad_permute_compact([4, 7, 9], pair) == [4, 7, 9]

    def test_preserves_multiset(self):
        pair = PermutationPair(pi1=np.arange(1, 3), domain=64, pi2_seed=123)
        items = [3, 1, 4, 1 + 10, 5, 9]
        out = pad_permute_compact(items, pair)
        assert sorted(out) == sorted(items)

    def test_matches_key_order_permutation(self):
        # the key representation is the argsort-of-keys permutation
        seed, d = 77, 12
        pair = PermutationPair(pi1=np.arange(1, 3), domain=d, pi2_seed=seed)
        images = key_order_permutation(seed, d)
        explicit = PermutationPair(pi1=np.arange(1, 3), domain=d,
                                   pi2_images=images)
        items = list(range(1, d + 1))
        assert pad_permute_compact(items, pair) == \
            pad_permute_compact(items, explicit)

    def test_oversized_list_rejected(self):
        pair = explicit_pair([1], [2, 1])
        with pytest.raises(ParameterError):
            pad_permute_compact([1, 2, 3], pair)


class TestPi1Order:
    def test_head(self):
        pair = explicit_pair([2, 3, 1], [1])
        assert pi1_order([1, 2, 3], pair)[0] == 2

    def test_singleton(self):
        pair = explicit_pair([2, 3, 1], [1])
        assert pi1_order([3], pair) == [3]

    def test_successive_heads(self):
        pair = explicit_pair([2, 3, 1], [1])
        order = pi1_order([1, 2, 3], pair)
        assert order == [2, 3, 1]
        assert pi1_order([1, 3], pair) == [3, 1]


class TestPermutationRule:
    def test_trigger_and_heads(self):
        p, t = 2, 4
        pi2 = [3, 5, 1, 6, 4, 2]
        pairs = [explicit_pair([1, 2], pi2), explicit_pair([2, 1], pi2)]
        pairs = [PermutationPair(pi1=pr.pi1, domain=6, pi2_images=pr.pi2_images)
                 for pr in pairs]
        rule = PermutationRule(p, t, pairs, "test")
        state = RuleState()
        tasks = [1, 2, 3, 4]
        picked = []
        while tasks:
            sel = rule.select_task(1, tasks, state)
            picked.append(sel)
            tasks.remove(sel)
        assert picked == [3, 1, 4, 2]

    def test_never_returns_absent_task(self):
        pairs = [PermutationPair(pi1=np.arange(1, 4), domain=pi2_domain(3),
                                 pi2_seed=5) for _ in range(3)]
        rule = PermutationRule(3, 30, pairs, "test")
        state = RuleState()
        tasks = list(range(1, 31))
        sel = rule.select_task(2, tasks, state)
        assert sel in tasks
        tasks = [x for x in tasks if x % 3]  # removals by merges elsewhere
        sel2 = rule.select_task(2, tasks, state)
        assert sel2 in tasks


class TestMakeRandomPermutations:
    def test_reproducible(self):
        a = make_random_permutations(42, 5, 10)
        b = make_random_permutations(42, 5, 10)
        for x, y in zip(a, b):
            assert np.array_equal(x.pi1, y.pi1)
            assert x.pi2_seed == y.pi2_seed

    def test_distinct_processors_differ(self):
        pairs = make_random_permutations(42, 5, 10)
        assert len({p.pi2_seed for p in pairs}) == 5

    def test_head_uniformity(self):
        # over many draws, each value heads pi1 with frequency ~ 1/4
        n, p = 100_000, 4
        counts = np.zeros(p + 1, dtype=np.int64)
        for s in range(n):
            pair = derive_pair(s, 1, p, 4)
            counts[pair.pi1[0]] += 1
        mean = n / p
        sigma = (n * (1 / p) * (1 - 1 / p)) ** 0.5
        assert np.all(np.abs(counts[1:] - mean) < 4 * sigma)


class TestPermutationTables:
    def test_round_trip(self, tmp_path):
        pairs = make_random_permutations(7, 4, 9)
        path = str(tmp_path / "perms.txt")
        dump_permutations(path, pairs)
        back = load_fixed_permutations(path, 4, 9)
        for x, y in zip(pairs, back):
            assert np.array_equal(x.pi1, y.pi1)
            assert x.pi2_seed == y.pi2_seed

    def test_explicit_images_round_trip(self, tmp_path):
        d = pi2_domain(2)
        images = key_order_permutation(3, d)
        pairs = [PermutationPair(pi1=np.array([2, 1]), domain=d,
                                 pi2_images=images),
                 PermutationPair(pi1=np.array([1, 2]), domain=d,
                                 pi2_images=images)]
        path = str(tmp_path / "perms.txt")
        dump_permutations(path, pairs)
        back = load_fixed_permutations(path, 2, 4)
        assert np.array_equal(back[0].pi2_images, images)

    def test_missing_processor(self, tmp_path):
        path = tmp_path / "perms.txt"
        path.write_text("1 | 1 2 | seed:5\n")
        with pytest.raises(FormatError):
            load_fixed_permutations(str(path), 2, 4)

    def test_duplicate_line_number_reported(self, tmp_path):
        path = tmp_path / "perms.txt"
        path.write_text("1 | 1 2 | seed:5\n1 | 2 1 | seed:6\n")
        with pytest.raises(FormatError) as err:
            load_fixed_permutations(str(path), 2, 4)
        assert err.value.line == 2

    def test_non_bijection_rejected(self, tmp_path):
        path = tmp_path / "perms.txt"
        path.write_text("1 | 1 1 | seed:5\n2 | 2 1 | seed:6\n")
        with pytest.raises(FormatError):
            load_fixed_permutations(str(path), 2, 4)


class TestRng:
    def test_splitmix_reference_vector(self):
        # SplitMix64 from seed 1234567: first outputs per the published
        # constants
        gen = SplitMix64(1234567)
        first = gen.next_u64()
        assert first == mix64((1234567 + 0x9E3779B97F4A7C15) & ((1 << 64) - 1))

    def test_key_order_is_permutation(self):
        perm = key_order_permutation(9, 100)
        assert sorted(perm.tolist()) == list(range(1, 101))

    def test_shuffle_deterministic(self):
        a, b = list(range(10)), list(range(10))
        SplitMix64(5).shuffle(a)
        SplitMix64(5).shuffle(b)
        assert a == b
