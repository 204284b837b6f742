import math

import numpy as np
import pytest

from doallsim.errors import GraphError, ParameterError, ShapeError
from doallsim.graphs import (ExpanderGraph, build_lps, build_overlay,
                             complete_graph, compact_threshold, flood_horizon,
                             from_adjacency_sets, graph_power, is_connected,
                             legendre, lps_field_prime, load_edge_list,
                             neighborhood, random_regular, save_edge_list,
                             select_power_params, spectral_check,
                             tanner_lower_bound, SpectralReport)

from conftest import cycle_graph, path_graph


def squares_mod(r):
    return {(x * x) % r for x in range(1, r)}


class TestFloodHorizon:
    def test_exact_powers_of_two(self):
        assert flood_horizon(8) == 92          # 30*3 + 2
        assert flood_horizon(64) == 182        # 30*6 + 2

    def test_rounding_up(self):
        # 30*log2(10) = 99.657...
        assert flood_horizon(10) == 102

    def test_threshold_degenerates(self):
        assert compact_threshold(10, 3) == 1
        assert compact_threshold(16, 7) == 2


class TestLpsFieldPrime:
    def test_forced_above_double_sqrt(self):
        # smallest odd prime above 2*sqrt(73) ~ 17.09 is 19, and 73 is a
        # quadratic residue mod 19 (16 = 4^2), giving the PSL node count
        r, n = lps_field_prime(73, 100)
        assert r == 19
        assert (73 % 19) in squares_mod(19)
        assert n == 19 * (19 * 19 - 1) // 2 == 3420

    def test_nonresidue_takes_full_group(self):
        r, n = lps_field_prime(5, 300)
        assert r == 7
        assert squares_mod(7) == {1, 2, 4} and 5 not in squares_mod(7)
        assert n == 7 * 48 == 336

    def test_cap(self):
        with pytest.raises(ParameterError):
            lps_field_prime(5, 10**8)


class TestBuildLps:
    def test_small_graph(self, lps336):
        assert lps336.node_count == 336
        assert lps336.degree_bound == 6
        assert lps336.is_regular()
        assert is_connected(lps336)
        lps336.validate()

    def test_not_prime_rejected(self):
        with pytest.raises(ParameterError):
            build_lps(74, 100)

    def test_wrong_residue_class_rejected(self):
        with pytest.raises(ParameterError):
            build_lps(7, 100)  # 7 = 3 mod 4

    def test_legendre_matches_exhaustive_squares(self):
        for r in (7, 11, 19, 23):
            sq = squares_mod(r)
            for a in range(1, r):
                assert legendre(a, r) == (1 if a in sq else -1)


class TestSelectPowerParams:
    def test_moderate_crash_bound(self):
        pp = select_power_params(3420, 3000)
        assert (pp.r, pp.k, pp.ell) == (1, 2, 5)

    def test_single_survivor(self):
        pp = select_power_params(3420, 3419)
        assert (pp.r, pp.k, pp.ell) == (2, 228, 457)

    def test_light_crash_bound(self):
        pp = select_power_params(100, 1)
        assert (pp.r, pp.k, pp.ell) == (1, 2, 5)

    def test_preconditions(self):
        with pytest.raises(ParameterError):
            select_power_params(10, 0)
        with pytest.raises(ParameterError):
            select_power_params(10, 10)

    def test_minimality_random_pairs(self):
        # both defining inequalities hold and fail when r or k is decremented
        rng = np.random.default_rng(7)
        for _ in range(300):
            p = int(rng.integers(2, 10**6))
            f = int(rng.integers(1, p))
            pp = select_power_params(p, f)
            r, k = pp.r, pp.k

            def lhs_r(rr):
                return 50 * (p - f) * 27**rr > p * 2**rr

            def lhs_k(kk):
                j = kk - r
                return 72 * (p - f) * 27**r * 1013**j > 71 * p * 2**r * 1000**j

            assert lhs_r(r)
            assert r == 1 or not lhs_r(r - 1)
            assert k > r and lhs_k(k)
            assert k - 1 == r or not lhs_k(k - 1)
            assert pp.ell == 2 * k + 1


def bfs_all_pairs(g: ExpanderGraph):
    n = g.node_count
    dist = np.full((n, n), 1 << 30, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for v in frontier:
                for u in g.neighbors(v):
                    if dist[s, u] > d:
                        dist[s, u] = d
                        nxt.append(int(u))
            frontier = nxt
    return dist


class TestGraphPower:
    def test_path_squares_to_triangle(self):
        g = graph_power(path_graph(3), 2)
        assert sorted(map(tuple, np.argwhere(np.triu(g.adjacency_matrix())))) == \
            [(0, 1), (0, 2), (1, 2)]

    def test_identity(self, six_cycle):
        assert graph_power(six_cycle, 1) is six_cycle

    def test_six_cycle_cubes_to_complete(self, six_cycle):
        dist = bfs_all_pairs(six_cycle)
        g3 = graph_power(six_cycle, 3)
        for v in range(6):
            expected = sorted(u for u in range(6)
                              if u != v and dist[v, u] <= 3)
            assert g3.neighbors(v).tolist() == expected
        assert g3.degree_bound == 5

    def test_matches_bfs_oracle(self):
        g = random_regular(24, 3, seed=11)
        dist = bfs_all_pairs(g)
        for ell in (2, 3, 5, 40):
            pw = graph_power(g, ell)
            for v in range(24):
                expected = sorted(u for u in range(24)
                                  if u != v and dist[v, u] <= ell)
                assert pw.neighbors(v).tolist() == expected

    def test_power_composition(self):
        g = random_regular(30, 3, seed=2)
        lhs = graph_power(graph_power(g, 2), 3)
        rhs = graph_power(g, 6)
        assert np.array_equal(lhs.indptr, rhs.indptr)
        assert np.array_equal(lhs.indices, rhs.indices)

    def test_degree_bound_after_power(self):
        g = random_regular(40, 3, seed=4)
        for ell in (2, 3):
            pw = graph_power(g, ell)
            assert pw.degree_bound <= min(3**ell, 39)


class TestSpectral:
    def test_complete_four(self):
        rep = spectral_check(complete_graph(4), 4)
        assert rep.lambda0 == pytest.approx(3.0, abs=1e-9)
        assert rep.lam == pytest.approx(1.0, abs=1e-9)
        assert rep.ramanujan_bound == pytest.approx(2 * math.sqrt(3))
        assert rep.satisfied

    def test_six_cycle(self, six_cycle):
        rep = spectral_check(six_cycle, 2)
        assert rep.bipartite
        assert rep.lam == pytest.approx(1.0, abs=1e-9)
        assert rep.ramanujan_bound == pytest.approx(2.0)
        assert rep.satisfied

    def test_lps336_is_ramanujan(self, lps336):
        rep = spectral_check(lps336, 6)
        assert rep.bipartite  # the non-residue case doubles the group
        assert rep.lam <= 2 * math.sqrt(5) + 1e-6
        assert rep.satisfied

    def test_non_regular_rejected(self):
        with pytest.raises(ShapeError):
            spectral_check(path_graph(3), 2)


class TestTanner:
    def test_complete_four_singleton_tight(self):
        g = complete_graph(4)
        rep = spectral_check(g, 4)
        bound = tanner_lower_bound(g, [0], rep)
        assert bound == pytest.approx(9 * 1 / (1 + 8 * 0.25))
        assert len(neighborhood(g, [0])) == 3 >= bound - 1e-9

    def test_full_subset_reaches_everything(self):
        g = complete_graph(5)
        rep = spectral_check(g, 5)
        bound = tanner_lower_bound(g, list(range(5)), rep)
        assert bound == pytest.approx(5.0)
        assert len(neighborhood(g, list(range(5)))) == 5

    def test_expansion_ratio_at_fiftieth(self):
        # degree-74 graph at |R| = floor(p/50): the bound divided by |R|
        # clears the 13.5 growth constant
        lam = 2 * math.sqrt(73)
        size = 3420 // 50
        bound = 74.0**2 * size / (lam**2 + (74.0**2 - lam**2) * size / 3420)
        assert bound / size >= 13.5

    def test_empty_subset_rejected(self, six_cycle):
        with pytest.raises(ParameterError):
            tanner_lower_bound(six_cycle, [])

    def test_sampled_subsets_respect_bound(self, lps336):
        rep = spectral_check(lps336, 6)
        rng = np.random.default_rng(99)
        for _ in range(200):
            size = int(rng.integers(1, 336))
            subset = rng.choice(336, size=size, replace=False)
            bound = tanner_lower_bound(lps336, subset, rep)
            assert len(neighborhood(lps336, subset)) >= bound - 1e-9


class TestRandomRegular:
    def test_basic_shape(self):
        g = random_regular(10, 6, seed=1)
        assert g.is_regular() and g.degree(0) == 6
        assert is_connected(g)
        g.validate()

    def test_deterministic(self):
        a = random_regular(12, 4, seed=9)
        b = random_regular(12, 4, seed=9)
        assert np.array_equal(a.indices, b.indices)

    def test_odd_sum_rejected(self):
        with pytest.raises(ParameterError):
            random_regular(5, 3, seed=0)

    def test_impossible_rejected(self):
        with pytest.raises(ParameterError):
            random_regular(4, 5, seed=0)


class TestBuildOverlay:
    def test_power_saturates_to_complete(self):
        ov = build_overlay(p=10, f=9, delta0=6, mode="random_regular", seed=7)
        assert ov.max_degree == 9
        assert ov.ell == select_power_params(10, 9).ell

    def test_small_f_skips_power(self):
        ov = build_overlay(p=16, f=0, delta0=4, mode="random_regular", seed=3)
        assert ov.ell == 1
        assert ov.max_degree == 4

    def test_lps_quotient(self):
        # 336 base nodes hosted by 48 processors, 7 nodes each
        ov = build_overlay(p=48, f=0, delta0=6, mode="lps", seed=0)
        assert ov.base_nodes == 336
        assert ov.nodes_per_processor == 7
        assert ov.max_degree <= 7 * 6

    def test_bad_f(self):
        with pytest.raises(ParameterError):
            build_overlay(p=4, f=4, delta0=3, mode="random_regular")


class TestEdgeListIO:
    def test_round_trip(self, tmp_path, six_cycle):
        path = str(tmp_path / "g.edges")
        save_edge_list(six_cycle, path, {"note": 1})
        back = load_edge_list(path)
        assert np.array_equal(back.indptr, six_cycle.indptr)
        assert np.array_equal(back.indices, six_cycle.indices)
        assert back.meta["note"] == 1

    def test_bad_edge_count(self, tmp_path):
        path = tmp_path / "bad.edges"
        path.write_text("3 5\n0 1\n")
        with pytest.raises(GraphError):
            load_edge_list(str(path))
