import numpy as np
import pytest

from doallsim.graphs import build_lps, build_overlay, from_adjacency_sets


@pytest.fixture(scope="session")
def lps336():
    return build_lps(5, 300)


@pytest.fixture(scope="session")
def overlay4():
    return build_overlay(p=4, f=3, delta0=3, mode="random_regular", seed=3)


@pytest.fixture(scope="session")
def overlay8():
    return build_overlay(p=8, f=7, delta0=6, mode="random_regular", seed=5)


def path_graph(n):
    adj = [set() for _ in range(n)]
    for v in range(n - 1):
        adj[v].add(v + 1)
        adj[v + 1].add(v)
    return from_adjacency_sets(n, adj)


def cycle_graph(n):
    adj = [set() for _ in range(n)]
    for v in range(n):
        adj[v].add((v + 1) % n)
        adj[(v + 1) % n].add(v)
    return from_adjacency_sets(n, adj)


@pytest.fixture
def six_cycle():
    return cycle_graph(6)
