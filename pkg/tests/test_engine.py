import numpy as np
import pytest

from doallsim.adversaries import (AllButOne, CrashDecision, NoCrashes,
                                  RandomBounded, Scripted)
from doallsim.engine import (BalanceLoad, DeterministicPermutations,
                             RandomizedPermutations, TraceOptions,
                             run_simulation)
from doallsim.errors import ScheduleError
from doallsim.graphs import build_overlay
from doallsim.rules import BalanceLoadRule
from doallsim.trace import Envelope, account, crash_apply

from reference_sim import run_reference


def run(algo, ov, adversary, seed=7, **kw):
    return run_simulation(algo, ov, adversary, seed, **kw)


class TestSingleProcessor:
    def test_three_tasks_then_halt(self):
        ov = build_overlay(p=1, f=0, delta0=2, mode="random_regular", seed=1)
        tr, m = run(BalanceLoad(1, 3), ov, NoCrashes())
        # three working phases, one empty-detection phase, one closing phase
        assert m.termination_round == 15
        assert m.work == 15 and m.messages == 0
        assert m.tasks_completed

    def test_zero_tasks(self):
        ov = build_overlay(p=1, f=0, delta0=2, mode="random_regular", seed=1)
        tr, m = run(BalanceLoad(1, 0), ov, NoCrashes())
        assert m.tasks_completed
        assert m.termination_round == 6  # done-detection phase + closing phase


class TestWorkAccounting:
    def test_crash_plus_termination(self):
        # one crash at round 5, survivor terminates at round 9: work 5 + 9
        ov = build_overlay(p=2, f=1, delta0=1, mode="random_regular", seed=1)
        sched = Scripted([{"round": 5, "victim": 2, "delivered": "none"}])
        tr, m = run(BalanceLoad(2, 2), ov, sched)
        assert dict(zip(tr.crash_proc + 1, tr.crash_round)) == {2: 5}
        assert m.termination_round == 9
        assert m.work == 5 + 9

    def test_survivor_completes_all(self):
        ov = build_overlay(p=4, f=3, delta0=3, mode="random_regular", seed=3)
        for t in (1, 5, 9):
            tr, m = run(BalanceLoad(4, t), ov, AllButOne())
            assert m.tasks_completed
            assert tr.all_tasks_done()

    def test_message_work_coupling(self, overlay8):
        for algo in (BalanceLoad(8, 40), RandomizedPermutations(8, 40),
                     DeterministicPermutations(8, 40)):
            for adv, seed in ((NoCrashes(), 1), (RandomBounded(), 2),
                              (AllButOne(), 3)):
                tr, m = run(algo, overlay8, adv, seed=seed)
                assert m.messages <= overlay8.max_degree * m.work
                assert m.tasks_completed


class TestDeterminism:
    def test_identical_runs(self, overlay8):
        res = []
        for _ in range(2):
            tr, m = run(RandomizedPermutations(8, 24), overlay8,
                        RandomBounded(), seed=123)
            res.append((m, tr.exec_round.tolist(), tr.exec_task.tolist(),
                        tr.crash_round.tolist(), tr.phase_msgs.tolist()))
        assert res[0] == res[1]

    def test_seed_changes_run(self, overlay8):
        _, m1 = run(RandomizedPermutations(8, 24), overlay8, RandomBounded(),
                    seed=1)
        _, m2 = run(RandomizedPermutations(8, 24), overlay8, RandomBounded(),
                    seed=2)
        assert m1 != m2


class TestCrashApply:
    def outbox(self):
        return [Envelope(1, r, None, 3) for r in (2, 3, 4)]

    def test_all(self):
        d = CrashDecision(victim=1, round=3, delivered="all")
        assert len(crash_apply(d, self.outbox())) == 3

    def test_none(self):
        d = CrashDecision(victim=1, round=3, delivered="none")
        assert crash_apply(d, self.outbox()) == []

    def test_subset(self):
        d = CrashDecision(victim=1, round=3, delivered=[3])
        kept = crash_apply(d, self.outbox())
        assert [e.receiver for e in kept] == [3]

    def test_foreign_receiver_rejected(self):
        d = CrashDecision(victim=1, round=3, delivered=[9])
        with pytest.raises(ScheduleError):
            crash_apply(d, self.outbox())

    def test_foreign_outbox_rejected(self):
        d = CrashDecision(victim=2, round=3, delivered="all")
        with pytest.raises(ScheduleError):
            crash_apply(d, self.outbox())


class TestAccount:
    def test_recount_matches_engine(self, overlay8):
        tr, m = run(BalanceLoad(8, 30), overlay8, RandomBounded(), seed=4)
        again = account(tr)
        assert again == m

    def test_partial_multicast_counted(self):
        # crash during the send round delivering an explicit subset
        ov = build_overlay(p=4, f=3, delta0=3, mode="random_regular", seed=3)
        nbrs = sorted(int(x) + 1 for x in ov.neighbors(0))
        sched = Scripted([{"round": 3, "victim": 1, "delivered": nbrs[:1]}])
        tr, m = run(BalanceLoad(4, 6), ov, sched)
        i = list(tr.crash_proc + 1).index(1)
        assert tr.crash_delivered[i] == 1

    def test_explicit_subset_validated(self):
        ov = build_overlay(p=4, f=3, delta0=3, mode="random_regular", seed=3)
        nbrs = {int(x) + 1 for x in ov.neighbors(0)}
        absent = (set(range(2, 5)) - nbrs) or {1}
        # naming a receiver with no envelope is a schedule error; receivers
        # outside the neighbor set never get an envelope from processor 1
        if absent != {1}:
            sched = Scripted([{"round": 3, "victim": 1,
                               "delivered": sorted(absent)}])
            with pytest.raises(ScheduleError):
                run(BalanceLoad(4, 6), ov, sched)

    def test_nonsend_round_subset_rejected(self):
        ov = build_overlay(p=4, f=3, delta0=3, mode="random_regular", seed=3)
        sched = Scripted([{"round": 2, "victim": 1, "delivered": [2]}])
        with pytest.raises(ScheduleError):
            run(BalanceLoad(4, 6), ov, sched)


class TestRoundCap:
    def test_flagged_incomplete(self, overlay8):
        tr, m = run(BalanceLoad(8, 1000), overlay8, NoCrashes(), round_cap=30)
        assert tr.incomplete
        assert not m.tasks_completed
        assert m.termination_round == 30
        assert m.work == 8 * 30


class TestReferenceParity:
    """The packed-bitset engine against the object-level phase functions."""

    def assert_match(self, p, t, algo_cls, crashes=(), seed=5, delta0=3):
        d = min(delta0, p - 1)
        if p > 1 and (p * d) % 2:
            d -= 1
        ov = build_overlay(p=p, f=p - 1, delta0=max(1, d),
                           mode="random_regular", seed=3) \
            if p > 1 else build_overlay(p=1, f=0, delta0=1,
                                        mode="random_regular", seed=3)
        algo = algo_cls(p, t)
        adv = Scripted([{"round": r, "victim": v, "delivered": d}
                        for r, v, d in crashes]) if crashes else NoCrashes()
        tr, m = run_simulation(algo, ov, adv, seed,
                               options=TraceOptions(log_sends=True,
                                                    sampling=False))
        rule = algo.make_rule(seed)
        ref = run_reference(p, t, ov, rule, p - 1, crashes=crashes)
        eng_exec = sorted(zip(tr.exec_round.tolist(),
                              (tr.exec_proc + 1).tolist(),
                              tr.exec_task.tolist()))
        assert eng_exec == sorted(ref.exec_log)
        assert m.messages == ref.messages
        assert m.termination_round == ref.termination_round
        eng_halts = dict(zip((tr.halt_proc + 1).tolist(),
                             tr.halt_round.tolist()))
        assert eng_halts == ref.halt_rounds
        assert tr.phase_msgs.tolist() == ref.phase_msgs

    def test_balance_no_crash(self):
        for p, t in ((2, 5), (3, 7), (4, 9), (5, 3), (4, 0)):
            self.assert_match(p, t, BalanceLoad)

    def test_permutations_no_crash(self):
        for p, t in ((2, 6), (4, 10), (5, 5)):
            self.assert_match(p, t, RandomizedPermutations)
            self.assert_match(p, t, DeterministicPermutations)

    def test_with_crashes(self):
        self.assert_match(4, 9, BalanceLoad,
                          crashes=((2, 3, "none"), (7, 1, "none")))
        self.assert_match(4, 9, BalanceLoad, crashes=((6, 2, "all"),))
        self.assert_match(5, 8, RandomizedPermutations,
                          crashes=((3, 5, "all"), (4, 2, "none"),
                                   (12, 1, "none")))
        self.assert_match(3, 12, DeterministicPermutations,
                          crashes=((9, 3, "all"),))


class TestInvariants:
    def test_lists_shrink_monotonically(self, overlay8):
        opts = TraceOptions(sampling=True)
        tr, _ = run(BalanceLoad(8, 40), overlay8, RandomBounded(), seed=9,
                    options=opts)
        snaps = tr.snapshots
        for a, b in zip(snaps, snaps[1:]):
            for v in range(8):
                assert np.all(b.item_words[v] & ~a.item_words[v] == 0)
                assert np.all(b.proc_words[v] & ~a.proc_words[v] == 0)
                assert np.all(b.busy_words[v] & ~a.busy_words[v] == 0)

    def test_halts_within_task_plus_processor_phases(self, overlay8):
        for seed in range(5):
            t = 20
            tr, m = run(BalanceLoad(8, t), overlay8, RandomBounded(),
                        seed=seed)
            last_phase = -(-m.termination_round // 3)
            assert last_phase <= t + 8 + 2

    def test_earlier_crash_never_raises_own_work(self, overlay8):
        # the victim's own contribution is its crash round
        base = Scripted([{"round": 9, "victim": 3, "delivered": "none"}])
        earlier = Scripted([{"round": 6, "victim": 3, "delivered": "none"}])
        tr1, _ = run(BalanceLoad(8, 24), overlay8, base)
        tr2, _ = run(BalanceLoad(8, 24), overlay8, earlier)
        c1 = dict(zip(tr1.crash_proc, tr1.crash_round))[2]
        c2 = dict(zip(tr2.crash_proc, tr2.crash_round))[2]
        assert c2 < c1

    def test_halt_safety(self, overlay8):
        # when anybody halts, every task appears in the execution log
        for seed in range(4):
            tr, m = run(RandomizedPermutations(8, 32), overlay8,
                        RandomBounded(), seed=seed)
            if tr.halt_round.size:
                first_halt = int(tr.halt_round.min())
                done_before = set(tr.exec_task[tr.exec_round <= first_halt]
                                  .tolist())
                assert done_before == set(range(1, 33))
