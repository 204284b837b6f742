import pytest

from doallsim.graphs import build_overlay
from doallsim.protocol import (CLOSING, MAIN, ListsMessage, PhaseResult,
                               closing_phase, considers_self_compact,
                               init_state, main_phase, merge_update)
from doallsim.rules import BalanceLoadRule, RuleState


def msg(sender, tasks=None, processors=None, busy=None, stop=False):
    return ListsMessage(sender=sender,
                        tasks=tuple(tasks) if tasks is not None else None,
                        processors=tuple(processors) if processors is not None else None,
                        busy=tuple(busy) if busy is not None else None,
                        stop=stop)


class TestInitState:
    def test_basic(self):
        st = init_state(1, 3, 2)
        assert st.tasks == [1, 2]
        assert st.processors == [1, 2, 3]
        assert st.busy == [1, 2, 3]
        assert st.phase == MAIN and not st.done

    def test_zero_tasks(self):
        st = init_state(5, 5, 0)
        assert st.tasks == []

    def test_symmetry(self):
        a, b = init_state(1, 2, 1), init_state(2, 2, 1)
        assert (a.tasks, a.processors, a.busy) == (b.tasks, b.processors, b.busy)

    def test_bad_id(self):
        with pytest.raises(ValueError):
            init_state(0, 3, 2)


class TestMergeUpdate:
    def test_task_removal(self):
        st = init_state(1, 2, 3)
        merge_update(st, [msg(2, tasks=[2, 3], processors=[1, 2], busy=[1, 2])],
                     set())
        assert st.tasks == [2, 3]

    def test_no_messages_identity(self):
        st = init_state(1, 3, 3)
        before = (list(st.tasks), list(st.processors), list(st.busy))
        merge_update(st, [], set())
        assert (st.tasks, st.processors, st.busy) == before

    def test_silent_neighbor_cascades_to_busy(self):
        st = init_state(1, 3, 3)
        merge_update(st, [], {2})
        assert st.processors == [1, 3]
        assert st.busy == [1, 3]

    def test_busy_confined_to_processors(self):
        st = init_state(1, 3, 3)
        merge_update(st, [msg(2, tasks=[1, 2, 3], processors=[1, 2],
                              busy=[1, 2, 3])], set())
        assert st.processors == [1, 2]
        assert st.busy == [1, 2]

    def test_closing_skips_tasks(self):
        st = init_state(1, 2, 3)
        merge_update(st, [msg(2, tasks=[], processors=[1, 2], busy=[1])],
                     set(), include_tasks=False)
        assert st.tasks == [1, 2, 3]


class TestMainPhase:
    def setup_method(self):
        self.rule = BalanceLoadRule(2)

    def test_single_processor_sequence(self):
        st = init_state(1, 1, 1)
        out = main_phase(st, self.rule, RuleState(), [], set(), set())
        assert out.executed == 1 and st.phase == MAIN
        out = main_phase(st, self.rule, RuleState(), [], set(), set())
        assert out.executed is None and st.phase == CLOSING
        assert st.tasks == [] and st.busy == []

    def test_stop_still_performs_task(self):
        st = init_state(1, 2, 4)
        out = main_phase(st, self.rule, RuleState(),
                         [msg(2, stop=True)], set(), {2})
        assert out.executed is not None
        assert st.phase == CLOSING

    def test_busy_mismatch_triggers_done(self):
        st = init_state(1, 2, 4)
        out = main_phase(st, self.rule, RuleState(),
                         [msg(2, tasks=[1, 2, 3, 4], processors=[1, 2],
                              busy=[2])], set(), {2})
        assert out.executed is not None
        assert st.phase == CLOSING
        assert 1 not in st.busy

    def test_multicast_restricted_to_known_processors(self):
        st = init_state(1, 3, 2)
        out = main_phase(st, BalanceLoadRule(3), RuleState(),
                         [msg(2, tasks=[1, 2], processors=[1, 2], busy=[1, 2])],
                         set(), {2, 3})
        assert out.targets == [2]


class TestCompactness:
    def test_full_population_compact(self):
        ov = build_overlay(p=8, f=7, delta0=6, mode="random_regular", seed=5)
        st = init_state(1, 8, 4)
        assert considers_self_compact(st, ov, 7)

    def test_degenerate_threshold(self):
        ov = build_overlay(p=10, f=3, delta0=4, mode="random_regular", seed=5)
        st = init_state(1, 10, 4)
        st.processors = [1]
        assert considers_self_compact(st, ov, 3)  # ceil(7/7) = 1: self counts

    def test_small_island_not_compact(self):
        ov = build_overlay(p=16, f=2, delta0=4, mode="random_regular", seed=5)
        st = init_state(1, 16, 4)
        st.processors = [1]  # alone, threshold is ceil(14/7) = 2
        assert not considers_self_compact(st, ov, 2)


class TestClosingPhase:
    def setup_method(self):
        self.ov = build_overlay(p=4, f=3, delta0=3, mode="random_regular", seed=3)
        self.rule = BalanceLoadRule(4)

    def closing_state(self, pid, busy):
        st = init_state(pid, 4, 2)
        st.phase = CLOSING
        st.tasks = []
        st.busy = busy
        return st

    def test_empty_busy_halts_with_self_selected(self):
        st = self.closing_state(1, [])
        out = closing_phase(st, self.rule, [], set(), {2, 3}, self.ov, 3)
        assert out.halt
        assert out.stop_target == 1

    def test_single_busy_selected_and_removed(self):
        st = self.closing_state(1, [3])
        out = closing_phase(st, self.rule, [], set(), {2, 3}, self.ov, 3)
        assert out.stop_target == 3
        assert st.busy == []
        assert not out.halt

    def test_not_compact_still_sends_stop(self):
        # unpowered base graph so that non-neighbors exist; the threshold
        # argument is still exercised with f = 2
        ov = build_overlay(p=16, f=0, delta0=4, mode="random_regular", seed=5)
        nbrs = {int(u) + 1 for u in ov.neighbors(0)}
        far = sorted(set(range(2, 17)) - nbrs)[:2]
        st = init_state(1, 16, 2)
        st.phase = CLOSING
        st.tasks = []
        st.processors = [1] + far
        st.busy = list(far)
        out = closing_phase(st, BalanceLoadRule(16), [], set(),
                            nbrs, ov, 2)
        assert out.halt  # range is {1}, below the threshold of 2
        assert out.stop_target in far
        assert st.busy == [x for x in far if x != out.stop_target]
