"""Approximate agreement tests: averaging function, horizons, convergence."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leobft import approx, netsim
from leobft.approx import (
    averaging_function,
    reduce_extremes,
    round_count,
    run_approx,
    shrink_factor,
    stride_select,
)
from leobft.model import NetworkParams
from leobft.netsim import AdversaryStrategy


def make_params(n=4, f=1, zeta=0.1):
    return NetworkParams(n, f, 0.05, zeta=zeta, alpha=0.5, rssi_threshold=0.5)


class TestReduceAndSelect:
    def test_reduce_drops_f_from_each_end(self):
        assert reduce_extremes([0.0, 1.0, 2.0, 3.0, 10.0], 1) == [1.0, 2.0, 3.0]
        assert reduce_extremes([5.0, 1.0, 3.0], 0) == [1.0, 3.0, 5.0]

    def test_reduce_needs_more_than_2f(self):
        with pytest.raises(ValueError):
            reduce_extremes([1.0, 2.0], 1)
        with pytest.raises(ValueError):
            reduce_extremes([1.0, 2.0, 3.0, 4.0], 2)

    def test_reduce_handles_duplicates(self):
        assert reduce_extremes([7.0, 7.0, 7.0, 7.0], 1) == [7.0, 7.0]

    def test_stride_keeps_first_and_every_fth(self):
        assert stride_select([1.0, 2.0, 3.0, 4.0, 5.0], 2) == [1.0, 3.0, 5.0]
        assert stride_select([1.0, 2.0, 3.0], 1) == [1.0, 2.0, 3.0]
        assert stride_select([4.0], 3) == [4.0]

    def test_stride_needs_positive_f(self):
        with pytest.raises(ValueError):
            stride_select([1.0], 0)


class TestAveragingFunction:
    def test_frozen_examples(self):
        assert averaging_function([1.0, 2.0, 3.0, 4.0], 1) == 2.5
        assert averaging_function([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 100.0], 2) == 3.0

    def test_plain_mean_when_no_faults_assumed(self):
        assert averaging_function([1.0, 2.0, 6.0], 0) == 3.0
        with pytest.raises(ValueError):
            averaging_function([], 0)

    def test_single_outlier_is_discarded(self):
        # the outlier lands in the trimmed region and cannot move the result
        clean = averaging_function([1.0, 2.0, 3.0, 4.0], 1)
        spiked = averaging_function([1.0, 2.0, 3.0, 1000.0], 1)
        assert spiked == 2.5 == clean

    @given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=12), st.integers(1, 3))
    @settings(max_examples=300, deadline=None)
    def test_result_within_input_range(self, values, f):
        if len(values) <= 2 * f:
            return
        result = averaging_function(values, f)
        assert min(values) <= result <= max(values)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=12))
    @settings(max_examples=200, deadline=None)
    def test_permutation_invariant(self, values):
        assert averaging_function(values, 1) == averaging_function(sorted(values, reverse=True), 1)


class TestShrinkFactor:
    def test_grid_values(self):
        assert shrink_factor(4, 1) == 2
        assert shrink_factor(7, 2) == 2
        assert shrink_factor(10, 3) == 2

    def test_low_fault_ratios_shrink_faster(self):
        assert shrink_factor(7, 1) == 5
        assert shrink_factor(10, 1) == 8
        assert shrink_factor(10, 2) == 3

    def test_undefined_for_zero_faults(self):
        with pytest.raises(ValueError):
            shrink_factor(4, 0)


class TestRoundCount:
    def test_frozen_examples(self):
        assert round_count(8.0, 1.0, 2) == 3
        assert round_count(10.0, 0.1, 2) == 7

    def test_zero_when_already_converged(self):
        assert round_count(0.05, 0.1, 2) == 0
        assert round_count(0.1, 0.1, 2) == 0
        assert round_count(0.0, 0.1, 2) == 0

    def test_boundary_is_inclusive(self):
        # delta exactly zeta * c**h needs h rounds, not h+1
        assert round_count(0.4, 0.1, 2) == 2

    def test_faster_factor_needs_fewer_rounds(self):
        assert round_count(100.0, 0.1, 2) >= round_count(100.0, 0.1, 8)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            round_count(1.0, 0.0, 2)
        with pytest.raises(ValueError):
            round_count(1.0, 0.1, 1)
        with pytest.raises(ValueError):
            round_count(float("inf"), 0.1, 2)

    @given(st.floats(0.0, 1e9), st.floats(1e-6, 1e3), st.integers(2, 10))
    @settings(max_examples=300, deadline=None)
    def test_is_least_sufficient_horizon(self, delta, zeta, c):
        h = round_count(delta, zeta, c)
        assert delta <= zeta * c**h
        if h > 0:
            assert delta > zeta * c ** (h - 1)


class TestFaultFree:
    def test_outputs_within_zeta_and_range(self):
        params = make_params()
        initials = {1: 0.0, 2: 4.0, 3: 8.0, 4: 2.0}
        result = run_approx(params, initials, seed=5)
        outs = list(result.outputs.values())
        assert all(v is not None for v in outs)
        assert max(outs) - min(outs) <= params.zeta
        assert all(0.0 <= v <= 8.0 for v in outs)

    def test_horizon_matches_first_spread(self):
        params = make_params(zeta=0.1)
        initials = {1: 0.0, 2: 4.0, 3: 8.0, 4: 2.0}
        result = run_approx(params, initials, seed=5)
        for op in params.operator_ids():
            assert result.first_spreads[op] == 8.0
            assert result.horizons[op] == round_count(8.0, 0.1, 2)

    def test_already_agreed_inputs_halt_after_one_exchange(self):
        params = make_params()
        initials = {op: 3.25 for op in params.operator_ids()}
        result = run_approx(params, initials, seed=6)
        assert all(h == 1 for h in result.horizons.values())
        assert set(result.outputs.values()) == {3.25}

    def test_zero_fault_network_averages_in_one_exchange(self):
        params = NetworkParams(3, 0, 0.05, zeta=0.1, alpha=0.5, rssi_threshold=0.5)
        initials = {1: 1.0, 2: 2.0, 3: 6.0}
        result = run_approx(params, initials, seed=7)
        assert all(h == 1 for h in result.horizons.values())
        assert set(result.outputs.values()) == {3.0}

    def test_values_by_round_snapshots(self):
        params = make_params()
        initials = {1: 0.0, 2: 4.0, 3: 8.0, 4: 2.0}
        result = run_approx(params, initials, seed=5)
        assert len(result.values_by_round) == result.rounds + 1
        assert result.values_by_round[0] == initials
        final = result.values_by_round[-1]
        assert final == result.outputs


class TestHaltProtocol:
    def test_halt_notice_repeats_while_peers_run(self):
        # a one-shot notice could be swallowed by a rotating adversary, so the
        # halted operator keeps repeating it; the bus whitelists that kind
        params = make_params()
        machine = approx.ApproxOperator(1, params, 5.0)
        machine._announce_halt = True
        out = machine.outgoing(3)
        assert len(out) == 1 and out[0][1].kind == netsim.KIND_HALTED
        machine.deliver(3, {op: [] for op in range(1, 5)})
        assert machine.halted
        assert machine.output == 5.0
        for later_round in (4, 5):
            out = machine.outgoing(later_round)
            assert len(out) == 1
            assert out[0][1].kind == netsim.KIND_HALTED
            assert out[0][1].body == (5.0,)
            assert out[0][1].kind in machine.HALT_KINDS
            machine.deliver(later_round, {op: [] for op in range(1, 5)})
            assert machine.output == 5.0  # state frozen

    def test_halted_peer_value_is_sticky(self):
        params = make_params()
        machine = approx.ApproxOperator(1, params, 5.0)
        notice = netsim.Message(2, netsim.KIND_HALTED, (9.0,))
        assert machine._peer_value(2, [notice]) == 9.0
        # later traffic from that peer no longer changes the tallied value
        assert machine._peer_value(2, [netsim.Message(2, netsim.KIND_VAL, (0.0,))]) == 9.0

    def test_first_halt_notice_wins(self):
        params = make_params()
        machine = approx.ApproxOperator(1, params, 5.0)
        first = netsim.Message(2, netsim.KIND_HALTED, (9.0,))
        second = netsim.Message(2, netsim.KIND_HALTED, (1.0,))
        assert machine._peer_value(2, [first, second]) == 9.0

    def test_absent_peer_counts_default(self):
        params = make_params()
        machine = approx.ApproxOperator(1, params, 5.0)
        assert machine._peer_value(3, []) == 0.0


class TestAdversaries:
    def _honest_outputs(self, result, adversary):
        ids = sorted(result.outputs)
        honest = [op for op in ids if op not in adversary.controlled]
        return [result.outputs[op] for op in honest]

    @pytest.mark.parametrize("behavior", [
        netsim.CRASH, netsim.VALUE_LIAR, netsim.RANDOM_VALUES,
        netsim.BOUNDARY_ATTACKER, netsim.EQUIVOCATE,
    ])
    def test_honest_outputs_converge(self, behavior):
        params = make_params()
        adversary = AdversaryStrategy(behavior, frozenset({4}),
                                      params={"range": (-10.0, 10.0)})
        for seed in range(10):
            initials = {1: 0.0, 2: 4.0, 3: 8.0, 4: 5.0}
            result = run_approx(params, initials, seed=seed, adversary=adversary)
            outs = self._honest_outputs(result, adversary)
            assert all(v is not None for v in outs)
            assert max(outs) - min(outs) <= params.zeta
            assert all(0.0 <= v <= 8.0 for v in outs)

    def test_worst_case_shrink_is_still_met(self):
        # dyadic honest values, so every mean is float-exact and the factor-2
        # shrink bound can be checked with exact arithmetic
        params = make_params()
        adversary = AdversaryStrategy(netsim.EQUIVOCATE, frozenset({4}),
                                      params={"values": (-10.0, 10.0)})
        initials = {1: 0.0, 2: 4.0, 3: 8.0, 4: 5.0}
        result = run_approx(params, initials, seed=3, adversary=adversary)
        honest = [1, 2, 3]
        spreads = []
        for snap in result.values_by_round:
            vals = [snap[op] for op in honest]
            spreads.append(max(vals) - min(vals))
        # find the last round where no honest operator had halted yet
        first_halt = min(result.horizons[op] + 1 for op in honest)
        for r in range(min(first_halt, len(spreads) - 1)):
            if spreads[r] > params.zeta:
                assert spreads[r + 1] * shrink_factor(4, 1) <= spreads[r]

    def test_fake_halt_value_is_trimmed(self):
        params = make_params()
        adversary = AdversaryStrategy(netsim.VALUE_LIAR, frozenset({4}),
                                      params={"fake_halt": True, "value": 1000.0})
        initials = {1: 0.0, 2: 4.0, 3: 8.0, 4: 5.0}
        result = run_approx(params, initials, seed=4, adversary=adversary)
        outs = self._honest_outputs(result, adversary)
        assert max(outs) - min(outs) <= params.zeta
        assert all(0.0 <= v <= 8.0 for v in outs)

    def test_rotating_adversary_converges(self):
        params = make_params()
        adversary = AdversaryStrategy(netsim.RANDOM_VALUES, frozenset({1}),
                                      rotate=True, params={"range": (-5.0, 15.0)})
        initials = {1: 0.0, 2: 4.0, 3: 8.0, 4: 2.0}
        result = run_approx(params, initials, seed=8, adversary=adversary)
        assert len(result.controlled_by_round) == result.rounds
        # the controlled singleton moves in id order round by round
        for r, controlled in enumerate(result.controlled_by_round):
            assert controlled == frozenset({(r % 4) + 1})
        outs = [v for v in result.outputs.values() if v is not None]
        assert outs and max(outs) - min(outs) <= params.zeta

    def test_determinism(self):
        params = make_params(7, 2)
        adversary = AdversaryStrategy(netsim.RANDOM_VALUES, frozenset({2, 5}))
        initials = {op: float(op) for op in params.operator_ids()}
        r1 = run_approx(params, initials, seed=11, adversary=adversary)
        r2 = run_approx(params, initials, seed=11, adversary=adversary)
        assert r1.outputs == r2.outputs
        assert r1.values_by_round == r2.values_by_round
