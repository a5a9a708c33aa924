import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhtm.tm import BeliefState, Memory, Topology, observe, segment_log_likelihood

from helpers import transition_hmm, train_sequence


def one_hot_messages(top, cells):
    b = np.zeros((top.n_vars, top.cells_per_var))
    for cell in cells:
        var, rest = divmod(cell, top.cells_per_var)
        b[var, rest] = 1.0
    return BeliefState(b)


def check_reverse_index(mem):
    for seg in mem.segments():
        assert seg.id in mem.segments_of_cell(seg.owner_cell)
        for u in seg.receptive_field:
            assert seg.id in mem.segments_with_presynaptic(int(u))
    live = {seg.id for seg in mem.segments()}
    for u in range(mem.topology.n_context):
        assert set(mem.segments_with_presynaptic(u)) <= live


# -- topology -----------------------------------------------------------

def test_cell_ids_are_bijective():
    top = Topology(3, 4, 2)
    ids = [top.cell_id(v, c, i) for v in range(3) for c in range(4) for i in range(2)]
    assert ids == list(range(top.n_hidden))
    assert all(top.cell_coords(top.cell_id(v, c, i)) == (v, c, i)
               for v in range(3) for c in range(4) for i in range(2))
    assert top.cells_per_var == 8


# -- segment likelihood -------------------------------------------------

def test_likelihood_all_specific_equal_messages():
    m = np.full(6, 0.3)
    assert segment_log_likelihood([0, 2, 4], [1, 1, 1], m) == pytest.approx(math.log(0.3), abs=1e-9)


def test_likelihood_one_hot_inside_field():
    m = np.zeros(5)
    m[1] = 1.0
    assert segment_log_likelihood([1, 3, 4], [1, 1, 1], m) == pytest.approx(math.log(1 / 3), abs=1e-9)


def test_likelihood_unspecific_is_product_plus_floor():
    m = np.array([0.5, 0.25, 0.8])
    expected = math.log(1e-12) + sum(math.log(x) for x in m) - math.log(3)
    assert segment_log_likelihood([0, 1, 2], [0, 0, 0], m) == pytest.approx(expected)


def test_likelihood_empty_field():
    with pytest.raises(RuntimeError):
        segment_log_likelihood([], [], np.ones(3))


# -- predict ------------------------------------------------------------

def test_predict_without_segments_is_uniform():
    mem = Memory(Topology(2, 3, 2, n_actions=2))
    mem.step(1, [0, 2])
    prior = mem.predict(0)
    np.testing.assert_allclose(prior.probs, 1 / 6)


def test_predict_single_matching_segment_wins():
    top = Topology(1, 4, 1, context_field_size=1)
    mem = Memory(top)
    mem.add_segment(2, [1], factor=1.0, weights=[1.0])
    mem.add_segment(3, [0], factor=1.0, weights=[1.0])
    prior = mem.predict(messages=one_hot_messages(top, [1]))
    assert np.argmax(prior.probs[0]) == 2
    assert prior.probs[0, 2] > np.delete(prior.probs[0], 2).max()


def test_predict_two_segments_factor_ratio():
    top = Topology(1, 4, 1, context_field_size=1)
    mem = Memory(top)
    mem.add_segment(1, [0], factor=0.8, weights=[1.0])
    mem.add_segment(2, [0], factor=0.2, weights=[1.0])
    prior = mem.predict(messages=one_hot_messages(top, [0]))
    # hand evaluation: E = log f + log(1 + 1e-12); cells without segments sit at the floor
    exc = np.array([math.log(1e-12), math.log(0.8) + math.log(1 + 1e-12),
                    math.log(0.2) + math.log(1 + 1e-12), math.log(1e-12)])
    expected = np.exp(exc) / np.exp(exc).sum()
    np.testing.assert_allclose(prior.probs[0], expected, rtol=1e-12)
    assert prior.probs[0, 1] / prior.probs[0, 2] == pytest.approx(4.0)


def test_predict_after_reset_is_uniform_even_when_trained():
    top = Topology(1, 2, 1)
    mem = Memory(top, lr_factor=0.5)
    train_sequence(mem, [0, 1, 0, 1, 0])
    mem.reset()
    np.testing.assert_allclose(mem.predict().probs, 0.5)
    prior, _ = mem.step(None, [0])
    np.testing.assert_allclose(prior.probs, 0.5)


# -- observe ------------------------------------------------------------

def test_observe_uniform_prior():
    top = Topology(2, 3, 4)
    post = observe(top, BeliefState.uniform(top), [1, 2])
    expected = np.zeros((2, 12))
    expected[0, 4:8] = 0.25
    expected[1, 8:12] = 0.25
    np.testing.assert_allclose(post.probs, expected)


def test_observe_restricts_and_renormalizes():
    top = Topology(1, 2, 2)
    prior = BeliefState(np.array([[0.1, 0.3, 0.2, 0.4]]))
    np.testing.assert_allclose(observe(top, prior, [1]).probs, [[0, 0, 1 / 3, 2 / 3]])


def test_observe_bursts_on_zero_mass():
    top = Topology(1, 2, 2)
    prior = BeliefState(np.array([[0.5, 0.5, 0.0, 0.0]]))
    np.testing.assert_allclose(observe(top, prior, [1]).probs, [[0, 0, 0.5, 0.5]])


def test_observe_requires_every_variable():
    top = Topology(2, 3)
    with pytest.raises(ValueError):
        observe(top, BeliefState.uniform(top), [1])


# -- learn --------------------------------------------------------------

def test_two_state_sequence_grows_two_segments():
    mem = Memory(Topology(1, 2, 1))
    train_sequence(mem, [0, 1, 0])
    assert mem.n_segments == 2
    owners = sorted((s.owner_cell, tuple(s.receptive_field)) for s in mem.segments())
    assert owners == [(0, (1,)), (1, (0,))]


def test_zero_learning_rates_only_grow():
    mem = Memory(Topology(1, 3, 1), lr_factor=0.0, lr_weight=0.0, f_init=0.3)
    train_sequence(mem, [0, 1, 2, 0, 1, 2, 0])
    segs = mem.segments()
    assert len(segs) == 3
    assert all(s.log_factor == pytest.approx(math.log(0.3)) for s in segs)
    assert all((s.weights == 0.5).all() for s in segs)


def test_reinforcement_closed_form():
    f0, lr = 0.1, 0.1
    mem = Memory(Topology(1, 2, 1), lr_factor=lr)
    train_sequence(mem, [0, 1])
    for t in range(1, 8):
        mem.reset()
        train_sequence(mem, [0, 1])
        seg = mem.segments()[0]
        assert math.exp(seg.log_factor) == pytest.approx(1 - (1 - f0) * (1 - lr) ** t)


def test_false_prediction_is_punished():
    mem = Memory(Topology(1, 3, 1), lr_factor=0.2)
    train_sequence(mem, [0, 1])
    mem.reset()
    train_sequence(mem, [0, 2])
    by_owner = {s.owner_cell: math.exp(s.log_factor) for s in mem.segments()}
    assert by_owner[1] == pytest.approx(0.2 * 0.8)
    assert by_owner[2] == pytest.approx(0.2)


def test_specificity_tracks_segment_activity():
    top = Topology(2, 2, 1, context_field_size=2)
    mem = Memory(top, lr_weight=0.5)
    # context (var0=0, var1=0) -> (0, 0); then context (0, 1) reuses cell 0 of var0 only
    mem.step(None, [0, 0])
    mem.step(None, [0, 0])
    seg = next(s for s in mem.segments() if s.owner_cell == 0)
    np.testing.assert_allclose(seg.weights, 0.75)
    mem.reset()
    mem.step(None, [0, 1])
    mem.step(None, [1, 1])
    seg = mem.segment(seg.id)
    # presynaptic cell 0 fired without the segment: its weight decays, the other is untouched
    np.testing.assert_allclose(seg.weights, [0.375, 0.75])


def test_eviction_keeps_cell_capacity():
    top = Topology(1, 6, 1)
    mem = Memory(top, max_segments_per_cell=2)
    for ctx in range(1, 6):
        mem.reset()
        train_sequence(mem, [ctx, 0])
    assert len(mem.segments_of_cell(0)) == 2
    check_reverse_index(mem)


def test_learn_requires_action_when_actions_exist():
    mem = Memory(Topology(1, 2, 1, n_actions=2))
    b = BeliefState.uniform(mem.topology)
    with pytest.raises(ValueError):
        mem.learn(b, b, None)


# -- step / reset / rollout ----------------------------------------------

def test_trained_chain_predicts_next_column():
    mem = Memory(Topology(1, 2, 2), lr_factor=0.5, seed=3)
    for _ in range(10):
        mem.reset()
        train_sequence(mem, [0, 1, 0, 1])
    mem.reset()
    mem.step(None, [0], learn=False)
    mem.step(None, [1], learn=False)
    prior, _ = mem.step(None, [0], learn=False)
    assert np.argmax(prior.column_marginals(mem.topology)[0]) == 0


def test_step_is_predict_observe_learn():
    a = Memory(Topology(2, 3, 2, n_actions=2), seed=11)
    b = Memory(Topology(2, 3, 2, n_actions=2), seed=11)
    seq = [([0, 1], 0), ([2, 2], 1), ([1, 0], 0), ([0, 1], 1), ([2, 2], 0)]
    for cols, act in seq:
        pa, qa = a.step(act, cols)
        prior = b.predict(act)
        post = b.observe(prior, cols)
        if b.has_context:
            b.learn(b.messages, post, act)
        b.messages, b.has_context = post, True
        np.testing.assert_array_equal(pa.probs, prior.probs)
        np.testing.assert_array_equal(qa.probs, post.probs)
    assert a.state_dict()["factor"].tolist() == b.state_dict()["factor"].tolist()


def test_reset_is_idempotent_and_keeps_segments():
    mem = Memory(Topology(1, 3, 2))
    train_sequence(mem, [0, 1, 2, 0])
    n = mem.n_segments
    mem.reset()
    first = mem.messages.probs.copy()
    mem.reset()
    np.testing.assert_array_equal(mem.messages.probs, first)
    assert mem.n_segments == n
    assert not mem.has_context


def test_rollout_one_step_is_predict_marginal():
    mem = Memory(Topology(2, 3, 2, n_actions=2), seed=1)
    train_sequence(mem, [[0, 1], [1, 2], [2, 0], [0, 1]], actions=[0, 1, 0, 1])
    dists, final = mem.rollout(1, lambda b, priors: 1)
    prior = mem.predict(1)
    np.testing.assert_allclose(final.probs, prior.probs)
    np.testing.assert_allclose(dists[0], prior.column_marginals(mem.topology))


def test_rollout_follows_trained_chain_and_does_not_mutate():
    mem = Memory(Topology(1, 4, 1), lr_factor=0.5)
    cycle = [0, 1, 2, 3]
    for _ in range(3):
        mem.reset()
        train_sequence(mem, cycle * 2)
    mem.reset()
    mem.step(None, [0], learn=False)
    before = mem.state_dict()
    dists, _ = mem.rollout(6, lambda b, priors: None)
    for l, d in enumerate(dists, start=1):
        assert np.argmax(d[0]) == cycle[l % 4]
        np.testing.assert_allclose(d.sum(axis=1), 1.0)
    after = mem.state_dict()
    np.testing.assert_array_equal(before["messages"], after["messages"])
    np.testing.assert_array_equal(before["factor"], after["factor"])


# -- invariants -----------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 1)), min_size=2, max_size=30),
       st.integers(0, 1000))
def test_random_streams_keep_invariants(stream, seed):
    top = Topology(2, 3, 2, n_actions=2)
    mem = Memory(top, seed=seed)
    last_f = {}
    for a, b, act in stream:
        prior, post = mem.step(act, [a, b])
        np.testing.assert_allclose(prior.probs.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(post.probs.sum(axis=1), 1.0, atol=1e-6)
        for s in mem.segments():
            assert np.all((s.weights >= 0) & (s.weights <= 1))
            assert s.log_factor <= 0.0
    dists, _ = mem.rollout(4, lambda b, priors: 0)
    for d in dists:
        np.testing.assert_allclose(d.sum(axis=1), 1.0, atol=1e-6)
    check_reverse_index(mem)


def test_repeating_coincidence_never_decreases_factor():
    mem = Memory(Topology(1, 3, 1), lr_factor=0.3)
    prev = 0.0
    for _ in range(20):
        mem.reset()
        train_sequence(mem, [2, 1])
        f = math.exp(mem.segments()[0].log_factor)
        assert f >= prev
        prev = f


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=40), st.integers(1, 3))
def test_segment_count_bounded_by_distinct_transitions(seq, n_vars):
    top = Topology(n_vars, 5, 1)
    mem = Memory(top, seed=0)
    cols = [[o] * n_vars for o in seq]
    train_sequence(mem, cols)
    distinct = len(set(zip(seq, seq[1:])))
    assert mem.n_segments <= distinct * n_vars


def test_predict_matches_exact_forward_on_one_hot_chain():
    top = Topology(1, 5, 1, context_field_size=1)
    mem = Memory(top, lr_factor=0.2)
    train = [0, 3, 1, 4, 2, 0]
    train_sequence(mem, train)
    hmm = transition_hmm(train, 5)
    mem.reset()
    for t, o in enumerate(train):
        prior, _ = mem.step(None, [o], learn=False)
        expected = hmm.initial if t == 0 else np.eye(5)[train[t - 1]] @ hmm.transition[0]
        assert np.abs(prior.probs[0] - expected).max() < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_predict_all_matches_segmentwise_bruteforce(seed):
    rng = np.random.default_rng(seed)
    top = Topology(3, 3, cells_per_column=2, context_field_size=3, n_actions=3)
    mem = Memory(top, seed=seed)
    for _ in range(40):
        owner = int(rng.integers(top.n_hidden))
        rf = rng.choice(top.n_hidden + 1, size=top.field_size, replace=False)
        rf[rf == top.n_hidden] = top.action_cell(int(rng.integers(top.n_actions)))
        mem.add_segment(owner, rf, factor=float(rng.uniform(0.05, 1.0)), weights=rng.random(top.field_size))
    msgs = BeliefState(rng.dirichlet(np.ones(top.cells_per_var), size=top.n_vars))
    priors = mem.predict_all(msgs)
    for a in range(top.n_actions):
        ctx = np.zeros(top.n_context)
        ctx[: top.n_hidden] = msgs.flat
        ctx[top.action_cell(a)] = 1.0
        exc = np.full(top.n_hidden, -np.inf)
        for seg in mem.segments():
            ll = seg.log_factor + segment_log_likelihood(seg.receptive_field, seg.weights, ctx)
            exc[seg.owner_cell] = max(exc[seg.owner_cell], ll)
        exc = np.where(np.isinf(exc), math.log(1e-12), exc).reshape(top.n_vars, -1)
        expected = np.exp(exc - exc.max(axis=1, keepdims=True))
        expected /= expected.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(priors[a].probs, expected, atol=1e-10)
        np.testing.assert_allclose(mem.predict(a, msgs).probs, expected, atol=1e-10)


def test_field_with_two_action_cells_rejected():
    top = Topology(2, 2, n_actions=3, context_field_size=3)
    with pytest.raises(ValueError):
        Memory(top).add_segment(0, [0, top.action_cell(0), top.action_cell(1)])


def test_rollout_trace_records_every_predicted_belief():
    top = Topology(1, 3)
    mem = Memory(top, seed=0)
    train_sequence(mem, [0, 1, 2, 0, 1, 2])
    trace = []
    dists, final = mem.rollout(4, lambda b, priors: None, trace=trace)
    assert len(trace) == 4 and trace[-1] is final
    for d, b in zip(dists, trace):
        np.testing.assert_allclose(d, b.column_marginals(top))
