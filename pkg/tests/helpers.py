"""Shared helpers for driving a memory on synthetic streams."""
import numpy as np

from dhtm.oracle import DenseHmm


def train_sequence(mem, columns, actions=None):
    """Feed observations (scalar per step for one variable, or a list per step) with learning on."""
    for t, cols in enumerate(columns):
        cols = np.atleast_1d(cols)
        act = None if actions is None else actions[t]
        mem.step(act, cols)


def transition_hmm(sequence, n_states):
    """Dense HMM whose transitions are the row-normalized counts seen in ``sequence``.

    Rows of states never left are uniform; emissions are the identity and the
    initial distribution is uniform.
    """
    counts = np.zeros((n_states, n_states))
    for a, b in zip(sequence, sequence[1:]):
        counts[a, b] += 1
    rows = counts.sum(axis=1, keepdims=True)
    P = np.where(rows > 0, counts / np.where(rows > 0, rows, 1), 1.0 / n_states)
    return DenseHmm(P, np.eye(n_states), np.full(n_states, 1.0 / n_states))
