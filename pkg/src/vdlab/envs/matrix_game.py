"""Repeated cooperative matrix games whose state follows a fixed cycle."""

import numpy as np

from ..exceptions import RejectedInputError, ShapeError
from .base import TabularDecPomdp


class MatrixGame(TabularDecPomdp):
    def episode_won(self, final_state, undiscounted_return):
        return undiscounted_return >= self.best_return - 1e-9


def make_matrix_game(payoffs, state_cycle=None, *, observations="constant", discount=0.9):
    """Build a cooperative matrix game.

    ``payoffs[s]`` is an ``n_agents``-dimensional table of shared rewards for
    state ``s``. The state moves deterministically along ``state_cycle``
    (wrapping around) regardless of the actions, and an episode lasts one
    pass through the cycle. ``observations`` is ``"constant"`` (every agent
    always sees symbol 0) or ``"identity"`` (agents see the state id).
    """
    try:
        table = np.asarray(payoffs, dtype=float)
    except ValueError as exc:
        raise ShapeError(f"ragged payoff table: {exc}") from None
    if table.ndim < 2:
        raise ShapeError("payoffs must have shape (n_states, n_actions, ..., n_actions)")
    n_states, n_agents = table.shape[0], table.ndim - 1
    n_actions = table.shape[1]
    if any(d != n_actions for d in table.shape[1:]):
        raise ShapeError(f"all agents need the same action count, got {table.shape[1:]}")
    if state_cycle is None:
        state_cycle = list(range(n_states))
    if sorted(state_cycle) != list(range(n_states)):
        raise RejectedInputError("state_cycle must visit every state exactly once")

    J = n_actions**n_agents
    P = np.zeros((n_states, J, n_states))
    for k, s in enumerate(state_cycle):
        P[s, :, state_cycle[(k + 1) % n_states]] = 1.0
    R = table.reshape(n_states, J)
    if observations == "constant":
        O = np.zeros((n_states, n_agents), dtype=int)
    elif observations == "identity":
        O = np.repeat(np.arange(n_states)[:, None], n_agents, axis=1)
    else:
        raise RejectedInputError(f"unknown observation mode {observations!r}")

    env = MatrixGame(
        P,
        R,
        O,
        n_agents=n_agents,
        n_actions=n_actions,
        discount=discount,
        horizon=n_states,
        initial_distribution=np.eye(n_states)[state_cycle[0]],
        name="matrix",
    )
    env.payoffs = table
    env.state_cycle = list(state_cycle)
    env.best_return = float(R.max(axis=1).sum())
    return env


def coordination_counterexample(observations="constant"):
    """Two states, two agents, two actions: (A, A) is optimal in state 0 and
    (B, B) in state 1, and the state alternates every step."""
    payoffs = [
        [[1.0, 0.0], [0.0, 0.5]],
        [[0.5, 0.0], [0.0, 1.0]],
    ]
    return make_matrix_game(payoffs, [0, 1], observations=observations)
