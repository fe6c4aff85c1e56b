"""FrozenLake with observation aliasing.

Cells are numbered row-major. Each cell belongs to one alias group and the
agent observes only the group id.
"""

import numpy as np

from ..exceptions import ParseError, RejectedInputError
from .base import TabularDecPomdp

LEFT, DOWN, RIGHT, UP = range(4)
MOVES = {LEFT: (0, -1), DOWN: (1, 0), RIGHT: (0, 1), UP: (-1, 0)}

DEFAULT_LAYOUT = "SFFF/FHFH/FFFH/HFFG"


def parse_layout(layout):
    """Split a ``"/"``-separated layout into a list of equal-length rows."""
    rows = [r.strip() for r in layout.strip().split("/")] if isinstance(layout, str) else list(layout)
    if not rows or not rows[0]:
        raise ParseError("empty layout")
    width = len(rows[0])
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"row has length {len(row)}, expected {width}", row=r, col=len(row))
        for c, ch in enumerate(row):
            if ch not in "SFHG":
                raise ParseError(f"unexpected cell {ch!r}", row=r, col=c)
    flat = "".join(rows)
    for ch in "SG":
        if flat.count(ch) != 1:
            raise ParseError(f"layout needs exactly one {ch!r}, found {flat.count(ch)}")
    return rows


def alias_by_cell_type(layout):
    """The coarsest aliasing: S, G, all F cells, all H cells (four groups)."""
    flat = "".join(parse_layout(layout))
    groups = {}
    for cell, ch in enumerate(flat):
        groups.setdefault(ch, []).append(cell)
    return [groups[k] for k in "SFHG" if k in groups]


def alias_by_distance(layout):
    """S alone, G alone, all holes together, and frozen cells banded by
    Manhattan distance from the start (anti-diagonals)."""
    rows = parse_layout(layout)
    width = len(rows[0])
    flat = "".join(rows)
    sr, sc = divmod(flat.index("S"), width)
    bands = {}
    for cell, ch in enumerate(flat):
        if ch == "F":
            r, c = divmod(cell, width)
            bands.setdefault(abs(r - sr) + abs(c - sc), []).append(cell)
    holes = [c for c, ch in enumerate(flat) if ch == "H"]
    groups = [[flat.index("S")], [flat.index("G")]] + ([holes] if holes else [])
    return groups + [bands[d] for d in sorted(bands)]


def identity_aliasing(layout):
    n = len("".join(parse_layout(layout)))
    return [[c] for c in range(n)]


def _check_partition(alias_groups, n_cells):
    seen = [c for g in alias_groups for c in g]
    if sorted(seen) != list(range(n_cells)):
        raise RejectedInputError(
            f"alias_groups must partition cells 0..{n_cells - 1} exactly once each"
        )


def make_aliased_frozenlake(
    layout=DEFAULT_LAYOUT,
    alias_groups=None,
    *,
    slippery=False,
    discount=0.99,
    horizon=100,
):
    """Single-agent FrozenLake where the agent sees only its alias-group id.

    Entering ``H`` ends the episode with reward 0, entering ``G`` ends it with
    reward 1. Moves into the border leave the agent in place. With
    ``slippery`` the intended move happens with probability 1/3 and each
    perpendicular move with probability 1/3.

    ``alias_groups`` is a list of cell lists, ``"identity"``, ``"single"``,
    ``"cell-type"`` or ``"distance"``; ``None`` selects :data:`DEFAULT_ALIAS_GROUPS` for the
    default layout and identity otherwise.
    """
    rows = parse_layout(layout)
    height, width = len(rows), len(rows[0])
    flat = "".join(rows)
    n = height * width
    if alias_groups is None:
        alias_groups = DEFAULT_ALIAS_GROUPS if "/".join(rows) == DEFAULT_LAYOUT else "identity"
    if alias_groups == "identity":
        alias_groups = identity_aliasing(layout)
    elif alias_groups == "single":
        alias_groups = [list(range(n))]
    elif alias_groups == "cell-type":
        alias_groups = alias_by_cell_type(layout)
    elif alias_groups == "distance":
        alias_groups = alias_by_distance(layout)
    _check_partition(alias_groups, n)

    obs = np.empty((n, 1), dtype=int)
    for gid, group in enumerate(alias_groups):
        obs[list(group), 0] = gid

    terminal = np.array([ch in "HG" for ch in flat])
    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4, n))

    def move(cell, action):
        r, c = divmod(cell, width)
        dr, dc = MOVES[action]
        r2, c2 = r + dr, c + dc
        if not (0 <= r2 < height and 0 <= c2 < width):
            return cell
        return r2 * width + c2

    for cell in range(n):
        for a in range(4):
            if terminal[cell]:
                P[cell, a, cell] = 1.0
                continue
            outcomes = [a, (a - 1) % 4, (a + 1) % 4] if slippery else [a]
            for b in outcomes:
                nxt = move(cell, b)
                P[cell, a, nxt] += 1.0 / len(outcomes)
                if flat[nxt] == "G":
                    R[cell, a, nxt] = 1.0

    env = TabularDecPomdp(
        P,
        R,
        obs,
        n_agents=1,
        n_actions=4,
        discount=discount,
        horizon=horizon,
        initial_distribution=np.eye(n)[flat.index("S")],
        terminal_states=terminal,
        win_states=np.array([ch == "G" for ch in flat]),
        name="frozenlake",
    )
    env.layout = "/".join(rows)
    env.alias_groups = [list(g) for g in alias_groups]
    env.width, env.height = width, height
    return env


# Distance bands on the default map: [[0], [15], [5, 7, 11, 12], [1, 4],
# [2, 8], [3, 6, 9], [10, 13], [14]]. Coarser, cell-type aliasing leaves no
# memoryless policy that reaches the goal at all.
DEFAULT_ALIAS_GROUPS = alias_by_distance(DEFAULT_LAYOUT)

# Slippery map whose aliasing lets a policy cloned from expert rollouts
# wander into cells the expert seldom visits; the labels it learned there
# come from other cells in the same group and lead it into holes.
DRIFT_LAYOUT = "SFFF/FFHF/FFFH/FFFG"
DRIFT_ALIAS_GROUPS = [[0], [15], [6, 11], [8], [4, 7, 9, 12, 13], [1, 2, 3, 5, 10, 14]]


def make_drift_frozenlake(**kwargs):
    """Slippery aliased lake on which behaviour cloning and DAgger diverge."""
    return make_aliased_frozenlake(DRIFT_LAYOUT, DRIFT_ALIAS_GROUPS, slippery=True, **kwargs)
