"""Grid skirmish: a small team-combat stand-in for StarCraft micro tasks.

Controlled allies fight scripted enemies on a ``width x height`` grid.
Per-agent actions: no-op, four moves, attack. Attacks hit the nearest live
enemy within ``attack_range`` (Chebyshev); an attack with no enemy in range
does nothing. Enemies stand guard until an ally comes within
``aggro_range``, then close in and attack the nearest ally in range.

Each agent observes its own cell and health, whether its attack is
currently available (the legal-action mask), and every enemy within
``sight_radius``. The shared reward is damage dealt minus damage taken,
plus ``win_bonus`` when the last enemy falls.
"""

from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import CapabilityError, RejectedInputError
from ..utils import check_positive_int
from .base import DEFAULT_ENUMERATION_CAP, DecPomdp

NOOP, UP, DOWN, LEFT, RIGHT, ATTACK = range(6)
_DELTA = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}


@dataclass(frozen=True)
class SkirmishConfig:
    width: int = 5
    height: int = 3
    allies: int = 3
    enemies: int = 3
    ally_health: int = 3
    enemy_health: int = 2
    damage: int = 1
    attack_range: int = 1
    aggro_range: int = 1
    sight_radius: int = 0
    horizon: int = 60
    win_bonus: float = 10.0
    discount: float = 0.99
    seed: int = 0


class GridSkirmish(DecPomdp):
    """State: ``(ally_cells, ally_hp, enemy_cells, enemy_hp)`` tuples of ints."""

    n_actions = 6

    def __init__(self, config=None, **overrides):
        cfg = config or SkirmishConfig()
        if overrides:
            cfg = SkirmishConfig(**{**asdict(cfg), **overrides})
        if cfg.width < 1 or cfg.height < 1:
            raise RejectedInputError("skirmish map must have positive area")
        check_positive_int(cfg.allies, "allies")
        check_positive_int(cfg.enemies, "enemies")
        if cfg.sight_radius < 0:
            raise RejectedInputError("sight_radius must be >= 0")
        self.config = cfg
        self.n_agents = cfg.allies
        self.discount = cfg.discount
        self.horizon = cfg.horizon
        self.width, self.height = cfg.width, cfg.height
        self.n_cells = cfg.width * cfg.height
        self._rc = [divmod(c, cfg.width) for c in range(self.n_cells)]
        r = cfg.sight_radius
        self._offsets = [(dr, dc) for dr in range(-r, r + 1) for dc in range(-r, r + 1)]
        # allies start in the left column, spread vertically
        rows = np.linspace(0, cfg.height - 1, cfg.allies).round().astype(int)
        self.ally_spawn = tuple(int(rr) * cfg.width for rr in rows)
        half = cfg.width // 2
        self.enemy_spawn_cells = tuple(
            rr * cfg.width + cc for rr in range(cfg.height) for cc in range(half + 1 if cfg.width > 2 else 0, cfg.width)
        ) or tuple(range(self.n_cells))

    # ------------------------------------------------------------ helpers

    def _dist(self, a, b):
        (r1, c1), (r2, c2) = self._rc[a], self._rc[b]
        return max(abs(r1 - r2), abs(c1 - c2))

    def _move(self, cell, action):
        if action not in _DELTA:
            return cell
        r, c = self._rc[cell]
        dr, dc = _DELTA[action]
        r2, c2 = r + dr, c + dc
        if 0 <= r2 < self.height and 0 <= c2 < self.width:
            return r2 * self.width + c2
        return cell

    def _nearest(self, cell, cells, hps, limit):
        best, best_d = None, None
        for j, (other, hp) in enumerate(zip(cells, hps)):
            if hp <= 0:
                continue
            d = self._dist(cell, other)
            if d <= limit and (best is None or d < best_d):
                best, best_d = j, d
        return best

    def _toward(self, cell, target):
        r, c = self._rc[cell]
        tr, tc = self._rc[target]
        if abs(tr - r) >= abs(tc - c):
            r += (tr > r) - (tr < r)
        else:
            c += (tc > c) - (tc < c)
        return r * self.width + c

    # -------------------------------------------------------------- API

    def reset(self, rng):
        cfg = self.config
        pick = rng.choice(len(self.enemy_spawn_cells), size=cfg.enemies, replace=False)
        enemies = tuple(sorted(int(self.enemy_spawn_cells[i]) for i in pick))
        return (
            self.ally_spawn,
            (cfg.ally_health,) * cfg.allies,
            enemies,
            (cfg.enemy_health,) * cfg.enemies,
        )

    def check_state(self, state):
        if not (isinstance(state, tuple) and len(state) == 4):
            raise RejectedInputError(f"not a skirmish state: {state!r}")

    def _step(self, state, joint_action, rng):
        cfg = self.config
        a_cells, a_hp, e_cells, e_hp = (list(x) for x in state)
        # allies move, then attack
        for i, act in enumerate(joint_action):
            if a_hp[i] > 0:
                a_cells[i] = self._move(a_cells[i], act)
        dealt = 0
        for i, act in enumerate(joint_action):
            if a_hp[i] > 0 and act == ATTACK:
                j = self._nearest(a_cells[i], e_cells, e_hp, cfg.attack_range)
                if j is not None:
                    hit = min(cfg.damage, e_hp[j])
                    e_hp[j] -= hit
                    dealt += hit
        taken = 0
        if any(e_hp):
            for j in range(cfg.enemies):
                if e_hp[j] <= 0:
                    continue
                i = self._nearest(e_cells[j], a_cells, a_hp, cfg.attack_range)
                if i is not None:
                    hit = min(cfg.damage, a_hp[i])
                    a_hp[i] -= hit
                    taken += hit
                    continue
                k = self._nearest(e_cells[j], a_cells, a_hp, cfg.aggro_range)
                if k is not None:
                    e_cells[j] = self._toward(e_cells[j], a_cells[k])
        won = not any(e_hp)
        lost = not any(a_hp)
        reward = float(dealt - taken) + (cfg.win_bonus if won else 0.0)
        nxt = (tuple(a_cells), tuple(a_hp), tuple(e_cells), tuple(e_hp))
        return nxt, reward, won or lost

    def won(self, state):
        return not any(state[3])

    # ------------------------------------------------------ observations

    def _obs_digits(self, state, agent):
        cfg = self.config
        a_cells, a_hp, e_cells, e_hp = state
        hp = a_hp[agent]
        if hp <= 0:
            return None
        cell = a_cells[agent]
        can_attack = self._nearest(cell, e_cells, e_hp, cfg.attack_range) is not None
        r, c = self._rc[cell]
        seen = []
        for dr, dc in self._offsets:
            rr, cc = r + dr, c + dc
            occupied = False
            if 0 <= rr < self.height and 0 <= cc < self.width:
                target = rr * self.width + cc
                occupied = any(ec == target and eh > 0 for ec, eh in zip(e_cells, e_hp))
            seen.append(int(occupied))
        return cell, hp - 1, int(can_attack), seen

    def _observe(self, state, agent):
        digits = self._obs_digits(state, agent)
        if digits is None:
            return 0
        cell, hp, can_attack, seen = digits
        code = (cell * self.config.ally_health + hp) * 2 + can_attack
        for bit in seen:
            code = code * 2 + bit
        return code + 1

    def n_observations(self, agent=0):
        return self.n_cells * self.config.ally_health * 2 * 2 ** len(self._offsets) + 1

    def observation_dim(self, agent=0):
        return 1 + self.n_cells + self.config.ally_health + 1 + len(self._offsets)

    def observation_vector(self, observation, agent=0):
        """Factored one-hot of an observation id: dead flag, cell, health,
        attack-available bit, one bit per visible cell offset."""
        x = np.zeros(self.observation_dim(agent))
        if observation == 0:
            x[0] = 1.0
            return x
        code = observation - 1
        bits = []
        for _ in self._offsets:
            bits.append(code % 2)
            code //= 2
        bits.reverse()
        can_attack = code % 2
        code //= 2
        hp = code % self.config.ally_health
        cell = code // self.config.ally_health
        x[1 + cell] = 1.0
        x[1 + self.n_cells + hp] = 1.0
        x[1 + self.n_cells + self.config.ally_health] = can_attack
        x[2 + self.n_cells + self.config.ally_health :] = bits
        return x

    # ------------------------------------------------------------ state

    @property
    def state_dim(self):
        cfg = self.config
        return (cfg.allies + cfg.enemies) * (self.n_cells + 1) + 2 * cfg.allies * cfg.enemies

    def state_vector(self, state):
        """Per unit: one-hot cell (zero when dead) and health fraction; then
        the row/column offset from every live ally to every live enemy,
        scaled by the map size."""
        cfg = self.config
        a_cells, a_hp, e_cells, e_hp = state
        x = np.zeros(self.state_dim)
        stride = self.n_cells + 1
        units = [(c, h, cfg.ally_health) for c, h in zip(a_cells, a_hp)]
        units += [(c, h, cfg.enemy_health) for c, h in zip(e_cells, e_hp)]
        for k, (cell, hp, full) in enumerate(units):
            if hp > 0:
                x[k * stride + cell] = 1.0
                x[k * stride + self.n_cells] = hp / full
        pos = len(units) * stride
        for ac, ah in zip(a_cells, a_hp):
            for ec, eh in zip(e_cells, e_hp):
                if ah > 0 and eh > 0:
                    (r1, c1), (r2, c2) = self._rc[ac], self._rc[ec]
                    x[pos] = (r2 - r1) / self.height
                    x[pos + 1] = (c2 - c1) / self.width
                pos += 2
        return x

    def state_id(self, state):
        cfg = self.config
        code = 0
        a_cells, a_hp, e_cells, e_hp = state
        for c, h in zip(a_cells, a_hp):
            code = (code * self.n_cells + c) * (cfg.ally_health + 1) + h
        for c, h in zip(e_cells, e_hp):
            code = (code * self.n_cells + c) * (cfg.enemy_health + 1) + h
        return code

    @property
    def n_states(self):
        cfg = self.config
        return (self.n_cells * (cfg.ally_health + 1)) ** cfg.allies * (
            self.n_cells * (cfg.enemy_health + 1)
        ) ** cfg.enemies

    def enumerate(self, cap=DEFAULT_ENUMERATION_CAP):
        size = self.n_states * self.n_actions**self.n_agents
        raise CapabilityError(f"skirmish has ~{size:.3g} state-action pairs (cap {cap})")

    def own_slice(self, state, agent):
        """What a full-sight observation determines: own cell, own health and
        the set of occupied enemy cells."""
        a_cells, a_hp, e_cells, e_hp = state
        if a_hp[agent] <= 0:
            return None
        return a_cells[agent], a_hp[agent], frozenset(c for c, h in zip(e_cells, e_hp) if h > 0)


def make_grid_skirmish(config=None, **overrides):
    return GridSkirmish(config, **overrides)
