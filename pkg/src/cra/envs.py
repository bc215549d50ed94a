"""Gridworld benchmarks: the letter-observation world and the office world.

Both are deterministic 4-action gridworlds. Events fire on cell entry only;
standing still against a wall re-emits nothing. Episode randomness is the
per-episode draw of N (letter observations / mail items) from {1..n_max},
or a fixed N when the config pins one.

Coordinates are (x, y) with y increasing northward. Layout files list rows
top to bottom, so the first row is the highest y.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import random

NORTH, SOUTH, EAST, WEST = 0, 1, 2, 3
ACTIONS = (NORTH, SOUTH, EAST, WEST)
ACTION_NAMES = ("North", "South", "East", "West")
_MOVES = {NORTH: (0, 1), SOUTH: (0, -1), EAST: (1, 0), WEST: (-1, 0)}


class BadConfig(Exception):
    pass


class EpisodeOver(Exception):
    pass


class BadLayout(Exception):
    pass


@dataclass(frozen=True)
class Layout:
    width: int
    height: int
    walls: frozenset
    start: tuple
    letters: dict  # glyph -> position, for plain letter cells
    decorations: frozenset
    delivery: tuple = None
    coffee: tuple = None
    mail: tuple = None


_SPECIAL = {"#", ".", "*", "P", "c", "m", "@"}


def parse_layout(text):
    # '#' is the wall glyph, so only "# "-prefixed header lines are comments.
    rows = []
    for raw in text.splitlines():
        if not rows and (not raw.strip() or raw.startswith("# ")):
            continue
        if rows and not raw.strip():
            break
        rows.append(raw)
    if not rows:
        raise BadLayout("layout has no grid rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise BadLayout("layout rows differ in length")
    height = len(rows)
    walls = set()
    letters = {}
    decorations = set()
    start = delivery = coffee = mail = None
    for row_index, row in enumerate(rows):
        y = height - 1 - row_index
        for x, glyph in enumerate(row):
            pos = (x, y)
            if glyph == "#":
                walls.add(pos)
            elif glyph == "*":
                decorations.add(pos)
            elif glyph == "P":
                delivery = pos
            elif glyph == "c":
                coffee = pos
            elif glyph == "m":
                mail = pos
            elif glyph == "@":
                start = pos
            elif glyph == ".":
                pass
            elif glyph.isalpha():
                if glyph in letters:
                    raise BadLayout(f"duplicate letter cell {glyph!r}")
                letters[glyph] = pos
            else:
                raise BadLayout(f"unknown glyph {glyph!r} at {pos}")
    if start is None:
        raise BadLayout("layout has no start cell '@'")
    return Layout(
        width=width,
        height=height,
        walls=frozenset(walls),
        start=start,
        letters=letters,
        decorations=frozenset(decorations),
        delivery=delivery,
        coffee=coffee,
        mail=mail,
    )


@dataclass(frozen=True)
class EnvConfig:
    layout: Layout
    horizon: int
    n_max: int = 10
    fixed_n: int = None

    def __post_init__(self):
        if self.horizon < 1:
            raise BadConfig("horizon must be >= 1")
        if self.n_max < 1:
            raise BadConfig("n_max must be >= 1")
        if self.fixed_n is not None and not 1 <= self.fixed_n:
            raise BadConfig("fixed_n must be >= 1")
        if self.layout.start in self.layout.walls:
            raise BadConfig("start cell is a wall")


def _move(layout, pos, action):
    dx, dy = _MOVES[action]
    nxt = (pos[0] + dx, pos[1] + dy)
    if not (0 <= nxt[0] < layout.width and 0 <= nxt[1] < layout.height):
        return pos
    if nxt in layout.walls:
        return pos
    return nxt


def _draw_n(config, seed):
    if config.fixed_n is not None:
        return config.fixed_n
    return random.Random(seed).randint(1, config.n_max)


# ---------------------------------------------------------------------------
# Letter world


@dataclass(frozen=True)
class LetterState:
    pos: tuple
    a_remaining: int
    steps: int


class LetterEnv:
    """Open grid with an A cell (turns into B after N observations), a C cell
    and a D cell. Labels are the letters observed on entry."""

    propositions = ("A", "B", "C", "D")

    def __init__(self, config):
        self.config = config
        layout = config.layout
        for glyph in ("A", "C", "D"):
            if glyph not in layout.letters:
                raise BadConfig(f"letter layout is missing the {glyph} cell")
        self.a_cell = layout.letters["A"]
        self.c_cell = layout.letters["C"]
        self.d_cell = layout.letters["D"]

    def reset(self, seed):
        return LetterState(self.config.layout.start, _draw_n(self.config, seed), 0)

    def step(self, state, action):
        if state.steps >= self.config.horizon:
            raise EpisodeOver(f"episode exhausted after {state.steps} steps")
        pos = _move(self.config.layout, state.pos, action)
        remaining = state.a_remaining
        if pos != state.pos and pos == self.a_cell and remaining > 0:
            remaining -= 1
        return LetterState(pos, remaining, state.steps + 1)

    def label(self, state, action, state2):
        if state2.pos == state.pos:
            return frozenset()
        if state2.pos == self.a_cell:
            return frozenset("A" if state.a_remaining > 0 else "B")
        if state2.pos == self.c_cell:
            return frozenset("C")
        if state2.pos == self.d_cell:
            return frozenset("D")
        return frozenset()

    def obs_key(self, state):
        """Environment component of the learning state: position plus the
        remaining-observation count that determines the A cell's symbol."""
        return (state.pos, state.a_remaining)


# ---------------------------------------------------------------------------
# Office world


@dataclass(frozen=True)
class OfficeState:
    pos: tuple
    mail_remaining: int
    mail_carried: int
    coffees_carried: int
    decorations_intact: frozenset
    steps: int


class OfficeEnv:
    """Twelve-room office: collect mail, brew coffee, deliver at P, and keep
    the decorations intact."""

    propositions = ("M", "EM", "Cf", "Pd", "Dk")

    def __init__(self, config):
        self.config = config
        layout = config.layout
        for name in ("delivery", "coffee", "mail"):
            if getattr(layout, name) is None:
                raise BadConfig(f"office layout is missing the {name} cell")

    def reset(self, seed):
        return OfficeState(
            pos=self.config.layout.start,
            mail_remaining=_draw_n(self.config, seed),
            mail_carried=0,
            coffees_carried=0,
            decorations_intact=self.config.layout.decorations,
            steps=0,
        )

    def step(self, state, action):
        if state.steps >= self.config.horizon:
            raise EpisodeOver(f"episode exhausted after {state.steps} steps")
        layout = self.config.layout
        pos = _move(layout, state.pos, action)
        new = replace(state, pos=pos, steps=state.steps + 1)
        if pos == state.pos:
            return new
        if pos in state.decorations_intact:
            new = replace(new, decorations_intact=state.decorations_intact - {pos})
        elif pos == layout.mail and state.mail_remaining > 0:
            new = replace(
                new,
                mail_remaining=state.mail_remaining - 1,
                mail_carried=state.mail_carried + 1,
            )
        elif pos == layout.coffee:
            new = replace(new, coffees_carried=state.coffees_carried + 1)
        elif pos == layout.delivery:
            if state.mail_carried > 0 and state.coffees_carried > 0:
                new = replace(
                    new,
                    mail_carried=state.mail_carried - 1,
                    coffees_carried=state.coffees_carried - 1,
                )
        return new

    def label(self, state, action, state2):
        pos = state2.pos
        if pos == state.pos:
            return frozenset()
        layout = self.config.layout
        if pos in state.decorations_intact:
            return frozenset(("Dk",))
        if pos == layout.mail:
            return frozenset(("M",) if state.mail_remaining > 0 else ("EM",))
        if pos == layout.coffee:
            return frozenset(("Cf",))
        if pos == layout.delivery:
            # Emitted on every entry: premature visits are the machine's
            # call to punish or ignore, not the environment's to hide.
            return frozenset(("Pd",))
        return frozenset()

    def obs_key(self, state):
        """Position only: task progress lives in the machine configuration."""
        return state.pos
