"""Fitness evaluation for the two benchmark problems.

Multiplexer trees are evaluated on all fitness cases at once: every input
variable is a truth table packed into one Python integer (bit ``i`` is the
variable's value in case ``i``), so AND/OR/NOT/IF are single big-integer
operations and hits are a popcount.
"""
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

from voluntier.errors import ConfigurationError, UnsupportedProblemError
from voluntier.gp.primitives import MAX_MULTIPLEXER_VARIABLES, PrimitiveSet, ProblemKind
from voluntier.gp.tree import ProgramTree

TRAIL_SIZE = 32
SANTA_FE_FOOD = 89
DEFAULT_TRAIL = "santafe.trail"
SANTA_FE_SET = PrimitiveSet.santa_fe()


@dataclass(frozen=True)
class EvalReport:
    hits: int
    total_cases: int

    @property
    def raw_errors(self) -> int:
        return self.total_cases - self.hits

    @property
    def raw(self) -> float:
        return float(self.raw_errors)

    @property
    def adjusted_exact(self) -> Fraction:
        return Fraction(1, 1 + self.raw_errors)

    @property
    def adjusted(self) -> float:
        # One correctly rounded conversion of the exact rational
        return float(self.adjusted_exact)

    @property
    def perfect(self) -> bool:
        return self.hits == self.total_cases

    def as_dict(self) -> Dict[str, object]:
        return {"hits": self.hits, "raw": self.raw, "adjusted": self.adjusted, "total_cases": self.total_cases}


# ---------- Boolean multiplexer ----------

def multiplexer_cases(k: int) -> int:
    return 2 ** (k + 2 ** k)


def _variable_table(position: int, n_cases: int) -> int:
    half = 1 << position
    period = half << 1
    block = ((1 << half) - 1) << half
    return block * (((1 << n_cases) - 1) // ((1 << period) - 1))


@lru_cache(maxsize=8)
def multiplexer_tables(k: int) -> Tuple[Dict[str, int], int, int]:
    """Truth tables for a0..a(k-1), d0..d(2^k-1), plus the target and the all-cases mask.

    Case ``i`` assigns a_j = bit j of i and d_m = bit (k + m) of i.
    """
    if k < 1:
        raise ConfigurationError("multiplexer needs at least one address bit")
    if 2 ** k + k > MAX_MULTIPLEXER_VARIABLES:
        raise UnsupportedProblemError(f"{k}-address multiplexer has more than "
                                      f"2^{MAX_MULTIPLEXER_VARIABLES} fitness cases")
    n_cases = multiplexer_cases(k)
    mask = (1 << n_cases) - 1
    tables = {f"a{j}": _variable_table(j, n_cases) for j in range(k)}
    for m in range(2 ** k):
        tables[f"d{m}"] = _variable_table(k + m, n_cases)
    target = 0
    for m in range(2 ** k):
        selected = tables[f"d{m}"]
        for j in range(k):
            bit = tables[f"a{j}"]
            selected &= bit if (m >> j) & 1 else mask ^ bit
        target |= selected
    return tables, target, mask


def multiplexer_outputs(tree: ProgramTree, k: int) -> int:
    tables, _, mask = multiplexer_tables(k)
    stack: List[int] = []
    push = stack.append
    pop = stack.pop
    for name in reversed(tree.nodes):
        value = tables.get(name)
        if value is not None:
            push(value)
        elif name == "AND":
            push(pop() & pop())
        elif name == "OR":
            push(pop() | pop())
        elif name == "NOT":
            push(mask ^ pop())
        elif name == "IF":
            cond = pop()
            then = pop()
            other = pop()
            push((cond & then) | ((mask ^ cond) & other))
        else:
            raise ConfigurationError(f"{name!r} is not a {k}-multiplexer primitive")
    return stack[0]


def evaluate_multiplexer(tree: ProgramTree, k: int) -> EvalReport:
    tables, target, mask = multiplexer_tables(k)
    wrong = (multiplexer_outputs(tree, k) ^ target) & mask
    n_cases = multiplexer_cases(k)
    return EvalReport(hits=n_cases - wrong.bit_count(), total_cases=n_cases)


# ---------- Artificial ant ----------

# Headings in clockwise order: east, south, west, north
_HEADINGS = ((0, 1), (1, 0), (0, -1), (-1, 0))


@dataclass(frozen=True)
class Trail:
    food: FrozenSet[Tuple[int, int]]
    start: Tuple[int, int]
    size: int = TRAIL_SIZE

    @property
    def total_food(self) -> int:
        return len(self.food)


def parse_trail(text: str) -> Trail:
    rows = [line.rstrip("\r") for line in text.splitlines() if line.strip()]
    if len(rows) != TRAIL_SIZE or any(len(row) != TRAIL_SIZE for row in rows):
        raise ConfigurationError(f"trail must be {TRAIL_SIZE} lines of {TRAIL_SIZE} characters")
    food = set()
    start: Optional[Tuple[int, int]] = None
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            if cell == "#":
                food.add((r, c))
            elif cell == "S":
                start = (r, c)
            elif cell != ".":
                raise ConfigurationError(f"unexpected trail character {cell!r} at {r},{c}")
    if start is None:
        raise ConfigurationError("trail has no start cell")
    if len(food) != SANTA_FE_FOOD:
        raise ConfigurationError(f"trail has {len(food)} food pellets, expected {SANTA_FE_FOOD}")
    return Trail(food=frozenset(food), start=start)


@lru_cache(maxsize=4)
def load_trail(path: Optional[str] = None) -> Trail:
    if path is None:
        resource = resources.files("voluntier.gp") / "data" / DEFAULT_TRAIL
        if not resource.is_file():
            raise ConfigurationError(f"trail data file missing: {DEFAULT_TRAIL}")
        return parse_trail(resource.read_text(encoding="utf-8"))
    trail_path = Path(path)
    if not trail_path.is_file():
        raise ConfigurationError(f"trail data file missing: {path}")
    return parse_trail(trail_path.read_text(encoding="utf-8"))


class _Ant:
    __slots__ = ("row", "col", "heading", "steps", "limit", "eaten", "remaining", "size")

    def __init__(self, trail: Trail, steps_limit: int):
        self.row, self.col = trail.start
        self.heading = 0
        self.steps = 0
        self.limit = steps_limit
        self.eaten = 0
        self.remaining = set(trail.food)
        self.size = trail.size

    def ahead(self) -> Tuple[int, int]:
        dr, dc = _HEADINGS[self.heading]
        return (self.row + dr) % self.size, (self.col + dc) % self.size

    def done(self) -> bool:
        return self.steps >= self.limit or not self.remaining


def _run_ant(nodes: Tuple[str, ...], ends: List[int], ant: _Ant, index: int) -> None:
    name = nodes[index]
    if name == "IF-FOOD-AHEAD":
        if ant.ahead() in ant.remaining:
            _run_ant(nodes, ends, ant, index + 1)
        else:
            _run_ant(nodes, ends, ant, ends[index + 1])
    elif name == "PROGN2" or name == "PROGN3":
        child = index + 1
        for _ in range(2 if name == "PROGN2" else 3):
            if ant.done():
                return
            _run_ant(nodes, ends, ant, child)
            child = ends[child]
    elif not ant.done():
        ant.steps += 1
        if name == "MOVE":
            ant.row, ant.col = ant.ahead()
            if (ant.row, ant.col) in ant.remaining:
                ant.remaining.discard((ant.row, ant.col))
                ant.eaten += 1
        elif name == "LEFT":
            ant.heading = (ant.heading - 1) % 4
        elif name == "RIGHT":
            ant.heading = (ant.heading + 1) % 4
        else:
            raise ConfigurationError(f"{name!r} is not an ant primitive")


def evaluate_santa_fe(tree: ProgramTree, steps_limit: int = 400, trail: Optional[Trail] = None) -> EvalReport:
    """Run the program from the root repeatedly until the step budget or the food runs out.

    MOVE, LEFT and RIGHT each cost one step; sensing is free.
    """
    trail = trail or load_trail()
    ends = tree.subtree_ends(SANTA_FE_SET)
    ant = _Ant(trail, steps_limit)
    while not ant.done():
        _run_ant(tree.nodes, ends, ant, 0)
    return EvalReport(hits=ant.eaten, total_cases=trail.total_food)


def evaluate(tree: ProgramTree, pset: PrimitiveSet, steps_limit: int = 400, trail: Optional[Trail] = None) -> EvalReport:
    if pset.problem is ProblemKind.MULTIPLEXER:
        return evaluate_multiplexer(tree, pset.address_bits)
    return evaluate_santa_fe(tree, steps_limit, trail)
