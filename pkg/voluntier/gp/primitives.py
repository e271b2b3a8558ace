from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

from voluntier.errors import ConfigurationError

# address plus data lines of the largest multiplexer whose truth tables are built
MAX_MULTIPLEXER_VARIABLES = 24


class ProblemKind(str, Enum):
    SANTA_FE = "santafe"
    MULTIPLEXER = "multiplexer"


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int


@dataclass(frozen=True)
class PrimitiveSet:
    problem: ProblemKind
    functions: Tuple[Primitive, ...]
    terminals: Tuple[Primitive, ...]
    address_bits: Optional[int] = None
    arities: Dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.terminals:
            raise ConfigurationError("primitive set has no terminals")
        for fn in self.functions:
            if fn.arity < 1:
                raise ConfigurationError(f"function {fn.name} must take at least one argument")
        for term in self.terminals:
            if term.arity != 0:
                raise ConfigurationError(f"terminal {term.name} cannot take arguments")
        names = [p.name for p in self.functions + self.terminals]
        if len(set(names)) != len(names):
            raise ConfigurationError("primitive names must be unique")
        if self.problem is ProblemKind.MULTIPLEXER:
            k = self.address_bits
            if k is None or k < 1:
                raise ConfigurationError("multiplexer needs at least one address bit")
            if len(self.terminals) != k + 2 ** k:
                raise ConfigurationError(f"{k}-address multiplexer needs {k + 2 ** k} terminals")
        object.__setattr__(self, "arities", {p.name: p.arity for p in self.functions + self.terminals})

    @property
    def problem_id(self) -> str:
        if self.problem is ProblemKind.MULTIPLEXER:
            return f"multiplexer-{self.address_bits}"
        return self.problem.value

    @property
    def function_names(self) -> Tuple[str, ...]:
        return tuple(p.name for p in self.functions)

    @property
    def terminal_names(self) -> Tuple[str, ...]:
        return tuple(p.name for p in self.terminals)

    def arity(self, name: str) -> int:
        try:
            return self.arities[name]
        except KeyError:
            raise ConfigurationError(f"{name!r} is not in the {self.problem_id} primitive set") from None

    @classmethod
    def santa_fe(cls) -> "PrimitiveSet":
        return cls(
            problem=ProblemKind.SANTA_FE,
            functions=(Primitive("IF-FOOD-AHEAD", 2), Primitive("PROGN2", 2), Primitive("PROGN3", 3)),
            terminals=(Primitive("MOVE", 0), Primitive("LEFT", 0), Primitive("RIGHT", 0)),
        )

    @classmethod
    def multiplexer(cls, k: int) -> "PrimitiveSet":
        if k < 1:
            raise ConfigurationError("multiplexer needs at least one address bit")
        terminals = tuple(Primitive(f"a{i}", 0) for i in range(k)) + tuple(
            Primitive(f"d{i}", 0) for i in range(2 ** k)
        )
        return cls(
            problem=ProblemKind.MULTIPLEXER,
            functions=(Primitive("AND", 2), Primitive("OR", 2), Primitive("NOT", 1), Primitive("IF", 3)),
            terminals=terminals,
            address_bits=k,
        )
