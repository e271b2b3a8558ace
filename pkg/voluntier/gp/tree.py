"""Program trees stored in prefix order.

A tree is the tuple of primitive names visited depth-first, left to right.
Arity lookups through the run's PrimitiveSet make the encoding unambiguous,
and subtrees are contiguous slices, which keeps crossover and mutation to
plain tuple splicing.
"""
import re
from dataclasses import dataclass
from typing import List, Tuple

from voluntier.errors import ConfigurationError
from voluntier.gp.primitives import PrimitiveSet

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


@dataclass(frozen=True)
class ProgramTree:
    nodes: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.nodes)

    def subtree_end(self, index: int, pset: PrimitiveSet) -> int:
        """Index one past the subtree rooted at ``index``."""
        arities = pset.arities
        need = 1
        j = index
        while need:
            need += arities[self.nodes[j]] - 1
            j += 1
        return j

    def subtree_ends(self, pset: PrimitiveSet) -> List[int]:
        arities = pset.arities
        ends = [0] * len(self.nodes)
        stack: List[int] = []
        for i in range(len(self.nodes) - 1, -1, -1):
            arity = arities[self.nodes[i]]
            if arity == 0:
                end = i + 1
            else:
                for _ in range(arity):
                    end = stack.pop()
            ends[i] = end
            stack.append(end)
        return ends

    def depth(self, pset: PrimitiveSet) -> int:
        """Longest root-to-leaf path in edges; a lone terminal has depth 0."""
        arities = pset.arities
        stack: List[int] = []
        for name in reversed(self.nodes):
            arity = arities[name]
            if arity == 0:
                stack.append(0)
            else:
                deepest = max(stack.pop() for _ in range(arity))
                stack.append(deepest + 1)
        return stack[0]

    def replace(self, start: int, end: int, subtree: Tuple[str, ...]) -> "ProgramTree":
        return ProgramTree(self.nodes[:start] + subtree + self.nodes[end:])

    def validate(self, pset: PrimitiveSet, max_depth: int = None) -> None:
        need = 1
        for position, name in enumerate(self.nodes):
            if need == 0:
                raise ConfigurationError(f"trailing nodes after complete tree at {position}")
            need += pset.arity(name) - 1
        if need != 0:
            raise ConfigurationError("tree is missing arguments")
        if max_depth is not None and self.depth(pset) > max_depth:
            raise ConfigurationError(f"tree deeper than {max_depth}")

    def to_prefix(self) -> str:
        return " ".join(self.nodes)

    @classmethod
    def from_prefix(cls, text: str, pset: PrimitiveSet) -> "ProgramTree":
        tree = cls(tuple(text.split()))
        tree.validate(pset)
        return tree

    def to_sexpr(self, pset: PrimitiveSet) -> str:
        out: List[str] = []
        pending: List[int] = []
        for name in self.nodes:
            arity = pset.arities[name]
            if arity:
                out.append(f"({name}")
                pending.append(arity)
                continue
            out.append(name)
            while pending:
                pending[-1] -= 1
                if pending[-1]:
                    break
                pending.pop()
                out[-1] += ")"
        return " ".join(out)

    @classmethod
    def parse_sexpr(cls, text: str, pset: PrimitiveSet) -> "ProgramTree":
        tokens = _TOKEN.findall(text)
        nodes: List[str] = []
        pos = 0

        def parse() -> None:
            nonlocal pos
            if pos >= len(tokens):
                raise ConfigurationError("unexpected end of expression")
            token = tokens[pos]
            pos += 1
            if token == "(":
                if pos >= len(tokens):
                    raise ConfigurationError("unexpected end of expression")
                name = tokens[pos]
                pos += 1
                arity = pset.arity(name)
                if arity == 0:
                    raise ConfigurationError(f"terminal {name} cannot be applied")
                nodes.append(name)
                for _ in range(arity):
                    parse()
                if pos >= len(tokens) or tokens[pos] != ")":
                    raise ConfigurationError(f"{name} expects {arity} arguments")
                pos += 1
            elif token == ")":
                raise ConfigurationError("unbalanced ')'")
            else:
                if pset.arity(token) != 0:
                    raise ConfigurationError(f"function {token} used without arguments")
                nodes.append(token)

        parse()
        if pos != len(tokens):
            raise ConfigurationError("trailing tokens after expression")
        return cls(tuple(nodes))
