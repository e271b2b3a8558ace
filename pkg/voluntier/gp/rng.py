"""Portable random stream for GP runs.

Every draw is derived from the raw 64-bit outputs of numpy's PCG64 bit
generator (PCG XSL-RR 128/64), whose output stream is fixed across numpy
versions and platforms. Integer and float conversions are done here rather
than through ``numpy.random.Generator`` so results never depend on
Generator implementation details. Quorum validation compares outputs byte for
byte, so the algorithm is part of the protocol.
"""
from typing import Any, Dict, Sequence, TypeVar

import numpy as np

ALGORITHM = "pcg64"
_TWO_64 = 1 << 64
_FLOAT_SCALE = 1.0 / (1 << 53)

T = TypeVar("T")


class PortableRng:
    def __init__(self, seed: int):
        if not 0 <= seed < _TWO_64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self._bitgen = np.random.PCG64(seed)

    def next_u64(self) -> int:
        return int(self._bitgen.random_raw())

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection, so no modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _TWO_64 - (_TWO_64 % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def between(self, low: int, high: int) -> int:
        """Uniform integer in [low, high]."""
        return low + self.below(high - low + 1)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _FLOAT_SCALE

    def choice(self, items: Sequence[T]) -> T:
        return items[self.below(len(items))]

    def get_state(self) -> Dict[str, Any]:
        state = self._bitgen.state
        return {
            "algorithm": ALGORITHM,
            "state": int(state["state"]["state"]),
            "inc": int(state["state"]["inc"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    def set_state(self, state: Dict[str, Any]) -> None:
        if state.get("algorithm") != ALGORITHM:
            raise ValueError(f"unsupported generator {state.get('algorithm')!r}")
        self._bitgen.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(state["state"]), "inc": int(state["inc"])},
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "PortableRng":
        rng = cls(0)
        rng.set_state(state)
        return rng
