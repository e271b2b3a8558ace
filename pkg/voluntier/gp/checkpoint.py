"""Checkpoint encoding and the on-disk sink used by GP runs.

A checkpoint is taken between generations, after breeding: it holds the
population that will be evaluated next, the generator state at that point
and everything accumulated so far. Restoring it and continuing is
indistinguishable from never having stopped.

Byte layout::

    VOLUNTIER-CHECKPOINT 1\\n
    <sha256 hex of body>\\n
    <canonical JSON body>
"""
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from common_utils.logger.client import LoggerClient

from voluntier.encoding import canonical_json
from voluntier.errors import CheckpointError

MAGIC = b"VOLUNTIER-CHECKPOINT 1\n"
_DIGEST_LEN = 64

logger = LoggerClient("voluntier-gp")


@dataclass
class Checkpoint:
    generation: int
    population: List[str]
    rng_state: Dict[str, Any]
    best: Optional[Dict[str, Any]]
    stats: List[Dict[str, Any]]
    evaluations: int
    params_digest: str
    cpu_time: float = 0.0


def checkpoint_save(state: Checkpoint) -> bytes:
    body = canonical_json(asdict(state))
    return MAGIC + hashlib.sha256(body).hexdigest().encode("ascii") + b"\n" + body


def checkpoint_load(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint (bad header)")
    start = len(MAGIC)
    if len(data) < start + _DIGEST_LEN + 1 or data[start + _DIGEST_LEN:start + _DIGEST_LEN + 1] != b"\n":
        raise CheckpointError("checkpoint truncated")
    expected = data[start:start + _DIGEST_LEN].decode("ascii", errors="replace")
    body = data[start + _DIGEST_LEN + 1:]
    if hashlib.sha256(body).hexdigest() != expected:
        raise CheckpointError("checkpoint digest mismatch")
    try:
        document = json.loads(body)
        return Checkpoint(**document)
    except (ValueError, TypeError) as e:
        raise CheckpointError(f"checkpoint body undecodable: {e}") from e


class CheckpointPolicy:
    """Due every ``every_generations`` generations or ``every_seconds`` seconds, whichever comes first."""

    def __init__(self, every_generations: int = 10, every_seconds: float = 60.0,
                 clock: Callable[[], float] = time.monotonic):
        if every_generations < 1:
            raise ValueError("every_generations must be at least 1")
        self.every_generations = every_generations
        self.every_seconds = every_seconds
        self.clock = clock
        self._last_generation = 0
        self._last_time = clock()

    def due(self, generation: int) -> bool:
        if generation - self._last_generation >= self.every_generations:
            return True
        return self.clock() - self._last_time >= self.every_seconds

    def mark(self, generation: int) -> None:
        self._last_generation = generation
        self._last_time = self.clock()


@dataclass
class MemoryCheckpointSink:
    saved: List[bytes] = field(default_factory=list)

    def save(self, state: Checkpoint) -> None:
        self.saved.append(checkpoint_save(state))

    def load(self) -> Optional[Checkpoint]:
        return checkpoint_load(self.saved[-1]) if self.saved else None


class FileCheckpointSink:
    """Writes checkpoints atomically: temp file, fsync, rename over the old one."""

    def __init__(self, path: str):
        self.path = Path(path)

    def save(self, state: Checkpoint) -> None:
        data = checkpoint_save(state)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_name(self.path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)
        logger.debug("Checkpoint written", {"path": str(self.path), "generation": state.generation})

    def load(self) -> Optional[Checkpoint]:
        if not self.path.exists():
            return None
        return checkpoint_load(self.path.read_bytes())

    def clear(self) -> None:
        for candidate in (self.path, self.path.with_name(self.path.name + ".tmp")):
            if candidate.exists():
                candidate.unlink()
