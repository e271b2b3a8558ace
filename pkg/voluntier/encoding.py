import json
from typing import Any


def canonical_json(document: Any) -> bytes:
    """Byte-deterministic JSON: sorted keys, no whitespace, ASCII only."""
    return json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")
