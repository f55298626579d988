"""Lightweight operation counters.

Used to prove that the visual path performs zero work in modes that must
not touch it. Counters are process-global and not thread-safe; they are a
test/diagnostic facility, not part of the hot path contract.
"""

_counters: dict[str, int] = {}

VISUAL_OPS = "visual_ops"


def bump(key: str, n: int = 1) -> None:
    _counters[key] = _counters.get(key, 0) + n


def read(key: str) -> int:
    return _counters.get(key, 0)


def reset(key: str | None = None) -> None:
    if key is None:
        _counters.clear()
    else:
        _counters.pop(key, None)
