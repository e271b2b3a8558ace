import time


class SystemClock:
    def __call__(self) -> float:
        return time.time()


class VirtualClock:
    """Manually advanced clock; the simulator and tests drive the server with it."""

    def __init__(self, start: float = 0.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> float:
        self.now += seconds
        return self.now

    def set(self, when: float) -> None:
        if when < self.now:
            raise ValueError("virtual time cannot go backwards")
        self.now = when
