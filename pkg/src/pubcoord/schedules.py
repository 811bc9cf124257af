from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class LinearSchedule:
    """Decays linearly from ``initial`` to exactly 0 at episode ``horizon``."""

    initial: float
    horizon: int

    def __call__(self, episode: int) -> float:
        if self.horizon <= 0 or episode >= self.horizon:
            return 0.0
        return self.initial * (1.0 - episode / self.horizon)


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, episode: int) -> float:
        return self.value
