"""Transport profiles: deterministic simulated channel vs real stream sockets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODE_SIMULATED = "sim"
MODE_SOCKET = "socket"


@dataclass(frozen=True)
class TransportProfile:
    """Delay model shared by both transports.

    Per-packet overhead is base_delay + jitter*U[-1, 1] milliseconds; the
    per_device_delay_ms map overrides base_delay for named devices. Simulated
    mode is fully deterministic given the seed. time_scale compresses real
    sleeps in socket mode (a scale of 100 runs 100x faster than wall time).
    """

    mode: str = MODE_SIMULATED
    base_delay_ms: float = 0.0
    jitter_ms: float = 0.0
    seed: int = 0
    time_scale: float = 100.0
    per_device_delay_ms: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (MODE_SIMULATED, MODE_SOCKET):
            raise ValueError(f"unknown transport mode {self.mode!r}")
        if self.base_delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delays must be nonnegative")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def delay_s(self, rng: np.random.Generator, device_id: str) -> float:
        """One per-packet overhead draw, in seconds."""
        base = self.per_device_delay_ms.get(device_id, self.base_delay_ms)
        jit = self.jitter_ms * float(rng.uniform(-1.0, 1.0)) if self.jitter_ms else 0.0
        return max(base + jit, 0.0) / 1000.0

    @property
    def zero_delay(self) -> bool:
        return (
            self.base_delay_ms == 0.0
            and self.jitter_ms == 0.0
            and not self.per_device_delay_ms
        )
