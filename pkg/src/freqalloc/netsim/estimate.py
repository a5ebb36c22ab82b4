"""Gateway-side frequency estimation from timestamped packet arrivals."""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_WINDOW = 300


@dataclass(frozen=True)
class FrequencyEstimate:
    device_id: str
    window_packets: int
    estimated_hz: float
    delay_ms: float | None = None  # 1/actual - 1/theoretical, when known


def estimate_dfwf(
    timestamps: list[float],
    window: int = DEFAULT_WINDOW,
    device_id: str = "",
    theoretical_hz: float | None = None,
) -> FrequencyEstimate:
    """Average writing frequency over the trailing window of arrivals.

    estimated_hz = (n - 1) / (t_n - t_1) with n = min(window, available).
    """
    if len(timestamps) < 2:
        raise ValueError("at least two timestamps required")
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise ValueError("timestamps must be strictly increasing")
    tail = timestamps[-window:]
    n = len(tail)
    hz = (n - 1) / (tail[-1] - tail[0])
    delay_ms = None
    if theoretical_hz:
        delay_ms = (1.0 / hz - 1.0 / theoretical_hz) * 1000.0
    return FrequencyEstimate(
        device_id=device_id, window_packets=n, estimated_hz=hz, delay_ms=delay_ms
    )
