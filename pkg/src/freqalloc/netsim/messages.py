"""Wire message schema and framing.

Frames are length-prefixed, line-delimited JSON records, identical bytes on
both transports: ``b"<payload-length>:<json>\\n"``. Floats serialize via
``repr`` and round-trip exactly.

Privacy constraints baked into the schema: registration never carries the
utility function, and per-iteration updates carry only v = x + u, never x or
u separately.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Union


class WireFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Register:
    device_id: str
    a_i: float
    gamma_i: float


@dataclass(frozen=True)
class VUpdate:
    device_id: str
    iteration: int
    v_i: float


@dataclass(frozen=True)
class ZBroadcast:
    iteration: int
    z_i: float
    final: bool = False


@dataclass(frozen=True)
class DataPacket:
    device_id: str
    timestamp: float
    payload_size: float


@dataclass(frozen=True)
class Reconfigure:
    c_delta: float = 0.0
    d_delta: float = 0.0


@dataclass(frozen=True)
class AnomalyAlert:
    device_id: str
    detail: str


Message = Union[Register, VUpdate, ZBroadcast, DataPacket, Reconfigure, AnomalyAlert]

_KINDS = {
    "register": Register,
    "v_update": VUpdate,
    "z_broadcast": ZBroadcast,
    "data_packet": DataPacket,
    "reconfigure": Reconfigure,
    "anomaly_alert": AnomalyAlert,
}
_NAMES = {cls: name for name, cls in _KINDS.items()}


def encode_message(msg: Message) -> bytes:
    body = dict(kind=_NAMES[type(msg)], **asdict(msg))
    payload = json.dumps(body, separators=(",", ":"), sort_keys=True)
    return f"{len(payload)}:{payload}\n".encode("utf-8")


def decode_message(frame: bytes) -> Message:
    text = frame.decode("utf-8")
    if not text.endswith("\n"):
        raise WireFormatError("frame missing newline terminator")
    length, sep, payload = text[:-1].partition(":")
    if not sep:
        raise WireFormatError("frame missing length prefix")
    try:
        n = int(length)
    except ValueError as exc:
        raise WireFormatError(f"bad length prefix {length!r}") from exc
    if n != len(payload):
        raise WireFormatError(f"length prefix {n} != payload length {len(payload)}")
    try:
        body = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise WireFormatError(str(exc)) from exc
    kind = body.pop("kind", None)
    cls = _KINDS.get(kind)
    if cls is None:
        raise WireFormatError(f"unknown message kind {kind!r}")
    try:
        return cls(**body)
    except TypeError as exc:
        raise WireFormatError(str(exc)) from exc


class FrameReader:
    """Incremental frame splitter for stream transports."""

    def __init__(self) -> None:
        self._buf = b""

    def feed(self, data: bytes) -> list[Message]:
        self._buf += data
        out: list[Message] = []
        while True:
            idx = self._buf.find(b"\n")
            if idx < 0:
                break
            frame, self._buf = self._buf[: idx + 1], self._buf[idx + 1 :]
            out.append(decode_message(frame))
        return out
