"""Gateway/device protocol: message schema, transports, frequency estimation."""

from .estimate import FrequencyEstimate, estimate_dfwf
from .messages import (
    AnomalyAlert,
    DataPacket,
    FrameReader,
    Message,
    Reconfigure,
    Register,
    VUpdate,
    ZBroadcast,
    decode_message,
    encode_message,
)
from .session import DeviceSpec, SessionLog, run_simulated_session
from .transport import TransportProfile

__all__ = [
    "AnomalyAlert",
    "DataPacket",
    "DeviceSpec",
    "FrameReader",
    "FrequencyEstimate",
    "Message",
    "Reconfigure",
    "Register",
    "SessionLog",
    "TransportProfile",
    "VUpdate",
    "ZBroadcast",
    "decode_message",
    "encode_message",
    "estimate_dfwf",
    "run_simulated_session",
]
