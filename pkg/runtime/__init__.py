from runtime.errors import NotReadyError, PeerUnreachableError, ProtocolError, RuntimeProtocolError, UnknownTaskError
from runtime.node import NodeTrainer
from runtime.report import StalenessReport, staleness_report
from runtime.server import PredictionServer, PredictionSnapshot
from runtime.transport import HttpTransport, InProcessTransport, PeerClient
from runtime.wire import Message, MessageKind, decode_message, encode_message

__all__ = [
    "HttpTransport",
    "InProcessTransport",
    "Message",
    "MessageKind",
    "NodeTrainer",
    "NotReadyError",
    "PeerClient",
    "PeerUnreachableError",
    "PredictionServer",
    "PredictionSnapshot",
    "ProtocolError",
    "RuntimeProtocolError",
    "StalenessReport",
    "UnknownTaskError",
    "decode_message",
    "encode_message",
    "staleness_report",
]
