"""Z-Wave frame codec and simulator for two gateway denial-of-service attacks:
Routed Noncense (self-addressed Nonce Get) and Power of NOPe (forged Find
Nodes In Range)."""

from .codec import (
    Ack,
    AppCommand,
    CommandComplete,
    CommandIds,
    FindNodesInRange,
    Frame,
    FrameControl,
    FrameError,
    HeaderType,
    NonceGet,
    NonceReport,
    NopPower,
    S2NonceGet,
    S2NonceReport,
    checksum,
    decode_frame,
    encode_frame,
    mask_to_nodes,
    parse_command,
    serialize_command,
)
from .engine import RunMetrics, Simulator, run
from .scenario import Scenario, load_scenario, parse_scenario

__version__ = "0.1.0"
