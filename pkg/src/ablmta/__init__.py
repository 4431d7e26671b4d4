"""SMTP receiving server whose dialogue is shaped by an active blacklist.

Spammers are learned mid-dialogue: the first detected message is
accepted (and recorded), every later attempt is refused at the earliest
possible point of the SMTP exchange, and each refused attempt pushes the
blacklist entry's expiry further out. The package also ships a
deterministic traffic simulator that measures the bandwidth this saves
against an identical server with the blacklist disabled.
"""

__version__ = "0.1.0"

from .classifier import HookClassifier, KeywordClassifier, SpamVerdict
from .config import ConfigError, ServerConfig, resolve_server_config
from .protocol import ParseError, Reply, parse_command, parse_reply, render_reply
from .server import Metrics, MtaServer, run_server
from .session import Phase, PolicyMode, RejectPolicy, SessionState
from .sim import ScenarioConfig, SimReport, load_scenario, run_scenario, write_report
from .store import (
    AblEntry,
    BlacklistStore,
    FormatError,
    NoLiveEntry,
    SenderIdentity,
    TtlPolicy,
    UnsupportedVersion,
    Verdict,
)

__all__ = [
    "AblEntry",
    "BlacklistStore",
    "ConfigError",
    "FormatError",
    "HookClassifier",
    "KeywordClassifier",
    "Metrics",
    "MtaServer",
    "NoLiveEntry",
    "ParseError",
    "Phase",
    "PolicyMode",
    "RejectPolicy",
    "Reply",
    "ScenarioConfig",
    "SenderIdentity",
    "ServerConfig",
    "SessionState",
    "SimReport",
    "SpamVerdict",
    "TtlPolicy",
    "UnsupportedVersion",
    "Verdict",
    "load_scenario",
    "parse_command",
    "parse_reply",
    "render_reply",
    "resolve_server_config",
    "run_scenario",
    "run_server",
    "write_report",
    "__version__",
]
