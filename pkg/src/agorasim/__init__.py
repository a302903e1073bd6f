"""agorasim: a deterministic escrowed P2P marketplace protocol engine with a
discrete-event simulation harness, two-tier dispute arbitration, DAO
governance, payoff analysis and transaction-value analytics."""

__version__ = "0.1.0"

from .config import EngineConfig, MICRO, tokens
from .engine import MarketEngine
from .ledger import TokenKind
from .scenario import SimScenario, load_scenario
from .simulate import RunResult, run
from .trace import verify_trace

__all__ = [
    "EngineConfig",
    "MICRO",
    "MarketEngine",
    "RunResult",
    "SimScenario",
    "TokenKind",
    "load_scenario",
    "run",
    "tokens",
    "verify_trace",
    "__version__",
]
