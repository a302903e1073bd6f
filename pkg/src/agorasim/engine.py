"""Engine façade: one virtual-day clock driving every module, a single trace
recorder, labeled PRNG sub-streams, and a per-day conservation checkpoint.

Single-writer by construction: every mutation funnels through this object on
one thread. Distinct engines (distinct scenarios) never share state.
"""

from __future__ import annotations

import hashlib
import random

from .arbitration import ArbitrationModule
from .config import EngineConfig
from .errors import ClockRegression, ConservationViolation
from .exchange import ExchangeModule
from .governance import GovernanceModule
from .incentives import RewardGranter
from .ledger import Account, Ledger, TokenKind
from .reputation import ReputationBook
from .trace import TraceRecorder, canonical


def substream(seed: int, label: str) -> random.Random:
    """Independent, reproducible PRNG stream for one concern. Adding draws in
    one stream never perturbs another."""
    material = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return random.Random(int.from_bytes(material[:8], "big"))


class MarketEngine:
    def __init__(self, config: EngineConfig | None = None, seed: int = 0,
                 scenario_name: str | None = None,
                 rule_overrides: dict | None = None):
        self.config = (config or EngineConfig()).check()
        self.seed = seed
        self.day = 0
        config_digest = hashlib.sha256(
            canonical(self.config.to_dict()).encode()).hexdigest()
        self.trace = TraceRecorder(seed=seed, scenario=scenario_name,
                                   config_digest=config_digest)
        clock = lambda: self.day  # noqa: E731

        self.ledger = Ledger(self.config, trace=self.trace)
        self.reputation = ReputationBook(self.config, trace=self.trace)
        self.rewards = RewardGranter(self.config, self.ledger, trace=self.trace)
        self.exchange = ExchangeModule(
            self.config, self.ledger, self.reputation, self.rewards,
            qr_rng=substream(seed, "qr-nonce"), trace=self.trace, clock=clock)
        self.arbitration = ArbitrationModule(
            self.config, self.ledger, self.exchange, self.reputation,
            juror_rng=substream(seed, "juror-draw"), trace=self.trace,
            clock=clock, rule_overrides=rule_overrides)
        self.governance = GovernanceModule(
            self.config, self.ledger, self.reputation, trace=self.trace,
            clock=clock)
        self.strategy_rng = substream(seed, "mixed-strategy")

    # --- accounts ---

    def create_account(self, kind_hint: str = "neutral",
                       account_id: str | None = None) -> Account:
        account = self.ledger.create_account(kind_hint, account_id)
        self.reputation.init_reputation(account.id)
        return account

    def fund(self, account_id: str, token: TokenKind, amount: int,
             reason: str = "genesis"):
        self.ledger.mint(self.ledger.get(account_id), token, amount, reason)

    # --- clock ---

    def tick(self, to_day: int) -> list:
        """Advance one day at a time, firing every due timeout in
        deterministic order; idempotent when re-invoked at the same day."""
        if to_day < self.day:
            raise ClockRegression(f"cannot move from day {self.day} back "
                                  f"to {to_day}")
        fired = []
        while self.day < to_day:
            self.day += 1
            self.trace.day = self.day
            fired.extend(self.exchange.tick_day(self.day))
            fired.extend(self.arbitration.tick_day(self.day))
            fired.extend(self.governance.tick_day(self.day))
        return fired

    def checkpoint(self):
        """Assert the conservation identity and log the per-token totals."""
        try:
            self.ledger.assert_conservation()
        except ConservationViolation:
            self.trace.emit("engine", "panic",
                            {"report": self.ledger.conservation_report()})
            raise
        self.trace.emit("engine", "conservation",
                        self.ledger.conservation_report())

    # --- reporting ---

    def snapshot(self) -> dict:
        return self.ledger.snapshot(reputation=self.reputation,
                                    layers=self.governance.layer_of)

    def summary(self) -> dict:
        lzsp_minted = self.ledger.minted[TokenKind.LZSP]
        return {
            "day": self.day,
            "exchanges": self.exchange.outcome_summary(),
            "disputes": self.arbitration.ruling_summary(),
            "lzsp_minted": lzsp_minted,
            "reputation": self.reputation.distribution(),
            "proposals": {p.id: p.state
                          for p in self.governance.proposals.values()},
        }
