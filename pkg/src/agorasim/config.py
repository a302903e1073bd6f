"""Engine configuration: every protocol threshold, window, rate and reward.

All token amounts are 64-bit integer micro-units (1 token = 10**6 micro); all
rates are exact Fractions so USD comparisons and conversions never drift.
Governance proposals mutate these values at execute time through the
patchable-key registry at the bottom of this module.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

MICRO = 1_000_000


def tokens(n) -> int:
    """Whole-or-fractional token count -> integer micro-units (exact)."""
    f = Fraction(str(n)) * MICRO
    if f.denominator != 1:
        raise ValueError(f"amount {n} is finer than one micro-unit")
    return int(f)


def frac(x) -> Fraction:
    """Exact Fraction from int/float/str/Fraction (floats go through str)."""
    if isinstance(x, Fraction):
        return x
    return Fraction(str(x))


@dataclass
class DeadlineConfig:
    """Day windows for the exchange flow, anchored at per-session event times.

    dropoff_window        seller must drop the package off within this many
                          days of escrow funding
    confirm_window        buyer must confirm receipt or claim within this many
                          days of the tracking number being informed
    qr_response_window    seller must answer a missing-QR query within this
                          many days of the query
    satisfaction_window   buyer must answer the satisfaction question within
                          this many days of confirming receipt
    resolution_window     both parties must settle a dissatisfaction within
                          this many days of the negative answer
    return_cancel_window  post-delivery cancellation allowed until this many
                          days after tracking was informed
    late_cancel_window    post-settlement cancellation allowed until this many
                          days after tracking was informed
    """

    dropoff_window: int = 5
    confirm_window: int = 10
    qr_response_window: int = 3
    satisfaction_window: int = 7
    resolution_window: int = 7
    return_cancel_window: int = 14
    late_cancel_window: int = 30
    # Not in the core flow: stages the protocol leaves open-ended get bounded
    # so no session can livelock.
    pre_escrow_window: int = 2
    return_flow_window: int = 21
    tracking_grace_window: int = 10

    def validate(self) -> list[str]:
        problems = []
        for f_ in dataclasses.fields(self):
            v = getattr(self, f_.name)
            if not isinstance(v, int) or v < 1:
                problems.append(f"deadlines.{f_.name} must be an integer >= 1, got {v!r}")
        if self.qr_response_window >= self.confirm_window:
            problems.append(
                "deadlines.qr_response_window must be strictly smaller than "
                "deadlines.confirm_window so a missing-QR reply always fits "
                "inside the buyer confirmation window"
            )
        return problems

    def livelock_bound(self) -> int:
        """Days after which any untouched session must be terminal or disputed."""
        return (
            self.dropoff_window
            + self.confirm_window
            + self.qr_response_window
            + self.satisfaction_window
            + self.resolution_window
            + self.return_cancel_window
            + self.late_cancel_window
            + 5
        )


@dataclass
class StakeConfig:
    seller_minimum: int = tokens(500)   # LZS micro-units
    duration_days: int = 90
    yield_fraction: Fraction = Fraction(0)

    def validate(self) -> list[str]:
        problems = []
        if self.seller_minimum < 0:
            problems.append("stake.seller_minimum must be >= 0")
        if self.duration_days < 1:
            problems.append("stake.duration_days must be >= 1")
        if self.yield_fraction < 0:
            problems.append("stake.yield_fraction must be >= 0")
        return problems


@dataclass
class RateConfig:
    lzs_per_lzdc: Fraction = Fraction(1)   # 1 LZDC buys this many LZS
    usd_per_lzs: Fraction = Fraction(1)
    usd_per_lzdc: Fraction = Fraction(1)   # fixed peg

    def validate(self) -> list[str]:
        problems = []
        if self.lzs_per_lzdc <= 0:
            problems.append("rates.lzs_per_lzdc must be > 0")
        if self.usd_per_lzs <= 0:
            problems.append("rates.usd_per_lzs must be > 0")
        if self.usd_per_lzdc <= 0:
            problems.append("rates.usd_per_lzdc must be > 0")
        return problems


@dataclass
class RewardConfig:
    """LZSP mint amounts per honest-behavior event (micro-units)."""

    buyer_confirm: int = tokens(10)      # on-time scan plus a satisfied answer
    mutual_resolution: int = tokens(5)   # each party, on resolving a dissatisfaction
    seller_exchange: int = tokens(5)     # seller, QR included and exchange successful
    default_grant: int = tokens(10)      # buyer, when the seller omitted the QR

    def validate(self) -> list[str]:
        return [
            f"rewards.{f_.name} must be >= 0"
            for f_ in dataclasses.fields(self)
            if getattr(self, f_.name) < 0
        ]


@dataclass
class ReputationConfig:
    initial: int = 50
    good_delta: int = 2
    bad_delta: int = 5
    qr_nonresponse_penalty: int = 5
    resolution_penalty: int = 2
    dispute_loss_penalty: int = 5

    def validate(self) -> list[str]:
        problems = []
        if not (0 <= self.initial <= 100):
            problems.append("reputation.initial must lie in [0, 100]")
        for name in ("good_delta", "bad_delta", "qr_nonresponse_penalty",
                     "resolution_penalty", "dispute_loss_penalty"):
            if getattr(self, name) < 0:
                problems.append(f"reputation.{name} must be >= 0")
        return problems


@dataclass
class ListingConfig:
    minimum_usd: Fraction = Fraction(20)

    def validate(self) -> list[str]:
        if self.minimum_usd < 0:
            return ["listing.minimum_usd must be >= 0"]
        return []


@dataclass
class ArbitrationConfig:
    internal_threshold_usd: Fraction = Fraction(50)
    evidence_period_days: int = 5
    commit_period_days: int = 3
    reveal_period_days: int = 3
    appeal_window_days: int = 3
    base_jurors: int = 3
    fee_per_juror: int = tokens(1)          # LZS micro-units
    nonreveal_slash_fraction: Fraction = Fraction(30, 100)
    slash_stake_on_ruling: bool = True

    def validate(self) -> list[str]:
        problems = []
        if self.internal_threshold_usd < 0:
            problems.append("arbitration.internal_threshold_usd must be >= 0")
        for name in ("evidence_period_days", "commit_period_days",
                     "reveal_period_days", "appeal_window_days"):
            if getattr(self, name) < 1:
                problems.append(f"arbitration.{name} must be >= 1")
        if self.base_jurors < 1:
            problems.append("arbitration.base_jurors must be >= 1")
        if self.fee_per_juror < 0:
            problems.append("arbitration.fee_per_juror must be >= 0")
        if not (0 <= self.nonreveal_slash_fraction <= 1):
            problems.append("arbitration.nonreveal_slash_fraction must lie in [0, 1]")
        return problems


@dataclass
class GovernanceConfig:
    proposal_fee: int = tokens(10)            # LZSP, burned at submission
    vote_cap: int = tokens(1000)              # LZSP weight cap per voter
    quorum_fraction: Fraction = Fraction(10, 100)  # of circulating LZSP
    low_medium_period_days: int = 7
    high_period_days: int = 30
    veto_window_days: int = 3
    membership_lzsp: int = tokens(100)
    membership_reputation: int = 40
    committee_size: int = 5
    committee_quorum_fraction: Fraction = Fraction(80, 100)
    committee_agreement_fraction: Fraction = Fraction(50, 100)
    committee_agreement_strict: bool = False  # False: >= reading of the minimum
    committee_term_days: int = 3 * 365
    miscategorization_fee_fraction: Fraction = Fraction(50, 100)
    blacklist_tiers_days: tuple = (7, 30)     # then permanent

    def validate(self) -> list[str]:
        problems = []
        for name in ("proposal_fee", "vote_cap", "membership_lzsp"):
            if getattr(self, name) < 0:
                problems.append(f"governance.{name} must be >= 0")
        for name in ("low_medium_period_days", "high_period_days",
                     "veto_window_days", "committee_term_days"):
            if getattr(self, name) < 1:
                problems.append(f"governance.{name} must be >= 1")
        if not (0 <= self.quorum_fraction <= 1):
            problems.append("governance.quorum_fraction must lie in [0, 1]")
        if self.committee_size < 1:
            problems.append("governance.committee_size must be >= 1")
        for name in ("committee_quorum_fraction", "committee_agreement_fraction",
                     "miscategorization_fee_fraction"):
            if not (0 <= getattr(self, name) <= 1):
                problems.append(f"governance.{name} must lie in [0, 1]")
        if not (0 <= self.membership_reputation <= 100):
            problems.append("governance.membership_reputation must lie in [0, 100]")
        return problems


@dataclass
class EngineConfig:
    deadlines: DeadlineConfig = field(default_factory=DeadlineConfig)
    stake: StakeConfig = field(default_factory=StakeConfig)
    rates: RateConfig = field(default_factory=RateConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    reputation: ReputationConfig = field(default_factory=ReputationConfig)
    listing: ListingConfig = field(default_factory=ListingConfig)
    arbitration: ArbitrationConfig = field(default_factory=ArbitrationConfig)
    governance: GovernanceConfig = field(default_factory=GovernanceConfig)
    categories: tuple = ("general", "electronics", "collectibles", "apparel", "books")

    def validate(self) -> list[str]:
        problems = []
        for section in ("deadlines", "stake", "rates", "rewards", "reputation",
                        "listing", "arbitration", "governance"):
            problems.extend(getattr(self, section).validate())
        if not self.categories:
            problems.append("categories must be non-empty")
        return problems

    def check(self) -> "EngineConfig":
        problems = self.validate()
        if problems:
            raise ValueError("invalid configuration: " + "; ".join(problems))
        return self

    # --- USD equivalence, evaluated at call time against current rates ---

    def usd_value(self, amount_micro: int, token) -> Fraction:
        from .ledger import TokenKind
        per_token = {
            TokenKind.LZS: self.rates.usd_per_lzs,
            TokenKind.LZDC: self.rates.usd_per_lzdc,
        }
        if token not in per_token:
            raise ValueError(f"{token} has no USD quote")
        return Fraction(amount_micro, MICRO) * per_token[token]

    # --- serialization (trace header, service responses) ---

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_overrides(cls, overrides: dict | None) -> "EngineConfig":
        """Build a config from nested partial overrides; unknown keys raise."""
        cfg = cls()
        for section, values in (overrides or {}).items():
            if not hasattr(cfg, section) or not dataclasses.is_dataclass(getattr(cfg, section)):
                raise ValueError(f"unknown config section {section!r}")
            sub = getattr(cfg, section)
            for key, value in values.items():
                if not hasattr(sub, key):
                    raise ValueError(f"unknown config key {section}.{key}")
                setattr(sub, key, _coerce(getattr(sub, key), value))
        return cfg.check()

    def apply_patch(self, dotted_key: str, value: Any) -> None:
        """Mutate one patchable value; used by governance proposal execution."""
        if dotted_key not in PATCHABLE_KEYS:
            raise KeyError(f"{dotted_key!r} is not a patchable configuration key")
        section, key = dotted_key.split(".", 1)
        sub = getattr(self, section)
        setattr(sub, key, _coerce(getattr(sub, key), value))
        self.check()


def _coerce(current: Any, value: Any):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(current, Fraction):
        return frac(value)
    if isinstance(current, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ValueError(f"expected an integer, got {value!r}")
    if isinstance(current, tuple):
        return tuple(value)
    return value


def _plain(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# Keys a governance proposal may target. Kept deliberately narrower than the
# full config: identity-level knobs (committee size, micro-unit scale) are not
# up for on-the-fly mutation.
PATCHABLE_KEYS = frozenset({
    "deadlines.dropoff_window", "deadlines.confirm_window",
    "deadlines.qr_response_window", "deadlines.satisfaction_window",
    "deadlines.resolution_window", "deadlines.return_cancel_window",
    "deadlines.late_cancel_window", "deadlines.pre_escrow_window",
    "deadlines.return_flow_window", "deadlines.tracking_grace_window",
    "stake.seller_minimum", "stake.duration_days", "stake.yield_fraction",
    "rates.lzs_per_lzdc", "rates.usd_per_lzs",
    "rewards.buyer_confirm", "rewards.mutual_resolution",
    "rewards.seller_exchange", "rewards.default_grant",
    "reputation.good_delta", "reputation.bad_delta",
    "reputation.qr_nonresponse_penalty", "reputation.resolution_penalty",
    "reputation.dispute_loss_penalty",
    "listing.minimum_usd",
    "arbitration.internal_threshold_usd", "arbitration.evidence_period_days",
    "arbitration.fee_per_juror", "arbitration.nonreveal_slash_fraction",
    "governance.proposal_fee", "governance.vote_cap",
    "governance.quorum_fraction", "governance.membership_lzsp",
    "governance.membership_reputation", "governance.veto_window_days",
})
