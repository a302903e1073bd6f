"""Scenario files: a declarative seed + config + agents + scripted external
events. Loading is strict: unknown fields are rejected and every violation in
the file is reported, not just the first."""

from __future__ import annotations

import json
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError

from .config import EngineConfig, tokens
from .errors import ParseError, ScenarioValidationError

TokenName = Literal["LZS", "LZSP", "LZDC"]
Amount = Union[int, float, str]   # whole tokens; exact via Fraction(str())


class StrategySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["honest", "dishonest-seller", "dishonest-buyer", "mixed",
                  "scripted"] = "honest"
    variant: Optional[Literal["no-ship", "wrong-item", "qr-omit",
                              "false-claim", "never-confirm"]] = None
    p_honest: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class AgentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    role: Literal["buyer", "seller", "neutral", "juror"] = "neutral"
    balances: dict[TokenName, Amount] = Field(default_factory=dict)
    strategy: StrategySpec = Field(default_factory=StrategySpec)
    stake: Optional[Amount] = None          # seller deposit, whole tokens
    court_stake: Optional[Amount] = None    # juror stake, whole tokens
    payment_preference: Optional[Literal["LZS", "LZDC"]] = None
    juror_behavior: Literal["truthful", "silent"] = "truthful"


class _Event(BaseModel):
    model_config = ConfigDict(extra="forbid")

    day: int = Field(ge=0)


class ListEvent(_Event):
    type: Literal["list"]
    id: str
    seller: str
    price: Amount
    token: Literal["LZS", "LZDC"] = "LZS"
    category: str = "general"
    description: str = ""


class BuyEvent(_Event):
    type: Literal["buy"]
    session: str
    buyer: str
    listing: str


class SessionActionEvent(_Event):
    type: Literal["validate", "decline", "agree", "fund", "request-qr",
                  "deliver", "declare-lost", "resolve", "return-received",
                  "query-qr", "send-qr"]
    session: str


class DropoffEvent(_Event):
    type: Literal["dropoff"]
    session: str
    qr_included: bool = True
    tracking: Literal["informed", "declared-lost", "silent"] = "informed"
    number: Optional[str] = None


class InformTrackingEvent(_Event):
    type: Literal["inform-tracking"]
    session: str
    number: str


class ConfirmEvent(_Event):
    type: Literal["confirm"]
    session: str
    via: Literal["scan", "manual"] = "scan"


class SatisfyEvent(_Event):
    type: Literal["satisfy"]
    session: str
    satisfied: bool


class CancelEvent(_Event):
    type: Literal["cancel"]
    session: str
    party: str


class ClaimEvent(_Event):
    type: Literal["claim"]
    session: str
    claimant: str
    reason: Literal["wrong-description", "party-withdrew", "party-unresponsive",
                    "not-delivered", "wrong-or-empty-package", "defective-item"]
    prefer_external: bool = False


class AppealEvent(_Event):
    type: Literal["appeal"]
    session: str
    party: str


class FeedbackEvent(_Event):
    type: Literal["feedback"]
    session: str
    rater: str
    polarity: Literal["good", "bad"]
    comment: Optional[str] = None


class ProposeEvent(_Event):
    type: Literal["propose"]
    id: str
    proposer: str
    level: Literal["low-medium", "high"]
    targets: list[str]
    calldata: list
    description: str


class VoteEvent(_Event):
    type: Literal["vote"]
    proposal: str
    voter: str
    direction: Literal["up", "down"]


class ProposalStepEvent(_Event):
    type: Literal["finalize", "queue", "execute"]
    proposal: str


class CommitteeEvent(_Event):
    type: Literal["committee"]
    subject_kind: Literal["ratify", "veto", "miscategorization"]
    proposal: str
    signatures: list   # [member, "yes" | "no" | "absent"] pairs


class DelegateEvent(_Event):
    type: Literal["delegate"]
    delegator: str
    delegatee: str


class UndelegateEvent(_Event):
    type: Literal["undelegate"]
    delegator: str


class SetRateEvent(_Event):
    type: Literal["set-rate"]
    lzs_per_lzdc: Amount


ScriptEvent = Union[
    ListEvent, BuyEvent, SessionActionEvent, DropoffEvent, InformTrackingEvent,
    ConfirmEvent, SatisfyEvent, CancelEvent, ClaimEvent, AppealEvent,
    FeedbackEvent, ProposeEvent, VoteEvent, ProposalStepEvent, CommitteeEvent,
    DelegateEvent, UndelegateEvent, SetRateEvent,
]


class SimScenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    seed: int = Field(ge=0, lt=2 ** 64)
    horizon: int = Field(ge=1)
    transit_days: Optional[int] = Field(default=3, ge=1)
    config: dict = Field(default_factory=dict)
    agents: list[AgentSpec] = Field(default_factory=list)
    committee: list[str] = Field(default_factory=list)
    genesis_members: list[str] = Field(default_factory=list)
    internal_rule_overrides: dict[str, Literal["buyer", "seller"]] = \
        Field(default_factory=dict)
    script: list[ScriptEvent] = Field(default_factory=list)

    def engine_config(self) -> EngineConfig:
        return EngineConfig.from_overrides(self.config)


_SESSION_EVENT_TYPES = {
    "validate", "decline", "agree", "fund", "request-qr", "deliver",
    "declare-lost", "resolve", "return-received", "query-qr", "send-qr",
    "dropoff", "inform-tracking", "confirm", "satisfy", "cancel", "claim",
    "appeal", "feedback",
}


def _cross_checks(scenario: SimScenario) -> list:
    problems = []
    try:
        config = scenario.engine_config()
    except ValueError as exc:
        problems.append(str(exc))
        config = None

    agent_ids = [a.id for a in scenario.agents]
    dupes = {a for a in agent_ids if agent_ids.count(a) > 1}
    for dupe in sorted(dupes):
        problems.append(f"duplicate agent id {dupe!r}")
    known = set(agent_ids)

    for member in scenario.genesis_members:
        if member not in known:
            problems.append(f"genesis member {member!r} is not an agent")
    if scenario.committee:
        size = config.governance.committee_size if config else 5
        if len(scenario.committee) != size:
            problems.append(
                f"committee must have exactly {size} members, "
                f"got {len(scenario.committee)}")
        for member in scenario.committee:
            if member not in known:
                problems.append(f"committee member {member!r} is not an agent")

    for key in scenario.internal_rule_overrides:
        if len(key) != 4 or any(c not in "01" for c in key):
            problems.append(
                f"internal rule override key {key!r} must be 4 binary flags")

    seller_variants = {"no-ship", "wrong-item", "qr-omit"}
    buyer_variants = {"false-claim", "never-confirm"}
    for agent in scenario.agents:
        strat = agent.strategy
        if strat.kind == "dishonest-seller" and strat.variant not in seller_variants:
            problems.append(
                f"agent {agent.id!r}: dishonest-seller needs a variant from "
                f"{sorted(seller_variants)}")
        if strat.kind == "dishonest-buyer" and strat.variant not in buyer_variants:
            problems.append(
                f"agent {agent.id!r}: dishonest-buyer needs a variant from "
                f"{sorted(buyer_variants)}")
        if strat.kind == "mixed" and (strat.variant is None or strat.p_honest is None):
            problems.append(
                f"agent {agent.id!r}: mixed strategy needs both a variant "
                f"and p_honest")
        if strat.kind in ("honest", "scripted") and strat.variant is not None:
            problems.append(
                f"agent {agent.id!r}: {strat.kind} strategy takes no variant")
        if config is not None and agent.stake is not None:
            if tokens(agent.stake) < config.stake.seller_minimum:
                problems.append(
                    f"agent {agent.id!r} stakes below the seller minimum")

    listings: dict[str, int] = {}
    sessions: dict[str, int] = {}
    proposals: dict[str, int] = {}
    for i, event in enumerate(scenario.script):
        where = f"script[{i}]"
        if event.day > scenario.horizon:
            problems.append(f"{where}: day {event.day} is past the horizon")
        refs = []
        if event.type == "list":
            if event.id in listings:
                problems.append(f"{where}: listing id {event.id!r} reused")
            listings[event.id] = event.day
            refs.append(event.seller)
        elif event.type == "buy":
            if event.session in sessions:
                problems.append(f"{where}: session id {event.session!r} reused")
            sessions[event.session] = event.day
            refs.append(event.buyer)
            if event.listing not in listings or listings[event.listing] > event.day:
                problems.append(
                    f"{where}: listing {event.listing!r} not defined by day "
                    f"{event.day}")
        elif event.type == "propose":
            if event.id in proposals:
                problems.append(f"{where}: proposal id {event.id!r} reused")
            proposals[event.id] = event.day
            refs.append(event.proposer)
        elif event.type in ("vote", "finalize", "queue", "execute", "committee"):
            if event.proposal not in proposals or proposals[event.proposal] > event.day:
                problems.append(
                    f"{where}: proposal {event.proposal!r} not defined by day "
                    f"{event.day}")
            if event.type == "vote":
                refs.append(event.voter)
            if event.type == "committee":
                for pair in event.signatures:
                    if (not isinstance(pair, (list, tuple)) or len(pair) != 2
                            or pair[1] not in ("yes", "no", "absent")):
                        problems.append(
                            f"{where}: malformed signature entry {pair!r}")
                    else:
                        refs.append(pair[0])
        elif event.type == "delegate":
            refs.extend([event.delegator, event.delegatee])
        elif event.type == "undelegate":
            refs.append(event.delegator)
        if event.type in _SESSION_EVENT_TYPES:
            sid = event.session
            if sid not in sessions or sessions[sid] > event.day:
                problems.append(
                    f"{where}: session {sid!r} not defined by day {event.day}")
            for attr in ("party", "claimant", "rater"):
                value = getattr(event, attr, None)
                if value is not None:
                    refs.append(value)
        for ref in refs:
            if ref not in known:
                problems.append(f"{where}: unknown agent {ref!r}")
    return problems


def validate_scenario(data: dict) -> SimScenario:
    try:
        scenario = SimScenario.model_validate(data)
    except PydanticValidationError as exc:
        violations = []
        for err in exc.errors():
            loc = ".".join(str(part) for part in err["loc"])
            violations.append(f"{loc}: {err['msg']}")
        raise ScenarioValidationError(violations) from None
    problems = _cross_checks(scenario)
    if problems:
        raise ScenarioValidationError(problems)
    return scenario


def load_scenario(source) -> SimScenario:
    """Accepts a dict, a JSON string, or a file path."""
    if isinstance(source, dict):
        return validate_scenario(source)
    text = source
    if not source.lstrip().startswith("{"):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ParseError(f"cannot read scenario file: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ParseError("scenario must be a JSON object")
    return validate_scenario(data)
