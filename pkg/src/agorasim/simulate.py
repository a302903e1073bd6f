"""Scenario runner: genesis, then for each virtual day fire timeouts, apply
scripted events, deliver in-transit packages, and run agent autopilots to a
fixpoint. The run is a pure function of the scenario document, so the same
file always produces a byte-identical trace."""

from __future__ import annotations

from dataclasses import dataclass

from .config import frac, tokens
from .engine import MarketEngine
from .errors import ProtocolError
from .exchange import ExchangeState
from .governance import ProposalPayload
from .ledger import TokenKind
from .reputation import Feedback
from .scenario import SimScenario
from .strategies import StrategyDriver

_MAX_PASSES_PER_DAY = 60


@dataclass
class RunResult:
    scenario: SimScenario
    engine: MarketEngine
    summary: dict
    trace_text: str


def run(scenario: SimScenario) -> RunResult:
    config = scenario.engine_config()
    engine = MarketEngine(config=config, seed=scenario.seed,
                          scenario_name=scenario.name,
                          rule_overrides=scenario.internal_rule_overrides or None)
    driver = StrategyDriver(scenario, engine)
    handles = {"listings": {}, "proposals": {}}

    _genesis(scenario, engine)
    script_by_day: dict[int, list] = {}
    for index, event in enumerate(scenario.script):
        script_by_day.setdefault(event.day, []).append((index, event))

    for day in range(scenario.horizon + 1):
        if day > 0:
            engine.tick(day)
        for index, event in script_by_day.get(day, []):
            try:
                _apply_event(engine, driver, handles, event)
            except ProtocolError as exc:
                engine.trace.emit("script", "skipped", {
                    "index": index, "type": event.type,
                    "error": type(exc).__name__, "detail": str(exc)})
        _auto_deliver(engine, scenario, day)
        for _ in range(_MAX_PASSES_PER_DAY):
            if driver.step(day) == 0:
                break
        else:
            raise RuntimeError(f"strategy passes did not settle on day {day}")
        engine.checkpoint()

    summary = engine.summary()
    engine.trace.finish(summary)
    return RunResult(scenario=scenario, engine=engine, summary=summary,
                     trace_text=engine.trace.to_jsonl())


def _genesis(scenario: SimScenario, engine: MarketEngine):
    for agent in scenario.agents:
        account = engine.create_account(agent.role, agent.id)
        if agent.payment_preference:
            account.payment_preference = TokenKind(agent.payment_preference)
        for token_name, amount in agent.balances.items():
            engine.fund(agent.id, TokenKind(token_name), tokens(amount))
        if agent.stake is not None:
            engine.ledger.stake_deposit(
                account, tokens(agent.stake),
                engine.config.stake.duration_days, day=0)
        if agent.court_stake is not None:
            engine.ledger.lock_court_stake(account, tokens(agent.court_stake))
    for member in scenario.genesis_members:
        engine.governance.grant_founding_membership(member)
    if scenario.committee:
        engine.governance.seat_committee(list(scenario.committee), day=0)


def _auto_deliver(engine: MarketEngine, scenario: SimScenario, day: int):
    if scenario.transit_days is None:
        return
    exchange = engine.exchange
    for sid in sorted(exchange.sessions):
        session = exchange.sessions[sid]
        if session.state is ExchangeState.IN_TRANSIT \
                and session.return_case is None \
                and session.t1 is not None \
                and session.t1 + scenario.transit_days == day:
            exchange.mark_delivered(sid)


def _apply_event(engine: MarketEngine, driver: StrategyDriver, handles: dict,
                 event):
    exchange = engine.exchange
    arbitration = engine.arbitration
    governance = engine.governance
    kind = event.type

    if kind == "list":
        listing = exchange.list_item(
            event.seller, event.description, tokens(event.price),
            TokenKind(event.token), event.category)
        handles["listings"][event.id] = listing.id
    elif kind == "buy":
        exchange.request_purchase(event.buyer,
                                  handles["listings"][event.listing],
                                  session_id=event.session)
        driver.on_purchase(event.session)
    elif kind == "validate":
        session = exchange.sessions[event.session]
        exchange.validate_sale(session.seller_id, event.session)
    elif kind == "decline":
        session = exchange.sessions[event.session]
        exchange.decline_sale(session.seller_id, event.session)
    elif kind == "agree":
        exchange.agree_terms(event.session)
    elif kind == "fund":
        session = exchange.sessions[event.session]
        exchange.fund_escrow(session.buyer_id, event.session)
    elif kind == "request-qr":
        session = exchange.sessions[event.session]
        exchange.request_qr(session.seller_id, event.session)
    elif kind == "dropoff":
        session = exchange.sessions[event.session]
        number = event.number
        if event.tracking == "informed" and number is None:
            number = f"trk-{event.session}"
        exchange.confirm_dropoff(session.seller_id, event.session,
                                 qr_included=event.qr_included,
                                 tracking=event.tracking, number=number)
    elif kind == "inform-tracking":
        session = exchange.sessions[event.session]
        exchange.inform_tracking(session.seller_id, event.session, event.number)
    elif kind == "declare-lost":
        session = exchange.sessions[event.session]
        exchange.declare_tracking_lost(session.seller_id, event.session)
    elif kind == "deliver":
        exchange.mark_delivered(event.session)
    elif kind == "query-qr":
        session = exchange.sessions[event.session]
        exchange.report_qr_missing(session.buyer_id, event.session)
    elif kind == "send-qr":
        session = exchange.sessions[event.session]
        exchange.respond_qr(session.seller_id, event.session)
    elif kind == "confirm":
        session = exchange.sessions[event.session]
        nonce = session.qr_nonce if event.via == "scan" else None
        exchange.confirm_receipt(session.buyer_id, event.session,
                                 via=event.via, nonce=nonce)
    elif kind == "satisfy":
        session = exchange.sessions[event.session]
        exchange.answer_satisfaction(session.buyer_id, event.session,
                                     satisfied=event.satisfied)
    elif kind == "resolve":
        exchange.resolve_mutually(event.session)
    elif kind == "cancel":
        exchange.cancel(event.party, event.session)
    elif kind == "return-received":
        session = exchange.sessions[event.session]
        exchange.return_received(session.seller_id, event.session)
    elif kind == "claim":
        arbitration.route_dispute(event.session, event.claimant, event.reason,
                                  prefer_external=event.prefer_external)
    elif kind == "appeal":
        arbitration.appeal(event.session, event.party)
    elif kind == "feedback":
        session = exchange.sessions[event.session]
        ratee = session.seller_id if event.rater == session.buyer_id \
            else session.buyer_id
        engine.reputation.apply_feedback(
            Feedback(rater=event.rater, ratee=ratee, polarity=event.polarity,
                     session_id=event.session, comment=event.comment),
            session=session, day=engine.day)
    elif kind == "propose":
        payload = ProposalPayload(
            targets=list(event.targets), values=[0] * len(event.targets),
            signatures=["set"] * len(event.targets),
            calldata=list(event.calldata), description=event.description)
        proposal = governance.submit_proposal(event.proposer, event.level,
                                              payload)
        handles["proposals"][event.id] = proposal.id
    elif kind == "vote":
        governance.vote(event.voter, handles["proposals"][event.proposal],
                        event.direction)
    elif kind == "finalize":
        governance.finalize(handles["proposals"][event.proposal])
    elif kind == "queue":
        governance.queue(handles["proposals"][event.proposal])
    elif kind == "execute":
        governance.execute(handles["proposals"][event.proposal])
    elif kind == "committee":
        governance.committee_decide(
            {"kind": event.subject_kind,
             "proposal": handles["proposals"][event.proposal]},
            [tuple(pair) for pair in event.signatures])
    elif kind == "delegate":
        governance.delegate(event.delegator, event.delegatee)
    elif kind == "undelegate":
        governance.undelegate(event.delegator)
    elif kind == "set-rate":
        engine.config.rates.lzs_per_lzdc = frac(event.lzs_per_lzdc)
        engine.config.check()
        engine.trace.emit("engine", "rate-set",
                          {"lzs_per_lzdc": str(engine.config.rates.lzs_per_lzdc)})
    else:
        raise ValueError(f"unhandled script event type {kind!r}")
