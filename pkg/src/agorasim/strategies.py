"""Agent autopilot: deterministic decision tables per strategy.

Each session party resolves to a fixed conduct when the purchase request is
made (mixed strategies draw once from the scenario PRNG stream). The driver
then takes at most one action per session per pass; the simulator loops
passes to a fixpoint each day, so an honest exchange flows as far as the
current day allows without ever touching a deadline.

Conducts:
    honest          follow the protocol exactly and act immediately
    no-ship         validate and take the escrow flow, then never drop off
    wrong-item      ship a non-conforming item, refuse the resolution
    qr-omit         ship without the QR code and ignore the buyer's query
    false-claim     take delivery, then claim non-delivery (and appeal once)
    never-confirm   take delivery and go silent
    scripted        no autopilot; the scenario script supplies every action
"""

from __future__ import annotations

import hashlib

from .arbitration import VOTE_FOR_CLAIMANT, VOTE_FOR_RESPONDENT, commitment_hash
from .errors import ProtocolError
from .exchange import SUCCESS_KINDS, ExchangeState
from .reputation import Feedback

S = ExchangeState

RESOLUTION_WILLING = ("honest", "qr-omit", "never-confirm", "false-claim")
RETURN_CONFIRMING = ("honest", "qr-omit")


def _salt(seed: int, session_id: str, round_index: int, juror_id: str) -> str:
    material = f"salt:{seed}:{session_id}:{round_index}:{juror_id}"
    return hashlib.sha256(material.encode()).hexdigest()[:16]


class StrategyDriver:
    def __init__(self, scenario, engine):
        self.scenario = scenario
        self.engine = engine
        self.agents = {a.id: a for a in scenario.agents}
        self.conducts: dict = {}       # session id -> {"buyer": c, "seller": c}
        self._feedback_done: set = set()
        self._appealed: set = set()
        self._evidence_done: set = set()
        self._gave_up: set = set()     # (session, action) pairs never retried

    # --- conduct resolution ---

    def _conduct_of(self, agent_id: str) -> str:
        spec = self.agents.get(agent_id)
        if spec is None:
            return "scripted"
        strat = spec.strategy
        if strat.kind == "honest":
            return "honest"
        if strat.kind == "scripted":
            return "scripted"
        if strat.kind in ("dishonest-seller", "dishonest-buyer"):
            return strat.variant
        # mixed: one draw per session from the dedicated stream
        if self.engine.strategy_rng.random() < strat.p_honest:
            return "honest"
        return strat.variant

    def on_purchase(self, session_id: str):
        session = self.engine.exchange.sessions[session_id]
        self.conducts[session_id] = {
            "buyer": self._conduct_of(session.buyer_id),
            "seller": self._conduct_of(session.seller_id),
        }

    # --- one pass ---

    def step(self, day: int) -> int:
        acted = 0
        exchange = self.engine.exchange
        for sid in sorted(exchange.sessions):
            if sid in self.conducts:
                acted += self._session_step(exchange.sessions[sid],
                                            self.conducts[sid], day)
        acted += self._case_step(day)
        acted += self._juror_step(day)
        return acted

    def _try(self, session_id: str, action: str, call) -> int:
        """Run one protocol call; a rejection is final for this session."""
        key = (session_id, action)
        if key in self._gave_up:
            return 0
        try:
            call()
            return 1
        except ProtocolError:
            self._gave_up.add(key)
            return 0

    def _session_step(self, session, conduct: dict, day: int) -> int:
        ex = self.engine.exchange
        sid = session.id
        buyer_c, seller_c = conduct["buyer"], conduct["seller"]
        state = session.state

        # seller side
        if seller_c != "scripted":
            if state is S.PURCHASE_REQUESTED:
                return self._try(sid, "validate",
                                 lambda: ex.validate_sale(session.seller_id, sid))
            if state is S.AWAITING_DROPOFF:
                if seller_c in ("honest", "wrong-item", "false-claim",
                                "never-confirm"):
                    return self._try(sid, "request-qr",
                                     lambda: ex.request_qr(session.seller_id, sid))
                if seller_c == "qr-omit":
                    return self._try(sid, "dropoff", lambda: ex.confirm_dropoff(
                        session.seller_id, sid, qr_included=False,
                        tracking="informed", number=f"trk-{sid}"))
                # no-ship: let the dropoff window expire
            if state is S.QR_ISSUED and seller_c != "no-ship":
                return self._try(sid, "dropoff", lambda: ex.confirm_dropoff(
                    session.seller_id, sid, qr_included=True,
                    tracking="informed", number=f"trk-{sid}"))
            if state is S.AWAITING_QR and not session.qr_available \
                    and seller_c != "qr-omit":
                return self._try(sid, "send-qr",
                                 lambda: ex.respond_qr(session.seller_id, sid))
            case = session.return_case
            if case is not None and not case.closed \
                    and seller_c in RETURN_CONFIRMING \
                    and day >= case.opened_day + (self.scenario.transit_days or 0):
                return self._try(sid, "return-received",
                                 lambda: ex.return_received(session.seller_id, sid))

        # buyer side
        if buyer_c != "scripted":
            if state is S.SELLER_VALIDATED:
                return self._try(sid, "agree", lambda: ex.agree_terms(sid))
            if state is S.TERMS_AGREED:
                return self._try(sid, "fund",
                                 lambda: ex.fund_escrow(session.buyer_id, sid))
            if state in (S.DELIVERED, S.AWAITING_QR):
                if buyer_c == "honest":
                    if session.qr_available:
                        return self._try(sid, "scan", lambda: ex.confirm_receipt(
                            session.buyer_id, sid, via="scan",
                            nonce=session.qr_nonce))
                    if state is S.DELIVERED:
                        return self._try(sid, "manual", lambda: ex.confirm_receipt(
                            session.buyer_id, sid, via="manual"))
                elif buyer_c == "false-claim" and state is S.DELIVERED \
                        and day > (session.delivered_day or day):
                    return self._claim(session, session.buyer_id, "not-delivered")
            if state is S.AWAITING_SATISFACTION and buyer_c == "honest":
                satisfied = seller_c != "wrong-item"
                return self._try(sid, "satisfy", lambda: ex.answer_satisfaction(
                    session.buyer_id, sid, satisfied=satisfied))
            if state is S.DISPUTED and sid not in self.engine.arbitration.cases \
                    and buyer_c == "honest":
                reason = session.claim_reason or (
                    "wrong-description" if seller_c == "wrong-item"
                    else "party-unresponsive")
                return self._claim(session, session.buyer_id, reason)

        # joint moves
        if state is S.RESOLUTION_WINDOW and buyer_c in RESOLUTION_WILLING \
                and seller_c in RESOLUTION_WILLING:
            return self._try(sid, "resolve", lambda: ex.resolve_mutually(sid))

        # post-terminal feedback from honest parties
        if session.is_terminal and session.outcome is not None \
                and session.outcome.stage != "C1":
            for rater, rater_c, ratee_c in (
                    (session.buyer_id, buyer_c, seller_c),
                    (session.seller_id, seller_c, buyer_c)):
                if rater_c != "honest" or (rater, sid) in self._feedback_done:
                    continue
                self._feedback_done.add((rater, sid))
                ratee = session.seller_id if rater == session.buyer_id \
                    else session.buyer_id
                good = (session.outcome.kind in SUCCESS_KINDS
                        and ratee_c in ("honest", "qr-omit"))
                try:
                    self.engine.reputation.apply_feedback(
                        Feedback(rater=rater, ratee=ratee,
                                 polarity="good" if good else "bad",
                                 session_id=sid),
                        session=session, day=day)
                except ProtocolError:
                    pass
                return 1
        return 0

    def _claim(self, session, claimant_id: str, reason: str) -> int:
        def go():
            self.engine.arbitration.route_dispute(session.id, claimant_id, reason)
        return self._try(session.id, "claim", go)

    # --- dispute-side duties ---

    def _case_step(self, day: int) -> int:
        arb = self.engine.arbitration
        acted = 0
        for sid in sorted(arb.cases):
            case = arb.cases[sid]
            claimant_conduct = self._conduct_for_party(sid, case.claimant_id)
            if case.tier == "external" and case.status == "open" \
                    and claimant_conduct != "scripted":
                fee = self.engine.config.arbitration.base_jurors * \
                    self.engine.config.arbitration.fee_per_juror
                if self._try(sid, "open-case",
                             lambda: arb.open_external_case(sid, fee)):
                    acted += 1
                    continue
            if case.status == "evidence" and sid not in self._evidence_done:
                self._evidence_done.add(sid)
                digest = hashlib.sha256(
                    f"evidence:{sid}:{case.reason}".encode()).hexdigest()
                arb.submit_evidence(sid, case.claimant_id, digest)
                acted += 1
                continue
            if case.status == "ruled" and sid not in self._appealed \
                    and len(case.rounds) == 1:
                loser = arb._loser_of(case, case.current_round().ruling)
                if self._conduct_for_party(sid, loser) == "false-claim":
                    self._appealed.add(sid)
                    try:
                        arb.appeal(sid, loser)
                        acted += 1
                    except ProtocolError:
                        pass
        return acted

    def _conduct_for_party(self, session_id: str, account_id: str) -> str:
        conduct = self.conducts.get(session_id, {})
        session = self.engine.exchange.sessions[session_id]
        role = session.party_role(account_id)
        return conduct.get(role, "scripted")

    def _juror_step(self, day: int) -> int:
        arb = self.engine.arbitration
        acted = 0
        for sid in sorted(arb.cases):
            case = arb.cases[sid]
            if case.status != "round":
                continue
            rnd = case.current_round()
            flags = arb.evidence_flags(case)
            winner_role = arb._table_winner(flags)
            honest_vote = (VOTE_FOR_CLAIMANT if winner_role == case.claimant_role
                           else VOTE_FOR_RESPONDENT)
            for jid in rnd.juror_ids():
                spec = self.agents.get(jid)
                if spec is None:
                    continue
                ballot = rnd.ballots[jid]
                salt = _salt(self.scenario.seed, sid, rnd.index, jid)
                if ballot.commitment is None and day <= rnd.commit_deadline:
                    arb.commit_vote(sid, jid,
                                    commitment_hash(honest_vote, salt, jid))
                    acted += 1
                elif (ballot.commitment is not None and not ballot.revealed
                      and spec.juror_behavior == "truthful"
                      and rnd.commit_deadline < day <= rnd.reveal_deadline):
                    arb.reveal_vote(sid, jid, honest_vote, salt)
                    acted += 1
        return acted
