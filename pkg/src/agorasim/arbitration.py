"""Two-tier dispute resolution.

Low-value claims (at most the configured USD threshold, boundary inclusive)
are handled internally by a deterministic decision table over structured
evidence flags. Higher-value claims go to an external court: an evidence
period, stake-weighted random juror selection, commit-reveal voting with
non-reveal slashing, majority ruling with a status-quo tie policy, and
appeals that redraw with twice the jurors plus one while fees scale with the
juror count.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .config import EngineConfig
from .errors import (
    AppealWindowClosed,
    CommitmentMismatch,
    DeadlineExpired,
    InsufficientFee,
    InsufficientJurors,
    NotAJuror,
    NotClaimEligible,
    RoundNotClosed,
    WrongTier,
)
from .exchange import SUCCESS_KINDS, ExchangeModule, ExchangeState
from .ledger import Ledger, TokenKind

VOTE_FOR_CLAIMANT = "for-claimant"
VOTE_FOR_RESPONDENT = "for-respondent"

DISPUTE_REASONS = (
    "wrong-description",
    "party-withdrew",
    "party-unresponsive",
    "not-delivered",
    "wrong-or-empty-package",
    "defective-item",
)


def round_sizes(base: int, rounds: int) -> list:
    """Juror counts for rounds 0..rounds-1: each appeal doubles the previous
    count and adds one, so n_k = (base + 1) * 2**k - 1."""
    sizes = []
    n = base
    for _ in range(rounds):
        sizes.append(n)
        n = 2 * n + 1
    return sizes


def commitment_hash(vote: str, salt: str, juror_id: str) -> str:
    """Binding commitment over (vote, salt, juror identity)."""
    material = f"{vote}|{salt}|{juror_id}".encode()
    return hashlib.sha256(material).hexdigest()


def draw_jurors(pool: dict, n: int, seed: int) -> list:
    """Draw n distinct jurors, probability proportional to stake, without
    replacement. Reproducible from (pool snapshot, seed); zero-stake
    candidates are never drawn."""
    candidates = [(jid, stake) for jid, stake in sorted(pool.items()) if stake > 0]
    if len(candidates) < n:
        raise InsufficientJurors(
            f"need {n} staked candidates, pool has {len(candidates)}")
    rng = random.Random(seed)
    chosen = []
    remaining = list(candidates)
    for _ in range(n):
        total = sum(stake for _, stake in remaining)
        pick = rng.randrange(total)
        acc = 0
        for i, (jid, stake) in enumerate(remaining):
            acc += stake
            if pick < acc:
                chosen.append((jid, stake))
                remaining.pop(i)
                break
    return chosen


# Internal decision table: flags (tracking informed, delivery evidenced,
# return received, description mismatch attested) -> winning role. The default
# policy: the seller prevails exactly when delivery is evidenced and the item
# was neither returned nor attested as mismatched. Ships as data so a scenario
# can override individual rows.
def _default_rule_table() -> dict:
    table = {}
    for t in (0, 1):
        for d in (0, 1):
            for r in (0, 1):
                for m in (0, 1):
                    winner = "seller" if (d == 1 and r == 0 and m == 0) else "buyer"
                    table[f"{t}{d}{r}{m}"] = winner
    return table


INTERNAL_RULE_TABLE = _default_rule_table()


@dataclass
class Ballot:
    commitment: Optional[str] = None
    vote: Optional[str] = None       # set once revealed
    revealed: bool = False
    absent: bool = False


@dataclass
class CourtRound:
    index: int
    jurors: list                     # (juror_id, stake drawn against)
    ballots: dict                    # juror_id -> Ballot
    drawn_day: int
    commit_deadline: int
    reveal_deadline: int
    ruling: Optional[str] = None
    tallied: bool = False

    def juror_ids(self) -> list:
        return [jid for jid, _ in self.jurors]


@dataclass
class DisputeCase:
    session_id: str
    claimant_id: str
    claimant_role: str               # buyer | seller
    respondent_id: str
    value_usd: Fraction
    tier: str                        # internal | external
    reason: str
    opened_day: int
    evidence: list = field(default_factory=list)
    rounds: list = field(default_factory=list)
    status: str = "open"             # open | evidence | round | ruled | closed
    evidence_deadline: Optional[int] = None
    appeal_deadline: Optional[int] = None
    ruling: Optional[str] = None
    fees_paid: dict = field(default_factory=dict)   # account -> micro-units

    @property
    def pool_id(self) -> str:
        return f"case:{self.session_id}"

    def current_round(self) -> CourtRound:
        if not self.rounds:
            raise RoundNotClosed("no court round open yet")
        return self.rounds[-1]


class ArbitrationModule:
    def __init__(self, config: EngineConfig, ledger: Ledger,
                 exchange: ExchangeModule, reputation, juror_rng: random.Random,
                 trace=None, clock=None, rule_overrides: Optional[dict] = None):
        self.config = config
        self.ledger = ledger
        self.exchange = exchange
        self.reputation = reputation
        self.juror_rng = juror_rng
        self.trace = trace
        self._clock = clock or (lambda: 0)
        self.cases: dict[str, DisputeCase] = {}
        self.rule_table = dict(INTERNAL_RULE_TABLE)
        if rule_overrides:
            for key, winner in rule_overrides.items():
                if key not in self.rule_table or winner not in ("buyer", "seller"):
                    raise ValueError(f"bad rule override {key!r} -> {winner!r}")
                self.rule_table[key] = winner

    @property
    def day(self) -> int:
        return self._clock()

    def _emit(self, kind: str, **payload):
        if self.trace is not None:
            self.trace.emit("arbitration", kind, payload)

    # --- routing ---

    def route_dispute(self, session_id: str, claimant_id: str, reason: str,
                      prefer_external: bool = False) -> DisputeCase:
        session = self.exchange.sessions.get(session_id)
        if session is None:
            raise NotClaimEligible(f"unknown session {session_id!r}")
        if session_id in self.cases:
            raise NotClaimEligible(f"a case already exists for {session_id}")
        if reason not in DISPUTE_REASONS:
            raise ValueError(f"unknown dispute reason {reason!r}")
        role = session.party_role(claimant_id)
        if role is None:
            raise NotClaimEligible(f"{claimant_id} is not a party of {session_id}")

        state = session.state
        if state in (ExchangeState.TRACKING_MISSING, ExchangeState.IN_TRANSIT,
                     ExchangeState.DELIVERED, ExchangeState.AWAITING_QR):
            self.exchange.claim(claimant_id, session_id, reason)
        elif state is ExchangeState.DISPUTED:
            pass  # already pushed there by a timeout; attach the case now
        elif state is ExchangeState.SETTLED:
            outcome = session.outcome
            window = self.config.deadlines.late_cancel_window
            if (outcome is None or outcome.kind not in SUCCESS_KINDS
                    or session.t1 is None or self.day > session.t1 + window):
                raise NotClaimEligible(
                    "settled sessions are claim-eligible only inside the "
                    "post-settlement return window")
        else:
            raise NotClaimEligible(f"state {state} is not claim-eligible")

        value = self.config.usd_value(session.price, session.token)
        threshold = self.config.arbitration.internal_threshold_usd
        if value > threshold:
            tier = "external"
        else:
            tier = "external" if prefer_external else "internal"
        respondent = session.seller_id if role == "buyer" else session.buyer_id
        case = DisputeCase(
            session_id=session_id, claimant_id=claimant_id, claimant_role=role,
            respondent_id=respondent, value_usd=value, tier=tier, reason=reason,
            opened_day=self.day)
        self.cases[session_id] = case
        self._emit("case-routed", session=session_id, claimant=claimant_id,
                   tier=tier, reason=reason, value_usd=str(value))
        return case

    # --- evidence flags ---

    def evidence_flags(self, case: DisputeCase) -> dict:
        session = self.exchange.sessions[case.session_id]
        mismatch = (case.claimant_role == "buyer"
                    and case.reason in ("wrong-description",
                                        "wrong-or-empty-package",
                                        "defective-item"))
        returned = (session.return_case is not None and session.return_case.closed
                    and session.outcome is not None
                    and session.outcome.kind == "cancelled")
        return {
            "tracking_informed": session.tracking == "informed",
            "delivery_evidenced": (session.delivered_day is not None
                                   or session.receipt_confirmed),
            "return_received": returned,
            "mismatch_attested": mismatch,
        }

    def _table_winner(self, flags: dict) -> str:
        key = "".join("1" if flags[name] else "0" for name in
                      ("tracking_informed", "delivery_evidenced",
                       "return_received", "mismatch_attested"))
        return self.rule_table[key]

    # --- internal tier ---

    def resolve_internal(self, session_id: str) -> str:
        case = self.cases[session_id]
        if case.tier != "internal":
            raise WrongTier(f"case for {session_id} is external")
        if case.status == "closed":
            raise RoundNotClosed("case already resolved")
        flags = self.evidence_flags(case)
        winner_role = self._table_winner(flags)
        ruling = (VOTE_FOR_CLAIMANT if winner_role == case.claimant_role
                  else VOTE_FOR_RESPONDENT)
        case.ruling = ruling
        case.status = "closed"
        self._emit("internal-ruling", session=session_id, flags=flags,
                   winner=winner_role, ruling=ruling)
        self._execute(case, winner_role, ruling)
        return ruling

    # --- external tier ---

    def open_external_case(self, session_id: str, claimant_fee: int) -> DisputeCase:
        case = self.cases[session_id]
        if case.tier != "external":
            raise WrongTier(f"case for {session_id} is internal")
        if case.status != "open":
            raise RoundNotClosed("external case already opened")
        required = self.config.arbitration.base_jurors * \
            self.config.arbitration.fee_per_juror
        if claimant_fee < required:
            raise InsufficientFee(
                f"court fee is {required} micro-LZS, offered {claimant_fee}")
        claimant = self.ledger.get(case.claimant_id)
        self.ledger.pool_deposit(claimant, case.pool_id, required)
        case.fees_paid[case.claimant_id] = \
            case.fees_paid.get(case.claimant_id, 0) + required
        case.status = "evidence"
        case.evidence_deadline = self.day + \
            self.config.arbitration.evidence_period_days
        self._emit("external-opened", session=session_id, fee=required,
                   evidence_deadline=case.evidence_deadline)
        return case

    def submit_evidence(self, session_id: str, submitter_id: str,
                        content_hash: str) -> bool:
        """Opaque evidence document, stored by content hash. Late submissions
        are rejected but recorded."""
        case = self.cases[session_id]
        accepted = (case.status == "evidence"
                    and self.day <= (case.evidence_deadline or -1))
        case.evidence.append({"submitter": submitter_id, "hash": content_hash,
                              "day": self.day, "accepted": accepted})
        self._emit("evidence", session=session_id, submitter=submitter_id,
                   hash=content_hash, accepted=accepted)
        return accepted

    def juror_pool(self) -> dict:
        return {a.id: a.court_stake for a in self.ledger.accounts.values()
                if a.court_stake > 0}

    def _open_round(self, case: DisputeCase, n: int):
        seed = self.juror_rng.getrandbits(64)
        jurors = draw_jurors(self.juror_pool(), n, seed)
        arb = self.config.arbitration
        rnd = CourtRound(
            index=len(case.rounds), jurors=jurors,
            ballots={jid: Ballot() for jid, _ in jurors},
            drawn_day=self.day,
            commit_deadline=self.day + arb.commit_period_days,
            reveal_deadline=self.day + arb.commit_period_days + arb.reveal_period_days)
        case.rounds.append(rnd)
        case.status = "round"
        self._emit("round-drawn", session=case.session_id, round=rnd.index,
                   jurors=rnd.juror_ids(), seed=seed,
                   commit_deadline=rnd.commit_deadline,
                   reveal_deadline=rnd.reveal_deadline)
        return rnd

    def commit_vote(self, session_id: str, juror_id: str, commitment: str):
        case = self.cases[session_id]
        rnd = case.current_round()
        if juror_id not in rnd.ballots:
            raise NotAJuror(f"{juror_id} was not drawn in round {rnd.index}")
        if self.day > rnd.commit_deadline:
            raise DeadlineExpired(
                f"commit phase closed on day {rnd.commit_deadline}")
        rnd.ballots[juror_id].commitment = commitment
        self._emit("vote-committed", session=session_id, round=rnd.index,
                   juror=juror_id)

    def reveal_vote(self, session_id: str, juror_id: str, vote: str, salt: str):
        case = self.cases[session_id]
        rnd = case.current_round()
        ballot = rnd.ballots.get(juror_id)
        if ballot is None:
            raise NotAJuror(f"{juror_id} was not drawn in round {rnd.index}")
        if self.day <= rnd.commit_deadline:
            raise DeadlineExpired("reveal phase has not started yet")
        if self.day > rnd.reveal_deadline:
            raise DeadlineExpired(
                f"reveal phase closed on day {rnd.reveal_deadline}")
        if ballot.commitment is None:
            raise CommitmentMismatch(f"{juror_id} never committed")
        if vote not in (VOTE_FOR_CLAIMANT, VOTE_FOR_RESPONDENT):
            raise ValueError(f"unknown vote {vote!r}")
        if commitment_hash(vote, salt, juror_id) != ballot.commitment:
            raise CommitmentMismatch("reveal does not match the committed hash")
        ballot.vote = vote
        ballot.revealed = True
        self._emit("vote-revealed", session=session_id, round=rnd.index,
                   juror=juror_id, vote=vote)

    def tally_and_rule(self, session_id: str) -> str:
        """Close the round: slash non-revealers, rule by majority of revealed
        votes (tie favours the respondent), open the appeal window."""
        case = self.cases[session_id]
        rnd = case.current_round()
        if self.day <= rnd.reveal_deadline:
            raise RoundNotClosed(
                f"reveal phase open until day {rnd.reveal_deadline}")
        if rnd.tallied:
            raise RoundNotClosed("round already tallied")
        rnd.tallied = True

        slash_fraction = self.config.arbitration.nonreveal_slash_fraction
        for jid, stake in rnd.jurors:
            ballot = rnd.ballots[jid]
            if not ballot.revealed:
                ballot.absent = True
                penalty = int(stake * slash_fraction)
                if penalty > 0:
                    self.ledger.slash_court_stake_into_pool(
                        self.ledger.get(jid), penalty, case.pool_id,
                        reason="non-reveal")
        for_c = sum(1 for b in rnd.ballots.values()
                    if b.revealed and b.vote == VOTE_FOR_CLAIMANT)
        for_r = sum(1 for b in rnd.ballots.values()
                    if b.revealed and b.vote == VOTE_FOR_RESPONDENT)
        rnd.ruling = VOTE_FOR_CLAIMANT if for_c > for_r else VOTE_FOR_RESPONDENT
        case.status = "ruled"
        case.appeal_deadline = self.day + self.config.arbitration.appeal_window_days
        self._emit("round-ruled", session=session_id, round=rnd.index,
                   for_claimant=for_c, for_respondent=for_r, ruling=rnd.ruling,
                   appeal_deadline=case.appeal_deadline)
        return rnd.ruling

    def appeal(self, session_id: str, appellant_id: str) -> CourtRound:
        case = self.cases[session_id]
        if case.status != "ruled":
            raise AppealWindowClosed("no ruling is open for appeal")
        if self.day > (case.appeal_deadline or -1):
            raise AppealWindowClosed(
                f"appeal window closed on day {case.appeal_deadline}")
        loser = self._loser_of(case, case.current_round().ruling)
        if appellant_id != loser:
            raise AppealWindowClosed(
                f"only the losing party ({loser}) may appeal")
        n_next = 2 * len(case.current_round().jurors) + 1
        fee = n_next * self.config.arbitration.fee_per_juror
        appellant = self.ledger.get(appellant_id)
        if appellant.balances[TokenKind.LZS] < fee:
            raise InsufficientFee(
                f"appeal fee is {fee} micro-LZS for {n_next} jurors")
        self.ledger.pool_deposit(appellant, case.pool_id, fee)
        case.fees_paid[appellant_id] = case.fees_paid.get(appellant_id, 0) + fee
        self._emit("appeal", session=session_id, appellant=appellant_id,
                   next_jurors=n_next, fee=fee)
        return self._open_round(case, n_next)

    def _loser_of(self, case: DisputeCase, ruling: str) -> str:
        if ruling == VOTE_FOR_CLAIMANT:
            return case.respondent_id
        return case.claimant_id

    def _winner_of(self, case: DisputeCase, ruling: str) -> str:
        if ruling == VOTE_FOR_CLAIMANT:
            return case.claimant_id
        return case.respondent_id

    # --- execution ---

    def _execute(self, case: DisputeCase, winner_role: str, ruling: str):
        session = self.exchange.sessions[case.session_id]
        loser_id = self._loser_of(case, ruling)
        self.exchange.apply_ruling(case.session_id, winner_role, ruling)
        self.reputation.penalize(
            loser_id, "dispute-loss",
            self.config.reputation.dispute_loss_penalty,
            caller="arbitration", day=self.day)
        if loser_id == session.seller_id and self.config.arbitration.slash_stake_on_ruling:
            beneficiary = (self.ledger.get(session.buyer_id)
                           if winner_role == "buyer" else None)
            self.ledger.slash_stake(self.ledger.get(session.seller_id),
                                    caller="arbitration", reason="dispute-loss",
                                    beneficiary=beneficiary)
        self._emit("case-closed", session=case.session_id, ruling=ruling,
                   winner=self._winner_of(case, ruling), tier=case.tier)

    def _close_external(self, case: DisputeCase):
        rnd = case.current_round()
        ruling = rnd.ruling
        case.ruling = ruling
        case.status = "closed"
        winner_id = self._winner_of(case, ruling)
        loser_id = self._loser_of(case, ruling)

        # Loser reimburses the winner's paid court fees, best effort, from
        # spendable balance. Separate from the fee pool, which always goes to
        # the coherent jurors.
        owed = case.fees_paid.get(winner_id, 0)
        if owed > 0:
            loser = self.ledger.get(loser_id)
            refund = min(owed, loser.balances[TokenKind.LZS])
            if refund > 0:
                self.ledger.transfer(loser, self.ledger.get(winner_id), refund,
                                     TokenKind.LZS, reason="fee-reimbursement")

        pool_total = self.ledger.pools.get(case.pool_id, 0)
        majority = [jid for jid in rnd.juror_ids()
                    if rnd.ballots[jid].revealed and rnd.ballots[jid].vote == ruling]
        if majority and pool_total > 0:
            share = pool_total // len(majority)
            remainder = pool_total - share * len(majority)
            for i, jid in enumerate(majority):
                amount = share + (1 if i < remainder else 0)
                if amount > 0:
                    self.ledger.pool_payout(case.pool_id, self.ledger.get(jid),
                                            amount, reason="coherent-juror-fee")
        elif pool_total > 0:
            self.ledger.pool_burn(case.pool_id, reason="no-coherent-jurors")

        winner_role = ("buyer" if winner_id ==
                       self.exchange.sessions[case.session_id].buyer_id
                       else "seller")
        self._execute(case, winner_role, ruling)

    # --- the clock ---

    def tick_day(self, day: int) -> list:
        fired = []
        for sid in sorted(self.cases):
            case = self.cases[sid]
            if case.status == "open" and case.tier == "internal":
                if day > case.opened_day:
                    self.resolve_internal(sid)
                    fired.append((sid, "internal-resolved"))
            elif case.status == "evidence":
                if day > case.evidence_deadline:
                    self._open_round(case, self.config.arbitration.base_jurors)
                    fired.append((sid, "round-drawn"))
            elif case.status == "round":
                rnd = case.current_round()
                if day > rnd.reveal_deadline and not rnd.tallied:
                    self.tally_and_rule(sid)
                    fired.append((sid, "round-ruled"))
            elif case.status == "ruled":
                if day > case.appeal_deadline:
                    self._close_external(case)
                    fired.append((sid, "case-closed"))
        return fired

    # --- reporting ---

    def case_transcript(self, session_id: str) -> dict:
        """Standalone JSON document for one case: evidence hashes, per-round
        ballots and the ruling."""
        case = self.cases[session_id]
        return {
            "session": case.session_id,
            "claimant": case.claimant_id,
            "respondent": case.respondent_id,
            "tier": case.tier,
            "reason": case.reason,
            "value_usd": str(case.value_usd),
            "status": case.status,
            "ruling": case.ruling,
            "evidence": list(case.evidence),
            "rounds": [
                {
                    "index": r.index,
                    "jurors": r.juror_ids(),
                    "ballots": {
                        jid: {"committed": b.commitment is not None,
                              "revealed": b.revealed, "vote": b.vote,
                              "absent": b.absent}
                        for jid, b in r.ballots.items()
                    },
                    "ruling": r.ruling,
                }
                for r in case.rounds
            ],
        }

    def ruling_summary(self) -> dict:
        counts: dict[str, int] = {}
        for case in self.cases.values():
            key = f"{case.tier}:{case.ruling or case.status}"
            counts[key] = counts.get(key, 0) + 1
        return dict(sorted(counts.items()))
