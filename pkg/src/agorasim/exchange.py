"""Buyer/seller exchange state machine.

Covers the whole flow: listing, purchase request, seller validation, terms,
escrow funding, QR issuance, dropoff with tracking, delivery, receipt
confirmation (QR scan or manual), the missing-QR query loop, satisfaction
answer, mutual resolution, five cancellation stages, and every deadline.

Deadline semantics are inclusive: an action succeeds on the last day of its
window (day == anchor + window) and the timeout fires on the first tick with
day > anchor + window. All timeouts fire in deterministic order: ascending
session id, then the precedence list in `tick_day`.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .config import EngineConfig
from .errors import (
    BelowMinimumValue,
    CancellationWindowClosed,
    DeadlineExpired,
    ListingUnavailable,
    NonceMismatch,
    SelfDealing,
    SellerNotActivated,
    WrongParty,
    WrongState,
)
from .incentives import RewardGranter
from .ledger import Ledger, TokenKind
from .reputation import ReputationBook


class ExchangeState(str, Enum):
    LISTED = "Listed"
    PURCHASE_REQUESTED = "PurchaseRequested"
    SELLER_VALIDATED = "SellerValidated"
    TERMS_AGREED = "TermsAgreed"
    ESCROW_FUNDED = "EscrowFunded"
    QR_ISSUED = "QRIssued"
    AWAITING_DROPOFF = "AwaitingDropoff"
    IN_TRANSIT = "InTransit"
    TRACKING_MISSING = "TrackingMissing"
    DELIVERED = "Delivered"
    AWAITING_QR = "AwaitingQR"
    AWAITING_SATISFACTION = "AwaitingSatisfaction"
    RESOLUTION_WINDOW = "ResolutionWindow"
    SETTLED = "Settled"
    CANCELLED = "Cancelled"
    DISPUTED = "Disputed"

    def __str__(self) -> str:
        return self.value


S = ExchangeState

TERMINAL_STATES = (S.SETTLED, S.CANCELLED)
PRE_ESCROW_STATES = (S.PURCHASE_REQUESTED, S.SELLER_VALIDATED, S.TERMS_AGREED)
DROPOFF_STATES = (S.ESCROW_FUNDED, S.AWAITING_DROPOFF, S.QR_ISSUED)
POST_DELIVERY_STATES = (S.DELIVERED, S.AWAITING_QR, S.AWAITING_SATISFACTION,
                        S.RESOLUTION_WINDOW)

# Transition rules. These labels are the trace vocabulary; the machine-checked
# table below is the single source of truth for edge legality.
R_PURCHASE = "purchase-request"
R_VALIDATE = "seller-validate"
R_DECLINE = "seller-decline"
R_AGREE = "terms-agree"
R_FUND = "escrow-fund"
R_AWAIT_DROPOFF = "await-dropoff"
R_QR_ISSUE = "qr-issue"
R_DROPOFF_TRACKED = "dropoff-tracked"
R_DROPOFF_SILENT = "dropoff-silent"
R_DROPOFF_LOST = "dropoff-lost-declared"
R_TRACK_LATE = "tracking-informed-late"
R_TRACK_LOST = "tracking-declared-lost"
R_DELIVER = "deliver"
R_QR_QUERY = "qr-missing-query"
R_QR_RESPONSE = "seller-qr-response"
R_QR_PLATFORM = "qr-supplied-by-platform"
R_SCAN = "receipt-scan"
R_MANUAL = "receipt-manual"
R_SAT_YES = "satisfaction-yes"
R_SAT_NO = "satisfaction-no"
R_RESOLVE = "mutual-resolution"
R_CLAIM = "claim"
R_RULING = "ruling-executed"
R_CANCEL_C1 = "cancel-c1"
R_CANCEL_C2 = "cancel-c2"
R_CANCEL_C3 = "cancel-c3"
R_CANCEL_C4 = "cancel-c4"
R_CANCEL_C5 = "cancel-c5"
R_RETURN_RECEIVED = "return-received"
R_TIMEOUT_PRE_ESCROW = "timeout-pre-escrow"
R_TIMEOUT_DROPOFF = "timeout-dropoff"
R_TIMEOUT_CONFIRM = "timeout-confirm-default-success"
R_TIMEOUT_SATISFACTION = "timeout-satisfaction-default-success"
R_TIMEOUT_RESOLUTION = "timeout-resolution-disputed"
R_TIMEOUT_RETURN = "timeout-return-disputed"
R_TIMEOUT_TRACKING = "timeout-tracking-disputed"

# (from, rule) -> to. Ships in docs/state_transitions.md and is checked
# against that document by the test suite.
TRANSITIONS = {
    (S.LISTED, R_PURCHASE): S.PURCHASE_REQUESTED,
    (S.PURCHASE_REQUESTED, R_VALIDATE): S.SELLER_VALIDATED,
    (S.PURCHASE_REQUESTED, R_DECLINE): S.CANCELLED,
    (S.PURCHASE_REQUESTED, R_CANCEL_C1): S.CANCELLED,
    (S.PURCHASE_REQUESTED, R_TIMEOUT_PRE_ESCROW): S.CANCELLED,
    (S.SELLER_VALIDATED, R_AGREE): S.TERMS_AGREED,
    (S.SELLER_VALIDATED, R_CANCEL_C1): S.CANCELLED,
    (S.SELLER_VALIDATED, R_TIMEOUT_PRE_ESCROW): S.CANCELLED,
    (S.TERMS_AGREED, R_FUND): S.ESCROW_FUNDED,
    (S.TERMS_AGREED, R_CANCEL_C1): S.CANCELLED,
    (S.TERMS_AGREED, R_TIMEOUT_PRE_ESCROW): S.CANCELLED,
    (S.ESCROW_FUNDED, R_AWAIT_DROPOFF): S.AWAITING_DROPOFF,
    (S.AWAITING_DROPOFF, R_QR_ISSUE): S.QR_ISSUED,
    (S.AWAITING_DROPOFF, R_DROPOFF_TRACKED): S.IN_TRANSIT,
    (S.AWAITING_DROPOFF, R_DROPOFF_SILENT): S.TRACKING_MISSING,
    (S.AWAITING_DROPOFF, R_DROPOFF_LOST): S.TRACKING_MISSING,
    (S.AWAITING_DROPOFF, R_CANCEL_C2): S.CANCELLED,
    (S.AWAITING_DROPOFF, R_TIMEOUT_DROPOFF): S.CANCELLED,
    (S.QR_ISSUED, R_DROPOFF_TRACKED): S.IN_TRANSIT,
    (S.QR_ISSUED, R_DROPOFF_SILENT): S.TRACKING_MISSING,
    (S.QR_ISSUED, R_DROPOFF_LOST): S.TRACKING_MISSING,
    (S.QR_ISSUED, R_CANCEL_C2): S.CANCELLED,
    (S.QR_ISSUED, R_TIMEOUT_DROPOFF): S.CANCELLED,
    (S.TRACKING_MISSING, R_TRACK_LATE): S.IN_TRANSIT,
    (S.TRACKING_MISSING, R_TRACK_LOST): S.TRACKING_MISSING,
    (S.TRACKING_MISSING, R_CLAIM): S.DISPUTED,
    (S.TRACKING_MISSING, R_CANCEL_C3): S.TRACKING_MISSING,
    (S.TRACKING_MISSING, R_RETURN_RECEIVED): S.CANCELLED,
    (S.TRACKING_MISSING, R_TIMEOUT_RETURN): S.DISPUTED,
    (S.TRACKING_MISSING, R_TIMEOUT_TRACKING): S.DISPUTED,
    (S.IN_TRANSIT, R_DELIVER): S.DELIVERED,
    (S.IN_TRANSIT, R_CLAIM): S.DISPUTED,
    (S.IN_TRANSIT, R_CANCEL_C3): S.IN_TRANSIT,
    (S.IN_TRANSIT, R_RETURN_RECEIVED): S.CANCELLED,
    (S.IN_TRANSIT, R_TIMEOUT_RETURN): S.DISPUTED,
    (S.IN_TRANSIT, R_TIMEOUT_CONFIRM): S.SETTLED,
    (S.DELIVERED, R_SCAN): S.AWAITING_SATISFACTION,
    (S.DELIVERED, R_MANUAL): S.AWAITING_SATISFACTION,
    (S.DELIVERED, R_QR_QUERY): S.AWAITING_QR,
    (S.DELIVERED, R_CLAIM): S.DISPUTED,
    (S.DELIVERED, R_CANCEL_C4): S.DELIVERED,
    (S.DELIVERED, R_RETURN_RECEIVED): S.CANCELLED,
    (S.DELIVERED, R_TIMEOUT_RETURN): S.DISPUTED,
    (S.DELIVERED, R_TIMEOUT_CONFIRM): S.SETTLED,
    (S.AWAITING_QR, R_QR_RESPONSE): S.AWAITING_QR,
    (S.AWAITING_QR, R_QR_PLATFORM): S.AWAITING_QR,
    (S.AWAITING_QR, R_SCAN): S.AWAITING_SATISFACTION,
    (S.AWAITING_QR, R_MANUAL): S.AWAITING_SATISFACTION,
    (S.AWAITING_QR, R_CLAIM): S.DISPUTED,
    (S.AWAITING_QR, R_CANCEL_C4): S.AWAITING_QR,
    (S.AWAITING_QR, R_RETURN_RECEIVED): S.CANCELLED,
    (S.AWAITING_QR, R_TIMEOUT_RETURN): S.DISPUTED,
    (S.AWAITING_QR, R_TIMEOUT_CONFIRM): S.SETTLED,
    (S.AWAITING_SATISFACTION, R_SAT_YES): S.SETTLED,
    (S.AWAITING_SATISFACTION, R_SAT_NO): S.RESOLUTION_WINDOW,
    (S.AWAITING_SATISFACTION, R_CANCEL_C4): S.AWAITING_SATISFACTION,
    (S.AWAITING_SATISFACTION, R_RETURN_RECEIVED): S.CANCELLED,
    (S.AWAITING_SATISFACTION, R_TIMEOUT_RETURN): S.DISPUTED,
    (S.AWAITING_SATISFACTION, R_TIMEOUT_SATISFACTION): S.SETTLED,
    (S.RESOLUTION_WINDOW, R_RESOLVE): S.SETTLED,
    (S.RESOLUTION_WINDOW, R_CANCEL_C4): S.RESOLUTION_WINDOW,
    (S.RESOLUTION_WINDOW, R_RETURN_RECEIVED): S.CANCELLED,
    (S.RESOLUTION_WINDOW, R_TIMEOUT_RETURN): S.DISPUTED,
    (S.RESOLUTION_WINDOW, R_TIMEOUT_RESOLUTION): S.DISPUTED,
    (S.DISPUTED, R_RULING): S.SETTLED,
    # Post-settlement return flow: the session stays settled, the refund is a
    # clawback against the seller's balance and stake.
    (S.SETTLED, R_CANCEL_C5): S.SETTLED,
    (S.SETTLED, R_RETURN_RECEIVED): S.SETTLED,
    (S.SETTLED, R_RULING): S.SETTLED,
}

SUCCESS_KINDS = ("success-confirmed", "success-by-default", "resolved-mutually")


@dataclass
class Listing:
    id: str
    seller_id: str
    description: str
    price: int
    token: TokenKind
    category: str
    status: str = "active"   # active | in-exchange | closed


@dataclass
class Outcome:
    kind: str                      # success-confirmed | success-by-default |
                                   # cancelled | resolved-mutually | arbitrated
    stage: Optional[str] = None    # C1..C5 for cancelled outcomes
    satisfaction: Optional[bool] = None
    ruling: Optional[str] = None   # for-claimant | for-respondent
    escrow_to: Optional[str] = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.stage is not None:
            out["stage"] = self.stage
        if self.satisfaction is not None:
            out["satisfaction"] = self.satisfaction
        if self.ruling is not None:
            out["ruling"] = self.ruling
        if self.escrow_to is not None:
            out["escrow_to"] = self.escrow_to
        return out


@dataclass
class ReturnCase:
    stage: str            # C3 | C4 | C5
    opened_day: int
    deadline: int
    closed: bool = False


@dataclass
class ExchangeSession:
    id: str
    listing_id: str
    buyer_id: str
    seller_id: str
    price: int
    token: TokenKind
    state: ExchangeState = S.LISTED
    created_day: int = 0
    stage_anchor: int = 0          # pre-escrow timeout anchor
    t0: Optional[int] = None       # escrow funded
    t1: Optional[int] = None       # tracking informed
    t1_prime: Optional[int] = None  # missing-QR query
    t2: Optional[int] = None       # receipt confirmed
    t3: Optional[int] = None       # dissatisfaction answered
    qr_nonce: Optional[str] = None
    qr_issued_day: Optional[int] = None
    qr_included: bool = False
    qr_available: bool = False     # buyer effectively holds the code
    qr_responded: bool = False
    tracking: str = "none"         # none | informed | declared-lost
    tracking_number: Optional[str] = None
    dropoff_day: Optional[int] = None
    delivered_day: Optional[int] = None
    scan_eligible: bool = False
    receipt_confirmed: bool = False
    receipt_via: Optional[str] = None
    return_case: Optional[ReturnCase] = None
    outcome: Optional[Outcome] = None
    claim_reason: Optional[str] = None
    clawback: dict = field(default_factory=dict)

    @property
    def is_terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def party_role(self, account_id: str) -> Optional[str]:
        if account_id == self.buyer_id:
            return "buyer"
        if account_id == self.seller_id:
            return "seller"
        return None


class ExchangeModule:
    def __init__(self, config: EngineConfig, ledger: Ledger,
                 reputation: ReputationBook, rewards: RewardGranter,
                 qr_rng: random.Random, trace=None, clock=None):
        self.config = config
        self.ledger = ledger
        self.reputation = reputation
        self.rewards = rewards
        self.qr_rng = qr_rng
        self.trace = trace
        self._clock = clock or (lambda: 0)
        self.listings: dict[str, Listing] = {}
        self.sessions: dict[str, ExchangeSession] = {}
        self._next_listing = 0
        self._next_session = 0

    @property
    def day(self) -> int:
        return self._clock()

    # --- internals ---

    def _transition(self, session: ExchangeSession, rule: str,
                    actor: str = "engine", **extra):
        to_state = TRANSITIONS.get((session.state, rule))
        if to_state is None:
            raise WrongState(
                f"rule {rule!r} is not legal from state {session.state}")
        payload = {"session": session.id, "from": str(session.state),
                   "to": str(to_state), "rule": rule, "actor": actor}
        payload.update(extra)
        session.state = to_state
        if self.trace is not None:
            self.trace.emit("exchange", "transition", payload)
        return session

    def _require_state(self, session: ExchangeSession, *states):
        if session.state not in states:
            raise WrongState(
                f"session {session.id} is {session.state}, expected one of "
                f"{[str(s) for s in states]}")

    def _session(self, session_id: str) -> ExchangeSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise WrongState(f"unknown session {session_id!r}") from None

    def _close_listing(self, session: ExchangeSession, relist: bool):
        listing = self.listings[session.listing_id]
        listing.status = "active" if relist else "closed"

    def _finish(self, session: ExchangeSession, rule: str, outcome: Outcome,
                actor: str = "engine", escrow_to: Optional[str] = None,
                relist: bool = False):
        """Terminal settlement: escrow disposition, transition with the
        outcome attached, listing closure, then reward grants."""
        escrow = self.ledger.escrows.get(session.id)
        if escrow_to is not None:
            if escrow is None:
                raise WrongState(f"session {session.id} has no escrow to settle")
            if escrow_to == "seller":
                self.ledger.settle_escrow(
                    escrow, "to-seller", caller="exchange",
                    seller=self.ledger.get(session.seller_id))
            else:
                self.ledger.settle_escrow(escrow, "to-buyer", caller="exchange")
            outcome.escrow_to = escrow_to
        session.outcome = outcome
        self._transition(session, rule, actor=actor, outcome=outcome.to_dict())
        self._close_listing(session, relist=relist)
        if outcome.kind in SUCCESS_KINDS:
            self.rewards.grant_for_session(session)
        return session

    # --- listing and purchase ---

    def list_item(self, seller_id: str, description: str, price: int,
                  token: TokenKind, category: str) -> Listing:
        seller = self.ledger.get(seller_id)
        if not seller.has_active_stake:
            raise SellerNotActivated(
                f"{seller_id} has no active seller deposit staked")
        usd = self.config.usd_value(price, token)
        if usd < self.config.listing.minimum_usd:
            raise BelowMinimumValue(
                f"listing value {float(usd):.2f} USD is below the "
                f"{float(self.config.listing.minimum_usd):.2f} USD floor")
        if category not in self.config.categories:
            raise BelowMinimumValue(f"unknown category {category!r}")
        listing = Listing(id=f"lst-{self._next_listing}", seller_id=seller_id,
                          description=description, price=price, token=token,
                          category=category)
        self._next_listing += 1
        self.listings[listing.id] = listing
        if self.trace is not None:
            self.trace.emit("exchange", "listing", {
                "rule": "list-item", "listing": listing.id, "seller": seller_id,
                "price": price, "token": str(token), "category": category})
        return listing

    def request_purchase(self, buyer_id: str, listing_id: str,
                         session_id: Optional[str] = None) -> ExchangeSession:
        listing = self.listings[listing_id]
        if listing.status != "active":
            raise ListingUnavailable(f"listing {listing_id} is {listing.status}")
        if buyer_id == listing.seller_id:
            raise SelfDealing("buyer and seller must be distinct accounts")
        self.ledger.get(buyer_id)  # must exist
        if session_id is None:
            session_id = f"sess-{self._next_session:05d}"
            self._next_session += 1
        if session_id in self.sessions:
            raise ListingUnavailable(f"session id {session_id!r} already in use")
        session = ExchangeSession(
            id=session_id, listing_id=listing_id, buyer_id=buyer_id,
            seller_id=listing.seller_id, price=listing.price,
            token=listing.token, created_day=self.day, stage_anchor=self.day)
        self.sessions[session_id] = session
        listing.status = "in-exchange"
        self._transition(session, R_PURCHASE, actor=buyer_id)
        return session

    # --- validation and terms ---

    def validate_sale(self, seller_id: str, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        if seller_id != session.seller_id:
            raise WrongParty(f"{seller_id} is not the seller of {session_id}")
        self._require_state(session, S.PURCHASE_REQUESTED)
        session.stage_anchor = self.day
        return self._transition(session, R_VALIDATE, actor=seller_id)

    def decline_sale(self, seller_id: str, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        if seller_id != session.seller_id:
            raise WrongParty(f"{seller_id} is not the seller of {session_id}")
        self._require_state(session, S.PURCHASE_REQUESTED)
        return self._finish(session, R_DECLINE,
                            Outcome(kind="cancelled", stage="C1"),
                            actor=seller_id, relist=True)

    def agree_terms(self, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        self._require_state(session, S.SELLER_VALIDATED)
        session.stage_anchor = self.day
        return self._transition(session, R_AGREE, actor="both")

    # --- escrow and QR ---

    def fund_escrow(self, buyer_id: str, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        if buyer_id != session.buyer_id:
            raise WrongParty(f"{buyer_id} is not the buyer of {session_id}")
        self._require_state(session, S.TERMS_AGREED)
        self.ledger.lock_escrow(session.id, self.ledger.get(buyer_id),
                                session.price, session.token)
        session.t0 = self.day
        self._transition(session, R_FUND, actor=buyer_id)
        # Nothing blocks the flow between funding and the dropoff window, so
        # the session advances immediately.
        return self._transition(session, R_AWAIT_DROPOFF)

    def request_qr(self, seller_id: str, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        if seller_id != session.seller_id:
            raise WrongParty(f"{seller_id} is not the seller of {session_id}")
        self._require_state(session, S.AWAITING_DROPOFF)
        session.qr_nonce = f"{self.qr_rng.getrandbits(128):032x}"
        session.qr_issued_day = self.day
        return self._transition(session, R_QR_ISSUE, actor=seller_id)

    def confirm_dropoff(self, seller_id: str, session_id: str, qr_included: bool,
                        tracking: str, number: Optional[str] = None) -> ExchangeSession:
        """tracking is one of 'informed' (with a number), 'declared-lost' or
        'silent'. Forgetting the QR is legal; the buyer is then credited the
        participation grant by default and the seller forfeits its reward."""
        session = self._session(session_id)
        if seller_id != session.seller_id:
            raise WrongParty(f"{seller_id} is not the seller of {session_id}")
        self._require_state(session, S.AWAITING_DROPOFF, S.QR_ISSUED)
        deadline = session.t0 + self.config.deadlines.dropoff_window
        if self.day > deadline:
            raise DeadlineExpired(
                f"dropoff window closed on day {deadline}, today is {self.day}")
        if qr_included and session.qr_nonce is None:
            raise WrongState("cannot include a QR code that was never issued")
        session.qr_included = qr_included
        session.qr_available = qr_included
        session.dropoff_day = self.day
        if tracking == "informed":
            if not number:
                raise ValueError("tracking 'informed' needs a tracking number")
            session.tracking = "informed"
            session.tracking_number = number
            session.t1 = self.day
            return self._transition(session, R_DROPOFF_TRACKED, actor=seller_id,
                                    qr_included=qr_included)
        if tracking == "declared-lost":
            session.tracking = "declared-lost"
            return self._transition(session, R_DROPOFF_LOST, actor=seller_id,
                                    qr_included=qr_included)
        if tracking == "silent":
            return self._transition(session, R_DROPOFF_SILENT, actor=seller_id,
                                    qr_included=qr_included)
        raise ValueError(f"unknown tracking disposition {tracking!r}")

    def inform_tracking(self, seller_id: str, session_id: str,
                        number: str) -> ExchangeSession:
        session = self._session(session_id)
        if seller_id != session.seller_id:
            raise WrongParty(f"{seller_id} is not the seller of {session_id}")
        self._require_state(session, S.TRACKING_MISSING)
        session.tracking = "informed"
        session.tracking_number = number
        session.t1 = self.day
        return self._transition(session, R_TRACK_LATE, actor=seller_id)

    def declare_tracking_lost(self, seller_id: str, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        if seller_id != session.seller_id:
            raise WrongParty(f"{seller_id} is not the seller of {session_id}")
        self._require_state(session, S.TRACKING_MISSING)
        session.tracking = "declared-lost"
        return self._transition(session, R_TRACK_LOST, actor=seller_id)

    # --- transit and delivery ---

    def mark_delivered(self, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        self._require_state(session, S.IN_TRANSIT)
        if session.return_case is not None:
            raise WrongState("return flow in progress; delivery ignored")
        session.delivered_day = self.day
        return self._transition(session, R_DELIVER, actor="carrier")

    # --- receipt confirmation ---

    def report_qr_missing(self, buyer_id: str, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        if buyer_id != session.buyer_id:
            raise WrongParty(f"{buyer_id} is not the buyer of {session_id}")
        self._require_state(session, S.DELIVERED)
        confirm_deadline = session.t1 + self.config.deadlines.confirm_window
        response_deadline = self.day + self.config.deadlines.qr_response_window
        # The seller's reply window must always end before the confirmation
        # window, else the query cannot be honoured.
        if response_deadline >= confirm_deadline:
            raise DeadlineExpired(
                "too late to query: the reply window would outlive the "
                "confirmation window")
        session.t1_prime = self.day
        return self._transition(session, R_QR_QUERY, actor=buyer_id)

    def respond_qr(self, seller_id: str, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        if seller_id != session.seller_id:
            raise WrongParty(f"{seller_id} is not the seller of {session_id}")
        self._require_state(session, S.AWAITING_QR)
        deadline = session.t1_prime + self.config.deadlines.qr_response_window
        if self.day > deadline:
            raise DeadlineExpired(f"reply window closed on day {deadline}")
        if session.qr_nonce is None:
            session.qr_nonce = f"{self.qr_rng.getrandbits(128):032x}"
        session.qr_available = True
        session.qr_responded = True
        return self._transition(session, R_QR_RESPONSE, actor=seller_id)

    def confirm_receipt(self, buyer_id: str, session_id: str, via: str,
                        nonce: Optional[str] = None) -> ExchangeSession:
        session = self._session(session_id)
        if buyer_id != session.buyer_id:
            raise WrongParty(f"{buyer_id} is not the buyer of {session_id}")
        self._require_state(session, S.DELIVERED, S.AWAITING_QR)
        deadline = session.t1 + self.config.deadlines.confirm_window
        if self.day > deadline:
            raise DeadlineExpired(
                f"confirmation window closed on day {deadline}")
        if via == "scan":
            if session.qr_nonce is None or nonce != session.qr_nonce:
                raise NonceMismatch("presented code does not match the issued one")
            session.scan_eligible = True
        elif via != "manual":
            raise ValueError(f"unknown confirmation channel {via!r}")
        session.receipt_confirmed = True
        session.receipt_via = via
        session.t2 = self.day
        rule = R_SCAN if via == "scan" else R_MANUAL
        return self._transition(session, rule, actor=buyer_id)

    # --- satisfaction and resolution ---

    def answer_satisfaction(self, buyer_id: str, session_id: str,
                            satisfied: bool) -> ExchangeSession:
        session = self._session(session_id)
        if buyer_id != session.buyer_id:
            raise WrongParty(f"{buyer_id} is not the buyer of {session_id}")
        self._require_state(session, S.AWAITING_SATISFACTION)
        deadline = session.t2 + self.config.deadlines.satisfaction_window
        if self.day > deadline:
            raise DeadlineExpired(f"satisfaction window closed on day {deadline}")
        if satisfied:
            return self._finish(
                session, R_SAT_YES,
                Outcome(kind="success-confirmed", satisfaction=True),
                actor=buyer_id, escrow_to="seller")
        session.t3 = self.day
        return self._transition(session, R_SAT_NO, actor=buyer_id,
                                satisfaction=False)

    def resolve_mutually(self, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        self._require_state(session, S.RESOLUTION_WINDOW)
        deadline = session.t3 + self.config.deadlines.resolution_window
        if self.day > deadline:
            raise DeadlineExpired(f"resolution window closed on day {deadline}")
        self.reputation.penalize(session.seller_id, "resolution",
                                 self.config.reputation.resolution_penalty,
                                 caller="exchange", day=self.day)
        return self._finish(session, R_RESOLVE,
                            Outcome(kind="resolved-mutually", satisfaction=False),
                            actor="both", escrow_to="seller")

    # --- cancellation stages ---

    def cancel(self, party_id: str, session_id: str) -> ExchangeSession:
        session = self._session(session_id)
        role = session.party_role(party_id)
        if role is None:
            raise WrongParty(f"{party_id} is not a party of {session_id}")
        dl = self.config.deadlines
        state = session.state

        if state in PRE_ESCROW_STATES:
            return self._finish(session, R_CANCEL_C1,
                                Outcome(kind="cancelled", stage="C1"),
                                actor=party_id, relist=True)
        if state in DROPOFF_STATES:
            return self._finish(session, R_CANCEL_C2,
                                Outcome(kind="cancelled", stage="C2"),
                                actor=party_id, escrow_to="buyer", relist=True)
        if state in (S.IN_TRANSIT, S.TRACKING_MISSING):
            if role != "buyer":
                raise WrongParty("only the buyer may cancel after shipment")
            return self._open_return(session, "C3", R_CANCEL_C3, party_id)
        if state in POST_DELIVERY_STATES:
            if role != "buyer":
                raise WrongParty("only the buyer may cancel after delivery")
            if self.day > session.t1 + dl.return_cancel_window:
                raise CancellationWindowClosed(
                    f"post-delivery cancellation closed on day "
                    f"{session.t1 + dl.return_cancel_window}")
            return self._open_return(session, "C4", R_CANCEL_C4, party_id)
        if state is S.SETTLED:
            if role != "buyer":
                raise WrongParty("only the buyer may cancel after settlement")
            if session.outcome is None or session.outcome.kind not in SUCCESS_KINDS:
                raise CancellationWindowClosed(
                    "post-settlement cancellation applies to successful "
                    "exchanges only")
            if session.t1 is None or self.day > session.t1 + dl.late_cancel_window:
                raise CancellationWindowClosed(
                    "post-settlement cancellation window closed")
            return self._open_return(session, "C5", R_CANCEL_C5, party_id)
        raise CancellationWindowClosed(
            f"no cancellation stage applies in state {state}")

    def _open_return(self, session: ExchangeSession, stage: str, rule: str,
                     actor: str) -> ExchangeSession:
        if session.return_case is not None:
            raise WrongState("a return flow was already opened for this session")
        session.return_case = ReturnCase(
            stage=stage, opened_day=self.day,
            deadline=self.day + self.config.deadlines.return_flow_window)
        return self._transition(session, rule, actor=actor, stage=stage)

    def return_received(self, seller_id: str, session_id: str) -> ExchangeSession:
        """Seller confirms the returned package: refund the buyer and close."""
        session = self._session(session_id)
        if seller_id != session.seller_id:
            raise WrongParty(f"{seller_id} is not the seller of {session_id}")
        case = session.return_case
        if case is None or case.closed:
            raise WrongState(f"no open return flow on {session_id}")
        case.closed = True
        if case.stage in ("C3", "C4"):
            return self._finish(session, R_RETURN_RECEIVED,
                                Outcome(kind="cancelled", stage=case.stage),
                                actor=seller_id, escrow_to="buyer")
        # C5: escrow is long settled; claw the released value back.
        paid = self._clawback_refund(session)
        return self._transition(session, R_RETURN_RECEIVED, actor=seller_id,
                                stage="C5", refund=paid)

    def _clawback_refund(self, session: ExchangeSession) -> dict:
        """Post-settlement refund: seller balance first, then the remainder
        valued in LZS from the seller's LZS balance and seller deposit."""
        from .ledger import convert_amount
        seller = self.ledger.get(session.seller_id)
        buyer = self.ledger.get(session.buyer_id)
        owed = session.price
        token = session.token
        paid_direct = min(owed, seller.balances[token])
        if paid_direct > 0:
            self.ledger.transfer(seller, buyer, paid_direct, token,
                                 reason="late-cancel-refund")
        shortfall = owed - paid_direct
        paid_lzs = 0
        stake_drawn = 0
        if shortfall > 0:
            owed_lzs = convert_amount(shortfall, token, TokenKind.LZS,
                                      self.config.rates.lzs_per_lzdc)
            paid_lzs = min(owed_lzs, seller.balances[TokenKind.LZS])
            if paid_lzs > 0:
                self.ledger.transfer(seller, buyer, paid_lzs, TokenKind.LZS,
                                     reason="late-cancel-refund")
            stake_drawn = self.ledger.take_from_stake(
                seller, owed_lzs - paid_lzs, buyer, caller="exchange",
                reason="late-cancel-refund")
        residual = shortfall - (0 if shortfall == 0 else
                                convert_amount(paid_lzs + stake_drawn,
                                               TokenKind.LZS, token,
                                               self.config.rates.lzs_per_lzdc))
        session.clawback = {"owed": owed, "paid_direct": paid_direct,
                            "paid_lzs": paid_lzs, "stake_drawn": stake_drawn,
                            "residual": max(0, residual)}
        return session.clawback

    # --- arbitration handoff ---

    def claim(self, claimant_id: str, session_id: str, reason: str) -> ExchangeSession:
        """Route the session into dispute; the arbitration module owns it
        from here."""
        session = self._session(session_id)
        role = session.party_role(claimant_id)
        if role is None:
            raise WrongParty(f"{claimant_id} is not a party of {session_id}")
        self._require_state(session, S.TRACKING_MISSING, S.IN_TRANSIT,
                            S.DELIVERED, S.AWAITING_QR)
        if session.state in (S.DELIVERED, S.AWAITING_QR):
            deadline = session.t1 + self.config.deadlines.confirm_window
            if self.day > deadline:
                raise DeadlineExpired(
                    f"claim window closed with confirmation on day {deadline}")
        session.claim_reason = reason
        return self._transition(session, R_CLAIM, actor=claimant_id,
                                reason=reason)

    def apply_ruling(self, session_id: str, winner_role: str,
                     ruling: str) -> ExchangeSession:
        """Execute a final arbitration ruling against the escrow (or, for a
        post-settlement case, against the seller's funds)."""
        session = self._session(session_id)
        if session.state is S.DISPUTED:
            escrow_to = "buyer" if winner_role == "buyer" else "seller"
            return self._finish(session, R_RULING,
                                Outcome(kind="arbitrated", ruling=ruling),
                                actor="arbitration", escrow_to=escrow_to)
        if session.state is S.SETTLED:
            refund = self._clawback_refund(session) if winner_role == "buyer" else {}
            return self._transition(session, R_RULING, actor="arbitration",
                                    ruling=ruling, refund=refund)
        raise WrongState(f"no ruling applies in state {session.state}")

    # --- the clock ---

    def tick_day(self, day: int) -> list:
        """Fire every due timeout for this day. Deterministic order: session
        id ascending, then the precedence list below."""
        fired = []
        dl = self.config.deadlines
        for sid in sorted(self.sessions):
            session = self.sessions[sid]
            while True:
                rule = self._due_timeout(session, day, dl)
                if rule is None:
                    break
                fired.append((sid, rule))
        return fired

    def _due_timeout(self, session: ExchangeSession, day: int, dl) -> Optional[str]:
        state = session.state
        case = session.return_case

        # 1. return flow deadline dominates every other timer
        if case is not None and not case.closed:
            if day > case.deadline:
                case.closed = True
                if case.stage == "C5":
                    if self.trace is not None:
                        self.trace.emit("exchange", "note", {
                            "session": session.id, "rule": "c5-return-timeout"})
                    return None
                self._transition(session, R_TIMEOUT_RETURN, stage=case.stage)
                return R_TIMEOUT_RETURN
            return None
        if state in TERMINAL_STATES or state is S.DISPUTED:
            return None

        # 2. pre-escrow stages
        if state in PRE_ESCROW_STATES:
            if day > session.stage_anchor + dl.pre_escrow_window:
                self._finish(session, R_TIMEOUT_PRE_ESCROW,
                             Outcome(kind="cancelled", stage="C1"), relist=True)
                return R_TIMEOUT_PRE_ESCROW
            return None

        # 3. dropoff window
        if state in (S.AWAITING_DROPOFF, S.QR_ISSUED):
            if day > session.t0 + dl.dropoff_window:
                self._finish(session, R_TIMEOUT_DROPOFF,
                             Outcome(kind="cancelled", stage="C2"),
                             escrow_to="buyer", relist=True)
                return R_TIMEOUT_DROPOFF
            return None

        # 4. missing-QR reply window
        if state is S.AWAITING_QR and not session.qr_responded \
                and not session.qr_available:
            if day > session.t1_prime + dl.qr_response_window:
                self.reputation.penalize(
                    session.seller_id, "qr-nonresponse",
                    self.config.reputation.qr_nonresponse_penalty,
                    caller="exchange", day=day)
                if session.qr_nonce is None:
                    session.qr_nonce = f"{self.qr_rng.getrandbits(128):032x}"
                session.qr_available = True
                self._transition(session, R_QR_PLATFORM)
                return R_QR_PLATFORM

        # 5. confirmation window (shipment onward, delivery or not)
        if state in (S.IN_TRANSIT, S.DELIVERED, S.AWAITING_QR):
            if day > session.t1 + dl.confirm_window:
                self._finish(session, R_TIMEOUT_CONFIRM,
                             Outcome(kind="success-by-default"),
                             escrow_to="seller")
                return R_TIMEOUT_CONFIRM
            return None

        # 6. satisfaction window
        if state is S.AWAITING_SATISFACTION:
            if day > session.t2 + dl.satisfaction_window:
                self._finish(session, R_TIMEOUT_SATISFACTION,
                             Outcome(kind="success-by-default"),
                             escrow_to="seller")
                return R_TIMEOUT_SATISFACTION
            return None

        # 7. resolution window
        if state is S.RESOLUTION_WINDOW:
            if day > session.t3 + dl.resolution_window:
                self._transition(session, R_TIMEOUT_RESOLUTION)
                return R_TIMEOUT_RESOLUTION
            return None

        # 8. tracking never informed
        if state is S.TRACKING_MISSING:
            if day > session.dropoff_day + dl.tracking_grace_window:
                session.claim_reason = "not-delivered"
                self._transition(session, R_TIMEOUT_TRACKING)
                return R_TIMEOUT_TRACKING
            return None
        return None

    # --- reporting ---

    def outcome_summary(self) -> dict:
        counts: dict[str, int] = {}
        for session in self.sessions.values():
            if session.outcome is not None:
                kind = session.outcome.kind
                if kind == "cancelled":
                    kind = f"cancelled-{session.outcome.stage}"
                counts[kind] = counts.get(kind, 0) + 1
            else:
                counts[f"open-{session.state}"] = \
                    counts.get(f"open-{session.state}", 0) + 1
        return dict(sorted(counts.items()))
