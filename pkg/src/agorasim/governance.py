"""DAO governance: three involvement layers, LZSP-weighted voting with a
per-voter cap, a two-level proposal lifecycle (7-day and 30-day active
periods), a five-member committee deciding by 80% quorum with 50% minimum
agreement, a post-approval veto window, queue/execute steps that apply typed
configuration patches, and weight delegation without re-delegation.

Membership is derived, never stored: an account is a member exactly while it
has an accepted proposal on record, holds enough LZSP and keeps enough
reputation. Falling below any requirement demotes it immediately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from typing import Optional

from .config import PATCHABLE_KEYS, EngineConfig
from .errors import (
    AlreadyVoted,
    Blacklisted,
    DuplicateSignature,
    InsufficientLZSP,
    LowReputationDelegatee,
    MalformedPayload,
    NotActive,
    NotAMember,
    NotApproved,
    NotCommitteeMember,
    NotQueued,
    SelfDelegation,
    StillActive,
    Vetoed,
)
from .ledger import Ledger, TokenKind

LEVELS = ("low-medium", "high")


@dataclass
class ProposalPayload:
    """On-ledger call description mapped onto engine-config patches: each
    target names a patchable key, the signature names the patch operation,
    and the calldata carries the encoded value."""

    targets: list
    values: list
    signatures: list
    calldata: list
    description: str

    def validate(self):
        n = len(self.targets)
        if n == 0:
            raise MalformedPayload("payload must contain at least one call")
        if not (len(self.values) == len(self.signatures) == len(self.calldata) == n):
            raise MalformedPayload("payload call arrays must align")
        if not self.description:
            raise MalformedPayload("payload needs a description")
        for target, sig in zip(self.targets, self.signatures):
            if target not in PATCHABLE_KEYS:
                raise MalformedPayload(f"unknown patch target {target!r}")
            if sig != "set":
                raise MalformedPayload(f"unknown patch operation {sig!r}")

    def patches(self) -> list:
        return list(zip(self.targets, self.calldata))


@dataclass
class Proposal:
    id: str
    proposer: str
    level: str
    payload: ProposalPayload
    created_day: int
    close_day: int
    state: str = "created"   # created, active, approved, vetoed, queued,
                             # executed, rejected, failed
    up: int = 0
    down: int = 0
    voters: set = field(default_factory=set)
    veto_deadline: Optional[int] = None
    committee_ratified: Optional[bool] = None
    miscategorized: bool = False


@dataclass
class Delegation:
    delegator: str
    delegatee: str
    amount: int
    active: bool = True


class GovernanceModule:
    def __init__(self, config: EngineConfig, ledger: Ledger, reputation,
                 trace=None, clock=None):
        self.config = config
        self.ledger = ledger
        self.reputation = reputation
        self.trace = trace
        self._clock = clock or (lambda: 0)
        self.proposals: dict[str, Proposal] = {}
        self.delegations: dict[str, Delegation] = {}    # by delegator
        self.committee: list = []
        self.committee_term_start: int = 0
        self.accepted_proposals: dict[str, int] = {}    # account -> count
        self.miscategorization_count: dict[str, int] = {}
        self.blacklist: dict[str, Optional[int]] = {}   # account -> until day (None = forever)
        self._next_proposal = 0

    @property
    def day(self) -> int:
        return self._clock()

    def _emit(self, kind: str, **payload):
        if self.trace is not None:
            self.trace.emit("governance", kind, payload)

    # --- membership (derived) ---

    def seat_committee(self, members: list, day: int):
        if len(members) != self.config.governance.committee_size:
            raise ValueError(
                f"committee must have exactly "
                f"{self.config.governance.committee_size} members")
        self.committee = list(members)
        self.committee_term_start = day
        self._emit("committee-seated", members=list(members), day=day,
                   term_days=self.config.governance.committee_term_days)

    def grant_founding_membership(self, account_id: str):
        """Scenario bootstrap: credits an accepted proposal so the first
        members exist before any proposal could have passed."""
        self.accepted_proposals[account_id] = \
            self.accepted_proposals.get(account_id, 0) + 1

    def membership_lzsp(self, account_id: str) -> int:
        """LZSP counted toward membership: spendable plus own delegated-out."""
        acct = self.ledger.get(account_id)
        return acct.balances[TokenKind.LZSP] + acct.governance_stake

    def is_member(self, account_id: str) -> bool:
        if account_id not in self.ledger.accounts:
            return False
        return (self.accepted_proposals.get(account_id, 0) > 0
                and self.membership_lzsp(account_id) >= self.config.governance.membership_lzsp
                and self.reputation.value_of(account_id) >= self.config.governance.membership_reputation)

    def layer_of(self, account_id: str) -> str:
        if not self.is_member(account_id):
            return "basic"
        delegation = self.delegations.get(account_id)
        if delegation is not None and delegation.active:
            return "delegate"
        return "member"

    def effective_weight(self, account_id: str) -> int:
        """Own spendable LZSP plus weight delegated in, before the cap.
        Received weight never flows onward through a second delegation."""
        own = self.ledger.get(account_id).balances[TokenKind.LZSP]
        received = sum(d.amount for d in self.delegations.values()
                       if d.active and d.delegatee == account_id)
        return own + received

    # --- proposals ---

    def submit_proposal(self, proposer_id: str, level: str,
                        payload: ProposalPayload, fee: Optional[int] = None) -> Proposal:
        if level not in LEVELS:
            raise MalformedPayload(f"unknown proposal level {level!r}")
        payload.validate()
        until = self.blacklist.get(proposer_id, 0)
        if proposer_id in self.blacklist and (until is None or self.day <= until):
            raise Blacklisted(f"{proposer_id} may not submit proposals now")
        required = self.config.governance.proposal_fee
        fee = required if fee is None else fee
        if fee < required:
            raise InsufficientLZSP(f"proposal fee is {required} micro-LZSP")
        proposer = self.ledger.get(proposer_id)
        if proposer.balances[TokenKind.LZSP] < required:
            raise InsufficientLZSP(
                f"{proposer_id} cannot cover the proposal fee of {required}")
        self.ledger.burn(proposer, TokenKind.LZSP, required, reason="proposal-fee")

        period = (self.config.governance.low_medium_period_days
                  if level == "low-medium"
                  else self.config.governance.high_period_days)
        proposal = Proposal(
            id=f"prop-{self._next_proposal}", proposer=proposer_id, level=level,
            payload=payload, created_day=self.day, close_day=self.day + period,
            state="active")
        self._next_proposal += 1
        self.proposals[proposal.id] = proposal
        self._emit("proposal-submitted", proposal=proposal.id,
                   proposer=proposer_id, level=level,
                   created=proposal.created_day, closes=proposal.close_day,
                   description=payload.description)
        return proposal

    def vote(self, voter_id: str, proposal_id: str, direction: str) -> dict:
        proposal = self.proposals[proposal_id]
        if proposal.state != "active" or self.day >= proposal.close_day:
            raise NotActive(f"proposal {proposal_id} is not open for voting")
        if not self.is_member(voter_id):
            raise NotAMember(f"{voter_id} is not a member")
        delegation = self.delegations.get(voter_id)
        if delegation is not None and delegation.active:
            raise NotAMember(
                f"{voter_id} delegated their weight and cannot vote directly")
        if voter_id in proposal.voters:
            raise AlreadyVoted(f"{voter_id} already voted on {proposal_id}")
        weight = min(self.effective_weight(voter_id),
                     self.config.governance.vote_cap)
        proposal.voters.add(voter_id)
        if direction == "up":
            proposal.up += weight
        elif direction == "down":
            proposal.down += weight
        else:
            raise ValueError(f"unknown vote direction {direction!r}")
        self._emit("vote", proposal=proposal_id, voter=voter_id,
                   direction=direction, weight=weight)
        return {"up": proposal.up, "down": proposal.down}

    def quorum_weight(self) -> int:
        circulating = self.ledger.minted[TokenKind.LZSP] - \
            self.ledger.burned[TokenKind.LZSP]
        return int(circulating * self.config.governance.quorum_fraction)

    def finalize(self, proposal_id: str) -> str:
        proposal = self.proposals[proposal_id]
        if proposal.state != "active":
            raise NotActive(f"proposal {proposal_id} is {proposal.state}")
        if self.day < proposal.close_day:
            raise StillActive(
                f"voting runs until day {proposal.close_day}")
        if proposal.up > proposal.down and proposal.up >= self.quorum_weight():
            proposal.state = "approved"
            proposal.veto_deadline = self.day + \
                self.config.governance.veto_window_days
            if proposal.proposer not in self.accepted_proposals:
                self.accepted_proposals[proposal.proposer] = 0
            self.accepted_proposals[proposal.proposer] += 1
        else:
            proposal.state = "rejected"
        self._emit("proposal-finalized", proposal=proposal_id,
                   state=proposal.state, up=proposal.up, down=proposal.down,
                   quorum=self.quorum_weight())
        return proposal.state

    # --- committee ---

    def committee_decide(self, subject: dict, signatures: list) -> str:
        """One-shot committee decision. `signatures` is a list of
        (member, 'yes'|'no'|'absent') pairs; quorum needs at least 80% of the
        five seats cast, approval at least half of the cast votes agreeing."""
        seen = set()
        yes = cast = 0
        for member, choice in signatures:
            if member not in self.committee:
                raise NotCommitteeMember(f"{member} does not sit on the committee")
            if member in seen:
                raise DuplicateSignature(f"{member} signed twice")
            seen.add(member)
            if choice == "yes":
                yes += 1
                cast += 1
            elif choice == "no":
                cast += 1
            elif choice != "absent":
                raise ValueError(f"unknown signature choice {choice!r}")
        decision = self.decision_rule(yes, cast)
        self._emit("committee-decision", subject=subject, yes=yes, cast=cast,
                   decision=decision)
        self._apply_committee_decision(subject, decision)
        return decision

    def decision_rule(self, yes: int, cast: int) -> str:
        gov = self.config.governance
        quorum_needed = ceil(gov.committee_size * gov.committee_quorum_fraction)
        if cast < quorum_needed:
            return "rejected"
        agreement = (yes > cast * gov.committee_agreement_fraction
                     if gov.committee_agreement_strict
                     else yes >= cast * gov.committee_agreement_fraction)
        return "approved" if agreement else "rejected"

    def _apply_committee_decision(self, subject: dict, decision: str):
        kind = subject.get("kind")
        proposal_id = subject.get("proposal")
        if kind == "ratify":
            proposal = self.proposals[proposal_id]
            if proposal.level != "high" or proposal.state != "approved":
                raise NotApproved(
                    "ratification applies to approved high-level proposals")
            proposal.committee_ratified = decision == "approved"
            if not proposal.committee_ratified:
                proposal.state = "vetoed"
        elif kind == "veto":
            proposal = self.proposals[proposal_id]
            if decision == "approved":
                if proposal.state != "approved":
                    raise NotApproved("only approved proposals can be vetoed")
                if self.day > (proposal.veto_deadline or -1):
                    raise Vetoed("veto window already elapsed")
                proposal.state = "vetoed"
        elif kind == "miscategorization":
            if decision == "approved":
                self._punish_miscategorization(proposal_id)
        else:
            raise ValueError(f"unknown committee subject {kind!r}")

    def _punish_miscategorization(self, proposal_id: str):
        proposal = self.proposals[proposal_id]
        proposal.miscategorized = True
        offender = proposal.proposer
        count = self.miscategorization_count.get(offender, 0) + 1
        self.miscategorization_count[offender] = count
        gov = self.config.governance
        if count == 1:
            penalty = int(gov.proposal_fee * gov.miscategorization_fee_fraction)
            offender_acct = self.ledger.get(offender)
            burn = min(penalty, offender_acct.balances[TokenKind.LZSP])
            if burn > 0:
                self.ledger.burn(offender_acct, TokenKind.LZSP, burn,
                                 reason="miscategorization-penalty")
            detail = {"fee_burned": burn}
        else:
            tiers = gov.blacklist_tiers_days
            idx = count - 2
            if idx < len(tiers):
                self.blacklist[offender] = self.day + tiers[idx]
                detail = {"blacklisted_until": self.blacklist[offender]}
            else:
                self.blacklist[offender] = None
                detail = {"blacklisted_until": "permanent"}
        self._emit("miscategorization-penalty", proposal=proposal_id,
                   offender=offender, offense=count, **detail)

    # --- queue and execute ---

    def queue(self, proposal_id: str) -> Proposal:
        """Callable by anyone once the veto window elapsed without a veto."""
        proposal = self.proposals.get(proposal_id)
        if proposal is None:
            raise NotApproved(f"unknown proposal {proposal_id!r}")
        if proposal.state == "vetoed":
            raise Vetoed(f"proposal {proposal_id} was vetoed")
        if proposal.state != "approved":
            raise NotApproved(f"proposal {proposal_id} is {proposal.state}")
        if self.day <= proposal.veto_deadline:
            raise NotApproved(
                f"veto window open until day {proposal.veto_deadline}")
        if proposal.level == "high" and proposal.committee_ratified is not True:
            raise NotApproved(
                "high-level proposals need committee ratification before queueing")
        proposal.state = "queued"
        self._emit("proposal-queued", proposal=proposal_id)
        return proposal

    def execute(self, proposal_id: str) -> Proposal:
        proposal = self.proposals.get(proposal_id)
        if proposal is None:
            raise NotQueued(f"unknown proposal {proposal_id!r}")
        if proposal.state == "vetoed":
            raise Vetoed(f"proposal {proposal_id} was vetoed")
        if proposal.state != "queued":
            raise NotQueued(f"proposal {proposal_id} is {proposal.state}")
        try:
            for key, value in proposal.payload.patches():
                self.config.apply_patch(key, value)
        except (KeyError, ValueError) as exc:
            proposal.state = "failed"
            self._emit("proposal-failed", proposal=proposal_id, error=str(exc))
            return proposal
        proposal.state = "executed"
        self._emit("proposal-executed", proposal=proposal_id,
                   patches=[[k, v] for k, v in proposal.payload.patches()])
        return proposal

    # --- delegation ---

    def delegate(self, delegator_id: str, delegatee_id: str) -> Delegation:
        if delegator_id == delegatee_id:
            raise SelfDelegation("cannot delegate to oneself")
        if not self.is_member(delegator_id):
            raise NotAMember(f"{delegator_id} is not a member")
        if not self.is_member(delegatee_id):
            raise NotAMember(f"{delegatee_id} is not a member")
        if self.reputation.value_of(delegatee_id) < \
                self.config.governance.membership_reputation:
            raise LowReputationDelegatee(
                f"{delegatee_id} is below the reputation threshold")
        existing = self.delegations.get(delegator_id)
        if existing is not None and existing.active:
            raise SelfDelegation(f"{delegator_id} already delegates")
        amount = self.ledger.get(delegator_id).balances[TokenKind.LZSP]
        if amount <= 0:
            raise InsufficientLZSP(f"{delegator_id} holds no LZSP to delegate")
        self.ledger.lock_governance_stake(self.ledger.get(delegator_id), amount)
        delegation = Delegation(delegator=delegator_id, delegatee=delegatee_id,
                                amount=amount)
        self.delegations[delegator_id] = delegation
        self._emit("delegated", delegator=delegator_id, delegatee=delegatee_id,
                   amount=amount)
        return delegation

    def undelegate(self, delegator_id: str) -> int:
        delegation = self.delegations.get(delegator_id)
        if delegation is None or not delegation.active:
            raise NotAMember(f"{delegator_id} has no active delegation")
        delegation.active = False
        released = self.ledger.release_governance_stake(
            self.ledger.get(delegator_id))
        self._emit("undelegated", delegator=delegator_id, amount=released)
        return released

    # --- the clock ---

    def tick_day(self, day: int) -> list:
        fired = []
        for pid in sorted(self.proposals):
            proposal = self.proposals[pid]
            if proposal.state == "approved" and proposal.level == "high" \
                    and proposal.committee_ratified is None \
                    and day > proposal.veto_deadline:
                proposal.state = "failed"
                self._emit("proposal-failed", proposal=pid,
                           error="no committee ratification inside the veto window")
                fired.append((pid, "failed"))
        expired = [a for a, until in self.blacklist.items()
                   if until is not None and day > until]
        for account in expired:
            del self.blacklist[account]
            fired.append((account, "blacklist-expired"))
        return fired

    # --- reporting ---

    def lifecycle_table(self) -> list:
        return [
            {
                "proposal": p.id, "proposer": p.proposer, "level": p.level,
                "created": p.created_day, "closes": p.close_day,
                "state": p.state, "up": p.up, "down": p.down,
                "ratified": p.committee_ratified,
            }
            for p in self.proposals.values()
        ]
