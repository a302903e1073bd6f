"""Peer reputation: every account starts at 50 of 100 points, moves by
post-exchange feedback and protocol penalties, and is always clamped to
[0, 100]. Comments are stored verbatim and never deleted."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .config import EngineConfig
from .errors import (
    AlreadyInitialized,
    DuplicateFeedback,
    NotParticipant,
    NotTerminal,
    UnauthorizedCaller,
)

PENALTY_CALLERS = ("exchange", "arbitration")


def clamp(value: int) -> int:
    return max(0, min(100, value))


@dataclass
class ReputationScore:
    value: int
    history: list = field(default_factory=list)  # (day, delta, reason, counterparty)

    def apply(self, day: int, delta: int, reason: str, counterparty: Optional[str]):
        self.value = clamp(self.value + delta)
        self.history.append((day, delta, reason, counterparty))


@dataclass
class Feedback:
    rater: str
    ratee: str
    polarity: str          # "good" | "bad"
    session_id: str
    comment: Optional[str] = None


class ReputationBook:
    def __init__(self, config: EngineConfig, trace=None):
        self.config = config
        self.trace = trace
        self.scores: dict[str, ReputationScore] = {}
        self.comments: dict[str, list] = {}
        self._feedback_seen: set = set()   # (rater, session_id)

    def _emit(self, kind: str, **payload):
        if self.trace is not None:
            self.trace.emit("reputation", kind, payload)

    def init_reputation(self, account_id: str) -> ReputationScore:
        if account_id in self.scores:
            raise AlreadyInitialized(f"{account_id} already has a reputation score")
        score = ReputationScore(value=self.config.reputation.initial)
        self.scores[account_id] = score
        self.comments[account_id] = []
        self._emit("init", account=account_id, value=score.value)
        return score

    def has(self, account_id: str) -> bool:
        return account_id in self.scores

    def value_of(self, account_id: str) -> int:
        return self.scores[account_id].value

    def apply_feedback(self, feedback: Feedback, session, day: int) -> int:
        """One rating per (rater, session); both ends must be the session's
        parties and the session must be terminal."""
        if not session.is_terminal:
            raise NotTerminal(f"session {feedback.session_id} is not terminal")
        parties = {session.buyer_id, session.seller_id}
        if feedback.rater not in parties or feedback.ratee not in parties \
                or feedback.rater == feedback.ratee:
            raise NotParticipant(
                f"{feedback.rater} -> {feedback.ratee} are not the two parties "
                f"of session {feedback.session_id}")
        key = (feedback.rater, feedback.session_id)
        if key in self._feedback_seen:
            raise DuplicateFeedback(
                f"{feedback.rater} already rated session {feedback.session_id}")
        self._feedback_seen.add(key)
        if feedback.polarity == "good":
            delta = self.config.reputation.good_delta
        elif feedback.polarity == "bad":
            delta = -self.config.reputation.bad_delta
        else:
            raise ValueError(f"unknown polarity {feedback.polarity!r}")
        score = self.scores[feedback.ratee]
        score.apply(day, delta, f"feedback-{feedback.polarity}", feedback.rater)
        if feedback.comment is not None:
            self.comments[feedback.ratee].append(
                {"day": day, "from": feedback.rater,
                 "session": feedback.session_id, "text": feedback.comment})
        self._emit("feedback", rater=feedback.rater, ratee=feedback.ratee,
                   polarity=feedback.polarity, session=feedback.session_id,
                   value=score.value)
        return score.value

    def penalize(self, account_id: str, reason: str, amount: int, caller: str,
                 day: int) -> int:
        if caller not in PENALTY_CALLERS:
            raise UnauthorizedCaller(f"{caller!r} may not apply penalties")
        if amount < 0:
            raise ValueError("penalty amount must be >= 0")
        score = self.scores[account_id]
        score.apply(day, -amount, reason, None)
        self._emit("penalty", account=account_id, reason=reason, amount=amount,
                   value=score.value)
        return score.value

    def distribution(self) -> dict:
        """Score histogram for run summaries."""
        buckets: dict[int, int] = {}
        for score in self.scores.values():
            decile = min(score.value // 10, 9)
            buckets[decile] = buckets.get(decile, 0) + 1
        return {f"{d * 10}-{d * 10 + 9 if d < 9 else 100}": buckets[d]
                for d in sorted(buckets)}
