"""Exception hierarchy for the protocol engine.

Every rejected operation raises a subclass of ProtocolError; invariant breaches
raise InvariantViolation subclasses, which abort the run with a diagnostic
trace rather than being handled.
"""


class ProtocolError(Exception):
    """An operation was rejected by a precondition or rule check."""


class InvariantViolation(Exception):
    """Engine-internal consistency breach. Never caught by protocol code."""


# --- ledger ---

class InsufficientFunds(ProtocolError):
    pass


class ZeroAmount(ProtocolError):
    pass


class AlreadyStaked(ProtocolError):
    pass


class BelowMinimumStake(ProtocolError):
    pass


class DuplicateEscrow(ProtocolError):
    pass


class UnsupportedToken(ProtocolError):
    pass


class AlreadySettled(ProtocolError):
    pass


class UnauthorizedCaller(ProtocolError):
    pass


class ConservationViolation(InvariantViolation):
    pass


# --- exchange ---

class SellerNotActivated(ProtocolError):
    pass


class BelowMinimumValue(ProtocolError):
    pass


class ListingUnavailable(ProtocolError):
    pass


class SelfDealing(ProtocolError):
    pass


class WrongState(ProtocolError):
    pass


class DeadlineExpired(ProtocolError):
    pass


class NonceMismatch(ProtocolError):
    pass


class CancellationWindowClosed(ProtocolError):
    pass


class WrongParty(ProtocolError):
    pass


class ClockRegression(ProtocolError):
    pass


# --- reputation ---

class AlreadyInitialized(ProtocolError):
    pass


class NotTerminal(ProtocolError):
    pass


class DuplicateFeedback(ProtocolError):
    pass


class NotParticipant(ProtocolError):
    pass


# --- incentives ---

class AlreadyGranted(ProtocolError):
    pass


class InvalidParams(ProtocolError):
    pass


# --- arbitration ---

class NotClaimEligible(ProtocolError):
    pass


class WrongTier(ProtocolError):
    pass


class InsufficientFee(ProtocolError):
    pass


class InsufficientJurors(ProtocolError):
    pass


class NotAJuror(ProtocolError):
    pass


class CommitmentMismatch(ProtocolError):
    pass


class RoundNotClosed(ProtocolError):
    pass


class AppealWindowClosed(ProtocolError):
    pass


# --- governance ---

class InsufficientLZSP(ProtocolError):
    pass


class MalformedPayload(ProtocolError):
    pass


class NotActive(ProtocolError):
    pass


class NotAMember(ProtocolError):
    pass


class AlreadyVoted(ProtocolError):
    pass


class StillActive(ProtocolError):
    pass


class NotCommitteeMember(ProtocolError):
    pass


class DuplicateSignature(ProtocolError):
    pass


class NotApproved(ProtocolError):
    pass


class NotQueued(ProtocolError):
    pass


class Vetoed(ProtocolError):
    pass


class LowReputationDelegatee(ProtocolError):
    pass


class SelfDelegation(ProtocolError):
    pass


class Blacklisted(ProtocolError):
    pass


# --- analytics ---

class NonpositiveRate(ProtocolError):
    pass


class EmptyInput(ProtocolError):
    pass


# --- scenario / trace ---

class ParseError(ProtocolError):
    pass


class ScenarioValidationError(ProtocolError):
    """Carries every violation found in a scenario file, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class TamperedTrace(InvariantViolation):
    """Trace verification failed. `seq` is the first bad sequence number."""

    def __init__(self, seq, detail=""):
        self.seq = seq
        super().__init__(f"trace tampered at event {seq}: {detail}")
