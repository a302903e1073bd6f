"""Token ledger: balances, escrow locks, seller/juror/governance stakes,
mint/burn supply tracking, and LZS<->LZDC conversion.

Conservation contract, per token kind, at every point in a run:

    sum(balances) + sum(locked escrow) + sum(pools) + sum(stakes) == minted - burned

Amounts are integer micro-units so the identity is exact. Any breach raises
ConservationViolation, which the engine turns into a diagnostic trace abort.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from math import floor
from typing import Optional

from .config import EngineConfig, MICRO
from .errors import (
    AlreadySettled,
    AlreadyStaked,
    BelowMinimumStake,
    ConservationViolation,
    DuplicateEscrow,
    InsufficientFunds,
    UnauthorizedCaller,
    UnsupportedToken,
    ZeroAmount,
)


class TokenKind(str, Enum):
    LZS = "LZS"    # utility token: escrow payments, seller deposits, court fees
    LZSP = "LZSP"  # participation token: rewards and governance weight, mint-only
    LZDC = "LZDC"  # stable token, fixed USD peg

    def __str__(self) -> str:
        return self.value


ESCROW_TOKENS = (TokenKind.LZS, TokenKind.LZDC)

# Modules allowed to trigger escrow disposition and stake slashes.
SETTLEMENT_CALLERS = ("exchange", "arbitration")


class StakeStatus(str, Enum):
    ACTIVE = "active"
    WITHDRAWABLE = "withdrawable"
    SLASHED = "slashed"


@dataclass
class StakePosition:
    amount: int
    start: int
    duration: int
    status: StakeStatus = StakeStatus.ACTIVE

    def matured(self, day: int) -> bool:
        return day >= self.start + self.duration


class EscrowStatus(str, Enum):
    LOCKED = "locked"
    RELEASED_TO_SELLER = "released-to-seller"
    REFUNDED_TO_BUYER = "refunded-to-buyer"
    SLASHED_SPLIT = "slashed-split"


@dataclass
class EscrowAccount:
    session_id: str
    buyer_id: str
    amount: int
    token: TokenKind
    status: EscrowStatus = EscrowStatus.LOCKED


@dataclass
class Account:
    id: str
    kind_hint: str = "neutral"
    balances: dict = field(default_factory=lambda: {t: 0 for t in TokenKind})
    stake: Optional[StakePosition] = None
    court_stake: int = 0
    governance_stake: int = 0      # LZSP locked behind an active delegation
    payment_preference: Optional[TokenKind] = None

    def spendable(self, token: TokenKind) -> int:
        return self.balances[token]

    @property
    def has_active_stake(self) -> bool:
        return self.stake is not None and self.stake.status == StakeStatus.ACTIVE


def convert_amount(amount: int, from_token: TokenKind, to_token: TokenKind,
                   lzs_per_lzdc: Fraction) -> int:
    """Value-preserving conversion with floor rounding toward zero."""
    if from_token == to_token:
        return amount
    pair = (from_token, to_token)
    if pair == (TokenKind.LZDC, TokenKind.LZS):
        return floor(amount * lzs_per_lzdc)
    if pair == (TokenKind.LZS, TokenKind.LZDC):
        return floor(Fraction(amount) / lzs_per_lzdc)
    raise UnsupportedToken(f"no conversion path {from_token} -> {to_token}")


class Ledger:
    """Single-writer token store. All mutation goes through the engine loop;
    reads are safe at any quiescent point."""

    def __init__(self, config: EngineConfig, trace=None):
        self.config = config
        self.trace = trace
        self.accounts: dict[str, Account] = {}
        self.escrows: dict[str, EscrowAccount] = {}
        self.pools: dict[str, int] = {}   # case fee pools and similar locked buckets
        self.minted = {t: 0 for t in TokenKind}
        self.burned = {t: 0 for t in TokenKind}
        self._next_account = 0

    # --- events ---

    def _emit(self, kind: str, **payload):
        if self.trace is not None:
            self.trace.emit("ledger", kind, payload)

    # --- accounts ---

    def create_account(self, kind_hint: str = "neutral",
                       account_id: Optional[str] = None) -> Account:
        if account_id is None:
            account_id = f"acct-{self._next_account}"
            self._next_account += 1
        if account_id in self.accounts:
            raise ValueError(f"account {account_id!r} already exists")
        acct = Account(id=account_id, kind_hint=kind_hint)
        self.accounts[account_id] = acct
        self._emit("account-created", account=account_id, kind=kind_hint)
        return acct

    def get(self, account_id: str) -> Account:
        return self.accounts[account_id]

    # --- supply ---

    def mint(self, account: Account, token: TokenKind, amount: int, reason: str):
        if amount <= 0:
            raise ZeroAmount("mint amount must be positive")
        account.balances[token] += amount
        self.minted[token] += amount
        self._emit("mint", account=account.id, token=str(token), amount=amount,
                   reason=reason)

    def burn(self, account: Account, token: TokenKind, amount: int, reason: str):
        if amount <= 0:
            raise ZeroAmount("burn amount must be positive")
        if account.balances[token] < amount:
            raise InsufficientFunds(
                f"{account.id} holds {account.balances[token]} {token}, "
                f"cannot burn {amount}")
        account.balances[token] -= amount
        self.burned[token] += amount
        self._emit("burn", account=account.id, token=str(token), amount=amount,
                   reason=reason)

    # --- transfers ---

    def transfer(self, frm: Account, to: Account, amount: int, token: TokenKind,
                 reason: str = "transfer") -> dict:
        if amount <= 0:
            raise ZeroAmount("transfer amount must be positive")
        if frm.balances[token] < amount:
            raise InsufficientFunds(
                f"{frm.id} holds {frm.balances[token]} {token}, needs {amount}")
        frm.balances[token] -= amount
        to.balances[token] += amount
        receipt = {"from": frm.id, "to": to.id, "token": str(token),
                   "amount": amount, "reason": reason}
        self._emit("transfer", **receipt)
        return receipt

    # --- seller deposit staking ---

    def stake_deposit(self, seller: Account, amount: int, duration: int,
                      day: int) -> StakePosition:
        if amount < self.config.stake.seller_minimum:
            raise BelowMinimumStake(
                f"stake {amount} below configured minimum "
                f"{self.config.stake.seller_minimum}")
        if seller.stake is not None and seller.stake.status == StakeStatus.ACTIVE:
            raise AlreadyStaked(f"{seller.id} already has an active stake")
        if seller.balances[TokenKind.LZS] < amount:
            raise InsufficientFunds(f"{seller.id} cannot cover stake of {amount}")
        seller.balances[TokenKind.LZS] -= amount
        seller.stake = StakePosition(amount=amount, start=day, duration=duration)
        self._emit("stake-lock", account=seller.id, amount=amount,
                   duration=duration, day=day)
        return seller.stake

    def withdraw_stake(self, seller: Account, day: int) -> int:
        """Return a matured, unslashed stake to the balance, plus yield."""
        pos = seller.stake
        if pos is None or pos.status == StakeStatus.SLASHED:
            raise InsufficientFunds(f"{seller.id} has no withdrawable stake")
        if not pos.matured(day):
            raise InsufficientFunds(
                f"stake matures on day {pos.start + pos.duration}, today is {day}")
        pos.status = StakeStatus.WITHDRAWABLE
        seller.balances[TokenKind.LZS] += pos.amount
        payout = pos.amount
        bonus = floor(pos.amount * self.config.stake.yield_fraction)
        if bonus > 0:
            self.mint(seller, TokenKind.LZS, bonus, reason="stake-yield")
            payout += bonus
        self._emit("stake-release", account=seller.id, amount=pos.amount,
                   bonus=bonus, day=day)
        seller.stake = None
        return payout

    def slash_stake(self, seller: Account, caller: str, reason: str,
                    beneficiary: Optional[Account] = None) -> int:
        """Slash the full active stake. Transferred to `beneficiary` when the
        ruling favours the buyer; burned otherwise."""
        if caller not in SETTLEMENT_CALLERS:
            raise UnauthorizedCaller(f"{caller!r} may not slash stakes")
        pos = seller.stake
        if pos is None or pos.status != StakeStatus.ACTIVE:
            return 0
        pos.status = StakeStatus.SLASHED
        amount = pos.amount
        if beneficiary is not None:
            beneficiary.balances[TokenKind.LZS] += amount
            disposition = {"to": beneficiary.id}
        else:
            self.burned[TokenKind.LZS] += amount
            disposition = {"burned": True}
        self._emit("stake-slash", account=seller.id, amount=amount,
                   reason=reason, **disposition)
        seller.stake = None
        return amount

    def take_from_stake(self, seller: Account, amount: int, to: Account,
                        caller: str, reason: str) -> int:
        """Partially draw on an active stake (post-settlement refund shortfall).
        Returns what could actually be taken."""
        if caller not in SETTLEMENT_CALLERS:
            raise UnauthorizedCaller(f"{caller!r} may not draw on stakes")
        pos = seller.stake
        if pos is None or pos.status != StakeStatus.ACTIVE or amount <= 0:
            return 0
        taken = min(amount, pos.amount)
        pos.amount -= taken
        to.balances[TokenKind.LZS] += taken
        if pos.amount == 0:
            pos.status = StakeStatus.SLASHED
            seller.stake = None
        self._emit("stake-draw", account=seller.id, to=to.id, amount=taken,
                   reason=reason)
        return taken

    # --- juror court stake ---

    def lock_court_stake(self, account: Account, amount: int):
        if amount <= 0:
            raise ZeroAmount("court stake must be positive")
        if account.balances[TokenKind.LZS] < amount:
            raise InsufficientFunds(f"{account.id} cannot cover court stake")
        account.balances[TokenKind.LZS] -= amount
        account.court_stake += amount
        self._emit("court-stake-lock", account=account.id, amount=amount)

    def release_court_stake(self, account: Account, amount: int):
        if amount <= 0 or amount > account.court_stake:
            raise InsufficientFunds(f"{account.id} court stake too small")
        account.court_stake -= amount
        account.balances[TokenKind.LZS] += amount
        self._emit("court-stake-release", account=account.id, amount=amount)

    def slash_court_stake_into_pool(self, account: Account, amount: int,
                                    pool_id: str, reason: str) -> int:
        taken = min(amount, account.court_stake)
        if taken <= 0:
            return 0
        account.court_stake -= taken
        self.pools[pool_id] = self.pools.get(pool_id, 0) + taken
        self._emit("court-stake-slash", account=account.id, amount=taken,
                   pool=pool_id, reason=reason)
        return taken

    # --- governance stake (delegated LZSP) ---

    def lock_governance_stake(self, account: Account, amount: int):
        if amount <= 0:
            raise ZeroAmount("delegated amount must be positive")
        if account.balances[TokenKind.LZSP] < amount:
            raise InsufficientFunds(f"{account.id} cannot cover delegation")
        account.balances[TokenKind.LZSP] -= amount
        account.governance_stake += amount
        self._emit("governance-stake-lock", account=account.id, amount=amount)

    def release_governance_stake(self, account: Account):
        amount = account.governance_stake
        if amount > 0:
            account.governance_stake = 0
            account.balances[TokenKind.LZSP] += amount
            self._emit("governance-stake-release", account=account.id, amount=amount)
        return amount

    # --- fee pools ---

    def pool_deposit(self, frm: Account, pool_id: str, amount: int,
                     token: TokenKind = TokenKind.LZS):
        if token is not TokenKind.LZS:
            raise UnsupportedToken("fee pools hold LZS only")
        if amount <= 0:
            raise ZeroAmount("pool deposit must be positive")
        if frm.balances[token] < amount:
            raise InsufficientFunds(f"{frm.id} cannot cover pool deposit {amount}")
        frm.balances[token] -= amount
        self.pools[pool_id] = self.pools.get(pool_id, 0) + amount
        self._emit("pool-deposit", account=frm.id, pool=pool_id, amount=amount)

    def pool_payout(self, pool_id: str, to: Account, amount: int, reason: str):
        held = self.pools.get(pool_id, 0)
        if amount <= 0 or amount > held:
            raise InsufficientFunds(f"pool {pool_id} holds {held}, cannot pay {amount}")
        self.pools[pool_id] = held - amount
        to.balances[TokenKind.LZS] += amount
        self._emit("pool-payout", pool=pool_id, account=to.id, amount=amount,
                   reason=reason)

    def pool_burn(self, pool_id: str, reason: str) -> int:
        held = self.pools.pop(pool_id, 0)
        if held > 0:
            self.burned[TokenKind.LZS] += held
            self._emit("pool-burn", pool=pool_id, amount=held, reason=reason)
        return held

    # --- escrow ---

    def lock_escrow(self, session_id: str, buyer: Account, amount: int,
                    token: TokenKind) -> EscrowAccount:
        if token not in ESCROW_TOKENS:
            raise UnsupportedToken(f"{token} cannot fund an escrow")
        if session_id in self.escrows:
            raise DuplicateEscrow(f"escrow already exists for {session_id}")
        if amount <= 0:
            raise ZeroAmount("escrow amount must be positive")
        if buyer.balances[token] < amount:
            raise InsufficientFunds(
                f"{buyer.id} holds {buyer.balances[token]} {token}, needs {amount}")
        buyer.balances[token] -= amount
        escrow = EscrowAccount(session_id=session_id, buyer_id=buyer.id,
                               amount=amount, token=token)
        self.escrows[session_id] = escrow
        self._emit("escrow-lock", session=session_id, account=buyer.id,
                   token=str(token), amount=amount,
                   usd=str(self.config.usd_value(amount, token)))
        return escrow

    def settle_escrow(self, escrow: EscrowAccount, disposition: str, caller: str,
                      seller: Optional[Account] = None,
                      seller_fraction: Optional[Fraction] = None) -> dict:
        """Terminal escrow disposition: 'to-seller', 'to-buyer' or 'split'.

        A seller payout honours the seller's payment preference by converting
        at the current rate (burn source token, mint target), floor-rounded.
        """
        if caller not in SETTLEMENT_CALLERS:
            raise UnauthorizedCaller(f"{caller!r} may not settle escrow")
        if escrow.status != EscrowStatus.LOCKED:
            raise AlreadySettled(f"escrow for {escrow.session_id} already settled")
        buyer = self.accounts[escrow.buyer_id]
        receipt = {"session": escrow.session_id, "disposition": disposition,
                   "token": str(escrow.token), "amount": escrow.amount}

        if disposition == "to-buyer":
            buyer.balances[escrow.token] += escrow.amount
            escrow.status = EscrowStatus.REFUNDED_TO_BUYER
        elif disposition == "to-seller":
            if seller is None:
                raise ValueError("to-seller disposition needs the seller account")
            receipt["paid"] = self._pay_out(seller, escrow.token, escrow.amount)
            escrow.status = EscrowStatus.RELEASED_TO_SELLER
        elif disposition == "split":
            if seller is None or seller_fraction is None:
                raise ValueError("split disposition needs a seller and a fraction")
            if not (0 <= seller_fraction <= 1):
                raise ValueError("seller_fraction must lie in [0, 1]")
            seller_part = floor(escrow.amount * seller_fraction)
            buyer_part = escrow.amount - seller_part
            buyer.balances[escrow.token] += buyer_part
            if seller_part > 0:
                receipt["paid"] = self._pay_out(seller, escrow.token, seller_part)
            receipt["buyer_part"] = buyer_part
            escrow.status = EscrowStatus.SLASHED_SPLIT
        else:
            raise ValueError(f"unknown disposition {disposition!r}")

        self._emit("escrow-settle", **receipt)
        return receipt

    def _pay_out(self, seller: Account, token: TokenKind, amount: int) -> dict:
        """Deliver a seller payout, applying the preferred-token conversion."""
        target = seller.payment_preference or token
        if target == token or target not in ESCROW_TOKENS:
            seller.balances[token] += amount
            return {"account": seller.id, "token": str(token), "amount": amount}
        converted = convert_amount(amount, token, target,
                                   self.config.rates.lzs_per_lzdc)
        # Conversion changes token kind, so supply moves through mint/burn to
        # keep each per-token identity exact.
        self.burned[token] += amount
        self.minted[target] += converted
        seller.balances[target] += converted
        self._emit("convert", account=seller.id, from_token=str(token),
                   to_token=str(target), amount_in=amount, amount_out=converted)
        return {"account": seller.id, "token": str(target), "amount": converted}

    # --- conservation ---

    def conservation_report(self) -> dict:
        report = {}
        for token in TokenKind:
            balances = sum(a.balances[token] for a in self.accounts.values())
            staked = 0
            escrowed = 0
            if token is TokenKind.LZS:
                staked += sum(a.stake.amount for a in self.accounts.values()
                              if a.stake is not None
                              and a.stake.status == StakeStatus.ACTIVE)
                staked += sum(a.court_stake for a in self.accounts.values())
                escrowed += sum(self.pools.values())
            if token is TokenKind.LZSP:
                staked += sum(a.governance_stake for a in self.accounts.values())
            escrowed += sum(e.amount for e in self.escrows.values()
                            if e.token == token and e.status == EscrowStatus.LOCKED)
            report[str(token)] = {
                "sum_balances": balances,
                "sum_escrow": escrowed,
                "sum_staked": staked,
                "minted": self.minted[token],
                "burned": self.burned[token],
                "ok": balances + escrowed + staked == self.minted[token] - self.burned[token],
            }
        return report

    def assert_conservation(self):
        report = self.conservation_report()
        bad = {k: v for k, v in report.items() if not v["ok"]}
        if bad:
            raise ConservationViolation(f"conservation identity broken: {bad}")

    # --- snapshots ---

    def snapshot(self, reputation=None, layers=None) -> dict:
        """JSON-ready view of every account for trace inspection."""
        out = {}
        for acct_id in sorted(self.accounts):
            a = self.accounts[acct_id]
            entry = {
                "balances": {str(t): a.balances[t] for t in TokenKind},
                "court_stake": a.court_stake,
                "governance_stake": a.governance_stake,
            }
            if a.stake is not None:
                entry["stake"] = {
                    "amount": a.stake.amount,
                    "start": a.stake.start,
                    "duration": a.stake.duration,
                    "status": a.stake.status.value,
                }
            if reputation is not None and reputation.has(acct_id):
                entry["reputation"] = reputation.value_of(acct_id)
            if layers is not None:
                entry["layer"] = layers(acct_id)
            out[acct_id] = entry
        return out
