"""Participation rewards and the honest/dishonest strategy analyzer.

The reward granter is the only LZSP supply source after genesis. The analyzer
builds the 2x2 buyer/seller payoff matrix from utility components (asset
value, participation reward, seller stake, reputation), then brute-forces
pure-strategy Nash equilibria and the social optimum.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .config import EngineConfig, frac
from .errors import AlreadyGranted, InvalidParams
from .ledger import Ledger, TokenKind

HONEST = "honest"
DISHONEST = "dishonest"
STRATEGIES = (HONEST, DISHONEST)


# --- reward granting -------------------------------------------------------

class RewardGranter:
    """Mints LZSP per terminal exchange outcome, once per session."""

    def __init__(self, config: EngineConfig, ledger: Ledger, trace=None):
        self.config = config
        self.ledger = ledger
        self.trace = trace
        self._granted: set = set()

    def grant_for_session(self, session) -> list:
        if not session.is_terminal:
            raise InvalidParams(f"session {session.id} is not terminal")
        if session.id in self._granted:
            raise AlreadyGranted(f"rewards already granted for {session.id}")
        self._granted.add(session.id)

        mints = []
        rewards = self.config.rewards
        outcome = session.outcome

        def mint(account_id, amount, reason):
            if amount > 0:
                self.ledger.mint(self.ledger.get(account_id), TokenKind.LZSP,
                                 amount, reason=reason)
                mints.append({"account": account_id, "amount": amount,
                              "reason": reason})

        if outcome.kind == "resolved-mutually":
            mint(session.buyer_id, rewards.mutual_resolution, "resolution-reward")
            mint(session.seller_id, rewards.mutual_resolution, "resolution-reward")
        elif outcome.kind in ("success-confirmed", "success-by-default"):
            if session.scan_eligible and outcome.satisfaction:
                mint(session.buyer_id, rewards.buyer_confirm, "confirm-reward")
            elif not session.qr_included and session.receipt_confirmed:
                # Seller omitted the QR: the buyer is credited by default and
                # the seller forfeits the exchange reward.
                mint(session.buyer_id, rewards.default_grant, "default-grant")
            if session.qr_included:
                mint(session.seller_id, rewards.seller_exchange, "exchange-reward")

        if self.trace is not None:
            self.trace.emit("incentives", "rewards-granted",
                            {"session": session.id, "mints": mints})
        return mints


# --- payoff analysis -------------------------------------------------------

@dataclass(frozen=True)
class PayoffParams:
    """Utility components, all in arbitrary consistent units.

    asset_value       value of the exchanged item / its token price
    reward_value      utility of the participation-token reward
    stake_keep        seller's utility of keeping the deposit withdrawable
    stake_lose        seller's disutility of losing the deposit
    stake_gain        buyer's utility of being awarded the seller's deposit
    reputation_value  utility of one reputation movement (optional feedback)
    """

    asset_value: Fraction
    reward_value: Fraction
    stake_keep: Fraction
    stake_lose: Fraction
    stake_gain: Fraction
    reputation_value: Fraction

    @classmethod
    def make(cls, asset_value=10, reward_value=2, stake_keep=1, stake_lose=8,
             stake_gain=8, reputation_value=1) -> "PayoffParams":
        return cls(*(frac(v) for v in (asset_value, reward_value, stake_keep,
                                       stake_lose, stake_gain, reputation_value)))

    def validate(self):
        if not (self.asset_value > 0 and self.reward_value > 0
                and self.stake_lose > 0 and self.stake_gain > 0
                and self.reputation_value > 0 and self.stake_keep >= 0):
            raise InvalidParams(
                "need asset_value, reward_value, stake_lose, stake_gain, "
                "reputation_value > 0 and stake_keep >= 0")


@dataclass
class PayoffMatrix:
    """cells[(buyer_strategy, seller_strategy)] = (buyer_utility, seller_utility)."""

    cells: dict
    terms: dict   # same keys -> per-player component breakdown
    notes: list

    def utilities(self, buyer_s: str, seller_s: str):
        return self.cells[(buyer_s, seller_s)]


def build_payoff_matrix(params: PayoffParams,
                        include_reputation: bool = True) -> PayoffMatrix:
    params.validate()
    v, r = params.asset_value, params.reward_value
    rho = params.reputation_value if include_reputation else Fraction(0)

    def cell(asset_b, reward_b, stake_b, rep_b, asset_s, reward_s, stake_s, rep_s):
        buyer = {"asset": asset_b, "participation": reward_b,
                 "stake": stake_b, "reputation": rep_b}
        seller = {"asset": asset_s, "participation": reward_s,
                  "stake": stake_s, "reputation": rep_s}
        return (sum(buyer.values()), sum(seller.values())), {"buyer": buyer,
                                                             "seller": seller}

    z = Fraction(0)
    layout = {
        (HONEST, HONEST): cell(+v, r, z, +rho, +v, r, params.stake_keep, +rho),
        (HONEST, DISHONEST): cell(+v, z, params.stake_gain, z,
                                  -v, z, -params.stake_lose, -rho),
        (DISHONEST, HONEST): cell(-v, z, z, -rho, +v, z, params.stake_keep, z),
        (DISHONEST, DISHONEST): cell(+v, z, z, z, +v, z, -params.stake_lose, z),
    }
    cells = {k: u for k, (u, _) in layout.items()}
    terms = {k: t for k, (_, t) in layout.items()}
    notes = [
        "both players are credited with the asset-value gain in the "
        "(dishonest, dishonest) cell, so deterrence there rests on the "
        "stake-loss term alone",
    ]
    if not include_reputation:
        notes.append("optional reputation-feedback terms zeroed for this analysis")
    return PayoffMatrix(cells=cells, terms=terms, notes=notes)


def deviation_margins(matrix: PayoffMatrix) -> dict:
    """For each profile: how much each player loses by unilaterally deviating.
    A profile is a Nash equilibrium iff both margins are >= 0."""
    margins = {}
    for bs in STRATEGIES:
        for ss in STRATEGIES:
            u_b, u_s = matrix.cells[(bs, ss)]
            other_b = HONEST if bs == DISHONEST else DISHONEST
            other_s = HONEST if ss == DISHONEST else DISHONEST
            margins[(bs, ss)] = {
                "buyer": u_b - matrix.cells[(other_b, ss)][0],
                "seller": u_s - matrix.cells[(bs, other_s)][1],
            }
    return margins


def find_nash_equilibria(matrix: PayoffMatrix) -> list:
    """All pure-strategy equilibria, via exhaustive best-response checks."""
    out = []
    for profile, margin in deviation_margins(matrix).items():
        if margin["buyer"] >= 0 and margin["seller"] >= 0:
            out.append({
                "profile": profile,
                "strict": margin["buyer"] > 0 and margin["seller"] > 0,
                "margins": margin,
            })
    return out


def welfare(matrix: PayoffMatrix, profile) -> Fraction:
    u_b, u_s = matrix.cells[profile]
    return u_b + u_s


def is_social_optimum(profile, matrix: PayoffMatrix) -> bool:
    """True iff the profile maximizes total utility over all four profiles."""
    best = max(welfare(matrix, p) for p in matrix.cells)
    return welfare(matrix, profile) == best


def pareto_undominated(profile, matrix: PayoffMatrix) -> bool:
    u_b, u_s = matrix.cells[profile]
    for other, (o_b, o_s) in matrix.cells.items():
        if other == profile:
            continue
        if o_b >= u_b and o_s >= u_s and (o_b > u_b or o_s > u_s):
            return False
    return True


def analyze(params: Optional[PayoffParams] = None,
            include_reputation: bool = True) -> dict:
    """Full analyzer report: matrix, equilibrium set, margin inequalities,
    welfare ranking and notes. JSON-ready."""
    params = params or PayoffParams.make()
    matrix = build_payoff_matrix(params, include_reputation=include_reputation)
    margins = deviation_margins(matrix)
    equilibria = find_nash_equilibria(matrix)

    def key(profile):
        return f"{profile[0]}/{profile[1]}"

    report = {
        "params": {
            "asset_value": str(params.asset_value),
            "reward_value": str(params.reward_value),
            "stake_keep": str(params.stake_keep),
            "stake_lose": str(params.stake_lose),
            "stake_gain": str(params.stake_gain),
            "reputation_value": str(params.reputation_value),
        },
        "include_reputation": include_reputation,
        "matrix": {key(p): [str(u[0]), str(u[1])] for p, u in matrix.cells.items()},
        "equilibria": [
            {"profile": key(e["profile"]), "strict": e["strict"],
             "buyer_margin": str(e["margins"]["buyer"]),
             "seller_margin": str(e["margins"]["seller"])}
            for e in equilibria
        ],
        "margin_inequalities": [
            f"{key(p)}: buyer {_cmp(m['buyer'])} 0 (margin {m['buyer']}), "
            f"seller {_cmp(m['seller'])} 0 (margin {m['seller']})"
            for p, m in margins.items()
        ],
        "welfare": {key(p): str(welfare(matrix, p)) for p in matrix.cells},
        "social_optima": [key(p) for p in matrix.cells
                          if is_social_optimum(p, matrix)],
        "pareto_undominated": [key(p) for p in matrix.cells
                               if pareto_undominated(p, matrix)],
        "notes": matrix.notes,
    }
    return report


def _cmp(x) -> str:
    return ">" if x > 0 else ("=" if x == 0 else "<")
