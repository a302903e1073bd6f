"""Append-only, hash-chained run log.

One JSON object per line: {seq, day, module, kind, payload, digest}. The
digest at event k is sha256 over the previous digest and the canonical JSON
of the event without its digest, so any single-byte mutation anywhere breaks
verification at that event. Sequence numbers are dense from zero and the last
event must be a run-end marker.

verify_trace() additionally replays the semantic content against an
independent accountant: per-token conservation snapshots are recomputed from
the raw ledger events, every exchange transition is checked against the legal
edge table, and each terminal session's escrow disposition must match its
outcome.
"""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Optional

from .errors import TamperedTrace

FORMAT_NAME = "agorasim-trace"
FORMAT_VERSION = 1
GENESIS = "agorasim-genesis"


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True)


def chain_digest(prev_digest: str, body: dict) -> str:
    material = (prev_digest + canonical(body)).encode()
    return hashlib.sha256(material).hexdigest()


class TraceRecorder:
    """Collects events during a run. The engine moves `day` forward; modules
    call emit()."""

    def __init__(self, seed: Optional[int] = None, scenario: Optional[str] = None,
                 config_digest: Optional[str] = None):
        self.events: list[dict] = []
        self.day = 0
        self._last_digest = GENESIS
        self.emit("trace", "header", {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "hash": "sha256",
            "seed": seed,
            "scenario": scenario,
            "config_digest": config_digest,
        })

    def emit(self, module: str, kind: str, payload: dict) -> dict:
        body = {
            "seq": len(self.events),
            "day": self.day,
            "module": module,
            "kind": kind,
            "payload": payload,
        }
        digest = chain_digest(self._last_digest, body)
        event = dict(body, digest=digest)
        self.events.append(event)
        self._last_digest = digest
        return event

    def finish(self, summary: Optional[dict] = None) -> dict:
        return self.emit("trace", "run-end", {"events": len(self.events),
                                              "summary": summary or {}})

    def to_jsonl(self) -> str:
        return "".join(canonical(e) + "\n" for e in self.events)

    def write(self, path: str):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_jsonl())


def read_events(text: str) -> list:
    """Parse JSONL trace text; a malformed line is reported as tampering at
    that line's position."""
    events = []
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise TamperedTrace(i, f"unparseable line: {exc}") from None
    return events


def load_trace(path: str) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return read_events(fh.read())


class _Accountant:
    """Independent re-derivation of ledger totals from raw trace events."""

    def __init__(self):
        self.balances: dict = {}      # account -> token -> amount
        self.escrows: dict = {}       # session -> (token, amount)
        self.stakes: dict = {}        # account -> amount (seller deposits)
        self.court: dict = {}         # account -> amount
        self.gov: dict = {}           # account -> amount
        self.pools: dict = {}         # pool id -> amount
        self.minted: dict = {}        # token -> amount
        self.burned: dict = {}        # token -> amount

    def _bal(self, account, token, delta):
        acct = self.balances.setdefault(account, {})
        acct[token] = acct.get(token, 0) + delta

    def apply(self, kind: str, p: dict):
        if kind == "mint":
            self._bal(p["account"], p["token"], p["amount"])
            self.minted[p["token"]] = self.minted.get(p["token"], 0) + p["amount"]
        elif kind == "burn":
            self._bal(p["account"], p["token"], -p["amount"])
            self.burned[p["token"]] = self.burned.get(p["token"], 0) + p["amount"]
        elif kind == "transfer":
            self._bal(p["from"], p["token"], -p["amount"])
            self._bal(p["to"], p["token"], p["amount"])
        elif kind == "stake-lock":
            self._bal(p["account"], "LZS", -p["amount"])
            self.stakes[p["account"]] = self.stakes.get(p["account"], 0) + p["amount"]
        elif kind == "stake-release":
            self._bal(p["account"], "LZS", p["amount"])
            self.stakes.pop(p["account"], None)
        elif kind == "stake-slash":
            self.stakes.pop(p["account"], None)
            if p.get("burned"):
                self.burned["LZS"] = self.burned.get("LZS", 0) + p["amount"]
            else:
                self._bal(p["to"], "LZS", p["amount"])
        elif kind == "stake-draw":
            self.stakes[p["account"]] = self.stakes.get(p["account"], 0) - p["amount"]
            if self.stakes.get(p["account"]) == 0:
                self.stakes.pop(p["account"], None)
            self._bal(p["to"], "LZS", p["amount"])
        elif kind == "court-stake-lock":
            self._bal(p["account"], "LZS", -p["amount"])
            self.court[p["account"]] = self.court.get(p["account"], 0) + p["amount"]
        elif kind == "court-stake-release":
            self.court[p["account"]] -= p["amount"]
            self._bal(p["account"], "LZS", p["amount"])
        elif kind == "court-stake-slash":
            self.court[p["account"]] -= p["amount"]
            self.pools[p["pool"]] = self.pools.get(p["pool"], 0) + p["amount"]
        elif kind == "governance-stake-lock":
            self._bal(p["account"], "LZSP", -p["amount"])
            self.gov[p["account"]] = self.gov.get(p["account"], 0) + p["amount"]
        elif kind == "governance-stake-release":
            self.gov[p["account"]] -= p["amount"]
            self._bal(p["account"], "LZSP", p["amount"])
        elif kind == "pool-deposit":
            self._bal(p["account"], "LZS", -p["amount"])
            self.pools[p["pool"]] = self.pools.get(p["pool"], 0) + p["amount"]
        elif kind == "pool-payout":
            self.pools[p["pool"]] -= p["amount"]
            self._bal(p["account"], "LZS", p["amount"])
        elif kind == "pool-burn":
            self.pools[p["pool"]] -= p["amount"]
            self.burned["LZS"] = self.burned.get("LZS", 0) + p["amount"]
        elif kind == "escrow-lock":
            self._bal(p["account"], p["token"], -p["amount"])
            self.escrows[p["session"]] = (p["token"], p["amount"])
        elif kind == "convert":
            self.burned[p["from_token"]] = \
                self.burned.get(p["from_token"], 0) + p["amount_in"]
            self.minted[p["to_token"]] = \
                self.minted.get(p["to_token"], 0) + p["amount_out"]
            self._bal(p["account"], p["to_token"], p["amount_out"])
        elif kind == "escrow-settle":
            token, amount = self.escrows.pop(p["session"])
            disposition = p["disposition"]
            if disposition == "to-buyer":
                self._bal(p["buyer"], token, amount)
            elif disposition == "to-seller":
                paid = p["paid"]
                if paid["token"] == token:
                    self._bal(paid["account"], token, paid["amount"])
                # converted payouts were credited by the convert event
            elif disposition == "split":
                self._bal(p["buyer"], token, p["buyer_part"])
                paid = p.get("paid")
                if paid and paid["token"] == token:
                    self._bal(paid["account"], token, paid["amount"])

    def totals(self, token: str) -> dict:
        balances = sum(b.get(token, 0) for b in self.balances.values())
        escrow = sum(a for t, a in self.escrows.values() if t == token)
        staked = 0
        if token == "LZS":
            escrow += sum(self.pools.values())
            staked += sum(self.stakes.values()) + sum(self.court.values())
        if token == "LZSP":
            staked += sum(self.gov.values())
        return {
            "sum_balances": balances,
            "sum_escrow": escrow,
            "sum_staked": staked,
            "minted": self.minted.get(token, 0),
            "burned": self.burned.get(token, 0),
        }


# outcome kind -> required escrow disposition ('none' when no escrow may exist)
_EXPECTED_DISPOSITION = {
    "success-confirmed": "to-seller",
    "success-by-default": "to-seller",
    "resolved-mutually": "to-seller",
}


def verify_trace(events_or_text) -> dict:
    """Full verification: digest chain, sequence density, transition legality,
    conservation re-derivation and terminal escrow/outcome consistency.
    Raises TamperedTrace at the first offending event."""
    from .exchange import TRANSITIONS, ExchangeState

    if isinstance(events_or_text, str):
        events = read_events(events_or_text)
    else:
        events = list(events_or_text)
    if not events:
        raise TamperedTrace(0, "empty trace")

    legal_edges = {(str(f), rule): str(t) for (f, rule), t in TRANSITIONS.items()}
    accountant = _Accountant()
    terminal: dict = {}        # session -> (seq, outcome dict)
    dispositions: dict = {}    # session -> disposition
    escrow_seen: set = set()
    conservation_checks = 0

    last_digest = GENESIS
    for i, event in enumerate(events):
        for key in ("seq", "day", "module", "kind", "payload", "digest"):
            if key not in event:
                raise TamperedTrace(i, f"event missing field {key!r}")
        if event["seq"] != i:
            raise TamperedTrace(i, f"sequence breaks: expected {i}, "
                                   f"found {event['seq']}")
        body = {k: event[k] for k in ("seq", "day", "module", "kind", "payload")}
        expected = chain_digest(last_digest, body)
        if event["digest"] != expected:
            raise TamperedTrace(i, "digest chain mismatch")
        last_digest = event["digest"]

        module, kind, payload = event["module"], event["kind"], event["payload"]
        if i == 0:
            if module != "trace" or kind != "header" \
                    or payload.get("format") != FORMAT_NAME:
                raise TamperedTrace(0, "first event is not a valid header")
            continue

        if module == "ledger":
            accountant.apply(kind, payload)
            if kind == "escrow-lock":
                escrow_seen.add(payload["session"])
            if kind == "escrow-settle":
                dispositions[payload["session"]] = payload["disposition"]
        elif module == "exchange" and kind == "transition":
            edge = (payload["from"], payload["rule"])
            if legal_edges.get(edge) != payload["to"]:
                raise TamperedTrace(i, f"illegal transition {edge} -> "
                                       f"{payload['to']}")
            if payload["to"] in (str(ExchangeState.SETTLED),
                                 str(ExchangeState.CANCELLED)) \
                    and "outcome" in payload:
                terminal[payload["session"]] = (i, payload["outcome"])
        elif module == "engine" and kind == "conservation":
            conservation_checks += 1
            for token, reported in payload.items():
                derived = accountant.totals(token)
                for field_ in ("sum_balances", "sum_escrow", "sum_staked",
                               "minted", "burned"):
                    if reported[field_] != derived[field_]:
                        raise TamperedTrace(
                            i, f"conservation mismatch for {token}.{field_}: "
                               f"reported {reported[field_]}, "
                               f"derived {derived[field_]}")
                lhs = derived["sum_balances"] + derived["sum_escrow"] + \
                    derived["sum_staked"]
                if lhs != derived["minted"] - derived["burned"]:
                    raise TamperedTrace(
                        i, f"conservation identity broken for {token}")

    if events[-1]["kind"] != "run-end":
        raise TamperedTrace(events[-1]["seq"], "trace does not end with run-end")

    for session, (seq, outcome) in terminal.items():
        kind = outcome["kind"]
        disposition = dispositions.get(session)
        if kind in _EXPECTED_DISPOSITION:
            if disposition != _EXPECTED_DISPOSITION[kind]:
                raise TamperedTrace(
                    seq, f"{session}: outcome {kind} requires escrow "
                         f"to-seller, saw {disposition}")
        elif kind == "cancelled":
            if outcome.get("stage") == "C1":
                if session in escrow_seen:
                    raise TamperedTrace(
                        seq, f"{session}: pre-escrow cancellation cannot "
                             f"have an escrow")
            elif disposition != "to-buyer":
                raise TamperedTrace(
                    seq, f"{session}: cancellation requires escrow to-buyer, "
                         f"saw {disposition}")
        elif kind == "arbitrated":
            expected = "to-buyer" if outcome.get("escrow_to") == "buyer" \
                else "to-seller"
            if disposition != expected:
                raise TamperedTrace(
                    seq, f"{session}: ruling requires escrow {expected}, "
                         f"saw {disposition}")

    return {
        "ok": True,
        "events": len(events),
        "sessions_terminal": len(terminal),
        "conservation_checks": conservation_checks,
    }
