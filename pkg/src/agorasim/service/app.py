"""HTTP service wrapping the engine: run scenarios, verify and report traces,
check the strategy equilibrium, and analyze dispute thresholds. The CLI is a
thin client of these endpoints."""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..analytics import CostModel, ExpModel, sample_values, threshold_report
from ..config import EngineConfig
from ..errors import (
    InvariantViolation,
    ParseError,
    ProtocolError,
    ScenarioValidationError,
    TamperedTrace,
)
from ..incentives import PayoffParams, analyze
from ..scenario import validate_scenario
from ..simulate import run as run_scenario
from ..trace import read_events, verify_trace
from .models import (
    EquilibriumRequest,
    EquilibriumResponse,
    ReportRequest,
    ReportResponse,
    RunRequest,
    RunResponse,
    ThresholdRequest,
    ThresholdResponse,
    VerifyTraceRequest,
    VerifyTraceResponse,
)


def report_from_events(events: list, governance: bool = False) -> dict:
    """Recompute run tables straight from trace events, so any well-formed
    trace can be reported on, not only ones carrying a summary."""
    outcomes: dict[str, int] = {}
    disputes: dict[str, int] = {}
    lzsp_minted = 0
    proposals: dict[str, dict] = {}
    votes: list = []
    days = 0
    for event in events:
        days = max(days, event.get("day", 0))
        module, kind, p = event["module"], event["kind"], event["payload"]
        if module == "exchange" and kind == "transition" and "outcome" in p:
            outcome = p["outcome"]
            label = outcome["kind"]
            if label == "cancelled":
                label = f"cancelled-{outcome.get('stage')}"
            outcomes[label] = outcomes.get(label, 0) + 1
        elif module == "arbitration" and kind == "case-routed":
            disputes[f"routed-{p['tier']}"] = \
                disputes.get(f"routed-{p['tier']}", 0) + 1
        elif module == "arbitration" and kind == "case-closed":
            key = f"{p['tier']}:{p['ruling']}"
            disputes[key] = disputes.get(key, 0) + 1
        elif module == "ledger" and kind == "mint" and p["token"] == "LZSP":
            lzsp_minted += p["amount"]
        elif module == "governance":
            if kind == "proposal-submitted":
                proposals[p["proposal"]] = {
                    "proposal": p["proposal"], "proposer": p["proposer"],
                    "level": p["level"], "created": p["created"],
                    "closes": p["closes"], "state": "active",
                    "up": 0, "down": 0}
            elif kind == "vote" and p["proposal"] in proposals:
                proposals[p["proposal"]][p["direction"]] += p["weight"]
                votes.append(p)
            elif kind == "proposal-finalized" and p["proposal"] in proposals:
                proposals[p["proposal"]].update(
                    state=p["state"], up=p["up"], down=p["down"])
            elif kind in ("proposal-queued", "proposal-executed",
                          "proposal-failed") and p["proposal"] in proposals:
                proposals[p["proposal"]]["state"] = \
                    kind.removeprefix("proposal-")
            elif kind == "committee-decision":
                subject = p.get("subject", {})
                pid = subject.get("proposal")
                if pid in proposals and subject.get("kind") == "veto" \
                        and p["decision"] == "approved":
                    proposals[pid]["state"] = "vetoed"
    report = {
        "days": days,
        "exchanges": dict(sorted(outcomes.items())),
        "disputes": dict(sorted(disputes.items())),
        "lzsp_minted": lzsp_minted,
    }
    if governance:
        report["proposals"] = sorted(proposals.values(),
                                     key=lambda row: row["proposal"])
        report["votes"] = votes
    return report


def dispute_values_from_events(events: list) -> list:
    """USD value of every routed dispute, in routing order."""
    return [float(e["payload"]["value_usd"].split("/")[0]) /
            float(e["payload"]["value_usd"].split("/")[1])
            if "/" in e["payload"]["value_usd"]
            else float(e["payload"]["value_usd"])
            for e in events
            if e["module"] == "arbitration" and e["kind"] == "case-routed"]


def create_app() -> FastAPI:
    app = FastAPI(title="agorasim", version=__version__,
                  description="Deterministic P2P marketplace protocol engine "
                              "and simulation service")

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/config/defaults")
    def config_defaults():
        return EngineConfig().to_dict()

    @app.post("/run", response_model=RunResponse,
              response_model_exclude_none=True)
    def run_endpoint(request: RunRequest):
        data = dict(request.scenario)
        if request.seed is not None:
            data["seed"] = request.seed
        try:
            scenario = validate_scenario(data)
        except ScenarioValidationError as exc:
            return JSONResponse(status_code=422, content={
                "ok": False, "error": "validation",
                "violations": exc.violations})
        except ParseError as exc:
            return JSONResponse(status_code=400, content={
                "ok": False, "error": "parse", "detail": str(exc)})
        try:
            result = run_scenario(scenario)
        except InvariantViolation as exc:
            return RunResponse(ok=False, summary={}, events=0,
                               error={"kind": "invariant-violation",
                                      "detail": str(exc)})
        return RunResponse(
            ok=True, summary=result.summary,
            events=len(result.engine.trace.events),
            trace=result.trace_text if request.include_trace else None)

    @app.post("/traces/verify", response_model=VerifyTraceResponse,
              response_model_exclude_none=True)
    def verify_endpoint(request: VerifyTraceRequest):
        try:
            report = verify_trace(request.trace)
        except TamperedTrace as exc:
            return VerifyTraceResponse(ok=False, first_bad_seq=exc.seq,
                                       detail=str(exc))
        return VerifyTraceResponse(ok=True, **{
            k: v for k, v in report.items() if k != "ok"})

    @app.post("/traces/report", response_model=ReportResponse)
    def report_endpoint(request: ReportRequest):
        try:
            events = read_events(request.trace)
        except TamperedTrace as exc:
            return JSONResponse(status_code=400, content={
                "ok": False, "error": "parse", "detail": str(exc)})
        return ReportResponse(
            ok=True, report=report_from_events(events, request.governance))

    @app.post("/equilibrium/verify", response_model=EquilibriumResponse)
    def equilibrium_endpoint(request: EquilibriumRequest):
        try:
            params = (PayoffParams.make(**request.params)
                      if request.params else PayoffParams.make())
            report = analyze(params,
                             include_reputation=request.include_reputation)
        except (ProtocolError, TypeError, ValueError) as exc:
            return JSONResponse(status_code=422, content={
                "ok": False, "error": "validation", "detail": str(exc)})
        return EquilibriumResponse(ok=True, report=report)

    @app.post("/analytics/thresholds", response_model=ThresholdResponse)
    def thresholds_endpoint(request: ThresholdRequest):
        sources = sum(x is not None
                      for x in (request.rate, request.values, request.trace))
        if sources != 1:
            return JSONResponse(status_code=422, content={
                "ok": False, "error": "validation",
                "detail": "provide exactly one of rate, values or trace"})
        try:
            if request.rate is not None:
                model = ExpModel(request.rate)
                values = sample_values(model, request.samples, request.seed)
            elif request.values is not None:
                values = request.values
            else:
                values = dispute_values_from_events(read_events(request.trace))
            cost = CostModel(**request.cost_model) if request.cost_model \
                else CostModel()
            report = threshold_report(values, request.threshold, cost)
        except (ProtocolError, TamperedTrace, TypeError, ValueError) as exc:
            return JSONResponse(status_code=422, content={
                "ok": False, "error": "validation", "detail": str(exc)})
        if request.rate is not None:
            report["model"] = {"kind": "exponential", "rate": request.rate}
        return ThresholdResponse(ok=True, report=report)

    return app


app = create_app()
