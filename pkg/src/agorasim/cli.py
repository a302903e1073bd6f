"""Command-line client for the agorasim service.

By default every command talks to an in-process instance of the HTTP service
over an ASGI transport, so no server is needed; pass --server to target a
running instance instead. Exit codes: 0 ok, 1 validation problem, 2 invariant
violation (failed verification or aborted run).

The only environment variable honoured is AGORASIM_LOG (log verbosity).
"""

from __future__ import annotations

import json
import logging
import os
import sys

import click
import httpx

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INVARIANT = 2


def _setup_logging():
    level = os.environ.get("AGORASIM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    from .service.app import app
    return httpx.Client(transport=httpx.ASGITransport(app=app),
                        base_url="http://agorasim.local", timeout=None)


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    try:
        with _client(server) as client:
            return client.post(path, json=payload)
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


def _fail_from(response: httpx.Response) -> None:
    """Print a non-2xx service response and exit with the validation code."""
    try:
        body = response.json()
    except ValueError:
        body = {"detail": response.text}
    for violation in body.get("violations") or []:
        click.echo(f"validation: {violation}", err=True)
    detail = body.get("detail") or body.get("error")
    if detail:
        click.echo(f"error: {detail}", err=True)
    sys.exit(EXIT_VALIDATION)


@click.group()
def main():
    """Deterministic P2P marketplace protocol engine and simulator."""
    _setup_logging()


@main.command("run")
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON-lines trace here.")
@click.option("--server", default=None, help="Remote service URL.")
def run_cmd(scenario, seed, out, server):
    """Run a scenario file and print the run summary."""
    with open(scenario, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            click.echo(f"error: scenario is not valid JSON: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
    payload = {"scenario": data, "include_trace": out is not None}
    if seed is not None:
        payload["seed"] = seed
    response = _post(server, "/run", payload)
    if response.status_code != 200:
        _fail_from(response)
    body = response.json()
    if not body["ok"]:
        error = body.get("error") or {}
        click.echo(f"run aborted: {error.get('kind')}: {error.get('detail')}",
                   err=True)
        sys.exit(EXIT_INVARIANT)
    if out is not None:
        with open(out, "w", encoding="ascii") as fh:
            fh.write(body["trace"])
        click.echo(f"trace written to {out} ({body['events']} events)")
    summary = body["summary"]
    click.echo(f"day {summary['day']}")
    for section in ("exchanges", "disputes", "reputation", "proposals"):
        entries = summary.get(section) or {}
        if entries:
            click.echo(f"{section}:")
            for key, value in entries.items():
                click.echo(f"  {key}: {value}")
    click.echo(f"lzsp_minted: {summary['lzsp_minted']}")


@main.command("verify")
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
@click.option("--server", default=None, help="Remote service URL.")
def verify_cmd(trace, server):
    """Verify a trace: digest chain, transition legality, conservation."""
    with open(trace, "r", encoding="utf-8") as fh:
        text = fh.read()
    response = _post(server, "/traces/verify", {"trace": text})
    if response.status_code != 200:
        _fail_from(response)
    body = response.json()
    if not body["ok"]:
        click.echo(f"TAMPERED at event {body['first_bad_seq']}: "
                   f"{body['detail']}", err=True)
        sys.exit(EXIT_INVARIANT)
    click.echo(f"ok: {body['events']} events, "
               f"{body['sessions_terminal']} terminal sessions, "
               f"{body['conservation_checks']} conservation checks")


@main.command("report")
@click.argument("trace", type=click.Path(exists=True, dir_okay=False))
@click.option("--governance", is_flag=True,
              help="Include the proposal lifecycle tables.")
@click.option("--server", default=None, help="Remote service URL.")
def report_cmd(trace, governance, server):
    """Summarize a trace: outcomes, disputes, minted rewards, proposals."""
    with open(trace, "r", encoding="utf-8") as fh:
        text = fh.read()
    response = _post(server, "/traces/report",
                     {"trace": text, "governance": governance})
    if response.status_code != 200:
        _fail_from(response)
    report = response.json()["report"]
    click.echo(f"days: {report['days']}")
    for section in ("exchanges", "disputes"):
        click.echo(f"{section}:")
        for key, value in report[section].items():
            click.echo(f"  {key}: {value}")
    click.echo(f"lzsp_minted: {report['lzsp_minted']}")
    if governance:
        click.echo("proposals:")
        header = f"{'id':<10} {'level':<11} {'state':<9} {'up':>12} {'down':>12}"
        click.echo("  " + header)
        for row in report.get("proposals", []):
            click.echo(f"  {row['proposal']:<10} {row['level']:<11} "
                       f"{row['state']:<9} {row['up']:>12} {row['down']:>12}")


@main.command("verify-equilibrium")
@click.option("--params", type=click.Path(exists=True, dir_okay=False),
              default=None,
              help="JSON file with payoff components (asset_value, "
                   "reward_value, stake_keep, stake_lose, stake_gain, "
                   "reputation_value).")
@click.option("--zero-reputation", is_flag=True,
              help="Zero the optional reputation-feedback terms.")
@click.option("--json", "as_json", is_flag=True,
              help="Print the raw JSON report only.")
@click.option("--server", default=None, help="Remote service URL.")
def equilibrium_cmd(params, zero_reputation, as_json, server):
    """Build the honest/dishonest payoff matrix and verify its equilibria."""
    payload = {"include_reputation": not zero_reputation}
    if params:
        with open(params, "r", encoding="utf-8") as fh:
            payload["params"] = json.load(fh)
    response = _post(server, "/equilibrium/verify", payload)
    if response.status_code != 200:
        _fail_from(response)
    report = response.json()["report"]
    if as_json:
        click.echo(json.dumps(report, indent=2))
        return
    click.echo("payoff matrix (buyer utility, seller utility):")
    for profile, cell in report["matrix"].items():
        click.echo(f"  {profile:<19} ({cell[0]}, {cell[1]})")
    click.echo("pure-strategy equilibria:")
    for eq in report["equilibria"]:
        kind = "strict" if eq["strict"] else "weak"
        click.echo(f"  {eq['profile']} ({kind}; margins buyer "
                   f"{eq['buyer_margin']}, seller {eq['seller_margin']})")
    click.echo("deviation margins:")
    for line in report["margin_inequalities"]:
        click.echo(f"  {line}")
    click.echo(f"social optima: {', '.join(report['social_optima'])}")
    for note in report["notes"]:
        click.echo(f"note: {note}")


@main.command("analyze-thresholds")
@click.option("--lambda", "rate", type=float, default=None,
              help="Exponential transaction-value model rate (per USD).")
@click.option("--input-trace", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Pull routed-dispute values from a trace.")
@click.option("--threshold", type=float, default=50.0,
              help="Internal-vs-external routing threshold in USD.")
@click.option("--samples", type=int, default=100_000,
              help="Monte Carlo sample count for the model.")
@click.option("--seed", type=int, default=0)
@click.option("--cost-model", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file with per-dispute cost parameters.")
@click.option("--server", default=None, help="Remote service URL.")
def thresholds_cmd(rate, input_trace, threshold, samples, seed, cost_model,
                   server):
    """Report the value mass below a routing threshold and expected costs."""
    if (rate is None) == (input_trace is None):
        click.echo("error: provide exactly one of --lambda or --input-trace",
                   err=True)
        sys.exit(EXIT_VALIDATION)
    payload = {"threshold": threshold, "samples": samples, "seed": seed}
    if rate is not None:
        payload["rate"] = rate
    else:
        with open(input_trace, "r", encoding="utf-8") as fh:
            payload["trace"] = fh.read()
    if cost_model:
        with open(cost_model, "r", encoding="utf-8") as fh:
            payload["cost_model"] = json.load(fh)
    response = _post(server, "/analytics/thresholds", payload)
    if response.status_code != 200:
        _fail_from(response)
    report = response.json()["report"]
    rows = [
        ("values", report["n_values"]),
        ("threshold (USD)", report["threshold"]),
        ("fraction below", f"{report['fraction_below']:.6f}"),
        ("expected internal cost", f"{report['expected_internal_cost']:.6f}"),
        ("expected external cost", f"{report['expected_external_cost']:.6f}"),
        ("recommended threshold", report["recommended_threshold"]),
        ("expected cost at best", f"{report['recommended_expected_cost']:.6f}"),
    ]
    width = max(len(label) for label, _ in rows)
    for label, value in rows:
        click.echo(f"{label:<{width}}  {value}")
    click.echo(json.dumps(report, indent=2))


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8314)
def serve_cmd(host, port):
    """Run the HTTP service with uvicorn."""
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
