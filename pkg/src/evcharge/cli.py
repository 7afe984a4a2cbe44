"""Single entry point exposing every capability as a subcommand.

    evcharge station serve   run a charging-station daemon
    evcharge api serve       run the registration HTTP API
    evcharge register        register an owner/car/station triple
    evcharge vehicle charge  run one charging session as a vehicle
    evcharge sim run         run a fleet simulation
    evcharge store show      inspect the registry relations

Exit codes: 0 success, 1 domain errors (denied charge, key violation),
2 usage errors. With --json, errors go to stderr as one JSON object.
"""

from __future__ import annotations

import json
import logging
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

import click

from . import api as api_mod
from . import fleetsim
from . import station as station_mod
from . import vehicle as vehicle_mod
from .protocol import InvariantViolation, OutcomeKind
from .registry import RegistryError, RegistryStore

DEFAULT_DATA_DIR = "data"


def _fail(ctx: click.Context, kind: str, message: str) -> None:
    """Report a domain error and exit 1."""
    if ctx.obj.get("json"):
        sys.stderr.write(json.dumps({"error": kind, "detail": message}) + "\n")
    else:
        sys.stderr.write(f"error ({kind}): {message}\n")
    ctx.exit(1)


def _data_dir(ctx: click.Context, override: str | None) -> Path:
    return Path(override or ctx.obj["data_dir"])


def _decimal(value: str, label: str) -> Decimal:
    try:
        return Decimal(value)
    except InvalidOperation:
        raise click.BadParameter(f"{label} must be a decimal number, got {value!r}")


@click.group()
@click.option("--data-dir", envvar="EAV_DATA_DIR", default=DEFAULT_DATA_DIR,
              show_default=True, help="Registry/ledger directory.")
@click.option("--json", "json_output", is_flag=True, help="Machine-readable output.")
@click.option("--log-level", default="warning", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]))
@click.pass_context
def main(ctx: click.Context, data_dir: str, json_output: bool, log_level: str) -> None:
    """Machine-to-machine EV charging toolkit."""
    logging.basicConfig(level=log_level.upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    ctx.obj = {"data_dir": data_dir, "json": json_output}


# -- station ----------------------------------------------------------------


@main.group()
def station() -> None:
    """Charging-station daemon."""


@station.command("serve")
@click.option("--station-id", required=True)
@click.option("--bind", default="127.0.0.1", show_default=True)
@click.option("--port", default=station_mod.DEFAULT_PORT, show_default=True,
              envvar="EAV_STATION_PORT", type=int)
@click.option("--tariff", required=True, envvar="EAV_TARIFF",
              help="Price per kWh, e.g. 0.10.")
@click.option("--data-dir", "data_dir_opt", default=None)
@click.option("--archive-dir", default=None,
              help="Where received request documents are stored. [default: <data-dir>/archive]")
@click.option("--session-timeout-secs", default=station_mod.DEFAULT_SESSION_TIMEOUT,
              show_default=True, type=float)
@click.pass_context
def station_serve(ctx, station_id, bind, port, tariff, data_dir_opt, archive_dir,
                  session_timeout_secs):
    """Serve charging sessions, one client at a time, until interrupted."""
    data_dir = _data_dir(ctx, data_dir_opt)
    config = station_mod.StationConfig(
        station_id=station_id,
        tariff=_decimal(tariff, "tariff"),
        data_dir=data_dir,
        archive_dir=Path(archive_dir) if archive_dir else data_dir / "archive",
        bind_address=bind,
        port=port,
        session_timeout=session_timeout_secs,
    )
    store = RegistryStore.load(data_dir)
    try:
        server = station_mod.StationServer(config, store)
        click.echo(f"station {station_id} serving on {bind}:{port} "
                   f"(tariff {config.tariff}/kWh)", err=True)
        server.serve_forever()
    except station_mod.StationError as exc:
        _fail(ctx, "station", str(exc))
    finally:
        store.close()


# -- api ---------------------------------------------------------------------


@main.group()
def api() -> None:
    """Registration HTTP API."""


@api.command("serve")
@click.option("--api-port", default=7432, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", "data_dir_opt", default=None)
@click.option("--cors-origin", default="*", show_default=True)
@click.pass_context
def api_serve(ctx, api_port, host, data_dir_opt, cors_origin):
    """Serve the registration API until interrupted."""
    click.echo(f"registration api on http://{host}:{api_port}/api/v1", err=True)
    api_mod.serve_api(_data_dir(ctx, data_dir_opt), port=api_port, host=host,
                      cors_origin=cors_origin)


# -- register -----------------------------------------------------------------


@main.command()
@click.option("--file", "file_path", required=True, type=click.Path(exists=True),
              help="Flat JSON document with owner, car and station fields.")
@click.option("--data-dir", "data_dir_opt", default=None)
@click.pass_context
def register(ctx, file_path, data_dir_opt):
    """Register a car at a station from a submission document."""
    try:
        body = json.loads(Path(file_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        _fail(ctx, "parse", f"{file_path}: {exc}")
    values, errors = api_mod.validate_submission(body)
    if errors:
        _fail(ctx, "validation", json.dumps(errors))
    store = RegistryStore.load(_data_dir(ctx, data_dir_opt))
    try:
        owner, car, sta = api_mod.records_from_submission(values)
        registration = store.register(owner, car, sta)
    except (RegistryError, InvariantViolation) as exc:
        _fail(ctx, "registry", str(exc))
    finally:
        store.close()
    if ctx.obj["json"]:
        click.echo(json.dumps({"station_id": registration.station_id,
                               "car_id": registration.car_id,
                               "car_owner_id": registration.car_owner_id}))
    else:
        click.echo(f"registered car {registration.car_id} (owner "
                   f"{registration.car_owner_id}) at station {registration.station_id}")


# -- vehicle -------------------------------------------------------------------


@main.group()
def vehicle() -> None:
    """Vehicle-side client."""


@vehicle.command("charge")
@click.option("--request", "request_path", required=True, type=click.Path(exists=True),
              help="Path to the request document (e.g. test.json).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=station_mod.DEFAULT_PORT, show_default=True, type=int)
@click.option("--kwh", required=True, help="Energy to buy, e.g. 5 or 7.5.")
@click.option("--file-name", default=None,
              help="File name announced to the station. [default: basename of --request]")
@click.pass_context
def vehicle_charge(ctx, request_path, host, port, kwh, file_name):
    """Run one charging session against a station."""
    try:
        request = vehicle_mod.load_charge_request(request_path)
        intent = vehicle_mod.ChargeIntent(
            request=request,
            file_name=file_name or Path(request_path).name,
            kwh=_decimal(kwh, "kwh"),
            station_address=host,
            station_port=port,
        )
    except (vehicle_mod.ParseError, InvariantViolation) as exc:
        _fail(ctx, "request", str(exc))
    try:
        report = vehicle_mod.charge(intent)
    except vehicle_mod.ConnectError as exc:
        _fail(ctx, "connect", str(exc))

    payload = {
        "outcome": report.outcome.kind.value,
        "detail": report.outcome.detail,
        "bill": None if report.bill is None else {
            "bill_id": report.bill.bill_id, "kwh": str(report.bill.kwh),
            "price_per_kwh": str(report.bill.price_per_kwh),
            "total": str(report.bill.total)},
        "receipt_transaction_id": report.receipt_transaction_id,
    }
    if report.outcome.kind is OutcomeKind.COMPLETED:
        if ctx.obj["json"]:
            click.echo(json.dumps(payload))
        else:
            bill = report.bill
            click.echo(f"charged {bill.kwh} kWh at {bill.price_per_kwh}/kWh, "
                       f"paid {bill.total}; receipt {report.receipt_transaction_id}")
        return
    kind = "denied" if report.outcome.kind is OutcomeKind.DENIED_UNREGISTERED else "session"
    _fail(ctx, kind, f"session ended {report.outcome.kind.value}"
          + (f": {report.outcome.detail}" if report.outcome.detail else ""))


# -- sim ------------------------------------------------------------------------


@main.group()
def sim() -> None:
    """Fleet simulation."""


@sim.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Write the report here instead of stdout.")
@click.option("--data-dir", "data_dir_opt", default=None,
              help="Simulation data directory. [default: a fresh temp dir]")
@click.pass_context
def sim_run(ctx, config_path, out_path, data_dir_opt):
    """Run a fleet scenario and emit the analytics report."""
    try:
        config = fleetsim.SimConfig.from_file(config_path)
    except (KeyError, ValueError, InvariantViolation) as exc:
        _fail(ctx, "config", f"{config_path}: {exc}")
    try:
        report = fleetsim.run_sim(config, data_dir=data_dir_opt)
    except fleetsim.SimSetupError as exc:
        _fail(ctx, "setup", str(exc))
    text = report.to_json()
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
        if not ctx.obj["json"]:
            click.echo(f"report written to {out_path}", err=True)
    else:
        click.echo(text)


# -- store ------------------------------------------------------------------------


@main.group()
def store() -> None:
    """Registry inspection."""


@store.command("show")
@click.option("--data-dir", "data_dir_opt", default=None)
@click.pass_context
def store_show(ctx, data_dir_opt):
    """Print the relation contents."""
    reg = RegistryStore.load(_data_dir(ctx, data_dir_opt))
    try:
        relations = reg.relations()
    finally:
        reg.close()
    if ctx.obj["json"]:
        def record_dict(record):
            from dataclasses import asdict
            obj = asdict(record)
            for key, value in obj.items():
                if isinstance(value, Decimal):
                    obj[key] = str(value)
                elif hasattr(value, "isoformat"):
                    obj[key] = value.isoformat()
                elif isinstance(value, OutcomeKind):
                    obj[key] = value.value
            return obj

        click.echo(json.dumps({name: [record_dict(r) for r in records]
                               for name, records in relations.items()}, indent=2))
        return
    for name, records in relations.items():
        click.echo(f"{name} ({len(records)}):")
        for record in records:
            click.echo(f"  {record}")


if __name__ == "__main__":
    main()
