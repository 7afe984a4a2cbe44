"""HTTP facade over the registry for the registration web app and operators.

One write endpoint (POST /api/v1/registrations, the web form's target)
plus read endpoints for stations, registrations, transactions and cars.
Everything is JSON; decimals are serialized as strings so money and kWh
survive the trip digit-exact.

Status codes follow the registry's error split: 409 for key-constraint
and duplicate-registration violations (with the offending relation and
key named), 422 for per-field validation problems.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .protocol import InvariantViolation
from .registry import (
    CarRecord,
    DuplicateRegistration,
    KeyConstraintViolation,
    OwnerRecord,
    RegistryStore,
    StationRecord,
    TransactionRecord,
)

SUBMISSION_FIELDS = (
    "owner_id", "owner_name", "owner_email", "owner_phone",
    "car_id", "car_model_name", "car_model_year", "car_date_purchased",
    "station_id", "station_name", "station_address",
)


def validate_submission(obj: object) -> tuple[dict | None, dict[str, str]]:
    """Check the flat registration document; returns (values, field_errors)."""
    if not isinstance(obj, dict):
        return None, {"body": "must be a JSON object"}
    errors: dict[str, str] = {}
    values: dict[str, object] = {}
    for name in SUBMISSION_FIELDS:
        value = obj.get(name)
        if value is None or (isinstance(value, str) and not value.strip()):
            errors[name] = "required"
            continue
        values[name] = value
    for name in obj:
        if name not in SUBMISSION_FIELDS:
            errors[name] = "unknown field"
    if errors:
        return None, errors
    year = values["car_model_year"]
    if isinstance(year, str) and year.strip().lstrip("-").isdigit():
        year = int(year.strip())  # HTML forms post numbers as strings
    values["car_model_year"] = year
    return values, {}


def records_from_submission(values: dict) -> tuple[OwnerRecord, CarRecord, StationRecord]:
    owner = OwnerRecord(id=values["owner_id"], name=values["owner_name"],
                        email=values["owner_email"], phone=values["owner_phone"])
    car = CarRecord(id=values["car_id"], model_name=values["car_model_name"],
                    model_year=values["car_model_year"],
                    date_purchased=values["car_date_purchased"],
                    owner_id=values["owner_id"])
    station = StationRecord(id=values["station_id"], name=values["station_name"],
                            address=values["station_address"])
    return owner, car, station


def _transaction_to_dict(record: TransactionRecord) -> dict:
    return {
        "id": record.id,
        "station_id": record.station_id,
        "car_id": record.car_id,
        "owner_id": record.owner_id,
        "kwh": str(record.kwh),
        "price_per_kwh": str(record.price_per_kwh),
        "total": str(record.total),
        "timestamp": record.timestamp.isoformat(),
        "outcome": record.outcome.value,
    }


def _clamp(items: list, limit: int | None) -> list:
    if limit is None or limit < 0:
        return items
    return items[:limit]


def create_app(store: RegistryStore, *, cors_origin: str | None = None) -> FastAPI:
    """Build the API application over an open registry store."""
    app = FastAPI(title="EV charging registry", docs_url=None, redoc_url=None)
    if cors_origin:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=["*"] if cors_origin == "*" else [cors_origin],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.post("/api/v1/registrations")
    async def create_registration(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse(status_code=422, content={"body": "not valid JSON"})
        values, errors = validate_submission(body)
        if errors:
            return JSONResponse(status_code=422, content=errors)
        try:
            owner, car, station = records_from_submission(values)
        except InvariantViolation as exc:
            return JSONResponse(status_code=422,
                                content={exc.field or "body": str(exc)})
        try:
            registration = store.register(owner, car, station)
        except KeyConstraintViolation as exc:
            return JSONResponse(status_code=409, content={
                "relation": exc.relation, "key": exc.key, "reason": str(exc)})
        except DuplicateRegistration as exc:
            return JSONResponse(status_code=409, content={
                "relation": "registration",
                "key": f"({exc.station_id}, {exc.car_id}, {exc.car_owner_id})",
                "reason": str(exc)})
        return JSONResponse(status_code=201, content={
            "station_id": registration.station_id,
            "car_id": registration.car_id,
            "car_owner_id": registration.car_owner_id,
        })

    @app.get("/api/v1/stations")
    def list_stations(limit: int | None = None):
        return _clamp([{"id": s.id, "name": s.name, "address": s.address}
                       for s in store.list_stations()], limit)

    @app.get("/api/v1/stations/{station_id}/registrations")
    def station_registrations(station_id: str, limit: int | None = None):
        return _clamp([{"station_id": r.station_id, "car_id": r.car_id,
                        "car_owner_id": r.car_owner_id}
                       for r in store.list_registrations(station_id)], limit)

    @app.get("/api/v1/stations/{station_id}/transactions")
    def station_transactions(station_id: str, limit: int | None = None):
        return _clamp([_transaction_to_dict(t)
                       for t in store.list_transactions(station_id)], limit)

    @app.get("/api/v1/owners/{owner_id}/cars")
    def owner_cars(owner_id: str, limit: int | None = None):
        return _clamp([{"id": c.id, "model_name": c.model_name,
                        "model_year": c.model_year,
                        "date_purchased": c.date_purchased,
                        "owner_id": c.owner_id}
                       for c in store.list_cars(owner_id)], limit)

    return app


def serve_api(data_dir: str | Path, *, port: int = 7432, host: str = "127.0.0.1",
              cors_origin: str | None = "*") -> None:
    """Open the store under data_dir and serve until interrupted."""
    import uvicorn

    store = RegistryStore.load(data_dir)
    app = create_app(store, cors_origin=cors_origin)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        store.close()
