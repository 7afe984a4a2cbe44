"""Relational registry backing authorization and the transaction ledger.

Five relations: Owner, Car, ChargingStation, Registration (the
many-to-many station-has-car assignment) and Transaction. Primary keys
are enforced on every insert, cars carry a foreign key to their owner,
and the (station, car, owner) registration triple is unique.

State is kept in memory and persisted as an append-only event log,
one JSON object per line in <data_dir>/events.jsonl. Replaying the log
from empty reproduces the relations exactly; every mutation is flushed
to disk before it is acknowledged.

Mutations are serialized through one internal lock (single-writer,
shared by the HTTP registration path and the TCP charging path when
they run in the same process). Reads take the same lock and return
snapshots, so callers never observe a half-applied registration.
"""

from __future__ import annotations

import json
import os
import threading
import unicodedata
from dataclasses import dataclass
from datetime import date, datetime, timezone
from decimal import Decimal
from pathlib import Path

from .protocol import (
    AuthDecision,
    ChargeRequest,
    InvariantViolation,
    OutcomeKind,
    TransactionDraft,
    as_kwh,
    as_money,
    bill_total,
    dump_json,
)

EVENTS_FILE = "events.jsonl"

REASON_NOT_REGISTERED = "not-registered"
REASON_DETAIL_MISMATCH = "detail-mismatch"


class RegistryError(Exception):
    """Base class for registry constraint failures."""


class KeyConstraintViolation(RegistryError):
    """A primary key already exists with different attributes."""

    def __init__(self, relation: str, key: str):
        super().__init__(f"{relation} key already exists with different attributes: {key}")
        self.relation = relation
        self.key = key


class DuplicateRegistration(RegistryError):
    """The (station, car, owner) triple is already registered."""

    def __init__(self, station_id: str, car_id: str, car_owner_id: str):
        super().__init__(f"already registered: ({station_id}, {car_id}, {car_owner_id})")
        self.station_id = station_id
        self.car_id = car_id
        self.car_owner_id = car_owner_id


class ForeignKeyViolation(RegistryError):
    """A record references a key that does not match or does not exist."""


class CorruptLog(RegistryError):
    """A log line failed to decode or replay; line numbers are 1-based."""

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"corrupt event log at line {line_number}: {reason}")
        self.line_number = line_number


def _norm(value: str) -> str:
    """Attribute comparison form: NFC-normalized, surrounding space trimmed."""
    return unicodedata.normalize("NFC", value).strip()


def _norm_email(value: str) -> str:
    return _norm(value).casefold()


def _require_id(label: str, value: object) -> None:
    if not isinstance(value, str) or not value:
        raise InvariantViolation(f"{label} must be a non-empty string", field=label)


def _require_str(label: str, value: object) -> None:
    if not isinstance(value, str):
        raise InvariantViolation(f"{label} must be a string", field=label)


@dataclass(frozen=True)
class OwnerRecord:
    id: str
    name: str
    email: str
    phone: str

    def __post_init__(self):
        _require_id("owner_id", self.id)
        _require_str("owner_name", self.name)
        _require_str("owner_email", self.email)
        _require_str("owner_phone", self.phone)

    def same_attributes(self, other: "OwnerRecord") -> bool:
        return (_norm(self.name) == _norm(other.name)
                and _norm_email(self.email) == _norm_email(other.email)
                and _norm(self.phone) == _norm(other.phone))


@dataclass(frozen=True)
class CarRecord:
    id: str
    model_name: str
    model_year: int
    date_purchased: str
    owner_id: str

    def __post_init__(self):
        _require_id("car_id", self.id)
        _require_str("car_model_name", self.model_name)
        if isinstance(self.model_year, bool) or not isinstance(self.model_year, int):
            raise InvariantViolation("car_model_year must be an integer", field="car_model_year")
        if not 1900 <= self.model_year <= 2200:
            raise InvariantViolation(
                f"car_model_year out of range [1900, 2200]: {self.model_year}",
                field="car_model_year",
            )
        _require_str("car_date_purchased", self.date_purchased)
        try:
            date.fromisoformat(self.date_purchased)
        except ValueError:
            raise InvariantViolation(
                f"car_date_purchased is not an ISO-8601 date: {self.date_purchased!r}",
                field="car_date_purchased",
            ) from None
        _require_id("owner_id", self.owner_id)

    def same_attributes(self, other: "CarRecord") -> bool:
        return (_norm(self.model_name) == _norm(other.model_name)
                and self.model_year == other.model_year
                and _norm(self.date_purchased) == _norm(other.date_purchased)
                and self.owner_id == other.owner_id)


@dataclass(frozen=True)
class StationRecord:
    id: str
    name: str
    address: str

    def __post_init__(self):
        _require_id("station_id", self.id)
        _require_str("station_name", self.name)
        _require_str("station_address", self.address)

    def same_attributes(self, other: "StationRecord") -> bool:
        return (_norm(self.name) == _norm(other.name)
                and _norm(self.address) == _norm(other.address))


@dataclass(frozen=True)
class RegistrationRecord:
    station_id: str
    car_id: str
    car_owner_id: str

    def triple(self) -> tuple[str, str, str]:
        return (self.station_id, self.car_id, self.car_owner_id)


@dataclass(frozen=True)
class TransactionRecord:
    id: str
    station_id: str
    car_id: str
    owner_id: str
    kwh: Decimal
    price_per_kwh: Decimal
    total: Decimal
    timestamp: datetime
    outcome: OutcomeKind


class RegistryStore:
    """The five relations plus their append-only event log.

    Use RegistryStore.load(data_dir) to open (and replay) a persistent
    store, or RegistryStore() for a purely in-memory one.
    """

    def __init__(self, data_dir: str | Path | None = None):
        self._lock = threading.RLock()
        self._owners: dict[str, OwnerRecord] = {}
        self._cars: dict[str, CarRecord] = {}
        self._stations: dict[str, StationRecord] = {}
        self._registrations: list[RegistrationRecord] = []
        self._registration_keys: set[tuple[str, str, str]] = set()
        self._transactions: list[TransactionRecord] = []
        self._transaction_ids: set[str] = set()
        self._log_handle = None
        self._data_dir = Path(data_dir) if data_dir is not None else None
        if self._data_dir is not None:
            self._data_dir.mkdir(parents=True, exist_ok=True)
            self._log_handle = open(self._data_dir / EVENTS_FILE, "a", encoding="utf-8")

    @classmethod
    def load(cls, data_dir: str | Path) -> "RegistryStore":
        """Open a store, replaying <data_dir>/events.jsonl if present.

        Raises CorruptLog when a line fails to decode or violates an
        invariant during replay.
        """
        store = cls()
        store._data_dir = Path(data_dir)
        store._data_dir.mkdir(parents=True, exist_ok=True)
        log_path = store._data_dir / EVENTS_FILE
        if log_path.exists():
            with open(log_path, "r", encoding="utf-8") as handle:
                for line_number, line in enumerate(handle, start=1):
                    if not line.strip():
                        raise CorruptLog(line_number, "blank line")
                    try:
                        event = json.loads(line, parse_float=Decimal)
                    except json.JSONDecodeError as exc:
                        raise CorruptLog(line_number, f"not valid JSON: {exc}") from exc
                    try:
                        store._apply_event(event)
                    except (RegistryError, InvariantViolation, KeyError, TypeError) as exc:
                        raise CorruptLog(line_number, str(exc)) from exc
        store._log_handle = open(log_path, "a", encoding="utf-8")
        return store

    def close(self) -> None:
        with self._lock:
            if self._log_handle is not None:
                self._log_handle.close()
                self._log_handle = None

    def __enter__(self) -> "RegistryStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- event log ---------------------------------------------------------

    def append_event(self, event: dict) -> None:
        """Write one event durably, then apply it to the relations."""
        with self._lock:
            self._write_event(event)
            self._apply_event(event)

    def _write_event(self, event: dict) -> None:
        if self._log_handle is None:
            return
        self._log_handle.write(dump_json(event) + "\n")
        self._log_handle.flush()
        os.fsync(self._log_handle.fileno())

    def _apply_event(self, event: dict) -> None:
        if not isinstance(event, dict):
            raise InvariantViolation("event must be a JSON object")
        kind = event.get("event_type")
        if kind == "owner_added":
            record = OwnerRecord(id=event["id"], name=event["name"],
                                 email=event["email"], phone=event["phone"])
            if record.id in self._owners:
                raise KeyConstraintViolation("owner", record.id)
            self._owners[record.id] = record
        elif kind == "car_added":
            record = CarRecord(id=event["id"], model_name=event["model_name"],
                               model_year=event["model_year"],
                               date_purchased=event["date_purchased"],
                               owner_id=event["owner_id"])
            if record.id in self._cars:
                raise KeyConstraintViolation("car", record.id)
            if record.owner_id not in self._owners:
                raise ForeignKeyViolation(f"car {record.id} references missing owner {record.owner_id}")
            self._cars[record.id] = record
        elif kind == "station_added":
            record = StationRecord(id=event["id"], name=event["name"], address=event["address"])
            if record.id in self._stations:
                raise KeyConstraintViolation("station", record.id)
            self._stations[record.id] = record
        elif kind == "registration_added":
            record = RegistrationRecord(station_id=event["station_id"], car_id=event["car_id"],
                                        car_owner_id=event["car_owner_id"])
            self._check_registration_refs(record)
            if record.triple() in self._registration_keys:
                raise DuplicateRegistration(*record.triple())
            self._registrations.append(record)
            self._registration_keys.add(record.triple())
        elif kind == "transaction_recorded":
            record = TransactionRecord(
                id=event["id"], station_id=event["station_id"], car_id=event["car_id"],
                owner_id=event["owner_id"], kwh=as_kwh(event["kwh"]),
                price_per_kwh=as_money(event["price_per_kwh"], "price_per_kwh"),
                total=as_money(event["total"], "total"),
                timestamp=datetime.fromisoformat(event["timestamp"]),
                outcome=OutcomeKind(event["outcome"]),
            )
            self._check_transaction(record)
            self._transactions.append(record)
            self._transaction_ids.add(record.id)
        else:
            raise InvariantViolation(f"unknown event_type: {kind!r}")

    def _check_registration_refs(self, record: RegistrationRecord) -> None:
        if record.station_id not in self._stations:
            raise ForeignKeyViolation(f"registration references missing station {record.station_id}")
        car = self._cars.get(record.car_id)
        if car is None:
            raise ForeignKeyViolation(f"registration references missing car {record.car_id}")
        if record.car_owner_id not in self._owners:
            raise ForeignKeyViolation(f"registration references missing owner {record.car_owner_id}")
        if car.owner_id != record.car_owner_id:
            raise ForeignKeyViolation(
                f"registration owner {record.car_owner_id} does not own car {record.car_id}"
            )

    def _check_transaction(self, record: TransactionRecord) -> None:
        if record.id in self._transaction_ids:
            raise KeyConstraintViolation("transaction", record.id)
        triple = (record.station_id, record.car_id, record.owner_id)
        if triple not in self._registration_keys:
            raise ForeignKeyViolation(f"transaction references unregistered triple {triple}")
        if record.total != bill_total(record.kwh, record.price_per_kwh):
            raise InvariantViolation(
                f"transaction total {record.total} != kwh * price_per_kwh", field="total"
            )

    # -- mutations ----------------------------------------------------------

    def register(self, owner: OwnerRecord, car: CarRecord,
                 station: StationRecord) -> RegistrationRecord:
        """Register a car at a station, inserting up to four new tuples.

        All key constraints are validated before anything is inserted,
        so a failure leaves every relation untouched. Resubmitting an
        existing owner/car/station with identical attributes references
        the stored tuple instead of erroring; any attribute difference
        under the same key raises KeyConstraintViolation. The
        registration triple itself must be new.
        """
        with self._lock:
            if car.owner_id != owner.id:
                raise ForeignKeyViolation(
                    f"car owner_id {car.owner_id} does not match owner id {owner.id}"
                )
            existing_owner = self._owners.get(owner.id)
            if existing_owner is not None and not existing_owner.same_attributes(owner):
                raise KeyConstraintViolation("owner", owner.id)
            existing_car = self._cars.get(car.id)
            if existing_car is not None and not existing_car.same_attributes(car):
                raise KeyConstraintViolation("car", car.id)
            existing_station = self._stations.get(station.id)
            if existing_station is not None and not existing_station.same_attributes(station):
                raise KeyConstraintViolation("station", station.id)
            registration = RegistrationRecord(
                station_id=station.id, car_id=car.id, car_owner_id=owner.id
            )
            if registration.triple() in self._registration_keys:
                raise DuplicateRegistration(*registration.triple())

            if existing_owner is None:
                self.append_event({"event_type": "owner_added", "id": owner.id,
                                   "name": owner.name, "email": owner.email,
                                   "phone": owner.phone})
            if existing_car is None:
                self.append_event({"event_type": "car_added", "id": car.id,
                                   "model_name": car.model_name,
                                   "model_year": car.model_year,
                                   "date_purchased": car.date_purchased,
                                   "owner_id": car.owner_id})
            if existing_station is None:
                self.append_event({"event_type": "station_added", "id": station.id,
                                   "name": station.name, "address": station.address})
            self.append_event({"event_type": "registration_added",
                               "station_id": registration.station_id,
                               "car_id": registration.car_id,
                               "car_owner_id": registration.car_owner_id})
            return registration

    def add_station(self, station: StationRecord) -> StationRecord:
        """Insert a station tuple on its own (idempotent on exact match)."""
        with self._lock:
            existing = self._stations.get(station.id)
            if existing is not None:
                if not existing.same_attributes(station):
                    raise KeyConstraintViolation("station", station.id)
                return existing
            self.append_event({"event_type": "station_added", "id": station.id,
                               "name": station.name, "address": station.address})
            return station

    def record_transaction(self, draft: TransactionDraft) -> TransactionRecord:
        """Append a settled session to the ledger and return the record."""
        with self._lock:
            record = TransactionRecord(
                id=draft.transaction_id,
                station_id=draft.station_id,
                car_id=draft.car_id,
                owner_id=draft.owner_id,
                kwh=as_kwh(draft.kwh),
                price_per_kwh=as_money(draft.price_per_kwh, "price_per_kwh"),
                total=as_money(draft.total, "total"),
                timestamp=datetime.now(timezone.utc),
                outcome=OutcomeKind.COMPLETED,
            )
            self._check_transaction(record)
            self.append_event({
                "event_type": "transaction_recorded", "id": record.id,
                "station_id": record.station_id, "car_id": record.car_id,
                "owner_id": record.owner_id, "kwh": record.kwh,
                "price_per_kwh": record.price_per_kwh, "total": record.total,
                "timestamp": record.timestamp.isoformat(),
                "outcome": record.outcome.value,
            })
            return record

    # -- authorization -------------------------------------------------------

    def authorize(self, station_id: str, request: ChargeRequest) -> AuthDecision:
        """Decide whether `request` may charge at `station_id`.

        Granted only when the (station, car, owner) triple is registered
        AND the stored owner/car attributes match the submitted details
        field by field. Read-only.
        """
        with self._lock:
            triple = (station_id, request.car_id, request.owner_id)
            if triple not in self._registration_keys:
                return AuthDecision(granted=False, reason=REASON_NOT_REGISTERED)
            owner = self._owners.get(request.owner_id)
            car = self._cars.get(request.car_id)
            if owner is None or car is None:
                return AuthDecision(granted=False, reason=REASON_NOT_REGISTERED)
            submitted_owner = OwnerRecord(id=request.owner_id, name=request.owner_name,
                                          email=request.owner_email, phone=request.owner_phone)
            submitted_car = CarRecord(id=request.car_id, model_name=request.car_model_name,
                                      model_year=request.car_model_year,
                                      date_purchased=request.car_date_purchased,
                                      owner_id=request.owner_id)
            if not owner.same_attributes(submitted_owner) or not car.same_attributes(submitted_car):
                return AuthDecision(granted=False, reason=REASON_DETAIL_MISMATCH)
            return AuthDecision(granted=True)

    # -- queries -------------------------------------------------------------

    def list_owners(self) -> list[OwnerRecord]:
        with self._lock:
            return list(self._owners.values())

    def list_cars(self, owner_id: str | None = None) -> list[CarRecord]:
        with self._lock:
            cars = list(self._cars.values())
        if owner_id is not None:
            cars = [car for car in cars if car.owner_id == owner_id]
        return cars

    def list_stations(self) -> list[StationRecord]:
        with self._lock:
            return list(self._stations.values())

    def list_registrations(self, station_id: str | None = None) -> list[RegistrationRecord]:
        with self._lock:
            registrations = list(self._registrations)
        if station_id is not None:
            registrations = [r for r in registrations if r.station_id == station_id]
        return registrations

    def list_transactions(self, station_id: str | None = None,
                          since: datetime | None = None) -> list[TransactionRecord]:
        with self._lock:
            transactions = list(self._transactions)
        if station_id is not None:
            transactions = [t for t in transactions if t.station_id == station_id]
        if since is not None:
            transactions = [t for t in transactions if t.timestamp >= since]
        return transactions

    def get_station(self, station_id: str) -> StationRecord | None:
        with self._lock:
            return self._stations.get(station_id)

    def relations(self) -> dict[str, tuple]:
        """Snapshot of all five relations, for comparisons and tests."""
        with self._lock:
            return {
                "owners": tuple(self._owners.values()),
                "cars": tuple(self._cars.values()),
                "stations": tuple(self._stations.values()),
                "registrations": tuple(self._registrations),
                "transactions": tuple(self._transactions),
            }

    def cardinalities(self) -> tuple[int, int, int, int]:
        """(owners, cars, stations, registrations) relation sizes."""
        with self._lock:
            return (len(self._owners), len(self._cars),
                    len(self._stations), len(self._registrations))


@dataclass(frozen=True)
class StationAuthorizer:
    """AuthProvider view of the registry for one station."""

    store: RegistryStore
    station_id: str

    def authorize(self, request: ChargeRequest) -> AuthDecision:
        return self.store.authorize(self.station_id, request)


def load_store(data_dir: str | Path) -> RegistryStore:
    """Open (and replay) the registry under `data_dir`."""
    return RegistryStore.load(data_dir)
