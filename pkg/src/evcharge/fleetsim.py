"""Deterministic fleet simulator and service-provider analytics.

Generates a vehicle population (a configurable fraction registered),
runs every vehicle as a real client against in-process stations, and
aggregates the sessions into a fleet report. All randomness flows from
one seed, and report fields contain no wall-clock data, so two runs
with the same config produce identical reports.

Sessions normally run over real TCP on loopback; transport="memory"
drives the same state machines over an in-memory channel for fast
property tests. Both paths write the same transcript files, which
verify_ledger cross-checks against the transaction relation.
"""

from __future__ import annotations

import concurrent.futures
import json
import random
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

from .ids import IdSource
from .protocol import (
    ChargeRequest,
    OutcomeKind,
    as_kwh,
    as_money,
    encode_message,
    run_conversation,
)
from .registry import (
    CarRecord,
    OwnerRecord,
    RegistryStore,
    StationAuthorizer,
    StationRecord,
)
from .station import (
    StationConfig,
    StationServer,
    Transcript,
    TranscriptEntry,
    TranscriptHeader,
    read_transcript,
    transcripts_dir,
    write_transcript,
)
from .vehicle import ChargeIntent, charge


class SimSetupError(Exception):
    """The simulation could not be brought up (ports, config)."""


@dataclass(frozen=True)
class KwhDistribution:
    """Energy demand per vehicle: a fixed value or a uniform range."""

    kind: str  # "fixed" | "uniform"
    value: Decimal = Decimal("5.000")
    low: Decimal = Decimal("1.000")
    high: Decimal = Decimal("10.000")

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform"):
            raise ValueError(f"unknown kwh distribution kind: {self.kind!r}")
        object.__setattr__(self, "value", as_kwh(self.value, "kwh value"))
        object.__setattr__(self, "low", as_kwh(self.low, "kwh low"))
        object.__setattr__(self, "high", as_kwh(self.high, "kwh high"))
        if self.kind == "uniform" and not 0 < self.low <= self.high:
            raise ValueError("uniform range needs 0 < low <= high")
        if self.kind == "fixed" and self.value <= 0:
            raise ValueError("fixed kwh must be > 0")

    def sample(self, rng: random.Random) -> Decimal:
        if self.kind == "fixed":
            return self.value
        # Integer millis keep samples exact and seed-stable.
        millis = rng.randint(int(self.low * 1000), int(self.high * 1000))
        return Decimal(millis).scaleb(-3)


@dataclass(frozen=True)
class Arrival:
    mode: str = "sequential"  # "sequential" | "concurrent"
    max_in_flight: int = 4

    def __post_init__(self):
        if self.mode not in ("sequential", "concurrent"):
            raise ValueError(f"unknown arrival mode: {self.mode!r}")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    seed: int
    n_stations: int
    n_vehicles: int
    registered_fraction: Decimal
    kwh: KwhDistribution
    tariff: Decimal
    arrival: Arrival = Arrival()

    def __post_init__(self):
        if self.n_stations < 1:
            raise ValueError("n_stations must be >= 1")
        if self.n_vehicles < 0:
            raise ValueError("n_vehicles must be >= 0")
        frac = Decimal(str(self.registered_fraction))
        if not 0 <= frac <= 1:
            raise ValueError("registered_fraction must be in [0, 1]")
        object.__setattr__(self, "registered_fraction", frac)
        object.__setattr__(self, "tariff", as_money(self.tariff, "tariff"))
        if self.tariff <= 0:
            raise ValueError("tariff must be > 0")

    @classmethod
    def from_dict(cls, obj: dict) -> "SimConfig":
        kwh = obj.get("kwh_distribution", {"type": "fixed", "kwh": "5.0"})
        if kwh.get("type") == "uniform":
            dist = KwhDistribution(kind="uniform", low=Decimal(str(kwh["low"])),
                                   high=Decimal(str(kwh["high"])))
        else:
            dist = KwhDistribution(kind="fixed", value=Decimal(str(kwh["kwh"])))
        arrival_obj = obj.get("arrival", {"mode": "sequential"})
        arrival = Arrival(mode=arrival_obj.get("mode", "sequential"),
                          max_in_flight=int(arrival_obj.get("max_in_flight", 4)))
        return cls(
            seed=int(obj["seed"]),
            n_stations=int(obj.get("n_stations", 1)),
            n_vehicles=int(obj.get("n_vehicles", 0)),
            registered_fraction=Decimal(str(obj.get("registered_fraction", "1.0"))),
            kwh=dist,
            tariff=Decimal(str(obj.get("tariff", "0.10"))),
            arrival=arrival,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "SimConfig":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


@dataclass
class StationStats:
    sessions_total: int = 0
    sessions_completed: int = 0
    sessions_denied: int = 0
    sessions_error: int = 0
    energy_sold: Decimal = Decimal("0.000")
    revenue: Decimal = Decimal("0.00")

    def to_dict(self) -> dict:
        return {
            "sessions_total": self.sessions_total,
            "sessions_completed": self.sessions_completed,
            "sessions_denied": self.sessions_denied,
            "sessions_error": self.sessions_error,
            "energy_sold": str(self.energy_sold),
            "revenue": str(self.revenue),
        }


@dataclass
class FleetReport:
    sessions_total: int
    sessions_completed: int
    sessions_denied: int
    sessions_error: int
    energy_sold: Decimal
    revenue: Decimal
    per_station: dict[str, StationStats]
    transcript_dir: str
    data_dir: str

    def to_dict(self) -> dict:
        return {
            "sessions_total": self.sessions_total,
            "sessions_completed": self.sessions_completed,
            "sessions_denied": self.sessions_denied,
            "sessions_error": self.sessions_error,
            "energy_sold": str(self.energy_sold),
            "revenue": str(self.revenue),
            "per_station": {sid: stats.to_dict()
                            for sid, stats in sorted(self.per_station.items())},
            "transcript_dir": self.transcript_dir,
            "data_dir": self.data_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class _Vehicle:
    index: int
    station_id: str
    registered: bool
    request: ChargeRequest
    kwh: Decimal


def _build_population(config: SimConfig, store: RegistryStore,
                      rng: random.Random) -> tuple[list[StationRecord], list[_Vehicle]]:
    stations = [
        StationRecord(id=f"station-{k:02d}", name=f"Station {k}",
                      address=f"{k} Grid Avenue")
        for k in range(1, config.n_stations + 1)
    ]
    for station in stations:
        store.add_station(station)

    registered_count = int(Decimal(config.n_vehicles) * config.registered_fraction)
    models = ("Volt S", "Ion X", "Ampere GT", "Coulomb LE")
    vehicles: list[_Vehicle] = []
    for i in range(config.n_vehicles):
        request = ChargeRequest(
            owner_id=f"owner-{i:04d}",
            owner_name=f"Owner {i}",
            owner_email=f"owner{i}@fleet.example",
            owner_phone=f"+1-555-{i:04d}",
            car_id=f"car-{i:04d}",
            car_model_name=models[i % len(models)],
            car_model_year=2015 + (i % 10),
            car_date_purchased=f"20{16 + (i % 9):02d}-0{1 + (i % 9)}-15",
        )
        station = stations[i % config.n_stations]
        registered = i < registered_count
        if registered:
            store.register(
                OwnerRecord(id=request.owner_id, name=request.owner_name,
                            email=request.owner_email, phone=request.owner_phone),
                CarRecord(id=request.car_id, model_name=request.car_model_name,
                          model_year=request.car_model_year,
                          date_purchased=request.car_date_purchased,
                          owner_id=request.owner_id),
                station,
            )
        vehicles.append(_Vehicle(index=i, station_id=station.id, registered=registered,
                                 request=request, kwh=config.kwh.sample(rng)))
    return stations, vehicles


def run_sim(config: SimConfig, *, data_dir: str | Path | None = None,
            transport: str = "tcp") -> FleetReport:
    """Run the whole fleet once and aggregate the analytics report.

    Creates (or reuses) `data_dir` for the registry, ledger and
    transcripts; a temporary directory is used when omitted. With
    transport="memory" sessions skip the sockets but keep identical
    frame, transcript and ledger behavior.
    """
    if transport not in ("tcp", "memory"):
        raise ValueError(f"unknown transport: {transport!r}")
    if data_dir is None:
        data_dir = Path(tempfile.mkdtemp(prefix="fleetsim-"))
    data_dir = Path(data_dir)

    rng = random.Random(config.seed)
    population_rng = random.Random(rng.getrandbits(63))
    station_seed_base = rng.getrandbits(63)

    store = RegistryStore.load(data_dir)
    try:
        stations, vehicles = _build_population(config, store, population_rng)
        if transport == "tcp":
            outcomes = _run_tcp(config, store, stations, vehicles, data_dir, station_seed_base)
        else:
            outcomes = _run_memory(config, store, stations, vehicles, data_dir, station_seed_base)
    finally:
        store.close()

    per_station = {station.id: StationStats() for station in stations}
    for vehicle, outcome, bill_total_amount in outcomes:
        stats = per_station[vehicle.station_id]
        stats.sessions_total += 1
        if outcome.kind is OutcomeKind.COMPLETED:
            stats.sessions_completed += 1
            stats.energy_sold = as_kwh(stats.energy_sold + vehicle.kwh, "energy_sold")
            stats.revenue = as_money(stats.revenue + bill_total_amount, "revenue")
        elif outcome.kind is OutcomeKind.DENIED_UNREGISTERED:
            stats.sessions_denied += 1
        else:
            stats.sessions_error += 1

    totals = StationStats()
    for stats in per_station.values():
        totals.sessions_total += stats.sessions_total
        totals.sessions_completed += stats.sessions_completed
        totals.sessions_denied += stats.sessions_denied
        totals.sessions_error += stats.sessions_error
        totals.energy_sold += stats.energy_sold
        totals.revenue += stats.revenue

    return FleetReport(
        sessions_total=totals.sessions_total,
        sessions_completed=totals.sessions_completed,
        sessions_denied=totals.sessions_denied,
        sessions_error=totals.sessions_error,
        energy_sold=as_kwh(totals.energy_sold, "energy_sold"),
        revenue=as_money(totals.revenue, "revenue"),
        per_station=per_station,
        transcript_dir=str(transcripts_dir(data_dir)),
        data_dir=str(data_dir),
    )


def _run_tcp(config: SimConfig, store: RegistryStore, stations, vehicles,
             data_dir: Path, station_seed_base: int):
    servers: dict[str, StationServer] = {}
    try:
        for offset, station in enumerate(stations):
            station_config = StationConfig(
                station_id=station.id, tariff=config.tariff, data_dir=data_dir,
                archive_dir=data_dir / "archive", bind_address="127.0.0.1", port=0,
                session_timeout=10.0,
            )
            server = StationServer(station_config, store,
                                   seed=station_seed_base + offset)
            try:
                server.start()
            except Exception as exc:
                raise SimSetupError(f"cannot start station {station.id}: {exc}") from exc
            servers[station.id] = server

        def run_one(vehicle: _Vehicle):
            server = servers[vehicle.station_id]
            intent = ChargeIntent(request=vehicle.request,
                                  file_name=f"vehicle-{vehicle.index:04d}.json",
                                  kwh=vehicle.kwh,
                                  station_address="127.0.0.1",
                                  station_port=server.port)
            report = charge(intent, read_timeout=20.0)
            total = report.bill.total if report.bill is not None else Decimal("0.00")
            return vehicle, report.outcome, total

        if config.arrival.mode == "sequential":
            return [run_one(vehicle) for vehicle in vehicles]
        with concurrent.futures.ThreadPoolExecutor(
            max_workers=config.arrival.max_in_flight
        ) as pool:
            return list(pool.map(run_one, vehicles))
    finally:
        for server in servers.values():
            server.stop()


def _run_memory(config: SimConfig, store: RegistryStore, stations, vehicles,
                data_dir: Path, station_seed_base: int):
    counters = {station.id: 0 for station in stations}
    rngs = {station.id: random.Random(station_seed_base + offset)
            for offset, station in enumerate(stations)}
    results = []
    for vehicle in vehicles:
        station_id = vehicle.station_id
        counters[station_id] += 1
        session_id = f"{station_id}-{counters[station_id]:04d}"
        id_seed = rngs[station_id].getrandbits(63)
        intent = ChargeIntent(request=vehicle.request,
                              file_name=f"vehicle-{vehicle.index:04d}.json",
                              kwh=vehicle.kwh)
        auth = StationAuthorizer(store=store, station_id=station_id)
        convo = run_conversation(intent, auth, config.tariff, ids=IdSource(id_seed))

        entries = []
        now = datetime.now(timezone.utc).isoformat()
        for frame in convo.transcript:
            direction = "in" if frame.direction == "client->server" else "out"
            entries.append(TranscriptEntry(
                direction=direction, timestamp=now,
                frame=encode_message(frame.message).decode("utf-8").rstrip("\n")))
        write_transcript(data_dir, Transcript(
            header=TranscriptHeader(session_id=session_id, station_id=station_id,
                                    tariff=config.tariff, id_seed=id_seed),
            entries=entries))
        for draft in convo.drafts:
            store.record_transaction(draft)
        total = Decimal("0.00")
        for frame in convo.transcript:
            if frame.message.TYPE == "bill":
                total = frame.message.total
        results.append((vehicle, convo.client_outcome, total))
    return results


# ---------------------------------------------------------------------------
# Ledger audit


@dataclass
class LedgerCheck:
    """Result of auditing transcripts against the transaction relation."""

    passed: bool
    discrepancies: list[str] = field(default_factory=list)


def verify_ledger(report: FleetReport, store: RegistryStore) -> LedgerCheck:
    """Cross-check every transcript against the recorded transactions.

    Flags: completed transcripts whose receipt id is missing from the
    ledger, ledger rows without a matching transcript, kwh/total/payment
    disagreements, and report totals that do not match the ledger sums.
    """
    discrepancies: list[str] = []
    ledger = {t.id: t for t in store.list_transactions()}
    matched: set[str] = set()

    directory = Path(report.transcript_dir)
    paths = sorted(directory.glob("*.jsonl")) if directory.exists() else []
    for path in paths:
        transcript = read_transcript(path)
        session_id = transcript.header.session_id
        tx_id = transcript.receipt_transaction_id()
        if tx_id is None:
            continue  # session did not complete; nothing to reconcile
        row = ledger.get(tx_id)
        if row is None:
            discrepancies.append(
                f"transcript {session_id}: receipt {tx_id} has no ledger transaction"
            )
            continue
        matched.add(tx_id)
        bill = next((m for m in transcript.outbound() if m.TYPE == "bill"), None)
        payment = next((e.message() for e in transcript.inbound_frames()
                        if e.event is None and e.message().TYPE == "payment"), None)
        if bill is None:
            discrepancies.append(f"transcript {session_id}: completed without a bill frame")
            continue
        if row.kwh != bill.kwh or row.total != bill.total:
            discrepancies.append(
                f"transcript {session_id}: bill {bill.kwh} kWh / {bill.total} "
                f"!= ledger {row.kwh} kWh / {row.total}"
            )
        if payment is None or payment.amount != row.total:
            paid = "no payment" if payment is None else f"payment {payment.amount}"
            discrepancies.append(
                f"transcript {session_id}: {paid} does not settle ledger total {row.total}"
            )

    for tx_id in ledger:
        if tx_id not in matched:
            discrepancies.append(f"ledger transaction {tx_id} has no matching transcript")

    ledger_energy = sum((t.kwh for t in ledger.values()), Decimal("0.000"))
    ledger_revenue = sum((t.total for t in ledger.values()), Decimal("0.00"))
    if as_kwh(ledger_energy, "energy") != report.energy_sold:
        discrepancies.append(
            f"report energy_sold {report.energy_sold} != ledger sum {ledger_energy}"
        )
    if as_money(ledger_revenue, "revenue") != report.revenue:
        discrepancies.append(
            f"report revenue {report.revenue} != ledger sum {ledger_revenue}"
        )

    return LedgerCheck(passed=not discrepancies, discrepancies=discrepancies)
