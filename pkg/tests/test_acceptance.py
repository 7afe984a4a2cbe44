"""Acceptance criteria, one test per criterion, run at desk scale.

Each test prints a PASS/FAIL line (see conftest). Timing bounds are
asserted with time.monotonic around the scenario under test.
"""

import json
import random
import socket
import time
from decimal import Decimal
from pathlib import Path

import pytest

from evcharge import protocol as p
from evcharge.fleetsim import KwhDistribution, SimConfig, run_sim, verify_ledger
from evcharge.ids import IdSource
from evcharge.netio import recv_line
from evcharge.registry import (
    CarRecord,
    DuplicateRegistration,
    OwnerRecord,
    RegistryStore,
    StationRecord,
)
from evcharge.station import StationConfig, StationServer, read_transcript
from evcharge.vehicle import ChargeIntent, charge

from reference_store import random_submission, run_sequence

TARIFF = Decimal("0.10")

OWNER = OwnerRecord(id="o1", name="Ada Lovelace", email="ada@example.com",
                    phone="+1-555-0001")
CAR = CarRecord(id="c1", model_name="Volt S", model_year=2021,
                date_purchased="2021-03-04", owner_id="o1")
STATION = StationRecord(id="s1", name="Main Street", address="1 Main St")
REQUEST = p.ChargeRequest(owner_id="o1", owner_name="Ada Lovelace",
                          owner_email="ada@example.com", owner_phone="+1-555-0001",
                          car_id="c1", car_model_name="Volt S", car_model_year=2021,
                          car_date_purchased="2021-03-04")

# Data directories whose relation contents must survive a reload; the
# persistence criterion at the end replays every one of them.
_REPLAY_DIRS: list[tuple[Path, dict]] = []


def _station(store, data_dir, **overrides):
    config = StationConfig(station_id="s1", tariff=TARIFF, data_dir=data_dir,
                           archive_dir=data_dir / "archive", port=0,
                           session_timeout=2.0, **overrides)
    server = StationServer(config, store, seed=99)
    server.start()
    return server


def _intent(request, port, kwh):
    return ChargeIntent(request=request, file_name="test.json", kwh=Decimal(kwh),
                        station_address="127.0.0.1", station_port=port)


def test_end_to_end_happy_path(tmp_path):
    """End-to-end happy path: 10 kWh at 0.10 settles for exactly 1.00."""
    started = time.monotonic()
    data_dir = tmp_path / "data"
    with RegistryStore.load(data_dir) as store:
        store.register(OWNER, CAR, STATION)
        server = _station(store, data_dir)
        try:
            report = charge(_intent(REQUEST, server.port, "10"))
        finally:
            server.stop()
        assert report.outcome.kind is p.OutcomeKind.COMPLETED
        transactions = store.list_transactions()
        assert len(transactions) == 1
        assert transactions[0].total == Decimal("1.00")
        assert report.bill.total == Decimal("1.00")
        assert report.receipt_transaction_id == transactions[0].id
        _REPLAY_DIRS.append((data_dir, store.relations()))
    assert time.monotonic() - started < 2.0


def test_denial_path_on_the_wire(tmp_path):
    """Denial path: AuthDenied then Close on the wire, then a clean session."""
    started = time.monotonic()
    data_dir = tmp_path / "data"
    with RegistryStore.load(data_dir) as store:
        store.register(OWNER, CAR, STATION)
        server = _station(store, data_dir)
        try:
            stranger = p.ChargeRequest("o9", "Eve", "eve@example.com", "1", "c9",
                                       "Zip", 2020, "2020-01-01")
            with socket.create_connection(("127.0.0.1", server.port), timeout=2) as sock:
                sock.settimeout(2)
                sock.sendall(p.encode_message(p.FileName(name="test.json")))
                sock.sendall(p.encode_message(p.FileContent(request=stranger)))
                buf = bytearray()
                frames = []
                while True:
                    line = recv_line(sock, buf)
                    if line is None:
                        break
                    frames.append(p.decode_message(line))
            assert [m.TYPE for m in frames] == ["auth_denied", "close"]
            assert store.list_transactions() == []

            follow_up = charge(_intent(REQUEST, server.port, "5"))
            assert follow_up.outcome.kind is p.OutcomeKind.COMPLETED
            assert len(store.list_transactions()) == 1
        finally:
            server.stop()
    assert time.monotonic() - started < 2.0


def test_detail_mismatch_authorization(tmp_path):
    """Detail mismatch: one altered car attribute denies, restoring grants."""
    with RegistryStore.load(tmp_path / "data") as store:
        store.register(OWNER, CAR, STATION)
        altered = p.ChargeRequest("o1", "Ada Lovelace", "ada@example.com",
                                  "+1-555-0001", "c1", "Volt S", 2022, "2021-03-04")
        decision = store.authorize("s1", altered)
        assert not decision.granted and decision.reason == "detail-mismatch"
        assert store.authorize("s1", REQUEST).granted


def test_registration_constraint_properties():
    """Registration constraints hold over 1000 random sequences vs the oracle."""
    started = time.monotonic()
    for seed in range(1000):
        rng = random.Random(seed)
        submissions = [random_submission(rng) for _ in range(rng.randint(1, 8))]
        run_sequence(RegistryStore(), submissions)
    assert time.monotonic() - started < 30.0


def test_four_tuple_registration(tmp_path):
    """Four-tuple registration: fresh adds (1,1,1,1), duplicate adds nothing."""
    with RegistryStore.load(tmp_path / "data") as store:
        before = store.cardinalities()
        store.register(OWNER, CAR, STATION)
        after = store.cardinalities()
        assert tuple(a - b for a, b in zip(after, before)) == (1, 1, 1, 1)
        with pytest.raises(DuplicateRegistration):
            store.register(OWNER, CAR, STATION)
        assert store.cardinalities() == after


def _random_message(rng: random.Random) -> p.ProtocolMessage:
    def ident():
        return "".join(rng.choice("abcdefghjkmnpqrstuvwxyz0123456789-")
                       for _ in range(rng.randint(1, 12)))

    def text():
        return "".join(rng.choice("abc é☂xyz._-") for _ in range(rng.randint(0, 16)))

    def kwh():
        return Decimal(rng.randint(0, 2_000_000)).scaleb(-3)

    def money():
        return Decimal(rng.randint(0, 10**7)).scaleb(-2)

    kind = rng.randrange(10)
    if kind == 0:
        return p.FileName(name=text())
    if kind == 1:
        return p.FileContent(request=p.ChargeRequest(
            owner_id=ident(), owner_name=text(), owner_email=text(),
            owner_phone=text(), car_id=ident(), car_model_name=text(),
            car_model_year=rng.randint(1900, 2200),
            car_date_purchased=f"{rng.randint(1980, 2030)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"))
    if kind == 2:
        return p.AuthOk(station_id=ident())
    if kind == 3:
        return p.AuthDenied(reason=text())
    if kind == 4:
        return p.AmountRequest()
    if kind == 5:
        return p.Amount(kwh=kwh())
    if kind == 6:
        return p.build_bill(kwh(), money(), bill_id=ident())
    if kind == 7:
        return p.Payment(bill_id=ident(), amount=money())
    if kind == 8:
        return p.Receipt(transaction_id=ident(), bill_id=ident())
    return p.Close(reason=text())


def test_codec_and_fsm_properties(request_doc):
    """Codec round trip over 10000 messages, FSM totality, six-step order."""
    rng = random.Random(20260809)
    for _ in range(10000):
        msg = _random_message(rng)
        line = p.encode_message(msg)
        assert line.count(b"\x0a") == 1 and line.endswith(b"\x0a")
        assert p.decode_message(line) == msg

    bill = p.build_bill(Decimal("5"), TARIFF, "b1")
    intent = ChargeIntent(request=request_doc, file_name="t.json", kwh=Decimal("5"))
    auth = p.StaticAuth(station_id="s1", decision=p.AuthDecision(True))
    samples = [
        p.FileName(name="t.json"), p.FileContent(request=request_doc),
        p.AuthOk(station_id="s1"), p.AuthDenied(reason="not-registered"),
        p.AmountRequest(), p.Amount(kwh=Decimal("5")), bill,
        p.Payment(bill_id="b1", amount=bill.total),
        p.Receipt(transaction_id="t1", bill_id="b1"), p.Close(reason="completed"),
    ]
    server_states = [p.AwaitFileName(), p.AwaitFileContent(),
                     p.AwaitAmount(request=request_doc),
                     p.AwaitPayment(request=request_doc, bill=bill),
                     p.Closed(p.SessionOutcome.payment_mismatch())]
    for state in server_states:
        for msg in samples:
            new_state, out, _ = p.server_step(state, msg, auth, TARIFF)
            if isinstance(state, p.Closed):
                assert new_state is state and out == []
    client_states = [p.SendFileName(), p.SendFileContent(), p.AwaitAuth(),
                     p.AwaitAmountRequest(), p.AwaitBill(), p.SendPayment(bill=bill),
                     p.AwaitReceipt(), p.Done(p.SessionOutcome.payment_mismatch())]
    for state in client_states:
        for msg in samples + [None]:
            new_state, out = p.client_step(state, msg, intent)
            if isinstance(state, p.Done):
                assert new_state is state and out == []

    result = p.run_conversation(intent, auth, TARIFF, ids=IdSource(1))
    assert [f.message.TYPE for f in result.transcript] == [
        "file_name", "file_content", "auth_ok", "amount_request",
        "amount", "bill", "payment", "receipt", "close",
    ]
    assert result.client_outcome.kind is p.OutcomeKind.COMPLETED
    assert result.server_outcome.kind is p.OutcomeKind.COMPLETED


FLEET_CONFIG = SimConfig(seed=42, n_stations=4, n_vehicles=100,
                         registered_fraction=Decimal("0.8"),
                         kwh=KwhDistribution(kind="fixed", value=Decimal("5")),
                         tariff=TARIFF)


def test_fleet_conservation(tmp_path):
    """Fleet conservation: 100 vehicles, 80% registered, 5 kWh at 0.10."""
    started = time.monotonic()
    first = run_sim(FLEET_CONFIG, data_dir=tmp_path / "run-a")
    second = run_sim(FLEET_CONFIG, data_dir=tmp_path / "run-b")

    assert first.sessions_completed == 80
    assert first.sessions_denied == 20
    assert first.sessions_error == 0
    assert first.energy_sold == Decimal("400.000")
    assert first.revenue == Decimal("40.00")

    def normalized_bytes(report):
        obj = report.to_dict()
        obj["transcript_dir"] = obj["data_dir"] = "<dir>"
        return json.dumps(obj, sort_keys=True).encode("utf-8")

    assert normalized_bytes(first) == normalized_bytes(second)

    with RegistryStore.load(first.data_dir) as store:
        _REPLAY_DIRS.append((Path(first.data_dir), store.relations()))
    assert time.monotonic() - started < 60.0


def test_ledger_audit(tmp_path):
    """Ledger audit: untampered passes; deletion and mutation are named."""
    config = SimConfig(seed=7, n_stations=2, n_vehicles=12,
                       registered_fraction=Decimal("0.75"),
                       kwh=KwhDistribution(kind="fixed", value=Decimal("5")),
                       tariff=TARIFF)
    report = run_sim(config, data_dir=tmp_path / "run")
    with RegistryStore.load(report.data_dir) as store:
        clean = verify_ledger(report, store)
    assert clean.passed and clean.discrepancies == []

    # Tamper 1: delete one settled transaction from the event log.
    log = Path(report.data_dir) / "events.jsonl"
    lines = log.read_text().splitlines()
    tx_lines = [line for line in lines if '"event_type":"transaction_recorded"' in line]
    lines.remove(tx_lines[0])
    log.write_text("\n".join(lines) + "\n")
    with RegistryStore.load(report.data_dir) as store:
        deleted = verify_ledger(report, store)
    assert not deleted.passed
    assert any("no ledger transaction" in d for d in deleted.discrepancies)
    log.write_text("\n".join(lines + [tx_lines[0]]) + "\n")

    # Tamper 2: alter one transcript's payment amount on disk.
    target = next(path for path in sorted(Path(report.transcript_dir).glob("*.jsonl"))
                  if read_transcript(path).completed())
    text = target.read_text()
    assert '\\"amount\\":0.50' in text
    target.write_text(text.replace('\\"amount\\":0.50', '\\"amount\\":0.05', 1))
    with RegistryStore.load(report.data_dir) as store:
        mutated = verify_ledger(report, store)
    assert not mutated.passed
    assert any("does not settle" in d for d in mutated.discrepancies)


def test_persistence_replay():
    """Persistence replay: every acceptance data dir reloads byte-for-byte."""
    assert _REPLAY_DIRS, "earlier criteria must register their data dirs"
    for data_dir, snapshot in _REPLAY_DIRS:
        with RegistryStore.load(data_dir) as reloaded:
            assert reloaded.relations() == snapshot, f"replay diverged under {data_dir}"
