import sys
from decimal import Decimal

import pytest

from evcharge.protocol import ChargeRequest
from evcharge.registry import CarRecord, OwnerRecord, RegistryStore, StationRecord


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Print one PASS/FAIL line per acceptance criterion."""
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "test_acceptance" not in item.nodeid:
        return
    doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
    status = "PASS" if report.passed else "FAIL"
    sys.stdout.write(f"\n[{status}] {doc}\n")


@pytest.fixture
def request_doc() -> ChargeRequest:
    return ChargeRequest(
        owner_id="o1",
        owner_name="Ada Lovelace",
        owner_email="ada@example.com",
        owner_phone="+1-555-0001",
        car_id="c1",
        car_model_name="Volt S",
        car_model_year=2021,
        car_date_purchased="2021-03-04",
    )


@pytest.fixture
def owner() -> OwnerRecord:
    return OwnerRecord(id="o1", name="Ada Lovelace", email="ada@example.com",
                       phone="+1-555-0001")


@pytest.fixture
def car() -> CarRecord:
    return CarRecord(id="c1", model_name="Volt S", model_year=2021,
                     date_purchased="2021-03-04", owner_id="o1")


@pytest.fixture
def station_record() -> StationRecord:
    return StationRecord(id="s1", name="Main Street", address="1 Main St")


@pytest.fixture
def store(tmp_path) -> RegistryStore:
    reg = RegistryStore.load(tmp_path / "data")
    yield reg
    reg.close()


@pytest.fixture
def registered_store(store, owner, car, station_record) -> RegistryStore:
    store.register(owner, car, station_record)
    return store


TARIFF = Decimal("0.10")
