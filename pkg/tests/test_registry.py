"""Registry tests: constraints, authorization, persistence, oracle parity."""

import random
from datetime import datetime, timezone
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from evcharge.protocol import ChargeRequest, InvariantViolation, TransactionDraft
from evcharge.registry import (
    CarRecord,
    CorruptLog,
    DuplicateRegistration,
    ForeignKeyViolation,
    KeyConstraintViolation,
    OwnerRecord,
    RegistryStore,
    StationAuthorizer,
    StationRecord,
)

from reference_store import ReferenceStore, random_submission, run_sequence


def draft_for(store, tx_id="t-1", kwh="10", rate="0.10", total="1.00"):
    return TransactionDraft(transaction_id=tx_id, station_id="s1", car_id="c1",
                            owner_id="o1", kwh=Decimal(kwh),
                            price_per_kwh=Decimal(rate), total=Decimal(total))


class TestRegister:
    def test_fresh_registration_adds_four_tuples(self, store, owner, car, station_record):
        registration = store.register(owner, car, station_record)
        assert store.cardinalities() == (1, 1, 1, 1)
        assert registration.triple() == ("s1", "c1", "o1")

    def test_repeat_is_duplicate_and_adds_nothing(self, registered_store, owner, car,
                                                  station_record):
        with pytest.raises(DuplicateRegistration):
            registered_store.register(owner, car, station_record)
        assert registered_store.cardinalities() == (1, 1, 1, 1)

    def test_same_car_id_different_attributes_is_key_violation(self, registered_store,
                                                               owner, station_record):
        changed = CarRecord(id="c1", model_name="Volt S", model_year=2022,
                            date_purchased="2021-03-04", owner_id="o1")
        before = registered_store.relations()
        with pytest.raises(KeyConstraintViolation) as exc:
            registered_store.register(owner, changed, station_record)
        assert exc.value.relation == "car" and exc.value.key == "c1"
        assert registered_store.relations() == before

    def test_owner_mismatch_is_foreign_key_violation(self, store, owner, station_record):
        stray = CarRecord(id="c9", model_name="Ion X", model_year=2020,
                          date_purchased="2020-05-06", owner_id="someone-else")
        with pytest.raises(ForeignKeyViolation):
            store.register(owner, stray, station_record)
        assert store.cardinalities() == (0, 0, 0, 0)

    def test_second_car_for_same_owner_adds_two_tuples(self, registered_store, owner,
                                                       station_record):
        # Oracle first: replay the same two calls through the reference store.
        reference = ReferenceStore()
        owner_d = {"id": "o1", "name": owner.name, "email": owner.email,
                   "phone": owner.phone}
        car1_d = {"id": "c1", "model_name": "Volt S", "model_year": 2021,
                  "date_purchased": "2021-03-04", "owner_id": "o1"}
        car2_d = {"id": "c2", "model_name": "Ion X", "model_year": 2019,
                  "date_purchased": "2019-07-01", "owner_id": "o1"}
        station_d = {"id": "s1", "name": station_record.name,
                     "address": station_record.address}
        assert reference.register(owner_d, car1_d, station_d) == "ok"
        counts_before = reference.counts()
        assert reference.register(owner_d, car2_d, station_d) == "ok"
        expected_delta = tuple(a - b for a, b in zip(reference.counts(), counts_before))
        assert expected_delta == (0, 1, 0, 1)  # frozen oracle value

        second_car = CarRecord(**car2_d)
        before = registered_store.cardinalities()
        registered_store.register(owner, second_car, station_record)
        after = registered_store.cardinalities()
        assert tuple(a - b for a, b in zip(after, before)) == expected_delta

    def test_same_car_at_two_stations(self, registered_store, owner, car):
        other = StationRecord(id="s2", name="South", address="2 Grid Ave")
        registered_store.register(owner, car, other)
        assert len(registered_store.list_registrations()) == 2

    def test_attribute_comparison_is_normalized(self, registered_store, station_record, car):
        # Same owner spelled with spare whitespace and a different email case.
        respelled = OwnerRecord(id="o1", name=" Ada Lovelace ",
                                email="ADA@Example.COM", phone="+1-555-0001")
        car2 = CarRecord(id="c2", model_name="Ion X", model_year=2019,
                         date_purchased="2019-07-01", owner_id="o1")
        registered_store.register(respelled, car2, station_record)
        assert len(registered_store.list_owners()) == 1


class TestAuthorize:
    def test_registered_matching_details_granted(self, registered_store, request_doc):
        assert registered_store.authorize("s1", request_doc).granted

    def test_unknown_car_not_registered(self, registered_store, request_doc):
        unknown = ChargeRequest("o1", "Ada Lovelace", "ada@example.com", "+1-555-0001",
                                "c999", "Volt S", 2021, "2021-03-04")
        decision = registered_store.authorize("s1", unknown)
        assert not decision.granted and decision.reason == "not-registered"

    def test_model_year_off_by_one_is_detail_mismatch(self, registered_store, request_doc):
        tweaked = ChargeRequest("o1", "Ada Lovelace", "ada@example.com", "+1-555-0001",
                                "c1", "Volt S", 2022, "2021-03-04")
        decision = registered_store.authorize("s1", tweaked)
        assert not decision.granted and decision.reason == "detail-mismatch"

    def test_wrong_station_not_registered(self, registered_store, request_doc):
        decision = registered_store.authorize("s2", request_doc)
        assert not decision.granted and decision.reason == "not-registered"

    def test_authorize_is_read_only(self, registered_store, request_doc):
        before = registered_store.relations()
        registered_store.authorize("s1", request_doc)
        registered_store.authorize("s1", ChargeRequest(
            "o1", "X", "x@example.com", "1", "c1", "Volt S", 2021, "2021-03-04"))
        assert registered_store.relations() == before

    def test_station_authorizer_delegates(self, registered_store, request_doc):
        auth = StationAuthorizer(store=registered_store, station_id="s1")
        assert auth.authorize(request_doc).granted


class TestRecordTransaction:
    def test_passthrough_of_valid_draft(self, registered_store):
        record = registered_store.record_transaction(draft_for(registered_store))
        assert record.total == Decimal("1.00")
        assert record.timestamp.tzinfo is timezone.utc
        assert registered_store.list_transactions() == [record]

    def test_inconsistent_total_rejected(self, registered_store):
        with pytest.raises(InvariantViolation):
            registered_store.record_transaction(
                draft_for(registered_store, total="2.00"))
        assert registered_store.list_transactions() == []

    def test_two_drafts_two_distinct_ids(self, registered_store):
        first = registered_store.record_transaction(draft_for(registered_store, tx_id="t-1"))
        second = registered_store.record_transaction(draft_for(registered_store, tx_id="t-2"))
        assert first.id != second.id

    def test_duplicate_id_rejected(self, registered_store):
        registered_store.record_transaction(draft_for(registered_store, tx_id="t-1"))
        with pytest.raises(KeyConstraintViolation):
            registered_store.record_transaction(draft_for(registered_store, tx_id="t-1"))

    def test_unregistered_triple_rejected(self, registered_store):
        orphan = TransactionDraft(transaction_id="t-9", station_id="s1", car_id="c9",
                                  owner_id="o1", kwh=Decimal("1"),
                                  price_per_kwh=Decimal("0.10"), total=Decimal("0.10"))
        with pytest.raises(ForeignKeyViolation):
            registered_store.record_transaction(orphan)


class TestQueries:
    def test_cars_by_owner_in_insertion_order(self, registered_store, owner, station_record):
        car2 = CarRecord(id="c2", model_name="Ion X", model_year=2019,
                         date_purchased="2019-07-01", owner_id="o1")
        registered_store.register(owner, car2, station_record)
        assert [c.id for c in registered_store.list_cars("o1")] == ["c1", "c2"]

    def test_unknown_filters_return_empty(self, registered_store):
        assert registered_store.list_cars("nobody") == []
        assert registered_store.list_registrations("nowhere") == []
        assert registered_store.list_transactions("nowhere") == []

    def test_registrations_by_station(self, registered_store, owner, station_record):
        car2 = CarRecord(id="c2", model_name="Ion X", model_year=2019,
                         date_purchased="2019-07-01", owner_id="o1")
        registered_store.register(owner, car2, station_record)
        assert len(registered_store.list_registrations("s1")) == 2

    def test_transactions_since(self, registered_store):
        record = registered_store.record_transaction(draft_for(registered_store))
        assert registered_store.list_transactions(since=record.timestamp) == [record]
        later = datetime.now(timezone.utc)
        assert registered_store.list_transactions(since=later) == []


class TestPersistence:
    def test_empty_directory_empty_store(self, tmp_path):
        with RegistryStore.load(tmp_path / "fresh") as store:
            assert store.cardinalities() == (0, 0, 0, 0)

    def test_reload_reproduces_relations(self, tmp_path, owner, car, station_record):
        path = tmp_path / "data"
        with RegistryStore.load(path) as store:
            store.register(owner, car, station_record)
            store.record_transaction(TransactionDraft(
                transaction_id="t-1", station_id="s1", car_id="c1", owner_id="o1",
                kwh=Decimal("5"), price_per_kwh=Decimal("0.10"), total=Decimal("0.50")))
            live = store.relations()
        with RegistryStore.load(path) as reloaded:
            assert reloaded.relations() == live

    def test_malformed_line_reports_its_number(self, tmp_path, owner, car, station_record):
        path = tmp_path / "data"
        with RegistryStore.load(path) as store:
            store.register(owner, car, station_record)
        log = path / "events.jsonl"
        lines = log.read_text().splitlines()
        lines[2] = "{broken"
        log.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorruptLog) as exc:
            RegistryStore.load(path)
        assert exc.value.line_number == 3

    def test_replayed_invariant_violation_is_corrupt(self, tmp_path, owner, car,
                                                     station_record):
        path = tmp_path / "data"
        with RegistryStore.load(path) as store:
            store.register(owner, car, station_record)
        log = path / "events.jsonl"
        first = log.read_text().splitlines()[0]
        with open(log, "a") as handle:
            handle.write(first + "\n")  # duplicate owner insert
        with pytest.raises(CorruptLog) as exc:
            RegistryStore.load(path)
        assert exc.value.line_number == 5

    def test_in_memory_store_has_no_files(self, tmp_path):
        store = RegistryStore()
        store.add_station(StationRecord(id="s1", name="N", address="A"))
        assert list(tmp_path.iterdir()) == []


class TestOracleParity:
    @given(st.lists(st.integers(min_value=0, max_value=2**32 - 1),
                    min_size=1, max_size=12))
    @settings(max_examples=150, deadline=None)
    def test_random_sequences_match_reference(self, seeds):
        rng = random.Random(hash(tuple(seeds)) & 0xFFFFFFFF)
        submissions = [random_submission(rng) for _ in seeds]
        run_sequence(RegistryStore(), submissions)

    def test_seeded_bulk_sequences(self):
        for seed in range(200):
            rng = random.Random(seed)
            submissions = [random_submission(rng) for _ in range(rng.randint(1, 10))]
            run_sequence(RegistryStore(), submissions)
