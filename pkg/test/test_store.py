import pytest

from voluntier.proto import HostRecord, sha256_hex
from voluntier.store import EventStore, MemoryEventStore, SqlEventStore


def host(host_id, t=0.0):
    return HostRecord(host_id=host_id, platform="linux-x86_64", ncpus=1, benchmark_flops=1e9,
                      first_contact=0.0, last_contact=t)


@pytest.fixture(params=["sql", "memory"])
def event_store(request, tmp_path):
    """Both store implementations behind the same interface."""
    if request.param == "sql":
        store = SqlEventStore(f"sqlite:///{tmp_path / 'project.db'}")
        yield store
        store.close()
    else:
        yield MemoryEventStore()


class TestEventLog:
    def test_sequence_numbers_increase(self, event_store):
        seqs = [event_store.append("host", f"host-{i}", host(f"host-{i}")) for i in range(3)]
        assert seqs == sorted(seqs)
        assert len(set(seqs)) == 3

    def test_replay_in_append_order(self, event_store):
        event_store.append("host", "host-a", host("host-a", 1.0))
        event_store.append("host", "host-a", host("host-a", 2.0))
        events = list(event_store.replay())
        assert [event.record["last_contact"] for event in events] == [1.0, 2.0]
        assert all(event.kind == "host" and event.key == "host-a" for event in events)
        assert HostRecord.model_validate(events[-1].record) == host("host-a", 2.0)

    def test_replay_after(self, event_store):
        first = event_store.append("host", "a", host("a"))
        event_store.append("host", "b", host("b"))
        assert [event.key for event in event_store.replay(after=first)] == ["b"]

    def test_payloads_and_blobs(self, event_store):
        data = b"population_size=10\n"
        event_store.put_payload(sha256_hex(data), data)
        event_store.put_payload(sha256_hex(data), data)
        event_store.put_blob("out", b"result")
        assert event_store.get_payload(sha256_hex(data)) == data
        assert event_store.get_blob("out") == b"result"
        assert event_store.get_payload("missing") is None
        assert event_store.get_blob("missing") is None


class TestPersistence:
    def test_reopened_database_replays(self, tmp_path):
        url = f"sqlite:///{tmp_path / 'project.db'}"
        store = SqlEventStore(url)
        store.append("host", "a", host("a", 5.0))
        store.put_blob("digest", b"bytes")
        store.close()
        reopened = SqlEventStore(url)
        (event,) = list(reopened.replay())
        assert event.record["host_id"] == "a"
        assert reopened.get_blob("digest") == b"bytes"
        reopened.close()


class TestNonRetainingStore:
    def test_numbers_but_keeps_nothing(self):
        store = MemoryEventStore(retain=False)
        assert store.append("host", "a", host("a")) == 1
        assert store.append("host", "b", host("b")) == 2
        store.put_blob("out", b"result")
        assert list(store.replay()) == []
        assert store.get_blob("out") is None

    def test_payloads_still_kept(self):
        store = MemoryEventStore(retain=False)
        store.put_payload("p", b"params")
        assert store.get_payload("p") == b"params"


class TestInterface:
    def test_base_cannot_be_instantiated(self):
        with pytest.raises(TypeError):
            EventStore()

    def test_incomplete_store_rejected(self):
        class AppendOnly(EventStore):
            def append(self, kind, key, record):
                return 1

        with pytest.raises(TypeError):
            AppendOnly()
