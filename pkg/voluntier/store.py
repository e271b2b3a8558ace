"""Append-only event log plus content-addressed payload and blob tables.

The server never updates rows: every change to a work unit, result, host,
sweep or ledger entry is appended as a snapshot of the record, and state is
rebuilt on start by replaying the log in order.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional

from pydantic import BaseModel
from sqlalchemy import Column, Integer, LargeBinary, String, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from voluntier.encoding import canonical_json
from voluntier.proto import frame, read_document

Base = declarative_base()


class EventModel(Base):
    __tablename__ = "events"

    seq = Column(Integer, primary_key=True, autoincrement=True)
    kind = Column(String(32), index=True)
    key = Column(String(200), index=True)
    body = Column(LargeBinary)


class PayloadModel(Base):
    __tablename__ = "payloads"

    digest = Column(String(64), primary_key=True)
    body = Column(LargeBinary)


class BlobModel(Base):
    __tablename__ = "blobs"

    digest = Column(String(64), primary_key=True)
    data = Column(LargeBinary)


@dataclass(frozen=True)
class StoredEvent:
    seq: int
    kind: str
    key: str
    record: Dict[str, Any]


def encode_event(kind: str, record: BaseModel) -> bytes:
    return frame(canonical_json({"kind": kind, "record": record.model_dump(mode="json")}))


def decode_event(seq: int, key: str, body: bytes) -> StoredEvent:
    document = read_document(body)
    return StoredEvent(seq=seq, kind=document["kind"], key=key, record=document["record"])


class EventStore(ABC):
    """Append-only record log with content-addressed payloads and blobs."""

    @abstractmethod
    def append(self, kind: str, key: str, record: BaseModel) -> int:
        raise NotImplementedError

    @abstractmethod
    def replay(self, after: int = 0) -> Iterator[StoredEvent]:
        raise NotImplementedError

    @abstractmethod
    def put_payload(self, digest: str, body: bytes) -> None:
        raise NotImplementedError

    @abstractmethod
    def get_payload(self, digest: str) -> Optional[bytes]:
        raise NotImplementedError

    @abstractmethod
    def put_blob(self, digest: str, data: bytes) -> None:
        raise NotImplementedError

    @abstractmethod
    def get_blob(self, digest: str) -> Optional[bytes]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class SqlEventStore(EventStore):
    def __init__(self, database_url: str):
        connect_args = {"check_same_thread": False, "timeout": 30} if database_url.startswith("sqlite") else {}
        self.engine = create_engine(database_url, connect_args=connect_args)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)
        Base.metadata.create_all(bind=self.engine)

    def append(self, kind: str, key: str, record: BaseModel) -> int:
        db = self.SessionLocal()
        try:
            row = EventModel(kind=kind, key=key, body=encode_event(kind, record))
            db.add(row)
            db.commit()
            db.refresh(row)
            return row.seq
        finally:
            db.close()

    def replay(self, after: int = 0) -> Iterator[StoredEvent]:
        db = self.SessionLocal()
        try:
            rows = db.query(EventModel).filter(EventModel.seq > after).order_by(EventModel.seq).all()
            events = [decode_event(row.seq, row.key, row.body) for row in rows]
        finally:
            db.close()
        return iter(events)

    def put_payload(self, digest: str, body: bytes) -> None:
        db = self.SessionLocal()
        try:
            db.merge(PayloadModel(digest=digest, body=body))
            db.commit()
        finally:
            db.close()

    def get_payload(self, digest: str) -> Optional[bytes]:
        db = self.SessionLocal()
        try:
            row = db.query(PayloadModel).filter(PayloadModel.digest == digest).first()
            return row.body if row else None
        finally:
            db.close()

    def put_blob(self, digest: str, data: bytes) -> None:
        db = self.SessionLocal()
        try:
            db.merge(BlobModel(digest=digest, data=data))
            db.commit()
        finally:
            db.close()

    def get_blob(self, digest: str) -> Optional[bytes]:
        db = self.SessionLocal()
        try:
            row = db.query(BlobModel).filter(BlobModel.digest == digest).first()
            return row.data if row else None
        finally:
            db.close()

    def close(self) -> None:
        self.engine.dispose()


class MemoryEventStore(EventStore):
    """In-process store; with ``retain=False`` events are numbered but neither events nor blobs are kept."""

    def __init__(self, retain: bool = True):
        self.retain = retain
        self.events: List[StoredEvent] = []
        self.payloads: Dict[str, bytes] = {}
        self.blobs: Dict[str, bytes] = {}
        self._seq = 0

    def append(self, kind: str, key: str, record: BaseModel) -> int:
        self._seq += 1
        if self.retain:
            self.events.append(decode_event(self._seq, key, encode_event(kind, record)))
        return self._seq

    def replay(self, after: int = 0) -> Iterator[StoredEvent]:
        return iter([event for event in self.events if event.seq > after])

    def put_payload(self, digest: str, body: bytes) -> None:
        self.payloads[digest] = body

    def get_payload(self, digest: str) -> Optional[bytes]:
        return self.payloads.get(digest)

    def put_blob(self, digest: str, data: bytes) -> None:
        if self.retain:
            self.blobs[digest] = data

    def get_blob(self, digest: str) -> Optional[bytes]:
        return self.blobs.get(digest)
