"""Project server: work generation, scheduling, heartbeats, the transitioner,
quorum validation and assimilation, plus the HTTP endpoint that carries the
framed protocol.

All mutable state lives in one ProjectServer and every public operation
holds its lock, so the history of each work unit is linearizable and
``transition()`` is atomic with respect to request handling.
"""
import asyncio
import heapq
import threading
from collections import Counter, OrderedDict, defaultdict
from contextlib import asynccontextmanager, suppress
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Set, Tuple

from common_utils.logger.client import LoggerClient
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import Response
from pydantic import BaseModel

from voluntier.clock import SystemClock
from voluntier.config import ServerSettings
from voluntier.encoding import canonical_json
from voluntier.errors import ConfigurationError, ProtocolError, SweepRejectedError
from voluntier.gp.engine import read_artifact
from voluntier.metrics import HostLog, HostLogEntry
from voluntier.proto import (
    LIVE_RESULT_STATES,
    AppKind,
    AssignWork,
    AssimilationEntry,
    ErrorReply,
    Heartbeat,
    HeartbeatAck,
    HostRecord,
    NoWork,
    Outcome,
    Register,
    RegisterAck,
    RequestWork,
    ResultRecord,
    ResultState,
    SignedPayload,
    SubmitAck,
    SubmitResult,
    SweepRecord,
    SweepSpec,
    WorkUnit,
    WuState,
    decode,
    encode,
    expand_sweep_with_payloads,
    load_private_key,
    sha256_hex,
    sign,
)
from voluntier.store import EventStore, SqlEventStore

logger = LoggerClient("voluntier-server")

FRAME_MEDIA_TYPE = "application/octet-stream"


class Verdict(str, Enum):
    CANONICAL = "canonical"
    NEEDS_MORE = "needs_more"
    FAILED = "failed"


@dataclass(frozen=True)
class ValidationOutcome:
    verdict: Verdict
    canonical: Optional[ResultRecord] = None


@dataclass(frozen=True)
class StateChange:
    record: str
    key: str
    old: str
    new: str


@dataclass
class SweepAggregate:
    runs: int = 0
    perfect: int = 0
    total_cpu_time: float = 0.0

    @property
    def mean_cpu_time(self) -> Optional[float]:
        return self.total_cpu_time / self.runs if self.runs else None

    @property
    def mean_time_to_perfect(self) -> Optional[float]:
        return self.total_cpu_time / self.perfect if self.perfect else None

    def add(self, entry: AssimilationEntry) -> None:
        self.runs += 1
        self.total_cpu_time += entry.cpu_time
        if entry.perfect:
            self.perfect += 1


class SweepStatus(BaseModel):
    name: str
    total: int
    states: Dict[str, int]
    outcomes: Dict[str, int]
    work_units: List[WorkUnit]
    runs: int = 0
    perfect: int = 0
    mean_cpu_time: Optional[float] = None
    mean_time_to_perfect: Optional[float] = None


Assimilator = Callable[[WorkUnit, bytes], Dict[str, object]]


def gp_assimilator(work_unit: WorkUnit, output: bytes) -> Dict[str, object]:
    """Fitness fields of a GP result document; wrapped outputs that are not one stay opaque."""
    try:
        best = read_artifact(output)["best"]
    except (ValueError, KeyError, TypeError):
        if work_unit.app is AppKind.WRAPPED:
            return {}
        raise
    return {
        "hits": best["hits"],
        "raw": float(best["raw"]),
        "adjusted": float(best["adjusted"]),
        "total_cases": best["total_cases"],
        "perfect": best["hits"] == best["total_cases"],
    }


def _distinct_hosts(results: List[ResultRecord]) -> int:
    return len({r.host_id for r in results})


class ProjectServer:
    def __init__(self, settings: ServerSettings, store: EventStore, private_key: Ed25519PrivateKey,
                 clock: Callable[[], float] = None, assimilator: Assimilator = gp_assimilator):
        self.settings = settings
        self.store = store
        self.private_key = private_key
        self.clock = clock or SystemClock()
        self.assimilator = assimilator
        self._lock = threading.RLock()

        self.hosts: Dict[str, HostRecord] = {}
        self.work_units: Dict[str, WorkUnit] = {}
        self.results: Dict[str, ResultRecord] = {}
        self.results_by_wu: Dict[str, List[str]] = defaultdict(list)
        self.sweeps: Dict[str, SweepRecord] = {}
        self.ledger: List[AssimilationEntry] = []
        self.aggregates: Dict[str, SweepAggregate] = defaultdict(SweepAggregate)

        self._queue: List[Tuple[int, str]] = []
        self._queued: Set[str] = set()
        self._in_flight: Set[str] = set()
        self._pending_validation: Set[str] = set()
        self._by_contact: "OrderedDict[str, None]" = OrderedDict()
        self._host_work: Dict[str, Dict[str, Tuple[float, float]]] = defaultdict(dict)
        self._purged: Dict[str, Counter] = defaultdict(Counter)

        self._next_host = 0
        self._next_result = 0
        self._next_wu_seq = 0
        self._replayed = 0
        self._own_seqs: Set[int] = set()
        self.refresh()

    # ---------- persistence ----------

    def _append(self, kind: str, key: str, record: BaseModel) -> None:
        self._own_seqs.add(self.store.append(kind, key, record))

    def refresh(self) -> int:
        """Apply events written by other processes since the last refresh."""
        with self._lock:
            applied = 0
            for event in self.store.replay(self._replayed):
                self._replayed = max(self._replayed, event.seq)
                if event.seq in self._own_seqs:
                    continue
                self._apply(event.kind, event.record)
                applied += 1
            self._own_seqs = {seq for seq in self._own_seqs if seq > self._replayed}
            if applied:
                logger.debug("Replayed events", {"count": applied, "upto": self._replayed})
            return applied

    def _apply(self, kind: str, record: dict) -> None:
        if kind == "work_unit":
            work_unit = WorkUnit.model_validate(record)
            self._next_wu_seq = max(self._next_wu_seq, work_unit.seq + 1)
            self._install_wu(work_unit)
        elif kind == "result":
            result = ResultRecord.model_validate(record)
            self._next_result = max(self._next_result, int(result.result_id.split("-")[1]) + 1)
            self._install_result(result)
        elif kind == "host":
            host = HostRecord.model_validate(record)
            self._next_host = max(self._next_host, int(host.host_id.split("-")[1]) + 1)
            self._install_host(host)
        elif kind == "sweep":
            sweep = SweepRecord.model_validate(record)
            self.sweeps[sweep.name] = sweep
        elif kind == "ledger":
            self._install_entry(AssimilationEntry.model_validate(record))
        else:
            logger.warning("Skipping unknown event kind", {"kind": kind})

    def _install_wu(self, work_unit: WorkUnit) -> None:
        self.work_units[work_unit.wu_id] = work_unit
        if work_unit.state is not WuState.OVER and work_unit.pending_replicas > 0:
            self._enqueue(work_unit)
        if work_unit.state is WuState.OVER:
            self._pending_validation.discard(work_unit.wu_id)

    def _install_result(self, result: ResultRecord) -> None:
        if result.result_id not in self.results:
            self.results_by_wu[result.wu_id].append(result.result_id)
        self.results[result.result_id] = result
        if result.state in LIVE_RESULT_STATES:
            self._in_flight.add(result.result_id)
        else:
            self._in_flight.discard(result.result_id)
        if result.state is ResultState.UPLOADED:
            work_unit = self.work_units.get(result.wu_id)
            if work_unit is not None and work_unit.state is not WuState.OVER:
                self._pending_validation.add(result.wu_id)
        if result.output_digest is not None and result.state in (
                ResultState.UPLOADED, ResultState.VALID, ResultState.INVALID):
            self._host_work[result.host_id][result.result_id] = (result.cpu_time, result.flops_estimate)

    def _install_host(self, host: HostRecord) -> None:
        self.hosts[host.host_id] = host
        self._by_contact.pop(host.host_id, None)
        if host.active:
            self._by_contact[host.host_id] = None

    def _install_entry(self, entry: AssimilationEntry) -> None:
        self.ledger.append(entry)
        self.aggregates[entry.sweep].add(entry)

    def _save_wu(self, work_unit: WorkUnit) -> WorkUnit:
        self._install_wu(work_unit)
        self._append("work_unit", work_unit.wu_id, work_unit)
        return work_unit

    def _save_result(self, result: ResultRecord) -> ResultRecord:
        self._install_result(result)
        self._append("result", result.result_id, result)
        return result

    def _save_host(self, host: HostRecord) -> HostRecord:
        self._install_host(host)
        self._append("host", host.host_id, host)
        return host

    def _enqueue(self, work_unit: WorkUnit) -> None:
        if work_unit.wu_id not in self._queued:
            self._queued.add(work_unit.wu_id)
            heapq.heappush(self._queue, (work_unit.seq, work_unit.wu_id))

    # ---------- work generation ----------

    def submit_sweep(self, spec: SweepSpec) -> List[str]:
        """Expand, sign and persist a sweep; an identical resubmission creates nothing."""
        with self._lock:
            self.refresh()
            digest = spec.digest()
            existing = self.sweeps.get(spec.name)
            if existing is not None:
                if existing.digest == digest:
                    logger.info("Sweep already submitted", {"sweep": spec.name})
                    return []
                raise SweepRejectedError(f"sweep {spec.name!r} already exists with a different spec")
            expanded = expand_sweep_with_payloads(spec)
            now = self.clock()
            sweep = SweepRecord(name=spec.name, digest=digest, app=spec.app, work_units=len(expanded),
                                target_replicas=spec.target_replicas, submitted_at=now)
            self.sweeps[spec.name] = sweep
            self._append("sweep", spec.name, sweep)
            wu_ids = self.submit_work_units(expanded, now=now)
            logger.info("Sweep submitted", {"sweep": spec.name, "work_units": len(wu_ids)})
            return wu_ids

    def submit_work_units(self, expanded: List[Tuple[WorkUnit, Dict[str, bytes]]],
                          now: Optional[float] = None) -> List[str]:
        """Persist Unsent work units with their signed inputs."""
        with self._lock:
            now = self.clock() if now is None else now
            wu_ids = []
            for work_unit, payloads in expanded:
                if work_unit.wu_id in self.work_units:
                    raise SweepRejectedError(f"work unit {work_unit.wu_id!r} already exists")
                for data in payloads.values():
                    signed = sign(data, self.private_key)
                    self.store.put_payload(signed.digest, canonical_json(signed.model_dump(mode="json")))
                work_unit = work_unit.model_copy(update={
                    "state": WuState.UNSENT,
                    "pending_replicas": work_unit.target_replicas,
                    "seq": self._next_wu_seq,
                    "created_at": now,
                })
                self._next_wu_seq += 1
                self._save_wu(work_unit)
                wu_ids.append(work_unit.wu_id)
            return wu_ids

    # ---------- client requests ----------

    def _touch(self, host_id: str) -> HostRecord:
        host = self.hosts.get(host_id)
        if host is None:
            raise ProtocolError(f"host {host_id!r} is not registered")
        now = self.clock()
        gap = now - host.last_contact
        on_seconds = host.on_seconds
        if 0 < gap <= self.settings.presence_timeout:
            on_seconds += gap
        host = host.model_copy(update={"last_contact": max(now, host.last_contact), "on_seconds": on_seconds,
                                       "active": True})
        return self._save_host(host)

    def _credit_busy(self, result: ResultRecord, now: float) -> None:
        host = self.hosts[result.host_id]
        self._save_host(host.model_copy(update={
            "busy_seconds": host.busy_seconds + max(0.0, now - result.assigned_at)}))

    def handle_register(self, msg: Register) -> RegisterAck:
        with self._lock:
            now = self.clock()
            host_id = f"host-{self._next_host:06d}"
            self._next_host += 1
            self._save_host(HostRecord(
                host_id=host_id,
                platform=msg.platform,
                ncpus=msg.ncpus,
                benchmark_flops=msg.benchmark_flops,
                first_contact=now,
                last_contact=now,
            ))
            logger.debug("Host registered", {"host_id": host_id, "platform": msg.platform.value, "ncpus": msg.ncpus})
            return RegisterAck(host_id=host_id)

    def _host_blocked(self, wu_id: str, host_id: str) -> bool:
        # every earlier replica counts, whatever its state
        return any(self.results[rid].host_id == host_id for rid in self.results_by_wu.get(wu_id, ()))

    def handle_request_work(self, msg: RequestWork):
        """FIFO by creation order; a host is issued at most one replica of any work unit."""
        with self._lock:
            self.refresh()
            self._touch(msg.host_id)
            chosen = None
            skipped = []
            while self._queue:
                entry = heapq.heappop(self._queue)
                self._queued.discard(entry[1])
                work_unit = self.work_units.get(entry[1])
                if work_unit is None or work_unit.state is WuState.OVER or work_unit.pending_replicas <= 0:
                    continue
                if self._host_blocked(work_unit.wu_id, msg.host_id):
                    skipped.append(work_unit)
                    continue
                chosen = work_unit
                break
            for work_unit in skipped:
                self._enqueue(work_unit)
            if chosen is None:
                logger.debug("No work for host", {"host_id": msg.host_id})
                return NoWork()

            now = self.clock()
            result_id = f"res-{self._next_result:08d}"
            self._next_result += 1
            result = self._save_result(ResultRecord(
                result_id=result_id,
                wu_id=chosen.wu_id,
                host_id=msg.host_id,
                assigned_at=now,
                deadline_at=now + chosen.deadline_seconds,
                last_heartbeat=now,
            ))
            work_unit = self._save_wu(chosen.model_copy(update={
                "state": WuState.IN_PROGRESS,
                "issued": chosen.issued + 1,
                "pending_replicas": chosen.pending_replicas - 1,
            }))
            inputs = {}
            for ref in work_unit.input_refs:
                body = self.store.get_payload(ref.digest)
                if body is None:
                    raise ProtocolError(f"payload {ref.name} of {work_unit.wu_id} is missing from the store")
                inputs[ref.name] = SignedPayload.model_validate_json(body)
            logger.debug("Work unit assigned", {"wu_id": work_unit.wu_id, "result_id": result.result_id,
                                                "host_id": msg.host_id})
            return AssignWork(result_id=result.result_id, work_unit=work_unit, inputs=inputs, job=work_unit.job)

    def record_heartbeat(self, msg: Heartbeat) -> HeartbeatAck:
        with self._lock:
            result = self.results.get(msg.result_id)
            if result is None or result.host_id != msg.host_id:
                logger.warning("Heartbeat for unknown result", {"result_id": msg.result_id, "host_id": msg.host_id})
                return HeartbeatAck(accepted=False, warning=f"unknown result {msg.result_id}")
            self._touch(msg.host_id)
            if result.state not in LIVE_RESULT_STATES:
                return HeartbeatAck(accepted=False, warning=f"result {msg.result_id} is {result.state.value}")
            if msg.progress_fraction < result.progress:
                logger.warning("Progress went backwards", {"result_id": msg.result_id, "previous": result.progress,
                                                           "reported": msg.progress_fraction})
            self._save_result(result.model_copy(update={
                "state": ResultState.RUNNING,
                "last_heartbeat": self.clock(),
                "progress": msg.progress_fraction,
            }))
            return HeartbeatAck(accepted=True)

    def handle_submit_result(self, msg: SubmitResult) -> SubmitAck:
        with self._lock:
            result = self.results.get(msg.result_id)
            if result is None or result.host_id != msg.host_id:
                logger.warning("Upload for unknown result", {"result_id": msg.result_id, "host_id": msg.host_id})
                return SubmitAck(accepted=False, detail=f"unknown result {msg.result_id}")
            self._touch(msg.host_id)
            work_unit = self.work_units[result.wu_id]
            now = self.clock()
            if result.state not in LIVE_RESULT_STATES and result.state is not ResultState.TIMED_OUT:
                return SubmitAck(accepted=False, detail=f"result {msg.result_id} is already {result.state.value}")

            if msg.error is not None:
                if result.state is ResultState.TIMED_OUT:
                    return SubmitAck(accepted=False, detail=f"result {msg.result_id} already timed out")
                self._save_result(result.model_copy(update={
                    "state": ResultState.ERROR, "completed_at": now, "error": msg.error,
                    "cpu_time": msg.cpu_time}))
                self._credit_busy(result, now)
                logger.warning("Client reported an error", {"result_id": msg.result_id, "error": msg.error})
                if work_unit.state is not WuState.OVER:
                    self._after_failure(work_unit)
                return SubmitAck(accepted=True, detail="error recorded")

            digest = sha256_hex(msg.output)
            self.store.put_blob(digest, msg.output)
            state = ResultState.UPLOADED
            if work_unit.state is WuState.OVER:
                canonical = self.results.get(work_unit.canonical_result_id) if work_unit.canonical_result_id else None
                state = ResultState.VALID if canonical is not None and canonical.output_digest == digest \
                    else ResultState.INVALID
            self._save_result(result.model_copy(update={
                "state": state,
                "output_digest": digest,
                "cpu_time": msg.cpu_time,
                "flops_estimate": msg.flops_estimate,
                "completed_at": now,
                "progress": 1.0,
            }))
            self._credit_busy(result, now)
            logger.debug("Result uploaded", {"result_id": msg.result_id, "wu_id": work_unit.wu_id,
                                            "state": state.value, "late": result.state is ResultState.TIMED_OUT})
            return SubmitAck(accepted=True)

    # ---------- transitioner ----------

    def _can_issue(self, work_unit: WorkUnit) -> bool:
        return work_unit.issued + work_unit.pending_replicas < work_unit.target_replicas + work_unit.max_error_results

    def _live_count(self, wu_id: str) -> int:
        return sum(1 for rid in self.results_by_wu.get(wu_id, ()) if self.results[rid].state in LIVE_RESULT_STATES)

    def _uploaded(self, wu_id: str) -> List[ResultRecord]:
        return sorted((self.results[rid] for rid in self.results_by_wu.get(wu_id, ())
                       if self.results[rid].state is ResultState.UPLOADED), key=lambda r: r.result_id)

    def _after_failure(self, work_unit: WorkUnit) -> None:
        work_unit = work_unit.model_copy(update={"error_count": work_unit.error_count + 1})
        if work_unit.error_count >= work_unit.max_error_results:
            self._fail(work_unit, "too many errors")
            return
        if self._can_issue(work_unit):
            work_unit = work_unit.model_copy(update={"pending_replicas": work_unit.pending_replicas + 1})
        elif self._live_count(work_unit.wu_id) == 0 and not self._uploaded(work_unit.wu_id):
            self._fail(work_unit, "no replicas left to issue")
            return
        self._save_wu(work_unit)

    def _fail(self, work_unit: WorkUnit, reason: str) -> None:
        for result in self._uploaded(work_unit.wu_id):
            self._save_result(result.model_copy(update={"state": ResultState.INVALID}))
        self._pending_validation.discard(work_unit.wu_id)
        self._save_wu(work_unit.model_copy(update={
            "state": WuState.OVER, "outcome": Outcome.FAILED, "pending_replicas": 0}))
        logger.warning("Work unit failed", {"wu_id": work_unit.wu_id, "reason": reason,
                                            "error_count": work_unit.error_count})

    def transition(self) -> List[StateChange]:
        """Time out silent or overdue replicas, trigger validation, retire silent hosts."""
        with self._lock:
            self.refresh()
            now = self.clock()
            changes: List[StateChange] = []
            timeout = self.settings.heartbeat_timeout
            for result_id in sorted(self._in_flight):
                result = self.results[result_id]
                silent = timeout is not None and now - result.last_heartbeat > timeout
                if not silent and now <= result.deadline_at:
                    continue
                self._save_result(result.model_copy(update={"state": ResultState.TIMED_OUT, "completed_at": now}))
                changes.append(StateChange("result", result_id, result.state.value, ResultState.TIMED_OUT.value))
                logger.debug("Result timed out", {"result_id": result_id, "wu_id": result.wu_id,
                                                 "reason": "heartbeat" if silent else "deadline"})
                work_unit = self.work_units[result.wu_id]
                if work_unit.state is not WuState.OVER:
                    self._after_failure(work_unit)
                    after = self.work_units[result.wu_id]
                    if after.state is WuState.OVER:
                        changes.append(StateChange("work_unit", after.wu_id, work_unit.state.value, after.state.value))

            for wu_id in sorted(self._pending_validation):
                work_unit = self.work_units[wu_id]
                if len(self._uploaded(wu_id)) < work_unit.min_quorum:
                    continue
                outcome = self.validate(wu_id)
                if outcome.verdict is not Verdict.NEEDS_MORE:
                    changes.append(StateChange("work_unit", wu_id, work_unit.state.value, WuState.OVER.value))

            while self._by_contact:
                host_id = next(iter(self._by_contact))
                host = self.hosts[host_id]
                if now - host.last_contact <= self.settings.dead_threshold:
                    break
                self._save_host(host.model_copy(update={"active": False}))
                changes.append(StateChange("host", host_id, "active", "inactive"))
                logger.debug("Host marked inactive", {"host_id": host_id, "last_contact": host.last_contact})
            return changes

    def validate(self, wu_id: str) -> ValidationOutcome:
        """Group uploaded outputs by bytes; the group backed by the most hosts (ties: lowest result_id) wins
        if that many distinct hosts reach quorum."""
        with self._lock:
            work_unit = self.work_units[wu_id]
            if work_unit.state is WuState.OVER:
                canonical = self.results.get(work_unit.canonical_result_id) if work_unit.canonical_result_id else None
                return ValidationOutcome(Verdict.CANONICAL if canonical else Verdict.FAILED, canonical)
            uploaded = self._uploaded(wu_id)
            groups: Dict[str, List[ResultRecord]] = defaultdict(list)
            for result in uploaded:
                groups[result.output_digest].append(result)
            best = min(groups.values(), key=lambda g: (-_distinct_hosts(g), g[0].result_id)) if groups else []
            agreeing = _distinct_hosts(best)

            if agreeing >= work_unit.min_quorum:
                winners = {r.result_id for r in best}
                canonical = None
                for result in uploaded:
                    state = ResultState.VALID if result.result_id in winners else ResultState.INVALID
                    saved = self._save_result(result.model_copy(update={"state": state}))
                    if canonical is None and result.result_id in winners:
                        canonical = saved
                self._pending_validation.discard(wu_id)
                self._save_wu(work_unit.model_copy(update={
                    "state": WuState.OVER,
                    "outcome": Outcome.SUCCESS,
                    "canonical_result_id": canonical.result_id,
                    "pending_replicas": 0,
                }))
                logger.debug("Work unit validated", {"wu_id": wu_id, "canonical": canonical.result_id,
                                                    "agreeing": agreeing, "uploaded": len(uploaded)})
                self.assimilate(canonical)
                return ValidationOutcome(Verdict.CANONICAL, canonical)

            disagreeing = _distinct_hosts(uploaded)
            disagreeing = disagreeing if disagreeing >= work_unit.min_quorum else 0
            live = self._live_count(wu_id)
            if work_unit.error_count + disagreeing >= work_unit.max_error_results or (
                    live == 0 and work_unit.pending_replicas == 0 and not self._can_issue(work_unit)):
                self._fail(work_unit, "no quorum")
                return ValidationOutcome(Verdict.FAILED)
            if live == 0 and work_unit.pending_replicas == 0:
                self._save_wu(work_unit.model_copy(update={"pending_replicas": 1}))
                logger.info("Extra replica issued", {"wu_id": wu_id, "uploaded": len(uploaded)})
            return ValidationOutcome(Verdict.NEEDS_MORE)

    def assimilate(self, canonical: ResultRecord) -> Optional[AssimilationEntry]:
        with self._lock:
            work_unit = self.work_units[canonical.wu_id]
            output = self.store.get_blob(canonical.output_digest) or b""
            try:
                summary = self.assimilator(work_unit, output)
            except (ValueError, KeyError, TypeError) as e:
                self._save_wu(work_unit.model_copy(update={"flagged": True}))
                logger.warning("Canonical output could not be parsed", {"wu_id": work_unit.wu_id,
                                                                        "result_id": canonical.result_id,
                                                                        "error": str(e)})
                return None
            entry = AssimilationEntry(
                sweep=work_unit.sweep,
                wu_id=work_unit.wu_id,
                result_id=canonical.result_id,
                host_id=canonical.host_id,
                seed=work_unit.seed,
                cpu_time=canonical.cpu_time,
                flops_estimate=canonical.flops_estimate,
                assigned_at=canonical.assigned_at,
                uploaded_at=canonical.completed_at if canonical.completed_at is not None else self.clock(),
                **summary,
            )
            self._install_entry(entry)
            self._append("ledger", entry.wu_id, entry)
            return entry

    # ---------- reporting and maintenance ----------

    def export_host_log(self) -> HostLog:
        with self._lock:
            entries = []
            for host_id in sorted(self.hosts):
                host = self.hosts[host_id]
                work = [self._host_work[host_id][rid] for rid in sorted(self._host_work.get(host_id, {}))]
                entries.append(HostLogEntry(
                    host_id=host_id,
                    first_contact=host.first_contact,
                    last_contact=host.last_contact,
                    ncpus=host.ncpus,
                    benchmark_flops=host.benchmark_flops,
                    on_fraction=host.on_fraction,
                    active_fraction=host.active_fraction,
                    active=host.active,
                    cpu_times=[cpu for cpu, _ in work],
                    flops_estimates=[flops for _, flops in work],
                ))
            return HostLog(entries=entries, exported_at=self.clock())

    def sweep_status(self, name: str) -> SweepStatus:
        with self._lock:
            self.refresh()
            if name not in self.sweeps:
                raise ConfigurationError(f"unknown sweep {name!r}")
            units = sorted((wu for wu in self.work_units.values() if wu.sweep == name), key=lambda wu: wu.seq)
            states = Counter(wu.state.value for wu in units)
            outcomes = Counter(wu.outcome.value for wu in units if wu.outcome is not None)
            for key, count in self._purged[name].items():
                states[WuState.OVER.value] += count
                outcomes[key] += count
            aggregate = self.aggregates.get(name, SweepAggregate())
            return SweepStatus(
                name=name,
                total=self.sweeps[name].work_units,
                states=dict(states),
                outcomes=dict(outcomes),
                work_units=units,
                runs=aggregate.runs,
                perfect=aggregate.perfect,
                mean_cpu_time=aggregate.mean_cpu_time,
                mean_time_to_perfect=aggregate.mean_time_to_perfect,
            )

    def purge(self, drop_ledger: bool = False) -> int:
        """Drop finished work units and their results from memory; the event log keeps them.

        ``drop_ledger`` also forgets ledger entries, whose totals survive in the sweep aggregates.
        """
        with self._lock:
            finished = [wu for wu in self.work_units.values() if wu.state is WuState.OVER]
            for work_unit in finished:
                for result_id in self.results_by_wu.pop(work_unit.wu_id, []):
                    self.results.pop(result_id, None)
                    self._in_flight.discard(result_id)
                del self.work_units[work_unit.wu_id]
                self._purged[work_unit.sweep][work_unit.outcome.value] += 1
            if drop_ledger:
                self.ledger.clear()
            return len(finished)

    @property
    def queued(self) -> int:
        """Work units with replicas still waiting for a host."""
        with self._lock:
            return len(self._queued)

    # ---------- wire dispatch ----------

    def dispatch(self, msg):
        if isinstance(msg, Register):
            return self.handle_register(msg)
        if isinstance(msg, RequestWork):
            return self.handle_request_work(msg)
        if isinstance(msg, Heartbeat):
            return self.record_heartbeat(msg)
        if isinstance(msg, SubmitResult):
            return self.handle_submit_result(msg)
        raise ProtocolError(f"{msg.kind} is not a client request")

    def handle_frame(self, data: bytes) -> bytes:
        """Decode, dispatch and encode one exchange; protocol errors come back as an ErrorReply frame."""
        try:
            return encode(self.dispatch(decode(data)))
        except ProtocolError as e:
            logger.warning("Protocol error", {"error": str(e)})
            return encode(ErrorReply(code="protocol_error", detail=str(e)))


def build_server(settings: ServerSettings, clock: Callable[[], float] = None) -> ProjectServer:
    return ProjectServer(settings, SqlEventStore(settings.database_url), load_private_key(settings.private_key_path),
                         clock=clock)


# ---------- HTTP surface ----------

_server: Optional[ProjectServer] = None


def configure(server: Optional[ProjectServer]) -> None:
    global _server
    _server = server


def get_server() -> ProjectServer:
    if _server is None:
        raise HTTPException(status_code=503, detail="Project server not configured")
    return _server


async def _transition_loop(server: ProjectServer) -> None:
    while True:
        await asyncio.sleep(server.settings.transition_interval)
        try:
            await asyncio.to_thread(server.transition)
        except Exception as e:
            logger.error("Transitioner pass failed", {"error": str(e)})


@asynccontextmanager
async def lifespan(app: FastAPI):
    task = asyncio.create_task(_transition_loop(_server)) if _server is not None else None
    yield
    if task is not None:
        task.cancel()
        with suppress(asyncio.CancelledError):
            await task


app = FastAPI(lifespan=lifespan)


@app.get("/")
def read_root():
    return {"status": "ok", "service": "voluntier-server"}


@app.post("/rpc")
async def rpc(request: Request, server: ProjectServer = Depends(get_server)):
    body = await request.body()
    try:
        message = decode(body)
        reply = await asyncio.to_thread(server.dispatch, message)
    except ProtocolError as e:
        logger.warning("Rejected frame", {"error": str(e), "offset": e.offset})
        return Response(encode(ErrorReply(code="protocol_error", detail=str(e))), status_code=400,
                        media_type=FRAME_MEDIA_TYPE)
    return Response(encode(reply), media_type=FRAME_MEDIA_TYPE)


def serve(settings: ServerSettings) -> None:
    import uvicorn

    configure(build_server(settings))
    logger.info("Project server starting", {"host": settings.host, "port": settings.port})
    uvicorn.run(app, host=settings.host, port=settings.port, log_level="warning")
