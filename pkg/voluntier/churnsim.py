"""Discrete-event simulation of a churning volunteer host population.

Hosts arrive as a Poisson process, live for an exponential time, alternate
between available and unavailable periods, and pull work from a real
ProjectServer driven by a VirtualClock. Unavailable periods suspend running
tasks (the work is checkpointed); a departure loses them and the server's
transitioner reissues after the deadline. The run is single-threaded and
fully determined by the configuration's seed.
"""
import csv
import heapq
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from common_utils.logger.client import LoggerClient
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from voluntier.clock import VirtualClock
from voluntier.config import ServerSettings
from voluntier.errors import ConfigurationError, DomainError
from voluntier.metrics import GIGA, SECONDS_PER_DAY, FactorSet, HostLog, HostLogEntry, computing_power
from voluntier.proto import (
    AppKind,
    AssignWork,
    Outcome,
    Platform,
    Register,
    RequestWork,
    SubmitResult,
    WorkUnit,
    generate_keypair,
)
from voluntier.server import ProjectServer
from voluntier.store import MemoryEventStore

logger = LoggerClient("voluntier-sim")

SECONDS_PER_HOUR = 3600.0
SIM_SWEEP = "sim"
TOP_UP_BATCH = 64
STEADY_STATE_LIFETIMES = 10


class SeedHost(BaseModel):
    """A host present from time zero, outside the arrival process."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    benchmark_flops: float = Field(gt=0)
    ncpus: int = Field(1, ge=1)
    immortal: bool = True
    always_on: bool = True
    active_fraction: float = Field(1.0, gt=0.0, le=1.0)


class SimPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    target_replicas: int = Field(1, ge=1)
    min_quorum: int = Field(1, ge=1)
    max_error_results: int = Field(3, ge=1)
    deadline_days: float = Field(7.0, gt=0)
    transition_interval_hours: float = Field(1.0, gt=0)
    dead_threshold_days: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _check_quorum(self):
        if self.min_quorum > self.target_replicas:
            raise ValueError("min_quorum exceeds target_replicas")
        return self


class ChurnConfig(BaseModel):
    """Host population and workload of one simulation; times in days unless named otherwise."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    arrival_rate: float = Field(10.0, ge=0.0)
    mean_lifetime_days: float = Field(10.0, gt=0.0)
    mean_on_days: float = Field(1.0, gt=0.0)
    mean_off_days: float = Field(0.0, ge=0.0)
    active_fraction: float = Field(1.0, gt=0.0, le=1.0)
    efficiency: float = Field(1.0, gt=0.0, le=1.0)
    flops_median: float = Field(1e9, gt=0.0)
    flops_sigma: float = Field(0.0, ge=0.0)
    ncpus_weights: Dict[int, float] = Field(default_factory=lambda: {1: 1.0})
    work_size: float = Field(1e12, gt=0.0)
    work_units: Optional[int] = Field(None, ge=1)
    horizon_days: float = Field(30.0, gt=0.0)
    warm_start: bool = True
    seed_hosts: List[SeedHost] = Field(default_factory=list)
    flip_probability: float = Field(0.0, ge=0.0, lt=1.0)
    sample_interval_hours: float = Field(1.0, gt=0.0)
    record_events: bool = True
    seed: int = 0
    policy: SimPolicy = Field(default_factory=SimPolicy)

    @model_validator(mode="after")
    def _check_population(self):
        if any(k < 1 for k in self.ncpus_weights) or any(w < 0 for w in self.ncpus_weights.values()):
            raise ValueError("ncpus_weights needs ncpus >= 1 and non-negative weights")
        if sum(self.ncpus_weights.values()) <= 0:
            raise ValueError("ncpus_weights must have a positive total")
        return self

    @property
    def on_fraction(self) -> float:
        return self.mean_on_days / (self.mean_on_days + self.mean_off_days)

    @property
    def mean_flops(self) -> float:
        return self.flops_median * math.exp(self.flops_sigma ** 2 / 2)

    @property
    def mean_ncpus(self) -> float:
        total = sum(self.ncpus_weights.values())
        return sum(k * w for k, w in self.ncpus_weights.items()) / total

    @classmethod
    def from_json(cls, text: str) -> "ChurnConfig":
        try:
            return cls.model_validate(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Churn config is not valid JSON: {e}") from e
        except ValidationError as e:
            raise ConfigurationError(f"Invalid churn config: {e}") from e

    @classmethod
    def from_file(cls, path: str) -> "ChurnConfig":
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigurationError(f"Churn config not found: {path}")
        return cls.from_json(config_path.read_text(encoding="utf-8"))


# ---------- trace ----------

@dataclass(frozen=True)
class TraceEvent:
    t: float
    kind: str
    host_id: str
    detail: str = ""


@dataclass(frozen=True)
class HostSample:
    t: float
    hosts: int
    available: int
    busy: int


SAMPLE_COLUMNS = ("time_days", "hosts", "available", "busy_slots")


@dataclass
class SimTrace:
    """What happened in one run; every issued replica ends completed, lost, timed out or unfinished."""

    events: List[TraceEvent] = field(default_factory=list)
    samples: List[HostSample] = field(default_factory=list)
    completed_wus: int = 0
    failed_wus: int = 0
    reissued_wus: int = 0
    useful_flop: float = 0.0
    wall_span: float = 0.0
    issued: int = 0
    completed_replicas: int = 0
    corrupted: int = 0
    lost: int = 0
    timed_out: int = 0
    unfinished: int = 0
    hosts_seen: int = 0
    host_log: Optional[HostLog] = None

    @property
    def cp_sim(self) -> float:
        """Useful GFLOPS delivered over the wall span."""
        return self.useful_flop / self.wall_span / GIGA if self.wall_span > 0 else 0.0

    @property
    def conserved(self) -> bool:
        return self.issued == self.completed_replicas + self.lost + self.timed_out + self.unfinished

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(SAMPLE_COLUMNS)
        for sample in self.samples:
            writer.writerow([f"{sample.t / SECONDS_PER_DAY:.6f}", sample.hosts, sample.available, sample.busy])
        return buffer.getvalue()

    def summary(self) -> Dict[str, float]:
        return {
            "hosts_seen": self.hosts_seen,
            "completed_wus": self.completed_wus,
            "failed_wus": self.failed_wus,
            "reissued_wus": self.reissued_wus,
            "issued": self.issued,
            "completed_replicas": self.completed_replicas,
            "lost": self.lost,
            "timed_out": self.timed_out,
            "unfinished": self.unfinished,
            "useful_flop": self.useful_flop,
            "wall_span_days": self.wall_span / SECONDS_PER_DAY,
            "cp_sim_gflops": self.cp_sim,
        }


# ---------- simulator ----------

@dataclass(order=True)
class Event:
    t: float
    seq: int
    kind: str
    host_id: Optional[str] = field(compare=False, default=None)
    slot: Optional[int] = field(compare=False, default=None)
    # invalidates completions of suspended tasks and flips of departed hosts
    ticket: Optional[int] = field(compare=False, default=None)


@dataclass
class _Task:
    result_id: str
    wu_id: str
    remaining: float
    resumed_at: float
    ticket: int


@dataclass
class _Host:
    host_id: str
    flops: float
    ncpus: int
    active_fraction: float
    mortal: bool
    flips: bool
    rate: float
    on: bool = True
    alive: bool = True
    flip_ticket: int = 0
    slots: List[Optional[_Task]] = field(default_factory=list)


class ChurnSimulator:
    def __init__(self, cfg: ChurnConfig, policy: Optional[SimPolicy] = None):
        self.cfg = cfg
        self.policy = policy or cfg.policy
        self.rng = np.random.default_rng(cfg.seed)
        self.clock = VirtualClock()
        self.server = ProjectServer(
            ServerSettings(
                heartbeat_interval=self.policy.transition_interval_hours * SECONDS_PER_HOUR,
                heartbeat_timeout=math.inf,
                dead_threshold=self.policy.dead_threshold_days * SECONDS_PER_DAY,
                transition_interval=self.policy.transition_interval_hours * SECONDS_PER_HOUR,
            ),
            MemoryEventStore(retain=False),
            generate_keypair(),
            clock=self.clock,
            assimilator=self._assimilate,
        )
        self.trace = SimTrace()
        self.horizon = cfg.horizon_days * SECONDS_PER_DAY
        self.queue: List[Event] = []
        self.seq = 0
        self.tickets = 0
        self.hosts: Dict[str, _Host] = {}
        self.holders: Dict[str, Tuple[str, int]] = {}
        self.waiting: Dict[Tuple[str, int], None] = {}
        self.available = 0
        self.busy = 0
        self.submitted = 0
        ncpus = sorted(cfg.ncpus_weights)
        total = sum(cfg.ncpus_weights.values())
        self._ncpus_values = ncpus
        self._ncpus_probs = [cfg.ncpus_weights[k] / total for k in ncpus]

    # ---------- scheduling ----------

    def push(self, t: float, kind: str, host_id: Optional[str] = None, slot: Optional[int] = None,
             ticket: Optional[int] = None) -> None:
        self.seq += 1
        heapq.heappush(self.queue, Event(t, self.seq, kind, host_id, slot, ticket))

    def record(self, kind: str, host_id: str = "", detail: str = "") -> None:
        if self.cfg.record_events:
            self.trace.events.append(TraceEvent(self.clock(), kind, host_id, detail))

    def _next_ticket(self) -> int:
        self.tickets += 1
        return self.tickets

    # ---------- sampling ----------

    def _sample_flops(self) -> float:
        if self.cfg.flops_sigma == 0:
            return self.cfg.flops_median
        return float(self.rng.lognormal(mean=math.log(self.cfg.flops_median), sigma=self.cfg.flops_sigma))

    def _sample_ncpus(self) -> int:
        if len(self._ncpus_values) == 1:
            return self._ncpus_values[0]
        return int(self.rng.choice(self._ncpus_values, p=self._ncpus_probs))

    def _days(self, mean_days: float) -> float:
        return float(self.rng.exponential(mean_days)) * SECONDS_PER_DAY

    # ---------- work supply ----------

    def _submit(self, count: int) -> None:
        batch = []
        for _ in range(count):
            batch.append((WorkUnit(
                wu_id=f"{SIM_SWEEP}-{self.submitted:08d}",
                sweep=SIM_SWEEP,
                app=AppKind.EMBEDDED_GP,
                target_replicas=self.policy.target_replicas,
                min_quorum=self.policy.min_quorum,
                max_error_results=self.policy.max_error_results,
                deadline_seconds=self.policy.deadline_days * SECONDS_PER_DAY,
            ), {}))
            self.submitted += 1
        self.server.submit_work_units(batch)

    def _assimilate(self, work_unit: WorkUnit, output: bytes) -> Dict[str, object]:
        canonical = self.server.results[work_unit.canonical_result_id]
        self.trace.completed_wus += 1
        self.trace.useful_flop += self.cfg.work_size
        self.trace.wall_span = max(self.trace.wall_span, canonical.completed_at)
        if work_unit.issued > work_unit.target_replicas:
            self.trace.reissued_wus += 1
        return {}

    # ---------- hosts ----------

    def _add_host(self, flops: float, ncpus: int, active_fraction: float, mortal: bool, flips: bool,
                  on: bool) -> _Host:
        ack = self.server.handle_register(Register(
            platform=Platform.LINUX_X86_64,
            ncpus=ncpus,
            benchmark_flops=flops,
        ))
        host = _Host(
            host_id=ack.host_id,
            flops=flops,
            ncpus=ncpus,
            active_fraction=active_fraction,
            mortal=mortal,
            flips=flips,
            rate=flops * self.cfg.efficiency * active_fraction,
            on=on,
            slots=[None] * ncpus,
        )
        self.hosts[host.host_id] = host
        self.trace.hosts_seen += 1
        self.record("arrival", host.host_id)
        if mortal:
            self.push(self.clock() + self._days(self.cfg.mean_lifetime_days), "departure", host.host_id)
        if flips:
            mean = self.cfg.mean_on_days if on else self.cfg.mean_off_days
            self.push(self.clock() + self._days(mean), "flip", host.host_id, ticket=host.flip_ticket)
        if on:
            self.available += 1
            self._fill(host)
        return host

    def _add_random_host(self, warm: bool) -> _Host:
        flips = self.cfg.mean_off_days > 0
        on = bool(self.rng.random() < self.cfg.on_fraction) if (flips and warm) else True
        return self._add_host(self._sample_flops(), self._sample_ncpus(), self.cfg.active_fraction,
                              mortal=True, flips=flips, on=on)

    def _fill(self, host: _Host) -> None:
        for slot, task in enumerate(host.slots):
            if task is None:
                self._request(host, slot)

    def _request(self, host: _Host, slot: int) -> None:
        if not (host.alive and host.on) or host.slots[slot] is not None:
            return
        unlimited = self.cfg.work_units is None
        if unlimited and self.server.queued == 0:
            self._submit(TOP_UP_BATCH)
        reply = self.server.handle_request_work(RequestWork(host_id=host.host_id))
        if not isinstance(reply, AssignWork) and unlimited:
            self._submit(TOP_UP_BATCH)
            reply = self.server.handle_request_work(RequestWork(host_id=host.host_id))
        if not isinstance(reply, AssignWork):
            self.waiting[(host.host_id, slot)] = None
            return
        task = _Task(result_id=reply.result_id, wu_id=reply.work_unit.wu_id, remaining=self.cfg.work_size,
                     resumed_at=self.clock(), ticket=self._next_ticket())
        host.slots[slot] = task
        self.holders[task.result_id] = (host.host_id, slot)
        self.busy += 1
        self.trace.issued += 1
        self.record("assign", host.host_id, task.result_id)
        self.push(self.clock() + task.remaining / host.rate, "complete", host.host_id, slot, task.ticket)

    def _release(self, host: _Host, slot: int) -> _Task:
        task = host.slots[slot]
        host.slots[slot] = None
        self.holders.pop(task.result_id, None)
        self.busy -= 1
        return task

    def _wake(self) -> None:
        for key in list(self.waiting):
            del self.waiting[key]
            host = self.hosts.get(key[0])
            if host is not None:
                self._request(host, key[1])

    def _forget_waiting(self, host: _Host) -> None:
        for slot in range(host.ncpus):
            self.waiting.pop((host.host_id, slot), None)

    # ---------- event handlers ----------

    def _on_complete(self, event: Event) -> None:
        host = self.hosts.get(event.host_id)
        if host is None:
            return
        task = host.slots[event.slot]
        if task is None or task.ticket != event.ticket:
            return
        self._release(host, event.slot)
        cpu_time = self.cfg.work_size / host.rate
        output = task.wu_id.encode("ascii")
        if self.cfg.flip_probability and self.rng.random() < self.cfg.flip_probability:
            output += b"#" + task.result_id.encode("ascii")
            self.trace.corrupted += 1
        self.server.handle_submit_result(SubmitResult(
            host_id=host.host_id,
            result_id=task.result_id,
            output=output,
            cpu_time=cpu_time,
            flops_estimate=cpu_time * host.flops,
        ))
        self.trace.completed_replicas += 1
        self.record("complete", host.host_id, task.result_id)
        self._request(host, event.slot)

    def _on_flip(self, event: Event) -> None:
        host = self.hosts.get(event.host_id)
        if host is None or not host.alive or event.ticket != host.flip_ticket:
            return
        now = self.clock()
        if host.on:
            host.on = False
            self.available -= 1
            self._forget_waiting(host)
            for task in host.slots:
                if task is not None:
                    task.remaining = max(0.0, task.remaining - (now - task.resumed_at) * host.rate)
                    task.ticket = self._next_ticket()
            self.record("off", host.host_id)
            self.push(now + self._days(self.cfg.mean_off_days), "flip", host.host_id, ticket=host.flip_ticket)
        else:
            host.on = True
            self.available += 1
            self.record("on", host.host_id)
            for slot, task in enumerate(host.slots):
                if task is not None:
                    task.resumed_at = now
                    self.push(now + task.remaining / host.rate, "complete", host.host_id, slot, task.ticket)
            self.push(now + self._days(self.cfg.mean_on_days), "flip", host.host_id, ticket=host.flip_ticket)
            self._fill(host)

    def _on_departure(self, event: Event) -> None:
        host = self.hosts.pop(event.host_id, None)
        if host is None:
            return
        host.alive = False
        host.flip_ticket += 1
        if host.on:
            self.available -= 1
        self._forget_waiting(host)
        for slot, task in enumerate(host.slots):
            if task is not None:
                self._release(host, slot)
                self.trace.lost += 1
                self.record("lost", host.host_id, task.result_id)
        self.record("departure", host.host_id)

    def _on_arrival(self, event: Event) -> None:
        self._add_random_host(warm=False)
        self.push(self.clock() + self._days(1.0 / self.cfg.arrival_rate), "arrival")

    def _transition(self) -> None:
        for change in self.server.transition():
            if change.record == "result" and change.new == "timed_out":
                holder = self.holders.get(change.key)
                if holder is None:
                    continue
                host = self.hosts[holder[0]]
                self._release(host, holder[1])
                self.trace.timed_out += 1
                self.record("timeout", host.host_id, change.key)
                self._request(host, holder[1])
            elif change.record == "work_unit" and change.new == "over":
                work_unit = self.server.work_units.get(change.key)
                if work_unit is not None and work_unit.outcome is Outcome.FAILED:
                    self.trace.failed_wus += 1
        self.server.purge(drop_ledger=True)
        self._wake()

    def _sample(self) -> None:
        self.trace.samples.append(HostSample(self.clock(), len(self.hosts), self.available, self.busy))

    # ---------- run ----------

    def run(self) -> SimTrace:
        cfg = self.cfg
        self.push(self.horizon, "horizon")
        if cfg.work_units is not None:
            self._submit(cfg.work_units)
        for seeded in cfg.seed_hosts:
            self._add_host(seeded.benchmark_flops, seeded.ncpus, seeded.active_fraction,
                           mortal=not seeded.immortal, flips=not seeded.always_on and cfg.mean_off_days > 0, on=True)
        if cfg.arrival_rate > 0:
            if cfg.warm_start:
                for _ in range(int(self.rng.poisson(cfg.arrival_rate * cfg.mean_lifetime_days))):
                    self._add_random_host(warm=True)
            self.push(self._days(1.0 / cfg.arrival_rate), "arrival")
        transition_every = self.policy.transition_interval_hours * SECONDS_PER_HOUR
        sample_every = cfg.sample_interval_hours * SECONDS_PER_HOUR
        self.push(transition_every, "transition")
        self._sample()
        self.push(sample_every, "sample")

        handlers = {
            "complete": self._on_complete,
            "flip": self._on_flip,
            "departure": self._on_departure,
            "arrival": self._on_arrival,
        }
        while self.queue:
            event = heapq.heappop(self.queue)
            self.clock.set(event.t)
            if event.kind == "horizon":
                break
            if event.kind == "transition":
                self._transition()
                self.push(event.t + transition_every, "transition")
            elif event.kind == "sample":
                self._sample()
                self.push(event.t + sample_every, "sample")
            else:
                handlers[event.kind](event)

        self._transition()
        self.trace.unfinished = self.busy
        self.trace.host_log = self.server.export_host_log()
        logger.info("Simulation finished", self.trace.summary())
        return self.trace


def simulate(cfg: ChurnConfig, server_policy: Optional[SimPolicy] = None) -> SimTrace:
    """Run one simulation; identical configs (seed included) give identical traces."""
    return ChurnSimulator(cfg, server_policy).run()


# ---------- analytic model ----------

def _presence(cfg: ChurnConfig, immortal: bool) -> float:
    """Time-averaged probability that a host present at time zero is still alive."""
    if immortal:
        return 1.0
    ratio = cfg.horizon_days / cfg.mean_lifetime_days
    return (1.0 - math.exp(-ratio)) / ratio


def factors_from_config(cfg: ChurnConfig, policy: Optional[SimPolicy] = None) -> FactorSet:
    """The nine factors implied by the configured distributions.

    Arrival and lifetime come straight from the config for a pure arrival
    process; when seeded hosts are present the expected population is spread
    over the horizon instead. The remaining factors are capacity-weighted so
    their product equals the population's mean deliverable rate.
    """
    policy = policy or cfg.policy
    # (expected hosts, ncpus, flops, on fraction, active fraction)
    groups: List[Tuple[float, float, float, float, float]] = []
    if cfg.arrival_rate > 0:
        population = cfg.arrival_rate * cfg.mean_lifetime_days
        if not cfg.warm_start:
            population *= 1.0 - _presence(cfg, immortal=False)
        groups.append((population, cfg.mean_ncpus, cfg.mean_flops, cfg.on_fraction, cfg.active_fraction))
    for seeded in cfg.seed_hosts:
        on_fraction = 1.0 if seeded.always_on or cfg.mean_off_days == 0 else cfg.on_fraction
        groups.append((_presence(cfg, seeded.immortal), seeded.ncpus, seeded.benchmark_flops, on_fraction,
                       seeded.active_fraction))
    population = sum(g[0] for g in groups)
    if population <= 0:
        raise ConfigurationError("configuration has no hosts")

    cpus = sum(p * n for p, n, _, _, _ in groups)
    capacity = sum(p * n * f for p, n, f, _, _ in groups)
    available = sum(p * n * f * on for p, n, f, on, _ in groups)
    active = sum(p * n * f * on * a for p, n, f, on, a in groups)
    if cfg.seed_hosts:
        x_life = cfg.horizon_days
        x_arrival = population / x_life
    else:
        x_arrival = cfg.arrival_rate
        x_life = population / cfg.arrival_rate
    return FactorSet(
        x_arrival=x_arrival,
        x_life=x_life,
        x_ncpus=cpus / population,
        x_flops=capacity / cpus / GIGA,
        x_eff=cfg.efficiency,
        x_onfrac=available / capacity,
        x_active=active / available,
        x_redundancy=1.0 / policy.target_replicas,
        x_share=1.0,
    )


@dataclass(frozen=True)
class CpComparison:
    cp_formula: float
    cp_sim: float
    ratio: float
    factors: FactorSet
    trace: SimTrace = field(repr=False, compare=False)


def predicted_vs_simulated(cfg: ChurnConfig, policy: Optional[SimPolicy] = None) -> CpComparison:
    """Computing power from the factor product against the throughput the simulation delivered."""
    if cfg.arrival_rate > 0 and cfg.horizon_days < STEADY_STATE_LIFETIMES * cfg.mean_lifetime_days:
        raise ConfigurationError(
            f"horizon of {cfg.horizon_days} days is under {STEADY_STATE_LIFETIMES} mean lifetimes")
    factors = factors_from_config(cfg, policy)
    cp_formula = computing_power(factors)
    if cp_formula <= 0:
        raise DomainError("predicted computing power is zero")
    trace = simulate(cfg, policy)
    comparison = CpComparison(cp_formula=cp_formula, cp_sim=trace.cp_sim, ratio=trace.cp_sim / cp_formula,
                              factors=factors, trace=trace)
    logger.info("Computing power compared", {"cp_formula": cp_formula, "cp_sim": trace.cp_sim,
                                             "ratio": comparison.ratio})
    return comparison


def synthesize_host_log(cfg: ChurnConfig) -> HostLog:
    """A host log drawn from the config's distributions, without running the server.

    Hosts still alive at the horizon are censored there; each host reports one
    aggregate result whose CPU time is its available, active share of its life.
    """
    rng = np.random.default_rng(cfg.seed)
    horizon = cfg.horizon_days * SECONDS_PER_DAY
    flips = cfg.mean_off_days > 0
    arrivals: List[float] = []
    if cfg.arrival_rate > 0:
        if cfg.warm_start:
            arrivals.extend([0.0] * int(rng.poisson(cfg.arrival_rate * cfg.mean_lifetime_days)))
        t = float(rng.exponential(1.0 / cfg.arrival_rate)) * SECONDS_PER_DAY
        while t < horizon:
            arrivals.append(t)
            t += float(rng.exponential(1.0 / cfg.arrival_rate)) * SECONDS_PER_DAY
    ncpus_values = sorted(cfg.ncpus_weights)
    total = sum(cfg.ncpus_weights.values())
    probs = [cfg.ncpus_weights[k] / total for k in ncpus_values]
    on_fraction = cfg.on_fraction if flips else 1.0

    entries = []
    for index, first in enumerate(arrivals):
        death = first + float(rng.exponential(cfg.mean_lifetime_days)) * SECONDS_PER_DAY
        flops = cfg.flops_median if cfg.flops_sigma == 0 else float(
            rng.lognormal(mean=math.log(cfg.flops_median), sigma=cfg.flops_sigma))
        ncpus = ncpus_values[0] if len(ncpus_values) == 1 else int(rng.choice(ncpus_values, p=probs))
        last = min(death, horizon)
        cpu = (last - first) * on_fraction * cfg.active_fraction * ncpus
        entries.append(HostLogEntry(
            host_id=f"synth-{index:06d}",
            first_contact=first,
            last_contact=last,
            ncpus=ncpus,
            benchmark_flops=flops,
            on_fraction=on_fraction,
            active_fraction=cfg.active_fraction,
            active=death > horizon,
            cpu_times=[cpu] if cpu > 0 else [],
            flops_estimates=[cpu * flops * cfg.efficiency] if cpu > 0 else [],
        ))
    return HostLog(entries=entries, exported_at=horizon)
