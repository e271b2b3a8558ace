"""Speedup, computing power and the reports built from an experiment ledger.

Computing power is the nine-factor product

    CP = arrival * life * ncpus * flops * eff * onfrac * active * redundancy * share

with arrival in hosts/day, life in days and flops in GFLOPS per CPU, so
arrival * life is the expected number of live hosts and CP is in GFLOPS.
"""
import csv
import io
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, List, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from voluntier.errors import ConfigurationError, DomainError
from voluntier.proto import AssimilationEntry, SweepRecord

SECONDS_PER_DAY = 86400.0
GIGA = 1e9
LIFE_ESTIMATORS = ("mle", "departed")


def speedup(t_seq: float, t_b: float) -> float:
    """Acceleration of a volunteer run over the sequential baseline."""
    if t_b <= 0:
        raise DomainError(f"wall time must be positive, got {t_b}")
    if t_seq < 0:
        raise DomainError(f"sequential time cannot be negative, got {t_seq}")
    return t_seq / t_b


@dataclass(frozen=True)
class FactorSet:
    x_arrival: float
    x_life: float
    x_ncpus: float
    x_flops: float
    x_eff: float
    x_onfrac: float
    x_active: float
    x_redundancy: float = 1.0
    x_share: float = 1.0

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


FACTOR_NAMES = tuple(f.name for f in fields(FactorSet))


def computing_power(factors: FactorSet) -> float:
    """Available GFLOPS: the plain product of the nine factors, in declaration order."""
    product = 1.0
    for name in FACTOR_NAMES:
        value = getattr(factors, name)
        if not math.isfinite(value) or value < 0:
            raise DomainError(f"{name} must be a finite non-negative number, got {value}")
        product *= value
    return product


class HostLogEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    host_id: str
    first_contact: float
    last_contact: float
    ncpus: int = Field(1, ge=1)
    benchmark_flops: float = Field(gt=0)
    on_fraction: float = Field(1.0, ge=0.0, le=1.0)
    active_fraction: float = Field(1.0, ge=0.0, le=1.0)
    active: bool = True
    cpu_times: List[float] = Field(default_factory=list)
    flops_estimates: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_order(self):
        if self.last_contact < self.first_contact:
            raise ValueError(f"host {self.host_id}: last_contact precedes first_contact")
        if len(self.cpu_times) != len(self.flops_estimates):
            raise ValueError(f"host {self.host_id}: cpu_times and flops_estimates differ in length")
        return self

    @property
    def life_seconds(self) -> float:
        return self.last_contact - self.first_contact


class HostLog(BaseModel):
    """Per-host contact history; timestamps are seconds on the server clock."""

    entries: List[HostLogEntry] = Field(default_factory=list)
    exported_at: Optional[float] = None

    def __len__(self) -> int:
        return len(self.entries)

    def restricted_to(self, host_ids: Iterable[str]) -> "HostLog":
        wanted = set(host_ids)
        return HostLog(entries=[e for e in self.entries if e.host_id in wanted], exported_at=self.exported_at)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_file(cls, path: str) -> "HostLog":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.model_validate_json(fh.read())
        except FileNotFoundError:
            raise ConfigurationError(f"Host log not found: {path}") from None
        except ValidationError as e:
            raise ConfigurationError(f"Invalid host log {path}: {e}") from e


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def estimate_factors(log: HostLog, project_duration: float, redundancy: float = 1.0, share: float = 1.0,
                     project_end: Optional[float] = None, departed_after_days: float = 1.0,
                     life_estimator: str = "mle") -> FactorSet:
    """Estimate the factors from a host log covering ``project_duration`` days.

    A host silent for at least ``departed_after_days`` before the end of the
    project has departed and its life is last minus first contact; other hosts
    are censored at the end. ``mle`` divides total observed life by the number
    of departures (exponential lifetimes); ``departed`` averages the departed
    hosts' lives only. Either falls back to the mean censored life when no
    host has departed.
    """
    if project_duration <= 0:
        raise DomainError(f"project duration must be positive, got {project_duration}")
    if not log.entries:
        raise DomainError("cannot estimate factors from an empty host log")
    if life_estimator not in LIFE_ESTIMATORS:
        raise ConfigurationError(f"unknown lifetime estimator {life_estimator!r}")
    end = project_end
    if end is None:
        end = log.exported_at if log.exported_at is not None else max(e.last_contact for e in log.entries)

    departed_lives: List[float] = []
    observed: List[float] = []
    for entry in log.entries:
        if end - entry.last_contact >= departed_after_days * SECONDS_PER_DAY:
            life = entry.life_seconds / SECONDS_PER_DAY
            departed_lives.append(life)
        else:
            life = max(end - entry.first_contact, entry.life_seconds) / SECONDS_PER_DAY
        observed.append(life)
    if not departed_lives:
        x_life = _mean(observed)
    elif life_estimator == "mle":
        x_life = sum(observed) / len(departed_lives)
    else:
        x_life = _mean(departed_lives)

    efficiencies = []
    for entry in log.entries:
        cpu = sum(entry.cpu_times)
        if cpu > 0:
            efficiencies.append(sum(entry.flops_estimates) / cpu / entry.benchmark_flops)

    return FactorSet(
        x_arrival=len(log.entries) / project_duration,
        x_life=x_life,
        x_ncpus=_mean([e.ncpus for e in log.entries]),
        x_flops=_mean([e.benchmark_flops for e in log.entries]) / GIGA,
        x_eff=_mean(efficiencies) if efficiencies else 1.0,
        x_onfrac=_mean([e.on_fraction for e in log.entries]),
        x_active=_mean([e.active_fraction for e in log.entries]),
        x_redundancy=redundancy,
        x_share=share,
    )


# ---------- Reports ----------

REPORT_COLUMNS = ("sweep", "runs", "perfect", "t_seq", "t_b", "acc", "cp_gflops", "mean_cpu_time",
                  "mean_time_to_perfect")


@dataclass(frozen=True)
class ReportRow:
    sweep: str
    runs: int
    perfect: int
    t_seq: float
    t_b: Optional[float]
    acc: Optional[float]
    cp_gflops: Optional[float]
    mean_cpu_time: float
    mean_time_to_perfect: Optional[float]


@dataclass
class Report:
    rows: List[ReportRow]

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow(["" if getattr(row, c) is None else getattr(row, c) for c in REPORT_COLUMNS])
        return buffer.getvalue()

    def to_text(self) -> str:
        formats = {"t_seq": "{:.1f}", "t_b": "{:.1f}", "acc": "{:.4f}", "cp_gflops": "{:.3f}",
                   "mean_cpu_time": "{:.2f}", "mean_time_to_perfect": "{:.2f}"}
        table = [list(REPORT_COLUMNS)]
        for row in self.rows:
            cells = []
            for column in REPORT_COLUMNS:
                value = getattr(row, column)
                if value is None:
                    cells.append("-")
                else:
                    cells.append(formats.get(column, "{}").format(value))
            table.append(cells)
        widths = [max(len(line[i]) for line in table) for i in range(len(REPORT_COLUMNS))]
        lines = []
        for line in table:
            lines.append("  ".join(cell.rjust(widths[i]) if i else cell.ljust(widths[i]) for i, cell in enumerate(line)))
        return "\n".join(lines) + "\n"


def _sweep_row(name: str, entries: List[AssimilationEntry], sweep: Optional[SweepRecord],
               host_log: Optional[HostLog]) -> ReportRow:
    t_seq = sum(e.cpu_time for e in entries)
    perfect = sum(1 for e in entries if e.perfect)
    contributors = {e.host_id for e in entries}
    start = min(e.assigned_at for e in entries)
    hosts = host_log.restricted_to(contributors) if host_log is not None else None
    if hosts is not None and hosts.entries:
        start = min(h.first_contact for h in hosts.entries)
    if sweep is not None:
        start = max(start, sweep.submitted_at)
    end = max(e.uploaded_at for e in entries)
    t_b = end - start
    acc = speedup(t_seq, t_b) if t_b > 0 else None
    cp = None
    if hosts is not None and hosts.entries and t_b > 0:
        redundancy = 1.0 / sweep.target_replicas if sweep is not None else 1.0
        cp = computing_power(estimate_factors(hosts, t_b / SECONDS_PER_DAY, redundancy=redundancy, project_end=end))
    return ReportRow(
        sweep=name,
        runs=len(entries),
        perfect=perfect,
        t_seq=t_seq,
        t_b=t_b,
        acc=acc,
        cp_gflops=cp,
        mean_cpu_time=t_seq / len(entries),
        mean_time_to_perfect=t_seq / perfect if perfect else None,
    )


def report(ledger: Sequence[AssimilationEntry], host_log: Optional[HostLog] = None,
           sweeps: Optional[Dict[str, SweepRecord]] = None, sweep: Optional[str] = None) -> Report:
    """One row per sweep: T_seq, T_B, acceleration and computing power.

    T_seq sums the runs' CPU times. T_B runs from the later of the sweep's
    submission and the first contact of any host that contributed a run, to
    the last upload. Mean time to a perfect solution is T_seq divided by the
    number of perfect runs.
    """
    grouped: Dict[str, List[AssimilationEntry]] = defaultdict(list)
    for entry in ledger:
        if sweep is None or entry.sweep == sweep:
            grouped[entry.sweep].append(entry)
    sweeps = sweeps or {}
    return Report(rows=[_sweep_row(name, grouped[name], sweeps.get(name), host_log) for name in sorted(grouped)])
