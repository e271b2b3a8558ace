import math

import pytest
from pydantic import ValidationError

from voluntier.errors import ConfigurationError, DomainError
from voluntier.metrics import (
    FACTOR_NAMES,
    REPORT_COLUMNS,
    SECONDS_PER_DAY,
    FactorSet,
    HostLog,
    HostLogEntry,
    computing_power,
    estimate_factors,
    report,
    speedup,
)
from voluntier.proto import AssimilationEntry, SweepRecord

DAY = SECONDS_PER_DAY


def entry(host_id, first, last, **extra):
    return HostLogEntry(host_id=host_id, first_contact=first, last_contact=last,
                        benchmark_flops=extra.pop("benchmark_flops", 1e9), **extra)


@pytest.fixture
def three_hosts():
    """One host still active at the end and two that left early."""
    return HostLog(
        entries=[
            entry("a", 0.0, 10 * DAY, ncpus=1, benchmark_flops=1e9, cpu_times=[100.0], flops_estimates=[80e9]),
            entry("b", 0.0, 2 * DAY, ncpus=2, benchmark_flops=2e9, on_fraction=0.5),
            entry("c", 1 * DAY, 5 * DAY, ncpus=3, benchmark_flops=3e9, on_fraction=0.75,
                  cpu_times=[50.0, 50.0], flops_estimates=[75e9, 75e9]),
        ],
        exported_at=10 * DAY,
    )


def ledger_entry(wu_id, host_id, assigned, uploaded, cpu, perfect, sweep="mux"):
    return AssimilationEntry(sweep=sweep, wu_id=wu_id, result_id=f"res-{wu_id}", host_id=host_id,
                             hits=2048 if perfect else 1500, total_cases=2048, perfect=perfect,
                             cpu_time=cpu, assigned_at=assigned, uploaded_at=uploaded)


class TestSpeedup:
    @pytest.mark.parametrize("t_seq,t_b,expected,digits", [
        (4250, 1548, 2.7455, 4),
        (650, 395, 1.6456, 4),
        (9200, 2356, 3.9049, 4),
        (4250, 1033, 4.1142, 4),
        (9200, 1623, 5.6685, 4),
        (134078, 462259, 0.29, 2),
        (1305330, 669759, 1.95, 2),
        (215 * 3600, 48 * 3600, 4.48, 2),
    ])
    def test_published_accelerations(self, t_seq, t_b, expected, digits):
        assert round(speedup(t_seq, t_b), digits) == expected

    def test_zero_work(self):
        assert speedup(0, 5) == 0

    @pytest.mark.parametrize("t_seq,t_b", [(1, 0), (1, -3), (-1, 5)])
    def test_domain(self, t_seq, t_b):
        with pytest.raises(DomainError):
            speedup(t_seq, t_b)


class TestComputingPower:
    def test_product_of_factors(self):
        factors = FactorSet(2, 5, 2, 1.5, 0.8, 0.9, 0.7, 1, 1)
        assert computing_power(factors) == pytest.approx(15.12)

    def test_redundancy_and_share_scale_linearly(self):
        base = FactorSet(2, 5, 2, 1.5, 0.8, 0.9, 0.7)
        halved = FactorSet(2, 5, 2, 1.5, 0.8, 0.9, 0.7, x_redundancy=0.5, x_share=0.5)
        assert computing_power(halved) == pytest.approx(computing_power(base) / 4)

    def test_zero_factor(self):
        assert computing_power(FactorSet(0, 5, 2, 1.5, 0.8, 0.9, 0.7)) == 0

    @pytest.mark.parametrize("bad", [-1.0, math.nan, math.inf])
    def test_invalid_factor(self, bad):
        with pytest.raises(DomainError):
            computing_power(FactorSet(2, bad, 2, 1.5, 0.8, 0.9, 0.7))

    def test_factor_names(self):
        assert FACTOR_NAMES[0] == "x_arrival"
        assert len(FACTOR_NAMES) == 9
        assert set(FactorSet(1, 1, 1, 1, 1, 1, 1).as_dict()) == set(FACTOR_NAMES)


class TestEstimateFactors:
    def test_mle_estimates(self, three_hosts):
        factors = estimate_factors(three_hosts, project_duration=10)
        assert factors.x_arrival == pytest.approx(0.3)
        assert factors.x_life == pytest.approx(8.0)
        assert factors.x_ncpus == pytest.approx(2.0)
        assert factors.x_flops == pytest.approx(2.0)
        assert factors.x_eff == pytest.approx(0.65)
        assert factors.x_onfrac == pytest.approx(0.75)
        assert factors.x_active == 1.0

    def test_departed_estimator(self, three_hosts):
        factors = estimate_factors(three_hosts, project_duration=10, life_estimator="departed")
        assert factors.x_life == pytest.approx(3.0)

    def test_no_departures_uses_censored_mean(self):
        log = HostLog(entries=[entry("a", 0.0, 4 * DAY), entry("b", 2 * DAY, 4 * DAY)], exported_at=4 * DAY)
        assert estimate_factors(log, project_duration=4).x_life == pytest.approx(3.0)

    def test_redundancy_passed_through(self, three_hosts):
        factors = estimate_factors(three_hosts, 10, redundancy=0.5, share=0.25)
        assert (factors.x_redundancy, factors.x_share) == (0.5, 0.25)

    def test_empty_log(self):
        with pytest.raises(DomainError):
            estimate_factors(HostLog(), 10)

    def test_zero_duration(self, three_hosts):
        with pytest.raises(DomainError):
            estimate_factors(three_hosts, 0)

    def test_unknown_estimator(self, three_hosts):
        with pytest.raises(ConfigurationError):
            estimate_factors(three_hosts, 10, life_estimator="kaplan-meier")


class TestHostLog:
    def test_contact_order_enforced(self):
        with pytest.raises(ValidationError):
            entry("a", 10.0, 5.0)

    def test_work_lists_must_pair(self):
        with pytest.raises(ValidationError):
            entry("a", 0.0, 5.0, cpu_times=[1.0])

    def test_file_round_trip(self, three_hosts, tmp_path):
        path = tmp_path / "hosts.json"
        path.write_text(three_hosts.to_json())
        assert HostLog.from_file(str(path)) == three_hosts

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            HostLog.from_file(str(tmp_path / "absent.json"))

    def test_invalid_file(self, tmp_path):
        path = tmp_path / "hosts.json"
        path.write_text('{"entries": [{"host_id": "a"}]}')
        with pytest.raises(ConfigurationError):
            HostLog.from_file(str(path))

    def test_restricted_to(self, three_hosts):
        assert [e.host_id for e in three_hosts.restricted_to({"a", "c", "z"}).entries] == ["a", "c"]


class TestReport:
    @pytest.fixture
    def ledger(self):
        return [
            ledger_entry("w1", "h1", 150.0, 400.0, 300.0, True),
            ledger_entry("w2", "h2", 160.0, 500.0, 500.0, False),
            ledger_entry("x1", "h1", 600.0, 700.0, 10.0, False, sweep="other"),
        ]

    @pytest.fixture
    def host_log(self):
        return HostLog(entries=[entry("h1", 120.0, 700.0), entry("h2", 130.0, 500.0), entry("h3", 50.0, 60.0)],
                       exported_at=800.0)

    @pytest.fixture
    def sweeps(self):
        return {"mux": SweepRecord(name="mux", digest="d", app="embedded-gp", work_units=2, submitted_at=100.0)}

    def test_row_values(self, ledger, host_log, sweeps):
        (row,) = report(ledger, host_log, sweeps, sweep="mux").rows
        assert row.runs == 2
        assert row.perfect == 1
        assert row.t_seq == 800.0
        assert row.t_b == 380.0
        assert row.acc == pytest.approx(800.0 / 380.0)
        assert row.mean_cpu_time == 400.0
        assert row.mean_time_to_perfect == 800.0
        assert row.cp_gflops > 0

    def test_without_host_log(self, ledger, sweeps):
        (row,) = report(ledger, sweeps=sweeps, sweep="mux").rows
        assert row.t_b == 350.0
        assert row.cp_gflops is None

    def test_one_row_per_sweep(self, ledger, host_log):
        rows = report(ledger, host_log).rows
        assert [row.sweep for row in rows] == ["mux", "other"]
        assert rows[1].mean_time_to_perfect is None

    def test_csv(self, ledger, sweeps):
        lines = report(ledger, sweeps=sweeps).to_csv().splitlines()
        assert lines[0] == ",".join(REPORT_COLUMNS)
        assert lines[1].startswith("mux,2,1,800.0,350.0,")
        assert lines[2].endswith(",")

    def test_text(self, ledger, sweeps):
        text = report(ledger, sweeps=sweeps).to_text()
        header, first, second = text.splitlines()
        assert header.split() == list(REPORT_COLUMNS)
        assert first.split()[:3] == ["mux", "2", "1"]
        assert second.split()[-1] == "-"

    def test_empty_ledger(self):
        assert report([]).rows == []
        assert report([]).to_csv() == ",".join(REPORT_COLUMNS) + "\n"
