import pytest

from voluntier.churnsim import (
    SAMPLE_COLUMNS,
    ChurnConfig,
    SeedHost,
    SimPolicy,
    factors_from_config,
    predicted_vs_simulated,
    simulate,
    synthesize_host_log,
)
from voluntier.errors import ConfigurationError
from voluntier.metrics import computing_power, estimate_factors

# 2**36 flop on a 2**30 flop/s host takes exactly 64 seconds
BINARY_FLOPS = 2.0 ** 30
BINARY_WORK = 2.0 ** 36


def dedicated(hosts=1, **overrides):
    """Always-on immortal hosts and no arrivals."""
    values = dict(arrival_rate=0.0, seed_hosts=[SeedHost(benchmark_flops=BINARY_FLOPS)] * hosts,
                  work_size=BINARY_WORK, horizon_days=1.0)
    values.update(overrides)
    return ChurnConfig(**values)


def churning(**overrides):
    """A small population that comes and goes, with tasks of one CPU hour."""
    values = dict(arrival_rate=4.0, mean_lifetime_days=3.0, mean_on_days=0.25, mean_off_days=0.25,
                  flops_median=1e9, work_size=3.6e12, horizon_days=4.0, seed=5,
                  policy=SimPolicy(deadline_days=0.1, transition_interval_hours=0.5))
    values.update(overrides)
    return ChurnConfig(**values)


class TestDedicatedHosts:
    def test_formula_matches_exactly(self):
        comparison = predicted_vs_simulated(dedicated())
        assert comparison.ratio == 1.0
        assert comparison.cp_formula == BINARY_FLOPS / 1e9

    def test_fixed_batch_on_one_host(self):
        trace = simulate(dedicated(work_units=10))
        assert trace.completed_wus == 10
        assert trace.wall_span == 640.0
        assert trace.issued == trace.completed_replicas == 10
        assert trace.unfinished == 0

    def test_fixed_batch_on_two_hosts(self):
        trace = simulate(dedicated(hosts=2, work_units=10))
        assert trace.completed_wus == 10
        assert trace.wall_span == 320.0

    def test_redundancy_halves_useful_power(self):
        single = simulate(dedicated(hosts=2))
        doubled_cfg = dedicated(hosts=2, policy=SimPolicy(target_replicas=2, min_quorum=2))
        doubled = simulate(doubled_cfg)
        assert doubled.cp_sim == pytest.approx(single.cp_sim / 2, rel=1e-2)
        assert factors_from_config(doubled_cfg).x_redundancy == 0.5
        assert predicted_vs_simulated(doubled_cfg).ratio == pytest.approx(1.0, rel=1e-2)

    def test_samples_csv(self):
        lines = simulate(dedicated(work_units=3)).to_csv().splitlines()
        assert lines[0] == ",".join(SAMPLE_COLUMNS)
        assert lines[1] == "0.000000,1,1,1"
        assert len(lines) == 1 + 24


class TestChurn:
    def test_deterministic(self):
        first, second = simulate(churning()), simulate(churning())
        assert first.events == second.events
        assert first.samples == second.samples
        assert first.summary() == second.summary()

    def test_seed_changes_run(self):
        assert simulate(churning()).events != simulate(churning(seed=6)).events

    def test_every_replica_accounted_for(self):
        trace = simulate(churning())
        assert trace.issued > 0
        assert trace.conserved

    def test_events_are_causal(self):
        trace = simulate(churning())
        times = [event.t for event in trace.events]
        assert times == sorted(times)
        assigned = {}
        for event in trace.events:
            if event.kind == "assign":
                assert event.detail not in assigned
                assigned[event.detail] = event.t
            elif event.kind in ("complete", "lost", "timeout"):
                assert event.detail in assigned
                assert event.t >= assigned[event.detail]

    def test_short_deadline_reissues(self):
        trace = simulate(churning())
        assert trace.timed_out > 0
        assert trace.reissued_wus > 0

    def test_events_can_be_skipped(self):
        trace = simulate(churning(record_events=False))
        assert trace.events == []
        assert trace.summary() == simulate(churning()).summary()

    def test_exports_host_log(self):
        trace = simulate(churning())
        assert len(trace.host_log) == trace.hosts_seen


class TestConfig:
    def test_zero_horizon_rejected(self):
        with pytest.raises(ConfigurationError):
            ChurnConfig.from_json('{"horizon_days": 0}')

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            ChurnConfig.from_json('{"arrivals": 3}')

    def test_bad_json(self):
        with pytest.raises(ConfigurationError):
            ChurnConfig.from_json("{")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ChurnConfig.from_file(str(tmp_path / "churn.json"))

    def test_from_file(self, tmp_path):
        path = tmp_path / "churn.json"
        path.write_text('{"arrival_rate": 2.5, "ncpus_weights": {"1": 1, "4": 3}, "policy": {"target_replicas": 2}}')
        cfg = ChurnConfig.from_file(str(path))
        assert cfg.arrival_rate == 2.5
        assert cfg.mean_ncpus == 3.25
        assert cfg.policy.target_replicas == 2

    def test_horizon_too_short_for_steady_state(self):
        with pytest.raises(ConfigurationError):
            predicted_vs_simulated(ChurnConfig(arrival_rate=10, mean_lifetime_days=10, horizon_days=30))

    def test_no_hosts(self):
        with pytest.raises(ConfigurationError):
            factors_from_config(ChurnConfig(arrival_rate=0))


class TestFactorsFromConfig:
    def test_arrival_process(self):
        cfg = ChurnConfig(arrival_rate=10, mean_lifetime_days=10, mean_on_days=1, mean_off_days=1,
                          active_fraction=0.8, efficiency=0.9, ncpus_weights={1: 1, 3: 1})
        factors = factors_from_config(cfg)
        assert factors.x_arrival == 10
        assert factors.x_life == pytest.approx(10)
        assert factors.x_ncpus == pytest.approx(2)
        assert factors.x_flops == pytest.approx(1.0)
        assert factors.x_eff == 0.9
        assert factors.x_onfrac == pytest.approx(0.5)
        assert factors.x_active == pytest.approx(0.8)
        assert computing_power(factors) == pytest.approx(10 * 10 * 2 * 1.0 * 0.9 * 0.5 * 0.8)

    def test_seeded_hosts(self):
        factors = factors_from_config(dedicated(hosts=3))
        assert factors.x_arrival * factors.x_life == pytest.approx(3)

    def test_synthetic_log_recovers_factors(self):
        cfg = ChurnConfig(arrival_rate=20, mean_lifetime_days=5, horizon_days=100, efficiency=0.5, seed=3)
        log = synthesize_host_log(cfg)
        estimated = estimate_factors(log, cfg.horizon_days)
        assert estimated.x_arrival == pytest.approx(21, rel=0.1)
        assert estimated.x_life == pytest.approx(5, rel=0.1)
        assert estimated.x_flops == pytest.approx(1.0)
        assert estimated.x_eff == pytest.approx(0.5)
        assert estimated.x_onfrac == 1.0

    def test_synthetic_log_is_deterministic(self):
        cfg = ChurnConfig(arrival_rate=5, horizon_days=20, seed=9)
        assert synthesize_host_log(cfg) == synthesize_host_log(cfg)


@pytest.mark.slow
class TestSteadyState:
    @pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
    def test_ten_thousand_hosts(self, seed):
        cfg = ChurnConfig(arrival_rate=10000, mean_lifetime_days=1.0, horizon_days=10.0, work_size=4.32e12,
                          sample_interval_hours=24, record_events=False, seed=seed)
        comparison = predicted_vs_simulated(cfg)
        assert comparison.ratio == pytest.approx(1.0, abs=0.05)
