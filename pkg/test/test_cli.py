import json

import pytest

from voluntier.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from voluntier.metrics import HostLog

GP_PARAMS = """\
problem=multiplexer
address_bits=2
population_size=20
generations=3
max_initial_depth=4
seed=4
"""

SWEEP = {
    "name": "mux",
    "base_params": {"problem": "multiplexer", "address_bits": 1, "population_size": 10, "generations": 2,
                    "max_initial_depth": 4},
    "replicates": 100,
}


@pytest.fixture
def project(tmp_path, capsys):
    """An initialized project directory; returns its settings file."""
    assert main(["project", "init", str(tmp_path / "proj")]) == EXIT_OK
    capsys.readouterr()
    return str(tmp_path / "proj" / "project.env")


@pytest.fixture
def submitted(project, tmp_path, capsys):
    spec = tmp_path / "sweep.json"
    spec.write_text(json.dumps(SWEEP))
    assert main(["sweep", "submit", str(spec), "--config", project]) == EXIT_OK
    capsys.readouterr()
    return project


class TestUsage:
    def test_no_command(self, capsys):
        assert main([]) == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_missing_argument(self):
        assert main(["sweep", "status"]) == EXIT_USAGE

    def test_unknown_command(self):
        assert main(["launch"]) == EXIT_USAGE


class TestProjectInit:
    def test_creates_project(self, tmp_path, capsys):
        root = tmp_path / "proj"
        assert main(["project", "init", str(root)]) == EXIT_OK
        assert (root / "project.env").is_file()
        assert (root / "client.env").is_file()
        assert (root / "keys" / "project_ed25519.pem").is_file()
        assert (root / "keys" / "project_ed25519.pub").is_file()
        assert (root / "project.db").is_file()
        assert "Initialized project" in capsys.readouterr().out

    def test_refuses_existing_project(self, project, tmp_path, capsys):
        assert main(["project", "init", str(tmp_path / "proj")]) == EXIT_FAILURE
        assert "already holds a project" in capsys.readouterr().err


class TestGpRun:
    def test_deterministic_artifact(self, tmp_path, capsys):
        params = tmp_path / "params.txt"
        params.write_text(GP_PARAMS)
        first, second = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["gp", "run", "--params", str(params), "--output", str(first)]) == EXIT_OK
        assert main(["gp", "run", "--params", str(params), "--output", str(second)]) == EXIT_OK
        assert first.read_bytes() == second.read_bytes()
        assert "best hits=" in capsys.readouterr().out

    def test_checkpointed_run_matches(self, tmp_path):
        params = tmp_path / "params.txt"
        params.write_text(GP_PARAMS)
        plain, checkpointed = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["gp", "run", "--params", str(params), "--output", str(plain)]) == EXIT_OK
        assert main(["gp", "run", "--params", str(params), "--output", str(checkpointed),
                     "--checkpoint", str(tmp_path / "run.ckpt")]) == EXIT_OK
        assert plain.read_bytes() == checkpointed.read_bytes()

    def test_missing_params(self, tmp_path):
        assert main(["gp", "run", "--params", str(tmp_path / "absent.txt")]) == EXIT_FAILURE

    def test_invalid_params(self, tmp_path):
        params = tmp_path / "params.txt"
        params.write_text("population_size=1\n")
        assert main(["gp", "run", "--params", str(params)]) == EXIT_FAILURE


class TestSweeps:
    def test_submit_reports_count(self, project, tmp_path, capsys):
        spec = tmp_path / "sweep.json"
        spec.write_text(json.dumps(SWEEP))
        assert main(["sweep", "submit", str(spec), "--config", project]) == EXIT_OK
        assert "100 work units created" in capsys.readouterr().out

    def test_identical_resubmission(self, submitted, tmp_path, capsys):
        assert main(["sweep", "submit", str(tmp_path / "sweep.json"), "--config", submitted]) == EXIT_OK
        assert "0 work units created" in capsys.readouterr().out

    def test_conflicting_resubmission(self, submitted, tmp_path):
        spec = tmp_path / "sweep.json"
        spec.write_text(json.dumps({**SWEEP, "replicates": 5}))
        assert main(["sweep", "submit", str(spec), "--config", submitted]) == EXIT_FAILURE

    def test_status_csv(self, submitted, capsys):
        assert main(["sweep", "status", "mux", "--config", submitted, "--format", "csv"]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 101
        assert lines[0] == "wu_id,state,outcome,canonical_result_id"
        assert lines[1] == "mux_rep0,unsent,,"

    def test_status_json(self, submitted, capsys):
        assert main(["sweep", "status", "mux", "--config", submitted, "--format", "json"]) == EXIT_OK
        status = json.loads(capsys.readouterr().out)
        assert status["total"] == 100
        assert status["states"] == {"unsent": 100}

    def test_status_unknown_sweep(self, project):
        assert main(["sweep", "status", "nope", "--config", project]) == EXIT_FAILURE

    def test_missing_settings(self, tmp_path):
        assert main(["sweep", "status", "mux", "--config", str(tmp_path / "project.env")]) == EXIT_FAILURE


class TestReport:
    def test_unknown_sweep(self, submitted):
        assert main(["report", "--sweep", "ant", "--config", submitted]) == EXIT_FAILURE

    def test_empty_ledger(self, submitted, capsys):
        assert main(["report", "--config", submitted, "--format", "csv"]) == EXIT_OK
        assert capsys.readouterr().out.startswith("sweep,runs,perfect,")


class TestHostsExport:
    def test_writes_host_log(self, project, tmp_path, capsys):
        output = tmp_path / "hosts.json"
        assert main(["hosts", "export", "--config", project, "--output", str(output)]) == EXIT_OK
        assert len(HostLog.from_file(str(output))) == 0
        assert "Wrote 0 hosts" in capsys.readouterr().out


class TestSimulate:
    @pytest.fixture
    def churn_config(self, tmp_path):
        path = tmp_path / "churn.json"
        path.write_text(json.dumps({
            "arrival_rate": 0,
            "seed_hosts": [{"benchmark_flops": 2 ** 30}],
            "work_size": 2 ** 36,
            "work_units": 10,
            "horizon_days": 1,
        }))
        return str(path)

    def test_summary_and_trace(self, churn_config, tmp_path, capsys):
        trace = tmp_path / "trace.csv"
        assert main(["simulate", "--config", churn_config, "--trace", str(trace)]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["completed_wus"] == 10
        assert trace.read_text().splitlines()[0] == "time_days,hosts,available,busy_slots"

    def test_compare(self, churn_config, capsys):
        assert main(["simulate", "--config", churn_config, "--compare"]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["ratio"] == 1.0

    def test_missing_config(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "churn.json")]) == EXIT_FAILURE
