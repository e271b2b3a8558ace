"""Operator command line: ``python -m voluntier <command> ...``.

Exit status is 0 on success, 1 on a usage error and 2 when a command fails.
"""
import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Optional

from common_utils.logger.client import LoggerClient

from voluntier import __version__
from voluntier.config import ClientSettings, ServerSettings, load_settings
from voluntier.errors import ConfigurationError, VoluntierError

logger = LoggerClient("voluntier-cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

PROJECT_ENV = """\
# Project server settings
host=0.0.0.0
port=5000
database_url=sqlite:///project.db
private_key_path=keys/project_ed25519.pem
public_key_path=keys/project_ed25519.pub
heartbeat_interval=10
dead_threshold=86400
transition_interval=5
"""

CLIENT_ENV = """\
# Volunteer client settings
server_url=http://localhost:5000
public_key_path=keys/project_ed25519.pub
data_dir=client-data
heartbeat_interval=10
"""


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that reports usage errors instead of exiting with status 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------- commands ----------

def cmd_project_init(args) -> int:
    from voluntier.proto import generate_keypair, save_keypair
    from voluntier.store import SqlEventStore

    root = Path(args.directory)
    if (root / "project.env").exists():
        raise ConfigurationError(f"{root} already holds a project")
    root.mkdir(parents=True, exist_ok=True)
    (root / "project.env").write_text(PROJECT_ENV, encoding="utf-8")
    (root / "client.env").write_text(CLIENT_ENV, encoding="utf-8")
    settings = load_settings(str(root / "project.env"), ServerSettings)
    save_keypair(generate_keypair(), settings.private_key_path, settings.public_key_path)
    SqlEventStore(settings.database_url).close()
    logger.info("Project initialized", {"directory": str(root.resolve())})
    print(f"Initialized project in {root}")
    return EXIT_OK


def _server(args):
    from voluntier.server import build_server

    return build_server(load_settings(args.config, ServerSettings))


def cmd_serve(args) -> int:
    from voluntier.server import serve

    serve(load_settings(args.config, ServerSettings))
    return EXIT_OK


def cmd_client_run(args) -> int:
    from voluntier.client import VolunteerClient

    client = VolunteerClient(load_settings(args.config, ClientSettings))
    client.work_loop(max_iterations=args.max_iterations)
    return EXIT_OK


def cmd_sweep_submit(args) -> int:
    from voluntier.proto import SweepSpec

    spec = SweepSpec.from_file(args.spec_file)
    server = _server(args)
    wu_ids = server.submit_sweep(spec)
    print(f"Sweep {spec.name}: {len(wu_ids)} work units created")
    return EXIT_OK


def cmd_sweep_status(args) -> int:
    status = _server(args).sweep_status(args.name)
    if args.format == "json":
        print(status.model_dump_json(indent=2))
        return EXIT_OK
    rows = [(wu.wu_id, wu.state.value, wu.outcome.value if wu.outcome else "", wu.canonical_result_id or "")
            for wu in status.work_units]
    if args.format == "csv":
        print("wu_id,state,outcome,canonical_result_id")
        for row in rows:
            print(",".join(row))
        return EXIT_OK
    print(f"Sweep {status.name}: {status.total} work units")
    print("  states:   " + ", ".join(f"{k}={v}" for k, v in sorted(status.states.items())))
    print("  outcomes: " + ", ".join(f"{k}={v}" for k, v in sorted(status.outcomes.items())))
    print(f"  runs={status.runs} perfect={status.perfect}")
    width = max([len(r[0]) for r in rows] + [5])
    for wu_id, state, outcome, canonical in rows:
        print(f"  {wu_id.ljust(width)}  {state:<11}  {outcome:<7}  {canonical}")
    return EXIT_OK


def cmd_report(args) -> int:
    from voluntier.metrics import HostLog, report

    server = _server(args)
    host_log = HostLog.from_file(args.hosts) if args.hosts else server.export_host_log()
    if args.sweep is not None and args.sweep not in server.sweeps:
        raise ConfigurationError(f"unknown sweep {args.sweep!r}")
    result = report(server.ledger, host_log=host_log, sweeps=server.sweeps, sweep=args.sweep)
    sys.stdout.write(result.to_csv() if args.format == "csv" else result.to_text())
    return EXIT_OK


def cmd_hosts_export(args) -> int:
    host_log = _server(args).export_host_log()
    text = host_log.to_json()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(f"Wrote {len(host_log)} hosts to {args.output}")
    else:
        print(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from voluntier.churnsim import ChurnConfig, predicted_vs_simulated, simulate

    cfg = ChurnConfig.from_file(args.config)
    if args.compare:
        comparison = predicted_vs_simulated(cfg)
        trace = comparison.trace
        summary = {**trace.summary(), "cp_formula_gflops": comparison.cp_formula, "ratio": comparison.ratio}
    else:
        trace = simulate(cfg)
        summary = trace.summary()
    if args.trace:
        Path(args.trace).write_text(trace.to_csv(), encoding="utf-8")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gp_run(args) -> int:
    from voluntier.gp.checkpoint import FileCheckpointSink
    from voluntier.gp.engine import resume_or_start, run_gp
    from voluntier.gp.params import GpParams

    params = GpParams.from_file(args.params)
    started = time.monotonic()
    if args.checkpoint:
        result = resume_or_start(params, FileCheckpointSink(args.checkpoint))
    else:
        result = run_gp(params)
    wall = time.monotonic() - started
    Path(args.output).write_bytes(result.to_artifact())
    best = result.best_report
    logger.info("Sequential run finished", {"params": args.params, "cpu_time": result.cpu_time, "wall_time": wall})
    print(f"best hits={best.hits}/{best.total_cases} raw={best.raw:g} adjusted={best.adjusted}")
    print(f"generations={result.generations_run} evaluations={result.evaluations}")
    print(f"t_seq={result.cpu_time:.3f}s cpu, {wall:.3f}s wall")
    return EXIT_OK


# ---------- parser ----------

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="voluntier", description="Volunteer computing for GP experiments")
    parser.add_argument("--version", action="version", version=f"voluntier {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    project = commands.add_parser("project", help="project administration")
    project_commands = project.add_subparsers(dest="project_command", required=True)
    init = project_commands.add_parser("init", help="create keys, settings and an empty event log")
    init.add_argument("directory")
    init.set_defaults(func=cmd_project_init)

    serve = commands.add_parser("serve", help="run the project server")
    serve.add_argument("--config", default="project.env")
    serve.set_defaults(func=cmd_serve)

    client = commands.add_parser("client", help="volunteer client")
    client_commands = client.add_subparsers(dest="client_command", required=True)
    run = client_commands.add_parser("run", help="fetch and execute work until interrupted")
    run.add_argument("--config", default="client.env")
    run.add_argument("--max-iterations", type=int, default=None)
    run.set_defaults(func=cmd_client_run)

    sweep = commands.add_parser("sweep", help="parameter sweeps")
    sweep_commands = sweep.add_subparsers(dest="sweep_command", required=True)
    submit = sweep_commands.add_parser("submit", help="expand a sweep spec into work units")
    submit.add_argument("spec_file")
    submit.add_argument("--config", default="project.env")
    submit.set_defaults(func=cmd_sweep_submit)
    status = sweep_commands.add_parser("status", help="work unit states of a sweep")
    status.add_argument("name")
    status.add_argument("--config", default="project.env")
    status.add_argument("--format", choices=("text", "csv", "json"), default="text")
    status.set_defaults(func=cmd_sweep_status)

    rep = commands.add_parser("report", help="speedup and computing power per sweep")
    rep.add_argument("--sweep", default=None)
    rep.add_argument("--config", default="project.env")
    rep.add_argument("--hosts", default=None, help="host log JSON to use instead of the live one")
    rep.add_argument("--format", choices=("text", "csv"), default="text")
    rep.set_defaults(func=cmd_report)

    hosts = commands.add_parser("hosts", help="host history")
    hosts_commands = hosts.add_subparsers(dest="hosts_command", required=True)
    export = hosts_commands.add_parser("export", help="write the host log used by the metrics")
    export.add_argument("--config", default="project.env")
    export.add_argument("--output", default=None)
    export.set_defaults(func=cmd_hosts_export)

    sim = commands.add_parser("simulate", help="host churn simulation")
    sim.add_argument("--config", required=True)
    sim.add_argument("--trace", default=None, help="write the host-count time series as CSV")
    sim.add_argument("--compare", action="store_true", help="also compare with the computing power formula")
    sim.set_defaults(func=cmd_simulate)

    gp = commands.add_parser("gp", help="standalone genetic programming")
    gp_commands = gp.add_subparsers(dest="gp_command", required=True)
    gp_run = gp_commands.add_parser("run", help="sequential baseline run")
    gp_run.add_argument("--params", required=True)
    gp_run.add_argument("--output", default="result.json")
    gp_run.add_argument("--checkpoint", default=None)
    gp_run.set_defaults(func=cmd_gp_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except VoluntierError as e:
        logger.error("Command failed", {"command": args.command, "error": str(e)})
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
