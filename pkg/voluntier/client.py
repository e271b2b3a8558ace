"""Volunteer client daemon.

One task at a time: register once, ask for work, verify every signed input,
run it (embedded GP or a wrapped external program) in ``slots/<result_id>/``
while a heartbeat thread reports progress, then upload. Results that cannot
be uploaded wait in ``outbox/`` and assignments survive a restart in their
slot directory.
"""
import json
import os
import shutil
import stat
import subprocess
import sys
import tarfile
import threading
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import requests
from common_utils.logger.client import LoggerClient
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from voluntier.config import ClientSettings
from voluntier.errors import ConfigurationError, ExecutionError, ProtocolError, TransportError, VoluntierError
from voluntier.gp.checkpoint import CheckpointPolicy, FileCheckpointSink
from voluntier.gp.engine import resume_or_start
from voluntier.gp.params import GpParams
from voluntier.proto import (
    ARCHIVE_SUFFIXES,
    PARAMS_INPUT,
    AppKind,
    AssignWork,
    ErrorReply,
    Heartbeat,
    HeartbeatAck,
    NoWork,
    Register,
    RegisterAck,
    RequestWork,
    SubmitAck,
    SubmitResult,
    decode,
    encode,
    load_public_key,
    verify,
)

logger = LoggerClient("voluntier-client")

FRAME_MEDIA_TYPE = "application/octet-stream"
ASSIGNMENT_FILE = "assignment.json"
RESULT_FILE = "result.out"


# ---------- transports ----------

class HttpTransport:
    def __init__(self, server_url: str, timeout: float = 10.0):
        self.server_url = server_url.rstrip("/")
        self.timeout = timeout

    def exchange(self, message):
        try:
            response = requests.post(
                f"{self.server_url}/rpc",
                data=encode(message),
                headers={"Content-Type": FRAME_MEDIA_TYPE},
                timeout=self.timeout,
            )
        except requests.RequestException as e:
            raise TransportError(f"Cannot reach {self.server_url}: {e}") from e
        if response.status_code >= 500:
            raise TransportError(f"Server error {response.status_code}")
        reply = decode(response.content)
        if isinstance(reply, ErrorReply):
            raise ProtocolError(reply.detail)
        return reply


class DirectTransport:
    """In-process transport that still goes through the frame codec; ``online=False`` simulates an outage."""

    def __init__(self, server, online: bool = True):
        self.server = server
        self.online = online

    def exchange(self, message):
        if not self.online:
            raise TransportError("server unreachable")
        reply = decode(self.server.handle_frame(encode(message)))
        if isinstance(reply, ErrorReply):
            raise ProtocolError(reply.detail)
        return reply


# ---------- helpers ----------

@dataclass
class Backoff:
    """Exponential delay for empty work requests: base, 2*base, 4*base ... capped."""

    base: float = 2.0
    cap: float = 60.0
    attempts: int = 0

    def reset(self) -> None:
        self.attempts = 0

    def next_delay(self) -> float:
        delay = min(self.cap, self.base * (2 ** self.attempts))
        self.attempts += 1
        return delay


class ProgressCell:
    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0.0

    def set(self, value: float) -> None:
        with self._lock:
            self._value = min(1.0, max(0.0, value))

    def get(self) -> float:
        with self._lock:
            return self._value


class HeartbeatSender(threading.Thread):
    """Sends the current progress every ``interval`` seconds; missed beats are retried on the next tick."""

    def __init__(self, transport, host_id: str, result_id: str, cell: ProgressCell, interval: float):
        super().__init__(name=f"heartbeat-{result_id}", daemon=True)
        self.transport = transport
        self.host_id = host_id
        self.result_id = result_id
        self.cell = cell
        self.interval = interval
        self.sent = 0
        self.missed = 0
        self._stop_event = threading.Event()

    def beat(self) -> Optional[HeartbeatAck]:
        try:
            ack = self.transport.exchange(Heartbeat(host_id=self.host_id, result_id=self.result_id,
                                                    progress_fraction=self.cell.get()))
        except (TransportError, ProtocolError) as e:
            self.missed += 1
            logger.debug("Heartbeat not delivered", {"result_id": self.result_id, "error": str(e)})
            return None
        self.sent += 1
        if isinstance(ack, HeartbeatAck) and not ack.accepted:
            logger.warning("Heartbeat refused", {"result_id": self.result_id, "warning": ack.warning})
        return ack

    def run(self) -> None:
        while not self._stop_event.wait(self.interval):
            self.beat()

    def stop(self) -> None:
        self._stop_event.set()
        if self.is_alive():
            self.join(timeout=self.interval + 1)


def measure_flops(size: int = 256, repeats: int = 3) -> float:
    """Floating-point rate of a dense matrix product, best of ``repeats``."""
    rng = np.random.default_rng(0)
    a = rng.random((size, size))
    b = rng.random((size, size))
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        np.dot(a, b)
        best = min(best, time.perf_counter() - started)
    return 2.0 * size ** 3 / max(best, 1e-9)


def _safe_extract(archive: Path, target: Path) -> None:
    root = target.resolve()
    if archive.name.endswith(".zip"):
        with zipfile.ZipFile(archive) as zf:
            for member in zf.namelist():
                if not (target / member).resolve().is_relative_to(root):
                    raise ExecutionError(f"archive member escapes the slot: {member}")
            zf.extractall(target)
        return
    with tarfile.open(archive) as tf:
        for member in tf.getmembers():
            if not (target / member.name).resolve().is_relative_to(root):
                raise ExecutionError(f"archive member escapes the slot: {member.name}")
        tf.extractall(target)


@dataclass
class WrappedRun:
    output: bytes
    elapsed: float
    trace: List[str] = field(default_factory=list)


# ---------- client ----------

class VolunteerClient:
    def __init__(self, settings: ClientSettings, transport=None, public_key: Optional[Ed25519PublicKey] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.settings = settings
        self.transport = transport or HttpTransport(settings.server_url, settings.request_timeout)
        self.public_key = public_key or load_public_key(settings.public_key_path)
        self.sleep = sleep
        self.backoff = Backoff(settings.backoff_base, settings.backoff_cap)
        self.data_dir = Path(settings.data_dir)
        self.slots_dir = self.data_dir / "slots"
        self.outbox_dir = self.data_dir / "outbox"
        for directory in (self.data_dir, self.slots_dir, self.outbox_dir):
            directory.mkdir(parents=True, exist_ok=True)
        self.benchmark_flops = settings.benchmark_flops or measure_flops()
        self.host_id: Optional[str] = self._load_host_id()
        self.trace: List[str] = []
        self.completed = 0

    # ---------- identity ----------

    def _load_host_id(self) -> Optional[str]:
        path = self.data_dir / "host.json"
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8")).get("host_id")
        return None

    def register(self) -> str:
        if self.host_id is None:
            ack = self.transport.exchange(Register(
                platform=self.settings.platform,
                ncpus=self.settings.ncpus,
                benchmark_flops=self.benchmark_flops,
            ))
            if not isinstance(ack, RegisterAck):
                raise ProtocolError(f"expected register_ack, got {ack.kind}")
            self.host_id = ack.host_id
            (self.data_dir / "host.json").write_text(json.dumps({"host_id": self.host_id}), encoding="utf-8")
            logger.info("Registered with project", {"host_id": self.host_id})
        return self.host_id

    def forget_registration(self) -> None:
        self.host_id = None
        (self.data_dir / "host.json").unlink(missing_ok=True)

    # ---------- main loop ----------

    def work_loop(self, max_iterations: Optional[int] = None, stop_event: Optional[threading.Event] = None) -> int:
        """Register, fetch, verify, execute, upload, repeat; returns the number of iterations run."""
        iterations = 0
        while max_iterations is None or iterations < max_iterations:
            if stop_event is not None and stop_event.is_set():
                break
            iterations += 1
            try:
                self.run_once()
            except TransportError as e:
                delay = self.backoff.next_delay()
                logger.warning("Server unreachable, backing off", {"error": str(e), "delay": delay})
                self.sleep(delay)
            except ProtocolError as e:
                logger.warning("Server refused request, registering again", {"error": str(e)})
                self.forget_registration()
        return iterations

    def run_once(self) -> str:
        self.register()
        self.flush_outbox()
        for assignment in self.pending_assignments():
            logger.info("Resuming assignment from slot", {"result_id": assignment.result_id})
            self.process(assignment)
        reply = self.transport.exchange(RequestWork(host_id=self.host_id))
        if isinstance(reply, NoWork):
            delay = self.backoff.next_delay()
            logger.debug("No work available", {"delay": delay})
            self.sleep(delay)
            return "no_work"
        if not isinstance(reply, AssignWork):
            raise ProtocolError(f"expected assign_work, got {reply.kind}")
        self.backoff.reset()
        slot = self.slots_dir / reply.result_id
        slot.mkdir(parents=True, exist_ok=True)
        (slot / ASSIGNMENT_FILE).write_text(reply.model_dump_json(), encoding="utf-8")
        self.process(reply)
        return "completed"

    def pending_assignments(self) -> List[AssignWork]:
        pending = []
        for slot in sorted(self.slots_dir.iterdir()):
            path = slot / ASSIGNMENT_FILE
            if path.is_file():
                pending.append(AssignWork.model_validate_json(path.read_text(encoding="utf-8")))
        return pending

    def verify_inputs(self, assignment: AssignWork) -> bool:
        """Every declared input must be present, match its digest and carry a valid project signature."""
        refs = {ref.name: ref.digest for ref in assignment.work_unit.input_refs}
        if set(refs) != set(assignment.inputs):
            return False
        for name, signed in assignment.inputs.items():
            if signed.digest != refs[name] or not verify(signed, self.public_key):
                return False
        job = assignment.job
        if assignment.work_unit.app is AppKind.WRAPPED and (job is None or job.program not in assignment.inputs):
            return False
        return True

    def process(self, assignment: AssignWork) -> SubmitResult:
        slot = self.slots_dir / assignment.result_id
        slot.mkdir(parents=True, exist_ok=True)
        if not self.verify_inputs(assignment):
            logger.error("Refusing unsigned or tampered payload", {"result_id": assignment.result_id,
                                                                   "wu_id": assignment.work_unit.wu_id})
            message = SubmitResult(host_id=self.host_id, result_id=assignment.result_id,
                                   error="payload signature verification failed")
            self._submit(message, slot)
            return message

        cell = ProgressCell()
        sender = HeartbeatSender(self.transport, self.host_id, assignment.result_id, cell,
                                 self.settings.heartbeat_interval)
        sender.start()
        try:
            if assignment.work_unit.app is AppKind.EMBEDDED_GP:
                output, cpu_time = self.execute_embedded(assignment, slot, cell)
            else:
                run = self.execute_wrapped(assignment, slot, cell)
                output, cpu_time = run.output, run.elapsed
            message = SubmitResult(host_id=self.host_id, result_id=assignment.result_id, output=output,
                                   cpu_time=cpu_time, flops_estimate=cpu_time * self.benchmark_flops)
        except (VoluntierError, OSError) as e:
            logger.warning("Task failed", {"result_id": assignment.result_id, "error": str(e),
                                           "kind": type(e).__name__})
            message = SubmitResult(host_id=self.host_id, result_id=assignment.result_id, error=str(e))
        finally:
            sender.stop()
        self._submit(message, slot)
        return message

    def _submit(self, message: SubmitResult, slot: Path) -> None:
        try:
            ack = self.transport.exchange(message)
            if isinstance(ack, SubmitAck) and not ack.accepted:
                logger.warning("Upload refused", {"result_id": message.result_id, "detail": ack.detail})
            else:
                logger.info("Result uploaded", {"result_id": message.result_id, "error": message.error})
        except TransportError as e:
            (self.outbox_dir / f"{message.result_id}.json").write_text(message.model_dump_json(), encoding="utf-8")
            logger.warning("Upload deferred to outbox", {"result_id": message.result_id, "error": str(e)})
        shutil.rmtree(slot, ignore_errors=True)
        self.completed += 1

    def flush_outbox(self) -> int:
        sent = 0
        for path in sorted(self.outbox_dir.glob("*.json")):
            message = SubmitResult.model_validate_json(path.read_text(encoding="utf-8"))
            self.transport.exchange(message)
            path.unlink()
            sent += 1
        if sent:
            logger.info("Outbox flushed", {"count": sent})
        return sent

    # ---------- execution ----------

    def execute_embedded(self, assignment: AssignWork, slot: Path, cell: ProgressCell) -> Tuple[bytes, float]:
        """Run the GP engine on the work unit's parameters, resuming from the slot checkpoint when it matches."""
        try:
            params = GpParams.from_text(assignment.inputs[PARAMS_INPUT].payload.decode("utf-8"))
        except (KeyError, UnicodeDecodeError, ConfigurationError) as e:
            raise ExecutionError(f"unusable parameter input: {e}") from e
        (slot / PARAMS_INPUT).write_text(params.to_text(), encoding="utf-8")
        policy = CheckpointPolicy(self.settings.checkpoint_generations, self.settings.checkpoint_seconds)
        result = resume_or_start(params, FileCheckpointSink(str(slot / "checkpoint")), policy=policy,
                                 on_generation=lambda done, total: cell.set(done / total))
        output = result.to_artifact()
        (slot / RESULT_FILE).write_bytes(output)
        return output, result.cpu_time

    def _command(self, slot: Path, program: str) -> List[str]:
        path = slot / program
        if program.endswith(".py"):
            return [sys.executable, str(path)]
        path.chmod(path.stat().st_mode | stat.S_IXUSR)
        return [str(path)]

    def execute_wrapped(self, assignment: AssignWork, slot: Path, cell: ProgressCell) -> WrappedRun:
        """Unpack, launch (with the checkpoint when one exists), wait for the solution file, copy the output."""
        job = assignment.job
        wu = assignment.work_unit
        self.trace = []
        for name, signed in sorted(assignment.inputs.items()):
            target = slot / name
            target.write_bytes(signed.payload)
            if name.endswith(ARCHIVE_SUFFIXES):
                _safe_extract(target, slot)
        self.trace.append("unpack")

        command = self._command(slot, job.program) + list(job.args) + list(wu.command_args)
        checkpoint = slot / job.checkpoint_file if job.checkpoint_file else None
        if checkpoint is not None and checkpoint.exists():
            command += [arg.format(checkpoint=job.checkpoint_file) for arg in job.resume_args]
            self.trace.append("launch-with-checkpoint")
        else:
            self.trace.append("launch")
        solution = slot / job.solution_file
        solution.unlink(missing_ok=True)
        wall_cap = wu.deadline_seconds * self.settings.wall_time_factor
        started = time.monotonic()
        logger.info("Launching wrapped program", {"result_id": assignment.result_id, "command": command})
        with open(slot / "stdout.txt", "ab") as out, open(slot / "stderr.txt", "ab") as err:
            process = subprocess.Popen(command, cwd=slot, stdout=out, stderr=err)
            try:
                while not solution.exists():
                    if process.poll() is not None and not solution.exists():
                        self.trace.append("exit-without-solution")
                        raise ExecutionError(f"program exited with status {process.returncode} "
                                             f"without writing {job.solution_file}")
                    if time.monotonic() - started > wall_cap:
                        self.trace.append("wall-time-exceeded")
                        raise ExecutionError(f"wall-time cap of {wall_cap:.0f}s exceeded")
                    if job.expected_output_bytes:
                        produced = slot / job.outputs[0]
                        if produced.exists():
                            cell.set(min(0.99, produced.stat().st_size / job.expected_output_bytes))
                    time.sleep(self.settings.poll_interval)
                self.trace.append("wait-solution")
                try:
                    process.wait(timeout=max(1.0, wall_cap - (time.monotonic() - started)))
                except subprocess.TimeoutExpired:
                    logger.warning("Program still running after writing its solution file",
                                   {"result_id": assignment.result_id})
            finally:
                if process.poll() is None:
                    process.kill()
                    process.wait()
        elapsed = time.monotonic() - started

        produced = slot / job.outputs[0]
        if not produced.is_file():
            self.trace.append("missing-output")
            raise ExecutionError(f"declared output {job.outputs[0]} was not produced")
        shutil.copyfile(produced, slot / RESULT_FILE)
        self.trace.append("copy-output")
        output = (slot / RESULT_FILE).read_bytes()
        cell.set(1.0)
        self.trace.append("complete")
        return WrappedRun(output=output, elapsed=elapsed, trace=list(self.trace))


def run_client(settings: ClientSettings, stop_event: Optional[threading.Event] = None) -> int:
    client = VolunteerClient(settings)
    logger.info("Client starting", {"server_url": settings.server_url, "data_dir": settings.data_dir,
                                    "pid": os.getpid()})
    return client.work_loop(stop_event=stop_event)
