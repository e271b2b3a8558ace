"""Domain records, wire messages, sweep expansion and payload signing.

Every message travels as one frame: a 4-byte big-endian body length followed
by the canonical JSON body. Field names are fixed by PROTOCOL.md.
"""
import base64
import binascii
import hashlib
import itertools
import json
import re
import struct
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Type, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, ValidationError, model_validator

from voluntier.encoding import canonical_json
from voluntier.errors import ConfigurationError, ProtocolError
from voluntier.gp.params import GpParams

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024
PARAMS_INPUT = "params"
ARCHIVE_SUFFIXES = (".zip", ".tar", ".tar.gz", ".tgz")
_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def _b64_in(value: Any) -> Any:
    if isinstance(value, str):
        try:
            return base64.b64decode(value, validate=True)
        except binascii.Error as e:
            raise ValueError(f"invalid base64: {e}") from e
    return value


WireBytes = Annotated[
    bytes,
    BeforeValidator(_b64_in),
    PlainSerializer(lambda v: base64.b64encode(v).decode("ascii"), return_type=str, when_used="json"),
]


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class _Record(BaseModel):
    model_config = ConfigDict(frozen=True, extra="ignore")


# ---------- Enumerations ----------

class AppKind(str, Enum):
    EMBEDDED_GP = "embedded-gp"
    WRAPPED = "wrapped"


class WuState(str, Enum):
    UNSENT = "unsent"
    IN_PROGRESS = "in_progress"
    OVER = "over"


class ResultState(str, Enum):
    ASSIGNED = "assigned"
    RUNNING = "running"
    UPLOADED = "uploaded"
    VALID = "valid"
    INVALID = "invalid"
    TIMED_OUT = "timed_out"
    ERROR = "error"


LIVE_RESULT_STATES = (ResultState.ASSIGNED, ResultState.RUNNING)


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILED = "failed"


class Platform(str, Enum):
    LINUX_X86_64 = "linux-x86_64"
    LINUX_AARCH64 = "linux-aarch64"
    WINDOWS_X86_64 = "windows-x86_64"
    MACOS_X86_64 = "macos-x86_64"
    MACOS_AARCH64 = "macos-aarch64"


# ---------- Domain records ----------

class PayloadRef(_Record):
    name: str
    digest: str


class JobDescriptor(_Record):
    """How to run an unmodified program: files in, files out, and the completion marker."""

    program: str
    inputs: List[str] = Field(default_factory=list)
    outputs: List[str] = Field(min_length=1)
    args: List[str] = Field(default_factory=list)
    checkpoint_file: Optional[str] = None
    solution_file: str
    resume_args: List[str] = Field(default_factory=lambda: ["--checkpoint", "{checkpoint}"])
    expected_output_bytes: Optional[int] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_files(self):
        if self.solution_file in self.inputs or self.solution_file == self.program:
            raise ValueError("solution_file must differ from the program and its inputs")
        return self


class WorkUnit(_Record):
    wu_id: str
    sweep: str
    app: AppKind
    input_refs: List[PayloadRef] = Field(default_factory=list)
    command_args: List[str] = Field(default_factory=list)
    seed: Optional[int] = None
    target_replicas: int = Field(1, ge=1)
    min_quorum: int = Field(1, ge=1)
    max_error_results: int = Field(3, ge=1)
    deadline_seconds: float = Field(3600.0, gt=0)
    job: Optional[JobDescriptor] = None
    state: WuState = WuState.UNSENT
    canonical_result_id: Optional[str] = None
    outcome: Optional[Outcome] = None
    flagged: bool = False
    issued: int = 0
    pending_replicas: int = 0
    error_count: int = 0
    seq: int = 0
    created_at: float = 0.0

    @model_validator(mode="after")
    def _check_quorum(self):
        if self.min_quorum > self.target_replicas:
            raise ValueError("min_quorum exceeds target_replicas")
        return self


class ResultRecord(_Record):
    result_id: str
    wu_id: str
    host_id: str
    state: ResultState = ResultState.ASSIGNED
    output_digest: Optional[str] = None
    cpu_time: float = 0.0
    flops_estimate: float = 0.0
    assigned_at: float
    deadline_at: float
    last_heartbeat: float
    completed_at: Optional[float] = None
    progress: float = 0.0
    error: Optional[str] = None


class HostRecord(_Record):
    host_id: str
    platform: Platform
    ncpus: int = Field(ge=1)
    benchmark_flops: float = Field(gt=0)
    first_contact: float
    last_contact: float
    on_seconds: float = Field(0.0, ge=0.0)
    busy_seconds: float = Field(0.0, ge=0.0)
    active: bool = True

    @model_validator(mode="after")
    def _check_contacts(self):
        if self.last_contact < self.first_contact:
            raise ValueError("last_contact precedes first_contact")
        return self

    @property
    def on_fraction(self) -> float:
        """Share of the contact span covered by gaps short enough to count as powered on."""
        life = self.last_contact - self.first_contact
        return 1.0 if life <= 0 else min(1.0, self.on_seconds / life)

    @property
    def active_fraction(self) -> float:
        """Share of on-time, per CPU, spent holding a replica that was later reported."""
        if self.on_seconds <= 0:
            return 1.0
        return min(1.0, self.busy_seconds / (self.on_seconds * self.ncpus))


class SweepSpec(_Record):
    """A parameter sweep: base parameters x swept dimensions x replicates."""

    name: str
    app: AppKind = AppKind.EMBEDDED_GP
    base_params: Dict[str, Any] = Field(default_factory=dict)
    dimensions: Dict[str, List[Any]] = Field(default_factory=dict)
    replicates: int = Field(1, ge=1)
    seed_base: int = Field(0, ge=0)
    target_replicas: int = Field(1, ge=1)
    min_quorum: int = Field(1, ge=1)
    max_error_results: int = Field(3, ge=1)
    deadline_seconds: float = Field(3600.0, gt=0)
    job: Optional[JobDescriptor] = None
    files: Dict[str, WireBytes] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_spec(self):
        if not _NAME.match(self.name):
            raise ValueError(f"sweep name {self.name!r} must be letters, digits, '.', '_' or '-'")
        if self.min_quorum > self.target_replicas:
            raise ValueError("min_quorum exceeds target_replicas")
        if self.app is AppKind.WRAPPED:
            if self.job is None:
                raise ValueError("wrapped sweeps need a job descriptor")
            missing = [n for n in [self.job.program, *self.job.inputs] if n not in self.files]
            if missing:
                raise ValueError(f"wrapped sweep is missing files: {missing}")
        return self

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.model_dump(mode="json")))

    @classmethod
    def from_json(cls, text: str, base_dir: Optional[Path] = None) -> "SweepSpec":
        """Parse a sweep spec document; ``file_paths`` entries are read relative to ``base_dir``."""
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Sweep spec is not valid JSON: {e}") from e
        if not isinstance(document, dict):
            raise ConfigurationError("Sweep spec must be a JSON object")
        file_paths = document.pop("file_paths", {})
        if file_paths:
            base = base_dir or Path(".")
            files = dict(document.get("files", {}))
            for name, rel in file_paths.items():
                path = base / rel
                if not path.is_file():
                    raise ConfigurationError(f"Sweep file not found: {path}")
                files[name] = path.read_bytes()
            document["files"] = files
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid sweep spec: {e}") from e

    @classmethod
    def from_file(cls, path: str) -> "SweepSpec":
        spec_path = Path(path)
        if not spec_path.is_file():
            raise ConfigurationError(f"Sweep spec not found: {path}")
        return cls.from_json(spec_path.read_text(encoding="utf-8"), spec_path.resolve().parent)


def _label(value: Any) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "", str(value))


def expand_sweep_with_payloads(spec: SweepSpec) -> List[Tuple[WorkUnit, Dict[str, bytes]]]:
    """Deterministic expansion; dimension names in sorted order, replicates innermost."""
    names = sorted(spec.dimensions)
    for name in names:
        if not spec.dimensions[name]:
            raise ConfigurationError(f"Sweep dimension {name!r} has no values")
    expanded = []
    index = 0
    for combo in itertools.product(*(spec.dimensions[n] for n in names)):
        point = dict(zip(names, combo))
        label = "-".join(f"{_label(n)}{_label(v)}" for n, v in point.items())
        for replicate in range(spec.replicates):
            seed = spec.seed_base + index
            index += 1
            wu_id = "_".join(part for part in (spec.name, label, f"rep{replicate}") if part)
            if spec.app is AppKind.EMBEDDED_GP:
                try:
                    params = GpParams(**{**spec.base_params, **point, "seed": seed})
                except ValidationError as e:
                    raise ConfigurationError(f"Sweep point {point} is not a valid parameter set: {e}") from e
                payloads = {PARAMS_INPUT: params.to_text().encode("utf-8")}
                args = ["--params", PARAMS_INPUT]
            else:
                payloads = {name: spec.files[name] for name in [spec.job.program, *spec.job.inputs]}
                settings = {**spec.base_params, **point}
                args = [f"{key}={settings[key]}" for key in sorted(settings)] + [f"seed={seed}"]
            work_unit = WorkUnit(
                wu_id=wu_id,
                sweep=spec.name,
                app=spec.app,
                input_refs=[PayloadRef(name=n, digest=sha256_hex(data)) for n, data in sorted(payloads.items())],
                command_args=args,
                seed=seed,
                target_replicas=spec.target_replicas,
                min_quorum=spec.min_quorum,
                max_error_results=spec.max_error_results,
                deadline_seconds=spec.deadline_seconds,
                job=spec.job,
            )
            expanded.append((work_unit, payloads))
    return expanded


def expand_sweep(spec: SweepSpec) -> List[WorkUnit]:
    return [work_unit for work_unit, _ in expand_sweep_with_payloads(spec)]


class SweepRecord(_Record):
    name: str
    digest: str
    app: AppKind
    work_units: int
    target_replicas: int = 1
    submitted_at: float


class AssimilationEntry(_Record):
    """One canonical run in the experiment ledger; fitness fields are absent for opaque outputs."""

    sweep: str
    wu_id: str
    result_id: str
    host_id: str
    seed: Optional[int] = None
    hits: Optional[int] = None
    raw: Optional[float] = None
    adjusted: Optional[float] = None
    total_cases: Optional[int] = None
    perfect: bool = False
    cpu_time: float = 0.0
    flops_estimate: float = 0.0
    assigned_at: float
    uploaded_at: float


# ---------- Signing ----------

def key_id(public_key: Ed25519PublicKey) -> str:
    raw = public_key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return sha256_hex(raw)[:16]


class SignedPayload(_Record):
    payload: WireBytes
    digest: str
    signature: WireBytes
    key_id: str


def sign(payload: bytes, private_key: Ed25519PrivateKey) -> SignedPayload:
    """Ed25519 signature over the hex SHA-256 digest of the payload."""
    digest = sha256_hex(payload)
    return SignedPayload(
        payload=payload,
        digest=digest,
        signature=private_key.sign(digest.encode("ascii")),
        key_id=key_id(private_key.public_key()),
    )


def verify(signed: SignedPayload, public_key: Ed25519PublicKey) -> bool:
    if sha256_hex(signed.payload) != signed.digest:
        return False
    if signed.key_id != key_id(public_key):
        return False
    try:
        public_key.verify(signed.signature, signed.digest.encode("ascii"))
    except InvalidSignature:
        return False
    return True


def generate_keypair() -> Ed25519PrivateKey:
    return Ed25519PrivateKey.generate()


def save_keypair(private_key: Ed25519PrivateKey, private_path: str, public_path: str) -> None:
    Path(private_path).parent.mkdir(parents=True, exist_ok=True)
    Path(public_path).parent.mkdir(parents=True, exist_ok=True)
    Path(private_path).write_bytes(private_key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()))
    Path(public_path).write_bytes(private_key.public_key().public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo))


def load_private_key(path: str) -> Ed25519PrivateKey:
    try:
        key = serialization.load_pem_private_key(Path(path).read_bytes(), password=None)
    except FileNotFoundError:
        raise ConfigurationError(f"Project private key not found: {path}") from None
    except ValueError as e:
        raise ConfigurationError(f"Unreadable private key {path}: {e}") from e
    if not isinstance(key, Ed25519PrivateKey):
        raise ConfigurationError(f"{path} is not an Ed25519 private key")
    return key


def load_public_key(path: str) -> Ed25519PublicKey:
    try:
        key = serialization.load_pem_public_key(Path(path).read_bytes())
    except FileNotFoundError:
        raise ConfigurationError(f"Project public key not found: {path}") from None
    except ValueError as e:
        raise ConfigurationError(f"Unreadable public key {path}: {e}") from e
    if not isinstance(key, Ed25519PublicKey):
        raise ConfigurationError(f"{path} is not an Ed25519 public key")
    return key


# ---------- Wire messages ----------

class Register(_Record):
    kind: Literal["register"] = "register"
    platform: Platform
    ncpus: int = Field(ge=1)
    benchmark_flops: float = Field(gt=0)


class RegisterAck(_Record):
    kind: Literal["register_ack"] = "register_ack"
    host_id: str


class RequestWork(_Record):
    kind: Literal["request_work"] = "request_work"
    host_id: str


class AssignWork(_Record):
    kind: Literal["assign_work"] = "assign_work"
    result_id: str
    work_unit: WorkUnit
    inputs: Dict[str, SignedPayload]
    job: Optional[JobDescriptor] = None


class NoWork(_Record):
    kind: Literal["no_work"] = "no_work"


class Heartbeat(_Record):
    kind: Literal["heartbeat"] = "heartbeat"
    host_id: str
    result_id: str
    progress_fraction: float = Field(0.0, ge=0.0, le=1.0)


class HeartbeatAck(_Record):
    kind: Literal["heartbeat_ack"] = "heartbeat_ack"
    accepted: bool = True
    warning: Optional[str] = None


class SubmitResult(_Record):
    kind: Literal["submit_result"] = "submit_result"
    host_id: str
    result_id: str
    output: WireBytes = b""
    cpu_time: float = Field(0.0, ge=0.0)
    flops_estimate: float = Field(0.0, ge=0.0)
    error: Optional[str] = None


class SubmitAck(_Record):
    kind: Literal["submit_ack"] = "submit_ack"
    accepted: bool
    detail: Optional[str] = None


class ErrorReply(_Record):
    kind: Literal["error"] = "error"
    code: str
    detail: str


Message = Union[Register, RegisterAck, RequestWork, AssignWork, NoWork, Heartbeat, HeartbeatAck,
                SubmitResult, SubmitAck, ErrorReply]

MESSAGE_TYPES: Dict[str, Type[_Record]] = {
    model.model_fields["kind"].default: model
    for model in (Register, RegisterAck, RequestWork, AssignWork, NoWork, Heartbeat, HeartbeatAck,
                  SubmitResult, SubmitAck, ErrorReply)
}


def frame(body: bytes) -> bytes:
    return HEADER.pack(len(body)) + body


def unframe(data: bytes) -> bytes:
    """Body of exactly one frame; anything short, long or oversized is a ProtocolError."""
    if len(data) < HEADER.size:
        raise ProtocolError("frame shorter than its length prefix", offset=len(data))
    (length,) = HEADER.unpack_from(data)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} exceeds limit", offset=0)
    end = HEADER.size + length
    if len(data) < end:
        raise ProtocolError(f"frame truncated: expected {length} body bytes", offset=len(data))
    if len(data) > end:
        raise ProtocolError("trailing bytes after frame", offset=end)
    return data[HEADER.size:end]


def read_document(data: bytes) -> Dict[str, Any]:
    body = unframe(data)
    try:
        document = json.loads(body.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise ProtocolError("frame body is not UTF-8", offset=HEADER.size + e.start) from e
    except json.JSONDecodeError as e:
        raise ProtocolError(f"frame body is not JSON: {e.msg}", offset=HEADER.size + e.pos) from e
    if not isinstance(document, dict):
        raise ProtocolError("frame body is not an object", offset=HEADER.size)
    return document


def encode(message: BaseModel) -> bytes:
    return frame(canonical_json(message.model_dump(mode="json")))


def decode(data: bytes) -> Message:
    document = read_document(data)
    kind = document.get("kind")
    model = MESSAGE_TYPES.get(kind) if isinstance(kind, str) else None
    if model is None:
        raise ProtocolError(f"unknown message kind {kind!r}", offset=HEADER.size)
    try:
        return model.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ProtocolError(f"invalid {kind} message: {where}: {first['msg']}", offset=HEADER.size) from e
