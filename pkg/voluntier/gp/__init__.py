from voluntier.gp.checkpoint import Checkpoint, CheckpointPolicy, FileCheckpointSink, checkpoint_load, checkpoint_save
from voluntier.gp.engine import GpRunResult, breed, init_population, read_artifact, resume_or_start, run_gp
from voluntier.gp.params import GpParams
from voluntier.gp.primitives import PrimitiveSet, ProblemKind
from voluntier.gp.problems import EvalReport, evaluate, evaluate_multiplexer, evaluate_santa_fe, load_trail
from voluntier.gp.rng import PortableRng
from voluntier.gp.tree import ProgramTree

__all__ = [
    "Checkpoint", "CheckpointPolicy", "FileCheckpointSink", "checkpoint_load", "checkpoint_save",
    "GpRunResult", "breed", "init_population", "read_artifact", "resume_or_start", "run_gp",
    "GpParams", "PrimitiveSet", "ProblemKind", "EvalReport", "evaluate", "evaluate_multiplexer",
    "evaluate_santa_fe", "load_trail", "PortableRng", "ProgramTree",
]
