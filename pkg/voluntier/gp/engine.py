"""Generational tree GP: ramped half-and-half initialisation, tournament
selection, subtree crossover and subtree mutation.

Every random decision goes through one PortableRng in a fixed order, so a
(params, seed) pair determines the whole run, and a checkpoint taken between
generations resumes into exactly the same sequence of draws.
"""
import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from common_utils.logger.client import LoggerClient

from voluntier.encoding import canonical_json
from voluntier.errors import CheckpointError, ConfigurationError, ResumeRefusedError
from voluntier.gp.checkpoint import Checkpoint, CheckpointPolicy
from voluntier.gp.params import GpParams
from voluntier.gp.primitives import PrimitiveSet
from voluntier.gp.problems import EvalReport, Trail, evaluate
from voluntier.gp.rng import PortableRng
from voluntier.gp.tree import ProgramTree

ARTIFACT_FORMAT = "voluntier.gp-result.v1"
UNIQUE_TRIES = 10
OPERATOR_TRIES = 5
INTERNAL_POINT_BIAS = 0.9

logger = LoggerClient("voluntier-gp")


# ---------- Initialisation ----------

def _generate(pset: PrimitiveSet, rng: PortableRng, max_depth: int, full: bool,
              out: List[str], depth: int = 0, force_function: bool = False) -> None:
    functions = pset.function_names
    if depth >= max_depth or not functions:
        out.append(rng.choice(pset.terminal_names))
        return
    if full or force_function:
        name = rng.choice(functions)
    else:
        name = rng.choice(functions + pset.terminal_names)
    out.append(name)
    for _ in range(pset.arities[name]):
        _generate(pset, rng, max_depth, full, out, depth + 1)


def random_tree(pset: PrimitiveSet, rng: PortableRng, max_depth: int, full: bool = False,
                force_function: bool = False) -> ProgramTree:
    nodes: List[str] = []
    _generate(pset, rng, max_depth, full, nodes, force_function=force_function)
    return ProgramTree(tuple(nodes))


def init_population(params: GpParams, pset: PrimitiveSet, rng: PortableRng) -> List[ProgramTree]:
    """Ramped half-and-half over depths min_initial_depth..max_initial_depth.

    Individuals alternate full/grow and cycle through the depth ramp; a
    duplicate is redrawn up to UNIQUE_TRIES times before it is accepted.
    """
    if params.min_initial_depth > 0 and not pset.functions:
        raise ConfigurationError(f"{pset.problem_id} has no functions to build depth {params.min_initial_depth} trees")
    depths = list(range(params.min_initial_depth, params.max_initial_depth + 1))
    population: List[ProgramTree] = []
    seen = set()
    for i in range(params.population_size):
        depth = depths[(i // 2) % len(depths)]
        full = i % 2 == 0
        tree = None
        for _ in range(UNIQUE_TRIES):
            tree = random_tree(pset, rng, depth, full=full, force_function=depth > 0)
            if tree.nodes not in seen:
                break
        seen.add(tree.nodes)
        population.append(tree)
    return population


# ---------- Variation ----------

def _selection_keys(population: Sequence[ProgramTree], reports: Sequence[EvalReport]) -> List[Tuple[int, int]]:
    return [(report.raw_errors, len(tree)) for tree, report in zip(population, reports)]


def tournament(keys: Sequence[Tuple[int, int]], size: int, rng: PortableRng) -> int:
    """Index of the tournament winner; fewer errors, then smaller tree, then first drawn."""
    winner = rng.below(len(keys))
    for _ in range(size - 1):
        contender = rng.below(len(keys))
        if keys[contender] < keys[winner]:
            winner = contender
    return winner


def _crossover_point(tree: ProgramTree, pset: PrimitiveSet, rng: PortableRng) -> int:
    arities = pset.arities
    internal = [i for i, name in enumerate(tree.nodes) if arities[name]]
    if internal and rng.random() < INTERNAL_POINT_BIAS:
        return rng.choice(internal)
    leaves = [i for i, name in enumerate(tree.nodes) if not arities[name]]
    return rng.choice(leaves)


def crossover(receiver: ProgramTree, donor: ProgramTree, pset: PrimitiveSet, rng: PortableRng) -> ProgramTree:
    """One child: ``receiver`` with a subtree replaced by a subtree of ``donor``."""
    i = _crossover_point(receiver, pset, rng)
    j = _crossover_point(donor, pset, rng)
    return receiver.replace(i, receiver.subtree_end(i, pset), donor.nodes[j:donor.subtree_end(j, pset)])


def mutate(tree: ProgramTree, pset: PrimitiveSet, rng: PortableRng, mutation_depth: int) -> ProgramTree:
    i = rng.below(len(tree))
    subtree = random_tree(pset, rng, mutation_depth)
    return tree.replace(i, tree.subtree_end(i, pset), subtree.nodes)


def breed(population: Sequence[ProgramTree], reports: Sequence[EvalReport], params: GpParams,
          pset: PrimitiveSet, rng: PortableRng) -> List[ProgramTree]:
    """Next generation of the same size; offspring deeper than max_depth are redrawn, then fall back to a copy."""
    keys = _selection_keys(population, reports)
    mutation_cut = params.crossover_prob + params.mutation_prob
    children: List[ProgramTree] = []
    while len(children) < len(population):
        draw = rng.random()
        if draw < params.crossover_prob:
            receiver = population[tournament(keys, params.tournament_size, rng)]
            donor = population[tournament(keys, params.tournament_size, rng)]
            child = receiver
            for _ in range(OPERATOR_TRIES):
                candidate = crossover(receiver, donor, pset, rng)
                if candidate.depth(pset) <= params.max_depth:
                    child = candidate
                    break
        elif draw < mutation_cut:
            parent = population[tournament(keys, params.tournament_size, rng)]
            child = parent
            for _ in range(OPERATOR_TRIES):
                candidate = mutate(parent, pset, rng, params.mutation_depth)
                if candidate.depth(pset) <= params.max_depth:
                    child = candidate
                    break
        else:
            child = population[tournament(keys, params.tournament_size, rng)]
        children.append(child)
    return children


# ---------- Runs ----------

@dataclass
class GpRunResult:
    params: GpParams
    pset: PrimitiveSet
    best: ProgramTree
    best_report: EvalReport
    stats: List[Dict[str, Any]] = field(default_factory=list)
    evaluations: int = 0
    cpu_time: float = 0.0

    @property
    def generations_run(self) -> int:
        return len(self.stats)

    def to_artifact(self) -> bytes:
        """Canonical result document; cpu_time is host dependent and left out."""
        document = {
            "format": ARTIFACT_FORMAT,
            "params_digest": self.params.digest(),
            "seed": self.params.seed,
            "problem": self.pset.problem_id,
            "evaluations": self.evaluations,
            "generations": self.stats,
            "best": {"tree": self.best.to_sexpr(self.pset), **self.best_report.as_dict()},
        }
        return canonical_json(document) + b"\n"


def read_artifact(data: bytes) -> Dict[str, Any]:
    """Parse a result document, raising ValueError if it is not one."""
    document = json.loads(data.decode("utf-8"))
    if not isinstance(document, dict) or document.get("format") != ARTIFACT_FORMAT:
        raise ValueError("not a GP result document")
    best = document["best"]
    for key in ("hits", "total_cases"):
        if not isinstance(best.get(key), int):
            raise ValueError(f"best.{key} missing")
    return document


def _best_of(population: Sequence[ProgramTree], reports: Sequence[EvalReport]) -> int:
    keys = _selection_keys(population, reports)
    return min(range(len(keys)), key=keys.__getitem__)


def run_gp(params: GpParams, pset: Optional[PrimitiveSet] = None, checkpoint_sink=None, *,
           resume: Optional[Checkpoint] = None, policy: Optional[CheckpointPolicy] = None,
           on_generation: Optional[Callable[[int, int], None]] = None,
           trail: Optional[Trail] = None) -> GpRunResult:
    """Run (or continue) a generational GP run.

    ``checkpoint_sink`` receives a Checkpoint whenever ``policy`` says one is
    due; ``on_generation(done, total)`` is called after each evaluated
    generation. The last generation is evaluated but not bred.
    """
    pset = pset or params.primitive_set()
    digest = params.digest()
    started = time.thread_time()
    if resume is not None:
        if resume.params_digest != digest:
            raise ResumeRefusedError("checkpoint was written for different parameters")
        rng = PortableRng.from_state(resume.rng_state)
        population = [ProgramTree.from_prefix(text, pset) for text in resume.population]
        generation = resume.generation
        stats = [dict(entry) for entry in resume.stats]
        evaluations = resume.evaluations
        prior_cpu = resume.cpu_time
        best = ProgramTree.from_prefix(resume.best["tree"], pset) if resume.best else None
        best_report = EvalReport(resume.best["hits"], resume.best["total_cases"]) if resume.best else None
        logger.info("Resuming GP run", {"generation": generation, "params_digest": digest})
    else:
        rng = PortableRng(params.seed)
        population = init_population(params, pset, rng)
        generation = 0
        stats = []
        evaluations = 0
        prior_cpu = 0.0
        best, best_report = None, None
    policy = policy or CheckpointPolicy()
    policy.mark(generation)

    while True:
        reports = [evaluate(tree, pset, params.steps_limit, trail) for tree in population]
        evaluations += len(population)
        leader = _best_of(population, reports)
        if best_report is None or reports[leader].raw_errors < best_report.raw_errors:
            best, best_report = population[leader], reports[leader]
        stats.append({
            "generation": generation,
            "best_hits": reports[leader].hits,
            "best_raw": reports[leader].raw,
            "mean_raw": float(Fraction(sum(r.raw_errors for r in reports), len(reports))),
        })
        logger.debug("Generation evaluated", stats[-1])
        generation += 1
        if on_generation is not None:
            on_generation(generation, params.generations)
        if generation >= params.generations or (params.stop_on_ideal and best_report.perfect):
            break
        population = breed(population, reports, params, pset, rng)
        if checkpoint_sink is not None and policy.due(generation):
            checkpoint_sink.save(Checkpoint(
                generation=generation,
                population=[tree.to_prefix() for tree in population],
                rng_state=rng.get_state(),
                best={"tree": best.to_prefix(), "hits": best_report.hits, "total_cases": best_report.total_cases},
                stats=stats,
                evaluations=evaluations,
                params_digest=digest,
                cpu_time=prior_cpu + time.thread_time() - started,
            ))
            policy.mark(generation)

    return GpRunResult(
        params=params,
        pset=pset,
        best=best,
        best_report=best_report,
        stats=stats,
        evaluations=evaluations,
        cpu_time=prior_cpu + time.thread_time() - started,
    )


def resume_or_start(params: GpParams, sink, **kwargs) -> GpRunResult:
    """Continue from the sink's checkpoint when it is usable, otherwise start fresh."""
    resume = None
    try:
        resume = sink.load()
        if resume is not None and resume.params_digest != params.digest():
            raise ResumeRefusedError("checkpoint was written for different parameters")
    except CheckpointError as e:
        logger.warning("Discarding unusable checkpoint", {"error": str(e)})
        resume = None
    return run_gp(params, checkpoint_sink=sink, resume=resume, **kwargs)
