import hashlib

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from voluntier.config import read_key_values
from voluntier.errors import ConfigurationError
from voluntier.gp.primitives import MAX_MULTIPLEXER_VARIABLES, PrimitiveSet, ProblemKind

PROBABILITY_TOLERANCE = 1e-9


class GpParams(BaseModel):
    """Run parameters; defaults are Koza's 11-multiplexer settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    problem: ProblemKind = ProblemKind.MULTIPLEXER
    address_bits: int = Field(3, ge=1)
    population_size: int = Field(4000, ge=2)
    generations: int = Field(50, ge=1)
    crossover_prob: float = Field(0.9, ge=0.0, le=1.0)
    mutation_prob: float = Field(0.0, ge=0.0, le=1.0)
    reproduction_prob: float = Field(0.1, ge=0.0, le=1.0)
    tournament_size: int = Field(7, ge=1)
    max_depth: int = Field(17, ge=1)
    min_initial_depth: int = Field(2, ge=0)
    max_initial_depth: int = Field(6, ge=0)
    mutation_depth: int = Field(4, ge=0)
    steps_limit: int = Field(400, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    stop_on_ideal: bool = False

    @model_validator(mode="after")
    def _check_consistency(self):
        total = self.crossover_prob + self.mutation_prob + self.reproduction_prob
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"operator probabilities sum to {total}, expected 1")
        if self.max_initial_depth > self.max_depth:
            raise ValueError("max_initial_depth exceeds max_depth")
        if self.min_initial_depth > self.max_initial_depth:
            raise ValueError("min_initial_depth exceeds max_initial_depth")
        k = self.address_bits
        if self.problem is ProblemKind.MULTIPLEXER and (
                k >= MAX_MULTIPLEXER_VARIABLES or 2 ** k + k > MAX_MULTIPLEXER_VARIABLES):
            raise ValueError(f"a {k}-address multiplexer has more than {MAX_MULTIPLEXER_VARIABLES} inputs")
        return self

    def primitive_set(self) -> PrimitiveSet:
        if self.problem is ProblemKind.SANTA_FE:
            return PrimitiveSet.santa_fe()
        return PrimitiveSet.multiplexer(self.address_bits)

    def to_text(self) -> str:
        lines = []
        for key, value in sorted(self.model_dump(mode="json").items()):
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "GpParams":
        try:
            return cls.model_validate(read_key_values(text))
        except ValidationError as e:
            raise ConfigurationError(f"Invalid GP parameters: {e}") from e

    @classmethod
    def from_file(cls, path: str) -> "GpParams":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_text(fh.read())
        except FileNotFoundError:
            raise ConfigurationError(f"GP parameter file not found: {path}") from None
