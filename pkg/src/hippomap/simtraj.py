"""Synthetic trajectories and a simulated reasoning task.

Concepts are fixed runs of unique tokens, so the stub embedder puts every
concept in its own cluster while a few shared noise tokens per step keep
instances of one concept from being identical.

Trajectory outcomes are drawn first; each step's concept is then drawn with
weight ``p_c`` on successful trajectories and ``1 - p_c`` on failed ones, which
makes the per-visit success frequency of concept ``c`` converge to ``p_c``.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .engine import Generation
from .ingest import Problem, TrajectoryRecord

NOISE_POOL = 64


class SimConfigError(ValueError):
    pass


def concept_tokens(concept: int, size: int) -> list[str]:
    return [f"k{concept}x{j}" for j in range(size)]


def concept_text(concept: int, rng: random.Random, size: int = 12, noise_tokens: int = 1) -> str:
    words = concept_tokens(concept, size)
    words += [f"n{rng.randrange(NOISE_POOL)}" for _ in range(noise_tokens)]
    return " ".join(words)


@dataclass
class SimConfig:
    seed: int = 42
    n_concepts: int = 12
    vortex_size: int = 0
    success_rate_by_concept: dict[int, float] = field(default_factory=dict)
    default_success_rate: float = 0.6
    n_trajectories: int = 200
    min_length: int = 2
    max_length: int = 6
    # share of failing trajectories that fall into the vortex cycle
    vortex_fraction: float = 0.5
    vortex_loops: int = 2
    tokens_per_concept: int = 12
    noise_tokens: int = 1

    def __post_init__(self):
        self.success_rate_by_concept = {int(k): float(v) for k, v in self.success_rate_by_concept.items()}

    def validate(self) -> None:
        if self.n_concepts < 1:
            raise SimConfigError("n_concepts must be >= 1")
        if not 0 <= self.vortex_size <= self.n_concepts:
            raise SimConfigError("vortex_size must lie in [0, n_concepts]")
        if self.vortex_size == 1:
            raise SimConfigError("a vortex needs at least two concepts")
        rates = list(self.success_rate_by_concept.values()) + [self.default_success_rate, self.vortex_fraction]
        if any(not 0.0 <= p <= 1.0 for p in rates):
            raise SimConfigError("probabilities must lie in [0, 1]")
        if any(not 0 <= c < self.n_concepts for c in self.success_rate_by_concept):
            raise SimConfigError("success_rate_by_concept names an unknown concept")
        if not 1 <= self.min_length <= self.max_length:
            raise SimConfigError("need 1 <= min_length <= max_length")
        if self.n_trajectories < 0 or self.vortex_loops < 1 or self.tokens_per_concept < 1 or self.noise_tokens < 0:
            raise SimConfigError("counts out of range")

    def rate(self, concept: int) -> float:
        return self.success_rate_by_concept.get(concept, self.default_success_rate)

    def vortex_concepts(self) -> list[int]:
        return list(range(self.n_concepts - self.vortex_size, self.n_concepts))


def generate(config: SimConfig) -> list[TrajectoryRecord]:
    config.validate()
    rng = random.Random(config.seed)
    concepts = list(range(config.n_concepts))
    rates = [config.rate(c) for c in concepts]
    q = sum(rates) / len(rates)
    w_success = rates if sum(rates) > 0 else None
    w_fail = [1.0 - p for p in rates] if q < 1 else None
    vortex = config.vortex_concepts()

    def text(c: int) -> str:
        return concept_text(c, rng, config.tokens_per_concept, config.noise_tokens)

    out = []
    for i in range(config.n_trajectories):
        outcome = rng.random() < q
        weights = w_success if outcome else w_fail
        length = rng.randint(config.min_length, config.max_length)
        path = rng.choices(concepts, weights=weights, k=length)
        steps = [text(c) for c in path]
        if not outcome and vortex and rng.random() < config.vortex_fraction:
            start = rng.randrange(len(vortex))
            cycle = vortex[start:] + vortex[:start]
            loop = cycle * config.vortex_loops + cycle[:1]
            cut = rng.randint(1, len(steps))
            steps = steps[:cut] + [text(c) for c in loop]
        out.append(TrajectoryRecord(f"sim-{i}", steps, outcome))
    return out


# -- simulated task for end-to-end runs ------------------------------------

@dataclass
class SimTaskConfig:
    """A synthetic solve task with a deadlock trap.

    A ``trap_fraction`` of problems lock the generator into a vortex of
    concepts ending in a fixed wrong answer whenever it samples below
    ``escape_temperature``; at or above it the generator escapes and solves
    with probability ``escape_success``. Other problems are solved with
    probability ``normal_success`` at any temperature. A hint that names one of
    the problem's own solution concepts raises success to ``hint_success``
    and disarms the trap.
    """

    seed: int = 42
    n_problems: int = 1000
    n_concepts: int = 30
    steps_per_solution: int = 3
    trap_fraction: float = 0.35
    vortex_size: int = 3
    vortex_loops: int = 2
    normal_success: float = 0.7
    escape_success: float = 0.9
    hint_success: float = 0.95
    escape_temperature: float = 1.5
    tokens_per_concept: int = 12
    noise_tokens: int = 1

    def validate(self) -> None:
        probs = [self.trap_fraction, self.normal_success, self.escape_success, self.hint_success]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise SimConfigError("probabilities must lie in [0, 1]")
        if self.steps_per_solution > self.n_concepts:
            raise SimConfigError("steps_per_solution exceeds n_concepts")
        if self.vortex_size < 2 or self.n_problems < 1:
            raise SimConfigError("need vortex_size >= 2 and n_problems >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "SimTaskConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SimProblem:
    id: str
    answer: int
    wrong_answer: int
    concepts: list[int]
    trap: bool


_PID_RE = re.compile(r"\[(sp\d+)\]")


class SimTask:
    def __init__(self, config: SimTaskConfig):
        config.validate()
        self.config = config
        rng = random.Random(config.seed)
        # vortex concepts are numbered after the solution concepts
        self.vortex = list(range(config.n_concepts, config.n_concepts + config.vortex_size))
        self.items: dict[str, SimProblem] = {}
        for i in range(config.n_problems):
            pid = f"sp{i}"
            answer = rng.randint(10, 999)
            self.items[pid] = SimProblem(
                pid, answer, answer + rng.randint(1, 50),
                rng.sample(range(config.n_concepts), config.steps_per_solution),
                rng.random() < config.trap_fraction,
            )

    def problems(self) -> list[Problem]:
        return [Problem(p.id, f"[{p.id}] Work through the reasoning chain and report the result.",
                        f"#### {p.answer}", "math") for p in self.items.values()]

    def backend(self) -> "SimulatedBackend":
        return SimulatedBackend(self)


class SimulatedBackend:
    """Generation backend for :class:`SimTask`.

    Responses are a pure function of (prompt, temperature, call index).
    """

    def __init__(self, task: SimTask):
        self.task = task
        self.calls = 0

    def _rng(self, prompt: str, temperature: float) -> random.Random:
        key = f"{self.task.config.seed}|{self.calls}|{temperature!r}|{prompt}".encode()
        return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "little"))

    def generate(self, prompt: str, temperature: float) -> Generation:
        cfg = self.task.config
        rng = self._rng(prompt, temperature)
        self.calls += 1
        m = _PID_RE.search(prompt)
        if m is None or m.group(1) not in self.task.items:
            raise KeyError("prompt names no known simulated problem")
        item = self.task.items[m.group(1)]
        tail = prompt[m.end():]
        hinted = any(f"k{c}x0" in tail for c in item.concepts)

        def step(c: int) -> str:
            return concept_text(c, rng, cfg.tokens_per_concept, cfg.noise_tokens)

        if hinted:
            p_ok = cfg.hint_success
        elif item.trap and temperature < cfg.escape_temperature:
            loop = self.task.vortex * cfg.vortex_loops
            steps = [step(item.concepts[0])] + [step(c) for c in loop]
            return Generation("\n\n".join(steps + [f"#### {item.wrong_answer}"]))
        elif item.trap:
            p_ok = cfg.escape_success
        else:
            p_ok = cfg.normal_success

        steps = [step(c) for c in item.concepts]
        if rng.random() < p_ok:
            answer = item.answer
        else:
            answer = item.answer + rng.choice([-1, 1]) * rng.randint(1, 400)
        return Generation("\n\n".join(steps + [f"#### {answer}"]))
