"""Map-guided iterative refinement with trust-gated interventions.

Each round generates a response, maps it to its nearest cognitive state and
reads that state's trust. High trust appends a hint and regenerates, low
trust regenerates at a raised temperature (with probability P), and anything
else becomes a voting candidate. The final answer is a majority vote with
trust tie-breaking.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .cogmap import CognitiveMap, save_map
from .dynamics import TokenDistribution, mean_entropy
from .embed import EmbeddingProvider, cosine, embed_text
from .ingest import Problem
from .navigator import (
    ActionKind,
    InterventionAction,
    NavigatorModel,
    TrainingSetError,
    decide,
    extract_training_set,
    hint_for,
    load_model,
    save_model,
    train,
)

log = logging.getLogger(__name__)

NUMERIC_TOLERANCE = 1e-4
SEMANTIC_THRESHOLD = 0.75
_NUMBER_RE = re.compile(r"[-+]?(?:\d[\d,]*(?:\.\d+)?|\.\d+)")


class BackendError(Exception):
    pass


class EmptyDatasetError(ValueError):
    pass


# -- generation backends ----------------------------------------------------

@dataclass
class Generation:
    text: str
    # per generated token: top-k (token, logprob) pairs
    logprobs: list[list[tuple[str, float]]] | None = None


class GenerationBackend(Protocol):
    def generate(self, prompt: str, temperature: float) -> Generation: ...


@dataclass
class ScriptEntry:
    response: str
    call: int | None = None
    temperature_min: float = 0.0
    temperature_max: float = math.inf
    prompt_contains: str | None = None


class ScriptedBackend:
    """Replays a scenario file of canned responses.

    An entry matches a call when its ``call`` index (0-based, or null for any
    call), temperature band and optional ``prompt_contains`` substring all
    match. The first matching entry in file order wins.
    """

    def __init__(self, entries: Sequence[ScriptEntry | dict]):
        self.entries = [e if isinstance(e, ScriptEntry) else ScriptEntry(**e) for e in entries]
        self.calls: list[tuple[str, float]] = []

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def reset(self) -> None:
        self.calls.clear()

    def generate(self, prompt: str, temperature: float) -> Generation:
        idx = len(self.calls)
        self.calls.append((prompt, temperature))
        for e in self.entries:
            if e.call is not None and e.call != idx:
                continue
            if not e.temperature_min <= temperature <= e.temperature_max:
                continue
            if e.prompt_contains is not None and e.prompt_contains not in prompt:
                continue
            return Generation(e.response)
        raise BackendError(f"no scripted response for call {idx} at temperature {temperature}")


class ChatCompletionsBackend:
    """Client for an OpenAI-compatible ``/v1/chat/completions`` endpoint."""

    def __init__(
        self,
        base_url: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        top_logprobs: int = 5,
        max_tokens: int = 1024,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        base_url = base_url or os.environ.get("HIPPOMAP_LLM_URL")
        if not base_url:
            raise ValueError("no generation endpoint configured (HIPPOMAP_LLM_URL)")
        self.base_url = base_url.rstrip("/")
        self.model = model or os.environ.get("HIPPOMAP_LLM_MODEL", "default")
        api_key = api_key if api_key is not None else os.environ.get("HIPPOMAP_LLM_KEY")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.top_logprobs = top_logprobs
        self.max_tokens = max_tokens
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def generate(self, prompt: str, temperature: float) -> Generation:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": self.max_tokens,
            "logprobs": True,
            "top_logprobs": self.top_logprobs,
        }
        try:
            resp = self._client.post(f"{self.base_url}/v1/chat/completions", json=body)
            resp.raise_for_status()
            choice = resp.json()["choices"][0]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"generation request failed: {exc}") from exc
        text = choice["message"]["content"] or ""
        lp = None
        content = (choice.get("logprobs") or {}).get("content")
        if content:
            lp = [[(t["token"], t["logprob"]) for t in tok.get("top_logprobs", [])] or [(tok["token"], tok["logprob"])]
                  for tok in content]
        return Generation(text, lp)


# -- answers ----------------------------------------------------------------

def _to_float(token: str) -> float | None:
    try:
        return float(token.replace(",", ""))
    except ValueError:
        return None


def extract_number(text: str) -> float | None:
    """Last numeric token after the final ``####``, else the last one anywhere."""
    if "####" in text:
        tail = text.rsplit("####", 1)[1]
        nums = [v for v in map(_to_float, _NUMBER_RE.findall(tail)) if v is not None]
        if nums:
            return nums[-1]
    nums = [v for v in map(_to_float, _NUMBER_RE.findall(text)) if v is not None]
    return nums[-1] if nums else None


def normalize_answer(text: str) -> str:
    if "####" in text:
        text = text.rsplit("####", 1)[1]
    return " ".join(text.lower().split()).strip(" .!?;:")


def extract_answer(text: str) -> float | str:
    num = extract_number(text)
    return num if num is not None else normalize_answer(text)


def answers_equivalent(a: float | str, b: float | str, tol: float = NUMERIC_TOLERANCE) -> bool:
    if isinstance(a, float) and isinstance(b, float):
        return abs(a - b) <= tol
    if isinstance(a, float) or isinstance(b, float):
        return False
    return a == b


def evaluate_answer(
    predicted: str,
    gold: str,
    provider: EmbeddingProvider | None = None,
    tol: float = NUMERIC_TOLERANCE,
    sim_threshold: float = SEMANTIC_THRESHOLD,
) -> bool:
    """Numeric match when the gold answer carries ``####``, else embedding similarity."""
    if not gold or not gold.strip():
        raise ValueError("gold answer is empty")
    if "####" in gold:
        g = extract_number(gold)
        p = extract_number(predicted)
        if g is None or p is None:
            return False
        return abs(p - g) <= tol
    if not predicted.strip():
        return False
    if provider is None:
        raise ValueError("semantic evaluation needs an embedding provider")
    return cosine(embed_text(predicted, provider), embed_text(gold, provider)) >= sim_threshold


# -- voting -----------------------------------------------------------------

@dataclass
class Candidate:
    answer_text: str
    extracted_answer: float | str
    trust: float
    round: int


def majority_vote(candidates: Sequence[Candidate], tol: float = NUMERIC_TOLERANCE) -> Candidate:
    """Winner of the largest answer group.

    Ties go to the group holding the highest single trust, then to the group
    whose first member came earliest. The returned candidate is that group's
    earliest member.
    """
    if not candidates:
        raise ValueError("no candidates to vote on")
    groups: list[list[Candidate]] = []
    for c in sorted(candidates, key=lambda c: c.round):
        for g in groups:
            if answers_equivalent(g[0].extracted_answer, c.extracted_answer, tol):
                g.append(c)
                break
        else:
            groups.append([c])
    best = min(groups, key=lambda g: (-len(g), -max(c.trust for c in g), g[0].round))
    return best[0]


# -- Algorithm 1 ------------------------------------------------------------

@dataclass
class SolveConfig:
    t_max: int = 5
    hint_trust: float = 0.7
    perturb_trust: float = 0.3
    perturb_temperature: float = 1.5
    base_temperature: float = 0.7
    intervention_prob: float = 0.5
    # "trust": gate on the mapped state's trust; "navigator": gate on MLP scores
    gate: str = "trust"
    max_retries: int = 2
    empty_map_trust: float = 0.5
    seed: int = 42


@dataclass
class RoundRecord:
    round: int
    temperature: float
    state: int | None
    similarity: float | None
    trust: float
    action: str
    entropy: float | None = None


@dataclass
class SolveResult:
    final_answer: str
    extracted_answer: float | str
    candidates: list[Candidate]
    interventions: list[tuple[int, InterventionAction]]
    rounds_used: int
    generations: list[str]
    rounds: list[RoundRecord] = field(default_factory=list)
    backend_calls: int = 0
    degraded: bool = False
    correct: bool | None = None

    def to_dict(self) -> dict:
        return {
            "final_answer": self.final_answer,
            "extracted_answer": self.extracted_answer,
            "candidates": [asdict(c) for c in self.candidates],
            "interventions": [[r, a.to_dict()] for r, a in self.interventions],
            "rounds_used": self.rounds_used,
            "rounds": [asdict(r) for r in self.rounds],
            "backend_calls": self.backend_calls,
            "degraded": self.degraded,
            "correct": self.correct,
        }


def _generate(backend: GenerationBackend, prompt: str, temperature: float, retries: int) -> Generation:
    err: Exception | None = None
    for _ in range(retries + 1):
        try:
            return backend.generate(prompt, temperature)
        except BackendError as exc:
            err = exc
    raise BackendError(f"backend failed after {retries + 1} attempts: {err}") from err


def _trust_gate(cmap: CognitiveMap, sid: int, trust: float, cfg: SolveConfig, rng: random.Random) -> InterventionAction:
    if trust > cfg.hint_trust:
        return InterventionAction(ActionKind.HINT, hint_for(cmap, sid), target_state=sid)
    if trust < cfg.perturb_trust and rng.random() < cfg.intervention_prob:
        return InterventionAction(ActionKind.PERTURB, temperature=cfg.perturb_temperature)
    return InterventionAction.none()


def solve(
    question: str,
    cmap: CognitiveMap,
    model: NavigatorModel | None,
    backend: GenerationBackend,
    provider: EmbeddingProvider,
    config: SolveConfig | None = None,
    rng: random.Random | None = None,
) -> SolveResult:
    cfg = config or SolveConfig()
    rng = rng if rng is not None else random.Random(cfg.seed)
    use_navigator = cfg.gate == "navigator" and model is not None
    prompt = question
    temperature = cfg.base_temperature
    candidates: list[Candidate] = []
    interventions: list[tuple[int, InterventionAction]] = []
    generations: list[str] = []
    rounds: list[RoundRecord] = []
    calls = 0

    for t in range(1, cfg.t_max + 1):
        gen = _generate(backend, prompt, temperature, cfg.max_retries)
        calls += 1
        text = gen.text
        generations.append(text)
        entropy = None
        if gen.logprobs:
            entropy = mean_entropy([TokenDistribution.from_logprobs(pos) for pos in gen.logprobs if pos])
        used_temperature = temperature
        temperature = cfg.base_temperature

        hit = cmap.nearest(embed_text(text, provider)) if text.strip() else None
        if hit is None:
            sid, sim, trust = None, None, cfg.empty_map_trust
            action = InterventionAction.none()
        else:
            sid, sim = hit
            trust = cmap.states[sid].trust
            if use_navigator:
                action = decide(cmap, model, sid, cfg.intervention_prob, rng, cfg.perturb_temperature)
            else:
                action = _trust_gate(cmap, sid, trust, cfg, rng)
        rounds.append(RoundRecord(t, used_temperature, sid, sim, trust, action.kind.value, entropy))

        if action.kind is ActionKind.HINT:
            interventions.append((t, action))
            if action.hint_text not in prompt:
                prompt = f"{prompt}\n\n{action.hint_text}"
        elif action.kind is ActionKind.PERTURB:
            interventions.append((t, action))
            temperature = action.temperature
        else:
            candidates.append(Candidate(text, extract_answer(text), trust, t))

    if candidates:
        win = majority_vote(candidates)
        final, extracted, degraded = win.answer_text, win.extracted_answer, False
    else:
        final = generations[-1]
        extracted, degraded = extract_answer(final), True
    return SolveResult(final, extracted, candidates, interventions, cfg.t_max, generations,
                       rounds, calls, degraded)


def self_consistency(question: str, backend: GenerationBackend, k: int = 5,
                     temperature: float = 0.7, max_retries: int = 2) -> Candidate:
    """Plain k-sample majority vote, the repeated-sampling reference."""
    cands = []
    for t in range(1, k + 1):
        text = _generate(backend, question, temperature, max_retries).text
        cands.append(Candidate(text, extract_answer(text), 0.5, t))
    return majority_vote(cands)


# -- map growth from solved items --------------------------------------------

def segment_steps(text: str) -> list[str]:
    """Split a response into reasoning steps: paragraphs, else sentences."""
    paras = [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]
    if len(paras) > 1:
        return paras
    sents = [s.strip() for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s.strip()]
    return sents or ([text.strip()] if text.strip() else [])


def ingest_result(cmap: CognitiveMap, result: SolveResult, gold: str, provider: EmbeddingProvider) -> int:
    """Fold every generated response into the map, labelled against ``gold``."""
    n = 0
    for text in result.generations:
        steps = segment_steps(text)
        if not steps:
            continue
        cmap.ingest_trajectory(steps, evaluate_answer(text, gold, provider), provider)
        n += 1
    return n


# -- batch evaluation --------------------------------------------------------

@dataclass
class ItemResult:
    id: str
    correct: bool
    final_answer: str
    rounds_used: int
    hints: int
    perturbs: int
    degraded: bool = False
    error: str | None = None


@dataclass
class BatchReport:
    success_rate: float
    avg_rounds: float
    hint_count: int
    perturb_count: int
    items: list[ItemResult]

    def to_dict(self) -> dict:
        return {"success_rate": self.success_rate, "avg_rounds": self.avg_rounds,
                "hint_count": self.hint_count, "perturb_count": self.perturb_count,
                "n": len(self.items), "items": [asdict(i) for i in self.items]}


def item_rng(seed: int, item_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{item_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def batch_eval(
    problems: Sequence[Problem],
    cmap: CognitiveMap,
    model: NavigatorModel | None,
    backend: GenerationBackend,
    provider: EmbeddingProvider,
    config: SolveConfig | None = None,
    update_map: bool = False,
) -> BatchReport:
    """Solve and score every problem.

    With ``update_map`` the map learns online from each item's responses,
    labelled post hoc with the gold answer. Items are processed sequentially.
    """
    if not problems:
        raise EmptyDatasetError("dataset is empty")
    cfg = config or SolveConfig()
    items: list[ItemResult] = []
    for p in problems:
        try:
            res = solve(p.question, cmap, model, backend, provider, cfg, item_rng(cfg.seed, p.id))
        except BackendError as exc:
            items.append(ItemResult(p.id, False, "", 0, 0, 0, error=str(exc)))
            continue
        res.correct = evaluate_answer(res.final_answer, p.gold_answer, provider)
        hints = sum(a.kind is ActionKind.HINT for _, a in res.interventions)
        items.append(ItemResult(p.id, res.correct, res.final_answer, res.rounds_used, hints,
                                len(res.interventions) - hints, res.degraded))
        if update_map:
            ingest_result(cmap, res, p.gold_answer, provider)
    n = len(items)
    return BatchReport(
        success_rate=sum(i.correct for i in items) / n,
        avg_rounds=sum(i.rounds_used for i in items) / n,
        hint_count=sum(i.hints for i in items),
        perturb_count=sum(i.perturbs for i in items),
        items=items,
    )


# -- online learning rounds ---------------------------------------------------

@dataclass
class RoundReport:
    round: int
    samples: int
    success_rate: float
    map_states: int
    map_edges: int
    navigator_used: bool
    navigator_trained: bool
    training_rows: int
    train_accuracy: float | None
    hint_count: int
    perturb_count: int
    map_path: str
    model_path: str | None


def run_learning_loop(
    problems: Sequence[Problem],
    backend: GenerationBackend,
    provider: EmbeddingProvider,
    out_dir: str | os.PathLike,
    rounds: int = 5,
    samples_per_round: int = 200,
    config: SolveConfig | None = None,
    cmap: CognitiveMap | None = None,
    train_epochs: int = 100,
    train_seed: int = 42,
) -> list[RoundReport]:
    """Test-time growth: solve, save the map, retrain the navigator, repeat.

    Round 1 starts from ``cmap`` (empty by default) without a navigator. After
    each round the map and, when both label classes exist, a freshly trained
    navigator are persisted under ``out_dir/round_<k>/`` and carried forward.
    """
    cfg = config or SolveConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cmap = cmap if cmap is not None else CognitiveMap(dimension=provider.dimension)
    needed = rounds * samples_per_round
    if len(problems) < needed:
        log.warning("dataset has %d problems, fewer than %d rounds x %d; later rounds truncate",
                    len(problems), rounds, samples_per_round)
    model: NavigatorModel | None = None
    reports: list[RoundReport] = []
    for r in range(1, rounds + 1):
        chunk = list(problems[(r - 1) * samples_per_round : r * samples_per_round])
        if not chunk:
            log.warning("no problems left for round %d; stopping", r)
            break
        navigator_used = model is not None
        batch = batch_eval(chunk, cmap, model, backend, provider, cfg, update_map=True)

        rdir = out / f"round_{r}"
        rdir.mkdir(exist_ok=True)
        map_path = rdir / "map.json"
        save_map(cmap, map_path)
        data = extract_training_set(cmap)
        model_path = None
        trained = False
        try:
            model = train(data, epochs=train_epochs, seed=train_seed)
            model_path = rdir / "navigator.json"
            save_model(model, model_path)
            model = load_model(model_path)
            trained = True
        except TrainingSetError as exc:
            log.info("round %d: navigator not trained (%s)", r, exc)
        (rdir / "batch.json").write_text(json.dumps(batch.to_dict(), indent=1), encoding="utf-8")

        rep = RoundReport(
            round=r, samples=len(chunk), success_rate=batch.success_rate,
            map_states=len(cmap), map_edges=len(cmap.edges),
            navigator_used=navigator_used, navigator_trained=trained, training_rows=len(data),
            train_accuracy=model.train_accuracy if trained else None,
            hint_count=batch.hint_count, perturb_count=batch.perturb_count,
            map_path=str(map_path), model_path=str(model_path) if model_path else None,
        )
        reports.append(rep)
        log.info("round %d: success %.3f, %d states, %d edges", r, rep.success_rate, rep.map_states, rep.map_edges)
    (out / "learning_report.json").write_text(json.dumps([asdict(r) for r in reports], indent=1),
                                              encoding="utf-8")
    return reports
