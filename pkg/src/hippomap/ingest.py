"""Problem and trajectory loading from JSONL."""

from __future__ import annotations

import json
import os
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

MAX_QUESTION_CHARS = 20_000
DOMAINS = ("math", "general", "code")

# question/answer field names per dataset family
FIELD_MAPS: dict[str, dict[str, str]] = {
    "gsm8k": {"question": "question", "answer": "answer"},
    "math": {"question": "problem", "answer": "solution"},
    "svamp": {"question": "question", "answer": "answer"},
    "openorca": {"question": "question", "answer": "response"},
}


class DatasetError(Exception):
    pass


@dataclass
class Problem:
    id: str
    question: str
    gold_answer: str
    domain_tag: str = "math"


@dataclass
class TrajectoryRecord:
    id: str
    steps: list[str]
    outcome: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


@dataclass
class Rejection:
    line: int
    reason: str


@dataclass
class LoadReport:
    total_lines: int = 0
    accepted: int = 0
    too_long: int = 0
    rejections: list[Rejection] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "total_lines": self.total_lines,
            "accepted": self.accepted,
            "too_long": self.too_long,
            "rejected": len(self.rejections),
            "rejections": [asdict(r) for r in self.rejections],
        }


def _lines(path: Path) -> Iterable[tuple[int, str]]:
    try:
        f = path.open(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    with f:
        for n, line in enumerate(f, 1):
            if line.strip():
                yield n, line


def load_problems(
    path: str | os.PathLike,
    fields: str | dict[str, str] = "gsm8k",
    domain_tag: str | None = None,
    max_chars: int = MAX_QUESTION_CHARS,
) -> tuple[list[Problem], LoadReport]:
    """Load problems, rejecting malformed lines and over-long questions.

    Blank lines are skipped and not counted. Lengths are counted in Unicode
    code points.
    """
    mapping = FIELD_MAPS[fields] if isinstance(fields, str) else fields
    qkey, akey = mapping["question"], mapping["answer"]
    report = LoadReport()
    problems: list[Problem] = []
    for n, line in _lines(Path(path)):
        report.total_lines += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            report.rejections.append(Rejection(n, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(obj, dict):
            report.rejections.append(Rejection(n, "line is not a JSON object"))
            continue
        q, a = obj.get(qkey), obj.get(akey)
        if not isinstance(q, str) or not q.strip() or not isinstance(a, str) and not isinstance(a, (int, float)):
            report.rejections.append(Rejection(n, f"missing or invalid '{qkey}'/'{akey}'"))
            continue
        if len(q) > max_chars:
            report.too_long += 1
            report.rejections.append(Rejection(n, f"question longer than {max_chars} characters"))
            continue
        tag = obj.get("domain", domain_tag) or ("math" if "####" in str(a) else "general")
        if tag not in DOMAINS:
            report.rejections.append(Rejection(n, f"unknown domain tag {tag!r}"))
            continue
        problems.append(Problem(str(obj.get("id", f"line-{n}")), q, str(a), tag))
        report.accepted += 1
    if not problems:
        raise DatasetError(f"{path}: no valid problems")
    return problems, report


def load_trajectories(path: str | os.PathLike, strict: bool = False) -> tuple[list[TrajectoryRecord], LoadReport]:
    report = LoadReport()
    records: list[TrajectoryRecord] = []
    for n, line in _lines(Path(path)):
        report.total_lines += 1
        try:
            obj = json.loads(line)
            records.append(_trajectory(obj))
        except (json.JSONDecodeError, DatasetError) as exc:
            reason = exc.msg if isinstance(exc, json.JSONDecodeError) else str(exc)
            if strict:
                raise DatasetError(f"line {n}: {reason}") from exc
            report.rejections.append(Rejection(n, reason))
            continue
        report.accepted += 1
    return records, report


def _trajectory(obj: object) -> TrajectoryRecord:
    if not isinstance(obj, dict):
        raise DatasetError("record is not a JSON object")
    steps = obj.get("steps")
    if not isinstance(steps, list) or not steps:
        raise DatasetError("'steps' must be a non-empty list")
    if not all(isinstance(s, str) and s.strip() for s in steps):
        raise DatasetError("every step must be a non-empty string")
    outcome = obj.get("outcome")
    if not isinstance(outcome, bool):
        raise DatasetError("'outcome' must be a boolean")
    return TrajectoryRecord(str(obj.get("id", "")), list(steps), outcome)


def write_trajectories(records: Iterable[TrajectoryRecord], path: str | os.PathLike) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def write_problems(problems: Iterable[Problem], path: str | os.PathLike) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for p in problems:
            f.write(json.dumps({"id": p.id, "question": p.question, "answer": p.gold_answer,
                                "domain": p.domain_tag}, ensure_ascii=False) + "\n")


def stratified_sample(problems: list[Problem], n: int, seed: int = 42) -> list[Problem]:
    """Seeded sample of ``n`` problems, proportional per domain tag."""
    if n >= len(problems):
        return list(problems)
    rng = random.Random(seed)
    groups: dict[str, list[Problem]] = {}
    for p in problems:
        groups.setdefault(p.domain_tag, []).append(p)
    quotas = {tag: n * len(g) // len(problems) for tag, g in groups.items()}
    # hand leftover slots to the largest remainders, ties by tag name
    left = n - sum(quotas.values())
    order = sorted(groups, key=lambda t: (-(n * len(groups[t]) % len(problems)), t))
    for tag in order[:left]:
        quotas[tag] += 1
    picked: list[Problem] = []
    for tag in sorted(groups):
        picked.extend(rng.sample(groups[tag], quotas[tag]))
    return picked
