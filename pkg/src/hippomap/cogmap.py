"""Cognitive map: online nearest-neighbor clustering of reasoning steps.

States are unit-norm centroids with visit/success statistics and a trust
score. Directed edges between states carry transition counts labelled by the
outcome of the trajectory they came from.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed import DimensionMismatchError, EmbeddingProvider, embed_texts, normalize

MAP_FORMAT_VERSION = 1
TRUST_MODES = ("static", "ema")


class MapError(Exception):
    pass


class UnknownStateError(MapError, KeyError):
    pass


class MapFormatError(MapError, ValueError):
    pass


class MapVersionError(MapFormatError):
    pass


class MapChecksumError(MapFormatError):
    pass


@dataclass
class CognitiveState:
    id: int
    centroid: np.ndarray
    visit_count: int = 1
    success_count: int = 0
    trust: float = 0.0
    exemplar: str = ""


@dataclass
class TransitionEdge:
    source: int
    target: int
    success_count: int = 0
    total_count: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return (self.source, self.target)

    @property
    def rate(self) -> float:
        return self.success_count / self.total_count if self.total_count else 0.0


@dataclass
class TraceStep:
    text: str
    state_id: int
    created: bool
    trust: float | None = None
    entropy: float | None = None
    intervention: str | None = None


@dataclass
class ReasoningTrace:
    steps: list[TraceStep]
    outcome: bool
    edges: list[tuple[int, int]] = field(default_factory=list)
    # consecutive steps that landed in the same state (no self-edge recorded)
    merged_steps: int = 0

    @property
    def state_ids(self) -> list[int]:
        return [s.state_id for s in self.steps]


class CognitiveMap:
    """Growable set of cognitive states and transition edges.

    Single writer: mutating methods are not thread-safe. Take a
    :meth:`snapshot` to hand a frozen copy to concurrent readers.
    """

    def __init__(
        self,
        dimension: int = 384,
        tau_cluster: float = 0.75,
        blend: float = 0.95,
        trust_mode: str = "static",
        alpha: float = 0.9,
        initial_trust: float = 0.5,
    ):
        if trust_mode not in TRUST_MODES:
            raise ValueError(f"trust_mode must be one of {TRUST_MODES}")
        if not 0.0 <= alpha <= 1.0 or not 0.0 <= blend <= 1.0:
            raise ValueError("alpha and blend must lie in [0, 1]")
        self.dimension = dimension
        self.tau_cluster = tau_cluster
        self.blend = blend
        self.trust_mode = trust_mode
        self.alpha = alpha
        self.initial_trust = initial_trust
        self.states: list[CognitiveState] = []
        self.edges: dict[tuple[int, int], TransitionEdge] = {}
        self._matrix = np.zeros((16, dimension))
        self._out: dict[int, list[int]] = {}

    def __len__(self) -> int:
        return len(self.states)

    @property
    def centroids(self) -> np.ndarray:
        return self._matrix[: len(self.states)]

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dimension,):
            raise DimensionMismatchError(self.dimension, v.shape[-1] if v.ndim else 0)
        return v

    def _state(self, sid: int) -> CognitiveState:
        if not 0 <= sid < len(self.states):
            raise UnknownStateError(sid)
        return self.states[sid]

    def state(self, sid: int) -> CognitiveState:
        return self._state(sid)

    def nearest(self, v: np.ndarray) -> tuple[int, float] | None:
        """Most similar state and its cosine, or None on an empty map.

        Ties go to the lowest state id.
        """
        v = self._check(v)
        if not self.states:
            return None
        sims = self.centroids @ v
        i = int(np.argmax(sims))
        return i, float(sims[i])

    def assign_state(self, v: np.ndarray, exemplar: str = "") -> tuple[int, bool]:
        v = self._check(v)
        hit = self.nearest(v)
        if hit is not None and hit[1] >= self.tau_cluster:
            sid = hit[0]
            st = self.states[sid]
            st.centroid = normalize(self.blend * st.centroid + (1.0 - self.blend) * v)
            self._matrix[sid] = st.centroid
            st.visit_count += 1
            if self.trust_mode == "static":
                st.trust = st.success_count / st.visit_count
            return sid, False

        sid = len(self.states)
        if sid == self._matrix.shape[0]:
            grown = np.zeros((2 * sid, self.dimension))
            grown[:sid] = self._matrix
            self._matrix = grown
        centroid = v.copy()
        self._matrix[sid] = centroid
        trust = 0.0 if self.trust_mode == "static" else self.initial_trust
        self.states.append(CognitiveState(sid, centroid, 1, 0, trust, exemplar))
        return sid, True

    def record_transition(self, src: int, dst: int, success: bool) -> TransitionEdge | None:
        """Count one src -> dst transition. Returns None (no-op) when src == dst."""
        self._state(src)
        self._state(dst)
        if src == dst:
            return None
        edge = self.edges.get((src, dst))
        if edge is None:
            edge = self.edges[(src, dst)] = TransitionEdge(src, dst)
            self._out.setdefault(src, []).append(dst)
        edge.total_count += 1
        if success:
            edge.success_count += 1
        return edge

    def set_edge(self, src: int, dst: int, success: int, total: int) -> TransitionEdge:
        """Insert or overwrite an edge with explicit counts (imports, fixtures)."""
        self._state(src)
        self._state(dst)
        if src == dst or not 0 <= success <= total or total < 1:
            raise ValueError(f"invalid edge {src}->{dst} ({success}/{total})")
        if (src, dst) not in self.edges:
            self._out.setdefault(src, []).append(dst)
        edge = self.edges[(src, dst)] = TransitionEdge(src, dst, success, total)
        return edge

    def update_trust(self, sid: int, success: bool) -> float:
        st = self._state(sid)
        if success:
            st.success_count += 1
            # a labelled success with no unlabelled visit left counts as a visit
            st.visit_count = max(st.visit_count, st.success_count)
        if self.trust_mode == "static":
            st.trust = st.success_count / st.visit_count if st.visit_count else 0.0
        else:
            st.trust = self.alpha * st.trust + (1.0 - self.alpha) * (1.0 if success else 0.0)
        return st.trust

    def out_edges(self, sid: int) -> list[TransitionEdge]:
        self._state(sid)
        return [self.edges[(sid, d)] for d in self._out.get(sid, [])]

    def ingest_trajectory(
        self, steps: Sequence[str], outcome: bool, provider: EmbeddingProvider
    ) -> ReasoningTrace:
        """Fold one labelled trajectory into the map.

        Every step is assigned a state, consecutive cross-state steps add an
        edge labelled with ``outcome``, and each visit updates trust once.
        """
        if not steps:
            raise ValueError("trajectory needs at least one step")
        vectors = embed_texts(list(steps), provider)
        trace_steps: list[TraceStep] = []
        for text, v in zip(steps, vectors):
            sid, created = self.assign_state(v, exemplar=text)
            trace_steps.append(TraceStep(text, sid, created))

        trace = ReasoningTrace(trace_steps, bool(outcome))
        for a, b in zip(trace_steps, trace_steps[1:]):
            if a.state_id == b.state_id:
                trace.merged_steps += 1
                continue
            self.record_transition(a.state_id, b.state_id, outcome)
            trace.edges.append((a.state_id, b.state_id))
        for step in trace_steps:
            step.trust = self.update_trust(step.state_id, outcome)
        return trace

    def snapshot(self) -> "CognitiveMap":
        return copy.deepcopy(self)

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        payload = {
            "version": MAP_FORMAT_VERSION,
            "dimension": self.dimension,
            "tau_cluster": self.tau_cluster,
            "blend": self.blend,
            "trust_mode": self.trust_mode,
            "alpha": self.alpha,
            "initial_trust": self.initial_trust,
            "states": [
                {
                    "id": s.id,
                    "centroid": s.centroid.tolist(),
                    "visits": s.visit_count,
                    "successes": s.success_count,
                    "trust": s.trust,
                    "exemplar": s.exemplar,
                }
                for s in self.states
            ],
            "edges": [
                {"src": e.source, "dst": e.target, "success": e.success_count, "total": e.total_count}
                for e in self.edges.values()
            ],
        }
        payload["checksum"] = _checksum(payload)
        return payload

    @classmethod
    def from_dict(cls, data: dict) -> "CognitiveMap":
        version = data.get("version")
        if version != MAP_FORMAT_VERSION:
            raise MapVersionError(f"unsupported map version {version!r}")
        expected = data.get("checksum")
        body = {k: v for k, v in data.items() if k != "checksum"}
        if expected != _checksum(body):
            raise MapChecksumError("map checksum mismatch")
        cmap = cls(
            dimension=data["dimension"],
            tau_cluster=data["tau_cluster"],
            blend=data.get("blend", 0.95),
            trust_mode=data["trust_mode"],
            alpha=data["alpha"],
            initial_trust=data.get("initial_trust", 0.5),
        )
        cap = max(16, len(data["states"]))
        cmap._matrix = np.zeros((cap, cmap.dimension))
        for i, s in enumerate(data["states"]):
            if s["id"] != i:
                raise MapFormatError("state ids must be dense and ordered")
            centroid = np.asarray(s["centroid"], dtype=np.float64)
            if centroid.shape != (cmap.dimension,):
                raise MapFormatError(f"state {i} centroid has wrong dimension")
            cmap._matrix[i] = centroid
            cmap.states.append(
                CognitiveState(i, centroid, s["visits"], s["successes"], s["trust"], s["exemplar"])
            )
        for e in data["edges"]:
            src, dst = e["src"], e["dst"]
            if not (0 <= src < len(cmap.states) and 0 <= dst < len(cmap.states)) or src == dst:
                raise MapFormatError(f"bad edge {src}->{dst}")
            cmap.edges[(src, dst)] = TransitionEdge(src, dst, e["success"], e["total"])
            cmap._out.setdefault(src, []).append(dst)
        return cmap


def _checksum(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def save_map(cmap: CognitiveMap, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as f:
        json.dump(cmap.to_dict(), f, ensure_ascii=False)
    os.replace(tmp, path)


def load_map(path: str | os.PathLike) -> CognitiveMap:
    with Path(path).open(encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise MapFormatError(f"corrupted map file: {exc}") from exc
    return CognitiveMap.from_dict(data)
