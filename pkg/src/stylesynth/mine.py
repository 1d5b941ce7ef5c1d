"""Cross-modal triplet mining.

For every target item x we look up a style exemplar s (nearest in style space
among the style pool, excluding candidates too similar in content) and a
content exemplar y (nearest in content space among the semantics pool,
excluding candidates too similar in style). The resulting (x, y, s) triplets
supervise the conditional diffusion training while keeping the two cues
complementary.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import CorpusBundle
from .embed import EncoderBundle


class MineError(ValueError):
    pass


class EmptyPoolError(MineError):
    """The search pool itself is empty; no amount of filter relaxation helps."""


class NoCandidateError(MineError):
    """All top-k candidates were rejected by the cross-modality filter."""

    def __init__(self, x_id: int, modality: str):
        super().__init__(f"no candidate for item {x_id} in {modality} search; raise k or relax threshold")
        self.x_id = x_id
        self.modality = modality


@dataclass(frozen=True)
class VectorIndex:
    """Exact cosine index: results are identical to a brute-force scan."""

    ids: np.ndarray  # (n,) int64
    vectors: np.ndarray  # (n, dim) float64
    unit: np.ndarray  # (n, dim) row-normalized copies
    metric: str = "cosine"

    def __len__(self) -> int:
        return self.ids.shape[0]


class KnnResult(NamedTuple):
    hits: list[tuple[int, float]]
    truncated: bool


def build_index(vectors: np.ndarray, ids: np.ndarray | list[int], metric: str = "cosine") -> VectorIndex:
    if metric != "cosine":
        raise MineError(f"unsupported metric {metric!r}")
    ids = np.asarray(ids, dtype=np.int64)
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 1:
        vectors = vectors.reshape(0, 0) if vectors.size == 0 else vectors.reshape(1, -1)
    if ids.shape[0] != vectors.shape[0]:
        raise MineError("ids and vectors must have equal length")
    if len(np.unique(ids)) != ids.shape[0]:
        raise MineError("duplicate ids")
    if not np.all(np.isfinite(vectors)):
        raise MineError("non-finite vector entries")
    if vectors.shape[0] == 0:
        return VectorIndex(ids=ids, vectors=vectors, unit=vectors.copy(), metric=metric)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise MineError("zero-norm vectors cannot be indexed under cosine")
    return VectorIndex(ids=ids, vectors=vectors, unit=vectors / norms[:, None], metric=metric)


def knn(index: VectorIndex, query: np.ndarray, k: int) -> KnnResult:
    """Top-k by descending similarity; ties broken by ascending id."""
    if k < 1:
        raise MineError("k must be >= 1")
    if len(index) == 0:
        return KnnResult(hits=[], truncated=True)
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.vectors.shape[1],):
        raise MineError(f"query shape {query.shape} does not match index dim {index.vectors.shape[1]}")
    qn = np.linalg.norm(query)
    if qn == 0.0:
        raise MineError("zero-norm query under cosine")
    sims = np.clip(index.unit @ (query / qn), -1.0, 1.0)
    order = np.lexsort((index.ids, -sims))
    top = order[: min(k, len(index))]
    hits = [(int(index.ids[i]), float(sims[i])) for i in top]
    return KnnResult(hits=hits, truncated=k > len(index))


@dataclass(frozen=True)
class MineParams:
    k: int = 50
    threshold_mode: str = "quantile"  # or "absolute"
    quantile: float = 0.9
    tau_content: float | None = None  # required in absolute mode
    tau_style: float | None = None

    def validate(self) -> None:
        if self.k < 1:
            raise MineError("k must be >= 1")
        if self.threshold_mode not in ("quantile", "absolute"):
            raise MineError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.threshold_mode == "absolute":
            for name, tau in (("tau_content", self.tau_content), ("tau_style", self.tau_style)):
                if tau is None or not -1.0 <= tau <= 1.0:
                    raise MineError(f"{name} must be set within [-1, 1] in absolute mode")
        if not 0.0 < self.quantile < 1.0:
            raise MineError("quantile must lie in (0, 1)")


@dataclass(frozen=True)
class Triplet:
    x_id: int
    y_id: int
    s_id: int
    style_sim: float  # style similarity between x and y (filtered quantity)
    content_sim: float  # content similarity between x and s (filtered quantity)


@dataclass
class MiningStats:
    attempted: int = 0
    succeeded: int = 0
    failed_style: int = 0
    failed_content: int = 0
    tau_content: float = 0.0
    tau_style: float = 0.0
    content_sim_hist: list[int] = field(default_factory=list)
    style_sim_hist: list[int] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.succeeded / self.attempted if self.attempted else 0.0

    def as_dict(self) -> dict:
        return {
            "attempted": self.attempted,
            "succeeded": self.succeeded,
            "failed_style": self.failed_style,
            "failed_content": self.failed_content,
            "success_rate": self.success_rate,
            "tau_content": self.tau_content,
            "tau_style": self.tau_style,
            "hist_bins": _HIST_BINS,
            "content_sim_hist": self.content_sim_hist,
            "style_sim_hist": self.style_sim_hist,
        }


_HIST_BINS = 20


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise MineError("zero-norm embedding row")
    return x / norms


class TripletMiner:
    """Holds the dual indices and per-item embeddings for one corpus."""

    def __init__(self, bundle: CorpusBundle, encoders: EncoderBundle, params: MineParams):
        params.validate()
        self.params = params
        self.bundle = bundle
        self.content_vecs = encoders.content(bundle.data)  # (N, 8)
        self.style_vecs = encoders.style(bundle.data)  # (N, 6)
        self.target_ids = bundle.ids_for_role("target")
        style_ids = bundle.ids_for_role("style_db")
        sem_ids = bundle.ids_for_role("semantics_db")
        if style_ids.size == 0 or sem_ids.size == 0:
            raise EmptyPoolError("style_db and semantics_db pools must be non-empty")
        self.style_index = build_index(self.style_vecs[style_ids], style_ids)
        self.content_index = build_index(self.content_vecs[sem_ids], sem_ids)
        self.tau_content, self.tau_style = self._resolve_thresholds(style_ids, sem_ids)

    def _resolve_thresholds(self, style_ids: np.ndarray, sem_ids: np.ndarray) -> tuple[float, float]:
        if self.params.threshold_mode == "absolute":
            return float(self.params.tau_content), float(self.params.tau_style)
        # Quantile mode: ceilings are quantiles of the cross-pool similarity
        # distributions actually seen by each filter.
        q = self.params.quantile
        tc = _unit_rows(self.content_vecs[self.target_ids]) @ _unit_rows(self.content_vecs[style_ids]).T
        ts = _unit_rows(self.style_vecs[self.target_ids]) @ _unit_rows(self.style_vecs[sem_ids]).T
        return float(np.quantile(tc, q)), float(np.quantile(ts, q))

    def _cosine(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(
            np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0)
        )

    def mine_triplet(self, x_id: int) -> Triplet:
        """Mine (x, y, s) for one target; raises NoCandidateError if filtered out."""
        a_x = self.style_vecs[x_id]
        c_x = self.content_vecs[x_id]

        s_id = None
        content_sim_s = 0.0
        for cand, _sim in knn(self.style_index, a_x, self.params.k).hits:
            csim = self._cosine(c_x, self.content_vecs[cand])
            if csim <= self.tau_content:
                s_id, content_sim_s = cand, csim
                break
        if s_id is None:
            raise NoCandidateError(x_id, "style")

        y_id = None
        style_sim_y = 0.0
        for cand, _sim in knn(self.content_index, c_x, self.params.k).hits:
            ssim = self._cosine(a_x, self.style_vecs[cand])
            if ssim <= self.tau_style:
                y_id, style_sim_y = cand, ssim
                break
        if y_id is None:
            raise NoCandidateError(x_id, "content")

        return Triplet(x_id=int(x_id), y_id=y_id, s_id=s_id, style_sim=style_sim_y, content_sim=content_sim_s)


@dataclass
class TripletSet:
    triplets: list[Triplet]
    params: MineParams
    corpus_hash: str
    stats: MiningStats

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        payload = {
            "corpus_hash": self.corpus_hash,
            "params": {
                "k": self.params.k,
                "threshold_mode": self.params.threshold_mode,
                "quantile": self.params.quantile,
                "tau_content": self.params.tau_content,
                "tau_style": self.params.tau_style,
            },
            "stats": self.stats.as_dict(),
            "triplets": [
                {
                    "x_id": t.x_id,
                    "y_id": t.y_id,
                    "s_id": t.s_id,
                    "style_sim": t.style_sim,
                    "content_sim": t.content_sim,
                }
                for t in self.triplets
            ],
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "TripletSet":
        payload = json.loads(Path(path).read_text())
        params = MineParams(**payload["params"])
        stats_raw = payload["stats"]
        stats = MiningStats(
            attempted=stats_raw["attempted"],
            succeeded=stats_raw["succeeded"],
            failed_style=stats_raw["failed_style"],
            failed_content=stats_raw["failed_content"],
            tau_content=stats_raw["tau_content"],
            tau_style=stats_raw["tau_style"],
            content_sim_hist=stats_raw["content_sim_hist"],
            style_sim_hist=stats_raw["style_sim_hist"],
        )
        triplets = [Triplet(**t) for t in payload["triplets"]]
        return cls(triplets=triplets, params=params, corpus_hash=payload["corpus_hash"], stats=stats)

    def file_hash(self, path: str | Path) -> str:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def mine_dataset(bundle: CorpusBundle, encoders: EncoderBundle, params: MineParams | None = None) -> TripletSet:
    """Mine one triplet per target item; per-item filter failures go into stats."""
    params = params or MineParams()
    miner = TripletMiner(bundle, encoders, params)
    stats = MiningStats(tau_content=miner.tau_content, tau_style=miner.tau_style)
    triplets: list[Triplet] = []
    for x_id in miner.target_ids:
        stats.attempted += 1
        try:
            triplets.append(miner.mine_triplet(int(x_id)))
            stats.succeeded += 1
        except NoCandidateError as err:
            if err.modality == "style":
                stats.failed_style += 1
            else:
                stats.failed_content += 1
    edges = np.linspace(-1.0, 1.0, _HIST_BINS + 1)
    stats.content_sim_hist = np.histogram([t.content_sim for t in triplets], bins=edges)[0].tolist()
    stats.style_sim_hist = np.histogram([t.style_sim for t in triplets], bins=edges)[0].tolist()
    return TripletSet(
        triplets=triplets, params=params, corpus_hash=bundle.content_hash(), stats=stats
    )
