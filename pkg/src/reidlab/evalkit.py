"""Retrieval evaluation: similarity prefilter, ranking strategies, CMC/mAP.

The per-query pipeline is junk removal, embedding prefilter, then one of two
ranking strategies: pairwise confidence ranking (one judge call per gallery
image) or the multi-turn best-choice protocol (repeatedly pick the most
similar of up to B candidates). Reports carry the full configuration so any
run can be reproduced.
"""

from __future__ import annotations

import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backend as backend_mod
from .backend import BackendError, CountingBackend, EmbeddingError, Part, image_part, text_part
from .corpus import CorpusIndex

EVAL_SETTINGS = ("standard", "cc", "vi", "t2i")
STRATEGIES = ("pairwise", "best_choice")

DEGRADED_FRACTION = 0.10


class EvalError(Exception):
    """Evaluation-level failure (bad split, bad config)."""


@dataclass
class PrefilterConfig:
    """Similarity gate ahead of the ranking strategies."""

    tau: float = 0.5
    floor: int = 32
    embedder_id: str = "identity"

    def __post_init__(self):
        if self.floor < 1:
            raise ValueError("floor must be >= 1")
        if not -1.0 <= self.tau <= 1.0:
            raise ValueError("tau must be a cosine similarity in [-1, 1]")


@dataclass
class RankingConfig:
    strategy: str = "pairwise"
    batch_size: int = 8
    gallery_cap: int | None = None
    max_workers: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


@dataclass(frozen=True)
class RankedEntry:
    image_id: str
    score: float
    flagged: bool = False


@dataclass
class SimilarityList:
    """A query's full descending ranking over the evaluated gallery."""

    query_id: str
    entries: list[RankedEntry]
    strategy: str
    degraded: bool = False

    def ids(self) -> list[str]:
        return [e.image_id for e in self.entries]


@dataclass(frozen=True)
class EvalQuery:
    """One probe: an image or a text description, plus junk metadata."""

    query_id: str
    identity_id: str
    image_id: str | None = None
    text: str | None = None
    camera_id: str | None = None
    modality: str | None = None
    clothing_state_id: str | None = None

    def parts(self) -> list[Part]:
        out: list[Part] = []
        if self.image_id is not None:
            out.append(image_part(self.image_id))
        if self.text is not None:
            out.append(text_part(self.text))
        if not out:
            raise EvalError(f"query {self.query_id} has neither image nor text")
        return out


@dataclass
class EvalSplit:
    setting: str
    queries: list[EvalQuery]
    gallery: list[str]


@dataclass
class EvalReport:
    setting: str
    strategy: str
    per_query: list[dict]
    mean_ap: float
    cmc: list[float]
    config: dict
    calls: dict
    latency_ms: dict
    diagnostics: dict

    @property
    def rank1(self) -> float:
        return self.cmc[0] if self.cmc else 0.0

    def rank_at(self, r: int) -> float:
        if not self.cmc:
            return 0.0
        return self.cmc[min(r, len(self.cmc)) - 1]

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "strategy": self.strategy,
            "mAP": self.mean_ap,
            "rank1": self.rank1,
            "cmc": list(self.cmc),
            "per_query": self.per_query,
            "config": self.config,
            "calls": self.calls,
            "latency_ms": self.latency_ms,
            "diagnostics": self.diagnostics,
        }

    def summary_table(self) -> str:
        header = f"setting={self.setting} strategy={self.strategy}"
        cols = "mAP     Rank-1  Rank-5  Rank-10"
        vals = (
            f"{self.mean_ap * 100:<7.1f} {self.rank_at(1) * 100:<7.1f} "
            f"{self.rank_at(5) * 100:<7.1f} {self.rank_at(10) * 100:<7.1f}"
        )
        return "\n".join([header, cols, vals])


# ---------------------------------------------------------------------------
# Prefilter
# ---------------------------------------------------------------------------


class _EmbedCache:
    def __init__(self, embedder):
        self.embedder = embedder
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self.calls = 0

    def embed(self, ref: str, kind: str = "image") -> np.ndarray:
        key = (kind, ref)
        if key not in self._cache:
            self.calls += 1
            self._cache[key] = backend_mod.embed(ref, self.embedder, kind=kind)
        return self._cache[key]


def prefilter(
    query_ref: str,
    gallery: Sequence[str],
    embedder,
    config: PrefilterConfig,
    query_kind: str = "image",
) -> list[str]:
    """Retain gallery images with cosine similarity strictly above tau.

    The retained set is topped up to ``floor`` with the highest-similarity
    rejects. Output order is descending similarity with image_id
    tie-breaking, so downstream ranking sees the most similar candidates
    first.
    """
    cache = embedder if isinstance(embedder, _EmbedCache) else _EmbedCache(embedder)
    failures: list[str] = []
    try:
        qvec = cache.embed(query_ref, kind=query_kind)
    except EmbeddingError as exc:
        raise EmbeddingError(f"query embedding failed: {exc}", failed_ids=[query_ref]) from exc
    sims: list[tuple[float, str]] = []
    for ref in gallery:
        try:
            gvec = cache.embed(ref, kind="image")
        except EmbeddingError:
            failures.append(ref)
            continue
        sims.append((float(np.dot(qvec, gvec)), ref))
    if failures:
        raise EmbeddingError(f"embedding failed for {len(failures)} gallery image(s)", failed_ids=failures)
    sims.sort(key=lambda item: (-item[0], item[1]))
    retained = [ref for sim, ref in sims if sim > config.tau]
    if len(retained) < config.floor:
        rejects = [ref for sim, ref in sims if sim <= config.tau]
        retained = retained + rejects[: config.floor - len(retained)]
    return retained


# ---------------------------------------------------------------------------
# Ranking strategies
# ---------------------------------------------------------------------------


def rank_pairwise(
    query_id: str,
    query: Sequence[Part],
    gallery: Sequence[str],
    backend,
    max_workers: int = 1,
) -> SimilarityList:
    """Judge every gallery image against the query; rank by signed confidence.

    A "yes" scores +confidence, a "no" scores -confidence, so confident
    rejections sink below uncertain ones. Per-image backend errors score
    -inf and are flagged; if more than 10% flag, the list is degraded.
    """
    if not gallery:
        raise EvalError("gallery must be non-empty")

    def judge(ref: str) -> RankedEntry:
        try:
            result = backend_mod.judge_pair(query, ref, backend)
        except BackendError:
            return RankedEntry(image_id=ref, score=float("-inf"), flagged=True)
        signed = result.confidence if result.verdict == "yes" else -result.confidence
        return RankedEntry(image_id=ref, score=signed, flagged=result.flagged)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            entries = list(pool.map(judge, gallery))
    else:
        entries = [judge(ref) for ref in gallery]
    entries.sort(key=lambda e: (-e.score, e.image_id))
    flagged = sum(1 for e in entries if e.flagged)
    return SimilarityList(
        query_id=query_id,
        entries=entries,
        strategy="pairwise",
        degraded=flagged > DEGRADED_FRACTION * len(entries),
    )


def rank_best_choice(
    query_id: str,
    query: Sequence[Part],
    gallery: Sequence[str],
    backend,
    batch_size: int = 8,
) -> SimilarityList:
    """Multi-turn best-choice ranking: each selection removes one candidate.

    A selection scans the whole remaining pool in windows of up to
    ``batch_size`` non-overlapping candidates, carrying the current champion
    into the next window, so the survivor is the pool's locally-optimal
    best regardless of its position. The survivor joins the ranking and
    leaves the pool; exactly |gallery| selections occur. Scores encode
    (selection order, confidence) lexicographically so the selection order
    alone determines the ranking.
    """
    if not gallery:
        raise EvalError("gallery must be non-empty")
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    pool = list(gallery)
    total = len(pool)
    entries: list[RankedEntry] = []
    turns = 0
    degraded_turns = 0
    while pool:
        if len(pool) == 1:
            champion_index, confidence, flagged = 0, 0.0, False
        else:
            confidence, flagged = 0.0, False
            window_indexes = list(range(min(batch_size, len(pool))))
            cursor = window_indexes[-1] + 1
            while True:
                window = [pool[i] for i in window_indexes]
                turns += 1
                try:
                    result = backend_mod.choose_best(query, window, backend)
                    chosen = int(result.verdict)
                    confidence, flagged = result.confidence, result.flagged
                except BackendError:
                    chosen, confidence, flagged = 0, 0.0, True
                    degraded_turns += 1
                champion_index = window_indexes[chosen]
                if cursor >= len(pool):
                    break
                fresh = list(range(cursor, min(cursor + batch_size - 1, len(pool))))
                window_indexes = [champion_index] + fresh
                cursor = fresh[-1] + 1
        ref = pool[champion_index]
        # Base (total - #selected) leaves gaps of 1; confidence/2 in [0, .5]
        # annotates without ever reordering selections.
        score = float(total - len(entries)) + confidence / 2.0
        entries.append(RankedEntry(image_id=ref, score=score, flagged=flagged))
        pool.remove(ref)
    return SimilarityList(
        query_id=query_id,
        entries=entries,
        strategy="best_choice",
        degraded=degraded_turns > DEGRADED_FRACTION * max(1, turns),
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def compute_ap(ranking: SimilarityList, relevant: set[str]) -> float:
    """Average precision of a ranking against a relevant set.

    Normalized by the number of relevant items present in the evaluated
    gallery; raises when the intersection is empty.
    """
    hits = 0
    total = 0.0
    for position, entry in enumerate(ranking.entries, start=1):
        if entry.image_id in relevant:
            hits += 1
            total += hits / position
    if hits == 0:
        raise EvalError(f"query {ranking.query_id}: no relevant item in the evaluated gallery")
    return total / hits


def compute_cmc(rankings: Sequence[tuple[SimilarityList, set[str]]], max_rank: int | None = None) -> np.ndarray:
    """CMC curve: cmc[r] = fraction of queries with a hit in the top r+1."""
    if not rankings:
        raise EvalError("cannot compute CMC over an empty query set")
    if max_rank is None:
        max_rank = max(len(sl.entries) for sl, _ in rankings)
    curve = np.zeros(max_rank)
    for similarity_list, relevant in rankings:
        hit_rank = None
        for position, entry in enumerate(similarity_list.entries, start=1):
            if entry.image_id in relevant:
                hit_rank = position
                break
        if hit_rank is None:
            raise EvalError(f"query {similarity_list.query_id}: no relevant item in ranking")
        if hit_rank <= max_rank:
            curve[hit_rank - 1 :] += 1.0
    return curve / len(rankings)


# ---------------------------------------------------------------------------
# Relevance and junk conventions
# ---------------------------------------------------------------------------


def _scope_gallery(index: CorpusIndex, setting: str, query: EvalQuery, gallery: Sequence[str]) -> list[str]:
    if setting == "vi":
        return [g for g in gallery if index.records[g].modality != query.modality]
    return list(gallery)


def _junk_ids(index: CorpusIndex, setting: str, query: EvalQuery) -> set[str]:
    """Gallery images excluded from ranking and metrics for this query."""
    if setting == "t2i" or query.image_id is None:
        return set()
    junk = set()
    for ref in index.by_identity.get(query.identity_id, []):
        rec = index.records[ref]
        if rec.camera_id == query.camera_id:
            junk.add(ref)
        elif setting == "cc" and rec.clothing_state_id == query.clothing_state_id:
            junk.add(ref)
    if query.image_id:
        junk.add(query.image_id)
    return junk


def _relevant_ids(index: CorpusIndex, setting: str, query: EvalQuery, gallery: Sequence[str]) -> set[str]:
    relevant = set()
    for ref in gallery:
        rec = index.records[ref]
        if rec.identity_id != query.identity_id:
            continue
        if setting == "standard" and rec.camera_id != query.camera_id:
            relevant.add(ref)
        elif setting == "cc" and rec.camera_id != query.camera_id and rec.clothing_state_id != query.clothing_state_id:
            relevant.add(ref)
        elif setting == "vi" and rec.modality != query.modality:
            relevant.add(ref)
        elif setting == "t2i":
            relevant.add(ref)
    return relevant


def build_split(index: CorpusIndex, setting: str, queries_per_identity: int = 1) -> EvalSplit:
    """Deterministic query/gallery split with cross-camera ground truth.

    Per identity the first eligible images (sorted by image_id) become
    queries and everything else joins the shared gallery. Eligibility is
    setting-specific: cc queries need a different-clothing match elsewhere,
    vi queries need a cross-modality match, t2i queries need a caption.
    """
    if setting not in EVAL_SETTINGS:
        raise EvalError(f"unknown setting {setting!r}, expected one of {EVAL_SETTINGS}")
    queries: list[EvalQuery] = []
    query_ids: set[str] = set()
    for pid in index.identities():
        images = index.by_identity[pid]
        picked = 0
        for ref in images:
            if picked >= queries_per_identity:
                break
            rec = index.records[ref]
            others = [index.records[o] for o in images if o != ref]
            if setting == "standard":
                eligible = any(o.camera_id != rec.camera_id for o in others)
            elif setting == "cc":
                eligible = rec.clothing_state_id is not None and any(
                    o.camera_id != rec.camera_id and o.clothing_state_id != rec.clothing_state_id for o in others
                )
            elif setting == "vi":
                eligible = any(
                    o.modality != rec.modality and o.camera_id != rec.camera_id for o in others
                )
            else:  # t2i
                eligible = index.caption_of(ref) is not None and len(others) > 0
            if not eligible:
                continue
            queries.append(
                EvalQuery(
                    query_id=f"q-{ref}",
                    identity_id=pid,
                    image_id=None if setting == "t2i" else ref,
                    text=index.caption_of(ref) if setting == "t2i" else None,
                    camera_id=rec.camera_id,
                    modality=rec.modality,
                    clothing_state_id=rec.clothing_state_id,
                )
            )
            query_ids.add(ref)
            picked += 1
    if not queries:
        raise EvalError(f"corpus does not support the {setting!r} setting")
    gallery = [ref for ref in index.image_ids() if ref not in query_ids]
    return EvalSplit(setting=setting, queries=queries, gallery=gallery)


# ---------------------------------------------------------------------------
# End-to-end evaluation
# ---------------------------------------------------------------------------


def _percentiles(latencies: list[float]) -> dict:
    if not latencies:
        return {"p50": 0.0, "p95": 0.0, "p99": 0.0}
    arr = np.asarray(latencies)
    return {
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "p99": float(np.percentile(arr, 99)),
    }


def run_eval(
    index: CorpusIndex,
    split: EvalSplit,
    backend,
    embedder,
    prefilter_config: PrefilterConfig | None = None,
    ranking_config: RankingConfig | None = None,
) -> EvalReport:
    """Evaluate a backend over a split and report CMC/mAP.

    Per query: junk removal, tau prefilter, ranking, metrics. Queries whose
    relevant set is empty (before or after the prefilter) are excluded from
    metrics and surfaced in the diagnostics.
    """
    pf = prefilter_config or PrefilterConfig()
    rk = ranking_config or RankingConfig()
    counting = backend if isinstance(backend, CountingBackend) else CountingBackend(backend)
    cache = _EmbedCache(embedder)
    started = time.perf_counter()

    rankings: list[tuple[SimilarityList, set[str]]] = []
    per_query: list[dict] = []
    aps: list[float] = []
    skipped_no_relevant = 0
    excluded_after_prefilter = 0
    dropped_relevant_total = 0
    degraded_queries = 0

    for query in split.queries:
        scoped = _scope_gallery(index, split.setting, query, split.gallery)
        junk = _junk_ids(index, split.setting, query)
        gallery = [g for g in scoped if g not in junk]
        relevant_full = _relevant_ids(index, split.setting, query, gallery)
        if not relevant_full:
            skipped_no_relevant += 1
            continue
        query_ref = query.image_id if query.image_id is not None else (query.text or "")
        query_kind = "image" if query.image_id is not None else "text"
        evaluated = prefilter(query_ref, gallery, cache, pf, query_kind=query_kind)
        if rk.gallery_cap:
            evaluated = evaluated[: rk.gallery_cap]
        relevant = relevant_full & set(evaluated)
        dropped_relevant_total += len(relevant_full) - len(relevant)
        if not relevant:
            excluded_after_prefilter += 1
            continue
        if rk.strategy == "pairwise":
            ranking = rank_pairwise(query.query_id, query.parts(), evaluated, counting, max_workers=rk.max_workers)
        else:
            ranking = rank_best_choice(query.query_id, query.parts(), evaluated, counting, batch_size=rk.batch_size)
        if ranking.degraded:
            degraded_queries += 1
        ap = compute_ap(ranking, relevant)
        aps.append(ap)
        rankings.append((ranking, relevant))
        per_query.append(
            {
                "query_id": query.query_id,
                "ap": ap,
                "evaluated": len(evaluated),
                "relevant": len(relevant),
                "degraded": ranking.degraded,
            }
        )

    if not rankings:
        raise EvalError("no query produced a ranking; corpus/config mismatch")
    cmc = compute_cmc(rankings)
    elapsed = time.perf_counter() - started
    return EvalReport(
        setting=split.setting,
        strategy=rk.strategy,
        per_query=per_query,
        mean_ap=float(np.mean(aps)),
        cmc=[float(x) for x in cmc],
        config={
            "setting": split.setting,
            "strategy": rk.strategy,
            "tau": pf.tau,
            "floor": pf.floor,
            "embedder_id": pf.embedder_id,
            "batch_size": rk.batch_size,
            "gallery_cap": rk.gallery_cap,
            "queries": len(split.queries),
            "gallery": len(split.gallery),
        },
        calls={
            "judge": counting.judge_calls,
            "choose": counting.choose_calls,
            "embed": cache.calls,
        },
        latency_ms={**_percentiles(counting.latencies_ms), "wall_s": elapsed},
        diagnostics={
            "skipped_no_relevant": skipped_no_relevant,
            "excluded_after_prefilter": excluded_after_prefilter,
            "dropped_relevant_total": dropped_relevant_total,
            "degraded_queries": degraded_queries,
        },
    )
