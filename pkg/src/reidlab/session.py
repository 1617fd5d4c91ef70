"""Adaptive multi-modal retrieval sessions.

A human operator submits partial queries (image, text, attribute fragments),
inspects ranked candidates, and can promote any candidate to be the next
round's query image. Sessions record an append-only event log; replaying the
log reconstructs the exact session state.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field

from .backend import BackendError, Part, attributes_part, image_part, text_part
from .corpus import ATTRIBUTE_FIELDS, CorpusIndex
from .evalkit import PrefilterConfig, RankedEntry, SimilarityList, prefilter, rank_best_choice, rank_pairwise

DEFAULT_TOP_K = 10


class SessionError(Exception):
    """Base class for session failures."""


class EmptyScopeError(SessionError):
    """The scope descriptor resolved to zero gallery images."""


class InvalidSelectionError(SessionError):
    """The selected candidate is not part of the latest round."""


class SessionClosedError(SessionError):
    """Mutations are rejected once a session is closed."""


@dataclass(frozen=True)
class Query:
    """A partial query: any non-empty combination of the three modalities."""

    image: str | None = None
    text: str | None = None
    attributes: dict | None = None

    def __post_init__(self):
        if self.image is None and self.text is None and not self.attributes:
            raise ValueError("a query needs an image, text, or attributes")
        if self.attributes:
            unknown = set(self.attributes) - set(ATTRIBUTE_FIELDS)
            if unknown:
                raise ValueError(f"unknown attribute fields: {sorted(unknown)}")

    def parts(self) -> list[Part]:
        out: list[Part] = []
        if self.image is not None:
            out.append(image_part(self.image))
        if self.text is not None:
            out.append(text_part(self.text))
        if self.attributes:
            out.append(attributes_part(self.attributes))
        return out

    def to_dict(self) -> dict:
        out: dict = {}
        if self.image is not None:
            out["image"] = self.image
        if self.text is not None:
            out["text"] = self.text
        if self.attributes:
            out["attributes"] = dict(sorted(self.attributes.items()))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> Query:
        return cls(image=data.get("image"), text=data.get("text"), attributes=data.get("attributes"))


@dataclass
class SessionRound:
    round_index: int
    query: Query
    candidates: SimilarityList
    action: dict = field(default_factory=lambda: {"kind": "pending"})
    error: str | None = None
    backend_calls: int = 0

    def candidate_ids(self) -> list[str]:
        return self.candidates.ids()


@dataclass
class SessionConfig:
    k: int = DEFAULT_TOP_K
    strategy: str = "pairwise"
    tau: float = -1.0
    floor: int = 1
    batch_size: int = 8

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "strategy": self.strategy,
            "tau": self.tau,
            "floor": self.floor,
            "batch_size": self.batch_size,
        }


@dataclass
class SessionState:
    session_id: str
    scope: dict
    rounds: list[SessionRound]
    status: str  # "open" | "closed"


def resolve_scope(index: CorpusIndex, scope: dict) -> list[str]:
    """Resolve a scope descriptor to a sorted list of gallery image ids."""
    if scope.get("all"):
        ids = index.image_ids()
    elif "image_ids" in scope:
        ids = sorted(i for i in scope["image_ids"] if i in index.records)
    elif "dataset_id" in scope:
        ids = [i for i in index.image_ids() if index.records[i].dataset_id == scope["dataset_id"]]
    else:
        raise SessionError(f"unsupported scope descriptor: {scope!r}")
    if not ids:
        raise EmptyScopeError(f"scope {scope!r} matches no images")
    return ids


def _candidates_payload(similarity_list: SimilarityList) -> list[dict]:
    out = []
    for entry in similarity_list.entries:
        item = {"image_id": entry.image_id, "score": entry.score}
        if entry.flagged:
            item["flagged"] = True
        out.append(item)
    return out


def _candidates_from_payload(query_id: str, payload: list[dict], strategy: str, degraded: bool = False) -> SimilarityList:
    entries = [
        RankedEntry(image_id=c["image_id"], score=c["score"], flagged=c.get("flagged", False)) for c in payload
    ]
    return SimilarityList(query_id=query_id, entries=entries, strategy=strategy, degraded=degraded)


class Session:
    """A live retrieval session bound to a corpus scope and a backend."""

    def __init__(
        self,
        index: CorpusIndex,
        scope: dict,
        backend,
        embedder=None,
        config: SessionConfig | None = None,
        session_id: str | None = None,
    ):
        self.index = index
        self.scope = dict(scope)
        self.gallery = resolve_scope(index, scope)
        self.backend = backend
        self.embedder = embedder
        self.config = config or SessionConfig()
        self.session_id = session_id or uuid.uuid4().hex
        self.rounds: list[SessionRound] = []
        self.status = "open"
        self._lock = threading.Lock()
        self._events: list[str] = []
        self._append_event(
            {
                "event": "opened",
                "session_id": self.session_id,
                "scope": self.scope,
                "gallery_size": len(self.gallery),
                "config": self.config.to_dict(),
            }
        )

    # -- event log ----------------------------------------------------------

    def _append_event(self, payload: dict) -> str:
        line = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        self._events.append(line)
        return line

    def event_lines(self) -> list[str]:
        return list(self._events)

    # -- state --------------------------------------------------------------

    @property
    def state(self) -> SessionState:
        return SessionState(
            session_id=self.session_id,
            scope=dict(self.scope),
            rounds=list(self.rounds),
            status=self.status,
        )

    def _require_open(self):
        if self.status != "open":
            raise SessionClosedError(f"session {self.session_id} is closed")

    # -- operations ----------------------------------------------------------

    def _rank(self, query: Query, k: int) -> tuple[SimilarityList, int]:
        parts = query.parts()
        gallery = self.gallery
        if self.embedder is not None and (query.image is not None or query.text is not None):
            ref = query.image if query.image is not None else (query.text or "")
            kind = "image" if query.image is not None else "text"
            gallery = prefilter(
                ref,
                gallery,
                self.embedder,
                PrefilterConfig(tau=self.config.tau, floor=min(self.config.floor, len(gallery))),
                query_kind=kind,
            )
        query_id = f"{self.session_id}:{len(self.rounds)}"
        if self.config.strategy == "best_choice":
            ranking = rank_best_choice(query_id, parts, gallery, self.backend, batch_size=self.config.batch_size)
            calls = max(0, len(gallery) - 1)
        else:
            ranking = rank_pairwise(query_id, parts, gallery, self.backend)
            calls = len(gallery)
        truncated = SimilarityList(
            query_id=query_id,
            entries=ranking.entries[:k],
            strategy=ranking.strategy,
            degraded=ranking.degraded,
        )
        return truncated, calls

    def submit_query(self, query: Query, k: int | None = None) -> SessionRound:
        """Rank the scope against a query and record the round.

        Backend failures record a failed round and leave the session open.
        """
        with self._lock:
            self._require_open()
            k = k or self.config.k
            round_index = len(self.rounds)
            try:
                candidates, calls = self._rank(query, k)
                round_ = SessionRound(
                    round_index=round_index,
                    query=query,
                    candidates=candidates,
                    backend_calls=calls,
                )
            except BackendError as exc:
                round_ = SessionRound(
                    round_index=round_index,
                    query=query,
                    candidates=SimilarityList(query_id=f"{self.session_id}:{round_index}", entries=[], strategy=self.config.strategy),
                    error=str(exc),
                )
            self.rounds.append(round_)
            self._append_event(
                {
                    "event": "round",
                    "round_index": round_.round_index,
                    "query": query.to_dict(),
                    "candidates": _candidates_payload(round_.candidates),
                    "action": dict(round_.action),
                    "backend_calls": round_.backend_calls,
                    **({"degraded": True} if round_.candidates.degraded else {}),
                    **({"error": round_.error} if round_.error else {}),
                }
            )
            return round_

    def refine_with_selection(self, candidate: str, extra_text: str | None = None) -> SessionRound:
        """Promote a candidate from the latest round to be the next query."""
        with self._lock:
            self._require_open()
            if not self.rounds:
                raise InvalidSelectionError("no round to select from")
            latest = self.rounds[-1]
            if candidate not in latest.candidate_ids():
                raise InvalidSelectionError(f"candidate {candidate!r} is not in round {latest.round_index}")
            latest.action = {"kind": "selected", "image_id": candidate}
            self._append_event(
                {
                    "event": "action",
                    "round_index": latest.round_index,
                    "action": dict(latest.action),
                }
            )
        query = Query(image=candidate, text=extra_text)
        return self.submit_query(query)

    def close(self) -> None:
        with self._lock:
            self._require_open()
            self.status = "closed"
            self._append_event({"event": "closed", "session_id": self.session_id})

    def export(self) -> list[dict]:
        """The complete replayable log, in order."""
        return [json.loads(line) for line in self._events]

    def export_text(self) -> str:
        return "\n".join(self._events) + "\n"


def import_session(events: list[dict] | str) -> SessionState:
    """Rebuild a SessionState from an exported log."""
    if isinstance(events, str):
        records = [json.loads(line) for line in events.splitlines() if line.strip()]
    else:
        records = list(events)
    if not records or records[0].get("event") != "opened":
        raise SessionError("log must start with an 'opened' event")
    opened = records[0]
    strategy = opened.get("config", {}).get("strategy", "pairwise")
    rounds: list[SessionRound] = []
    status = "open"
    for record in records[1:]:
        kind = record.get("event")
        if kind == "round":
            query = Query.from_dict(record["query"])
            query_id = f"{opened['session_id']}:{record['round_index']}"
            rounds.append(
                SessionRound(
                    round_index=record["round_index"],
                    query=query,
                    candidates=_candidates_from_payload(
                        query_id, record["candidates"], strategy, degraded=record.get("degraded", False)
                    ),
                    action=dict(record["action"]),
                    error=record.get("error"),
                    backend_calls=record.get("backend_calls", 0),
                )
            )
        elif kind == "action":
            rounds[record["round_index"]].action = dict(record["action"])
        elif kind == "closed":
            status = "closed"
        else:
            raise SessionError(f"unknown event kind {kind!r}")
    return SessionState(
        session_id=opened["session_id"],
        scope=dict(opened["scope"]),
        rounds=rounds,
        status=status,
    )
