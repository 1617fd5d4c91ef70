"""Chat-style vision-language backends: a remote HTTP client plus local oracles.

All backends expose the same judgment surface (pair verdicts, best-choice
selection, captioning); local oracles are pure functions of their inputs and
seed so evaluation runs are reproducible without a hosted model.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np

from . import prompts
from .corpus import ATTRIBUTE_FIELDS, AttributeProfile, CorpusIndex, ImageRecord

logger = logging.getLogger(__name__)

CONFIDENCE_MODES = ("token_likelihood", "verbalized_score", "binary")


class BackendError(Exception):
    """Base class for backend failures."""


class BackendUnavailableError(BackendError):
    """Transport failure that survived the retry budget."""


class EmbeddingError(BackendError):
    """Embedding failed or produced inconsistent dimensions."""

    def __init__(self, message: str, failed_ids: list[str] | None = None):
        super().__init__(message)
        self.failed_ids = failed_ids or []


@dataclass(frozen=True)
class Part:
    """One message part: text, an image reference, or an attribute fragment."""

    kind: str  # "text" | "image" | "attributes"
    value: object

    def __post_init__(self):
        if self.kind not in ("text", "image", "attributes"):
            raise ValueError(f"unknown part kind {self.kind!r}")


def text_part(text: str) -> Part:
    return Part("text", text)


def image_part(ref: str) -> Part:
    return Part("image", ref)


def attributes_part(fragment: dict) -> Part:
    return Part("attributes", dict(fragment))


@dataclass
class Message:
    role: str
    parts: list[Part]

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if not self.parts:
            raise ValueError("message parts must be non-empty")


@dataclass
class JudgeResult:
    """A backend's verdict plus its confidence in [0, 1]."""

    verdict: object  # "yes" | "no" | 0-based candidate index
    confidence: float
    raw_text: str = ""
    latency_ms: float = 0.0
    flagged: bool = False

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass
class BackendConfig:
    """Remote endpoint configuration."""

    endpoint: str
    model_name: str
    request_timeout: float = 30.0
    max_concurrent: int = 4
    retry_attempts: int = 3
    retry_backoff: float = 0.5
    confidence_mode: str = "verbalized_score"
    auth_token: str | None = None
    ledger_path: str | Path | None = None
    image_resolver: Callable[[str], str] | None = None
    decoding: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.retry_attempts < 1:
            raise ValueError("retry_attempts must be >= 1")
        if self.confidence_mode not in CONFIDENCE_MODES:
            raise ValueError(f"confidence_mode must be one of {CONFIDENCE_MODES}")


# ---------------------------------------------------------------------------
# Query resolution shared by the local oracles
# ---------------------------------------------------------------------------


def _query_key(query: Sequence[Part]) -> str:
    chunks = []
    for part in query:
        if part.kind == "attributes":
            chunks.append("attr:" + json.dumps(part.value, sort_keys=True))
        else:
            chunks.append(f"{part.kind}:{part.value}")
    return "|".join(chunks)


def _hash_unit(*parts) -> float:
    """Deterministic uniform draw in [0, 1) keyed by the given parts."""
    key = "|".join(map(str, parts)).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class _CorpusTruth:
    """Ground-truth resolution against a corpus index."""

    def __init__(self, index: CorpusIndex):
        self.index = index
        self._caption_identities: dict[str, set[str]] = {}
        for image_id, profile in index.attributes.items():
            if profile.caption:
                self._caption_identities.setdefault(profile.caption, set()).add(index.identity_of(image_id))

    def matches(self, query: Sequence[Part], candidate: str) -> bool:
        candidate_pid = self.index.identity_of(candidate)
        for part in query:
            if part.kind == "image":
                return self.index.identity_of(str(part.value)) == candidate_pid
        for part in query:
            if part.kind == "text":
                return candidate_pid in self._caption_identities.get(str(part.value), set())
        for part in query:
            if part.kind == "attributes":
                profile = self.index.attributes.get(candidate)
                return profile is not None and profile.matches_fragment(dict(part.value))
        return False


class PerfectOracle:
    """Deterministic stand-in answering from corpus ground truth."""

    def __init__(self, index: CorpusIndex):
        self._truth = _CorpusTruth(index)
        self._index = index

    def judge_pair(self, query: Sequence[Part], candidate: str) -> JudgeResult:
        match = self._truth.matches(query, candidate)
        return JudgeResult(verdict="yes" if match else "no", confidence=1.0, raw_text="yes" if match else "no")

    def choose_best(self, query: Sequence[Part], candidates: Sequence[str]) -> JudgeResult:
        if len(candidates) < 2:
            raise ValueError("choose_best requires at least 2 candidates")
        for i, candidate in enumerate(candidates):
            if self._truth.matches(query, candidate):
                return JudgeResult(verdict=i, confidence=1.0, raw_text=prompts.image_label(i + 1))
        # Forced choice: all non-matches tie, lowest index wins.
        return JudgeResult(verdict=0, confidence=0.0, raw_text=prompts.image_label(1))

    def caption(self, record: ImageRecord) -> AttributeProfile:
        return self._index.attributes.get(record.image_id, AttributeProfile())


class NoisyOracle:
    """Ground truth with verdicts flipped at rate epsilon.

    Flips and confidences hash from (seed, query, candidate), so repeated
    calls with identical inputs return identical results.
    """

    def __init__(self, index: CorpusIndex, epsilon: float, seed: int = 0):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        self._truth = _CorpusTruth(index)
        self._index = index
        self.epsilon = epsilon
        self.seed = seed

    def _flipped(self, query_key: str, candidate: str) -> bool:
        return _hash_unit(self.seed, "flip", query_key, candidate) < self.epsilon

    def _confidence(self, query_key: str, candidate: str) -> float:
        return 1.0 - self.epsilon * _hash_unit(self.seed, "conf", query_key, candidate)

    def judge_pair(self, query: Sequence[Part], candidate: str) -> JudgeResult:
        key = _query_key(query)
        match = self._truth.matches(query, candidate) ^ self._flipped(key, candidate)
        return JudgeResult(
            verdict="yes" if match else "no",
            confidence=self._confidence(key, candidate),
            raw_text="yes" if match else "no",
        )

    def choose_best(self, query: Sequence[Part], candidates: Sequence[str]) -> JudgeResult:
        if len(candidates) < 2:
            raise ValueError("choose_best requires at least 2 candidates")
        key = _query_key(query)
        scores = [
            (1.0 if (self._truth.matches(query, c) ^ self._flipped(key, c)) else 0.0, -i)
            for i, c in enumerate(candidates)
        ]
        best = max(range(len(candidates)), key=lambda i: scores[i])
        return JudgeResult(
            verdict=best,
            confidence=self._confidence(key, candidates[best]),
            raw_text=prompts.image_label(best + 1),
        )

    def caption(self, record: ImageRecord) -> AttributeProfile:
        return self._index.attributes.get(record.image_id, AttributeProfile())


class EmbeddingOracle:
    """Judges by cosine similarity of an embedder's vectors."""

    def __init__(self, embedder, threshold: float = 0.5):
        self.embedder = embedder
        self.threshold = threshold

    def _similarity(self, query: Sequence[Part], candidate: str) -> float:
        qvec = None
        for part in query:
            if part.kind == "image":
                qvec = self.embedder.embed(str(part.value), kind="image")
                break
        if qvec is None:
            for part in query:
                if part.kind == "text":
                    qvec = self.embedder.embed(str(part.value), kind="text")
                    break
        if qvec is None:
            raise BackendError("embedding oracle requires an image or text query part")
        return float(np.dot(qvec, self.embedder.embed(candidate, kind="image")))

    def judge_pair(self, query: Sequence[Part], candidate: str) -> JudgeResult:
        sim = self._similarity(query, candidate)
        if sim > self.threshold:
            return JudgeResult(verdict="yes", confidence=min(1.0, (1.0 + sim) / 2.0), raw_text="yes")
        return JudgeResult(verdict="no", confidence=min(1.0, (1.0 - sim) / 2.0), raw_text="no")

    def choose_best(self, query: Sequence[Part], candidates: Sequence[str]) -> JudgeResult:
        if len(candidates) < 2:
            raise ValueError("choose_best requires at least 2 candidates")
        sims = [self._similarity(query, c) for c in candidates]
        best = int(np.argmax(sims))  # argmax returns the lowest index on ties
        return JudgeResult(
            verdict=best,
            confidence=min(1.0, max(0.0, (1.0 + sims[best]) / 2.0)),
            raw_text=prompts.image_label(best + 1),
        )


# ---------------------------------------------------------------------------
# Embedders
# ---------------------------------------------------------------------------


class IdentityEmbedder:
    """Test embedder: per-identity orthogonal codes plus seeded noise.

    With sigma=0 two images of one identity embed identically (cosine 1.0)
    and distinct identities are exactly orthogonal. Text embeds through the
    corpus caption table so text queries land on their identity's code.
    """

    def __init__(self, index: CorpusIndex, sigma: float = 0.0, seed: int = 0, dim: int | None = None):
        self._index = index
        self.sigma = float(sigma)
        self.seed = seed
        identities = index.identities()
        self.dim = dim if dim is not None else max(2, len(identities))
        if len(identities) > self.dim:
            raise EmbeddingError(f"dim {self.dim} cannot host {len(identities)} orthogonal identities")
        self._axis = {pid: i for i, pid in enumerate(identities)}
        self._caption_identity: dict[str, str] = {}
        for image_id, profile in index.attributes.items():
            if profile.caption:
                self._caption_identity.setdefault(profile.caption, index.identity_of(image_id))

    def _base_vector(self, identity_id: str | None, key: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        if identity_id is not None:
            vec[self._axis[identity_id]] = 1.0
        else:
            rng = np.random.default_rng(abs(hash_bytes(key)) % 2**32)
            vec = rng.standard_normal(self.dim)
        return vec

    def embed(self, ref: str, kind: str = "image") -> np.ndarray:
        if kind == "image":
            if ref not in self._index.records:
                raise EmbeddingError(f"unknown image {ref!r}", failed_ids=[ref])
            identity = self._index.identity_of(ref)
        elif kind == "text":
            identity = self._caption_identity.get(ref)
        else:
            raise ValueError(f"unknown embed kind {kind!r}")
        vec = self._base_vector(identity, ref)
        if self.sigma > 0:
            noise_rng = np.random.default_rng(abs(hash_bytes(f"{self.seed}|{ref}")) % 2**32)
            vec = vec + self.sigma * noise_rng.standard_normal(self.dim)
        norm = np.linalg.norm(vec)
        if norm == 0:
            vec = self._base_vector(None, ref)
            norm = np.linalg.norm(vec)
        return vec / norm


def hash_bytes(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


class RemoteEmbedder:
    """Client for an embeddings endpoint returning {"data":[{"embedding":[...]}]}."""

    def __init__(self, endpoint: str, model_name: str, timeout: float = 30.0, auth_token: str | None = None):
        self.endpoint = endpoint
        self.model_name = model_name
        self._client = httpx.Client(timeout=timeout)
        self._headers = {"Authorization": f"Bearer {auth_token}"} if auth_token else {}
        self.dim: int | None = None

    def embed(self, ref: str, kind: str = "image") -> np.ndarray:
        try:
            response = self._client.post(
                self.endpoint,
                json={"model": self.model_name, "input": [ref]},
                headers=self._headers,
            )
            response.raise_for_status()
            vec = np.asarray(response.json()["data"][0]["embedding"], dtype=float)
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise EmbeddingError(f"embedding request failed for {ref!r}: {exc}", failed_ids=[ref]) from exc
        if self.dim is None:
            self.dim = vec.shape[0]
        elif vec.shape[0] != self.dim:
            raise EmbeddingError(f"dimension mismatch: got {vec.shape[0]}, expected {self.dim}", failed_ids=[ref])
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise EmbeddingError(f"zero embedding for {ref!r}", failed_ids=[ref])
        return vec / norm


def embed(ref: str, embedder, kind: str = "image") -> np.ndarray:
    """Embed one reference and enforce the unit-norm contract."""
    vec = np.asarray(embedder.embed(ref, kind=kind), dtype=float)
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(vec).all() or abs(norm - 1.0) > 1e-6:
        raise EmbeddingError(f"embedder returned a non-unit vector for {ref!r} (norm={norm})", failed_ids=[ref])
    return vec


# ---------------------------------------------------------------------------
# Remote chat backend
# ---------------------------------------------------------------------------

_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_CONFIDENCE_RE = re.compile(r"confidence\s*[:=]?\s*(\d+(?:\.\d+)?)", re.IGNORECASE)
_CHOICE_LABEL_RE = re.compile(r"image\s*#?\s*(\d+)", re.IGNORECASE)
_ORDINAL_RE = re.compile(r"\b(\d+)\s*(?:st|nd|rd|th)\b", re.IGNORECASE)
_BARE_INT_RE = re.compile(r"\b(\d+)\b")

_YES_TOKENS = {"yes", "yes.", "yes,", "Yes", "YES", " Yes", " yes"}
_NO_TOKENS = {"no", "no.", "no,", "No", "NO", " No", " no"}


def parse_yes_no(text: str) -> str | None:
    match = _YES_NO_RE.search(text)
    return match.group(1).lower() if match else None


def parse_choice(text: str, candidate_count: int) -> int | None:
    """Parse a 1-based candidate label out of a reply; None when absent."""
    for pattern in (_CHOICE_LABEL_RE, _ORDINAL_RE, _BARE_INT_RE):
        match = pattern.search(text)
        if match:
            value = int(match.group(1))
            if 1 <= value <= candidate_count:
                return value - 1
            return None
    return None


def parse_verbalized_confidence(text: str) -> tuple[float, bool]:
    match = _CONFIDENCE_RE.search(text)
    if not match:
        return 0.5, True
    value = float(match.group(1))
    if value > 1.0:  # 0-100 scale
        value = value / 100.0
    return max(0.0, min(1.0, value)), False


def _token_likelihood_confidence(payload: dict) -> tuple[float, bool]:
    try:
        content = payload["choices"][0]["logprobs"]["content"]
        top = content[0].get("top_logprobs", [])
    except (KeyError, IndexError, TypeError):
        return 0.5, True
    p_yes = p_no = 0.0
    for entry in top:
        token = entry.get("token", "")
        prob = float(np.exp(entry.get("logprob", -np.inf)))
        if token in _YES_TOKENS or token.strip().lower() == "yes":
            p_yes += prob
        elif token in _NO_TOKENS or token.strip().lower() == "no":
            p_no += prob
    if p_yes + p_no == 0:
        return 0.5, True
    return p_yes / (p_yes + p_no), False


# Occlusion cues in captioner replies.
_OCCLUSION_RE = re.compile(
    r"(?:cannot|can't|unable to|not able to|fail(?:ed)? to)\s+(?:see|recognize|identify|determine|make out)[^.\n]{0,40}?(?:clothing|clothes)"
    r"|clothing\s+(?:is\s+)?(?:not\s+visible|obscured|occluded)",
    re.IGNORECASE,
)

_FIELD_LINE_RE = re.compile(r"^\s*[-*]?\s*([A-Za-z][A-Za-z _/]+?)\s*[:=]\s*(.+?)\s*$")

_LABEL_TO_FIELD = {label: name for name, label in prompts.FIELD_LABELS.items()}
_LABEL_TO_FIELD.update({name.replace("_", " "): name for name in ATTRIBUTE_FIELDS})
_LABEL_TO_FIELD.update({name: name for name in ATTRIBUTE_FIELDS})


def parse_profile_reply(text: str) -> AttributeProfile:
    """Parse a structured captioner reply into an AttributeProfile.

    Lines of the form ``label: value`` populate fields; unmatched labels are
    ignored; an occlusion cue marks the profile occluded (and drops any
    clothing type so the profile invariant holds).
    """
    fields: dict[str, str] = {}
    for line in text.splitlines():
        match = _FIELD_LINE_RE.match(line)
        if not match:
            continue
        label = match.group(1).strip().lower().replace("_", " ")
        name = _LABEL_TO_FIELD.get(label)
        if name:
            fields[name] = match.group(2).strip()
    occluded = bool(_OCCLUSION_RE.search(text))
    if occluded:
        fields.pop("clothing_type", None)
    return AttributeProfile(occluded=occluded, caption=text.strip() or None, **fields)


def render_query_parts(query: Sequence[Part]) -> tuple[str, list[str]]:
    """Render query parts to prompt text plus the image refs it references."""
    lines: list[str] = []
    refs: list[str] = []
    for part in query:
        if part.kind == "image":
            refs.append(str(part.value))
            lines.append(f"Query image: {prompts.IMAGE_MARKER}")
        elif part.kind == "text":
            lines.append(f"Description: {part.value}")
        else:
            lines.append(f"Attributes: {prompts.serialize_attributes(dict(part.value))}")
    return "\n".join(lines), refs


class RequestLedger:
    """Append-only verbatim log of requests and replies."""

    def __init__(self, path: str | Path | None):
        self._path = Path(path) if path else None
        self._lock = threading.Lock()

    def append(self, request: dict, response: dict | None, error: str | None = None) -> None:
        if self._path is None:
            return
        entry = {"ts": time.time(), "request": request, "response": response}
        if error:
            entry["error"] = error
        with self._lock:
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


class RemoteChatBackend:
    """HTTP client speaking the prevailing chat-completions convention."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        self.config = config
        self._client = client or httpx.Client(timeout=config.request_timeout)
        self._semaphore = threading.Semaphore(config.max_concurrent)
        self._ledger = RequestLedger(config.ledger_path)

    # -- message assembly ---------------------------------------------------

    def _resolve_image(self, ref: str) -> str:
        if self.config.image_resolver is not None:
            return self.config.image_resolver(ref)
        return ref

    def _content_from_prompt(self, prompt_text: str, image_refs: Sequence[str]) -> list[dict]:
        content: list[dict] = []
        chunks = prompt_text.split(prompts.IMAGE_MARKER)
        if len(chunks) - 1 != len(image_refs):
            raise BackendError(
                f"prompt expects {len(chunks) - 1} images but {len(image_refs)} refs were supplied"
            )
        for i, chunk in enumerate(chunks):
            if chunk:
                content.append({"type": "text", "text": chunk})
            if i < len(image_refs):
                content.append({"type": "image_url", "image_url": {"url": self._resolve_image(image_refs[i])}})
        return content

    def _post(self, prompt_text: str, image_refs: Sequence[str]) -> tuple[str, dict, float]:
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": self._content_from_prompt(prompt_text, image_refs)}],
            **self.config.decoding,
        }
        if self.config.confidence_mode == "token_likelihood":
            body["logprobs"] = True
            body["top_logprobs"] = 5
        headers = {}
        if self.config.auth_token:
            headers["Authorization"] = f"Bearer {self.config.auth_token}"
        last_error: Exception | None = None
        start = time.perf_counter()
        for attempt in range(self.config.retry_attempts):
            if attempt:
                time.sleep(self.config.retry_backoff * 2 ** (attempt - 1))
            try:
                with self._semaphore:
                    response = self._client.post(self.config.endpoint, json=body, headers=headers)
                if response.status_code >= 500:
                    last_error = BackendUnavailableError(f"server error {response.status_code}")
                    self._ledger.append(body, None, error=str(last_error))
                    continue
                response.raise_for_status()
                payload = response.json()
                text = payload["choices"][0]["message"]["content"]
                latency = (time.perf_counter() - start) * 1000.0
                self._ledger.append(body, payload)
                return text, payload, latency
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = exc
                self._ledger.append(body, None, error=str(exc))
            except (httpx.HTTPStatusError, KeyError, IndexError, json.JSONDecodeError) as exc:
                # A well-formed HTTP reply we cannot use is not retried.
                self._ledger.append(body, None, error=str(exc))
                raise BackendUnavailableError(f"malformed backend reply: {exc}") from exc
        raise BackendUnavailableError(f"backend unreachable after {self.config.retry_attempts} attempts: {last_error}")

    # -- judgment surface ---------------------------------------------------

    def _with_confidence_suffix(self, prompt_text: str) -> str:
        if self.config.confidence_mode == "verbalized_score":
            return prompt_text + "\n" + prompts.render("confidence_suffix")
        return prompt_text

    def _extract_confidence(self, text: str, payload: dict, verdict: object) -> tuple[float, bool]:
        mode = self.config.confidence_mode
        if mode == "binary":
            return (1.0 if verdict == "yes" else 0.0), False
        if mode == "token_likelihood":
            conf, flagged = _token_likelihood_confidence(payload)
            if verdict == "no" and not flagged:
                conf = 1.0 - conf
            return conf, flagged
        return parse_verbalized_confidence(text)

    def judge_pair(self, query: Sequence[Part], candidate: str) -> JudgeResult:
        query_text, query_refs = render_query_parts(query)
        prompt_text = self._with_confidence_suffix(prompts.render("judge_pair", query=query_text))
        text, payload, latency = self._post(prompt_text, [*query_refs, candidate])
        verdict = parse_yes_no(text)
        flagged = verdict is None
        if flagged:
            verdict = "no"
            confidence = 0.5
        else:
            confidence, conf_flagged = self._extract_confidence(text, payload, verdict)
            flagged = flagged or conf_flagged
        return JudgeResult(verdict=verdict, confidence=confidence, raw_text=text, latency_ms=latency, flagged=flagged)

    def choose_best(self, query: Sequence[Part], candidates: Sequence[str]) -> JudgeResult:
        if len(candidates) < 2:
            raise ValueError("choose_best requires at least 2 candidates")
        query_text, query_refs = render_query_parts(query)
        prompt_text = self._with_confidence_suffix(
            prompts.render("choose_best", query=query_text, gallery=prompts.gallery_block(len(candidates)))
        )
        text, payload, latency = self._post(prompt_text, [*query_refs, *candidates])
        index = parse_choice(text, len(candidates))
        flagged = index is None
        if flagged:
            index = 0
            confidence = 0.5
        else:
            confidence, conf_flagged = self._extract_confidence(text, payload, index)
            flagged = flagged or conf_flagged
        return JudgeResult(verdict=index, confidence=confidence, raw_text=text, latency_ms=latency, flagged=flagged)

    def caption(self, record: ImageRecord) -> AttributeProfile:
        text, _, _ = self._post(prompts.render("caption"), [record.uri])
        return parse_profile_reply(text)


class CountingBackend:
    """Wrapper that counts calls and collects latencies for audits."""

    def __init__(self, inner):
        self.inner = inner
        self.judge_calls = 0
        self.choose_calls = 0
        self.caption_calls = 0
        self.latencies_ms: list[float] = []
        self._lock = threading.Lock()

    def judge_pair(self, query, candidate):
        result = self.inner.judge_pair(query, candidate)
        with self._lock:
            self.judge_calls += 1
            self.latencies_ms.append(result.latency_ms)
        return result

    def choose_best(self, query, candidates):
        result = self.inner.choose_best(query, candidates)
        with self._lock:
            self.choose_calls += 1
            self.latencies_ms.append(result.latency_ms)
        return result

    def caption(self, record):
        with self._lock:
            self.caption_calls += 1
        return self.inner.caption(record)


# ---------------------------------------------------------------------------
# Module-level operations (thin wrappers over the backend surface)
# ---------------------------------------------------------------------------


def judge_pair(query: Sequence[Part], candidate: str, backend) -> JudgeResult:
    start = time.perf_counter()
    result = backend.judge_pair(query, candidate)
    if result.latency_ms == 0.0:
        result.latency_ms = (time.perf_counter() - start) * 1000.0
    return result


def choose_best(query: Sequence[Part], candidates: Sequence[str], backend) -> JudgeResult:
    start = time.perf_counter()
    result = backend.choose_best(query, candidates)
    if result.latency_ms == 0.0:
        result.latency_ms = (time.perf_counter() - start) * 1000.0
    if isinstance(result.verdict, int) and not 0 <= result.verdict < len(candidates):
        return JudgeResult(
            verdict=0,
            confidence=0.5,
            raw_text=result.raw_text,
            latency_ms=result.latency_ms,
            flagged=True,
        )
    return result


def caption(record: ImageRecord, backend) -> AttributeProfile:
    return backend.caption(record)


def data_uri_for_file(path: str | Path, mime: str = "image/png") -> str:
    """Inline a local file as a data URI for dispatch to a remote backend."""
    payload = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return f"data:{mime};base64,{payload}"


def make_backend(descriptor: dict, index: CorpusIndex):
    """Build a backend from a config descriptor.

    Kinds: ``perfect``, ``noisy`` (epsilon, seed), ``embedding`` (sigma,
    seed, threshold), ``remote`` (BackendConfig fields).
    """
    kind = descriptor.get("kind", "perfect")
    if kind == "perfect":
        return PerfectOracle(index)
    if kind == "noisy":
        return NoisyOracle(index, epsilon=float(descriptor.get("epsilon", 0.1)), seed=int(descriptor.get("seed", 0)))
    if kind == "embedding":
        embedder = IdentityEmbedder(
            index,
            sigma=float(descriptor.get("sigma", 0.0)),
            seed=int(descriptor.get("seed", 0)),
        )
        return EmbeddingOracle(embedder, threshold=float(descriptor.get("threshold", 0.5)))
    if kind == "remote":
        config = BackendConfig(
            endpoint=descriptor["endpoint"],
            model_name=descriptor.get("model_name", "default"),
            request_timeout=float(descriptor.get("request_timeout", 30.0)),
            max_concurrent=int(descriptor.get("max_concurrent", 4)),
            retry_attempts=int(descriptor.get("retry_attempts", 3)),
            retry_backoff=float(descriptor.get("retry_backoff", 0.5)),
            confidence_mode=descriptor.get("confidence_mode", "verbalized_score"),
            auth_token=descriptor.get("auth_token"),
            ledger_path=descriptor.get("ledger_path"),
            decoding=dict(descriptor.get("decoding", {})),
        )
        return RemoteChatBackend(config)
    raise ValueError(f"unknown backend kind {kind!r}")


def make_embedder(descriptor: dict, index: CorpusIndex):
    kind = descriptor.get("kind", "identity")
    if kind == "identity":
        return IdentityEmbedder(
            index,
            sigma=float(descriptor.get("sigma", 0.0)),
            seed=int(descriptor.get("seed", 0)),
        )
    if kind == "remote":
        return RemoteEmbedder(
            endpoint=descriptor["endpoint"],
            model_name=descriptor.get("model_name", "default"),
            timeout=float(descriptor.get("request_timeout", 30.0)),
            auth_token=descriptor.get("auth_token"),
        )
    raise ValueError(f"unknown embedder kind {kind!r}")
