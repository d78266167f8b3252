"""Content-addressed record/replay cache for backend calls

Every rating, judge score and generated persona is stored under the SHA-256
of its full request content, so a rerun with the same inputs replays
bit-identical results without contacting the backend.
Layout: <cache_dir>/<key[:2]>/<key>.json
"""

import hashlib
import json
import os
import threading
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError

from .backends import RatingResult
from .core_model import Case, OrdinalScale, Persona
from .errors import CacheCorruptionError
from .logging_setup import get_logger

CACHE_SCHEMA_VERSION = 1


class CacheRecord(BaseModel):
    model_config = ConfigDict(extra='forbid')

    schema_version: int
    key: str
    kind: str
    level: Optional[int] = None
    rationale: str = ""
    text: Optional[str] = None
    scores: Optional[List[float]] = None
    timestamp: float


def request_key(**content) -> str:
    """SHA-256 over the canonical JSON of the request content."""
    blob = json.dumps(content, sort_keys=True, separators=(',', ':'), ensure_ascii=False)
    return hashlib.sha256(blob.encode('utf-8')).hexdigest()


class RecordStore:
    """
    Directory of JSON records keyed by content hash.

    Writes go through a temp file and os.replace. Concurrent misses on the
    same key are serialized so the backend is called once.
    """

    def __init__(self, cache_dir: str):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.log = get_logger()
        self.hits = 0
        self.misses = 0
        self._stats_lock = threading.Lock()
        self._locks_lock = threading.Lock()
        self._key_locks: Dict[str, threading.Lock] = {}

    def path_for(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.json"

    def lock_for(self, key: str) -> threading.Lock:
        with self._locks_lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def load(self, key: str) -> Optional[CacheRecord]:
        path = self.path_for(key)
        if not path.exists():
            return None
        try:
            with open(path, 'r', encoding='utf-8') as f:
                record = CacheRecord.model_validate(json.load(f))
        except (json.JSONDecodeError, UnicodeDecodeError, ValidationError) as e:
            raise CacheCorruptionError(f"corrupt cache record {path}: {e}", path=str(path))
        if record.schema_version != CACHE_SCHEMA_VERSION or record.key != key:
            raise CacheCorruptionError(f"cache record {path} does not match its key or version", path=str(path))
        return record

    def store(self, record: CacheRecord):
        path = self.path_for(record.key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
        with open(tmp, 'w', encoding='utf-8') as f:
            json.dump(record.model_dump(), f, sort_keys=True, indent=2)
        os.replace(tmp, path)

    def fetch(self, key: str, kind: str, compute) -> CacheRecord:
        """Return the stored record or build one with compute() and store it."""
        with self.lock_for(key):
            record = self.load(key)
            if record is not None:
                with self._stats_lock:
                    self.hits += 1
                return record
            with self._stats_lock:
                self.misses += 1
            fields = compute()
            record = CacheRecord(
                schema_version=CACHE_SCHEMA_VERSION, key=key, kind=kind,
                timestamp=time.time(), **fields,
            )
            self.store(record)
            return record

    def stats(self) -> Dict[str, int]:
        with self._stats_lock:
            return {"hits": self.hits, "misses": self.misses}


class CachedRater:
    """RaterBackend wrapper that records and replays ratings."""

    supports_parallel = True

    def __init__(self, inner, store: RecordStore):
        self.inner = inner
        self.store = store
        self.backend_id = inner.backend_id
        # replay makes any backend deterministic
        self.deterministic = True

    def rate(self, persona: Persona, case: Case, scale: OrdinalScale,
             sample: int = 0) -> RatingResult:
        key = request_key(
            kind="rating", backend=self.inner.backend_id, persona_id=persona.id,
            persona=persona.prompt_text, case_id=case.id, case=case.payload,
            scale=scale.to_dict(), sample=sample,
        )

        def compute():
            result = self.inner.rate(persona, case, scale, sample)
            return {"level": result.level, "rationale": result.rationale}

        record = self.store.fetch(key, "rating", compute)
        if record.level is None:
            raise CacheCorruptionError(f"rating record {key} has no level", path=str(self.store.path_for(key)))
        return RatingResult(level=scale.check_level(record.level), rationale=record.rationale)

    def close(self):
        close = getattr(self.inner, "close", None)
        if close:
            close()


class CachedCoherenceScorer:
    def __init__(self, inner, store: RecordStore):
        self.inner = inner
        self.store = store
        self.backend_id = inner.backend_id

    def score(self, persona: Persona, case: Case, rationale: str,
              level: Optional[int] = None) -> Tuple[float, float]:
        key = request_key(
            kind="judge", backend=self.inner.backend_id, persona_id=persona.id,
            persona=persona.prompt_text, case_id=case.id, case=case.payload,
            rationale=rationale, level=level,
        )

        def compute():
            soundness, grounding = self.inner.score(persona, case, rationale, level)
            return {"scores": [float(soundness), float(grounding)]}

        record = self.store.fetch(key, "judge", compute)
        if not record.scores or len(record.scores) != 2:
            raise CacheCorruptionError(f"judge record {key} is malformed", path=str(self.store.path_for(key)))
        return record.scores[0], record.scores[1]


class CachedGenerator:
    def __init__(self, inner, store: RecordStore):
        self.inner = inner
        self.store = store
        self.backend_id = inner.backend_id

    def generate_persona(self, request) -> str:
        key = request_key(
            kind="persona", backend=self.inner.backend_id,
            prompt=request.rendered_prompt, request_id=request.request_id,
        )
        record = self.store.fetch(key, "persona", lambda: {"text": self.inner.generate_persona(request)})
        if not record.text:
            raise CacheCorruptionError(f"persona record {key} has no text", path=str(self.store.path_for(key)))
        return record.text
