"""Content-addressed State Repository.

Layout::

    <root>/<workflow_id>/<state_id>.state   one canonical JSON document per state
    <root>/<workflow_id>/audit.log          append-only invalidation log

The id of a state is the SHA-256 of its file bytes with ``created_at`` and
``status`` zeroed, so status flips never change identity and a renamed file
is detected on load.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .actions import ActionProgram, program_from_dict, program_to_dict
from .detectors import (
    DetectorSet,
    MatchResult,
    detector_set_from_list,
    detector_set_to_list,
    match_detector_set,
)
from .page_model import PageSnapshot

__all__ = [
    "TokenUsage",
    "ConcreteState",
    "RepoStats",
    "Repository",
    "StorageError",
    "IntegrityError",
    "NotFound",
    "state_to_bytes",
    "state_from_bytes",
    "compute_state_id",
    "rank_key",
]

log = logging.getLogger(__name__)

ACTIVE = "active"
STALE = "stale"
_STATUSES = (ACTIVE, STALE)


class StorageError(OSError):
    pass


class IntegrityError(ValueError):
    pass


class NotFound(KeyError):
    pass


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens

    def __add__(self, other: TokenUsage) -> TokenUsage:
        return TokenUsage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)

    def to_dict(self) -> dict[str, int]:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TokenUsage:
        return cls(int(data.get("input_tokens", 0)), int(data.get("output_tokens", 0)))

    @classmethod
    def sum(cls, items: Iterable[TokenUsage]) -> TokenUsage:
        total = cls()
        for u in items:
            total = total + u
        return total


@dataclass(frozen=True)
class ConcreteState:
    """A compiled abstract state: detector sets plus the program to replay.

    End states carry ``program=None``; their completion test is the progress
    clause on the abstract state.
    """

    workflow_id: str
    abstract_name: str
    detector_sets: tuple[DetectorSet, ...]
    program: ActionProgram | None
    created_at: float = 0.0
    synthesis_tokens: TokenUsage = field(default_factory=TokenUsage)
    status: str = ACTIVE
    state_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "detector_sets", tuple(self.detector_sets))
        if not self.detector_sets:
            raise ValueError("concrete state needs at least one detector set")
        if self.status not in _STATUSES:
            raise ValueError(f"bad status {self.status!r}")
        if not self.state_id:
            object.__setattr__(self, "state_id", compute_state_id(self))

    def best_match(self, snap: PageSnapshot) -> MatchResult | None:
        """Highest-scoring matching detector set, or None when no set matches."""
        best = None
        for ds in self.detector_sets:
            res = match_detector_set(ds, snap)
            if res.matched and (best is None or res.score > best.score):
                best = res
        return best


def _state_doc(cs: ConcreteState, *, zeroed: bool) -> dict[str, Any]:
    return {
        "workflow_id": cs.workflow_id,
        "abstract_name": cs.abstract_name,
        "detector_sets": [detector_set_to_list(ds) for ds in cs.detector_sets],
        "program": program_to_dict(cs.program) if cs.program is not None else None,
        "created_at": 0 if zeroed else cs.created_at,
        "synthesis_tokens": cs.synthesis_tokens.to_dict(),
        "status": "" if zeroed else cs.status,
    }


def _dump(doc: dict[str, Any]) -> bytes:
    return (json.dumps(doc, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def compute_state_id(cs: ConcreteState) -> str:
    return hashlib.sha256(_dump(_state_doc(cs, zeroed=True))).hexdigest()


def state_to_bytes(cs: ConcreteState) -> bytes:
    return _dump(_state_doc(cs, zeroed=False))


def state_from_bytes(data: bytes, state_id: str | None = None) -> ConcreteState:
    """Decode a .state document; when ``state_id`` is given it must match the content."""
    try:
        doc = json.loads(data)
        cs = ConcreteState(
            workflow_id=doc["workflow_id"],
            abstract_name=doc["abstract_name"],
            detector_sets=tuple(detector_set_from_list(d) for d in doc["detector_sets"]),
            program=program_from_dict(doc["program"]) if doc["program"] is not None else None,
            created_at=doc["created_at"],
            synthesis_tokens=TokenUsage.from_dict(doc["synthesis_tokens"]),
            status=doc["status"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"malformed state document: {exc}") from None
    if state_id is not None and cs.state_id != state_id:
        raise IntegrityError(f"content hash {cs.state_id} does not match id {state_id}")
    return cs


def rank_key(cs: ConcreteState, res: MatchResult) -> tuple:
    """Lookup order: score desc, created_at desc, state_id asc."""
    return (-res.score, -cs.created_at, cs.state_id)


@dataclass
class RepoStats:
    hits: int = 0
    misses: int = 0
    invalidations: int = 0
    total_tokens: TokenUsage = field(default_factory=TokenUsage)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class Repository:
    """File-backed store of ConcreteStates.

    Counters are process-local. Writes go through temp-file + rename so
    concurrent writers in other processes never observe partial files.
    """

    def __init__(self, root: str | os.PathLike[str], clock: Callable[[], float] = time.time) -> None:
        self.root = Path(root)
        self.clock = clock
        self._stats = RepoStats()
        self._cache: dict[Path, tuple[tuple[int, int], ConcreteState]] = {}
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create repository at {self.root}: {exc}") from exc

    def _dir(self, workflow_id: str) -> Path:
        return self.root / workflow_id

    def _path(self, workflow_id: str, state_id: str) -> Path:
        return self._dir(workflow_id) / f"{state_id}.state"

    def _load(self, path: Path) -> ConcreteState | None:
        try:
            st = path.stat()
            key = (st.st_mtime_ns, st.st_size)
            cached = self._cache.get(path)
            if cached and cached[0] == key:
                return cached[1]
            data = path.read_bytes()
        except FileNotFoundError:
            self._cache.pop(path, None)
            return None
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        try:
            cs = state_from_bytes(data, path.stem)
        except IntegrityError as exc:
            log.warning("ignoring %s: %s", path, exc)
            return None
        self._cache[path] = (key, cs)
        return cs

    def states(self, workflow_id: str, include_stale: bool = False) -> list[ConcreteState]:
        d = self._dir(workflow_id)
        if not d.is_dir():
            return []
        out = []
        for path in sorted(d.glob("*.state")):
            cs = self._load(path)
            if cs is not None and (include_stale or cs.status == ACTIVE):
                out.append(cs)
        return out

    def get(self, workflow_id: str, state_id: str) -> ConcreteState:
        cs = self._load(self._path(workflow_id, state_id))
        if cs is None:
            raise NotFound(state_id)
        return cs

    def verify(self) -> list[Path]:
        """Paths whose content does not hash to their file name."""
        bad = []
        for path in sorted(self.root.glob("*/*.state")):
            try:
                state_from_bytes(path.read_bytes(), path.stem)
            except IntegrityError:
                bad.append(path)
        return bad

    def store_state(self, cs: ConcreteState, known_states: Iterable[str] | None = None) -> str:
        expected = compute_state_id(cs)
        if cs.state_id != expected:
            raise IntegrityError(f"state_id {cs.state_id} does not match content hash {expected}")
        if known_states is not None and cs.abstract_name not in set(known_states):
            raise ValueError(f"abstract state {cs.abstract_name!r} not in workflow")
        path = self._path(cs.workflow_id, cs.state_id)
        existing = self._load(path)
        if existing is not None and existing.status == ACTIVE:
            return cs.state_id
        if cs.status != ACTIVE:
            cs = replace(cs, status=ACTIVE)
        if existing is None and not cs.created_at:
            cs = replace(cs, created_at=self.clock())
        elif existing is not None:
            cs = replace(cs, created_at=existing.created_at)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(path, state_to_bytes(cs))
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from exc
        self._stats.total_tokens = self._stats.total_tokens + cs.synthesis_tokens
        return cs.state_id

    def lookup(
        self, workflow_id: str, abstract_name_filter: str | Iterable[str] | None, snap: PageSnapshot
    ) -> list[tuple[ConcreteState, MatchResult]]:
        if isinstance(abstract_name_filter, str):
            names = {abstract_name_filter}
        elif abstract_name_filter is not None:
            names = set(abstract_name_filter)
        else:
            names = None
        found = []
        for cs in self.states(workflow_id):
            if names is not None and cs.abstract_name not in names:
                continue
            res = cs.best_match(snap)
            if res is not None:
                found.append((cs, res))
        found.sort(key=lambda pair: rank_key(*pair))
        if found:
            self._stats.hits += 1
        else:
            self._stats.misses += 1
        return found

    def invalidate(self, state_id: str, reason: str, workflow_id: str | None = None) -> None:
        if workflow_id is not None:
            candidates = [self._path(workflow_id, state_id)]
        else:
            candidates = sorted(self.root.glob(f"*/{state_id}.state"))
        cs = None
        path = None
        for p in candidates:
            cs = self._load(p)
            if cs is not None:
                path = p
                break
        if cs is None or path is None:
            raise NotFound(state_id)
        if cs.status == STALE:
            return
        try:
            _atomic_write(path, state_to_bytes(replace(cs, status=STALE)))
            entry = json.dumps(
                {"at": self.clock(), "state_id": state_id, "abstract_name": cs.abstract_name, "reason": reason}
            )
            with open(path.parent / "audit.log", "a", encoding="utf-8") as fh:
                fh.write(entry + "\n")
        except OSError as exc:
            raise StorageError(f"cannot invalidate {state_id}: {exc}") from exc
        self._stats.invalidations += 1

    def import_state(self, cs: ConcreteState, workflow_id: str) -> str:
        """Copy a state into another workflow's namespace (explicit cross-workflow reuse)."""
        copy = replace(cs, workflow_id=workflow_id, state_id="", status=ACTIVE, created_at=0.0)
        copy = replace(copy, state_id=compute_state_id(copy))
        return self.store_state(copy)

    def import_file(self, path: str | os.PathLike[str], workflow_id: str) -> str:
        p = Path(path)
        return self.import_state(state_from_bytes(p.read_bytes(), p.stem), workflow_id)

    def audit_log(self, workflow_id: str) -> list[dict[str, Any]]:
        path = self._dir(workflow_id) / "audit.log"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]

    def stats(self) -> RepoStats:
        s = self._stats
        return RepoStats(s.hits, s.misses, s.invalidations, s.total_tokens)
