"""Stocktake session lifecycle: roles, bin tasks, sign-off gating, archival.

State is event-sourced: every mutation validates against the in-memory
state, appends one entry to the mirrored event log, then applies that entry.
``apply_entry`` is a deterministic function of (state, entry), so replaying
the log from scratch reproduces the live state exactly — that equivalence
is the module's central test surface.

Sign-off gating rule. A bin can be signed off once
  (a) every expected batch at the bin was enumerated, i.e. at least one of
      its own units was scanned there (shortages are then auto-confirmed as
      the residual), and
  (b) every surplus unit found at the bin was acknowledged, either by an
      explicit acknowledgment event or by a second validation scan.
"""

from __future__ import annotations

import csv
import io
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import store
from .reconcile import (
    BinReconciliation,
    Classification,
    HandlingUnitRef,
    PayloadError,
    ReferenceInventory,
    UnknownBin,
    classify_scan,
    parse_qr,
    reconcile_bin,
    reconciliation_as_dict,
)
from .store import EventLog, LogEntry


class Role(str, Enum):
    ADMIN = "ADMIN"
    OPERATOR = "OPERATOR"


@dataclass(frozen=True)
class Credential:
    token: str
    operator_id: str
    role: Role


def load_credentials(path: str | Path) -> dict[str, Credential]:
    """Parse a `token,operator_id,role` file into a token index."""
    creds: dict[str, Credential] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ValueError(f"credentials line {line_no}: expected token,operator_id,role")
        token, operator_id, role = parts
        creds[token] = Credential(token, operator_id, Role(role.upper()))
    return creds


# --- domain errors ----------------------------------------------------------

class DomainError(Exception):
    """Base for every modeled session/auth failure."""


class Forbidden(DomainError):
    pass


class NoReferenceLoaded(DomainError):
    pass


class SessionInProgress(DomainError):
    pass


class MalformedRow(DomainError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateHuCode(DomainError):
    def __init__(self, code: str, line: int):
        super().__init__(f"duplicate hu_code {code} (line {line})")
        self.code = code
        self.line = line


class UnknownSession(DomainError):
    pass


class AlreadyStarted(DomainError):
    pass


class SessionArchived(DomainError):
    pass


class TaskCompleted(DomainError):
    pass


class NotAssigned(DomainError):
    pass


class UnknownSurplusUnit(DomainError):
    pass


class IncompleteBatchList(DomainError):
    def __init__(self, blocking_batches: list[str], unacknowledged_surplus: list[str]):
        super().__init__(
            f"blocking batches: {blocking_batches}; unacknowledged surplus: {unacknowledged_surplus}"
        )
        self.blocking_batches = blocking_batches
        self.unacknowledged_surplus = unacknowledged_surplus


class TasksRemaining(DomainError):
    def __init__(self, count: int):
        super().__init__(f"{count} bin tasks not completed")
        self.count = count


# --- state -------------------------------------------------------------------

class TaskState(str, Enum):
    PENDING = "PENDING"
    ONGOING = "ONGOING"
    COMPLETED = "COMPLETED"


@dataclass(frozen=True)
class ScanRecord:
    event_id: str
    operator: str
    at: float
    ref: HandlingUnitRef
    classification: Classification


@dataclass
class BinTask:
    bin_code: str
    state: TaskState = TaskState.PENDING
    assigned_operator: str | None = None
    started_at: float | None = None
    signoff: tuple[str, float] | None = None  # (operator_id, at)
    scans: list[ScanRecord] = field(default_factory=list)
    seen: set[str] = field(default_factory=set)
    scan_counts: dict[str, int] = field(default_factory=dict)
    acked_surplus: set[str] = field(default_factory=set)
    frozen: BinReconciliation | None = None


@dataclass
class StocktakeSession:
    session_id: str
    created_at: float
    state: str = "OPEN"  # OPEN | ARCHIVED
    bin_tasks: dict[str, BinTask] = field(default_factory=dict)
    scan_index: dict[str, Classification] = field(default_factory=dict)  # event_id dedup


@dataclass(frozen=True)
class ArchiveRecord:
    archive_id: str
    session_id: str
    first_seq: int
    last_seq: int
    created_at: float


@dataclass
class SystemState:
    reference: ReferenceInventory | None = None
    sessions: dict[str, StocktakeSession] = field(default_factory=dict)
    archives: dict[str, ArchiveRecord] = field(default_factory=dict)
    session_counter: int = 0


def apply_entry(state: SystemState, entry: LogEntry) -> None:
    """Deterministic state transition; the only way state ever changes."""
    body = entry.body
    if entry.kind == store.KIND_REFERENCE_IMPORT:
        state.reference = ReferenceInventory.from_rows(
            (r[0], r[1], r[2], r[3], int(r[4])) for r in body["rows"]
        )
    elif entry.kind == store.KIND_SESSION_CREATE:
        session = StocktakeSession(session_id=body["session_id"], created_at=entry.at)
        assert state.reference is not None
        for bin_code in state.reference.bins:
            session.bin_tasks[bin_code] = BinTask(bin_code=bin_code)
        state.sessions[session.session_id] = session
        state.session_counter += 1
    elif entry.kind == store.KIND_TASK_START:
        task = state.sessions[body["session_id"]].bin_tasks[body["bin_code"]]
        task.state = TaskState.ONGOING
        task.assigned_operator = entry.actor
        task.started_at = entry.at
    elif entry.kind == store.KIND_SCAN:
        session = state.sessions[body["session_id"]]
        task = session.bin_tasks[body["bin_code"]]
        ref = parse_qr(body["payload"])
        classification = classify_scan(
            state.reference, task.seen, ref, body["bin_code"]
        )
        task.scans.append(
            ScanRecord(
                event_id=body["event_id"],
                operator=entry.actor,
                at=entry.at,
                ref=ref,
                classification=classification,
            )
        )
        task.seen.add(ref.hu_code)
        task.scan_counts[ref.hu_code] = task.scan_counts.get(ref.hu_code, 0) + 1
        session.scan_index[body["event_id"]] = classification
    elif entry.kind == store.KIND_SURPLUS_ACK:
        task = state.sessions[body["session_id"]].bin_tasks[body["bin_code"]]
        task.acked_surplus.add(body["hu_code"])
    elif entry.kind == store.KIND_SIGNOFF:
        task = state.sessions[body["session_id"]].bin_tasks[body["bin_code"]]
        task.state = TaskState.COMPLETED
        task.signoff = (entry.actor, entry.at)
        task.frozen = reconcile_bin(
            state.reference, body["bin_code"], [s.ref for s in task.scans]
        )
    elif entry.kind == store.KIND_ARCHIVE:
        session = state.sessions[body["session_id"]]
        session.state = "ARCHIVED"
        state.archives[body["archive_id"]] = ArchiveRecord(
            archive_id=body["archive_id"],
            session_id=body["session_id"],
            first_seq=1,
            last_seq=entry.seq,
            created_at=entry.at,
        )
    elif entry.kind == store.KIND_CLEAR:
        if body["scope"] == "REFERENCE":
            state.reference = None
        else:
            state.archives = {}
    else:
        raise ValueError(f"cannot apply entry kind {entry.kind!r}")


def replay_state(entries) -> SystemState:
    state = SystemState()
    for entry in entries:
        apply_entry(state, entry)
    return state


# --- reference CSV import ----------------------------------------------------

REFERENCE_CSV_HEADER = ["bin_code", "batch_code", "hu_code", "category", "shelved_at_unix"]


def parse_reference_csv(data: bytes) -> list[tuple[str, str, str, str, int]]:
    """Validate the whole CSV before anything is accepted (atomic import)."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedRow(0, f"not valid UTF-8: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow(0, "empty file") from None
    if [h.strip() for h in header] != REFERENCE_CSV_HEADER:
        raise MalformedRow(1, f"header must be {','.join(REFERENCE_CSV_HEADER)}")
    rows: list[tuple[str, str, str, str, int]] = []
    seen_hu: dict[str, int] = {}
    batch_meta: dict[str, tuple[str, int]] = {}
    for line_no, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != 5:
            raise MalformedRow(line_no, f"expected 5 fields, got {len(row)}")
        bin_code, batch_code, hu_code, category, shelved_raw = (f.strip() for f in row)
        try:
            HandlingUnitRef(bin_code, batch_code, hu_code)
        except PayloadError as exc:
            raise MalformedRow(line_no, str(exc)) from exc
        if category not in ("A", "B", "C"):
            raise MalformedRow(line_no, f"category must be A, B or C, got {category!r}")
        try:
            shelved_at = int(shelved_raw)
        except ValueError:
            raise MalformedRow(line_no, f"shelved_at_unix not an integer: {shelved_raw!r}") from None
        if shelved_at < 0:
            raise MalformedRow(line_no, "shelved_at_unix must be non-negative")
        if hu_code in seen_hu:
            raise DuplicateHuCode(hu_code, line_no)
        seen_hu[hu_code] = line_no
        prior = batch_meta.get(batch_code)
        if prior is not None and prior != (category, shelved_at):
            raise MalformedRow(line_no, f"batch {batch_code} metadata conflicts with an earlier row")
        batch_meta[batch_code] = (category, shelved_at)
        rows.append((bin_code, batch_code, hu_code, category, shelved_at))
    if not rows:
        raise MalformedRow(0, "no data rows")
    return rows


# --- service -----------------------------------------------------------------

@dataclass(frozen=True)
class ImportSummary:
    bins: int
    batches: int
    units: int


class StocktakeService:
    """Command layer over the event log.

    All mutations funnel through one writer lock, which both serializes
    appends (the log is single-writer) and linearizes per-bin task state.
    """

    def __init__(
        self,
        log: EventLog,
        archive_dir: str | Path | None = None,
        clock=time.time,
    ):
        self.log = log
        self.archive_dir = Path(archive_dir) if archive_dir else None
        self.clock = clock
        self.state = SystemState()
        self.engine_seconds = 0.0
        self.lock = threading.RLock()
        for entry in log.entries:
            apply_entry(self.state, entry)

    # -- internals

    def _commit(self, kind: str, body: dict, actor: str, at: float | None = None) -> LogEntry:
        entry = self.log.append(kind, body, actor, self.clock() if at is None else at)
        apply_entry(self.state, entry)
        return entry

    def _session(self, session_id: str) -> StocktakeSession:
        session = self.state.sessions.get(session_id)
        if session is None:
            raise UnknownSession(session_id)
        return session

    def _task(self, session: StocktakeSession, bin_code: str) -> BinTask:
        task = session.bin_tasks.get(bin_code)
        if task is None:
            raise UnknownBin(bin_code)
        return task

    @staticmethod
    def _require_admin(actor: Credential) -> None:
        if actor.role is not Role.ADMIN:
            raise Forbidden(f"{actor.operator_id} is not an administrator")

    def _open_sessions(self) -> list[StocktakeSession]:
        return [s for s in self.state.sessions.values() if s.state == "OPEN"]

    def completeness(self, session_id: str, bin_code: str) -> tuple[BinReconciliation, list[str], list[str]]:
        """Current reconciliation plus whatever blocks sign-off right now."""
        session = self._session(session_id)
        task = self._task(session, bin_code)
        rec = reconcile_bin(self.state.reference, bin_code, [s.ref for s in task.scans])
        blocking = [b for b, t in rec.per_batch.items() if t.counted_qty == 0]
        unacked = [
            hu
            for hu, _ in rec.surplus
            if hu not in task.acked_surplus and task.scan_counts.get(hu, 0) < 2
        ]
        return rec, blocking, unacked

    # -- admin commands

    def import_reference(self, actor: Credential, csv_bytes: bytes) -> ImportSummary:
        with self.lock:
            t0 = time.thread_time()
            self._require_admin(actor)
            if self._open_sessions():
                raise SessionInProgress("an OPEN session exists")
            rows = parse_reference_csv(csv_bytes)
            reference = ReferenceInventory.from_rows(rows)
            self._commit(
                store.KIND_REFERENCE_IMPORT,
                {"rows": [list(r) for r in rows]},
                actor.operator_id,
            )
            self.engine_seconds += time.thread_time() - t0
            return ImportSummary(
                bins=len(reference.bins),
                batches=len(reference.batch_meta),
                units=len(reference.hu_index),
            )

    def create_session(self, actor: Credential) -> StocktakeSession:
        with self.lock:
            self._require_admin(actor)
            if self.state.reference is None:
                raise NoReferenceLoaded("import a reference CSV first")
            session_id = f"S{self.state.session_counter + 1:04d}"
            self._commit(store.KIND_SESSION_CREATE, {"session_id": session_id}, actor.operator_id)
            return self.state.sessions[session_id]

    def clear_data(self, actor: Credential, scope: str) -> None:
        with self.lock:
            self._require_admin(actor)
            if scope not in ("REFERENCE", "HISTORY"):
                raise ValueError(f"scope must be REFERENCE or HISTORY, got {scope!r}")
            if scope == "REFERENCE" and self._open_sessions():
                raise SessionInProgress("an OPEN session exists")
            if scope == "HISTORY" and self.archive_dir is not None:
                for record in self.state.archives.values():
                    bundle = self.archive_dir / record.archive_id
                    if bundle.is_dir():
                        for item in bundle.iterdir():
                            item.unlink()
                        bundle.rmdir()
            self._commit(store.KIND_CLEAR, {"scope": scope}, actor.operator_id)

    def archive_session(self, actor: Credential, session_id: str) -> ArchiveRecord:
        with self.lock:
            self._require_admin(actor)
            session = self._session(session_id)
            if session.state == "ARCHIVED":
                raise SessionArchived(session_id)
            remaining = sum(
                1 for t in session.bin_tasks.values() if t.state is not TaskState.COMPLETED
            )
            if remaining:
                raise TasksRemaining(remaining)
            archive_id = session_id
            self._commit(store.KIND_ARCHIVE, {"session_id": session_id, "archive_id": archive_id}, actor.operator_id)
            record = self.state.archives[archive_id]
            if self.archive_dir is not None:
                self.export_archive(session_id)
            return record

    def export_archive(self, session_id: str) -> Path:
        """Write (or rewrite, byte-identically) the archive bundle directory."""
        session = self._session(session_id)
        if session.state != "ARCHIVED":
            raise store.NotArchived(session_id)
        record = next(
            r for r in self.state.archives.values() if r.session_id == session_id
        )
        if self.archive_dir is None:
            raise ValueError("service has no archive directory configured")
        entries = self.log.read_entries(record.first_seq, record.last_seq)
        rows = [archive_row(task) for _, task in sorted(session.bin_tasks.items())]
        return store.write_archive_bundle(
            self.archive_dir, record.archive_id, session_id, entries, rows
        )

    # -- operator commands

    def start_bin_task(
        self, actor: Credential, session_id: str, bin_code: str, at: float | None = None
    ) -> BinTask:
        with self.lock:
            session = self._session(session_id)
            if session.state == "ARCHIVED":
                raise SessionArchived(session_id)
            task = self._task(session, bin_code)
            if task.state is not TaskState.PENDING:
                raise AlreadyStarted(f"{bin_code} is {task.state.value}")
            self._commit(
                store.KIND_TASK_START,
                {"session_id": session_id, "bin_code": bin_code},
                actor.operator_id,
                at=at,
            )
            return session.bin_tasks[bin_code]

    def submit_scan(
        self,
        actor: Credential,
        session_id: str,
        bin_code: str,
        event_id: str,
        payload: str,
        at: float,
    ) -> Classification:
        with self.lock:
            t0 = time.thread_time()
            session = self._session(session_id)
            if session.state == "ARCHIVED":
                raise SessionArchived(session_id)
            # dedup before task-state checks so late retries stay idempotent
            # even after the bin was signed off
            if event_id in session.scan_index:
                return session.scan_index[event_id]
            task = self._task(session, bin_code)
            if task.state is TaskState.COMPLETED:
                raise TaskCompleted(bin_code)
            if task.state is not TaskState.ONGOING or task.assigned_operator != actor.operator_id:
                raise NotAssigned(f"{bin_code} is not an ongoing task of {actor.operator_id}")
            parse_qr(payload)  # raises PayloadError before anything is logged
            self._commit(
                store.KIND_SCAN,
                {
                    "session_id": session_id,
                    "bin_code": bin_code,
                    "event_id": event_id,
                    "payload": payload,
                },
                actor.operator_id,
                at=at,
            )
            self.engine_seconds += time.thread_time() - t0
            return session.scan_index[event_id]

    def acknowledge_surplus(
        self,
        actor: Credential,
        session_id: str,
        bin_code: str,
        hu_code: str,
        at: float | None = None,
    ) -> None:
        with self.lock:
            session = self._session(session_id)
            if session.state == "ARCHIVED":
                raise SessionArchived(session_id)
            task = self._task(session, bin_code)
            if task.state is TaskState.COMPLETED:
                raise TaskCompleted(bin_code)
            if task.state is not TaskState.ONGOING or task.assigned_operator != actor.operator_id:
                raise NotAssigned(f"{bin_code} is not an ongoing task of {actor.operator_id}")
            if hu_code not in task.seen:
                raise UnknownSurplusUnit(f"{hu_code} was never scanned at {bin_code}")
            designated = self.state.reference.hu_index.get(hu_code)
            if designated is not None and designated[0] == bin_code:
                raise UnknownSurplusUnit(f"{hu_code} is expected at {bin_code}, not surplus")
            self._commit(
                store.KIND_SURPLUS_ACK,
                {"session_id": session_id, "bin_code": bin_code, "hu_code": hu_code},
                actor.operator_id,
                at=at,
            )

    def sign_off_bin(
        self, actor: Credential, session_id: str, bin_code: str, at: float | None = None
    ) -> BinReconciliation:
        with self.lock:
            t0 = time.thread_time()
            session = self._session(session_id)
            if session.state == "ARCHIVED":
                raise SessionArchived(session_id)
            task = self._task(session, bin_code)
            if task.state is TaskState.COMPLETED:
                raise TaskCompleted(bin_code)
            if task.state is not TaskState.ONGOING or task.assigned_operator != actor.operator_id:
                raise NotAssigned(f"{bin_code} is not an ongoing task of {actor.operator_id}")
            _, blocking, unacked = self.completeness(session_id, bin_code)
            if blocking or unacked:
                raise IncompleteBatchList(sorted(blocking), sorted(unacked))
            self._commit(
                store.KIND_SIGNOFF,
                {"session_id": session_id, "bin_code": bin_code},
                actor.operator_id,
                at=at,
            )
            self.engine_seconds += time.thread_time() - t0
            return task.frozen


def archive_row(task: BinTask) -> dict:
    rec = task.frozen
    assert rec is not None, "archive rows come from signed-off tasks only"
    return {
        "bin_code": task.bin_code,
        "batches": len(rec.per_batch),
        "expected_units": sum(t.expected_qty for t in rec.per_batch.values()),
        "counted_units": sum(t.counted_qty for t in rec.per_batch.values()),
        "shortage_units": sum(t.shortage_qty for t in rec.per_batch.values()),
        "surplus_units": len(rec.surplus),
        "complete": rec.complete,
        "signed_off_by": task.signoff[0],
        "signed_off_at": task.signoff[1],
    }


def task_as_dict(task: BinTask) -> dict:
    out = {
        "bin_code": task.bin_code,
        "state": task.state.value,
        "assigned_operator": task.assigned_operator,
        "scan_count": len(task.scans),
    }
    if task.signoff is not None:
        out["signed_off_by"] = task.signoff[0]
        out["signed_off_at"] = task.signoff[1]
    if task.frozen is not None:
        out["reconciliation"] = reconciliation_as_dict(task.frozen)
    return out
