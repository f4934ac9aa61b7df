"""Append-only event log with a mirrored copy, plus archive bundle export.

On-disk format (identical in primary and mirror): a sequence of records,
each ``[4-byte big-endian length][canonical JSON payload][4-byte CRC32]``.
The JSON payload carries seq, kind, body, at, actor and the SHA-256 of the
predecessor's payload, so the log forms a hash chain; any in-place edit
breaks either the CRC or the chain.

Durability protocol: a record is written to the mirror first, then to the
primary, and only then acknowledged. If either write fails the append is
rejected everywhere (a half-written mirror tail is truncated on the next
open). Recovery trims torn trailing records from both copies and cuts both
back to their common valid prefix, so every acknowledged append survives.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

LENGTH_FORMAT = ">I"
CRC_FORMAT = ">I"
HEADER_SIZE = 4
CRC_SIZE = 4
GENESIS_HASH = hashlib.sha256(b"").hexdigest()
LOG_FILENAME = "events.log"

KIND_REFERENCE_IMPORT = "REFERENCE_IMPORT"
KIND_SESSION_CREATE = "SESSION_CREATE"
KIND_TASK_START = "TASK_START"
KIND_SCAN = "SCAN"
KIND_SURPLUS_ACK = "SURPLUS_ACK"
KIND_SIGNOFF = "SIGNOFF"
KIND_ARCHIVE = "ARCHIVE"
KIND_CLEAR = "CLEAR"

KINDS = frozenset({
    KIND_REFERENCE_IMPORT,
    KIND_SESSION_CREATE,
    KIND_TASK_START,
    KIND_SCAN,
    KIND_SURPLUS_ACK,
    KIND_SIGNOFF,
    KIND_ARCHIVE,
    KIND_CLEAR,
})


class StorageFailure(RuntimeError):
    """Either log copy could not be written; the append happened nowhere."""


class CorruptEntry(ValueError):
    def __init__(self, seq: int, reason: str):
        super().__init__(f"corrupt entry at seq {seq}: {reason}")
        self.seq = seq
        self.reason = reason


class NotArchived(RuntimeError):
    """Archive export requested for a session that is not ARCHIVED."""


@dataclass(frozen=True)
class LogEntry:
    seq: int
    kind: str
    body: dict
    at: float
    actor: str
    prev_hash: str

    def payload_bytes(self) -> bytes:
        return canonical_json(
            {
                "seq": self.seq,
                "kind": self.kind,
                "body": self.body,
                "at": self.at,
                "actor": self.actor,
                "prev_hash": self.prev_hash,
            }
        )

    def entry_hash(self) -> str:
        return hashlib.sha256(self.payload_bytes()).hexdigest()


def canonical_json(obj) -> bytes:
    """Stable serialization: key-sorted, compact, UTF-8. Same dict, same bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode_record(payload: bytes) -> bytes:
    return struct.pack(LENGTH_FORMAT, len(payload)) + payload + struct.pack(
        CRC_FORMAT, zlib.crc32(payload)
    )


def _entry_from_payload(payload: bytes) -> LogEntry:
    doc = json.loads(payload.decode("utf-8"))
    return LogEntry(
        seq=doc["seq"],
        kind=doc["kind"],
        body=doc["body"],
        at=doc["at"],
        actor=doc["actor"],
        prev_hash=doc["prev_hash"],
    )


@dataclass
class ScanResult:
    entries: list[LogEntry]
    valid_bytes: int
    torn_tail: bool  # trailing bytes that do not form a whole valid record
    corrupt_seq: int | None  # complete-but-invalid record followed by more data


def scan_log_file(path: Path) -> ScanResult:
    """Walk a log file, verifying CRCs and the hash chain.

    A trailing record that is short, CRC-broken or chain-broken counts as a
    torn write. The same damage with further records behind it is corruption,
    reported by seq so callers can raise CorruptEntry.
    """
    entries: list[LogEntry] = []
    valid_bytes = 0
    prev_hash = GENESIS_HASH
    if not path.exists():
        return ScanResult(entries, 0, False, None)
    data = path.read_bytes()
    offset = 0
    total = len(data)
    while offset < total:
        bad_reason = None
        end = offset
        if offset + HEADER_SIZE > total:
            bad_reason = "short header"
            end = total  # too few bytes for any record: a torn tail by definition
        else:
            (length,) = struct.unpack_from(LENGTH_FORMAT, data, offset)
            end = offset + HEADER_SIZE + length + CRC_SIZE
            if end > total:
                bad_reason = "short record"
            else:
                payload = data[offset + HEADER_SIZE : offset + HEADER_SIZE + length]
                (crc,) = struct.unpack_from(CRC_FORMAT, data, end - CRC_SIZE)
                if zlib.crc32(payload) != crc:
                    bad_reason = "crc mismatch"
                else:
                    try:
                        entry = _entry_from_payload(payload)
                    except (ValueError, KeyError):
                        bad_reason = "undecodable payload"
                    else:
                        if entry.seq != len(entries) + 1:
                            bad_reason = f"seq {entry.seq}, expected {len(entries) + 1}"
                        elif entry.prev_hash != prev_hash:
                            bad_reason = "hash chain broken"
        if bad_reason is not None:
            at_tail = end >= total
            return ScanResult(
                entries,
                valid_bytes,
                torn_tail=at_tail,
                corrupt_seq=None if at_tail else len(entries) + 1,
            )
        entries.append(entry)
        prev_hash = entry.entry_hash()
        valid_bytes = end
        offset = end
    return ScanResult(entries, valid_bytes, False, None)


class EventLog:
    """Single-writer append-only log mirrored across two directories.

    Callers must serialize append() themselves (the service layer holds one
    writer lock); readers may consume the in-memory ``entries`` snapshot of
    acknowledged records at any time.
    """

    def __init__(self, primary_dir: str | Path, mirror_dir: str | Path, fsync: bool = True):
        self.primary_path = Path(primary_dir) / LOG_FILENAME
        self.mirror_path = Path(mirror_dir) / LOG_FILENAME
        self.fsync = fsync
        self.primary_path.parent.mkdir(parents=True, exist_ok=True)
        self.mirror_path.parent.mkdir(parents=True, exist_ok=True)
        self.recovered_truncation: int | None = None
        self._recover()
        self._primary_fh = open(self.primary_path, "ab")
        self._mirror_fh = open(self.mirror_path, "ab")

    def _recover(self) -> None:
        primary = scan_log_file(self.primary_path)
        mirror = scan_log_file(self.mirror_path)
        for result in (primary, mirror):
            if result.corrupt_seq is not None:
                raise CorruptEntry(result.corrupt_seq, "mid-log damage found at recovery")
        keep = min(len(primary.entries), len(mirror.entries))
        if (
            keep
            and primary.entries[keep - 1].entry_hash() != mirror.entries[keep - 1].entry_hash()
        ):
            raise StorageFailure("primary and mirror logs diverge within their common prefix")
        if len(primary.entries) > keep or primary.torn_tail:
            self.recovered_truncation = keep + 1
            _truncate(self.primary_path, _byte_length(primary, keep))
        if len(mirror.entries) > keep or mirror.torn_tail:
            self.recovered_truncation = keep + 1
            _truncate(self.mirror_path, _byte_length(mirror, keep))
        self.entries: list[LogEntry] = primary.entries[:keep]
        self._last_hash = self.entries[-1].entry_hash() if self.entries else GENESIS_HASH

    @property
    def last_seq(self) -> int:
        return len(self.entries)

    def append(self, kind: str, body: dict, actor: str, at: float) -> LogEntry:
        if kind not in KINDS:
            raise ValueError(f"unknown log entry kind {kind!r}")
        entry = LogEntry(
            seq=self.last_seq + 1,
            kind=kind,
            body=body,
            at=at,
            actor=actor,
            prev_hash=self._last_hash,
        )
        record = encode_record(entry.payload_bytes())
        mirror_len = self.mirror_path.stat().st_size if self.mirror_path.exists() else 0
        try:
            self._write(self._mirror_fh, record)
        except (OSError, ValueError) as exc:
            raise StorageFailure(f"mirror write failed: {exc}") from exc
        try:
            self._write(self._primary_fh, record)
        except (OSError, ValueError) as exc:
            # roll the mirror back so the copies stay byte-identical
            try:
                self._mirror_fh.close()
            except (OSError, ValueError):
                pass
            _truncate(self.mirror_path, mirror_len)
            self._mirror_fh = open(self.mirror_path, "ab")
            raise StorageFailure(f"primary write failed: {exc}") from exc
        self.entries.append(entry)
        self._last_hash = entry.entry_hash()
        return entry

    def _write(self, fh, record: bytes) -> None:
        fh.write(record)
        fh.flush()
        if self.fsync:
            os.fsync(fh.fileno())

    def read_entries(self, first_seq: int = 1, last_seq: int | None = None) -> list[LogEntry]:
        """Re-read and verify entries from disk; raises CorruptEntry on damage.

        Unlike recovery, a torn trailing record here is an error too: the
        caller asked for the range as stored, and seq-level damage must not
        pass silently.
        """
        result = scan_log_file(self.primary_path)
        if result.corrupt_seq is not None:
            raise CorruptEntry(result.corrupt_seq, "record damaged")
        if result.torn_tail:
            raise CorruptEntry(len(result.entries) + 1, "torn trailing record")
        last = result.entries[-1].seq if result.entries else 0
        if last_seq is None:
            last_seq = last
        if first_seq < 1 or last_seq > last:
            raise ValueError(f"range [{first_seq}, {last_seq}] outside log (1..{last})")
        return result.entries[first_seq - 1 : last_seq]

    def verify_chain(self) -> None:
        primary = self.read_entries()
        mirror = scan_log_file(self.mirror_path)
        if mirror.corrupt_seq is not None:
            raise CorruptEntry(mirror.corrupt_seq, "mirror record damaged")
        if mirror.torn_tail or len(mirror.entries) != len(primary):
            raise StorageFailure(
                f"mirror holds {len(mirror.entries)} entries, primary {len(primary)}"
            )
        if primary and mirror.entries[-1].entry_hash() != primary[-1].entry_hash():
            raise StorageFailure("mirror diverges from primary")

    def close(self) -> None:
        for fh in (self._primary_fh, self._mirror_fh):
            try:
                fh.close()
            except OSError:
                pass


def _byte_length(result: ScanResult, keep: int) -> int:
    # records are contiguous from offset 0, so the kept prefix length is the
    # sum of the kept records' encoded sizes
    total = 0
    for entry in result.entries[:keep]:
        total += HEADER_SIZE + len(entry.payload_bytes()) + CRC_SIZE
    return total


def _truncate(path: Path, length: int) -> None:
    if not path.exists():
        return
    with open(path, "r+b") as fh:
        fh.truncate(length)
        fh.flush()
        os.fsync(fh.fileno())


def replay(entries: Iterable[LogEntry], apply: Callable, state):
    """Fold entries into a state via the given deterministic apply function."""
    for entry in entries:
        apply(state, entry)
    return state


# --- archive bundles -------------------------------------------------------

MANIFEST_FILENAME = "manifest.json"
ENTRIES_FILENAME = "entries.jsonl"
RECONCILIATION_FILENAME = "reconciliation.csv"

RECONCILIATION_HEADER = (
    "bin_code,batches,expected_units,counted_units,shortage_units,"
    "surplus_units,complete,signed_off_by,signed_off_at"
)


def reconciliation_csv(rows: Iterable[dict]) -> str:
    lines = [RECONCILIATION_HEADER]
    for row in rows:
        lines.append(
            "{bin_code},{batches},{expected_units},{counted_units},"
            "{shortage_units},{surplus_units},{complete},{signed_off_by},{signed_off_at}".format(**row)
        )
    return "\n".join(lines) + "\n"


def write_archive_bundle(
    out_dir: str | Path,
    archive_id: str,
    session_id: str,
    entries: list[LogEntry],
    reconciliation_rows: list[dict],
) -> Path:
    """Write the bundle directory; stable serialization makes re-export byte-identical."""
    bundle_dir = Path(out_dir) / archive_id
    bundle_dir.mkdir(parents=True, exist_ok=True)
    entries_blob = b"".join(e.payload_bytes() + b"\n" for e in entries)
    csv_blob = reconciliation_csv(reconciliation_rows).encode("utf-8")
    manifest = {
        "archive_id": archive_id,
        "session_id": session_id,
        "first_seq": entries[0].seq if entries else 0,
        "last_seq": entries[-1].seq if entries else 0,
        "entry_count": len(entries),
        "reconciliation_rows": len(reconciliation_rows),
        "content_hash": hashlib.sha256(entries_blob + csv_blob).hexdigest(),
    }
    (bundle_dir / ENTRIES_FILENAME).write_bytes(entries_blob)
    (bundle_dir / RECONCILIATION_FILENAME).write_bytes(csv_blob)
    (bundle_dir / MANIFEST_FILENAME).write_bytes(canonical_json(manifest) + b"\n")
    return bundle_dir


def read_archive_entries(bundle_dir: str | Path) -> list[LogEntry]:
    entries = []
    with open(Path(bundle_dir) / ENTRIES_FILENAME, "rb") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(_entry_from_payload(line))
    return entries
