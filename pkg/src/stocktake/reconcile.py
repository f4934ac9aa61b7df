"""Pure reconciliation engine.

Everything in this module is a pure function over immutable inputs: QR
payload parsing, per-scan classification against the imported reference
inventory, and per-bin reconciliation into correct / shortage / surplus
figures. No I/O, no shared state; safe to call from any thread.

A handling unit's printed QR carries its *designated* codes (the bin and
batch the ERP thinks it belongs to), so classification never trusts the
payload's bin field — only the globally unique handling-unit code, looked
up in the reference index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

PAYLOAD_DELIMITER = "|"
CODE_PATTERN = re.compile(r"^[A-Z0-9\-_.]+$")

# Designated location of a handling unit the reference has never seen.
UNKNOWN_ORIGIN = None


class PayloadError(ValueError):
    """Base class for QR payload parse failures."""


class MissingField(PayloadError):
    """Payload does not split into exactly three segments."""


class EmptyField(PayloadError):
    """One of the three segments is empty."""


class IllegalCharacter(PayloadError):
    """A segment contains a character outside [A-Z0-9-_.]."""


class UnknownBin(KeyError):
    """Bin code absent from the reference inventory."""


@dataclass(frozen=True)
class HandlingUnitRef:
    """Parsed identity of one physical unit: where it belongs and what it is."""

    bin_code: str
    batch_code: str
    hu_code: str

    def __post_init__(self):
        for name in ("bin_code", "batch_code", "hu_code"):
            value = getattr(self, name)
            if not value:
                raise EmptyField(f"{name} is empty")
            if not CODE_PATTERN.match(value):
                raise IllegalCharacter(f"{name} {value!r} contains illegal characters")


@dataclass(frozen=True)
class BatchMeta:
    category: str  # "A" | "B" | "C"
    shelved_at: int  # UTC seconds
    expected_qty: int  # handling units of this batch across the whole warehouse

    def __post_init__(self):
        if self.category not in ("A", "B", "C"):
            raise ValueError(f"category must be A, B or C, got {self.category!r}")
        if self.expected_qty < 0:
            raise ValueError("expected_qty must be non-negative")


@dataclass(frozen=True)
class ReferenceInventory:
    """The imported ERP truth.

    ``bins`` maps bin_code -> batch_code -> expected hu_code set; ``hu_index``
    is its exact inversion (every unit appears in exactly one bin/batch pair);
    ``batch_meta`` covers every batch_code appearing under ``bins``.

    Dict iteration order is the import row order, which stands in for the
    physical storage-location order downstream.
    """

    bins: dict[str, dict[str, frozenset[str]]]
    hu_index: dict[str, tuple[str, str]]
    batch_meta: dict[str, BatchMeta]

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, str, str, int]]) -> "ReferenceInventory":
        """Build from (bin_code, batch_code, hu_code, category, shelved_at) rows.

        Raises ValueError on a duplicated hu_code or on conflicting batch
        metadata; nothing partial is ever returned.
        """
        bins: dict[str, dict[str, set[str]]] = {}
        hu_index: dict[str, tuple[str, str]] = {}
        meta_seen: dict[str, tuple[str, int]] = {}
        for bin_code, batch_code, hu_code, category, shelved_at in rows:
            HandlingUnitRef(bin_code, batch_code, hu_code)  # charset validation
            if hu_code in hu_index:
                raise ValueError(f"duplicate hu_code {hu_code}")
            prior = meta_seen.get(batch_code)
            if prior is not None and prior != (category, shelved_at):
                raise ValueError(f"conflicting metadata for batch {batch_code}")
            meta_seen[batch_code] = (category, int(shelved_at))
            bins.setdefault(bin_code, {}).setdefault(batch_code, set()).add(hu_code)
            hu_index[hu_code] = (bin_code, batch_code)
        counts: dict[str, int] = {}
        for _, batch_code in hu_index.values():
            counts[batch_code] = counts.get(batch_code, 0) + 1
        batch_meta = {
            code: BatchMeta(category=cat, shelved_at=ts, expected_qty=counts[code])
            for code, (cat, ts) in meta_seen.items()
        }
        frozen_bins = {
            b: {batch: frozenset(units) for batch, units in batches.items()}
            for b, batches in bins.items()
        }
        return cls(bins=frozen_bins, hu_index=hu_index, batch_meta=batch_meta)

    def expected_at(self, bin_code: str) -> dict[str, frozenset[str]]:
        if bin_code not in self.bins:
            raise UnknownBin(bin_code)
        return self.bins[bin_code]

    def unit_count(self) -> int:
        return len(self.hu_index)


class ClassificationKind(str, Enum):
    MATCH = "MATCH"
    DUPLICATE = "DUPLICATE"
    MISPLACED = "MISPLACED"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class Classification:
    kind: ClassificationKind
    designated_bin: str | None = None  # set only for MISPLACED

    def __post_init__(self):
        if self.kind is ClassificationKind.MISPLACED and not self.designated_bin:
            raise ValueError("MISPLACED requires a designated bin")
        if self.kind is not ClassificationKind.MISPLACED and self.designated_bin:
            raise ValueError("designated_bin only applies to MISPLACED")


@dataclass(frozen=True)
class BatchTally:
    expected_qty: int
    counted_qty: int
    shortage_qty: int
    missing_hu_codes: frozenset[str]


@dataclass(frozen=True)
class BinReconciliation:
    bin_code: str
    per_batch: dict[str, BatchTally] = field(default_factory=dict)
    surplus: tuple[tuple[str, str | None], ...] = ()  # (hu_code, designated bin or UNKNOWN_ORIGIN)
    complete: bool = False


def parse_qr(payload: str) -> HandlingUnitRef:
    """Split a scanned payload into (bin, batch, handling unit) and validate it."""
    segments = payload.split(PAYLOAD_DELIMITER)
    if len(segments) != 3:
        raise MissingField(f"expected 3 segments, got {len(segments)}")
    return HandlingUnitRef(*segments)


def format_qr(ref: HandlingUnitRef) -> str:
    """Inverse of parse_qr for valid refs."""
    return PAYLOAD_DELIMITER.join((ref.bin_code, ref.batch_code, ref.hu_code))


def designated_location(ref: ReferenceInventory, hu_code: str) -> str | None:
    """The bin where the reference expects this unit, or UNKNOWN_ORIGIN."""
    entry = ref.hu_index.get(hu_code)
    if entry is None:
        return UNKNOWN_ORIGIN
    return entry[0]


def classify_scan(
    ref: ReferenceInventory,
    seen: set[str],
    scan: HandlingUnitRef,
    at_bin: str,
) -> Classification:
    """Classify one scan at a bin given the hu codes already seen there.

    Re-scans win over everything else: a physical unit exists once, so any
    repeat is DUPLICATE regardless of where the unit belongs.
    """
    if at_bin not in ref.bins:
        raise UnknownBin(at_bin)
    hu = scan.hu_code
    if hu in seen:
        return Classification(ClassificationKind.DUPLICATE)
    designated = ref.hu_index.get(hu)
    if designated is None:
        return Classification(ClassificationKind.UNKNOWN)
    if designated[0] == at_bin:
        return Classification(ClassificationKind.MATCH)
    return Classification(ClassificationKind.MISPLACED, designated_bin=designated[0])


def reconcile_bin(
    ref: ReferenceInventory,
    bin_code: str,
    scans: Iterable[HandlingUnitRef],
) -> BinReconciliation:
    """Audit one bin: per-batch counted/shortage plus annotated surplus.

    Duplicates count once. The result is independent of scan order; surplus
    is reported sorted by hu_code. ``complete`` is true iff every expected
    batch of the bin was touched by at least one scan of its own units, i.e.
    the operator demonstrably enumerated each batch number at the location.
    """
    expected = ref.expected_at(bin_code)
    unique: list[str] = []
    seen: set[str] = set()
    for scan in scans:
        if scan.hu_code not in seen:
            seen.add(scan.hu_code)
            unique.append(scan.hu_code)

    per_batch: dict[str, BatchTally] = {}
    expected_here: set[str] = set()
    for batch_code, units in expected.items():
        expected_here |= units
        counted = len(units & seen)
        missing = frozenset(units - seen)
        per_batch[batch_code] = BatchTally(
            expected_qty=len(units),
            counted_qty=counted,
            shortage_qty=len(missing),
            missing_hu_codes=missing,
        )

    surplus = tuple(
        (hu, designated_location(ref, hu))
        for hu in sorted(seen - expected_here)
    )
    complete = all(t.counted_qty >= 1 for t in per_batch.values())
    return BinReconciliation(
        bin_code=bin_code, per_batch=per_batch, surplus=surplus, complete=complete
    )


def reconciliation_as_dict(rec: BinReconciliation) -> dict:
    """JSON-ready view; UNKNOWN_ORIGIN surfaces as the literal string."""
    return {
        "bin_code": rec.bin_code,
        "per_batch": {
            batch: {
                "expected_qty": t.expected_qty,
                "counted_qty": t.counted_qty,
                "shortage_qty": t.shortage_qty,
                "missing_hu_codes": sorted(t.missing_hu_codes),
            }
            for batch, t in rec.per_batch.items()
        },
        "surplus": [
            {"hu_code": hu, "designated_bin": bin_ if bin_ is not None else "UNKNOWN_ORIGIN"}
            for hu, bin_ in rec.surplus
        ],
        "complete": rec.complete,
    }


def classification_as_dict(c: Classification) -> dict:
    out: dict = {"classification": c.kind.value}
    if c.designated_bin is not None:
        out["designated_bin"] = c.designated_bin
    return out
