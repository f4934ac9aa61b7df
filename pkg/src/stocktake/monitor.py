"""Dashboard aggregates: task progress, discrepancies, operator activity.

Every report is a pure function of session state (itself a pure function of
the event log prefix), so recomputation after replay is identical. Completed
bins contribute their frozen sign-off reconciliations; ongoing and pending
bins contribute a reconciliation of whatever has been scanned so far.
"""

from __future__ import annotations

import csv
import io
import statistics
import sys
from dataclasses import dataclass

from . import store
from .reconcile import reconcile_bin
from .session import (
    StocktakeSession,
    SystemState,
    TaskState,
    UnknownSession,
)


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class ProgressReport:
    completed: int
    ongoing: int
    pending: int
    per_bin: dict[str, str]

    @property
    def total(self) -> int:
        return self.completed + self.ongoing + self.pending


@dataclass(frozen=True)
class SurplusRow:
    hu_code: str
    found_bin: str
    designated_bin: str | None  # None = UNKNOWN_ORIGIN
    acknowledged: bool


@dataclass(frozen=True)
class MissingRow:
    hu_code: str
    batch_code: str
    bin_code: str


@dataclass(frozen=True)
class DiscrepancyReport:
    surplus_units: tuple[SurplusRow, ...]
    shortage_by_batch: dict[str, int]
    missing_units: tuple[MissingRow, ...]


@dataclass(frozen=True)
class IdleGap:
    operator: str
    gap_start: float
    gap_seconds: float


@dataclass(frozen=True)
class ActivityTimeline:
    per_operator: dict[str, tuple[tuple[float, str], ...]]
    idle_gaps: tuple[IdleGap, ...]


def _session(state: SystemState, session_id: str) -> StocktakeSession:
    session = state.sessions.get(session_id)
    if session is None:
        raise UnknownSession(session_id)
    return session


def progress(state: SystemState, session_id: str) -> ProgressReport:
    session = _session(state, session_id)
    per_bin = {bin_code: task.state.value for bin_code, task in session.bin_tasks.items()}
    states = list(per_bin.values())
    return ProgressReport(
        completed=states.count(TaskState.COMPLETED.value),
        ongoing=states.count(TaskState.ONGOING.value),
        pending=states.count(TaskState.PENDING.value),
        per_bin=per_bin,
    )


def discrepancies(state: SystemState, session_id: str) -> DiscrepancyReport:
    session = _session(state, session_id)
    surplus: list[SurplusRow] = []
    shortage: dict[str, int] = {}
    missing: list[MissingRow] = []
    for bin_code, task in sorted(session.bin_tasks.items()):
        rec = task.frozen
        if rec is None:
            rec = reconcile_bin(state.reference, bin_code, [s.ref for s in task.scans])
        for hu_code, designated in rec.surplus:
            surplus.append(
                SurplusRow(
                    hu_code=hu_code,
                    found_bin=bin_code,
                    designated_bin=designated,
                    acknowledged=hu_code in task.acked_surplus
                    or task.scan_counts.get(hu_code, 0) >= 2,
                )
            )
        for batch_code, tally in rec.per_batch.items():
            if tally.shortage_qty:
                shortage[batch_code] = shortage.get(batch_code, 0) + tally.shortage_qty
                for hu_code in sorted(tally.missing_hu_codes):
                    missing.append(MissingRow(hu_code=hu_code, batch_code=batch_code, bin_code=bin_code))
    surplus.sort(key=lambda r: (r.hu_code, r.found_bin))
    missing.sort(key=lambda r: (r.hu_code, r.bin_code))
    return DiscrepancyReport(
        surplus_units=tuple(surplus),
        shortage_by_batch=shortage,
        missing_units=tuple(missing),
    )


ACTIVITY_KINDS = frozenset(
    {store.KIND_TASK_START, store.KIND_SCAN, store.KIND_SURPLUS_ACK, store.KIND_SIGNOFF}
)


def activity(
    entries,
    session_id: str,
    idle_threshold: float = 600.0,
) -> ActivityTimeline:
    """Per-operator event timeline with idle gaps above the threshold flagged."""
    per_operator: dict[str, list[tuple[float, str]]] = {}
    for entry in entries:
        if entry.kind in ACTIVITY_KINDS and entry.body.get("session_id") == session_id:
            per_operator.setdefault(entry.actor, []).append((entry.at, entry.kind))
    gaps: list[IdleGap] = []
    frozen: dict[str, tuple[tuple[float, str], ...]] = {}
    for operator in sorted(per_operator):
        events = sorted(per_operator[operator], key=lambda e: e[0])
        frozen[operator] = tuple(events)
        for (t0, _), (t1, _) in zip(events, events[1:]):
            gap = t1 - t0
            if gap > idle_threshold:
                gaps.append(IdleGap(operator=operator, gap_start=t0, gap_seconds=gap))
    return ActivityTimeline(per_operator=frozen, idle_gaps=tuple(gaps))


def completion_stats(durations: list[float]) -> tuple[float, float, float]:
    """(mean, median, population standard deviation) of per-bin completion seconds."""
    if not durations:
        raise EmptyInput("no durations")
    return (
        statistics.fmean(durations),
        statistics.median(durations),
        statistics.pstdev(durations),
    )


def bin_completion_durations(state: SystemState, session_id: str) -> list[float]:
    """Sign-off time minus start time for every completed bin, in bin order."""
    session = _session(state, session_id)
    durations = []
    for _, task in sorted(session.bin_tasks.items()):
        if task.state is TaskState.COMPLETED and task.started_at is not None:
            durations.append(task.signoff[1] - task.started_at)
    return durations


# --- report serialization ----------------------------------------------------

def progress_as_dict(report: ProgressReport) -> dict:
    return {
        "completed": report.completed,
        "ongoing": report.ongoing,
        "pending": report.pending,
        "per_bin": report.per_bin,
    }


def discrepancies_as_dict(report: DiscrepancyReport) -> dict:
    return {
        "surplus_units": [
            {
                "hu_code": r.hu_code,
                "found_bin": r.found_bin,
                "designated_bin": r.designated_bin if r.designated_bin is not None else "UNKNOWN_ORIGIN",
                "acknowledged": r.acknowledged,
            }
            for r in report.surplus_units
        ],
        "shortage_by_batch": dict(sorted(report.shortage_by_batch.items())),
        "missing_units": [
            {"hu_code": r.hu_code, "batch_code": r.batch_code, "bin_code": r.bin_code}
            for r in report.missing_units
        ],
    }


def activity_as_dict(timeline: ActivityTimeline) -> dict:
    return {
        "per_operator": {
            op: [{"at": at, "kind": kind} for at, kind in events]
            for op, events in timeline.per_operator.items()
        },
        "idle_gaps": [
            {"operator": g.operator, "gap_start": g.gap_start, "gap_seconds": g.gap_seconds}
            for g in timeline.idle_gaps
        ],
    }


def progress_csv(report: ProgressReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_code", "state"])
    for bin_code, task_state in sorted(report.per_bin.items()):
        writer.writerow([bin_code, task_state])
    return buf.getvalue()


def discrepancies_csv(report: DiscrepancyReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["record", "hu_code", "batch_code", "found_bin", "designated_bin", "acknowledged"])
    for r in report.surplus_units:
        writer.writerow(
            [
                "surplus",
                r.hu_code,
                "",
                r.found_bin,
                r.designated_bin if r.designated_bin is not None else "UNKNOWN_ORIGIN",
                r.acknowledged,
            ]
        )
    for m in report.missing_units:
        writer.writerow(["missing", m.hu_code, m.batch_code, "", m.bin_code, ""])
    return buf.getvalue()


def activity_csv(timeline: ActivityTimeline) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["operator", "at", "kind"])
    for operator, events in timeline.per_operator.items():
        for at, kind in events:
            writer.writerow([operator, at, kind])
    return buf.getvalue()


def main(argv: list[str] | None = None) -> int:
    """Offline CSV export: replay a log directory and print one report."""
    import argparse

    from .session import replay_state
    from .store import EventLog

    parser = argparse.ArgumentParser(prog="stocktake-report")
    parser.add_argument("report", choices=["progress", "discrepancies", "activity"])
    parser.add_argument("--primary-log-dir", required=True)
    parser.add_argument("--mirror-log-dir", required=True)
    parser.add_argument("--session", required=True)
    parser.add_argument("--idle-threshold", type=float, default=600.0)
    args = parser.parse_args(argv)

    log = EventLog(args.primary_log_dir, args.mirror_log_dir)
    try:
        state = replay_state(log.entries)
        if args.report == "progress":
            sys.stdout.write(progress_csv(progress(state, args.session)))
        elif args.report == "discrepancies":
            sys.stdout.write(discrepancies_csv(discrepancies(state, args.session)))
        else:
            sys.stdout.write(
                activity_csv(activity(log.entries, args.session, args.idle_threshold))
            )
    finally:
        log.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
