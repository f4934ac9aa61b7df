import random

import pytest

from stocktake.monitor import (
    EmptyInput,
    activity,
    bin_completion_durations,
    completion_stats,
    discrepancies,
    discrepancies_csv,
    progress,
    progress_csv,
)
from stocktake.session import TaskState, UnknownSession, replay_state

from conftest import ADMIN, OPERATOR, csv_text

FIVE_BIN_ROWS = [
    ("B1", "X", "H1", "A", 5),
    ("B2", "X", "H2", "A", 5),
    ("B3", "Y", "H3", "B", 6),
    ("B4", "Y", "H4", "B", 6),
    ("B5", "Z", "H5", "C", 7),
]


def loaded(make_service, rows=FIVE_BIN_ROWS):
    service = make_service()
    service.import_reference(ADMIN, csv_text(rows).encode())
    return service, service.create_session(ADMIN)


def count_bin(service, sid, bin_code, hu, batch, at=1.0):
    service.start_bin_task(OPERATOR, sid, bin_code)
    service.submit_scan(OPERATOR, sid, bin_code, f"e-{bin_code}", f"{bin_code}|{batch}|{hu}", at)
    service.sign_off_bin(OPERATOR, sid, bin_code)


class TestProgress:
    def test_fresh_session_all_pending(self, make_service):
        service, session = loaded(make_service)
        report = progress(service.state, session.session_id)
        assert (report.completed, report.ongoing, report.pending) == (0, 0, 5)
        assert report.total == 5

    def test_all_signed_off(self, make_service):
        service, session = loaded(make_service)
        for bin_code, hu, batch in (("B1", "H1", "X"), ("B2", "H2", "X"), ("B3", "H3", "Y"),
                                    ("B4", "H4", "Y"), ("B5", "H5", "Z")):
            count_bin(service, session.session_id, bin_code, hu, batch)
        report = progress(service.state, session.session_id)
        assert (report.completed, report.ongoing, report.pending) == (5, 0, 0)

    def test_unknown_session(self, make_service):
        service, _ = loaded(make_service)
        with pytest.raises(UnknownSession):
            progress(service.state, "S9999")

    def test_counts_match_replay_oracle(self, make_service):
        rng = random.Random(7)
        service, session = loaded(make_service)
        sid = session.session_id
        bins = list(session.bin_tasks)
        rng.shuffle(bins)
        for i, bin_code in enumerate(bins[:3]):
            service.start_bin_task(OPERATOR, sid, bin_code)
        report = progress(service.state, sid)
        replayed = replay_state(service.log.entries)
        states = [t.state for t in replayed.sessions[sid].bin_tasks.values()]
        assert report.ongoing == states.count(TaskState.ONGOING) == 3
        assert report.pending == states.count(TaskState.PENDING) == 2
        assert progress_csv(report).count("ONGOING") == 3


class TestDiscrepancies:
    def test_perfect_warehouse_empty_report(self, make_service):
        service, session = loaded(make_service)
        for bin_code, hu, batch in (("B1", "H1", "X"), ("B2", "H2", "X"), ("B3", "H3", "Y"),
                                    ("B4", "H4", "Y"), ("B5", "H5", "Z")):
            count_bin(service, session.session_id, bin_code, hu, batch)
        report = discrepancies(service.state, session.session_id)
        assert report.surplus_units == ()
        assert report.shortage_by_batch == {}
        assert report.missing_units == ()

    def test_injected_misplacement_is_symmetric(self, make_service):
        rows = [
            ("B1", "X", "H1", "A", 5),
            ("B1", "X", "H2", "A", 5),
            ("B2", "Y", "K1", "B", 6),
            ("B2", "Y", "K2", "B", 6),
        ]
        service, session = loaded(make_service, rows)
        sid = session.session_id
        # K1 physically sits in B1; everything else in place
        service.start_bin_task(OPERATOR, sid, "B1")
        for eid, (hu, batch, home) in enumerate([("H1", "X", "B1"), ("H2", "X", "B1"), ("K1", "Y", "B2")]):
            service.submit_scan(OPERATOR, sid, "B1", f"a{eid}", f"{home}|{batch}|{hu}", 1.0)
        service.acknowledge_surplus(OPERATOR, sid, "B1", "K1")
        service.sign_off_bin(OPERATOR, sid, "B1")
        service.start_bin_task(OPERATOR, sid, "B2")
        service.submit_scan(OPERATOR, sid, "B2", "b0", "B2|Y|K2", 2.0)
        service.sign_off_bin(OPERATOR, sid, "B2")

        report = discrepancies(service.state, sid)
        assert len(report.surplus_units) == 1
        row = report.surplus_units[0]
        assert (row.hu_code, row.found_bin, row.designated_bin) == ("K1", "B1", "B2")
        assert report.shortage_by_batch == {"Y": 1}
        assert [(m.hu_code, m.batch_code, m.bin_code) for m in report.missing_units] == [
            ("K1", "Y", "B2")
        ]

    def test_acknowledged_flag_propagates(self, make_service):
        rows = [("B1", "X", "H1", "A", 5), ("B2", "Y", "K1", "B", 6), ("B2", "Y", "K2", "B", 6)]
        service, session = loaded(make_service, rows)
        sid = session.session_id
        service.start_bin_task(OPERATOR, sid, "B1")
        service.submit_scan(OPERATOR, sid, "B1", "e1", "B1|X|H1", 1.0)
        service.submit_scan(OPERATOR, sid, "B1", "e2", "B2|Y|K1", 2.0)
        report = discrepancies(service.state, sid)
        assert report.surplus_units[0].acknowledged is False
        service.acknowledge_surplus(OPERATOR, sid, "B1", "K1")
        report = discrepancies(service.state, sid)
        assert report.surplus_units[0].acknowledged is True
        assert "True" in discrepancies_csv(report)

    def test_pending_bins_report_provisional_shortage(self, make_service):
        service, session = loaded(make_service)
        report = discrepancies(service.state, session.session_id)
        assert sum(report.shortage_by_batch.values()) == 5  # nothing scanned yet


class TestActivity:
    def test_single_gap(self, make_service):
        service, session = loaded(make_service)
        sid = session.session_id
        service.start_bin_task(OPERATOR, sid, "B1", at=0.0)
        for i, at in enumerate((0.0, 5.0, 1000.0)):
            hus = ["H1", "H2", "H3"]
            service.submit_scan(OPERATOR, sid, "B1", f"e{i}", f"B1|X|{hus[i]}", at)
        timeline = activity(service.log.entries, sid, idle_threshold=600)
        assert len(timeline.idle_gaps) == 1
        gap = timeline.idle_gaps[0]
        assert gap.operator == "op01"
        assert gap.gap_start == 5.0
        assert gap.gap_seconds == pytest.approx(995.0)

    def test_no_events_no_timeline(self, make_service):
        service, session = loaded(make_service)
        timeline = activity(service.log.entries, session.session_id)
        assert timeline.per_operator == {}
        assert timeline.idle_gaps == ()

    def test_events_sorted_per_operator(self, make_service):
        service, session = loaded(make_service)
        sid = session.session_id
        service.start_bin_task(OPERATOR, sid, "B1", at=100.0)
        service.submit_scan(OPERATOR, sid, "B1", "e1", "B1|X|H1", 50.0)
        timeline = activity(service.log.entries, sid, idle_threshold=1e9)
        times = [at for at, _ in timeline.per_operator["op01"]]
        assert times == sorted(times)


class TestCompletionStats:
    def test_fixed_vector(self):
        assert completion_stats([2, 4, 4, 4, 5, 5, 7, 9]) == (5.0, 4.5, 2.0)

    def test_singleton(self):
        assert completion_stats([7]) == (7.0, 7.0, 0.0)

    def test_three_values(self):
        mean, median, _ = completion_stats([1, 2, 3])
        assert (mean, median) == (2.0, 2.0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            completion_stats([])

    def test_durations_come_from_signoff_minus_start(self, make_service):
        service = make_service()
        service.import_reference(ADMIN, csv_text([("B1", "X", "H1", "A", 5)]).encode())
        session = service.create_session(ADMIN)
        service.start_bin_task(OPERATOR, session.session_id, "B1", at=10.0)
        service.submit_scan(OPERATOR, session.session_id, "B1", "e1", "B1|X|H1", 12.0)
        service.sign_off_bin(OPERATOR, session.session_id, "B1", at=25.0)
        assert bin_completion_durations(service.state, session.session_id) == [15.0]
