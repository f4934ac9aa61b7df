import os
import signal
import struct
import subprocess
import sys
import textwrap
import time

import pytest

from stocktake.session import replay_state
from stocktake.store import (
    CorruptEntry,
    EventLog,
    StorageFailure,
    encode_record,
    read_archive_entries,
    scan_log_file,
)

from conftest import ADMIN, OPERATOR, SMALL_ROWS, csv_text


def open_log(tmp_path, name="log", fsync=False):
    return EventLog(tmp_path / name / "primary", tmp_path / name / "mirror", fsync=fsync)


def test_first_append_gets_seq_one(tmp_path):
    log = open_log(tmp_path)
    entry = log.append("CLEAR", {"scope": "HISTORY"}, "admin", 1.0)
    assert entry.seq == 1
    log.close()


def test_hundred_appends_in_order(tmp_path):
    log = open_log(tmp_path)
    seqs = [log.append("CLEAR", {"scope": "HISTORY", "n": i}, "admin", float(i)).seq for i in range(100)]
    assert seqs == list(range(1, 101))
    assert [e.seq for e in log.read_entries()] == seqs
    log.close()


def test_unknown_kind_rejected(tmp_path):
    log = open_log(tmp_path)
    with pytest.raises(ValueError):
        log.append("NOT_A_KIND", {}, "admin", 1.0)
    log.close()


def test_mirror_is_byte_identical(tmp_path):
    log = open_log(tmp_path)
    for i in range(20):
        log.append("SCAN", {"event_id": f"e{i}"}, "op01", float(i))
    log.close()
    primary = (tmp_path / "log" / "primary" / "events.log").read_bytes()
    mirror = (tmp_path / "log" / "mirror" / "events.log").read_bytes()
    assert primary == mirror and primary


def test_mirror_unwritable_rejects_everywhere(tmp_path):
    log = open_log(tmp_path)
    log.append("CLEAR", {"scope": "HISTORY"}, "admin", 1.0)
    primary_bytes = (tmp_path / "log" / "primary" / "events.log").read_bytes()
    log._mirror_fh.close()  # fault injection: mirror copy becomes unwritable
    with pytest.raises(StorageFailure):
        log.append("CLEAR", {"scope": "HISTORY"}, "admin", 2.0)
    assert (tmp_path / "log" / "primary" / "events.log").read_bytes() == primary_bytes
    assert log.last_seq == 1
    log.close()


def test_primary_failure_rolls_mirror_back(tmp_path):
    log = open_log(tmp_path)
    log.append("CLEAR", {"scope": "HISTORY"}, "admin", 1.0)
    mirror_bytes = (tmp_path / "log" / "mirror" / "events.log").read_bytes()
    log._primary_fh.close()
    with pytest.raises(StorageFailure):
        log.append("CLEAR", {"scope": "HISTORY"}, "admin", 2.0)
    assert (tmp_path / "log" / "mirror" / "events.log").read_bytes() == mirror_bytes
    log.close()


def test_torn_trailing_write_truncated_at_recovery(tmp_path):
    log = open_log(tmp_path)
    for i in range(5):
        log.append("SCAN", {"event_id": f"e{i}"}, "op01", float(i))
    log.close()
    for copy in ("primary", "mirror"):
        path = tmp_path / "log" / copy / "events.log"
        with open(path, "ab") as fh:
            fh.write(struct.pack(">I", 999) + b"partial garbage")
    reopened = open_log(tmp_path)
    assert reopened.recovered_truncation == 6
    assert reopened.last_seq == 5
    assert [e.body["event_id"] for e in reopened.entries] == [f"e{i}" for i in range(5)]
    reopened.close()


def test_tail_shorter_than_a_header_is_torn_not_corrupt(tmp_path):
    log = open_log(tmp_path)
    for i in range(3):
        log.append("SCAN", {"event_id": f"e{i}"}, "op01", float(i))
    log.close()
    for copy in ("primary", "mirror"):
        with open(tmp_path / "log" / copy / "events.log", "ab") as fh:
            fh.write(b"\x01\x02")
    reopened = open_log(tmp_path)
    assert reopened.recovered_truncation == 4
    assert reopened.last_seq == 3
    reopened.close()


def test_torn_tail_is_corrupt_entry_on_strict_read(tmp_path):
    log = open_log(tmp_path)
    for i in range(3):
        log.append("SCAN", {"event_id": f"e{i}"}, "op01", float(i))
    path = tmp_path / "log" / "primary" / "events.log"
    with open(path, "ab") as fh:
        fh.write(b"\x00\x00\x00\x10short")
    with pytest.raises(CorruptEntry) as err:
        log.read_entries()
    assert err.value.seq == 4
    # prior state remains readable
    assert [e.seq for e in scan_log_file(path).entries] == [1, 2, 3]
    log.close()


def test_in_place_tamper_detected(tmp_path):
    log = open_log(tmp_path)
    for i in range(5):
        log.append("SCAN", {"event_id": f"e{i}"}, "op01", float(i))
    log.close()
    path = tmp_path / "log" / "primary" / "events.log"
    data = bytearray(path.read_bytes())
    data[30] ^= 0xFF  # flip one payload byte inside an early record
    path.write_bytes(bytes(data))
    reopened_scan = scan_log_file(path)
    assert reopened_scan.corrupt_seq is not None
    with pytest.raises(CorruptEntry):
        EventLog(tmp_path / "log" / "primary", tmp_path / "log" / "mirror", fsync=False)


def test_hash_chain_rejects_valid_crc_splice(tmp_path):
    """Rewriting a record with a recomputed CRC still breaks the hash chain."""
    log = open_log(tmp_path)
    entries = [log.append("SCAN", {"event_id": f"e{i}"}, "op01", float(i)) for i in range(3)]
    log.close()
    path = tmp_path / "log" / "primary" / "events.log"
    first = entries[0]
    forged_payload = first.payload_bytes().replace(b'"e0"', b'"eX"')
    original = path.read_bytes()
    forged = encode_record(forged_payload) + original[len(encode_record(first.payload_bytes())):]
    path.write_bytes(forged)
    result = scan_log_file(path)
    assert result.corrupt_seq == 2  # entry 2's prev_hash no longer matches


def test_divergent_copies_fail_recovery(tmp_path):
    log_a = open_log(tmp_path, name="a")
    log_a.append("CLEAR", {"scope": "HISTORY"}, "x", 1.0)
    log_a.close()
    log_b = open_log(tmp_path, name="b")
    log_b.append("CLEAR", {"scope": "REFERENCE"}, "x", 1.0)
    log_b.close()
    mirror_dir = tmp_path / "a" / "mirror"
    (mirror_dir / "events.log").write_bytes((tmp_path / "b" / "mirror" / "events.log").read_bytes())
    with pytest.raises(StorageFailure):
        EventLog(tmp_path / "a" / "primary", mirror_dir, fsync=False)


def test_replay_of_full_log_equals_live_state(make_service):
    service = make_service()
    service.import_reference(ADMIN, csv_text(SMALL_ROWS).encode())
    session = service.create_session(ADMIN)
    service.start_bin_task(OPERATOR, session.session_id, "B1")
    for i, hu in enumerate(("H1", "H2", "H3", "H1")):
        service.submit_scan(OPERATOR, session.session_id, "B1", f"e{i}", f"B1|X|{hu}", float(i))
    assert replay_state(service.log.entries) == service.state
    assert replay_state(service.log.read_entries()) == service.state


def test_empty_log_replays_to_initial_state():
    state = replay_state([])
    assert state.reference is None and state.sessions == {} and state.archives == {}


CRASH_CHILD = textwrap.dedent(
    """
    import sys, time
    from stocktake.store import EventLog

    primary, mirror = sys.argv[1], sys.argv[2]
    log = EventLog(primary, mirror, fsync=True)
    for i in range(100000):
        entry = log.append("SCAN", {"event_id": f"e{i}"}, "op01", float(i))
        print(entry.seq, flush=True)
    """
)


@pytest.mark.parametrize("attempt", range(3))
def test_crash_consistency_kill9(tmp_path, attempt):
    """Kill -9 mid-append stream: every acknowledged seq survives recovery."""
    primary = tmp_path / f"c{attempt}" / "primary"
    mirror = tmp_path / f"c{attempt}" / "mirror"
    child = subprocess.Popen(
        [sys.executable, "-c", CRASH_CHILD, str(primary), str(mirror)],
        stdout=subprocess.PIPE,
        text=True,
    )
    acked = 0
    deadline = time.time() + 30
    want = 40 + attempt * 25
    while acked < want and time.time() < deadline:
        line = child.stdout.readline()
        if line.strip():
            acked = int(line)
    os.kill(child.pid, signal.SIGKILL)
    child.wait()
    assert acked >= want, "child never reached the target ack count"
    recovered = EventLog(primary, mirror, fsync=False)
    assert recovered.last_seq >= acked
    assert [e.seq for e in recovered.entries] == list(range(1, recovered.last_seq + 1))
    recovered.verify_chain()
    recovered.close()


class TestArchiveBundle:
    def completed_session(self, make_service):
        service = make_service()
        rows = [
            ("B1", "X", "H1", "A", 5),
            ("B2", "Y", "H2", "B", 6),
            ("B3", "Z", "H3", "C", 7),
        ]
        service.import_reference(ADMIN, csv_text(rows).encode())
        session = service.create_session(ADMIN)
        for bin_code, hu, batch in (("B1", "H1", "X"), ("B2", "H2", "Y"), ("B3", "H3", "Z")):
            service.start_bin_task(OPERATOR, session.session_id, bin_code)
            service.submit_scan(
                OPERATOR, session.session_id, bin_code, f"e-{hu}", f"{bin_code}|{batch}|{hu}", 1.0
            )
            service.sign_off_bin(OPERATOR, session.session_id, bin_code)
        service.archive_session(ADMIN, session.session_id)
        return service, session

    def test_bundle_has_one_row_per_bin(self, make_service):
        service, session = self.completed_session(make_service)
        bundle = service.archive_dir / session.session_id
        lines = (bundle / "reconciliation.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 3  # header + three bins

    def test_reexport_is_byte_identical(self, make_service):
        service, session = self.completed_session(make_service)
        bundle = service.archive_dir / session.session_id
        blobs = {f.name: f.read_bytes() for f in bundle.iterdir()}
        service.export_archive(session.session_id)
        assert {f.name: f.read_bytes() for f in bundle.iterdir()} == blobs

    def test_bundle_replay_reproduces_frozen_reconciliations(self, make_service):
        service, session = self.completed_session(make_service)
        bundle = service.archive_dir / session.session_id
        entries = read_archive_entries(bundle)
        state = replay_state(entries)
        rebuilt = state.sessions[session.session_id]
        assert rebuilt.state == "ARCHIVED"
        for bin_code, task in session.bin_tasks.items():
            assert rebuilt.bin_tasks[bin_code].frozen == task.frozen

    def test_export_requires_archived(self, make_service):
        from stocktake.store import NotArchived

        service = make_service()
        service.import_reference(ADMIN, csv_text(SMALL_ROWS).encode())
        session = service.create_session(ADMIN)
        with pytest.raises(NotArchived):
            service.export_archive(session.session_id)
