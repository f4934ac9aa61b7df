import pytest
from fastapi.testclient import TestClient

from stocktake.server import create_app
from stocktake.session import Credential, Role, StocktakeService, replay_state
from stocktake.store import EventLog

from conftest import SMALL_ROWS, csv_text

CREDENTIALS = {
    "tok-admin": Credential("tok-admin", "admin", Role.ADMIN),
    "tok-op01": Credential("tok-op01", "op01", Role.OPERATOR),
    "tok-op02": Credential("tok-op02", "op02", Role.OPERATOR),
}


@pytest.fixture
def service(tmp_path):
    log = EventLog(tmp_path / "primary", tmp_path / "mirror", fsync=False)
    svc = StocktakeService(log, archive_dir=tmp_path / "archives")
    yield svc
    log.close()


@pytest.fixture
def client(service):
    app = create_app(service, CREDENTIALS)
    with TestClient(app, raise_server_exceptions=True) as c:
        yield c


def auth(token):
    return {"Authorization": f"Bearer {token}"}


def import_reference(client, rows=SMALL_ROWS):
    return client.post(
        "/reference",
        content=csv_text(rows).encode(),
        headers={**auth("tok-admin"), "Content-Type": "text/csv"},
    )


def open_session(client):
    import_reference(client)
    return client.post("/sessions", headers=auth("tok-admin")).json()["session_id"]


def scan_body(sid, bin_code, hu, batch="X", designated="B1", event_id=None, at=1.0, **extra):
    return {
        "session_id": sid,
        "bin_code": bin_code,
        "event_id": event_id or f"evt-{bin_code}-{hu}",
        "payload": f"{designated}|{batch}|{hu}",
        "at": at,
        **extra,
    }


class TestAuth:
    def test_missing_token(self, client):
        assert client.post("/sessions").status_code == 401

    def test_unknown_token(self, client):
        assert client.post("/sessions", headers=auth("nope")).status_code == 401

    def test_role_violation_is_403(self, client):
        import_reference(client)
        response = client.post("/sessions", headers=auth("tok-op01"))
        assert response.status_code == 403
        assert response.json()["error"] == "Forbidden"

    def test_healthz_is_open(self, client):
        body = client.get("/healthz").json()
        assert body["status"] == "ok"
        assert "engine_seconds" in body


class TestReferenceImport:
    def test_summary(self, client):
        response = import_reference(client)
        assert response.status_code == 200
        assert response.json() == {"bins": 2, "batches": 3, "units": 5}

    def test_malformed_csv_is_400(self, client):
        response = client.post(
            "/reference", content=b"not,a,reference", headers=auth("tok-admin")
        )
        assert response.status_code == 400
        assert response.json()["error"] == "MalformedRow"

    def test_duplicate_hu_is_400(self, client):
        rows = SMALL_ROWS + [("B2", "Y", "H1", "B", 200)]
        response = import_reference(client, rows)
        assert response.status_code == 400
        assert response.json()["error"] == "DuplicateHuCode"


class TestScans:
    def test_match_payload(self, client):
        sid = open_session(client)
        client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op01"))
        response = client.post("/scans", json=scan_body(sid, "B1", "H1"), headers=auth("tok-op01"))
        assert response.status_code == 200
        assert response.json() == {"classification": "MATCH"}

    def test_misplaced_carries_designated_bin(self, client):
        sid = open_session(client)
        client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op01"))
        response = client.post(
            "/scans",
            json=scan_body(sid, "B1", "K9", batch="Y", designated="B2"),
            headers=auth("tok-op01"),
        )
        assert response.json() == {"classification": "MISPLACED", "designated_bin": "B2"}

    def test_idempotent_redelivery(self, client, service):
        sid = open_session(client)
        client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op01"))
        body = scan_body(sid, "B1", "H1", event_id="fixed-id")
        first = client.post("/scans", json=body, headers=auth("tok-op01"))
        seq_after_first = service.log.last_seq
        second = client.post("/scans", json=body, headers=auth("tok-op01"))
        assert second.status_code == 200
        assert second.json() == first.json()
        assert service.log.last_seq == seq_after_first

    def test_missing_event_id_is_400(self, client):
        sid = open_session(client)
        client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op01"))
        body = scan_body(sid, "B1", "H1")
        del body["event_id"]
        response = client.post("/scans", json=body, headers=auth("tok-op01"))
        assert response.status_code == 400

    def test_bad_payload_is_400(self, client):
        sid = open_session(client)
        client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op01"))
        body = scan_body(sid, "B1", "H1")
        body["payload"] = "toofew|segments"
        response = client.post("/scans", json=body, headers=auth("tok-op01"))
        assert response.status_code == 400
        assert response.json()["error"] == "MissingField"

    def test_verbose_scan_returns_tallies(self, client):
        sid = open_session(client)
        client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op01"))
        response = client.post(
            "/scans", json=scan_body(sid, "B1", "H1", verbose=True), headers=auth("tok-op01")
        )
        body = response.json()
        assert body["bin"]["per_batch"]["X"]["counted_qty"] == 1
        assert body["bin"]["per_batch"]["X"]["expected_qty"] == 3

    def test_unassigned_operator_is_409(self, client):
        sid = open_session(client)
        client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op01"))
        response = client.post("/scans", json=scan_body(sid, "B1", "H1"), headers=auth("tok-op02"))
        assert response.status_code == 409
        assert response.json()["error"] == "NotAssigned"


class TestLifecycleEndpoints:
    def test_start_conflict_is_409(self, client):
        sid = open_session(client)
        assert client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op01")).status_code == 200
        response = client.post(f"/sessions/{sid}/bins/B1/start", headers=auth("tok-op02"))
        assert response.status_code == 409
        assert response.json()["error"] == "AlreadyStarted"

    def test_unknown_ids_are_404(self, client):
        sid = open_session(client)
        assert client.get("/sessions/S9999/progress", headers=auth("tok-op01")).status_code == 404
        assert client.post(f"/sessions/{sid}/bins/NOPE/start", headers=auth("tok-op01")).status_code == 404

    def test_signoff_before_completeness_lists_blockers(self, client):
        sid = open_session(client)
        client.post(f"/sessions/{sid}/bins/B2/start", headers=auth("tok-op01"))
        response = client.post(f"/sessions/{sid}/bins/B2/signoff", headers=auth("tok-op01"))
        assert response.status_code == 409
        body = response.json()
        assert body["error"] == "IncompleteBatchList"
        assert body["blocking_batches"] == ["Y", "Z"]

    def test_full_flow_archive_and_clear(self, client, service):
        sid = open_session(client)
        op = auth("tok-op01")
        for bin_code, scans in (
            ("B1", [("H1", "X", "B1"), ("H2", "X", "B1"), ("H3", "X", "B1")]),
            ("B2", [("K9", "Y", "B2"), ("K10", "Z", "B2")]),
        ):
            client.post(f"/sessions/{sid}/bins/{bin_code}/start", headers=op)
            for hu, batch, home in scans:
                client.post(
                    "/scans", json=scan_body(sid, bin_code, hu, batch=batch, designated=home), headers=op
                )
            assert client.post(f"/sessions/{sid}/bins/{bin_code}/signoff", headers=op).status_code == 200
        response = client.post(f"/sessions/{sid}/archive", headers=auth("tok-admin"))
        assert response.status_code == 200
        assert response.json()["archive_id"] == sid
        late = client.post("/scans", json=scan_body(sid, "B1", "H1", event_id="late"), headers=op)
        assert late.status_code == 409
        assert late.json()["error"] == "SessionArchived"
        cleared = client.post("/clear", json={"scope": "HISTORY"}, headers=auth("tok-admin"))
        assert cleared.status_code == 200
        assert service.state.archives == {}

    def test_archive_with_tasks_remaining_is_409(self, client):
        sid = open_session(client)
        response = client.post(f"/sessions/{sid}/archive", headers=auth("tok-admin"))
        assert response.status_code == 409
        assert response.json()["remaining"] == 2

    def test_ack_surplus_flow(self, client):
        sid = open_session(client)
        op = auth("tok-op01")
        client.post(f"/sessions/{sid}/bins/B1/start", headers=op)
        for hu, batch, home in (("H1", "X", "B1"), ("H2", "X", "B1"), ("H3", "X", "B1"),
                                ("K9", "Y", "B2")):
            client.post("/scans", json=scan_body(sid, "B1", hu, batch=batch, designated=home), headers=op)
        blocked = client.post(f"/sessions/{sid}/bins/B1/signoff", headers=op)
        assert blocked.status_code == 409
        assert blocked.json()["unacknowledged_surplus"] == ["K9"]
        detail = client.get(f"/sessions/{sid}/bins/B1", headers=op).json()
        assert detail["unacknowledged_surplus"] == ["K9"]
        acked = client.post(
            f"/sessions/{sid}/bins/B1/ack-surplus", json={"hu_code": "K9"}, headers=op
        )
        assert acked.status_code == 200
        signed = client.post(f"/sessions/{sid}/bins/B1/signoff", headers=op)
        assert signed.status_code == 200
        assert signed.json()["surplus"] == [{"hu_code": "K9", "designated_bin": "B2"}]


class TestReports:
    def test_progress_endpoint(self, client):
        sid = open_session(client)
        body = client.get(f"/sessions/{sid}/progress", headers=auth("tok-op01")).json()
        assert body["pending"] == 2 and body["completed"] == 0

    def test_activity_endpoint_flags_gaps(self, client):
        sid = open_session(client)
        op = auth("tok-op01")
        client.post(f"/sessions/{sid}/bins/B1/start", json={"at": 0.0}, headers=op)
        client.post("/scans", json=scan_body(sid, "B1", "H1", at=1.0), headers=op)
        client.post("/scans", json=scan_body(sid, "B1", "H2", at=2000.0), headers=op)
        body = client.get(
            f"/sessions/{sid}/activity", params={"idle_threshold": 600}, headers=op
        ).json()
        assert len(body["idle_gaps"]) == 1
        assert body["idle_gaps"][0]["gap_seconds"] == pytest.approx(1999.0)

    def test_route_plan_endpoint(self, client):
        sid = open_session(client)
        body = client.get(f"/sessions/{sid}/route-plan", params={"k": 2}, headers=auth("tok-op01")).json()
        assert len(body["operators"]) == 2
        covered = sorted(r["bin_code"] for op in body["operators"] for r in op["bins"])
        assert covered == ["B1", "B2"]

    def test_discrepancies_endpoint(self, client):
        sid = open_session(client)
        op = auth("tok-op01")
        client.post(f"/sessions/{sid}/bins/B1/start", headers=op)
        client.post("/scans", json=scan_body(sid, "B1", "K9", batch="Y", designated="B2"), headers=op)
        body = client.get(f"/sessions/{sid}/discrepancies", headers=op).json()
        assert body["surplus_units"] == [
            {"hu_code": "K9", "found_bin": "B1", "designated_bin": "B2", "acknowledged": False}
        ]

    def test_sessions_listing(self, client):
        sid = open_session(client)
        body = client.get("/sessions", headers=auth("tok-op01")).json()
        assert [s["session_id"] for s in body["sessions"]] == [sid]


def test_api_calls_replay_to_identical_state(client, service):
    """The logged order is the serialized engine order: replay == live."""
    sid = open_session(client)
    op = auth("tok-op01")
    client.post(f"/sessions/{sid}/bins/B1/start", headers=op)
    for hu in ("H1", "H2", "H2", "H3"):
        client.post("/scans", json=scan_body(sid, "B1", hu, event_id=f"e-{hu}"), headers=op)
    client.post(f"/sessions/{sid}/bins/B1/signoff", headers=op)
    assert replay_state(service.log.entries) == service.state
