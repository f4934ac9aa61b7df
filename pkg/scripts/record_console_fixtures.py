"""Record real API responses as console test fixtures.

Runs a small deterministic simulated count against a live server, then
saves the /progress, /discrepancies and /activity payloads (plus a bin
detail and a scan response) under frontend/tests/fixtures/. The console's
snapshot tests assert their rendered output against these files.
"""

import json
import tempfile
import threading
import time
from pathlib import Path

import httpx
import uvicorn

from stocktake.server import create_app
from stocktake.session import Credential, Role, StocktakeService
from stocktake.sim import SimConfig, generate_warehouse, run_count
from stocktake.store import EventLog

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def main():
    config = SimConfig(
        bins=6,
        batches=10,
        handling_units=90,
        operators=2,
        misplace_rate=0.06,
        scan_interval_mean=30.0,
        scan_interval_sd=5.0,
        pause_every_scans=25,
        pause_seconds=900.0,
        seed=2024,
    )
    warehouse = generate_warehouse(config)

    base = Path(tempfile.mkdtemp())
    log = EventLog(base / "p", base / "m", fsync=False)
    credentials = {"tok-admin": Credential("tok-admin", "admin", Role.ADMIN)}
    for i in range(1, config.operators + 1):
        token = f"tok-op{i:02d}"
        credentials[token] = Credential(token, f"op{i:02d}", Role.OPERATOR)
    service = StocktakeService(log, archive_dir=base / "a")
    app = create_app(service, credentials)
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    url = f"http://127.0.0.1:{port}"

    try:
        with httpx.Client(
            base_url=url, headers={"Authorization": "Bearer tok-admin"}, timeout=60.0
        ) as admin:
            admin.post(
                "/reference",
                content=warehouse.reference_csv().encode(),
                headers={"Content-Type": "text/csv"},
            ).raise_for_status()
            result = run_count(url, config, warehouse)
            sid = result.session_id
            fixtures = {
                "progress.json": admin.get(f"/sessions/{sid}/progress").json(),
                "discrepancies.json": admin.get(f"/sessions/{sid}/discrepancies").json(),
                "activity.json": admin.get(
                    f"/sessions/{sid}/activity", params={"idle_threshold": 600}
                ).json(),
                "bin_detail.json": admin.get(
                    f"/sessions/{sid}/bins/{result.bin_metrics[0].bin_code}"
                ).json(),
            }
        FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
        for name, payload in fixtures.items():
            (FIXTURE_DIR / name).write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            print(f"wrote {FIXTURE_DIR / name}")
    finally:
        server.should_exit = True
        thread.join(timeout=10)
        log.close()


if __name__ == "__main__":
    main()
