"""Full-scale experiment: generate the 500-bin / 1000-batch / 37,000-unit
warehouse, boot a server, drive ten concurrent operators through a complete
count, and print completion statistics plus the discrepancy audit.

    python scripts/run_full_scale.py --out-dir /tmp/stocktake-run
    python scripts/run_full_scale.py --bins 50 --batches 100 --units 2000  # desk scale
"""

import argparse
import tempfile
import threading
import time
from pathlib import Path

import httpx
import uvicorn

from stocktake.monitor import completion_stats
from stocktake.server import create_app
from stocktake.session import Credential, Role, StocktakeService
from stocktake.sim import (
    SimConfig,
    discrepancies_match,
    generate_warehouse,
    run_count,
    write_warehouse,
)
from stocktake.store import EventLog


def credentials(operators):
    creds = {"tok-admin": Credential("tok-admin", "admin", Role.ADMIN)}
    for i in range(1, operators + 1):
        token = f"tok-op{i:02d}"
        creds[token] = Credential(token, f"op{i:02d}", Role.OPERATOR)
    return creds


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--bins", type=int, default=500)
    parser.add_argument("--batches", type=int, default=1000)
    parser.add_argument("--units", type=int, default=37000)
    parser.add_argument("--operators", type=int, default=10)
    parser.add_argument("--misplace-rate", type=float, default=0.01)
    parser.add_argument("--skip-rate", type=float, default=0.0)
    parser.add_argument("--scan-interval-mean", type=float, default=2.0)
    parser.add_argument("--scan-interval-sd", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out-dir", type=Path, default=None)
    args = parser.parse_args()

    out_dir = args.out_dir or Path(tempfile.mkdtemp(prefix="stocktake-"))
    config = SimConfig(
        bins=args.bins,
        batches=args.batches,
        handling_units=args.units,
        operators=args.operators,
        misplace_rate=args.misplace_rate,
        skip_rate=args.skip_rate,
        scan_interval_mean=args.scan_interval_mean,
        scan_interval_sd=args.scan_interval_sd,
        seed=args.seed,
    )

    t0 = time.perf_counter()
    warehouse = generate_warehouse(config)
    write_warehouse(warehouse, out_dir / "warehouse")
    print(
        f"generated {len(warehouse.rows)} units across {len(warehouse.physical)} bins "
        f"({len(warehouse.misplaced)} misplaced, {len(warehouse.lost)} lost) "
        f"in {time.perf_counter() - t0:.2f}s"
    )

    log = EventLog(out_dir / "log" / "primary", out_dir / "log" / "mirror", fsync=False)
    service = StocktakeService(log, archive_dir=out_dir / "archives")
    app = create_app(service, credentials(args.operators))
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    url = f"http://127.0.0.1:{port}"
    print(f"server listening on {url}")

    try:
        with httpx.Client(
            base_url=url, headers={"Authorization": "Bearer tok-admin"}, timeout=120.0
        ) as admin:
            response = admin.post(
                "/reference",
                content=warehouse.reference_csv().encode(),
                headers={"Content-Type": "text/csv"},
            )
            response.raise_for_status()
            print(f"reference imported: {response.json()}")

        t1 = time.perf_counter()
        result = run_count(url, config, warehouse)
        wall = time.perf_counter() - t1

        (out_dir / "metrics.csv").write_text(result.metrics_csv(), encoding="utf-8")
        durations = [m.seconds for m in result.bin_metrics]
        mean, median, sd = completion_stats(durations)
        print(
            f"count complete: {result.progress['completed']} bins, "
            f"{wall:.1f}s wall, engine {result.engine_seconds:.2f}s CPU"
        )
        print(
            f"per-bin completion (virtual): mean {mean:.2f}s, median {median:.2f}s, "
            f"population sd {sd:.2f}s"
        )
        ok, detail = discrepancies_match(result.discrepancies, warehouse)
        print(
            f"discrepancies: {len(result.discrepancies['surplus_units'])} surplus, "
            f"{sum(result.discrepancies['shortage_by_batch'].values())} missing -> {detail}"
        )
        print(f"artifacts in {out_dir}")
        if not ok:
            raise SystemExit(1)
    finally:
        server.should_exit = True
        thread.join(timeout=10)
        log.close()


if __name__ == "__main__":
    main()
