"""Shared fixtures: credentials, service factory, random-warehouse helpers,
a live uvicorn server harness, and the independent brute-force
reconciliation oracle used across suites."""

from __future__ import annotations

import random
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass

import pytest
import uvicorn

from stocktake.reconcile import HandlingUnitRef, ReferenceInventory
from stocktake.server import create_app
from stocktake.session import Credential, Role, StocktakeService
from stocktake.store import EventLog

ADMIN = Credential("tok-admin", "admin", Role.ADMIN)
OPERATOR = Credential("tok-op01", "op01", Role.OPERATOR)
OPERATOR2 = Credential("tok-op02", "op02", Role.OPERATOR)


@pytest.fixture
def admin():
    return ADMIN


@pytest.fixture
def operator():
    return OPERATOR


@pytest.fixture
def make_service(tmp_path):
    """Factory for isolated services, each over its own mirrored log pair."""
    created = []

    def _make(fsync=False, subdir="svc", clock=None):
        base = tmp_path / subdir
        log = EventLog(base / "primary", base / "mirror", fsync=fsync)
        kwargs = {"archive_dir": base / "archives"}
        if clock is not None:
            kwargs["clock"] = clock
        service = StocktakeService(log, **kwargs)
        created.append(log)
        return service

    yield _make
    for log in created:
        log.close()


def csv_text(rows):
    header = "bin_code,batch_code,hu_code,category,shelved_at_unix"
    return "\n".join([header] + [",".join(str(f) for f in r) for r in rows]) + "\n"


SMALL_ROWS = [
    ("B1", "X", "H1", "A", 100),
    ("B1", "X", "H2", "A", 100),
    ("B1", "X", "H3", "A", 100),
    ("B2", "Y", "K9", "B", 200),
    ("B2", "Z", "K10", "C", 300),
]


def small_reference() -> ReferenceInventory:
    return ReferenceInventory.from_rows(SMALL_ROWS)


# --- live server harness ------------------------------------------------------

@dataclass
class LiveServer:
    url: str
    service: StocktakeService


def sim_credentials(operators: int) -> dict[str, Credential]:
    creds = {"tok-admin": Credential("tok-admin", "admin", Role.ADMIN)}
    for i in range(1, operators + 1):
        token = f"tok-op{i:02d}"
        creds[token] = Credential(token, f"op{i:02d}", Role.OPERATOR)
    return creds


@contextmanager
def live_server(base_dir, operators=10, fsync=False, config=None):
    """Boot a real uvicorn server on an ephemeral port; yields url + service."""
    log = EventLog(base_dir / "primary", base_dir / "mirror", fsync=fsync)
    service = StocktakeService(log, archive_dir=base_dir / "archives")
    app = create_app(service, sim_credentials(operators), config)
    uv_config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(uv_config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("uvicorn did not start in time")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        yield LiveServer(url=f"http://127.0.0.1:{port}", service=service)
    finally:
        server.should_exit = True
        thread.join(timeout=10)
        log.close()


# --- independent random warehouses and the brute-force oracle ----------------

def random_reference(rng: random.Random, max_bins=50, max_units=200):
    """Plain random warehouse as raw rows; independent of the simulator."""
    n_bins = rng.randint(1, max_bins)
    n_units = rng.randint(n_bins, max_units)
    bins = [f"B{i:02d}" for i in range(1, n_bins + 1)]
    n_batches = rng.randint(1, max(1, n_units // 2))
    batches = [f"L{i:02d}" for i in range(1, n_batches + 1)]
    meta = {
        b: (rng.choice("ABC"), rng.randrange(1, 10_000_000)) for b in batches
    }
    rows = []
    for i in range(1, n_units + 1):
        bin_code = bins[(i - 1) % n_bins] if i <= n_bins else rng.choice(bins)
        batch = rng.choice(batches)
        rows.append((bin_code, batch, f"H{i:04d}", meta[batch][0], meta[batch][1]))
    return rows


def random_scan_lists(rng: random.Random, rows, misplace_rate=0.2, skip_rate=0.2,
                      duplicate_rate=0.2, alien_rate=0.05):
    """Physical scan list per bin: units shuffled, some moved, some lost,
    some re-scanned, plus occasional units the reference never heard of."""
    bins = sorted({r[0] for r in rows})
    physical = {b: [] for b in bins}
    for bin_code, batch, hu, _, _ in rows:
        r = rng.random()
        if r < skip_rate:
            continue
        if r < skip_rate + misplace_rate and len(bins) > 1:
            others = [b for b in bins if b != bin_code]
            physical[rng.choice(others)].append((batch, hu))
        else:
            physical[bin_code].append((batch, hu))
    scans = {}
    for i, bin_code in enumerate(bins):
        refs = [
            HandlingUnitRef(_designated_bin(rows, hu), batch, hu)
            for batch, hu in physical[bin_code]
        ]
        if rng.random() < alien_rate:
            refs.append(HandlingUnitRef("ZZ", "ZZ", f"ALIEN{i:03d}"))
        duplicated = []
        for ref in refs:
            duplicated.append(ref)
            if rng.random() < duplicate_rate:
                duplicated.append(ref)
        rng.shuffle(duplicated)
        scans[bin_code] = duplicated
    return scans


def _designated_bin(rows, hu):
    for bin_code, _, code, _, _ in rows:
        if code == hu:
            return bin_code
    raise AssertionError(hu)


def oracle_reconcile(rows, bin_code, scans):
    """Brute-force set-difference oracle over raw reference rows.

    Deliberately avoids ReferenceInventory/reconcile_bin internals: expected
    sets come straight from the rows, designated bins from a linear search.
    """
    expected = {}
    for b, batch, hu, _, _ in rows:
        if b == bin_code:
            expected.setdefault(batch, set()).add(hu)
    scanned = {s.hu_code for s in scans}
    per_batch = {}
    for batch, units in expected.items():
        counted = len(units & scanned)
        missing = units - scanned
        per_batch[batch] = (len(units), counted, len(missing), missing)
    all_expected = set().union(*expected.values()) if expected else set()
    surplus = []
    for hu in sorted(scanned - all_expected):
        designated = None
        for b, _, code, _, _ in rows:
            if code == hu:
                designated = b
                break
        surplus.append((hu, designated))
    return per_batch, surplus
