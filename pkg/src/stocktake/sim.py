"""Deterministic warehouse simulator.

``generate_warehouse`` regenerates a desk-scale (or full 500-bin, 1000-batch,
37,000-unit) warehouse from a seed: a skewed log-normal unit-per-bin
distribution, batches spanning multiple bins, and injected faults — a
fraction of units misplaced into random other bins and a fraction lost.
Fault injection never empties a (bin, batch) cell, so every batch stays
enumerable and every bin can still be signed off; the injected ground truth
is recorded exactly as applied.

``run_count`` drives N scripted operators against a live server: each walks
its optimized route, scans every physically present unit, acknowledges the
surplus the server reports, and signs off. Operator clocks are virtual
(advanced by drawn scan intervals, never slept), so identical (seed, config)
produce byte-identical metrics regardless of wall-clock scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import random
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import click
import httpx

from .optimizer import BatchInfo, CostModel
from .store import canonical_json

SHELVING_WINDOW_SECONDS = 365 * 86400
SHELVING_BASE_EPOCH = 1_700_000_000 - SHELVING_WINDOW_SECONDS


class InvalidConfig(ValueError):
    pass


class ServerUnreachable(RuntimeError):
    pass


class StalledBin(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    bins: int = 500
    batches: int = 1000
    handling_units: int = 37000
    inner_products_per_hu: float = 54.0  # informational only, echoes total ~2M products
    operators: int = 10
    misplace_rate: float = 0.0
    skip_rate: float = 0.0
    scan_interval_mean: float = 2.0
    scan_interval_sd: float = 0.5
    pause_every_scans: int = 0  # 0 disables seeded idle pauses
    pause_seconds: float = 0.0
    span_rate: float = 0.25  # chance a batch also lives in a second bin
    skew_sigma: float = 1.0  # log-normal sigma of the unit-per-bin weights
    max_batches_per_bin: int = 12
    duplicate_rate: float = 0.0  # chance a scan is re-delivered with its event_id
    seed: int = 42

    def validate(self) -> None:
        if self.bins < 1 or self.batches < 1 or self.operators < 1:
            raise InvalidConfig("bins, batches and operators must be positive")
        if self.handling_units < max(self.bins, self.batches):
            raise InvalidConfig("need at least one handling unit per bin and per batch")
        for name in ("misplace_rate", "skip_rate", "span_rate", "duplicate_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidConfig(f"{name} must be within [0, 1]")
        if self.scan_interval_mean < 0 or self.scan_interval_sd < 0 or self.pause_seconds < 0:
            raise InvalidConfig("time parameters must be non-negative")
        if self.max_batches_per_bin < 1:
            raise InvalidConfig("max_batches_per_bin must be positive")
        if self.batches > self.bins * self.max_batches_per_bin:
            raise InvalidConfig("not enough batch slots: batches > bins * max_batches_per_bin")


@dataclass(frozen=True)
class MisplacedUnit:
    hu_code: str
    batch_code: str
    from_bin: str
    to_bin: str


@dataclass(frozen=True)
class LostUnit:
    hu_code: str
    batch_code: str
    from_bin: str


@dataclass
class Warehouse:
    config: SimConfig
    rows: list[tuple[str, str, str, str, int]]  # reference CSV rows
    designated: dict[str, tuple[str, str]]  # hu -> (bin, batch)
    physical: dict[str, list[str]]  # bin -> hu codes actually present
    batch_info: dict[str, tuple[str, int]]  # batch -> (category, shelved_at)
    misplaced: list[MisplacedUnit]
    lost: list[LostUnit]

    def payload(self, hu_code: str) -> str:
        bin_code, batch_code = self.designated[hu_code]
        return f"{bin_code}|{batch_code}|{hu_code}"

    def reference_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_code", "batch_code", "hu_code", "category", "shelved_at_unix"])
        writer.writerows(self.rows)
        return buf.getvalue()


def _largest_remainder(weights: list[float], total: int) -> list[int]:
    scale = total / sum(weights)
    raw = [w * scale for w in weights]
    base = [int(r) for r in raw]
    shortfall = total - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (base[i] - raw[i], i))
    for i in order[:shortfall]:
        base[i] += 1
    return base


def generate_warehouse(config: SimConfig) -> Warehouse:
    """Build reference rows, physical placement and fault ground truth from the seed."""
    config.validate()
    rng = random.Random(config.seed)
    width_bin = max(3, len(str(config.bins)))
    width_batch = max(4, len(str(config.batches)))
    width_hu = max(6, len(str(config.handling_units)))
    bin_codes = [f"B{i:0{width_bin}d}" for i in range(1, config.bins + 1)]
    batch_codes = [f"L{i:0{width_batch}d}" for i in range(1, config.batches + 1)]
    categories = {b: rng.choice("ABC") for b in batch_codes}
    shelved = {
        b: SHELVING_BASE_EPOCH + rng.randrange(SHELVING_WINDOW_SECONDS) for b in batch_codes
    }

    # skewed unit counts, at least one unit per bin
    weights = [rng.lognormvariate(0.0, config.skew_sigma) for _ in bin_codes]
    extra = _largest_remainder(weights, config.handling_units - config.bins)
    unit_counts = {b: 1 + extra[i] for i, b in enumerate(bin_codes)}

    # place batches: every bin hosts >= 1 batch, every batch lives in >= 1 bin
    placements: dict[str, list[str]] = {b: [] for b in bin_codes}  # bin -> batch codes

    def bin_cap(b: str) -> int:
        return min(unit_counts[b], config.max_batches_per_bin)

    shuffled_batches = batch_codes[:]
    rng.shuffle(shuffled_batches)
    shuffled_bins = bin_codes[:]
    rng.shuffle(shuffled_bins)
    if config.batches >= config.bins:
        for bin_code, batch in zip(shuffled_bins, shuffled_batches):
            placements[bin_code].append(batch)
        for batch in shuffled_batches[config.bins:]:
            candidates = [b for b in bin_codes if len(placements[b]) < bin_cap(b)]
            placements[rng.choice(candidates)].append(batch)
    else:
        for bin_code, batch in zip(shuffled_bins, shuffled_batches):
            placements[bin_code].append(batch)
        for bin_code in shuffled_bins[config.batches:]:
            placements[bin_code].append(rng.choice(shuffled_batches))
    for batch in batch_codes:
        if rng.random() < config.span_rate:
            candidates = [
                b
                for b in bin_codes
                if len(placements[b]) < bin_cap(b) and batch not in placements[b]
            ]
            if candidates:
                placements[rng.choice(candidates)].append(batch)

    # split each bin's units across its placements, one unit minimum each
    rows: list[tuple[str, str, str, str, int]] = []
    designated: dict[str, tuple[str, str]] = {}
    next_hu = 1
    for bin_code in bin_codes:
        slots = placements[bin_code]
        counts = [1] * len(slots)
        for _ in range(unit_counts[bin_code] - len(slots)):
            counts[rng.randrange(len(slots))] += 1
        for batch, n in zip(slots, counts):
            for _ in range(n):
                hu = f"HU{next_hu:0{width_hu}d}"
                next_hu += 1
                rows.append((bin_code, batch, hu, categories[batch], shelved[batch]))
                designated[hu] = (bin_code, batch)

    # fault injection; a cell never loses its last present unit
    physical: dict[str, list[str]] = {b: [] for b in bin_codes}
    cell_present: dict[tuple[str, str], int] = {}
    in_place: list[str] = []
    for bin_code, batch, hu, _, _ in rows:
        physical[bin_code].append(hu)
        cell_present[(bin_code, batch)] = cell_present.get((bin_code, batch), 0) + 1
        in_place.append(hu)

    misplaced: list[MisplacedUnit] = []
    lost: list[LostUnit] = []
    moved: set[str] = set()
    target_misplaced = round(config.misplace_rate * config.handling_units) if config.bins >= 2 else 0
    candidates = in_place[:]
    rng.shuffle(candidates)
    for hu in candidates:
        if len(misplaced) >= target_misplaced:
            break
        bin_code, batch = designated[hu]
        if cell_present[(bin_code, batch)] < 2:
            continue
        to_bin = bin_codes[rng.randrange(config.bins - 1)]
        if to_bin == bin_code:
            to_bin = bin_codes[-1]
        physical[bin_code].remove(hu)
        physical[to_bin].append(hu)
        cell_present[(bin_code, batch)] -= 1
        moved.add(hu)
        misplaced.append(MisplacedUnit(hu, batch, bin_code, to_bin))

    target_lost = round(config.skip_rate * config.handling_units)
    candidates = [hu for hu in in_place if hu not in moved]
    rng.shuffle(candidates)
    for hu in candidates:
        if len(lost) >= target_lost:
            break
        bin_code, batch = designated[hu]
        if cell_present[(bin_code, batch)] < 2:
            continue
        physical[bin_code].remove(hu)
        cell_present[(bin_code, batch)] -= 1
        lost.append(LostUnit(hu, batch, bin_code))

    return Warehouse(
        config=config,
        rows=rows,
        designated=designated,
        physical=physical,
        batch_info={b: (categories[b], shelved[b]) for b in batch_codes},
        misplaced=misplaced,
        lost=lost,
    )


def ground_truth_dict(warehouse: Warehouse) -> dict:
    return {
        "config": asdict(warehouse.config),
        "misplaced": [asdict(m) for m in warehouse.misplaced],
        "lost": [asdict(l) for l in warehouse.lost],
    }


def write_warehouse(warehouse: Warehouse, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reference.csv").write_text(warehouse.reference_csv(), encoding="utf-8")
    (out / "ground_truth.json").write_bytes(canonical_json(ground_truth_dict(warehouse)) + b"\n")
    (out / "credentials.txt").write_text(credentials_text(warehouse.config.operators), encoding="utf-8")
    return out


def credentials_text(operators: int) -> str:
    lines = ["tok-admin,admin,ADMIN"]
    for i in range(1, operators + 1):
        lines.append(f"tok-op{i:02d},op{i:02d},OPERATOR")
    return "\n".join(lines) + "\n"


def operator_tokens(operators: int) -> list[str]:
    return [f"tok-op{i:02d}" for i in range(1, operators + 1)]


def load_ground_truth(path: str | Path) -> Warehouse:
    """Regenerate the full warehouse from the config echoed in ground_truth.json."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    warehouse = generate_warehouse(SimConfig(**doc["config"]))
    recorded = ground_truth_dict(warehouse)
    if recorded["misplaced"] != doc["misplaced"] or recorded["lost"] != doc["lost"]:
        raise InvalidConfig("ground truth file does not match its own config regeneration")
    return warehouse


# --- scripted operators ------------------------------------------------------

@dataclass(frozen=True)
class ScanAction:
    hu_code: str
    at: float
    duplicate: bool  # re-deliver the same event_id immediately after the first send


@dataclass(frozen=True)
class BinScript:
    bin_code: str
    virtual_start: float
    scans: tuple[ScanAction, ...]
    acks: tuple[tuple[str, float], ...]  # surplus units present at the bin
    virtual_end: float


def scan_order_for_bin(warehouse: Warehouse, bin_code: str, batch_order) -> list[str]:
    """Physically present units, grouped by the planned batch order, surplus last."""
    by_batch: dict[str, list[str]] = {}
    foreign: list[str] = []
    for hu in warehouse.physical[bin_code]:
        designated_bin, batch = warehouse.designated[hu]
        if designated_bin == bin_code:
            by_batch.setdefault(batch, []).append(hu)
        else:
            foreign.append(hu)
    order: list[str] = []
    for batch in batch_order:
        order.extend(sorted(by_batch.pop(batch, [])))
    for batch in sorted(by_batch):  # batches the plan did not mention
        order.extend(sorted(by_batch[batch]))
    order.extend(sorted(foreign))
    return order


def _switch_seconds(warehouse: Warehouse, prev_hu: str | None, hu: str, cost_model) -> float:
    """Walking/search overhead when consecutive scans change batch."""
    if prev_hu is None:
        return 0.0
    prev_batch = warehouse.designated[prev_hu][1]
    batch = warehouse.designated[hu][1]
    if prev_batch == batch:
        return 0.0
    a_cat, a_ts = warehouse.batch_info[prev_batch]
    b_cat, b_ts = warehouse.batch_info[batch]
    return cost_model.switch_cost(
        BatchInfo(prev_batch, a_cat, a_ts, 0), BatchInfo(batch, b_cat, b_ts, 0)
    )


def script_route(
    warehouse: Warehouse,
    route: list[tuple[str, list[str]]],
    operator_index: int,
    config: SimConfig | None = None,
    cost_model=None,
) -> list[BinScript]:
    """Precompute one operator's entire timeline: scan order, virtual timestamps,
    duplicate deliveries and surplus acknowledgments.

    Pure function of (warehouse, route, operator_index), so identical seeds give
    identical emitted bytes no matter how the HTTP threads are scheduled.
    """
    config = config or warehouse.config
    cost_model = cost_model or CostModel()
    rng = random.Random(f"{config.seed}-op-{operator_index}")
    clock = 0.0
    scan_counter = 0
    scripts: list[BinScript] = []
    for bin_code, batch_order in route:
        start_clock = clock
        prev_hu: str | None = None
        actions: list[ScanAction] = []
        for hu in scan_order_for_bin(warehouse, bin_code, batch_order):
            if config.pause_every_scans and scan_counter and scan_counter % config.pause_every_scans == 0:
                clock += config.pause_seconds
            else:
                clock += max(0.0, rng.gauss(config.scan_interval_mean, config.scan_interval_sd))
            clock += _switch_seconds(warehouse, prev_hu, hu, cost_model)
            duplicate = rng.random() < config.duplicate_rate
            actions.append(ScanAction(hu_code=hu, at=clock, duplicate=duplicate))
            prev_hu = hu
            scan_counter += 1
        acks = []
        for hu in sorted(
            h for h in warehouse.physical[bin_code] if warehouse.designated[h][0] != bin_code
        ):
            clock += max(0.0, rng.gauss(config.scan_interval_mean, config.scan_interval_sd))
            acks.append((hu, clock))
        scripts.append(
            BinScript(
                bin_code=bin_code,
                virtual_start=start_clock,
                scans=tuple(actions),
                acks=tuple(acks),
                virtual_end=clock,
            )
        )
    return scripts


def simulate_virtual_totals(
    warehouse: Warehouse,
    route_bin_lists: list[list[tuple[str, list[str]]]],
    config: SimConfig | None = None,
    cost_model=None,
) -> dict[str, float]:
    """Per-operator virtual completion seconds without touching a server."""
    totals: dict[str, float] = {}
    for i, route in enumerate(route_bin_lists):
        scripts = script_route(warehouse, route, i, config, cost_model)
        totals[f"op{i + 1:02d}"] = scripts[-1].virtual_end if scripts else 0.0
    return totals


@dataclass
class BinMetric:
    bin_code: str
    operator: str
    virtual_start: float
    virtual_end: float
    scans: int
    surplus: int

    @property
    def seconds(self) -> float:
        return self.virtual_end - self.virtual_start


@dataclass
class SimResult:
    session_id: str
    bin_metrics: list[BinMetric]
    operator_totals: dict[str, float]
    discrepancies: dict
    progress: dict
    engine_seconds: float
    duplicates_sent: int = 0

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["record", "bin_code", "operator", "virtual_start", "virtual_end", "seconds", "scans", "surplus"]
        )
        for m in sorted(self.bin_metrics, key=lambda m: m.bin_code):
            writer.writerow(
                ["bin", m.bin_code, m.operator, m.virtual_start, m.virtual_end, m.seconds, m.scans, m.surplus]
            )
        for operator in sorted(self.operator_totals):
            writer.writerow(
                ["operator", "", operator, "", "", self.operator_totals[operator], "", ""]
            )
        return buf.getvalue()


class _OperatorClient(threading.Thread):
    """Executes a precomputed script against the server over HTTP."""

    def __init__(self, base_url, token, operator_id, session_id, scripts, warehouse, sink):
        super().__init__(name=f"sim-{operator_id}", daemon=True)
        self.base_url = base_url
        self.token = token
        self.operator_id = operator_id
        self.session_id = session_id
        self.scripts = scripts
        self.warehouse = warehouse
        self.sink = sink
        self.error: Exception | None = None
        self.duplicates_sent = 0

    def run(self):
        try:
            with httpx.Client(
                base_url=self.base_url,
                headers={"Authorization": f"Bearer {self.token}"},
                timeout=30.0,
            ) as client:
                for script in self.scripts:
                    self._count_bin(client, script)
        except Exception as exc:  # surfaced by run_count after join
            self.error = exc

    def _post(self, client, url, payload):
        last_exc = None
        for _ in range(3):
            try:
                return client.post(url, json=payload)
            except httpx.TransportError as exc:
                last_exc = exc
                time.sleep(0.2)
        raise ServerUnreachable(str(last_exc))

    def _count_bin(self, client, script: BinScript):
        bin_code = script.bin_code
        response = self._post(
            client,
            f"/sessions/{self.session_id}/bins/{bin_code}/start",
            {"at": script.virtual_start},
        )
        if response.status_code != 200:
            raise StalledBin(f"start {bin_code}: {response.status_code} {response.text}")
        reported_surplus: set[str] = set()
        for action in script.scans:
            event_id = f"{self.session_id}-{bin_code}-{action.hu_code}"
            body = {
                "session_id": self.session_id,
                "bin_code": bin_code,
                "event_id": event_id,
                "payload": self.warehouse.payload(action.hu_code),
                "at": action.at,
            }
            response = self._post(client, "/scans", body)
            if response.status_code != 200:
                raise StalledBin(
                    f"scan {action.hu_code} at {bin_code}: {response.status_code} {response.text}"
                )
            if action.duplicate:
                self.duplicates_sent += 1
                retry = self._post(client, "/scans", body)
                if retry.status_code != 200 or retry.json() != response.json():
                    raise StalledBin(f"idempotent retry diverged for {event_id}")
            if response.json()["classification"] in ("MISPLACED", "UNKNOWN"):
                reported_surplus.add(action.hu_code)
        scripted_surplus = {hu for hu, _ in script.acks}
        if reported_surplus != scripted_surplus:
            raise StalledBin(
                f"surplus mismatch at {bin_code}: server {sorted(reported_surplus)} "
                f"vs ground truth {sorted(scripted_surplus)}"
            )
        for hu, at in script.acks:
            response = self._post(
                client,
                f"/sessions/{self.session_id}/bins/{bin_code}/ack-surplus",
                {"hu_code": hu, "at": at},
            )
            if response.status_code != 200:
                raise StalledBin(f"ack {hu} at {bin_code}: {response.status_code} {response.text}")
        response = self._post(
            client,
            f"/sessions/{self.session_id}/bins/{bin_code}/signoff",
            {"at": script.virtual_end},
        )
        if response.status_code != 200:
            raise StalledBin(f"signoff {bin_code}: {response.status_code} {response.text}")
        self.sink.append(
            BinMetric(
                bin_code=bin_code,
                operator=self.operator_id,
                virtual_start=script.virtual_start,
                virtual_end=script.virtual_end,
                scans=len(script.scans),
                surplus=len(script.acks),
            )
        )


def run_count(
    server_url: str,
    config: SimConfig,
    warehouse: Warehouse,
    route_bin_lists: list[list[tuple[str, list[str]]]] | None = None,
    admin_token: str = "tok-admin",
) -> SimResult:
    """Drive a full count with config.operators concurrent scripted clients.

    Requires the reference to be imported already. When route_bin_lists is
    None the server's route plan for k=operators is used.
    """
    with httpx.Client(
        base_url=server_url, headers={"Authorization": f"Bearer {admin_token}"}, timeout=60.0
    ) as admin:
        try:
            response = admin.post("/sessions", json={})
        except httpx.TransportError as exc:
            raise ServerUnreachable(str(exc)) from exc
        if response.status_code != 200:
            raise ServerUnreachable(f"create session: {response.status_code} {response.text}")
        session_id = response.json()["session_id"]
        if route_bin_lists is None:
            response = admin.get(
                f"/sessions/{session_id}/route-plan", params={"k": config.operators}
            )
            if response.status_code != 200:
                raise ServerUnreachable(f"route plan: {response.status_code} {response.text}")
            plan = response.json()
            route_bin_lists = [
                [(b["bin_code"], b["batch_order"]) for b in op["bins"]]
                for op in plan["operators"]
            ]

        sink: list[BinMetric] = []
        tokens = operator_tokens(config.operators)
        threads = [
            _OperatorClient(
                server_url,
                tokens[i],
                f"op{i + 1:02d}",
                session_id,
                script_route(warehouse, route_bin_lists[i], i, config),
                warehouse,
                sink,
            )
            for i in range(config.operators)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for t in threads:
            if t.error is not None:
                raise t.error

        discrepancies = admin.get(f"/sessions/{session_id}/discrepancies").json()
        progress = admin.get(f"/sessions/{session_id}/progress").json()
        health = admin.get("/healthz").json()
    totals: dict[str, float] = {}
    for metric in sink:
        totals[metric.operator] = totals.get(metric.operator, 0.0) + metric.seconds
    return SimResult(
        session_id=session_id,
        bin_metrics=sink,
        operator_totals=totals,
        discrepancies=discrepancies,
        progress=progress,
        engine_seconds=health["engine_seconds"],
        duplicates_sent=sum(t.duplicates_sent for t in threads),
    )


def naive_route_lists(warehouse: Warehouse, k: int) -> list[list[tuple[str, list[str]]]]:
    """Baseline: bins in code order split into contiguous chunks, batches in
    reference storage order."""
    batch_order: dict[str, list[str]] = {}
    for bin_code, batch, _, _, _ in warehouse.rows:
        order = batch_order.setdefault(bin_code, [])
        if batch not in order:
            order.append(batch)
    bins = sorted(warehouse.physical)
    chunk = (len(bins) + k - 1) // k
    return [
        [(b, batch_order.get(b, [])) for b in bins[i * chunk : (i + 1) * chunk]]
        for i in range(k)
    ]


def expected_discrepancies(warehouse: Warehouse) -> dict:
    """The report a perfect count of this warehouse must produce."""
    surplus = sorted(
        (m.hu_code, m.to_bin, m.from_bin) for m in warehouse.misplaced
    )
    missing = sorted(
        [(m.hu_code, m.batch_code, m.from_bin) for m in warehouse.misplaced]
        + [(l.hu_code, l.batch_code, l.from_bin) for l in warehouse.lost],
        key=lambda r: (r[0], r[2]),
    )
    shortage: dict[str, int] = {}
    for _, batch, _ in missing:
        shortage[batch] = shortage.get(batch, 0) + 1
    return {
        "surplus": surplus,
        "missing": missing,
        "shortage_by_batch": dict(sorted(shortage.items())),
    }


def discrepancies_match(report: dict, warehouse: Warehouse) -> tuple[bool, str]:
    """Exact comparison of a /discrepancies payload against injected ground truth."""
    expected = expected_discrepancies(warehouse)
    got_surplus = sorted(
        (r["hu_code"], r["found_bin"], r["designated_bin"]) for r in report["surplus_units"]
    )
    if got_surplus != expected["surplus"]:
        return False, f"surplus mismatch: {len(got_surplus)} reported vs {len(expected['surplus'])} injected"
    got_missing = sorted(
        ((r["hu_code"], r["batch_code"], r["bin_code"]) for r in report["missing_units"]),
        key=lambda r: (r[0], r[2]),
    )
    if got_missing != expected["missing"]:
        return False, f"missing mismatch: {len(got_missing)} reported vs {len(expected['missing'])} injected"
    if report["shortage_by_batch"] != expected["shortage_by_batch"]:
        return False, "shortage_by_batch mismatch"
    return True, "exact match"


# --- CLIs ---------------------------------------------------------------------

@click.command()
@click.option("--bins", default=500, show_default=True)
@click.option("--batches", default=1000, show_default=True)
@click.option("--handling-units", default=37000, show_default=True)
@click.option("--operators", default=10, show_default=True)
@click.option("--misplace-rate", default=0.0, show_default=True)
@click.option("--skip-rate", default=0.0, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--skew-sigma", default=1.0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def simgen(bins, batches, handling_units, operators, misplace_rate, skip_rate, seed, skew_sigma, out_dir):
    """Generate reference.csv, ground_truth.json and credentials.txt."""
    config = SimConfig(
        bins=bins,
        batches=batches,
        handling_units=handling_units,
        operators=operators,
        misplace_rate=misplace_rate,
        skip_rate=skip_rate,
        skew_sigma=skew_sigma,
        seed=seed,
    )
    warehouse = generate_warehouse(config)
    out = write_warehouse(warehouse, out_dir)
    click.echo(
        f"wrote {out}/reference.csv ({len(warehouse.rows)} units, "
        f"{len(warehouse.physical)} bins, {len(warehouse.misplaced)} misplaced, "
        f"{len(warehouse.lost)} lost)"
    )


@click.command()
@click.option("--server", required=True, help="base URL, e.g. http://127.0.0.1:8000")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="ground_truth.json written by simgen")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--import-reference/--no-import-reference", default=True, show_default=True)
@click.option("--admin-token", default="tok-admin", show_default=True)
def simrun(server, config_path, out_path, import_reference, admin_token):
    """Run a full simulated count against a live server and write metrics CSV."""
    warehouse = load_ground_truth(config_path)
    if import_reference:
        with httpx.Client(
            base_url=server, headers={"Authorization": f"Bearer {admin_token}"}, timeout=120.0
        ) as admin:
            response = admin.post(
                "/reference",
                content=warehouse.reference_csv().encode("utf-8"),
                headers={"Content-Type": "text/csv"},
            )
            if response.status_code != 200:
                raise ServerUnreachable(f"import: {response.status_code} {response.text}")
    result = run_count(server, warehouse.config, warehouse)
    Path(out_path).write_text(result.metrics_csv(), encoding="utf-8")
    ok, detail = discrepancies_match(result.discrepancies, warehouse)
    click.echo(
        f"session {result.session_id}: {len(result.bin_metrics)} bins counted, "
        f"engine {result.engine_seconds:.2f}s, discrepancies {detail}"
    )
    if not ok:
        raise SystemExit(1)
