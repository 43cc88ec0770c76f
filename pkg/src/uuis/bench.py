"""Desk-scale load harness.

Drives a running gateway with a seeded population of simulated users and a
weighted operation mix, then reports latency percentiles per operation and
error counts.  Production-scale figures are not reproducible on a desk:
the shipped scenario substitutes 100 concurrent / 5,000 registered for the
1,000 / 50,000 targets (a documented 10x scaling factor) while keeping the
latency budgets: reads p95 within 1 s and never above 4 s, writes within
10 s.

The request sequence of every simulated client is derived from the scenario
seed alone, so two runs of the same scenario issue identical sequences.
"""

from __future__ import annotations

import argparse
import csv
import random
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .core.errors import ValidationError

BENCH_PASSWORD = "BenchPass1"

READ_OPS = ("search_assets", "view_asset", "view_account", "search_requests")
WRITE_OPS = ("submit_general", "update_asset_status")
ALL_OPS = READ_OPS + WRITE_OPS

OPS_PER_CLIENT_PER_SECOND = 5


@dataclass(frozen=True)
class ScenarioSpec:
    registered_users: int
    concurrent_users: int
    duration_seconds: float
    mix: dict
    seed: int

    def __post_init__(self):
        if abs(sum(self.mix.values()) - 1.0) > 1e-6:
            raise ValidationError("validation-error", "mix weights must sum to 1")
        unknown = set(self.mix) - set(ALL_OPS)
        if unknown:
            raise ValidationError("validation-error", f"unknown operations: {sorted(unknown)}")

    @classmethod
    def load(cls, path: str) -> "ScenarioSpec":
        values = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        mix = {}
        for part in values.get("mix", "").split(","):
            name, _, weight = part.strip().partition(":")
            if name:
                mix[name] = float(weight)
        return cls(
            registered_users=int(values.get("registered_users", 100)),
            concurrent_users=int(values.get("concurrent_users", 10)),
            duration_seconds=float(values.get("duration_seconds", 10)),
            mix=mix,
            seed=int(values.get("seed", 1)),
        )


@dataclass
class LatencyReport:
    samples: dict = field(default_factory=dict)   # op -> sorted [ms]
    errors: dict = field(default_factory=dict)    # code -> count
    issued: int = 0

    def record(self, op: str, ms: float):
        self.samples.setdefault(op, []).append(ms)

    def record_error(self, code: str):
        self.errors[code] = self.errors.get(code, 0) + 1

    @property
    def successes(self) -> int:
        return sum(len(v) for v in self.samples.values())

    def percentile(self, op: str, q: float) -> float:
        """Nearest-rank percentile over one operation (q in 0..100)."""
        values = sorted(self.samples.get(op, []))
        if not values:
            return 0.0
        rank = max(1, int(round(q / 100 * len(values) + 0.5)))
        return values[min(rank, len(values)) - 1]

    def aggregate(self, ops) -> list:
        out = []
        for op in ops:
            out.extend(self.samples.get(op, []))
        return sorted(out)

    def to_text(self) -> str:
        lines = [f"{'operation':<22}{'count':>7}{'p50':>9}{'p95':>9}{'p99':>9}{'max':>9}"]
        for op in sorted(self.samples):
            values = sorted(self.samples[op])
            lines.append(
                f"{op:<22}{len(values):>7}"
                f"{self.percentile(op, 50):>9.1f}{self.percentile(op, 95):>9.1f}"
                f"{self.percentile(op, 99):>9.1f}{values[-1]:>9.1f}"
            )
        lines.append(f"issued={self.issued} ok={self.successes} "
                     f"errors={sum(self.errors.values())}")
        for code in sorted(self.errors):
            lines.append(f"  error {code}: {self.errors[code]}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["operation", "count", "p50_ms", "p95_ms", "p99_ms", "max_ms"])
            for op in sorted(self.samples):
                values = sorted(self.samples[op])
                writer.writerow([op, len(values),
                                 f"{self.percentile(op, 50):.2f}",
                                 f"{self.percentile(op, 95):.2f}",
                                 f"{self.percentile(op, 99):.2f}",
                                 f"{values[-1]:.2f}"])
            for code in sorted(self.errors):
                writer.writerow(["error:" + code, self.errors[code], "", "", "", ""])


def build_schedule(spec: ScenarioSpec) -> list:
    """Per-client operation sequences, a pure function of the scenario."""
    ops = sorted(spec.mix)
    weights = [spec.mix[o] for o in ops]
    per_client = max(1, int(spec.duration_seconds * OPS_PER_CLIENT_PER_SECOND))
    schedule = []
    for client_index in range(spec.concurrent_users):
        rng = random.Random(f"{spec.seed}:{client_index}")
        schedule.append(rng.choices(ops, weights=weights, k=per_client))
    return schedule


def prepare_fixture(service, spec: ScenarioSpec, asset_count: int = 200) -> dict:
    """Seed users and inventory directly; the harness itself stays a pure
    HTTP client afterwards."""
    from .core.auth import hash_password

    store = service.store
    existing = {u["username"] for _, u in store.iter_records("user")}
    password_hash = hash_password(BENCH_PASSWORD, service.config.hash_iterations)
    with store.transaction("system") as txn:
        for i in range(spec.registered_users):
            username = f"bench{i:05d}"
            if username in existing:
                continue
            user_id = txn.next_id()
            txn.insert("user", user_id, {
                "user_id": user_id, "username": username,
                "password_hash": password_hash,
                "first_name": "Bench", "last_name": f"User{i}",
                "email": f"{username}@iufa.example", "home_address": None, "phone": None,
                "role": 2, "role_id": None, "faculty": "F", "department": "D1",
                "active": True,
            })
        building_id = txn.next_id()
        floor_id = txn.next_id()
        txn.insert("building", building_id, {
            "building_id": building_id, "name": "Bench Hall", "address": "1 Bench Way",
            "state": "Committed",
            "floors": [{"floor_id": floor_id, "number_or_name": "G", "area": 1000.0}],
        })
        location_id = txn.next_id()
        txn.insert("location", location_id, {
            "location_id": location_id, "floor_id": floor_id, "building_id": building_id,
            "number": "001", "area": 1000.0, "location_type": "Room",
            "faculty": "F", "department": "D1", "available": True, "lab_head": None,
        })
        asset_ids = []
        for i in range(asset_count):
            asset_id = txn.next_id()
            txn.insert("asset", asset_id, {
                "asset_id": asset_id, "barcode": f"BENCH-{i:06d}", "owner_faculty": "F",
                "purchase_req_no": None, "purchase_order_no": None, "legacy_code": None,
                "date_purchased": None, "warranty_expiration": None,
                "location": location_id, "group_id": None,
                "manufacturer": "Bench", "model": "M1", "category": "Furniture",
                "status": "In-stock",
                "detail": {"furniture_type": "Table", "dimension": None, "color": None,
                           "finish": None, "storage": None},
            })
            asset_ids.append(asset_id)
    return {"asset_ids": asset_ids, "location_id": location_id}


class _Client:
    def __init__(self, target: str, username: str, schedule: list, rng: random.Random,
                 transport=None):
        self.http = httpx.Client(base_url=target, transport=transport, timeout=30.0)
        self.username = username
        self.schedule = schedule
        self.rng = rng
        self.asset_ids: list = []

    def solve_captcha(self) -> dict:
        challenge = self.http.get("/api/v1/captcha").json()
        return {"challenge_id": challenge["challenge_id"],
                "answer": challenge["prompt"].rsplit(" ", 1)[-1]}

    def login(self):
        captcha = self.solve_captcha()
        response = self.http.post("/api/v1/sessions", json={
            "username": self.username, "password": BENCH_PASSWORD,
            "captcha_challenge_id": captcha["challenge_id"],
            "captcha_text": captcha["answer"]})
        response.raise_for_status()

    def get_throttled(self, path: str, params=None) -> httpx.Response:
        response = self.http.get(path, params=params)
        if response.status_code == 429:
            captcha = self.solve_captcha()
            response = self.http.get(path, params=params, headers={
                "X-Captcha-Challenge": captcha["challenge_id"],
                "X-Captcha-Answer": captcha["answer"]})
        return response

    def confirmed_mutation(self, method: str, path: str, body: dict) -> httpx.Response:
        first = self.http.request(method, path, json=body)
        if first.status_code != 428:
            return first
        token = first.json()["confirm_token"]
        return self.http.request(method, path, json={**body, "confirm_token": token})

    def run_op(self, op: str) -> httpx.Response:
        if op == "search_assets":
            response = self.get_throttled("/api/v1/assets", params={"page_size": 25})
            if response.status_code == 200 and not self.asset_ids:
                self.asset_ids = [r["asset_id"] for r in response.json()["rows"]]
            return response
        if op == "view_asset":
            if not self.asset_ids:
                return self.get_throttled("/api/v1/assets", params={"page_size": 25})
            asset_id = self.rng.choice(self.asset_ids)
            return self.http.get(f"/api/v1/assets/{asset_id}")
        if op == "view_account":
            return self.http.get("/api/v1/account")
        if op == "search_requests":
            return self.get_throttled("/api/v1/requests")
        if op == "submit_general":
            return self.confirmed_mutation("POST", "/api/v1/requests", {
                "category": "general_technical",
                "description": f"bench report {self.rng.randrange(10**6)}"})
        if op == "update_asset_status":
            if not self.asset_ids:
                return self.get_throttled("/api/v1/assets", params={"page_size": 25})
            asset_id = self.rng.choice(self.asset_ids)
            status = self.rng.choice(("In-stock", "Assigned", "In-repair"))
            return self.confirmed_mutation("PATCH", f"/api/v1/assets/{asset_id}",
                                           {"status": status})
        raise ValueError(op)


def run_scenario(spec: ScenarioSpec, target: str, transport=None) -> LatencyReport:
    schedule = build_schedule(spec)
    report = LatencyReport()
    lock = threading.Lock()
    deadline = time.monotonic() + spec.duration_seconds * 10  # hard safety stop

    def worker(index: int):
        client = _Client(target, f"bench{index % spec.registered_users:05d}",
                         schedule[index], random.Random(f"{spec.seed}:{index}:state"),
                         transport=transport)
        try:
            client.login()
            for op in client.schedule:
                if time.monotonic() > deadline:
                    break
                started = time.perf_counter()
                try:
                    response = client.run_op(op)
                    elapsed = (time.perf_counter() - started) * 1000
                    with lock:
                        report.issued += 1
                        if response.status_code < 400:
                            report.record(op, elapsed)
                        else:
                            report.record_error(str(response.status_code))
                except httpx.HTTPError:
                    with lock:
                        report.issued += 1
                        report.record_error("transport")
        finally:
            client.http.close()

    threads = [threading.Thread(target=worker, args=(i,))
               for i in range(spec.concurrent_users)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="uuis-bench",
                                     description="UUIS load harness")
    parser.add_argument("--scenario", required=True, help="key=value scenario file")
    parser.add_argument("--target", required=True, help="service base URL")
    parser.add_argument("--out", help="write the per-operation report as CSV")
    args = parser.parse_args(argv)
    spec = ScenarioSpec.load(args.scenario)
    report = run_scenario(spec, args.target)
    sys.stdout.write(report.to_text())
    if args.out:
        report.write_csv(args.out)
    return 0 if not report.errors else 1


if __name__ == "__main__":
    raise SystemExit(main())
