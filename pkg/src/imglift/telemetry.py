"""Performance record collection, JSON-lines persistence, and push.

Records carry monotonic + wall timestamps and one of three payload
kinds: per-image lift metrics, per-request transfer records, or 1 Hz
resource samples. The collector is a bounded buffer with a documented
drop priority: under pressure Resource samples go first, Lift and
Transfer records are never dropped.
"""

from __future__ import annotations

import json
import math
import threading
import time
import urllib.request
import uuid
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable

SCHEMA_VERSION = 1

KIND_LIFT = "lift"
KIND_TRANSFER = "transfer"
KIND_RESOURCE = "resource"


@dataclass
class LiftMetrics:
    """One image's trip through preprocess -> infer -> postprocess."""

    job_id: str
    model: str
    preprocess_ms: float
    inference_ms: float
    postprocess_ms: float
    total_ms: float
    input_bytes: int
    output_pixels: int
    psnr: float | None = None
    ssim: float | None = None
    reference_adjusted: bool = False


@dataclass
class TransferRecord:
    """One proxied request's verdict and byte accounting."""

    url: str
    verdict: str  # "rewritten" | "passthrough" | "lift_failed"
    bytes_original_estimate: int = 0
    bytes_transferred: int = 0
    estimate_flag: bool = False  # original size estimated, not measured
    lift_id: str | None = None


@dataclass
class ResourceSample:
    cpu_percent: float
    rss_bytes: int


_PAYLOADS = {KIND_LIFT: LiftMetrics, KIND_TRANSFER: TransferRecord, KIND_RESOURCE: ResourceSample}


@dataclass
class TelemetryRecord:
    kind: str
    payload: object
    t_mono: float = field(default_factory=time.monotonic)
    t_wall: float = field(default_factory=time.time)

    def to_json(self) -> str:
        p = asdict(self.payload)
        if p.get("psnr") is not None and math.isinf(p["psnr"]):
            p["psnr"] = "inf"  # keeps the line valid strict JSON
        return json.dumps(
            {"v": SCHEMA_VERSION, "kind": self.kind, "t_mono": self.t_mono,
             "t_wall": self.t_wall, "payload": p},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "TelemetryRecord":
        obj = json.loads(line)
        if obj.get("v") != SCHEMA_VERSION:
            raise ValueError(f"unsupported telemetry schema version {obj.get('v')}")
        kind = obj["kind"]
        payload = dict(obj["payload"])
        if payload.get("psnr") == "inf":
            payload["psnr"] = math.inf
        return cls(kind=kind, payload=_PAYLOADS[kind](**payload),
                   t_mono=obj["t_mono"], t_wall=obj["t_wall"])


class TelemetryCollector:
    """Bounded, thread-safe record buffer.

    At capacity, the oldest Resource sample is evicted to admit a new
    record; an incoming Resource sample is dropped instead when nothing
    is evictable. Lift/Transfer records are always admitted.
    """

    def __init__(self, capacity: int = 10000):
        self.capacity = capacity
        self._buf: deque[TelemetryRecord] = deque()
        self._lock = threading.Lock()
        self._last_mono: dict[str, float] = {}
        self.dropped_resource = 0

    def record(self, kind: str, payload) -> None:
        rec = TelemetryRecord(kind=kind, payload=payload)
        with self._lock:
            # per-stream monotonicity guard: clamp clock oddities
            last = self._last_mono.get(kind)
            if last is not None and rec.t_mono < last:
                rec.t_mono = last
            self._last_mono[kind] = rec.t_mono
            if len(self._buf) >= self.capacity:
                evicted = False
                for i, old in enumerate(self._buf):
                    if old.kind == KIND_RESOURCE:
                        del self._buf[i]
                        self.dropped_resource += 1
                        evicted = True
                        break
                if not evicted and kind == KIND_RESOURCE:
                    self.dropped_resource += 1
                    return
            self._buf.append(rec)

    def __len__(self) -> int:
        with self._lock:
            return len(self._buf)

    def snapshot(self) -> list[TelemetryRecord]:
        with self._lock:
            return list(self._buf)

    def drain(self) -> list[TelemetryRecord]:
        with self._lock:
            out = list(self._buf)
            self._buf.clear()
            return out

    def requeue(self, records: list[TelemetryRecord]) -> None:
        """Put undelivered records back at the front, preserving order."""
        with self._lock:
            self._buf.extendleft(reversed(records))

    def flush(self, sink: IO[str]) -> int:
        """Append drained records to a text sink; returns records written."""
        records = self.drain()
        for rec in records:
            sink.write(rec.to_json() + "\n")
        return len(records)


def read_records(lines: Iterable[str]) -> list[TelemetryRecord]:
    return [TelemetryRecord.from_json(ln) for ln in lines if ln.strip()]


@dataclass
class PushResult:
    delivered: bool
    attempts: int
    idempotency_key: str
    error: str | None = None


def push(collector: TelemetryCollector, endpoint: str, timeout: float = 5.0,
         max_attempts: int = 3, backoff_s: float = 0.1) -> PushResult:
    """POST the current batch with an idempotency key; at-least-once.

    On failure the batch is retried with capped backoff and, if still
    undelivered, re-queued locally so nothing is lost.
    """
    records = collector.drain()
    if not records:
        return PushResult(True, 0, "")
    key = str(uuid.uuid4())
    body = "\n".join(r.to_json() for r in records).encode("utf-8")
    last_err = None
    for attempt in range(1, max_attempts + 1):
        req = urllib.request.Request(
            endpoint, data=body, method="POST",
            headers={"Content-Type": "application/x-ndjson",
                     "X-Idempotency-Key": key,
                     "X-Schema-Version": str(SCHEMA_VERSION)},
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                if 200 <= resp.status < 300:
                    return PushResult(True, attempt, key)
                last_err = f"status {resp.status}"
        except Exception as exc:
            last_err = str(exc)
        if attempt < max_attempts:
            time.sleep(min(backoff_s * (2 ** (attempt - 1)), 2.0))
    collector.requeue(records)  # retained locally; a later push retries them
    return PushResult(False, max_attempts, key, error=last_err)


class ResourceSampler:
    """Samples process CPU% and RSS every interval on a daemon thread."""

    def __init__(self, collector: TelemetryCollector, interval_s: float = 1.0):
        self.collector = collector
        self.interval_s = interval_s
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self):
        try:
            import psutil

            self._proc = psutil.Process()
            self._proc.cpu_percent(interval=None)  # prime the counter
        except Exception:
            self._proc = None
        self._thread = threading.Thread(target=self._run, name="imglift-resource", daemon=True)
        self._thread.start()

    def _sample(self) -> ResourceSample:
        if self._proc is not None:
            return ResourceSample(
                cpu_percent=self._proc.cpu_percent(interval=None),
                rss_bytes=self._proc.memory_info().rss,
            )
        import resource

        usage = resource.getrusage(resource.RUSAGE_SELF)
        return ResourceSample(cpu_percent=0.0, rss_bytes=usage.ru_maxrss * 1024)

    def _run(self):
        while not self._stop.wait(self.interval_s):
            try:
                self.collector.record(KIND_RESOURCE, self._sample())
            except Exception:
                pass

    def stop(self):
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=2.0)
