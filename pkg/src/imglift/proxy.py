"""Forward HTTP proxy that swaps full-size images for lifted ones.

Image requests whose URL matches a resize pattern are rewritten to a
downscaled variant, fetched, restored to the originally requested
dimensions through the lift pipeline, and re-encoded. Anything the
proxy cannot improve is relayed byte-identically. CONNECT tunnels pass
through un-inspected; HTTPS content can use the explicit lift API at
/_lift/lift instead.
"""

from __future__ import annotations

import json
import select
import socket
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import telemetry as tele
from .engine import resolve_model
from .errors import NoReductionError
from .fetch import FetchError, FetchResult, http_fetch
from .image import decode, encode
from .patterns import PatternRegistry, default_registry, detect, load_registry, rewrite
from .pipeline import LiftPipeline, PipelineConfig

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".gif", ".webp", ".avif", ".bmp")
HOP_BY_HOP = {
    "connection", "proxy-connection", "keep-alive", "te", "trailers",
    "transfer-encoding", "upgrade", "proxy-authorization", "proxy-authenticate",
}


class ProxyMode(str, Enum):
    LIFT = "lift"
    PASSTHROUGH = "passthrough"
    MEASURE = "measure"


class Verdict(str, Enum):
    REWRITTEN = "rewritten"
    PASSTHROUGH = "passthrough"
    LIFT_FAILED = "lift_failed"


@dataclass
class ProxyConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8088
    target_width: int = 200
    viewport: tuple[int, int] = (393, 852)
    model: str = "bilinear_x4"
    mode: ProxyMode = ProxyMode.LIFT
    metrics_push_url: str | None = None
    patterns_file: str | None = None
    max_concurrent: int = 2
    upstream_timeout: float = 15.0
    quiescence_s: float = 2.0
    jpeg_quality: int = 85

    def __post_init__(self):
        if self.target_width >= self.viewport[0]:
            raise ValueError(
                f"target width {self.target_width} must be below viewport width {self.viewport[0]}"
            )


class _LiftFallback(Exception):
    """Internal: abandon the rewrite path and serve the original."""


@dataclass
class _Outcome:
    status: int
    headers: dict
    body: bytes
    verdict: Verdict
    record: tele.TransferRecord | None = None


class LiftProxy:
    """Proxy state shared across handler threads."""

    def __init__(self, config: ProxyConfig | None = None,
                 registry: PatternRegistry | None = None):
        self.config = config or ProxyConfig()
        if registry is not None:
            self.registry = registry
        elif self.config.patterns_file:
            with open(self.config.patterns_file) as f:
                self.registry = load_registry(f.read())
        else:
            self.registry = default_registry()
        self.collector = tele.TelemetryCollector()
        model = resolve_model(self.config.model)
        self.pipeline = LiftPipeline(
            model=model,
            config=PipelineConfig(max_concurrent=self.config.max_concurrent),
            collector=self.collector,
        )
        self.scale_factor = model.scale_factor
        self._lock = threading.Lock()
        self.counters = {"requests": 0, "rewritten": 0, "passthrough": 0, "lift_failed": 0}
        self.transfers: list[tele.TransferRecord] = []
        self.lifts: list[tele.LiftMetrics] = []
        self._last_request = time.monotonic()
        self._activity_since_push = False
        self._server: ThreadingHTTPServer | None = None
        self._pusher: threading.Thread | None = None
        self._stop = threading.Event()

    # -- accounting ----------------------------------------------------------

    def note_request(self):
        with self._lock:
            self.counters["requests"] += 1
            self._last_request = time.monotonic()
            self._activity_since_push = True

    def note_outcome(self, outcome: _Outcome):
        rec = outcome.record
        if rec is None:
            return
        with self._lock:
            self.counters[outcome.verdict.value] = self.counters.get(outcome.verdict.value, 0) + 1
            self.transfers.append(rec)
        self.collector.record(tele.KIND_TRANSFER, rec)

    def note_lift(self, metrics: tele.LiftMetrics):
        with self._lock:
            self.lifts.append(metrics)

    def bytes_saved(self) -> int:
        with self._lock:
            return sum(
                max(0, t.bytes_original_estimate - t.bytes_transferred)
                for t in self.transfers
                if t.verdict == Verdict.REWRITTEN.value
            )

    def metrics_snapshot(self) -> dict:
        """The pull-endpoint payload; also what push POSTs."""
        with self._lock:
            counters = dict(self.counters)
            transfers = [tele.TelemetryRecord(tele.KIND_TRANSFER, t).to_json() for t in self.transfers]
            lifts = [tele.TelemetryRecord(tele.KIND_LIFT, m).to_json() for m in self.lifts]
        return {
            "schema_version": tele.SCHEMA_VERSION,
            "counters": counters,
            "bytes_saved": self.bytes_saved(),
            "transfers": [json.loads(t) for t in transfers],
            "lifts": [json.loads(m) for m in lifts],
        }

    # -- core flows ----------------------------------------------------------

    def relay(self, url: str, method: str = "GET", verdict: Verdict = Verdict.PASSTHROUGH,
              extra_transferred: int = 0, as_failed: bool = False,
              data: bytes | None = None) -> _Outcome:
        res = http_fetch(url, timeout=self.config.upstream_timeout, retries=1,
                         method=method, data=data)
        n = len(res.body)
        record = tele.TransferRecord(
            url=url,
            verdict=(Verdict.LIFT_FAILED if as_failed else verdict).value,
            bytes_original_estimate=n,
            bytes_transferred=n + extra_transferred,
        )
        return _Outcome(res.status, res.headers, res.body,
                        Verdict.LIFT_FAILED if as_failed else verdict, record)

    def estimate_original_bytes(self, url: str, fetched_bytes: int,
                                fetched_width: int, original_width: int) -> tuple[int, bool]:
        """HEAD for Content-Length, else upscale-ratio^2 extrapolation."""
        try:
            head = http_fetch(url, timeout=self.config.upstream_timeout, retries=0, method="HEAD")
            length = head.headers.get("content-length")
            if head.status == 200 and length and int(length) > 0:
                return int(length), False
        except (FetchError, ValueError):
            pass
        ratio = original_width / max(1, fetched_width)
        return int(round(fetched_bytes * ratio * ratio)), True

    def lift_flow(self, url: str) -> _Outcome:
        """Rewrite -> fetch small -> lift -> re-encode, with fallbacks."""
        m = detect(url, self.registry)
        if m is None:
            return self.relay(url)
        try:
            small_url = rewrite(url, m, self.config.target_width, self.registry)
        except NoReductionError:
            return self.relay(url)

        transferred = 0
        try:
            res = http_fetch(small_url, timeout=self.config.upstream_timeout, retries=1)
            transferred = len(res.body)
            if res.status != 200 or not res.body:
                raise _LiftFallback(f"variant fetch status {res.status}")
            try:
                small = decode(res.body)
            except Exception as exc:
                raise _LiftFallback(f"variant not decodable: {exc}") from exc

            if small.width > self.config.target_width + 1:
                # origin ignored the width parameter; it sent the original
                record = tele.TransferRecord(
                    url=url, verdict=Verdict.PASSTHROUGH.value,
                    bytes_original_estimate=transferred, bytes_transferred=transferred,
                )
                return _Outcome(res.status, res.headers, res.body, Verdict.PASSTHROUGH, record)

            if m.original_width is not None:
                target_w = m.original_width
                target_h = max(1, round(small.height * target_w / small.width))
            else:
                target_w = small.width * self.scale_factor
                target_h = small.height * self.scale_factor

            result = self.pipeline.submit(res.body, target_dims=(target_w, target_h)).result(timeout=120)
            if not result.ok:
                raise _LiftFallback(f"lift failed: {result.job.error}")
            if result.metrics is not None:
                self.note_lift(result.metrics)

            has_alpha = result.image.channels == 4
            body = encode(result.image, "png" if has_alpha else "jpeg",
                          quality=self.config.jpeg_quality)
            estimate, estimated = self.estimate_original_bytes(
                url, transferred, small.width, target_w)
            record = tele.TransferRecord(
                url=url, verdict=Verdict.REWRITTEN.value,
                bytes_original_estimate=max(estimate, transferred),
                bytes_transferred=transferred,
                estimate_flag=estimated,
                lift_id=result.job.job_id,
            )
            headers = {
                "content-type": "image/png" if has_alpha else "image/jpeg",
                "content-length": str(len(body)),
                "x-imglift": f"lifted {small.width}x{small.height} -> {target_w}x{target_h}",
            }
            return _Outcome(200, headers, body, Verdict.REWRITTEN, record)
        except _LiftFallback:
            return self.relay(url, extra_transferred=transferred, as_failed=True)
        except FetchError:
            return self.relay(url, extra_transferred=transferred, as_failed=True)

    def handle(self, url: str, method: str, headers,
               body: bytes | None = None) -> _Outcome:
        self.note_request()
        if method == "GET" and self.config.mode is ProxyMode.LIFT \
                and looks_like_image(url, headers):
            return self.lift_flow(url)
        if method == "GET" and self.config.mode is ProxyMode.MEASURE \
                and looks_like_image(url, headers):
            # traffic untouched; count how many images a Lift run would touch
            if detect(url, self.registry) is not None:
                with self._lock:
                    self.counters["measure_matches"] = self.counters.get("measure_matches", 0) + 1
            return self.relay(url)
        return self.relay(url, method=method, data=body)

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> tuple[str, int]:
        handler = _make_handler(self)
        self._server = ThreadingHTTPServer(
            (self.config.listen_host, self.config.listen_port), handler)
        self._server.daemon_threads = True
        t = threading.Thread(target=self._server.serve_forever, daemon=True)
        t.start()
        if self.config.metrics_push_url:
            self._pusher = threading.Thread(target=self._push_loop, daemon=True)
            self._pusher.start()
        return self._server.server_address[:2]

    def serve_forever(self):
        host, port = self.start()
        try:
            while not self._stop.wait(0.5):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def _push_loop(self):
        """POST the metrics snapshot after each page-quiescence window."""
        while not self._stop.wait(0.25):
            with self._lock:
                quiet = time.monotonic() - self._last_request >= self.config.quiescence_s
                due = self._activity_since_push and quiet
                if due:
                    self._activity_since_push = False
            if due:
                try:
                    payload = json.dumps(self.metrics_snapshot()).encode()
                    import urllib.request

                    req = urllib.request.Request(
                        self.config.metrics_push_url, data=payload, method="POST",
                        headers={"Content-Type": "application/json"},
                    )
                    urllib.request.urlopen(req, timeout=5.0).read()
                except Exception:
                    with self._lock:
                        self._activity_since_push = True  # retry next window

    def stop(self):
        self._stop.set()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        self.pipeline.close()


def looks_like_image(url: str, headers) -> bool:
    path = urlparse(url).path.lower()
    if path.endswith(IMAGE_EXTENSIONS):
        return True
    accept = ""
    if headers is not None:
        accept = (headers.get("Accept") or "").lower()
    return accept.startswith("image/")


def _make_handler(proxy: LiftProxy):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, headers: dict, body: bytes):
            self.send_response(status)
            sent = set()
            for k, v in headers.items():
                lk = k.lower()
                if lk in HOP_BY_HOP or lk == "content-length":
                    continue
                self.send_header(k, v)
                sent.add(lk)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _local_api(self):
            parsed = urlparse(self.path)
            if parsed.path == "/_lift/metrics":
                body = json.dumps(proxy.metrics_snapshot(), sort_keys=True).encode()
                self._send(200, {"Content-Type": "application/json"}, body)
                return
            if parsed.path == "/_lift/lift":
                qs = parse_qs(parsed.query)
                url = (qs.get("url") or [None])[0]
                if url is None and self.command == "POST":
                    length = int(self.headers.get("Content-Length") or 0)
                    try:
                        payload = json.loads(self.rfile.read(length) or b"{}")
                        url = payload.get("url")
                    except json.JSONDecodeError:
                        url = None
                if not url:
                    self._send(400, {"Content-Type": "text/plain"}, b"missing url")
                    return
                proxy.note_request()
                outcome = proxy.lift_flow(url)
                proxy.note_outcome(outcome)
                self._send(outcome.status, outcome.headers, outcome.body)
                return
            if parsed.path == "/_lift/health":
                self._send(200, {"Content-Type": "text/plain"}, b"ok")
                return
            self._send(404, {"Content-Type": "text/plain"}, b"unknown endpoint")

        def _forward(self):
            url = self.path
            if url.startswith("/"):
                self._local_api()
                return
            try:
                outcome = proxy.handle(url, self.command, self.headers)
            except FetchError as exc:
                proxy.note_outcome(_Outcome(0, {}, b"", Verdict.PASSTHROUGH, None))
                self._send(502, {"Content-Type": "text/plain"},
                           f"upstream failure: {exc}".encode())
                return
            proxy.note_outcome(outcome)
            self._send(outcome.status, outcome.headers, outcome.body)

        do_GET = _forward
        do_HEAD = _forward
        do_POST = _forward

        def do_CONNECT(self):
            host, _, port = self.path.partition(":")
            proxy.note_request()
            try:
                remote = socket.create_connection(
                    (host, int(port or "443")), timeout=proxy.config.upstream_timeout)
            except OSError as exc:
                self.send_error(502, f"cannot reach {self.path}: {exc}")
                return
            self.send_response(200, "Connection Established")
            self.end_headers()
            self._tunnel(self.connection, remote)

        def _tunnel(self, client: socket.socket, remote: socket.socket):
            # un-inspected byte relay until either side closes
            sockets = [client, remote]
            try:
                while True:
                    readable, _, _ = select.select(sockets, [], [], 30.0)
                    if not readable:
                        break
                    for s in readable:
                        data = s.recv(65536)
                        if not data:
                            return
                        (remote if s is client else client).sendall(data)
            except OSError:
                pass
            finally:
                remote.close()

    return Handler
