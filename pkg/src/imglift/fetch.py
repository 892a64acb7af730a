"""Small HTTP fetch helper shared by the prober, proxy, and analyzer."""

from __future__ import annotations

import socket
import urllib.error
import urllib.request
from dataclasses import dataclass, field

from .errors import ImgliftError

USER_AGENT = "imglift/0.1"


class FetchError(ImgliftError):
    """Transport-level failure after exhausting retries."""


@dataclass
class FetchResult:
    url: str
    status: int
    body: bytes
    headers: dict = field(default_factory=dict)

    @property
    def content_type(self) -> str:
        return self.headers.get("content-type", "").split(";")[0].strip().lower()


def http_fetch(url: str, timeout: float = 10.0, retries: int = 1,
               method: str = "GET", headers: dict | None = None,
               data: bytes | None = None) -> FetchResult:
    """GET/HEAD/POST a URL with one retry on timeout by default.

    Upstream bodies are requested without content coding so byte counts
    are comparable across variants.
    """
    req_headers = {"User-Agent": USER_AGENT, "Accept-Encoding": "identity"}
    if headers:
        req_headers.update(headers)
    last_exc: Exception | None = None
    for _ in range(retries + 1):
        req = urllib.request.Request(url, headers=req_headers, method=method, data=data)
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                body = b"" if method == "HEAD" else resp.read()
                hdrs = {k.lower(): v for k, v in resp.headers.items()}
                return FetchResult(url=url, status=resp.status, body=body, headers=hdrs)
        except urllib.error.HTTPError as exc:
            # A status line counts as an answer, not a transport failure.
            body = exc.read() if method != "HEAD" else b""
            hdrs = {k.lower(): v for k, v in exc.headers.items()} if exc.headers else {}
            return FetchResult(url=url, status=exc.code, body=body, headers=hdrs)
        except (urllib.error.URLError, socket.timeout, ConnectionError, OSError) as exc:
            last_exc = exc
            is_timeout = isinstance(exc, (socket.timeout, TimeoutError)) or isinstance(
                getattr(exc, "reason", None), (socket.timeout, TimeoutError)
            )
            if not is_timeout:
                break
    raise FetchError(f"fetch failed for {url}: {last_exc}")
