"""Resize-capable URL detection, rewriting, and server support probing.

A registry of regular-expression patterns recognizes width tokens
embedded in image URLs (query parameters, path segments, dimension
pairs). Rewriting splices a numeric target width into the capture span,
so detect -> rewrite -> detect always round-trips to the target width.
"""

from __future__ import annotations

import csv
import io
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence
from urllib.parse import urlparse

from .errors import ConfigError, NoReductionError
from .fetch import FetchResult, http_fetch
from .image import decode

# id <TAB> match_expr <TAB> rewrite_template [<TAB> prevalence]
DEFAULT_PATTERNS_TEXT = """\
# Built-in resize patterns, first match wins.
# The match expression must contain exactly one capture group: the width
# token. The template splices a numeric width into the capture span.
width_query\t(?:[?&])width=(\\d+)(?=[&#]|$)\t{prefix}{width}{suffix}\t0.465
q_w\t(?:[?&])q=w_(\\d+)(?=[&#]|$)\t{prefix}{width}{suffix}\t0.213
w_suffix\t_(\\d+)w(?=\\.[A-Za-z]{3,4}(?:[?#]|$)|[?#]|$)\t{prefix}{width}{suffix}\t0.174
resize_path\t/resize/(small|medium|large|\\d+)(?=[/?#]|$)\t{prefix}{width}{suffix}
dims_pair\t(?<![0-9x])(\\d{2,4})x\\d{2,4}(?![0-9x])\t{prefix}{width}{suffix}
w_path\t/w_(\\d+)(?=[/.]|$)\t{prefix}{width}{suffix}
width_any\t\\bwidth=(\\d+)\t{prefix}{width}{suffix}
"""


@dataclass(frozen=True)
class ResizePattern:
    id: str
    match_expr: str
    rewrite_template: str
    prevalence: float | None = None

    def compile(self) -> re.Pattern:
        return re.compile(self.match_expr)


class PatternRegistry:
    """Ordered, immutable collection of compiled patterns (order = priority)."""

    def __init__(self, patterns: Sequence[ResizePattern]):
        self._patterns = tuple(patterns)
        self._compiled = tuple(p.compile() for p in self._patterns)

    def __len__(self) -> int:
        return len(self._patterns)

    def __iter__(self):
        return iter(self._patterns)

    def __getitem__(self, pattern_id: str) -> ResizePattern:
        for p in self._patterns:
            if p.id == pattern_id:
                return p
        raise KeyError(pattern_id)

    @property
    def patterns(self) -> tuple:
        return self._patterns

    def compiled(self, index: int) -> re.Pattern:
        return self._compiled[index]


@dataclass(frozen=True)
class PatternMatch:
    pattern_id: str
    original_width: int | None  # None for named-size tokens (small/medium/large)
    match_span: tuple[int, int]  # capture-group offsets into the URL


class SupportStatus(str, Enum):
    SUPPORTED = "supported"
    UNSUPPORTED = "unsupported"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SupportProbe:
    url: str
    status: SupportStatus
    original_bytes: int | None = None
    rewritten_bytes: int | None = None
    original_width: int | None = None
    rewritten_width: int | None = None
    pattern_id: str | None = None


@dataclass(frozen=True)
class PageSupportClass:
    kind: str  # "none" | "partial" | "full"
    resizable_fraction: float


def load_registry(config_text: str) -> PatternRegistry:
    """Parse a pattern file: `id <TAB> expr <TAB> template [<TAB> prevalence]`.

    `#` starts a comment; file order is match priority.
    """
    patterns: list[ResizePattern] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(config_text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) not in (3, 4):
            raise ConfigError(f"line {lineno}: expected 3 or 4 tab-separated fields")
        pid, expr, template = parts[0], parts[1], parts[2]
        prevalence = None
        if len(parts) == 4 and parts[3]:
            try:
                prevalence = float(parts[3])
            except ValueError:
                raise ConfigError(f"pattern {pid!r} (line {lineno}): bad prevalence {parts[3]!r}")
            if not 0.0 <= prevalence <= 1.0:
                raise ConfigError(f"pattern {pid!r} (line {lineno}): prevalence outside [0,1]")
        if pid in seen:
            raise ConfigError(f"pattern {pid!r} (line {lineno}): duplicate id")
        seen.add(pid)
        try:
            compiled = re.compile(expr)
        except re.error as exc:
            raise ConfigError(f"pattern {pid!r} (line {lineno}): bad expression: {exc}")
        if compiled.groups != 1:
            raise ConfigError(
                f"pattern {pid!r} (line {lineno}): expression must have exactly one "
                f"capture group, found {compiled.groups}"
            )
        for ph in ("{prefix}", "{width}", "{suffix}"):
            if ph not in template:
                raise ConfigError(f"pattern {pid!r} (line {lineno}): template missing {ph}")
        patterns.append(ResizePattern(pid, expr, template, prevalence))
    return PatternRegistry(patterns)


def default_registry() -> PatternRegistry:
    return load_registry(DEFAULT_PATTERNS_TEXT)


def detect(url: str, registry: PatternRegistry) -> PatternMatch | None:
    """First pattern (registry order) matching the URL, or None."""
    for i, pattern in enumerate(registry):
        m = registry.compiled(i).search(url)
        if m is None:
            continue
        token = m.group(1)
        width = int(token) if token.isdigit() else None
        if width is not None and width <= 0:
            width = None
        return PatternMatch(pattern.id, width, m.span(1))
    return None


def apply_width(url: str, match: PatternMatch, width: int,
                registry: PatternRegistry | None = None) -> str:
    """The raw width splice; idempotent as a string transformation."""
    start, end = match.match_span
    if not (0 <= start <= end <= len(url)):
        raise ValueError("match span does not lie within the URL")
    template = "{prefix}{width}{suffix}"
    if registry is not None:
        template = registry[match.pattern_id].rewrite_template
    return template.format(prefix=url[:start], width=width, suffix=url[end:])


def rewrite(url: str, match: PatternMatch, target_width: int, registry: PatternRegistry | None = None) -> str:
    """Splice target_width into the matched width token.

    Raises NoReductionError when the URL's width is already <= target;
    callers should pass the request through unmodified in that case.
    """
    if target_width <= 0:
        raise ValueError(f"target width must be positive, got {target_width}")
    if match.original_width is not None and target_width >= match.original_width:
        raise NoReductionError(
            f"target {target_width}px >= current {match.original_width}px for {url}"
        )
    return apply_width(url, match, target_width, registry)


Fetcher = Callable[[str], FetchResult]


def probe(url: str, registry: PatternRegistry, target_width: int,
          fetcher: Fetcher | None = None) -> SupportProbe:
    """Fetch the original and rewritten URL and compare the evidence.

    Supported requires: both variants decode as images, the rewritten
    one is byte-smaller, its width is at most target+1 and either within
    1px of the target or strictly below the original width. Transport
    failures and non-image content yield Inconclusive.
    """
    fetcher = fetcher or (lambda u: http_fetch(u, timeout=10.0, retries=1))
    m = detect(url, registry)
    if m is None:
        raise ValueError(f"probe precondition: no pattern matches {url}")
    try:
        rewritten_url = rewrite(url, m, target_width, registry)
    except NoReductionError:
        return SupportProbe(url, SupportStatus.INCONCLUSIVE,
                            original_width=m.original_width, pattern_id=m.pattern_id)

    def fetch_image(u: str):
        try:
            res = fetcher(u)
        except Exception:
            return None
        if res.status != 200 or not res.body:
            return None
        try:
            return res.body, decode(res.body)
        except Exception:
            return None

    orig = fetch_image(url)
    if orig is None:
        return SupportProbe(url, SupportStatus.INCONCLUSIVE, pattern_id=m.pattern_id)
    rew = fetch_image(rewritten_url)
    if rew is None:
        return SupportProbe(url, SupportStatus.INCONCLUSIVE,
                            original_bytes=len(orig[0]),
                            original_width=orig[1].width, pattern_id=m.pattern_id)

    orig_bytes, orig_img = len(orig[0]), orig[1]
    rew_bytes, rew_img = len(rew[0]), rew[1]
    width_ok = rew_img.width <= target_width + 1 and (
        abs(rew_img.width - target_width) <= 1 or rew_img.width < orig_img.width
    )
    size_ok = rew_bytes < orig_bytes
    status = SupportStatus.SUPPORTED if (width_ok and size_ok) else SupportStatus.UNSUPPORTED
    return SupportProbe(
        url, status,
        original_bytes=orig_bytes, rewritten_bytes=rew_bytes,
        original_width=orig_img.width, rewritten_width=rew_img.width,
        pattern_id=m.pattern_id,
    )


def probe_many(urls: Iterable[str], registry: PatternRegistry, target_width: int,
               fetcher: Fetcher | None = None, max_workers: int = 8) -> list[SupportProbe]:
    """Probe URLs concurrently under a caller-supplied parallelism bound."""
    urls = list(urls)
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(lambda u: probe(u, registry, target_width, fetcher), urls))


def classify_page(supported_flags: Sequence[bool]) -> PageSupportClass:
    """Per-image support booleans -> page class (none / partial / full)."""
    total = len(supported_flags)
    if total == 0:
        return PageSupportClass("none", 0.0)
    frac = sum(1 for f in supported_flags if f) / total
    if frac == 0.0:
        return PageSupportClass("none", 0.0)
    if frac == 1.0:
        return PageSupportClass("full", 1.0)
    return PageSupportClass("partial", frac)


def write_probe_csv(probes: Iterable[SupportProbe], fp) -> None:
    """CSV export: domain,url,pattern_id,status,orig_bytes,new_bytes."""
    writer = csv.writer(fp)
    writer.writerow(["domain", "url", "pattern_id", "status", "orig_bytes", "new_bytes"])
    for p in probes:
        writer.writerow([
            urlparse(p.url).netloc, p.url, p.pattern_id or "", p.status.value,
            "" if p.original_bytes is None else p.original_bytes,
            "" if p.rewritten_bytes is None else p.rewritten_bytes,
        ])


def read_probe_csv(text: str) -> dict[str, SupportStatus]:
    """URL -> status map from a probe CSV (used as a Today-mode cache)."""
    out: dict[str, SupportStatus] = {}
    reader = csv.DictReader(io.StringIO(text))
    for row in reader:
        out[row["url"]] = SupportStatus(row["status"])
    return out
