"""Family attribution: layered labeling, vendor-name normalization, categories.

Labeling tries sources in strict order: local ground truth, then a CTI
lookup by content hash, then an import-hash cross-reference, and finally an
explicit unknown. Vendor strings from any source pass through a plurality
vote with an alias table, and the resulting family maps onto a closed
category list through shipped static data.
"""
from __future__ import annotations

import json
import re
import time
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import CtiUnavailable, NoSignal

# Vendor-label tokens that carry no family identity.
GENERIC_TOKENS = frozenset({
    "trojan", "malware", "malicious", "generic", "generik", "gen", "ransom",
    "win32", "win64", "w32", "w64", "msil", "html", "vbs", "js",
    "heur", "heuristic", "ml", "ai", "behaveslike", "suspicious",
    "variant", "family", "application", "program", "potentially",
    "unwanted", "unsafe", "riskware",
})

# Closed category list: the dataset's 21 threat categories plus benign
# and the explicit unknown.
CATEGORIES = (
    "rat", "ransomware", "stealer", "rogueware", "loader", "banker",
    "backdoor", "adware", "botnet", "trojan", "miner", "hacktool",
    "dropper", "worm", "keylogger", "virus", "wiper", "spyware",
    "rootkit", "grayware", "exploit", "benign", "unknown",
)


class LabelSource(Enum):
    LOCAL_GROUND_TRUTH = "local_ground_truth"
    CTI_REPORT = "cti_report"
    IMPHASH_MATCH = "imphash_match"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class FamilyLabel:
    family: str                     # normalized lowercase name or "unknown"
    category: str                   # one of CATEGORIES
    source: LabelSource
    vendor_labels: tuple = ()       # raw strings consulted
    confidence: str = "none"        # confirmed | heuristic | none
    notes: tuple = ()               # degradations hit along the way


_TOKEN = re.compile(r"[a-z0-9]+")


def _load_table(name: str) -> dict:
    return json.loads((resources.files("binhound") / "data" / name).read_text("utf-8"))


_ALIASES: dict[str, str] = _load_table("family_aliases.json")
_CATEGORY_TABLE: dict[str, str] = _load_table("family_categories.json")


def normalize_family(vendor_labels: list[str]) -> str:
    """Plurality vote over alias-resolved, generic-free label tokens.

    Ties resolve to the lexicographically smallest candidate so the result
    is permutation-invariant. Raises NoSignal when every token is generic.
    """
    if not vendor_labels:
        raise NoSignal("no vendor labels")
    votes: Counter = Counter()
    for label in vendor_labels:
        for token in _TOKEN.findall(label.lower()):
            if len(token) < 2 or token in GENERIC_TOKENS:
                continue
            votes[_ALIASES.get(token, token)] += 1
    if not votes:
        raise NoSignal("all tokens generic")
    best = max(votes.values())
    return min(name for name, n in votes.items() if n == best)


def map_category(family: str) -> str:
    """Static family-to-category lookup; unmapped names are unknown."""
    return _CATEGORY_TABLE.get(family.lower(), "unknown")


class FixtureCtiClient:
    """CTI lookups answered from a local JSON mapping keyed by sha256.

    The mapping value is a list of vendor label strings. Accepts either an
    in-memory dict or a path to a JSON file.
    """

    def __init__(self, reports: dict | str | Path):
        if isinstance(reports, (str, Path)):
            reports = json.loads(Path(reports).read_text("utf-8"))
        self.reports = {k.lower(): list(v) for k, v in reports.items()}
        self.calls = 0

    def query(self, sha256: str) -> list[str]:
        self.calls += 1
        return list(self.reports.get(sha256.lower(), []))


class RateLimitedHttpCtiClient:
    """Hash-lookup client for a MalwareBazaar-style HTTP API.

    Enforces a minimum interval between requests so batch labeling cannot
    flood the upstream service. Network and HTTP errors surface as
    CtiUnavailable so the labeling pipeline can degrade to its next source.
    """

    def __init__(self, endpoint: str, min_interval_s: float = 1.0, timeout_s: float = 10.0):
        self.endpoint = endpoint
        self.min_interval_s = min_interval_s
        self.timeout_s = timeout_s
        self._last_call = 0.0
        self.calls = 0

    def query(self, sha256: str) -> list[str]:
        import urllib.error
        import urllib.request

        wait = self.min_interval_s - (time.monotonic() - self._last_call)
        if wait > 0:
            time.sleep(wait)
        self._last_call = time.monotonic()
        self.calls += 1
        url = f"{self.endpoint.rstrip('/')}/query/{sha256.lower()}"
        try:
            with urllib.request.urlopen(url, timeout=self.timeout_s) as resp:
                payload = json.load(resp)
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise CtiUnavailable(str(exc)) from exc
        labels = payload.get("vendor_labels", [])
        if not isinstance(labels, list):
            raise CtiUnavailable("malformed response: vendor_labels not a list")
        return [str(x) for x in labels]


_SHA256 = re.compile(r"^[0-9a-fA-F]{64}$")


def label_sample(sha256: str, imphash: str | None, ground_truth: dict | None,
                 cti=None, imphash_table: dict | None = None,
                 knowledge=None) -> FamilyLabel:
    """Resolve a family label through the layered source chain.

    First hit wins: local ground truth, CTI report, imphash table (the
    explicit table first, then family-intel hash tags in the knowledge
    store). Imphash matches are marked heuristic since shared imports are
    suggestive, not proof. A failing CTI client is recorded and skipped.
    """
    if not _SHA256.match(sha256):
        raise ValueError(f"malformed sha256 {sha256!r}")
    notes: list[str] = []

    if ground_truth:
        raw = ground_truth.get(sha256.lower())
        if raw is not None:
            try:
                family = normalize_family([raw])
            except NoSignal:
                family = raw.lower()
            return FamilyLabel(
                family=family, category=map_category(family),
                source=LabelSource.LOCAL_GROUND_TRUTH,
                vendor_labels=(raw,), confidence="confirmed",
            )

    if cti is not None:
        try:
            vendor_labels = cti.query(sha256)
        except CtiUnavailable as exc:
            vendor_labels = []
            notes.append(f"cti_unavailable: {exc}")
        if vendor_labels:
            try:
                family = normalize_family(vendor_labels)
                return FamilyLabel(
                    family=family, category=map_category(family),
                    source=LabelSource.CTI_REPORT,
                    vendor_labels=tuple(vendor_labels),
                    confidence="confirmed", notes=tuple(notes),
                )
            except NoSignal:
                notes.append("cti_labels_all_generic")

    if imphash:
        family = None
        if imphash_table:
            family = imphash_table.get(imphash.lower())
        if family is None and knowledge is not None:
            doc = knowledge.lookup_hash(imphash)
            if doc is not None:
                family = doc.key
        if family is not None:
            family = family.lower()
            return FamilyLabel(
                family=family, category=map_category(family),
                source=LabelSource.IMPHASH_MATCH,
                confidence="heuristic", notes=tuple(notes),
            )

    return FamilyLabel(
        family="unknown", category="unknown",
        source=LabelSource.UNKNOWN, notes=tuple(notes),
    )
