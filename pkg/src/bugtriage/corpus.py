"""Loading raw bug reports and the lifecycle / developer-frequency filters."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

from .exceptions import CorpusFormatError

FORMATS = ("jsonl", "bugzilla-xml")

RESOLVED_STATUSES = frozenset({"resolved", "verified"})
KEPT_RESOLUTIONS = frozenset({"fixed", "duplicate"})


@dataclass(frozen=True)
class BugReport:
    id: int
    summary: str = ""
    description: str = ""
    developer: Optional[str] = None
    status: str = ""
    resolution: str = ""
    submit_order: int = 0

    @property
    def text(self) -> str:
        return f"{self.summary} {self.description}"

    def to_record(self) -> dict:
        record = asdict(self)
        if record["developer"] is None:
            del record["developer"]
        return record


@dataclass(frozen=True)
class RawCorpus:
    reports: tuple[BugReport, ...]
    source_note: str = ""

    def __post_init__(self):
        ids = [r.id for r in self.reports]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise ValueError(f"duplicate report id {dup}")
        orders = [r.submit_order for r in self.reports]
        if len(set(orders)) != len(orders):
            raise ValueError("submit_order values must be unique")
        if orders != sorted(orders):
            object.__setattr__(
                self, "reports", tuple(sorted(self.reports, key=lambda r: r.submit_order))
            )

    def __len__(self):
        return len(self.reports)

    def __iter__(self):
        return iter(self.reports)

    def replace_reports(self, reports: Iterable[BugReport], note: str) -> "RawCorpus":
        return RawCorpus(tuple(reports), source_note=f"{self.source_note}; {note}".strip("; "))


def _require_text(record, index, name, default=""):
    value = record.get(name, default)
    if value is None:
        return default
    if not isinstance(value, str):
        raise CorpusFormatError(index, name, f"expected a string, got {type(value).__name__}")
    return value


def _report_from_record(record, index: int) -> BugReport:
    if not isinstance(record, dict):
        raise CorpusFormatError(index, "<record>", "expected a JSON object")
    if "id" not in record:
        raise CorpusFormatError(index, "id", "missing")
    raw_id = record["id"]
    if isinstance(raw_id, bool) or not isinstance(raw_id, (int, str)):
        raise CorpusFormatError(index, "id", f"not an integer: {raw_id!r}")
    try:
        report_id = int(raw_id)
    except ValueError:
        raise CorpusFormatError(index, "id", f"not an integer: {raw_id!r}") from None
    if report_id <= 0:
        raise CorpusFormatError(index, "id", f"must be positive, got {report_id}")

    developer = record.get("developer")
    if developer is not None:
        if not isinstance(developer, str):
            raise CorpusFormatError(index, "developer", "expected a string or null")
        developer = developer.strip() or None

    return BugReport(
        id=report_id,
        summary=_require_text(record, index, "summary"),
        description=_require_text(record, index, "description"),
        developer=developer,
        status=_require_text(record, index, "status"),
        resolution=_require_text(record, index, "resolution"),
        submit_order=index,
    )


def _parse_jsonl(path: Path) -> list[BugReport]:
    reports = []
    with open(path, encoding="utf-8") as fh:
        index = 0
        for line in fh:
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(index, "<line>", f"invalid JSON ({exc.msg})") from None
            reports.append(_report_from_record(record, index))
            index += 1
    return reports


def _xml_text(bug, tag):
    node = bug.find(tag)
    if node is None or node.text is None:
        return ""
    return node.text.strip()


def _parse_bugzilla_xml(path: Path) -> list[BugReport]:
    """Best-effort reader for a Bugzilla ``show_bug.cgi?ctype=xml`` export.

    Maps ``short_desc`` to the summary, the first ``long_desc/thetext`` to
    the description and ``assigned_to`` to the developer.
    """
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise CorpusFormatError(0, "<xml>", str(exc)) from None
    bugs = [root] if root.tag == "bug" else root.findall("bug")
    reports = []
    for index, bug in enumerate(bugs):
        if bug.get("error"):
            continue
        record = {
            "id": _xml_text(bug, "bug_id"),
            "summary": _xml_text(bug, "short_desc"),
            "developer": _xml_text(bug, "assigned_to") or None,
            "status": _xml_text(bug, "bug_status"),
            "resolution": _xml_text(bug, "resolution"),
        }
        first = bug.find("long_desc")
        record["description"] = _xml_text(first, "thetext") if first is not None else ""
        if not record["id"]:
            raise CorpusFormatError(index, "bug_id", "missing")
        reports.append(_report_from_record(record, len(reports)))
    return reports


def parse_corpus(path, format: str = "jsonl") -> RawCorpus:
    """Read a corpus file. Submit order follows file order."""
    if format not in FORMATS:
        raise ValueError(f"unknown corpus format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    if format == "jsonl":
        reports = _parse_jsonl(path)
    else:
        reports = _parse_bugzilla_xml(path)
    return RawCorpus(tuple(reports), source_note=f"{format}:{path.name}")


def write_corpus(corpus: RawCorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for report in corpus:
            fh.write(json.dumps(report.to_record(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def is_resolved(report: BugReport) -> bool:
    return (
        report.status.strip().lower() in RESOLVED_STATUSES
        and report.resolution.strip().lower() in KEPT_RESOLUTIONS
    )


def filter_lifecycle(corpus: RawCorpus) -> RawCorpus:
    """Keep resolved/verified reports whose resolution is fixed or duplicate."""
    kept = [r for r in corpus if is_resolved(r)]
    return corpus.replace_reports(kept, "lifecycle")


def filter_developers(corpus: RawCorpus, min_fixed: int) -> RawCorpus:
    """Drop labeled reports of developers with fewer than ``min_fixed`` reports.

    Counts are taken once on the input. Unlabeled reports are always kept.
    """
    if min_fixed < 1:
        raise ValueError("min_fixed must be >= 1")
    counts = Counter(r.developer for r in corpus if r.developer is not None)
    kept = [r for r in corpus if r.developer is None or counts[r.developer] >= min_fixed]
    return corpus.replace_reports(kept, f"min_fixed={min_fixed}")
