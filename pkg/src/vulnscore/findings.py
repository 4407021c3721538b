"""Static-analyzer report ingestion: cppcheck XML and splint plain text.

Both parsers normalize tool output into ``Finding`` records carrying a
category from the fixed layer-1 taxonomy. Tool-specific message ids are
mapped onto categories by data files shipped with the package
(``data/cppcheck_map.json``, ``data/splint_rules.json``) so new analyzer
versions can be accommodated without code changes. Messages that match no
rule become ``Category.OTHER``: they are kept for diagnostics but excluded
from feature aggregation.

Aggregation deduplicates findings reported by the *same tool* at the same
(category, file, line); distinct tools corroborating each other still count
separately.
"""

from __future__ import annotations

import enum
import importlib.resources
import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from .corpus import (
    FeatureDictionary,
    FeatureVector,
    Layer,
)
from .errors import FormatError

CATEGORY_FEATURES = {
    "BufferWrite": "l1.buffer_write",
    "NullDeref": "l1.null_deref",
    "UseAfterFree": "l1.use_after_free",
    "MemoryLeak": "l1.memory_leak",
    "StackReturn": "l1.stack_return",
    "UseBeforeDef": "l1.use_before_def",
}


class Category(str, enum.Enum):
    BUFFER_WRITE = "BufferWrite"
    NULL_DEREF = "NullDeref"
    USE_AFTER_FREE = "UseAfterFree"
    MEMORY_LEAK = "MemoryLeak"
    STACK_RETURN = "StackReturn"
    USE_BEFORE_DEF = "UseBeforeDef"
    OTHER = "Other"


@dataclass(frozen=True)
class Finding:
    tool: str
    category: Category
    file: str
    line: int
    message: str = ""
    tool_id: str = ""


@dataclass
class FindingsReport:
    """Findings from one report file plus parse diagnostics."""

    tool: str
    findings: list[Finding] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    unmatched_lines: int = 0


def _load_data(name: str) -> dict:
    ref = importlib.resources.files("vulnscore").joinpath("data", name)
    return json.loads(ref.read_text(encoding="utf-8"))


def cppcheck_category_map() -> dict:
    """tool message id -> Category, from the packaged map file."""
    raw = _load_data("cppcheck_map.json")["map"]
    return {k: Category(v) for k, v in raw.items()}


def splint_rules() -> list:
    """Ordered (all_of substrings, Category) rules; first match wins."""
    raw = _load_data("splint_rules.json")["rules"]
    return [([s.lower() for s in r["all_of"]], Category(r["category"])) for r in raw]


# ---------------------------------------------------------------------------
# cppcheck


def parse_cppcheck_xml(text: str) -> FindingsReport:
    """Parse cppcheck XML (``--xml``) into a findings report.

    Supports both layouts in the wild: version-1 ``<error file=.. line=..>``
    attributes and version-2 ``<error>`` elements whose position lives in a
    child ``<location>``. An error element with an id but no resolvable
    file/line is skipped with a diagnostic rather than failing the parse.
    """
    report = FindingsReport(tool="cppcheck")
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise FormatError(f"malformed cppcheck XML: {exc}") from exc
    if root.tag != "results":
        raise FormatError(f"not a cppcheck report: root element <{root.tag}>")

    mapping = cppcheck_category_map()
    for err in root.iter("error"):
        tool_id = err.get("id")
        if not tool_id:
            report.diagnostics.append("error element without id attribute; skipped")
            continue
        file = err.get("file")
        line = err.get("line")
        if file is None or line is None:
            loc = err.find("location")
            if loc is not None:
                file = loc.get("file") if file is None else file
                line = loc.get("line") if line is None else line
        if file is None or line is None:
            report.diagnostics.append(f"error {tool_id!r} without file/line; skipped")
            continue
        try:
            line_no = int(line)
        except ValueError:
            report.diagnostics.append(f"error {tool_id!r} with non-integer line {line!r}; skipped")
            continue
        message = err.get("msg") or err.get("verbose") or ""
        category = mapping.get(tool_id, Category.OTHER)
        report.findings.append(
            Finding("cppcheck", category, file, line_no, message, tool_id)
        )
    return report


# ---------------------------------------------------------------------------
# splint

_SPLINT_LINE = re.compile(r"^(?P<file>[^\s:][^:]*):(?P<line>\d+)(?::(?P<col>\d+))?:\s*(?P<msg>.*)$")


def _categorize_splint(message: str, rules) -> Category:
    lowered = message.lower()
    for substrings, category in rules:
        if all(s in lowered for s in substrings):
            return category
    return Category.OTHER


def parse_splint_text(text: str) -> FindingsReport:
    """Parse splint's plain-text output.

    A finding starts at a ``file:line(:col)?: message`` line; subsequent
    indented lines extend its message. Categorization runs on the finalized
    multi-line message. Unindented lines that match nothing (banners,
    summaries) are counted, not errors.
    """
    report = FindingsReport(tool="splint")
    rules = splint_rules()
    current = None  # (file, line, [message parts])

    def finalize():
        nonlocal current
        if current is None:
            return
        file, line_no, parts = current
        message = " ".join(p.strip() for p in parts if p.strip())
        category = _categorize_splint(message, rules)
        report.findings.append(Finding("splint", category, file, line_no, message))
        current = None

    for raw in text.splitlines():
        if not raw.strip():
            finalize()
            continue
        if raw[:1] in (" ", "\t"):
            if current is not None:
                current[2].append(raw)
            else:
                report.unmatched_lines += 1
            continue
        finalize()
        m = _SPLINT_LINE.match(raw)
        if m:
            current = (m.group("file"), int(m.group("line")), [m.group("msg")])
        else:
            report.unmatched_lines += 1
    finalize()
    return report


# ---------------------------------------------------------------------------
# aggregation


def sniff_and_parse(text: str) -> FindingsReport:
    """Dispatch on content: XML documents go to cppcheck, else splint."""
    stripped = text.lstrip("﻿ \t\r\n")
    if stripped.startswith("<"):
        return parse_cppcheck_xml(text)
    return parse_splint_text(text)


def dedup_findings(findings) -> list[Finding]:
    """Drop repeats of (tool, category, file, line), keeping first-seen order."""
    seen = set()
    out = []
    for f in findings:
        key = (f.tool, f.category, f.file, f.line)
        if key in seen:
            continue
        seen.add(key)
        out.append(f)
    return out


def aggregate_layer1(reports, dictionary: FeatureDictionary) -> FeatureVector:
    """Sum deduplicated findings into the six l1.* count features.

    ``Category.OTHER`` findings never contribute. Every l1 feature is
    present in the result (zero when nothing matched) so that a scanned
    project is distinguishable from an unscanned one.
    """
    counts = {name: 0 for name in dictionary.layer_names(Layer.L1)}
    all_findings = []
    for rep in reports:
        all_findings.extend(rep.findings)
    for f in dedup_findings(all_findings):
        feature = CATEGORY_FEATURES.get(f.category.value)
        if feature is not None and feature in counts:
            counts[feature] += 1
    return FeatureVector(counts, dictionary)
