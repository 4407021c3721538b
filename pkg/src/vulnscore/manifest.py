"""Project metadata manifest: the hand-gathered layer-3 signals.

Popularity, reputation, status, and history cannot be parsed out of source
code; a human records them once in a small JSON manifest and this module
validates the record and encodes it numerically. The manifest also carries
``is_server_app``, which feeds the layer-2 feature ``l2.is_server`` since
the server/client nature of a program is likewise not derivable from source
text alone.

Age is measured in whole months between first release and snapshot: a month
counts once the day-of-month of the snapshot reaches the day-of-month of the
release (2006-01-15 to 2008-01-15 is exactly 24).
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass

from .corpus import (
    CODE_STATUS_CODES,
    PLATFORM_KIND_CODES,
    FeatureDictionary,
    FeatureVector,
)
from .errors import FormatError, SchemaVersionError, ValidationError

MANIFEST_SCHEMA_VERSION = "1"

_REQUIRED_FIELDS = (
    "project_name",
    "first_release_date",
    "snapshot_date",
    "committers",
    "popularity_program",
    "popularity_platform",
    "platform_kind",
    "dev_reputation",
    "security_related",
    "code_status",
    "is_legacy",
    "exploit_history",
    "is_server_app",
)

_KNOWN_KEYS = frozenset(_REQUIRED_FIELDS) | {"schema_version"}


@dataclass(frozen=True)
class ProjectManifest:
    project_name: str
    first_release_date: datetime.date
    snapshot_date: datetime.date
    committers: int
    popularity_program: int
    popularity_platform: int
    platform_kind: str
    dev_reputation: int
    security_related: bool
    code_status: str
    is_legacy: bool
    exploit_history: int
    is_server_app: bool


def months_between(earlier: datetime.date, later: datetime.date) -> int:
    """Whole months from earlier to later (non-negative for ordered dates)."""
    months = (later.year - earlier.year) * 12 + (later.month - earlier.month)
    if later.day < earlier.day:
        months -= 1
    return months


def _need_date(obj, key) -> datetime.date:
    raw = obj[key]
    if not isinstance(raw, str):
        raise ValidationError(f"{key} must be an ISO date string", rule="date")
    try:
        return datetime.date.fromisoformat(raw)
    except ValueError as exc:
        raise ValidationError(f"{key}: not a valid ISO date: {raw!r}", rule="date") from exc


def _need_count(obj, key) -> int:
    raw = obj[key]
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ValidationError(f"{key} must be an integer", rule="type")
    if raw < 0:
        raise ValidationError(f"{key} must be non-negative, got {raw}", rule="range")
    return raw


def _need_ordinal(obj, key, lo=0, hi=4) -> int:
    raw = obj[key]
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise ValidationError(f"{key} must be an integer", rule="type")
    if not (lo <= raw <= hi):
        raise ValidationError(f"{key} must be within [{lo}, {hi}], got {raw}", rule="range")
    return raw


def _need_bool(obj, key) -> bool:
    raw = obj[key]
    if not isinstance(raw, bool):
        raise ValidationError(f"{key} must be true or false", rule="type")
    return raw


def _need_choice(obj, key, choices) -> str:
    raw = obj[key]
    if raw not in choices:
        raise ValidationError(
            f"{key} must be one of {sorted(choices)}, got {raw!r}", rule="enum"
        )
    return raw


def manifest_from_obj(obj) -> ProjectManifest:
    if not isinstance(obj, dict):
        raise FormatError("manifest must be a JSON object")
    version = obj.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported manifest schema_version {version!r} "
            f"(expected {MANIFEST_SCHEMA_VERSION!r})"
        )
    for key in obj:
        if key not in _KNOWN_KEYS:
            raise ValidationError(f"unknown manifest key {key!r}", rule="unknown_key")
    for key in _REQUIRED_FIELDS:
        if key not in obj:
            raise ValidationError(f"missing manifest field {key!r}", rule="missing_field")

    name = obj["project_name"]
    if not isinstance(name, str) or not name:
        raise ValidationError("project_name must be a non-empty string", rule="type")

    first_release = _need_date(obj, "first_release_date")
    snapshot = _need_date(obj, "snapshot_date")
    if snapshot < first_release:
        raise ValidationError(
            f"snapshot_date {snapshot} precedes first_release_date {first_release}",
            rule="date_order",
        )

    return ProjectManifest(
        project_name=name,
        first_release_date=first_release,
        snapshot_date=snapshot,
        committers=_need_count(obj, "committers"),
        popularity_program=_need_ordinal(obj, "popularity_program"),
        popularity_platform=_need_ordinal(obj, "popularity_platform"),
        platform_kind=_need_choice(obj, "platform_kind", PLATFORM_KIND_CODES),
        dev_reputation=_need_ordinal(obj, "dev_reputation"),
        security_related=_need_bool(obj, "security_related"),
        code_status=_need_choice(obj, "code_status", CODE_STATUS_CODES),
        is_legacy=_need_bool(obj, "is_legacy"),
        exploit_history=_need_count(obj, "exploit_history"),
        is_server_app=_need_bool(obj, "is_server_app"),
    )


def load_manifest(path) -> ProjectManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed manifest JSON: {exc}") from exc
    return manifest_from_obj(obj)


def encode_layer3(manifest: ProjectManifest, dictionary: FeatureDictionary) -> FeatureVector:
    """All ten l3.* features plus l2.is_server, numerically encoded."""
    values = {
        "l3.code_age_months": months_between(
            manifest.first_release_date, manifest.snapshot_date
        ),
        "l3.committers": manifest.committers,
        "l3.popularity_program": manifest.popularity_program,
        "l3.popularity_platform": manifest.popularity_platform,
        "l3.platform_kind": PLATFORM_KIND_CODES[manifest.platform_kind],
        "l3.dev_reputation": manifest.dev_reputation,
        "l3.security_related": int(manifest.security_related),
        "l3.code_status": CODE_STATUS_CODES[manifest.code_status],
        "l3.is_legacy": int(manifest.is_legacy),
        "l3.exploit_history": manifest.exploit_history,
        "l2.is_server": int(manifest.is_server_app),
    }
    return FeatureVector(values, dictionary)
