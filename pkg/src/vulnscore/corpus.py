"""Feature space, labeled-instance schema, and the on-disk dataset format.

Every downstream stage shares one numeric feature space organized in three
layers:

* ``l1.*`` counts of static-analyzer findings, one per finding category
  (buffer writes, null dereferences, use-after-free, leaks, returned stack
  storage, use-before-definition).
* ``l2.*`` metrics parsed from the source itself (branching, loops,
  allocation calls, string-API safety, size, recursion) plus the
  server/client nature of the program.
* ``l3.*`` project metadata gathered by a human annotator (age, committers,
  popularity, platform, reputation, security relation, status, legacy flag,
  exploitation history).

Qualitative metadata is encoded on fixed ordinal scales so a single linear
model can consume all layers: 0-4 for popularity/reputation judgments,
platform kind as [other=0, embedded=1, desktop=2, server=3], code status as
[abandoned=0, maintenance=1, active=2]. Booleans map to {0,1}. Missing
values are represented by absent keys, never by sentinel numbers.
"""

from __future__ import annotations

import enum
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field

from .errors import FormatError, SchemaVersionError, UnknownFeatureError, ValidationError

SCHEMA_VERSION = "1"

_NAME_RE = re.compile(r"^l[123]\.[a-z0-9_]+$")


class Layer(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"


class Kind(str, enum.Enum):
    COUNT = "count"
    BINARY = "binary"
    ORDINAL = "ordinal"
    CONTINUOUS = "continuous"


class Label(str, enum.Enum):
    VULNERABLE = "vulnerable"
    BENIGN_FLAW = "benign_flaw"


# Encoding tables for enum-valued metadata (see module docstring).
PLATFORM_KIND_CODES = {"other": 0, "embedded": 1, "desktop": 2, "server": 3}
CODE_STATUS_CODES = {"abandoned": 0, "maintenance": 1, "active": 2}


@dataclass(frozen=True)
class FeatureDescriptor:
    """One named feature: layer tag, value kind, and optional ordinal range."""

    name: str
    layer: Layer
    kind: Kind
    description: str = ""
    ordinal_range: tuple[int, int] | None = None

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise ValidationError(
                f"feature name {self.name!r} must match l[123].[a-z0-9_]+", rule="name"
            )
        prefix = {"l1": Layer.L1, "l2": Layer.L2, "l3": Layer.L3}[self.name[:2]]
        if prefix is not self.layer:
            raise ValidationError(
                f"feature {self.name!r} is tagged {self.layer.value} but its "
                f"name prefix says {prefix.value}",
                rule="layer_prefix",
            )
        if self.ordinal_range is not None:
            if self.kind is not Kind.ORDINAL:
                raise ValidationError(
                    f"feature {self.name!r}: only ordinal features declare a range",
                    rule="range",
                )
            lo, hi = self.ordinal_range
            if lo > hi:
                raise ValidationError(
                    f"feature {self.name!r}: empty ordinal range {self.ordinal_range}",
                    rule="range",
                )


class FeatureDictionary:
    """Ordered, append-only collection of feature descriptors."""

    def __init__(self, descriptors):
        self.descriptors: tuple[FeatureDescriptor, ...] = tuple(descriptors)
        self._by_name = {}
        for d in self.descriptors:
            if d.name in self._by_name:
                raise ValidationError(f"duplicate feature name {d.name!r}", rule="name")
            self._by_name[d.name] = d

    def __len__(self):
        return len(self.descriptors)

    def __iter__(self):
        return iter(self.descriptors)

    def __contains__(self, name):
        return name in self._by_name

    def __eq__(self, other):
        return isinstance(other, FeatureDictionary) and self.descriptors == other.descriptors

    def __hash__(self):
        return hash(self.descriptors)

    def get(self, name: str) -> FeatureDescriptor:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownFeatureError(f"unknown feature {name!r}") from None

    def names(self) -> list[str]:
        return [d.name for d in self.descriptors]

    def layer_names(self, *layers: Layer) -> list[str]:
        wanted = set(layers)
        return [d.name for d in self.descriptors if d.layer in wanted]

    def extended(self, extra) -> "FeatureDictionary":
        """New dictionary with ``extra`` descriptors appended (never reordered)."""
        return FeatureDictionary(self.descriptors + tuple(extra))


def default_dictionary() -> FeatureDictionary:
    """The canonical 25-feature dictionary: 6 L1, then 9 L2, then 10 L3."""
    d = FeatureDescriptor
    return FeatureDictionary(
        [
            d("l1.buffer_write", Layer.L1, Kind.COUNT, "out-of-bounds buffer write findings"),
            d("l1.null_deref", Layer.L1, Kind.COUNT, "null pointer dereference findings"),
            d("l1.use_after_free", Layer.L1, Kind.COUNT, "use of possibly freed storage findings"),
            d("l1.memory_leak", Layer.L1, Kind.COUNT, "memory leak findings"),
            d("l1.stack_return", Layer.L1, Kind.COUNT, "returned pointer to stack storage findings"),
            d("l1.use_before_def", Layer.L1, Kind.COUNT, "value used before definition findings"),
            d("l2.safe_lib_calls", Layer.L2, Kind.COUNT, "calls to bounds-checking string APIs"),
            d("l2.branch_count", Layer.L2, Kind.COUNT, "if/case/ternary branch points"),
            d("l2.branch_max_depth", Layer.L2, Kind.COUNT, "deepest if-block nesting"),
            d("l2.loop_count", Layer.L2, Kind.COUNT, "for/while/do loops"),
            d("l2.is_server", Layer.L2, Kind.BINARY, "1 if the program is a server application"),
            d("l2.alloc_calls", Layer.L2, Kind.COUNT, "calls to malloc/calloc/realloc"),
            d("l2.sloc", Layer.L2, Kind.COUNT, "source lines carrying at least one token"),
            d("l2.recursive_fns", Layer.L2, Kind.COUNT, "functions on a call-graph cycle"),
            d("l2.unsafe_lib_calls", Layer.L2, Kind.COUNT, "calls to unbounded string APIs"),
            d("l3.code_age_months", Layer.L3, Kind.COUNT, "whole months since first release"),
            d("l3.committers", Layer.L3, Kind.COUNT, "number of committers"),
            d("l3.popularity_program", Layer.L3, Kind.ORDINAL, "program popularity, 0 (obscure) to 4 (ubiquitous)", (0, 4)),
            d("l3.popularity_platform", Layer.L3, Kind.ORDINAL, "platform popularity, 0 to 4", (0, 4)),
            d("l3.platform_kind", Layer.L3, Kind.ORDINAL, "platform class: other/embedded/desktop/server", (0, 3)),
            d("l3.dev_reputation", Layer.L3, Kind.ORDINAL, "developer-team reputation, 0 to 4", (0, 4)),
            d("l3.security_related", Layer.L3, Kind.BINARY, "1 if the project is security software"),
            d("l3.code_status", Layer.L3, Kind.ORDINAL, "abandoned/maintenance/active", (0, 2)),
            d("l3.is_legacy", Layer.L3, Kind.BINARY, "1 for legacy code bases"),
            d("l3.exploit_history", Layer.L3, Kind.COUNT, "prior published advisories"),
        ]
    )


@dataclass(frozen=True)
class FeatureVector:
    """Partial assignment of feature values, keyed by dictionary name.

    Construction rejects names outside the dictionary; value-level rules
    (kinds, ranges, finiteness) are checked by ``validate_dataset`` so that
    malformed data can be reported instead of crashing.
    """

    values: dict
    dictionary: FeatureDictionary

    def __post_init__(self):
        for name in self.values:
            self.dictionary.get(name)

    def merged(self, other: "FeatureVector") -> "FeatureVector":
        """Union of two partial vectors; conflicting values are an error."""
        if other.dictionary != self.dictionary:
            raise ValidationError("cannot merge vectors over different dictionaries")
        combined = dict(self.values)
        for name, value in other.values.items():
            if name in combined and combined[name] != value:
                raise ValidationError(
                    f"conflicting values for {name!r}: {combined[name]} vs {value}"
                )
            combined[name] = value
        return FeatureVector(combined, self.dictionary)

    def in_dictionary_order(self) -> dict:
        """Values re-keyed in dictionary order (for deterministic output)."""
        return {n: self.values[n] for n in self.dictionary.names() if n in self.values}


@dataclass(frozen=True)
class Instance:
    """One labeled code base."""

    id: str
    label: Label
    features: FeatureVector
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Dataset:
    dictionary: FeatureDictionary
    instances: tuple[Instance, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))

    def labels(self) -> list[Label]:
        return [inst.label for inst in self.instances]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.dictionary, tuple(self.instances[i] for i in indices))


@dataclass(frozen=True)
class Violation:
    """One broken invariant: which instance, which feature, which rule."""

    instance_id: str
    feature: str | None
    rule: str

    def as_dict(self):
        return {"instance": self.instance_id, "feature": self.feature, "rule": self.rule}


def _check_value(desc: FeatureDescriptor, value) -> str | None:
    """Return the broken rule for (descriptor, value), or None if fine."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return "value must be numeric"
    if not math.isfinite(value):
        return "value must be finite"
    if desc.kind is Kind.COUNT:
        if value != int(value):
            return "count must be an integer"
        if value < 0:
            return "count must be non-negative"
    elif desc.kind is Kind.BINARY:
        if value not in (0, 1):
            return "binary must be 0 or 1"
    elif desc.kind is Kind.ORDINAL:
        if value != int(value):
            return "ordinal must be an integer"
        if desc.ordinal_range is not None:
            lo, hi = desc.ordinal_range
            if not (lo <= value <= hi):
                return f"ordinal must be within [{lo}, {hi}]"
    return None


def validate_dataset(dataset: Dataset) -> list[Violation]:
    """Check every value-level invariant; return violations instead of raising.

    Covers: value kinds and ranges, finiteness, and instance-id uniqueness
    (one violation per repeated occurrence beyond the first).
    """
    violations = []
    seen_ids = set()
    for inst in dataset.instances:
        if inst.id in seen_ids:
            violations.append(Violation(inst.id, None, "duplicate instance id"))
        seen_ids.add(inst.id)
        for name, value in inst.features.values.items():
            desc = dataset.dictionary.get(name)
            rule = _check_value(desc, value)
            if rule is not None:
                violations.append(Violation(inst.id, name, rule))
    return violations


# ---------------------------------------------------------------------------
# On-disk format


def atomic_write_text(path, text: str) -> None:
    """Whole-file atomic write: temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _descriptor_to_obj(d: FeatureDescriptor) -> dict:
    obj = {
        "name": d.name,
        "layer": d.layer.value,
        "kind": d.kind.value,
        "description": d.description,
    }
    if d.ordinal_range is not None:
        obj["range"] = [d.ordinal_range[0], d.ordinal_range[1]]
    return obj


def _descriptor_from_obj(obj) -> FeatureDescriptor:
    if not isinstance(obj, dict):
        raise FormatError("dictionary entries must be objects")
    try:
        name = obj["name"]
        layer = Layer(obj["layer"])
        kind = Kind(obj["kind"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad feature descriptor {obj!r}: {exc}") from exc
    rng = obj.get("range")
    ordinal_range = (int(rng[0]), int(rng[1])) if rng is not None else None
    return FeatureDescriptor(name, layer, kind, obj.get("description", ""), ordinal_range)


def dataset_to_json(dataset: Dataset) -> str:
    obj = {
        "schema_version": SCHEMA_VERSION,
        "dictionary": [_descriptor_to_obj(d) for d in dataset.dictionary],
        "instances": [
            {
                "id": inst.id,
                "label": inst.label.value,
                "features": inst.features.in_dictionary_order(),
                "provenance": inst.provenance,
            }
            for inst in dataset.instances
        ],
    }
    return json.dumps(obj, indent=2) + "\n"


def dataset_from_json(text: str) -> Dataset:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FormatError("dataset file must contain a JSON object")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported dataset schema_version {version!r} (expected {SCHEMA_VERSION!r})"
        )
    dictionary = FeatureDictionary(
        _descriptor_from_obj(o) for o in obj.get("dictionary", [])
    )
    instances = []
    for rec in obj.get("instances", []):
        if not isinstance(rec, dict) or "id" not in rec or "label" not in rec:
            raise FormatError(f"instance record missing id/label: {rec!r}")
        try:
            label = Label(rec["label"])
        except ValueError as exc:
            raise FormatError(f"instance {rec['id']!r}: bad label {rec['label']!r}") from exc
        features = rec.get("features", {})
        if not isinstance(features, dict):
            raise FormatError(f"instance {rec['id']!r}: features must be an object")
        try:
            vector = FeatureVector(dict(features), dictionary)
        except UnknownFeatureError as exc:
            raise UnknownFeatureError(f"instance {rec['id']!r}: {exc}") from exc
        provenance = rec.get("provenance", {})
        instances.append(Instance(rec["id"], label, vector, provenance))
    return Dataset(dictionary, tuple(instances))


def save_dataset(dataset: Dataset, path) -> None:
    atomic_write_text(path, dataset_to_json(dataset))


def load_dataset(path) -> Dataset:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from exc
    return dataset_from_json(text)
