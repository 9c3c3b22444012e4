"""Component / module manifests.

A manifest declares three catalogs: data sources (tagged ``personal`` or not),
modules (executable tools reading from sources) and components (intent-level
workflows assembled from modules). Sensitivity is never declared on a
component; it is derived bottom-up::

    source.personal  ->  module PII  ->  component PII

Loaded manifests are immutable. Reloading means building a new ``Manifest``
and swapping the reference.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any

FULL_COMPONENT_COUNT = 20
FULL_MODULE_COUNT = 48
FULL_PERSONAL_ASSET_COUNT = 2


class ManifestError(ValueError):
    """Raised when a manifest fails to parse or validate."""


class UnknownComponentError(KeyError):
    def __init__(self, component_id: str) -> None:
        super().__init__(component_id)
        self.component_id = component_id

    def __str__(self) -> str:
        return f"unknown component: {self.component_id!r}"


class Sensitivity(str, enum.Enum):
    PII = "PII"
    NON_PII = "NON_PII"


class ModuleKind(str, enum.Enum):
    RETRIEVAL = "retrieval"
    ANALYSIS = "analysis"
    SUMMARIZATION = "summarization"
    EVIDENCE_PACKAGING = "evidence-packaging"


class Category(str, enum.Enum):
    INFORMATIONAL = "informational"
    PERSONAL_ASSET = "personal_asset"


@dataclass(frozen=True)
class DataSourceRef:
    name: str
    personal: bool = False


@dataclass(frozen=True)
class ModuleSpec:
    id: str
    kind: ModuleKind
    data_sources: tuple[DataSourceRef, ...]
    sensitivity: Sensitivity


@dataclass(frozen=True)
class ComponentSpec:
    id: str
    intent_label: str
    category: Category
    module_ids: tuple[str, ...]
    sensitivity: Sensitivity


def derive_sensitivity(flags: Iterable[bool]) -> Sensitivity:
    """OR-reduce personal/PII flags into a sensitivity label."""
    return Sensitivity.PII if any(flags) else Sensitivity.NON_PII


class Manifest:
    """Validated, read-only view over sources, modules and components."""

    __slots__ = ("_sources", "_modules", "_components", "_digest", "strict")

    def __init__(
        self,
        sources: Mapping[str, DataSourceRef],
        modules: Mapping[str, ModuleSpec],
        components: Mapping[str, ComponentSpec],
        strict: bool,
    ) -> None:
        object.__setattr__(self, "_sources", MappingProxyType(dict(sources)))
        object.__setattr__(self, "_modules", MappingProxyType(dict(modules)))
        object.__setattr__(self, "_components", MappingProxyType(dict(components)))
        object.__setattr__(self, "strict", strict)
        object.__setattr__(self, "_digest", _digest(self._canonical()))

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError("Manifest is immutable")

    @property
    def sources(self) -> Mapping[str, DataSourceRef]:
        return self._sources

    @property
    def modules(self) -> Mapping[str, ModuleSpec]:
        return self._modules

    @property
    def components(self) -> Mapping[str, ComponentSpec]:
        return self._components

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical manifest content, fixed at construction."""
        return self._digest

    def current_digest(self) -> str:
        """Recompute the content hash (equals ``digest`` unless something is badly wrong)."""
        return _digest(self._canonical())

    def get_component(self, component_id: str) -> ComponentSpec:
        try:
            return self._components[component_id]
        except KeyError:
            raise UnknownComponentError(component_id) from None

    def module_sensitivity(self, module_id: str) -> Sensitivity:
        return self._modules[module_id].sensitivity

    def pii_module_ids(self) -> frozenset[str]:
        return frozenset(m.id for m in self._modules.values() if m.sensitivity is Sensitivity.PII)

    def to_dict(self) -> dict[str, Any]:
        return self._canonical()

    def _canonical(self) -> dict[str, Any]:
        return {
            "sources": [
                {"name": s.name, "personal": s.personal}
                for s in sorted(self._sources.values(), key=lambda s: s.name)
            ],
            "modules": [
                {
                    "id": m.id,
                    "kind": m.kind.value,
                    "data_sources": [s.name for s in m.data_sources],
                    "sensitivity": m.sensitivity.value,
                }
                for m in sorted(self._modules.values(), key=lambda m: m.id)
            ],
            "components": [
                {
                    "id": c.id,
                    "intent_label": c.intent_label,
                    "category": c.category.value,
                    "module_ids": list(c.module_ids),
                    "sensitivity": c.sensitivity.value,
                }
                for c in sorted(self._components.values(), key=lambda c: c.id)
            ],
        }

    def __repr__(self) -> str:
        return (
            f"Manifest(components={len(self._components)}, modules={len(self._modules)}, "
            f"sources={len(self._sources)}, strict={self.strict})"
        )


def _digest(payload: Mapping[str, Any]) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require(obj: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise ManifestError(f"{where}: missing field {key!r}")
    return obj[key]


def _nonempty_str(value: Any, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise ManifestError(f"{where}: expected a non-empty string, got {value!r}")
    return value


def parse_manifest(raw: Mapping[str, Any], strict: bool = True) -> Manifest:
    """Validate a decoded manifest document and build a :class:`Manifest`.

    Raises :class:`ManifestError` for malformed entries, duplicate IDs,
    dangling references, declared sensitivities that contradict the source
    catalog, and (in strict mode) count violations.
    """
    if not isinstance(raw, Mapping):
        raise ManifestError("manifest root must be an object")

    sources: dict[str, DataSourceRef] = {}
    for i, entry in enumerate(_require(raw, "sources", "manifest")):
        where = f"sources[{i}]"
        name = _nonempty_str(_require(entry, "name", where), where + ".name")
        personal = entry.get("personal", False)
        if not isinstance(personal, bool):
            raise ManifestError(f"{where}.personal must be boolean")
        if name in sources:
            raise ManifestError(f"duplicate source name {name!r}")
        sources[name] = DataSourceRef(name=name, personal=personal)

    modules: dict[str, ModuleSpec] = {}
    for i, entry in enumerate(_require(raw, "modules", "manifest")):
        where = f"modules[{i}]"
        mid = _nonempty_str(_require(entry, "id", where), where + ".id")
        if mid in modules:
            raise ManifestError(f"duplicate module id {mid!r}")
        try:
            kind = ModuleKind(_require(entry, "kind", where))
        except ValueError:
            raise ManifestError(f"{where}: unknown module kind {entry['kind']!r}") from None
        refs = []
        for name in _require(entry, "data_sources", where):
            if name not in sources:
                raise ManifestError(f"module {mid!r} references undeclared source {name!r}")
            refs.append(sources[name])
        sensitivity = derive_sensitivity(s.personal for s in refs)
        declared = entry.get("sensitivity")
        if declared is not None and declared != sensitivity.value:
            raise ManifestError(
                f"module {mid!r} declares sensitivity {declared!r} but its sources imply {sensitivity.value!r}"
            )
        modules[mid] = ModuleSpec(id=mid, kind=kind, data_sources=tuple(refs), sensitivity=sensitivity)

    components: dict[str, ComponentSpec] = {}
    for i, entry in enumerate(_require(raw, "components", "manifest")):
        where = f"components[{i}]"
        cid = _nonempty_str(_require(entry, "id", where), where + ".id")
        if cid in components:
            raise ManifestError(f"duplicate component id {cid!r}")
        try:
            category = Category(_require(entry, "category", where))
        except ValueError:
            raise ManifestError(f"{where}: unknown category {entry['category']!r}") from None
        module_ids = tuple(_require(entry, "module_ids", where))
        if not module_ids:
            raise ManifestError(f"component {cid!r} has no modules")
        if len(set(module_ids)) != len(module_ids):
            raise ManifestError(f"component {cid!r} lists a module twice")
        for mid in module_ids:
            if mid not in modules:
                raise ManifestError(f"component {cid!r} references unknown module {mid!r}")
        sensitivity = derive_sensitivity(modules[m].sensitivity is Sensitivity.PII for m in module_ids)
        declared = entry.get("sensitivity")
        if declared is not None and declared != sensitivity.value:
            raise ManifestError(
                f"component {cid!r} declares sensitivity {declared!r} but its modules imply {sensitivity.value!r}"
            )
        components[cid] = ComponentSpec(
            id=cid,
            intent_label=_nonempty_str(entry.get("intent_label", cid), where + ".intent_label"),
            category=category,
            module_ids=module_ids,
            sensitivity=sensitivity,
        )

    if strict:
        n_personal = sum(c.category is Category.PERSONAL_ASSET for c in components.values())
        problems = []
        if len(components) != FULL_COMPONENT_COUNT:
            problems.append(f"{len(components)} components (expected {FULL_COMPONENT_COUNT})")
        if len(modules) != FULL_MODULE_COUNT:
            problems.append(f"{len(modules)} modules (expected {FULL_MODULE_COUNT})")
        if n_personal != FULL_PERSONAL_ASSET_COUNT:
            problems.append(f"{n_personal} personal-asset components (expected {FULL_PERSONAL_ASSET_COUNT})")
        if problems:
            raise ManifestError("strict count violation: " + "; ".join(problems))

    return Manifest(sources, modules, components, strict=strict)


def load_manifest(path: str | Path, strict: bool = True) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    return parse_manifest(raw, strict=strict)


def get_component(manifest: Manifest, component_id: str) -> ComponentSpec:
    return manifest.get_component(component_id)


def default_manifest_path() -> Path:
    return Path(__file__).parent / "data" / "manifest.json"
