"""Ocean knowledge graph: storage, file formats, region mapping, retrieval.

Entities, relations and triples are read from tab-separated line records.
The graph is immutable once built; all queries are read-only.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import (
    EntityLookupError,
    ParseError,
    PreconditionError,
    ReferentialIntegrityError,
)

log = logging.getLogger(__name__)

ENTITY_KINDS = ("Region", "Sea", "Ocean", "Current", "Monsoon")
# literal value nodes, e.g. the tail of a has_temperature triple
ATTRIBUTE_KIND = "Attribute"
RELATION_NAMES = ("located_in", "part_of", "influenced_by", "adjacent_to", "has_temperature")

# display labels used when reporting counts
KIND_LABELS = {
    "Region": "Regions",
    "Current": "Currents",
    "Monsoon": "Monsoons",
    "Ocean": "Oceans",
    "Sea": "Sea Areas",
    ATTRIBUTE_KIND: "Attributes",
}


@dataclass(frozen=True)
class Entity:
    id: str
    kind: str
    description: str = ""
    coords: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("entity id must be nonempty")
        if self.kind not in ENTITY_KINDS and self.kind != ATTRIBUTE_KIND:
            raise ValueError(f"unknown entity kind {self.kind!r} for {self.id!r}")
        if self.description is None:
            raise ValueError(f"entity {self.id!r} has no description")
        if self.kind == "Region" and self.coords is None:
            raise PreconditionError(f"region {self.id!r} has no coordinates")
        if self.coords is not None:
            lat, lon = self.coords
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ValueError(f"coordinates out of range for {self.id!r}: {self.coords}")


@dataclass(frozen=True)
class Relation:
    id: str
    name: str
    description: str = ""

    def __post_init__(self):
        if not self.id or not self.name:
            raise ValueError("relation id and name must be nonempty")


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str
    description: str = field(default="", compare=False)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head, self.relation, self.tail)

    @property
    def canonical_key(self) -> tuple[str, str, str]:
        """Sort key used wherever a deterministic triple order is needed."""
        return (self.relation, self.head, self.tail)


@dataclass(frozen=True)
class BoundaryBox:
    entity_id: str
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    wraps_antimeridian: bool = False

    def __post_init__(self):
        if self.lat_min > self.lat_max:
            raise ValueError(f"lat_min > lat_max in box for {self.entity_id!r}")
        if not self.wraps_antimeridian and self.lon_min > self.lon_max:
            raise ValueError(
                f"lon_min > lon_max in non-wrapping box for {self.entity_id!r}; "
                "set wraps_antimeridian"
            )

    def split(self) -> list[BoundaryBox]:
        """Two plain boxes for a wrapping box, else the box itself."""
        if not self.wraps_antimeridian:
            return [self]
        return [
            BoundaryBox(self.entity_id, self.lat_min, self.lat_max, self.lon_min, 180.0),
            BoundaryBox(self.entity_id, self.lat_min, self.lat_max, -180.0, self.lon_max),
        ]

    def contains(self, lat: float, lon: float) -> bool:
        return any(
            b.lat_min <= lat <= b.lat_max and b.lon_min <= lon <= b.lon_max
            for b in self.split()
        )


class BoundaryTable:
    """Approximate geographic extents of non-region entities (several boxes allowed)."""

    def __init__(self, boxes: Iterable[BoundaryBox] = ()):
        self.boxes = tuple(boxes)

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def entity_ids(self) -> list[str]:
        return sorted({b.entity_id for b in self.boxes})

    def boxes_for(self, entity_id: str) -> list[BoundaryBox]:
        return [b for b in self.boxes if b.entity_id == entity_id]


@dataclass(frozen=True)
class GraphStats:
    counts: Mapping[str, int]
    entities: int
    relations: int
    triples: int

    def as_table(self) -> dict[str, int]:
        out = {KIND_LABELS[k]: self.counts.get(k, 0) for k in ENTITY_KINDS}
        if self.counts.get(ATTRIBUTE_KIND):
            out[KIND_LABELS[ATTRIBUTE_KIND]] = self.counts[ATTRIBUTE_KIND]
        out["entities"] = self.entities
        out["triples"] = self.triples
        return out


class KnowledgeGraph:
    """Immutable entity/relation/triple store with an undirected incidence index."""

    def __init__(
        self,
        entities: Iterable[Entity] = (),
        relations: Iterable[Relation] = (),
        triples: Iterable[Triple] = (),
    ):
        ents: dict[str, Entity] = {}
        for e in entities:
            if e.id in ents:
                raise ValueError(f"duplicate entity id {e.id!r}")
            ents[e.id] = e
        rels: dict[str, Relation] = {}
        for r in relations:
            if r.id in rels:
                raise ValueError(f"duplicate relation id {r.id!r}")
            rels[r.id] = r

        kept: dict[tuple[str, str, str], Triple] = {}
        dupes = 0
        for t in triples:
            if t.head not in ents or t.tail not in ents:
                missing = t.head if t.head not in ents else t.tail
                raise ReferentialIntegrityError(
                    f"triple {t.key} references unknown entity {missing!r}"
                )
            if t.relation not in rels:
                raise ReferentialIntegrityError(
                    f"triple {t.key} references unknown relation {t.relation!r}"
                )
            if t.key in kept:
                dupes += 1
                continue
            kept[t.key] = t
        if dupes:
            log.warning("collapsed %d duplicate triples", dupes)

        self._entities = MappingProxyType(ents)
        self._entity_ids = tuple(sorted(ents))
        self._relations = MappingProxyType(rels)
        self._triples = tuple(kept.values())
        self._triple_set = frozenset(kept.values())
        self.duplicates_collapsed = dupes
        self._adjacency = MappingProxyType(self._build_adjacency(ents, self._triples))
        self.adjacency_convention = detect_adjacency_convention(self._triples, rels)

    @staticmethod
    def _build_adjacency(entities, triples) -> dict[str, tuple[Triple, ...]]:
        incident: dict[str, list[Triple]] = {eid: [] for eid in entities}
        for t in triples:
            incident[t.head].append(t)
            if t.tail != t.head:
                incident[t.tail].append(t)
        return {eid: tuple(ts) for eid, ts in incident.items()}

    @property
    def entities(self) -> Mapping[str, Entity]:
        return self._entities

    @property
    def relations(self) -> Mapping[str, Relation]:
        return self._relations

    @property
    def triples(self) -> frozenset[Triple]:
        return self._triple_set

    @property
    def adjacency(self) -> Mapping[str, tuple[Triple, ...]]:
        return self._adjacency

    def entity_ids(self) -> tuple[str, ...]:
        return self._entity_ids

    def triple_list(self) -> list[Triple]:
        """Triples in canonical (relation, head, tail) order."""
        return sorted(self._triples, key=lambda t: t.canonical_key)

    def entity(self, eid: str) -> Entity:
        try:
            return self._entities[eid]
        except KeyError:
            raise EntityLookupError(f"unknown entity {eid!r}") from None

    def entities_of_kind(self, kind: str) -> list[Entity]:
        return sorted((e for e in self._entities.values() if e.kind == kind), key=lambda e: e.id)

    def region_ids(self) -> list[str]:
        return [e.id for e in self.entities_of_kind("Region")]

    def relation_by_name(self, name: str) -> Relation:
        for r in self._relations.values():
            if r.name == name:
                return r
        raise EntityLookupError(f"no relation named {name!r}")

    def neighbors(self, eid: str) -> set[str]:
        out = set()
        for t in self.adjacency[eid]:
            out.add(t.tail if t.head == eid else t.head)
        return out

    def check_adjacency(self) -> bool:
        """Rebuild the incidence index and compare with the stored one."""
        rebuilt = self._build_adjacency(self._entities, self._triples)
        return all(set(rebuilt[k]) == set(self._adjacency[k]) for k in self._entities) and (
            rebuilt.keys() == self._adjacency.keys()
        )

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            dict(self._entities) == dict(other._entities)
            and dict(self._relations) == dict(other._relations)
            and {t.key: t.description for t in self._triples}
            == {t.key: t.description for t in other._triples}
        )

    def __repr__(self):
        return (
            f"KnowledgeGraph(entities={len(self._entities)}, "
            f"relations={len(self._relations)}, triples={len(self._triples)})"
        )


def detect_adjacency_convention(triples: Iterable[Triple], relations: Mapping[str, Relation]) -> str:
    """How adjacent_to facts are stored: 'absent', 'symmetric', 'one-way' or 'mixed'."""
    adj_ids = {r.id for r in relations.values() if r.name == "adjacent_to"}
    pairs = {(t.head, t.tail) for t in triples if t.relation in adj_ids}
    if not pairs:
        return "absent"
    mirrored = sum((t, h) in pairs for h, t in pairs)
    if mirrored == len(pairs):
        return "symmetric"
    if mirrored == 0:
        return "one-way"
    return "mixed"


# --------------------------------------------------------------------------- files


def _records(path: Path, n_fields: int):
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) == n_fields - 1:
                parts.append("")  # trailing empty description
            if len(parts) != n_fields:
                raise ParseError(path, line_no, f"expected {n_fields} tab-separated fields, got {len(parts)}")
            yield line_no, parts


def _parse_float(path, line_no, text):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, line_no, f"not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(path, line_no, f"non-finite number: {text!r}")
    return value


def read_entities(path) -> list[Entity]:
    path = Path(path)
    out = []
    for line_no, (eid, kind, lat, lon, desc) in _records(path, 5):
        coords = None
        if lat.strip() or lon.strip():
            coords = (_parse_float(path, line_no, lat), _parse_float(path, line_no, lon))
        try:
            out.append(Entity(eid, kind, desc, coords))
        except (ValueError, PreconditionError) as exc:
            raise ParseError(path, line_no, str(exc)) from None
    return out


def read_relations(path) -> list[Relation]:
    path = Path(path)
    out = []
    for line_no, (rid, name, desc) in _records(path, 3):
        try:
            out.append(Relation(rid, name, desc))
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None
    return out


def read_triples(path) -> list[Triple]:
    path = Path(path)
    out = []
    for line_no, (h, r, t, desc) in _records(path, 4):
        if not (h and r and t):
            raise ParseError(path, line_no, "empty head, relation or tail")
        out.append(Triple(h, r, t, desc))
    return out


def read_boundaries(path) -> BoundaryTable:
    path = Path(path)
    boxes = []
    for line_no, (eid, la0, la1, lo0, lo1, wraps) in _records(path, 6):
        if wraps.strip() not in ("0", "1"):
            raise ParseError(path, line_no, f"wraps_antimeridian must be 0 or 1, got {wraps!r}")
        try:
            boxes.append(
                BoundaryBox(
                    eid,
                    _parse_float(path, line_no, la0),
                    _parse_float(path, line_no, la1),
                    _parse_float(path, line_no, lo0),
                    _parse_float(path, line_no, lo1),
                    wraps.strip() == "1",
                )
            )
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None
    return BoundaryTable(boxes)


def load_triples(entity_file, relation_file, triple_file) -> KnowledgeGraph:
    """Load a graph from the three line-record files."""
    g = KnowledgeGraph(read_entities(entity_file), read_relations(relation_file), read_triples(triple_file))
    log.info("loaded %r (adjacent_to stored %s)", g, g.adjacency_convention)
    return g


def load_graph_dir(directory) -> KnowledgeGraph:
    d = Path(directory)
    return load_triples(d / "entities.tsv", d / "relations.tsv", d / "triples.tsv")


def _clean(text: str) -> str:
    return text.replace("\t", " ").replace("\r", " ").replace("\n", " ")


def _fmt_coord(x: float) -> str:
    return repr(float(x))


def save_graph(g: KnowledgeGraph, directory) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {name: d / f"{name}.tsv" for name in ("entities", "relations", "triples")}
    with open(paths["entities"], "w", encoding="utf-8") as fh:
        for e in sorted(g.entities.values(), key=lambda e: e.id):
            lat, lon = ("", "") if e.coords is None else map(_fmt_coord, e.coords)
            fh.write(f"{e.id}\t{e.kind}\t{lat}\t{lon}\t{_clean(e.description)}\n")
    with open(paths["relations"], "w", encoding="utf-8") as fh:
        for r in sorted(g.relations.values(), key=lambda r: r.id):
            fh.write(f"{r.id}\t{r.name}\t{_clean(r.description)}\n")
    with open(paths["triples"], "w", encoding="utf-8") as fh:
        for t in sorted(g.triples, key=lambda t: t.key):
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\t{_clean(t.description)}\n")
    return paths


def save_boundaries(table: BoundaryTable, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for b in table:
            fh.write(
                f"{b.entity_id}\t{b.lat_min!r}\t{b.lat_max!r}\t{b.lon_min!r}\t{b.lon_max!r}\t"
                f"{int(b.wraps_antimeridian)}\n"
            )
    return path


# ----------------------------------------------------------------- construction


def describe_triple(head: str, relation_name: str, tail: str) -> str:
    return f"({head}, {relation_name.replace('_', ' ')}, {tail})"


def build_region_mapping(
    regions: Iterable[Entity],
    boundaries: BoundaryTable,
    relation: Relation,
    entities: Mapping[str, Entity] | None = None,
) -> set[Triple]:
    """Link each region to every boundary entity whose box contains it.

    Boxes are boundary-inclusive. If ``entities`` is given, boundary rows are
    checked against it and must not name a Region.
    """
    regions = list(regions)
    for r in regions:
        if r.coords is None:
            raise PreconditionError(f"region {r.id!r} has no coordinates")
    if entities is not None:
        for eid in boundaries.entity_ids():
            if eid not in entities:
                raise ReferentialIntegrityError(f"boundary references unknown entity {eid!r}")
            if entities[eid].kind == "Region":
                raise ReferentialIntegrityError(f"boundary entity {eid!r} is a Region")

    by_entity: dict[str, list[BoundaryBox]] = {}
    for box in boundaries:
        by_entity.setdefault(box.entity_id, []).extend(box.split())

    out = set()
    for r in regions:
        lat, lon = r.coords
        for eid, boxes in by_entity.items():
            if any(b.lat_min <= lat <= b.lat_max and b.lon_min <= lon <= b.lon_max for b in boxes):
                out.add(Triple(r.id, relation.id, eid, describe_triple(r.id, relation.name, eid)))
    return out


# -------------------------------------------------------------------- retrieval


def k_hop_neighborhood(g: KnowledgeGraph, e: str, k: int = 1) -> set[Triple]:
    """Triples traversed by an undirected breadth-first walk of depth ``k`` from ``e``."""
    g.entity(e)
    if k < 0:
        raise ValueError("k must be nonnegative")
    found: set[Triple] = set()
    depth = {e: 0}
    queue = deque([e])
    while queue:
        node = queue.popleft()
        if depth[node] >= k:
            continue
        for t in g.adjacency[node]:
            found.add(t)
            other = t.tail if t.head == node else t.head
            if other not in depth:
                depth[other] = depth[node] + 1
                queue.append(other)
    return found


def verbalize(
    g: KnowledgeGraph,
    e: str,
    k: int = 1,
    mean_sst: Mapping[str, float] | None = None,
) -> str:
    """Entity description followed by its neighborhood's triple descriptions.

    Triples are rendered in (relation id, head id, tail id) order. Regions get
    their mean historical SST appended to the description when ``mean_sst``
    has an entry for them.
    """
    ent = g.entity(e)
    parts = []
    desc = ent.description.strip()
    if ent.kind == "Region" and mean_sst is not None and e in mean_sst:
        temp = f"Average sea surface temperature {mean_sst[e]:.1f}°C."
        desc = f"{desc} {temp}" if desc else temp
    if desc:
        parts.append(desc)
    for t in sorted(k_hop_neighborhood(g, e, k), key=lambda t: t.canonical_key):
        text = t.description.strip()
        if not text:
            text = describe_triple(t.head, g.relations[t.relation].name, t.tail)
        parts.append(text)
    return " ".join(parts)


def stats(g: KnowledgeGraph) -> GraphStats:
    counts = Counter(e.kind for e in g.entities.values())
    return GraphStats(
        counts=MappingProxyType(dict(counts)),
        entities=len(g.entities),
        relations=len(g.relations),
        triples=len(g.triples),
    )
