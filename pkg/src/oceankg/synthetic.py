"""Synthetic graphs and SST datasets for tests, benchmarks and the CLI.

Three generators:

* ``translational_graph``: entities in groups, each relation linking one
  group to the next, so held-out tails are predictable by a translation.
* ``ocean_graph``: a 5-degree global grid mapped onto oceans, seas, currents
  and monsoons through bounding boxes, padded with region adjacency so the
  totals hit the declared counts exactly.
* ``correlated_dataset``: a small ocean patch whose series trend depends on
  the current influencing each region, with a matching graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SyntheticConfig
from .data import SSTMatrix, format_region_id
from .graph import (
    BoundaryBox,
    BoundaryTable,
    Entity,
    KnowledgeGraph,
    Relation,
    Triple,
    build_region_mapping,
    describe_triple,
)

STANDARD_RELATIONS = (
    Relation("located_in", "located_in", "region lies within a sea area"),
    Relation("part_of", "part_of", "sea area or feature belongs to an ocean"),
    Relation("influenced_by", "influenced_by", "region is affected by a current or monsoon"),
    Relation("adjacent_to", "adjacent_to", "regions share a grid edge"),
    Relation("has_temperature", "has_temperature", "region temperature attribute"),
)

# entity counts of the curated ocean graph (per kind) and its triple total
OCEAN_GRAPH_COUNTS = {"Region": 1715, "Current": 22, "Monsoon": 5, "Ocean": 6, "Sea": 81}
OCEAN_GRAPH_TRIPLES = 4602


region_id = format_region_id


def translational_graph(
    n_groups: int = 5,
    group_size: int = 10,
    n_triples: int = 200,
    seed: int = 0,
) -> KnowledgeGraph:
    """Relation ``r{j}`` links group ``j`` heads to group ``j+1`` tails."""
    rng = np.random.default_rng(seed)
    ents = [
        Entity(f"e{g}_{i:02d}", "Sea", f"entity {i} of group {g}")
        for g in range(n_groups)
        for i in range(group_size)
    ]
    rels = [Relation(f"r{j}", f"rel_{j}") for j in range(n_groups)]
    per_rel = n_triples // n_groups
    triples = []
    for j in range(n_groups):
        src, dst = j, (j + 1) % n_groups
        pairs = [(a, b) for a in range(group_size) for b in range(group_size)]
        pick = rng.choice(len(pairs), size=min(per_rel, len(pairs)), replace=False)
        for p in sorted(pick):
            a, b = pairs[p]
            triples.append(Triple(f"e{src}_{a:02d}", f"r{j}", f"e{dst}_{b:02d}"))
    return KnowledgeGraph(ents, rels, triples)


def split_triples(g: KnowledgeGraph, holdout: float = 0.1, seed: int = 0):
    """Random (train, test) split of the triples in canonical order."""
    triples = sorted(g.triples, key=lambda t: t.key)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(triples))
    n_test = int(round(holdout * len(triples)))
    test = [triples[i] for i in sorted(order[:n_test])]
    train = [triples[i] for i in sorted(order[n_test:])]
    return train, test


# ------------------------------------------------------------------ ocean graph

# crude continental masks (lat_min, lat_max, lon_min, lon_max)
_LAND = (
    (-30, 32, -12, 45),     # Africa
    (22, 68, 70, 130),      # Asia
    (42, 68, 0, 60),        # Europe
    (-32, -18, 120, 148),   # Australia
    (25, 65, -125, -65),    # North America
    (-50, 5, -75, -40),     # South America
    (-90, -77, -180, 180),  # Antarctica
    (65, 80, -60, -25),     # Greenland
)

_OCEANS = (
    ("pacific", "Pacific Ocean", [(-60, 65, 120, 180), (-60, 65, -180, -70)]),
    ("atlantic", "Atlantic Ocean", [(-60, 65, -70, 20)]),
    ("indian", "Indian Ocean", [(-60, 30, 20, 120)]),
    ("southern", "Southern Ocean", [(-90, -60, -180, 180)]),
    ("arctic", "Arctic Ocean", [(65, 90, -180, 180)]),
    ("mediterranean", "Mediterranean and marginal seas", [(30, 46, -6, 36)]),
)


def _is_land(lat: float, lon: float) -> bool:
    return any(a <= lat <= b and c <= lon <= d for a, b, c, d in _LAND)


def _ocean_of(lat: float, lon: float) -> str:
    for oid, _, boxes in _OCEANS:
        if any(a <= lat <= b and c <= lon <= d for a, b, c, d in boxes):
            return oid
    return "pacific"


@dataclass
class OceanGraphBundle:
    graph: KnowledgeGraph
    boundaries: BoundaryTable
    declared_counts: dict
    declared_triples: int


def ocean_graph(seed: int = 0, counts: dict | None = None, n_triples: int | None = None) -> OceanGraphBundle:
    """Global 5-degree ocean graph with exactly the declared entity and triple counts."""
    counts = dict(OCEAN_GRAPH_COUNTS if counts is None else counts)
    n_triples = OCEAN_GRAPH_TRIPLES if n_triples is None else n_triples
    rng = np.random.default_rng(seed)

    cells = [
        (lat, lon)
        for lat in np.arange(-87.5, 90, 5.0)
        for lon in np.arange(-177.5, 180, 5.0)
        if not _is_land(lat, lon)
    ]
    # keep the cells nearest the equator, ties broken by longitude
    cells.sort(key=lambda c: (abs(c[0]), c[0], c[1]))
    if len(cells) < counts["Region"]:
        raise ValueError(f"grid has only {len(cells)} ocean cells")
    cells = sorted(cells[: counts["Region"]])
    regions = [
        Entity(region_id(lat, lon), "Region", f"Ocean grid cell centred at {lat:g}N {lon:g}E.", (float(lat), float(lon)))
        for lat, lon in cells
    ]

    def boxes_around(prefix, n, half_lat, half_lon):
        out = []
        for i in range(n):
            lat0, lon0 = cells[int(rng.integers(len(cells)))]
            la, lo = float(rng.uniform(*half_lat)), float(rng.uniform(*half_lon))
            lo_min, lo_max = lon0 - lo, lon0 + lo
            wraps = False
            if lo_min < -180:
                lo_min, wraps = lo_min + 360, True
            if lo_max > 180:
                lo_max, wraps = lo_max - 360, True
            out.append(
                BoundaryBox(f"{prefix}{i:02d}", max(-90.0, lat0 - la), min(90.0, lat0 + la), lo_min, lo_max, wraps)
            )
        return out

    n_oceans = counts["Ocean"]
    oceans = [Entity(oid, "Ocean", name) for oid, name, _ in _OCEANS[:n_oceans]]
    seas_boxes = boxes_around("sea", counts["Sea"], (3, 8), (4, 12))
    current_boxes = boxes_around("current", counts["Current"], (4, 10), (10, 30))
    monsoon_boxes = boxes_around("monsoon", counts["Monsoon"], (10, 20), (20, 40))
    seas = [Entity(b.entity_id, "Sea", f"Sea area {b.entity_id}.") for b in seas_boxes]
    currents = [Entity(b.entity_id, "Current", f"Ocean current {b.entity_id}.") for b in current_boxes]
    monsoons = [Entity(b.entity_id, "Monsoon", f"Monsoon system {b.entity_id}.") for b in monsoon_boxes]
    boundaries = BoundaryTable(seas_boxes + current_boxes + monsoon_boxes)

    rel = {r.name: r for r in STANDARD_RELATIONS}
    triples: set[Triple] = set()
    triples |= build_region_mapping(regions, BoundaryTable(seas_boxes), rel["located_in"])
    triples |= build_region_mapping(regions, BoundaryTable(current_boxes + monsoon_boxes), rel["influenced_by"])
    ocean_ids = {o.id for o in oceans}
    for feature, box in [(b.entity_id, b) for b in seas_boxes + current_boxes + monsoon_boxes]:
        lat_c = (box.lat_min + box.lat_max) / 2
        lon_c = box.lon_min if box.wraps_antimeridian else (box.lon_min + box.lon_max) / 2
        oid = _ocean_of(lat_c, lon_c)
        oid = oid if oid in ocean_ids else oceans[0].id
        triples.add(Triple(feature, "part_of", oid, describe_triple(feature, "part_of", oid)))
    for r in regions:
        oid = _ocean_of(*r.coords)
        oid = oid if oid in ocean_ids else oceans[0].id
        triples.add(Triple(r.id, "part_of", oid, describe_triple(r.id, "part_of", oid)))

    if len(triples) > n_triples:
        # drop mapping triples deterministically until the budget fits
        extra = sorted(t for t in triples if t.relation == "influenced_by")
        keep_out = set(extra[: len(triples) - n_triples])
        triples -= keep_out

    # pad with east-west then north-south adjacency in grid order
    cell_set = {region_id(lat, lon) for lat, lon in cells}
    candidates = []
    for lat, lon in cells:
        for dlat, dlon in ((0, 5), (5, 0)):
            lon2 = lon + dlon
            lon2 = lon2 - 360 if lon2 > 180 else lon2
            other = region_id(lat + dlat, lon2)
            if other in cell_set:
                a = region_id(lat, lon)
                candidates.append(Triple(a, "adjacent_to", other, describe_triple(a, "adjacent_to", other)))
    need = n_triples - len(triples)
    if need > len(candidates):
        raise ValueError("not enough adjacency candidates to reach the triple target")
    triples |= set(candidates[:need])

    g = KnowledgeGraph(regions + oceans + seas + currents + monsoons, STANDARD_RELATIONS, triples)
    return OceanGraphBundle(g, boundaries, counts, n_triples)


# ------------------------------------------------------------ correlated data


def _trend_word(slope: float) -> str:
    return "warming" if slope > 0 else "cooling" if slope < 0 else "neutral"


@dataclass
class CorrelatedDataset:
    graph: KnowledgeGraph
    data: SSTMatrix
    boundaries: BoundaryTable
    cluster: dict[str, str]
    slopes: dict[str, float]


def correlated_dataset(cfg: SyntheticConfig | None = None) -> CorrelatedDataset:
    """Grid patch whose per-region trend is set by the influencing current.

    Series = latitude baseline + hemispheric seasonal cycle (52 steps) +
    current-specific linear trend + white noise. The graph links every region
    to its current, sea, ocean, monsoon and grid neighbours, so a region's
    knowledge embedding identifies its trend.
    """
    cfg = cfg or SyntheticConfig()
    rng = np.random.default_rng(cfg.seed)
    lat0, lon0, step = -10.0, 150.0, 5.0
    cells = [(lat0 + step * r, lon0 + step * c, c) for r in range(cfg.rows) for c in range(cfg.cols)]
    regions = [
        Entity(region_id(lat, lon), "Region", f"Ocean grid cell centred at {lat:g}N {lon:g}E.", (lat, lon))
        for lat, lon, _ in cells
    ]
    lat_lo, lat_hi = lat0 - step / 2, lat0 + step * (cfg.rows - 0.5)

    n_cur = cfg.n_currents
    levels = np.linspace(-1.0, 1.0, n_cur) if n_cur > 1 else np.zeros(1)
    slopes = {f"current_{k}": float(cfg.trend_scale * levels[k]) for k in range(n_cur)}
    current_boxes = []
    for k in range(n_cur):
        cols = [c for c in range(cfg.cols) if c * n_cur // cfg.cols == k]
        if not cols:
            continue
        current_boxes.append(BoundaryBox(
            f"current_{k}", lat_lo, lat_hi,
            lon0 + step * (min(cols) - 0.5), lon0 + step * (max(cols) + 0.5) - 1e-6,
        ))
    currents = [
        Entity(b.entity_id, "Current", f"Ocean current {b.entity_id} with a {_trend_word(slopes[b.entity_id])} trend.")
        for b in current_boxes
    ]
    mid_lat = lat0 + step * (cfg.rows - 1) / 2
    sea_boxes = [
        BoundaryBox("sea_south", -90.0, mid_lat, -180.0, 180.0),
        BoundaryBox("sea_north", mid_lat + 1e-6, 90.0, -180.0, 180.0),
    ]
    seas = [Entity("sea_south", "Sea", "Southern sea area of the patch."),
            Entity("sea_north", "Sea", "Northern sea area of the patch.")]
    monsoon_box = BoundaryBox("monsoon_0", mid_lat + 1e-6, 90.0, -180.0, 180.0)
    monsoons = [Entity("monsoon_0", "Monsoon", "Seasonal monsoon over the northern rows.")]
    ocean = Entity("pacific", "Ocean", "Pacific Ocean.")

    rel = {r.name: r for r in STANDARD_RELATIONS}
    triples = set()
    triples |= build_region_mapping(regions, BoundaryTable(sea_boxes), rel["located_in"])
    triples |= build_region_mapping(regions, BoundaryTable(current_boxes + [monsoon_box]), rel["influenced_by"])
    for feature in seas + currents + monsoons:
        triples.add(Triple(feature.id, "part_of", ocean.id, describe_triple(feature.id, "part_of", ocean.id)))
    ids = {(lat, lon): region_id(lat, lon) for lat, lon, _ in cells}
    for lat, lon, _ in cells:
        for dlat, dlon in ((0.0, step), (step, 0.0)):
            other = ids.get((lat + dlat, lon + dlon))
            if other:
                a = ids[(lat, lon)]
                triples.add(Triple(a, "adjacent_to", other, describe_triple(a, "adjacent_to", other)))
    cluster = {}
    for t in triples:
        if t.relation == "influenced_by" and t.tail.startswith("current_"):
            cluster[t.head] = t.tail
    # lead each region text with its current so the cue survives token truncation
    regions = [
        Entity(e.id, e.kind, f"Grid cell under {_trend_word(slopes[cluster[e.id]])} {cluster[e.id]}.", e.coords)
        for e in regions
    ]
    graph = KnowledgeGraph(regions + seas + currents + monsoons + [ocean], STANDARD_RELATIONS, triples)
    t_idx = np.arange(cfg.t_total)
    values = []
    for (lat, lon, _), ent in zip(cells, regions):
        base = 28.0 - 0.25 * abs(lat)
        phase = 0.0 if lat >= 0 else np.pi
        seasonal = cfg.seasonal_amplitude * np.sin(2 * np.pi * t_idx / 52.0 + phase)
        trend = slopes[cluster[ent.id]] * (t_idx - cfg.t_total / 2)
        values.append(base + seasonal + trend + rng.normal(0.0, cfg.noise, cfg.t_total))
    stamps = [f"w{t:04d}" for t in t_idx]
    data = SSTMatrix(np.array(values), [e.id for e in regions], stamps)
    bounds = BoundaryTable(sea_boxes + current_boxes + [monsoon_box])
    return CorrelatedDataset(graph, data, bounds, cluster, slopes)
