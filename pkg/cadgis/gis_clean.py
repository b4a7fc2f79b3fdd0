from dataclasses import replace
import logging
import math
from typing import Dict, List, Optional, Tuple
import numpy as np
from pydantic import BaseModel
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
import shapely
from shapely import STRtree
from .convert import (
    UNCLOSED_RING_CANDIDATE,
    Feature,
    FeatureClass,
    FeatureSet,
    LineStringGeometry,
    PointGeometry,
    PolygonGeometry
)
from .passes import GisPassBase
from .profile import ConversionProfile


logger = logging.getLogger(__name__)


class Dangle(BaseModel):
    feature_id: str
    end: str
    x: float
    y: float
    distance: Optional[float] = None    # None when the network has no other node


class UnclosedRing(BaseModel):
    feature_id: str
    gap: float


class AmbiguousAnnotation(BaseModel):
    annotation_id: str
    label: str
    chosen_id: str
    chosen_distance: float
    runner_up_id: str
    runner_up_distance: float


class TopologyReport(BaseModel):
    snapped_clusters: int = 0
    snapped_nodes: int = 0
    max_move: float = 0.0
    total_move: float = 0.0
    closed_rings: int = 0
    unclosed_rings: List[UnclosedRing] = []
    attached_annotations: int = 0
    orphan_annotations: Optional[int] = None
    ambiguous_annotations: List[AmbiguousAnnotation] = []
    collapsed_polygons: int = 0
    degenerate_collapses: List[str] = []
    collapsed_lines: List[str] = []     # two-vertex lines snapped to zero length
    dangles: Optional[List[Dangle]] = None
    warnings: List[str] = []

    @property
    def mean_move(self) -> float:
        return self.total_move / self.snapped_nodes if self.snapped_nodes else 0.0

    @property
    def dangle_count(self) -> int:
        return len(self.dangles or [])

    def merge(self, other: "TopologyReport") -> "TopologyReport":
        """Combine pass fragments. Orphans and dangles are state, so the later fragment wins."""
        return TopologyReport(
            snapped_clusters=self.snapped_clusters + other.snapped_clusters,
            snapped_nodes=self.snapped_nodes + other.snapped_nodes,
            max_move=max(self.max_move, other.max_move),
            total_move=self.total_move + other.total_move,
            closed_rings=self.closed_rings + other.closed_rings,
            unclosed_rings=self.unclosed_rings + other.unclosed_rings,
            attached_annotations=self.attached_annotations + other.attached_annotations,
            orphan_annotations=other.orphan_annotations if other.orphan_annotations is not None else self.orphan_annotations,
            ambiguous_annotations=self.ambiguous_annotations + other.ambiguous_annotations,
            collapsed_polygons=self.collapsed_polygons + other.collapsed_polygons,
            degenerate_collapses=self.degenerate_collapses + other.degenerate_collapses,
            collapsed_lines=self.collapsed_lines + other.collapsed_lines,
            dangles=other.dangles if other.dangles is not None else self.dangles,
            warnings=self.warnings + other.warnings
        )

    def to_dict(self) -> dict:
        d = self.model_dump()
        d["mean_move"] = self.mean_move
        d["dangle_count"] = self.dangle_count
        return d


# Snapping
def cluster_nodes(points: np.ndarray, tol: float) -> np.ndarray:
    """Single-linkage cluster labels: nodes chained by gaps <= tol share a label."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=int)
    pairs = cKDTree(points).query_pairs(r=tol, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def _network_nodes(fs: FeatureSet, include_points: bool = True) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """Node coordinates plus (feature index, end) refs; end is 0/1 for lines, -1 for points."""
    coords = []
    refs = []
    for i, f in enumerate(fs.features):
        g = f.geometry
        if isinstance(g, LineStringGeometry):
            coords.append(g.start)
            refs.append((i, 0))
            coords.append(g.end)
            refs.append((i, 1))
        elif include_points and isinstance(g, PointGeometry) and f.klass == FeatureClass.POINT:
            coords.append(g.xy)
            refs.append((i, -1))
    return np.asarray(coords, dtype=float).reshape(-1, 2), refs


def snap_endpoints(fs: FeatureSet, tol: float) -> Tuple[FeatureSet, TopologyReport]:
    original, refs = _network_nodes(fs)
    positions = original.copy()

    # repeat until every cluster is a single location
    while len(positions):
        labels = cluster_nodes(positions, tol)
        n = labels.max() + 1
        counts = np.bincount(labels, minlength=n)
        lo = np.full((n, 2), np.inf)
        hi = np.full((n, 2), -np.inf)
        np.minimum.at(lo, labels, positions)
        np.maximum.at(hi, labels, positions)
        spread = (counts > 1) & np.any(lo != hi, axis=1)
        if not spread.any():
            break
        centroids = np.column_stack([
            np.bincount(labels, weights=positions[:, 0], minlength=n),
            np.bincount(labels, weights=positions[:, 1], minlength=n)
        ]) / counts[:, None]
        members = spread[labels]
        positions[members] = centroids[labels[members]]

    displacement = np.hypot(*(positions - original).T) if len(positions) else np.zeros(0)
    changed = np.flatnonzero(np.any(positions != original, axis=1)) if len(positions) else np.zeros(0, dtype=int)

    report = TopologyReport()
    if len(changed) == 0:
        return fs, report

    report.snapped_nodes = int(len(changed))
    report.snapped_clusters = len({tuple(positions[i]) for i in changed})
    report.max_move = float(displacement[changed].max())
    report.total_move = float(displacement[changed].sum())

    features = list(fs.features)
    updates: Dict[int, Dict[int, Tuple[float, float]]] = {}
    for k in changed:
        i, end = refs[k]
        updates.setdefault(i, {})[end] = (float(positions[k][0]), float(positions[k][1]))

    for i, ends in updates.items():
        f = features[i]
        if -1 in ends:
            features[i] = replace(f, geometry=PointGeometry(ends[-1]))
            continue
        coords = list(f.geometry.coords)
        if 0 in ends:
            coords[0] = ends[0]
        if 1 in ends:
            coords[-1] = ends[1]
        if coords[0] == coords[-1] and len(coords) == 2:
            logger.warning(f"{f.id}: snapping collapsed line to zero length")
            report.collapsed_lines.append(f.id)
        features[i] = replace(f, geometry=LineStringGeometry(tuple(coords)))

    logger.info(f"Snapped {report.snapped_nodes} nodes into {report.snapped_clusters} clusters (max move {report.max_move:.6f})")
    return fs.with_features(features), report


# Ring closure
def close_polygons(fs: FeatureSet, tol: float) -> Tuple[FeatureSet, TopologyReport]:
    report = TopologyReport()
    features = []
    for f in fs.features:
        if UNCLOSED_RING_CANDIDATE not in f.flags or not isinstance(f.geometry, LineStringGeometry):
            features.append(f)
            continue
        coords = list(f.geometry.coords)
        gap = math.dist(coords[0], coords[-1])
        if gap <= tol and len(coords) >= 4 and len(set(coords[:-1])) >= 3:
            coords[-1] = coords[0]
            features.append(replace(
                f,
                geometry=PolygonGeometry(tuple(coords)),
                klass=FeatureClass.POLYGON,
                flags=f.flags - {UNCLOSED_RING_CANDIDATE}
            ))
            report.closed_rings += 1
        else:
            report.unclosed_rings.append(UnclosedRing(feature_id=f.id, gap=gap))
            features.append(f)

    if report.closed_rings:
        logger.info(f"Closed {report.closed_rings} rings")
    if report.unclosed_rings:
        logger.warning(f"{len(report.unclosed_rings)} ring candidates remain open")
    return fs.with_features(features), report


# Polygon collapse
def ring_centroid(coords) -> Tuple[Tuple[float, float], bool]:
    """Area-weighted centroid of a closed ring; falls back to the vertex mean for zero area.

    Returns (centroid, degenerate).
    """
    ring = np.asarray(coords, dtype=float)
    origin = ring[0]
    x = ring[:, 0] - origin[0]
    y = ring[:, 1] - origin[1]
    cross = x[:-1] * y[1:] - x[1:] * y[:-1]
    area = cross.sum() / 2.0
    extent = max(float(np.ptp(x)), float(np.ptp(y)))
    if extent == 0.0 or abs(area) <= 1e-12 * extent * extent:
        m = ring[:-1].mean(axis=0)
        return (float(m[0]), float(m[1])), True
    cx = ((x[:-1] + x[1:]) * cross).sum() / (6.0 * area)
    cy = ((y[:-1] + y[1:]) * cross).sum() / (6.0 * area)
    return (float(cx + origin[0]), float(cy + origin[1])), False


def collapse_redundant_polygons(fs: FeatureSet, profile: ConversionProfile) -> Tuple[FeatureSet, TopologyReport]:
    report = TopologyReport()
    features = []
    for f in fs.features:
        if not isinstance(f.geometry, PolygonGeometry) or not profile.collapses(f.layer):
            features.append(f)
            continue
        centroid, degenerate = ring_centroid(f.geometry.coords)
        if degenerate:
            message = f"{f.id}: zero-area ring collapsed to vertex mean"
            logger.warning(message)
            report.warnings.append(message)
            report.degenerate_collapses.append(f.id)
        features.append(replace(f, geometry=PointGeometry(centroid), klass=FeatureClass.POINT))
        report.collapsed_polygons += 1

    if report.collapsed_polygons:
        logger.info(f"Collapsed {report.collapsed_polygons} polygons to points")
    return fs.with_features(features), report


# Annotation transfer
def _label_key(attributes: Dict[str, str]) -> str:
    if "label" not in attributes:
        return "label"
    n = 2
    while f"label_{n}" in attributes:
        n += 1
    return f"label_{n}"


def attach_annotations(fs: FeatureSet, tol: float) -> Tuple[FeatureSet, TopologyReport]:
    report = TopologyReport()
    features = list(fs.features)
    target_idx = [i for i, f in enumerate(features) if f.klass != FeatureClass.ANNOTATION]
    annotation_idx = sorted(
        (i for i, f in enumerate(features) if f.klass == FeatureClass.ANNOTATION),
        key=lambda i: features[i].id
    )

    tree = STRtree([features[i].geometry.to_shapely() for i in target_idx]) if target_idx else None

    attributes = {i: dict(features[i].attributes) for i in target_idx}
    for ai in annotation_idx:
        a = features[ai]
        if "attached_to" in a.attributes or tree is None:
            continue
        point = a.geometry.to_shapely()
        hits = tree.query(point, predicate="dwithin", distance=tol)
        if len(hits) == 0:
            continue
        distances = shapely.distance(point, tree.geometries.take(hits))
        ranked = sorted((float(d), features[target_idx[h]].id, target_idx[h]) for d, h in zip(distances, hits))
        distance, chosen_id, chosen = ranked[0]
        if len(ranked) > 1:
            report.ambiguous_annotations.append(AmbiguousAnnotation(
                annotation_id=a.id,
                label=a.attributes["label"],
                chosen_id=chosen_id,
                chosen_distance=distance,
                runner_up_id=ranked[1][1],
                runner_up_distance=ranked[1][0]
            ))
        key = _label_key(attributes[chosen])
        attributes[chosen][key] = a.attributes["label"]
        features[ai] = replace(a, attributes={**a.attributes, "attached_to": chosen_id})
        report.attached_annotations += 1

    for i in target_idx:
        if attributes[i] != features[i].attributes:
            features[i] = replace(features[i], attributes=attributes[i])

    report.orphan_annotations = sum(1 for i in annotation_idx if "attached_to" not in features[i].attributes)
    if report.attached_annotations:
        logger.info(f"Attached {report.attached_annotations} annotations ({len(report.ambiguous_annotations)} ambiguous)")
    if report.orphan_annotations:
        logger.warning(f"{report.orphan_annotations} annotations have no feature within {tol}")
    return fs.with_features(features), report


# Network validation
def validate_network(fs: FeatureSet, dangle_tol: float) -> TopologyReport:
    """List LineString endpoints that meet no other node within dangle_tol.

    Nodes are LineString endpoints and point-class features. A line's own
    opposite endpoint counts as another node.
    """
    coords, refs = _network_nodes(fs)
    dangles = []
    if len(coords):
        # k=2: the first hit is the node itself, missing neighbours come back as inf
        distances, _ = cKDTree(coords).query(coords, k=2)
        for n, (i, end) in enumerate(refs):
            if end == -1:
                continue
            nearest = float(distances[n][1])
            if nearest > dangle_tol:
                f = fs.features[i]
                dangles.append(Dangle(
                    feature_id=f.id,
                    end="start" if end == 0 else "end",
                    x=float(coords[n][0]),
                    y=float(coords[n][1]),
                    distance=nearest if math.isfinite(nearest) else None
                ))

    dangles.sort(key=lambda d: (d.feature_id, d.end != "start"))
    orphans = sum(
        1 for f in fs.features
        if f.klass == FeatureClass.ANNOTATION and "attached_to" not in f.attributes
    )
    if dangles:
        logger.warning(f"{len(dangles)} dangling endpoints")
    return TopologyReport(dangles=dangles, orphan_annotations=orphans)


# Pass wrappers
class SnapEndpointsPass(GisPassBase):
    name = "snap"

    def apply(self, fs: FeatureSet, profile: ConversionProfile) -> Tuple[FeatureSet, TopologyReport]:
        return snap_endpoints(fs, profile.tolerances.snap)


class ClosePolygonsPass(GisPassBase):
    name = "close"

    def apply(self, fs: FeatureSet, profile: ConversionProfile) -> Tuple[FeatureSet, TopologyReport]:
        return close_polygons(fs, profile.tolerances.ring_close)


class CollapsePolygonsPass(GisPassBase):
    name = "collapse"

    def apply(self, fs: FeatureSet, profile: ConversionProfile) -> Tuple[FeatureSet, TopologyReport]:
        return collapse_redundant_polygons(fs, profile)


class AttachAnnotationsPass(GisPassBase):
    name = "attach"

    def apply(self, fs: FeatureSet, profile: ConversionProfile) -> Tuple[FeatureSet, TopologyReport]:
        return attach_annotations(fs, profile.tolerances.annotation_attach)


class ValidateNetworkPass(GisPassBase):
    name = "validate"

    def apply(self, fs: FeatureSet, profile: ConversionProfile) -> Tuple[FeatureSet, TopologyReport]:
        return fs, validate_network(fs, profile.tolerances.dangle)


def default_gis_passes() -> List[GisPassBase]:
    return [SnapEndpointsPass(), ClosePolygonsPass(), CollapsePolygonsPass(), AttachAnnotationsPass(), ValidateNetworkPass()]
