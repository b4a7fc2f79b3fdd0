from dataclasses import dataclass, field, replace
from enum import Enum
import logging
import math
from typing import Callable, Dict, FrozenSet, List, Optional, Tuple, Union
import numpy as np
from shapely.geometry import LineString, Point, Polygon
from .cad_model import ArcGeometry, CadDocument, CadEntity, CircleGeometry, EntityKind, XY
from .passes import GeometryException
from .profile import ConversionProfile, CrsInfo, LayerAction, LayerRule


logger = logging.getLogger(__name__)

UNCLOSED_RING_CANDIDATE = "unclosed-ring-candidate"


class FeatureClass(str, Enum):
    POINT = "point"
    LINE = "line"
    POLYGON = "polygon"
    ANNOTATION = "annotation"


# Geometries
@dataclass(frozen=True)
class PointGeometry:
    xy: XY
    type_name = "Point"

    @property
    def coords(self) -> Tuple[XY, ...]:
        return (self.xy,)

    def with_coords(self, coords) -> "PointGeometry":
        return PointGeometry(tuple(coords[0]))

    def to_shapely(self):
        return Point(self.xy)


@dataclass(frozen=True)
class LineStringGeometry:
    coords: Tuple[XY, ...]
    type_name = "LineString"

    def __post_init__(self):
        if len(self.coords) < 2:
            raise GeometryException("LineString needs at least 2 vertices")

    @property
    def start(self) -> XY:
        return self.coords[0]

    @property
    def end(self) -> XY:
        return self.coords[-1]

    def with_coords(self, coords) -> "LineStringGeometry":
        return LineStringGeometry(tuple(tuple(c) for c in coords))

    def to_shapely(self):
        return LineString(self.coords)


@dataclass(frozen=True)
class PolygonGeometry:
    """Outer ring only, first vertex repeated at the end."""
    coords: Tuple[XY, ...]
    type_name = "Polygon"

    def __post_init__(self):
        if len(self.coords) < 4:
            raise GeometryException("Polygon ring needs at least 4 vertices")
        if self.coords[0] != self.coords[-1]:
            raise GeometryException("Polygon ring is not closed")

    def with_coords(self, coords) -> "PolygonGeometry":
        coords = [tuple(c) for c in coords]
        coords[-1] = coords[0]
        return PolygonGeometry(tuple(coords))

    def to_shapely(self):
        return Polygon(self.coords)


FeatureGeometry = Union[PointGeometry, LineStringGeometry, PolygonGeometry]


@dataclass(frozen=True)
class Feature:
    id: str
    geometry: FeatureGeometry
    attributes: Dict[str, str]
    klass: FeatureClass
    flags: FrozenSet[str] = frozenset()

    def __post_init__(self):
        if self.klass == FeatureClass.ANNOTATION:
            if not isinstance(self.geometry, PointGeometry) or "label" not in self.attributes:
                raise GeometryException(f"annotation {self.id} must be a Point with a label")

    @property
    def layer(self) -> str:
        return self.attributes.get("layer", "")

    def transformed(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Feature":
        mapped = fn(np.asarray(self.geometry.coords, dtype=float))
        return replace(self, geometry=self.geometry.with_coords([(float(x), float(y)) for x, y in mapped]))


@dataclass(frozen=True)
class FeatureSet:
    features: Tuple[Feature, ...] = ()
    crs: Optional[CrsInfo] = None
    georeferenced: bool = False

    def __post_init__(self):
        if self.georeferenced and self.crs is None:
            raise GeometryException("a georeferenced FeatureSet needs a CRS")
        ids = [f.id for f in self.features]
        if len(set(ids)) != len(ids):
            raise GeometryException("feature ids must be unique")

    def __len__(self) -> int:
        return len(self.features)

    def with_features(self, features) -> "FeatureSet":
        return replace(self, features=tuple(features))

    def of_class(self, klass: FeatureClass) -> "FeatureSet":
        return self.with_features(f for f in self.features if f.klass == klass)

    def counts(self) -> Dict[str, int]:
        counts = {k.value: 0 for k in FeatureClass}
        for f in self.features:
            counts[f.klass.value] += 1
        return counts


@dataclass
class ConversionResult:
    features: FeatureSet
    reference: FeatureSet
    collapsed_circles: int = 0
    unclosed_candidates: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    unsupported_skipped: int = 0
    dropped: int = 0

    @property
    def converted(self) -> int:
        return len(self.features) + len(self.reference)

    def summary(self) -> dict:
        return {
            "counts": self.features.counts(),
            "reference": len(self.reference),
            "collapsed_circles": self.collapsed_circles,
            "unclosed_candidates": list(self.unclosed_candidates),
            "unsupported_skipped": self.unsupported_skipped,
            "dropped": self.dropped,
            "converted": self.converted,
        }


def tessellate_arc(geom: Union[ArcGeometry, CircleGeometry], chord_tol: float) -> List[XY]:
    """Vertices along an arc or circle with sagitta at most chord_tol.

    Vertices are equally spaced in angle. A circle or a full-turn arc yields a
    closed chain (last vertex equals the first).
    """
    if geom.radius <= 0:
        raise GeometryException(f"radius must be positive, got {geom.radius}")
    if chord_tol <= 0:
        raise GeometryException(f"chord tolerance must be positive, got {chord_tol}")

    full = isinstance(geom, CircleGeometry)
    sweep_deg = 360.0 if full else geom.sweep
    if sweep_deg == 0.0:
        raise GeometryException("arc has zero sweep")
    start_deg = 0.0 if full else geom.start_angle

    r = geom.radius
    tol = min(chord_tol, r)
    max_step = 2.0 * math.acos(1.0 - tol / r)
    sweep = math.radians(sweep_deg)
    n = max(2, math.ceil(sweep / max_step - 1e-12))
    ring = sweep_deg == 360.0
    if ring:
        n = max(8, n)

    cx, cy = geom.center
    start = math.radians(start_deg)
    step = sweep / n
    vertices = [(cx + r * math.cos(start + k * step), cy + r * math.sin(start + k * step)) for k in range(n)]
    if ring:
        vertices.append(vertices[0])
    else:
        end = math.radians(start_deg + sweep_deg)
        vertices.append((cx + r * math.cos(end), cy + r * math.sin(end)))
    return vertices


def _closed_coords(vertices: Tuple[XY, ...]) -> Tuple[XY, ...]:
    return tuple(vertices) + (vertices[0],)


def _vertex_mean(vertices) -> XY:
    a = np.asarray(vertices, dtype=float)
    m = a.mean(axis=0)
    return (float(m[0]), float(m[1]))


class _Converter:
    def __init__(self, profile: ConversionProfile):
        self.profile = profile
        self.warnings: List[str] = []
        self.collapsed_circles = 0
        self.unclosed: List[str] = []

    def _warn(self, message: str):
        logger.warning(message)
        self.warnings.append(message)

    def _natural(self, e: CadEntity) -> Tuple[FeatureGeometry, FeatureClass, FrozenSet[str]]:
        g = e.geometry
        tol = self.profile.tolerances.arc_chord
        if e.kind == EntityKind.TEXT:
            return PointGeometry(g.insert), FeatureClass.ANNOTATION, frozenset()
        if e.kind == EntityKind.CIRCLE:
            return PolygonGeometry(tuple(tessellate_arc(g, tol))), FeatureClass.POLYGON, frozenset()
        if e.kind == EntityKind.ARC:
            return LineStringGeometry(tuple(tessellate_arc(g, tol))), FeatureClass.LINE, frozenset()
        if e.closed:
            return PolygonGeometry(_closed_coords(e.vertices)), FeatureClass.POLYGON, frozenset()
        return LineStringGeometry(tuple(e.vertices)), FeatureClass.LINE, frozenset()

    def _as_polygon(self, e: CadEntity) -> Tuple[FeatureGeometry, FeatureClass, FrozenSet[str]]:
        g = e.geometry
        if e.kind == EntityKind.CIRCLE:
            return PolygonGeometry(tuple(tessellate_arc(g, self.profile.tolerances.arc_chord))), FeatureClass.POLYGON, frozenset()
        if e.closed:
            return PolygonGeometry(_closed_coords(e.vertices)), FeatureClass.POLYGON, frozenset()
        vertices = e.vertices
        if e.kind == EntityKind.POLYLINE and len(set(vertices)) >= 3:
            if vertices[0] == vertices[-1]:
                return PolygonGeometry(tuple(vertices)), FeatureClass.POLYGON, frozenset()
            return LineStringGeometry(tuple(vertices)), FeatureClass.LINE, frozenset([UNCLOSED_RING_CANDIDATE])
        geometry, klass, flags = self._natural(e)
        self._warn(f"{e.handle}: {e.kind.value} on layer '{e.layer}' cannot form a polygon, kept as {klass.value}")
        return geometry, klass, flags

    def _as_point(self, e: CadEntity, rule: LayerRule, attributes: Dict[str, str]) -> Tuple[FeatureGeometry, FeatureClass, FrozenSet[str]]:
        g = e.geometry
        if e.kind in (EntityKind.CIRCLE, EntityKind.ARC):
            attributes["radius"] = "%.9f" % g.radius
            self.collapsed_circles += 1
            return PointGeometry(g.center), FeatureClass.POINT, frozenset()
        if rule.collapse == "centroid" and e.kind == EntityKind.POLYLINE:
            # ring collapse happens after georeferencing
            return self._as_polygon(e)
        return PointGeometry(_vertex_mean(e.vertices)), FeatureClass.POINT, frozenset()

    def _as_line(self, e: CadEntity) -> Tuple[FeatureGeometry, FeatureClass, FrozenSet[str]]:
        g = e.geometry
        if e.kind in (EntityKind.CIRCLE, EntityKind.ARC):
            return LineStringGeometry(tuple(tessellate_arc(g, self.profile.tolerances.arc_chord))), FeatureClass.LINE, frozenset()
        if e.closed:
            return LineStringGeometry(_closed_coords(e.vertices)), FeatureClass.LINE, frozenset()
        return LineStringGeometry(tuple(e.vertices)), FeatureClass.LINE, frozenset()

    def feature(self, e: CadEntity, rule: LayerRule, fid: str, reference: bool) -> Feature:
        attributes = {"layer": e.layer, "handle": e.handle}
        attributes.update(rule.attributes)

        if e.kind == EntityKind.TEXT:
            attributes["label"] = e.geometry.content
            geometry, klass, flags = self._natural(e)
        elif reference:
            geometry, klass, flags = self._natural(e)
        elif rule.action == LayerAction.POINT:
            geometry, klass, flags = self._as_point(e, rule, attributes)
        elif rule.action == LayerAction.POLYGON:
            geometry, klass, flags = self._as_polygon(e)
        elif rule.action == LayerAction.LINE:
            geometry, klass, flags = self._as_line(e)
        else:
            geometry, klass, flags = self._natural(e)
            self._warn(f"{e.handle}: {e.kind.value} on annotation layer '{e.layer}' kept as {klass.value}")

        if UNCLOSED_RING_CANDIDATE in flags:
            self.unclosed.append(fid)
        return Feature(id=fid, geometry=geometry, attributes=attributes, klass=klass, flags=flags)


def convert_document(doc: CadDocument, profile: ConversionProfile) -> ConversionResult:
    """Map cleaned CAD entities onto point, line, polygon and annotation features.

    Feature order follows entity order. Reference-only entities land in the
    parallel reference set and never in the output.
    """
    converter = _Converter(profile)
    features = []
    reference = []
    unsupported = 0
    dropped = 0

    for e in doc.entities:
        if e.kind == EntityKind.UNSUPPORTED:
            unsupported += 1
            continue
        rule = profile.match_rule(e.layer)
        if rule is None or rule.action == LayerAction.DROP:
            dropped += 1
            continue
        is_reference = rule.action == LayerAction.REFERENCE_ONLY or e.handle in doc.reference_handles
        if is_reference:
            reference.append(converter.feature(e, rule, f"R{len(reference) + 1:06d}", True))
        else:
            features.append(converter.feature(e, rule, f"F{len(features) + 1:06d}", False))

    if unsupported:
        logger.warning(f"Skipped {unsupported} unsupported entities")
    if dropped:
        logger.warning(f"Skipped {dropped} entities on drop layers at conversion")

    result = ConversionResult(
        features=FeatureSet(tuple(features)),
        reference=FeatureSet(tuple(reference)),
        collapsed_circles=converter.collapsed_circles,
        unclosed_candidates=converter.unclosed,
        warnings=converter.warnings,
        unsupported_skipped=unsupported,
        dropped=dropped
    )
    logger.info(f"Step 3: converted {len(features)} features ({result.features.counts()}), {len(reference)} reference features")
    return result
