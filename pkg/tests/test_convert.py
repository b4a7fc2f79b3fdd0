import pytest
import json
import math
from cadgis.cad_model import ArcGeometry, CadDocument, CadEntity, CircleGeometry, EntityKind, LineGeometry, PolylineGeometry, TextGeometry, UnsupportedGeometry
from cadgis.convert import (
    UNCLOSED_RING_CANDIDATE,
    Feature,
    FeatureClass,
    FeatureSet,
    LineStringGeometry,
    PointGeometry,
    PolygonGeometry,
    convert_document,
    tessellate_arc
)
from cadgis.passes import GeometryException
from cadgis.profile import CrsInfo, load_profile


@pytest.fixture
def profile():
    return load_profile(json.dumps({
        "rules": [
            {"match": "SEWER", "action": "line", "attributes": {"system": "sanitary"}},
            {"match": "MH", "action": "point", "collapse": "centroid"},
            {"match": "VALVE", "action": "point"},
            {"match": "CB", "action": "polygon"},
            {"match": "TEXT", "action": "annotation"},
            {"match": "BLDG", "action": "reference-only"},
            {"match": "SIDEWALK", "action": "drop"},
        ],
        "crs": {"epsg": 26971},
    }))


def entity(handle, layer, kind, geometry):
    return CadEntity(handle, layer, kind, geometry)


def sagitta(vertices, radius):
    worst = 0.0
    for a, b in zip(vertices, vertices[1:]):
        chord = math.dist(a, b)
        worst = max(worst, radius - math.sqrt(max(0.0, radius * radius - chord * chord / 4.0)))
    return worst


@pytest.mark.parametrize("radius,tol", [(1.0, 0.05), (10.0, 0.05), (0.6, 0.01), (250.0, 0.001)])
def test_tessellate_circle(radius, tol):
    vertices = tessellate_arc(CircleGeometry((3.0, -2.0), radius), tol)

    assert vertices[0] == vertices[-1]
    assert len(vertices) >= 9
    for x, y in vertices:
        assert math.hypot(x - 3.0, y + 2.0) == pytest.approx(radius)
    assert sagitta(vertices, radius) <= tol + 1e-9
    # minimal: one fewer segment would exceed the tolerance
    n = len(vertices) - 1
    if n > 8:
        coarser = 2.0 * radius * math.sin(math.pi / (n - 1))
        assert radius - math.sqrt(radius * radius - coarser * coarser / 4.0) > tol


def test_tessellate_arc_endpoints():
    arc = ArcGeometry((0.0, 0.0), 1.0, 0.0, 90.0)
    vertices = tessellate_arc(arc, 0.05)

    assert vertices[0] == pytest.approx((1.0, 0.0))
    assert vertices[-1] == pytest.approx((0.0, 1.0))
    assert len(vertices) == 4
    assert sagitta(vertices, 1.0) <= 0.05


def test_tessellate_arc_wraps():
    # 350 -> 10 degrees sweeps 20 degrees through 0
    vertices = tessellate_arc(ArcGeometry((0.0, 0.0), 5.0, 350.0, 10.0), 0.5)
    assert len(vertices) == 3
    assert vertices[1] == pytest.approx((5.0, 0.0))


@pytest.mark.parametrize("start,end", [(0.0, 360.0), (45.0, 405.0), (90.0, -270.0)])
def test_tessellate_full_turn_arc(start, end):
    vertices = tessellate_arc(ArcGeometry((0.0, 0.0), 1.0, start, end), 0.05)

    assert len(vertices) == 11
    assert vertices[-1] == vertices[0]
    assert vertices[0] == pytest.approx((math.cos(math.radians(start)), math.sin(math.radians(start))))
    assert sagitta(vertices, 1.0) <= 0.05


def test_tessellate_tiny_radius():
    vertices = tessellate_arc(CircleGeometry((0.0, 0.0), 0.01), 0.05)
    assert len(vertices) == 9


def test_tessellate_invalid():
    with pytest.raises(GeometryException):
        tessellate_arc(ArcGeometry((0.0, 0.0), 1.0, 30.0, 30.0), 0.05)
    with pytest.raises(GeometryException):
        tessellate_arc(CircleGeometry((0.0, 0.0), 1.0), 0.0)


def test_geometry_invariants():
    with pytest.raises(GeometryException):
        LineStringGeometry(((0.0, 0.0),))
    with pytest.raises(GeometryException):
        PolygonGeometry(((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))
    with pytest.raises(GeometryException):
        Feature("F1", LineStringGeometry(((0.0, 0.0), (1.0, 0.0))), {"layer": "T", "label": "x"}, FeatureClass.ANNOTATION)
    with pytest.raises(GeometryException):
        FeatureSet(features=(), georeferenced=True)

    point = Feature("F1", PointGeometry((0.0, 0.0)), {"layer": "A"}, FeatureClass.POINT)
    with pytest.raises(GeometryException):
        FeatureSet(features=(point, point))
    fs = FeatureSet(features=(point,), crs=CrsInfo(epsg=4326), georeferenced=True)
    assert fs.counts() == {"point": 1, "line": 0, "polygon": 0, "annotation": 0}


def test_convert_document(profile):
    doc = CadDocument(entities=(
        entity("A", "SEWER", EntityKind.LINE, LineGeometry((0.0, 0.0), (10.0, 0.0))),
        entity("B", "MH", EntityKind.CIRCLE, CircleGeometry((10.0, 0.0), 0.6)),
        entity("C", "MH", EntityKind.POLYLINE, PolylineGeometry(((0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)), True)),
        entity("D", "CB", EntityKind.POLYLINE, PolylineGeometry(((5.0, 5.0), (7.0, 5.0), (7.0, 7.0), (5.0, 7.0), (5.001, 5.0)))),
        entity("E", "CB", EntityKind.POLYLINE, PolylineGeometry(((0.0, 5.0), (1.0, 5.0), (1.0, 6.0)), True)),
        entity("F", "CB", EntityKind.LINE, LineGeometry((0.0, 9.0), (1.0, 9.0))),
        entity("G", "TEXT", EntityKind.TEXT, TextGeometry((5.0, 0.5), "8in")),
        entity("H", "BLDG", EntityKind.POLYLINE, PolylineGeometry(((0.0, 20.0), (5.0, 20.0), (5.0, 25.0)), True)),
        entity("I", "SIDEWALK", EntityKind.LINE, LineGeometry((0.0, -5.0), (10.0, -5.0))),
        entity("J", "SEWER", EntityKind.UNSUPPORTED, UnsupportedGeometry("INSERT")),
        entity("K", "VALVE", EntityKind.POLYLINE, PolylineGeometry(((0.0, 0.0), (4.0, 0.0), (4.0, 2.0)))),
        entity("L", "SEWER", EntityKind.ARC, ArcGeometry((0.0, 0.0), 3.0, 0.0, 180.0)),
    ))

    result = convert_document(doc, profile)
    features = {f.attributes["handle"]: f for f in result.features.features}

    assert [f.id for f in result.features.features] == [f"F{i:06d}" for i in range(1, 10)]
    assert [f.id for f in result.reference.features] == ["R000001"]
    assert result.reference.features[0].attributes["handle"] == "H"
    assert result.unsupported_skipped == 1
    assert result.dropped == 1
    assert result.converted == 10
    assert result.collapsed_circles == 1
    assert not result.features.georeferenced

    assert features["A"].klass == FeatureClass.LINE
    assert features["A"].attributes == {"layer": "SEWER", "handle": "A", "system": "sanitary"}

    assert features["B"].klass == FeatureClass.POINT
    assert features["B"].geometry == PointGeometry((10.0, 0.0))
    assert features["B"].attributes["radius"] == "0.600000000"

    # collapse happens after georeferencing
    assert features["C"].klass == FeatureClass.POLYGON

    assert features["D"].klass == FeatureClass.LINE
    assert UNCLOSED_RING_CANDIDATE in features["D"].flags
    assert result.unclosed_candidates == [features["D"].id]

    assert features["E"].klass == FeatureClass.POLYGON
    assert features["E"].geometry.coords[0] == features["E"].geometry.coords[-1]
    assert len(features["E"].geometry.coords) == 4

    assert features["F"].klass == FeatureClass.LINE
    assert any("cannot form a polygon" in w for w in result.warnings)

    assert features["G"].klass == FeatureClass.ANNOTATION
    assert features["G"].attributes["label"] == "8in"

    assert features["K"].klass == FeatureClass.POINT
    assert features["K"].geometry.xy == pytest.approx((8.0 / 3.0, 2.0 / 3.0))

    assert features["L"].klass == FeatureClass.LINE
    assert features["L"].geometry.start == pytest.approx((3.0, 0.0))
    assert features["L"].geometry.end == pytest.approx((-3.0, 0.0))

    summary = result.summary()
    assert summary["counts"] == {"point": 2, "line": 4, "polygon": 2, "annotation": 1}
    assert summary["reference"] == 1


def test_convert_empty(profile):
    result = convert_document(CadDocument(), profile)
    assert len(result.features) == 0
    assert result.converted == 0
