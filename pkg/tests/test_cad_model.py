import pytest
import io
from ezdxf.addons import r12writer
from cadgis.cad_model import (
    BINARY_SENTINEL,
    EntityKind,
    LineGeometry,
    PolylineGeometry,
    format_inventory,
    inventory,
    parse_dxf
)
from cadgis.passes import DxfParseException, DxfStructureException
from cadgis.profile import load_profile


def dxf(*entities, header=None) -> str:
    lines = []
    if header:
        lines += ["0", "SECTION", "2", "HEADER"]
        for name, values in header.items():
            lines += ["9", name]
            for code, value in values:
                lines += [str(code), str(value)]
        lines += ["0", "ENDSEC"]
    lines += ["0", "SECTION", "2", "ENTITIES"]
    for e in entities:
        lines += [str(v) for v in e]
    lines += ["0", "ENDSEC", "0", "EOF"]
    return "\n".join(lines) + "\n"


def line(x1, y1, x2, y2, layer="0", handle=None):
    tags = ["0", "LINE"]
    if handle:
        tags += ["5", handle]
    return tags + ["8", layer, "10", x1, "20", y1, "11", x2, "21", y2]


@pytest.fixture
def mixed_text() -> str:
    return dxf(
        line(0, 0, 10, 0, layer="SEWER", handle="A1"),
        ["0", "LWPOLYLINE", "5", "A2", "8", "SEWER", "90", "3", "70", "1", "10", 0, "20", 0, "10", 5, "20", 0, "10", 5, "20", 5],
        ["0", "CIRCLE", "5", "A3", "8", "MH", "10", 2, "20", 3, "30", 0, "40", 0.6],
        ["0", "ARC", "5", "A4", "8", "MH", "10", 0, "20", 0, "40", 1, "50", 0, "51", 90],
        ["0", "TEXT", "5", "A5", "8", "TEXT", "10", 4, "20", 1, "1", "8in PVC"],
        ["0", "INSERT", "5", "A6", "8", "BLOCKS", "2", "TREE", "10", 1, "20", 1],
        ["0", "POLYLINE", "5", "A7", "8", "SEWER", "66", 1, "70", 0,
         "0", "VERTEX", "8", "SEWER", "10", 20, "20", 0,
         "0", "VERTEX", "8", "SEWER", "10", 30, "20", 0,
         "0", "SEQEND"],
        header={"$INSUNITS": [(70, 2)], "$ACADVER": [(1, "AC1009")]}
    )


def test_parse_kinds(mixed_text):
    doc = parse_dxf(mixed_text, source_name="mixed.dxf")

    assert [e.kind for e in doc.entities] == [
        EntityKind.LINE, EntityKind.POLYLINE, EntityKind.CIRCLE, EntityKind.ARC,
        EntityKind.TEXT, EntityKind.UNSUPPORTED, EntityKind.POLYLINE
    ]
    assert [e.handle for e in doc.entities] == ["A1", "A2", "A3", "A4", "A5", "A6", "A7"]
    assert doc.entities[0].geometry == LineGeometry((0.0, 0.0), (10.0, 0.0))
    assert doc.entities[1].geometry == PolylineGeometry(((0.0, 0.0), (5.0, 0.0), (5.0, 5.0)), True)
    assert doc.entities[2].geometry.radius == 0.6
    assert doc.entities[3].geometry.sweep == 90.0
    assert doc.entities[4].geometry.content == "8in PVC"
    assert doc.entities[5].geometry.dxf_type == "INSERT"
    assert doc.entities[6].vertices == ((20.0, 0.0), (30.0, 0.0))
    assert doc.z_discarded == 1
    assert doc.header["$INSUNITS"] == "2"
    assert doc.layers == frozenset({"SEWER", "MH", "TEXT", "BLOCKS"})


def test_synthetic_handles():
    doc = parse_dxf(dxf(line(0, 0, 1, 0), line(1, 0, 2, 0, handle="#1"), line(2, 0, 3, 0)))
    handles = [e.handle for e in doc.entities]
    assert handles[0] == "#1"
    assert handles[1] == "#1~2"
    assert handles[2] == "#3"
    assert len(set(handles)) == 3


def test_degenerate_geometry():
    doc = parse_dxf(dxf(
        line(1, 1, 1, 1),
        ["0", "CIRCLE", "8", "0", "10", 0, "20", 0, "40", 0],
        ["0", "ARC", "8", "0", "10", 0, "20", 0, "40", 1, "50", 45, "51", 45],
        ["0", "LWPOLYLINE", "8", "0", "90", 2, "10", 3, "20", 3, "10", 3, "20", 3],
    ))

    assert all(e.kind == EntityKind.UNSUPPORTED for e in doc.entities)
    assert [e.geometry.reason for e in doc.entities] == [
        "zero-length line", "non-positive radius", "zero sweep", "fewer than 2 distinct vertices"
    ]


def test_closed_polyline_repeated_vertex():
    doc = parse_dxf(dxf(
        ["0", "LWPOLYLINE", "8", "0", "70", 1,
         "10", 0, "20", 0, "10", 4, "20", 0, "10", 4, "20", 0, "10", 4, "20", 4, "10", 0, "20", 0],
    ))
    e = doc.entities[0]
    assert e.closed
    assert e.vertices == ((0.0, 0.0), (4.0, 0.0), (4.0, 4.0))


def test_bulge_counted():
    doc = parse_dxf(dxf(
        ["0", "LWPOLYLINE", "8", "0", "10", 0, "20", 0, "42", 0.5, "10", 4, "20", 0],
    ))
    assert doc.bulges_ignored == 1
    assert doc.entities[0].kind == EntityKind.POLYLINE


def test_mtext_content():
    doc = parse_dxf(dxf(
        ["0", "MTEXT", "8", "T", "10", 1, "20", 2, "3", "first\\P", "1", "second"],
    ))
    assert doc.entities[0].geometry.content == "first second"


def test_comments_skipped():
    text = dxf(line(0, 0, 1, 1)).replace("0\nEOF", "999\nend of drawing\n0\nEOF")
    doc = parse_dxf(text)
    assert len(doc.entities) == 1


def test_empty_entities_section():
    doc = parse_dxf(dxf())
    assert doc.entities == ()
    inv = inventory(doc)
    assert inv.total == 0
    assert inv.bbox is None
    assert "bbox: undefined" in format_inventory(inv)


def test_parse_errors():
    with pytest.raises(DxfStructureException):
        parse_dxf(BINARY_SENTINEL + "\r\n\x1a\x00")

    with pytest.raises(DxfStructureException):
        parse_dxf("0\nSECTION\n2\nHEADER\n0\nENDSEC\n0\nEOF\n")

    with pytest.raises(DxfStructureException):
        parse_dxf("0\nSECTION\n2\nENTITIES\n" + "\n".join(str(v) for v in line(0, 0, 1, 1)) + "\n")

    with pytest.raises(DxfParseException) as exinfo:
        parse_dxf(dxf(line(0, 0, "abc", 1)))
    assert exinfo.value.stage == "parse"
    assert exinfo.value.line > 0

    with pytest.raises(DxfParseException):
        parse_dxf("0\nSECTION\n2\n")


def test_inventory(mixed_text):
    doc = parse_dxf(mixed_text)
    profile = load_profile('{"rules": [{"match": "SEWER", "action": "line"}, {"match": "MH", "action": "point"}], "crs": {"epsg": 26971}}')
    inv = inventory(doc, profile)

    assert inv.total == 7
    assert inv.layers["SEWER"] == {"Line": 1, "Polyline": 2}
    assert inv.layers["MH"] == {"Arc": 1, "Circle": 1}
    assert inv.unsupported == {"INSERT": 1}
    assert inv.units == "feet"
    assert inv.acadver == "AC1009"
    assert inv.unmapped_layers == ("BLOCKS", "TEXT")
    # arc from 0 to 90 degrees reaches (0, 1); line reaches x=30
    assert inv.bbox == pytest.approx((0.0, 0.0, 30.0, 5.0))

    text = format_inventory(inv)
    assert "total entities: 7" in text
    assert "units: feet" in text
    assert "unmapped layers: BLOCKS, TEXT" in text


def test_parse_ezdxf_output():
    stream = io.StringIO()
    with r12writer(stream) as w:
        w.add_line((0, 0), (10, 0), layer="SEWER")
        w.add_circle((5, 5), radius=1.5, layer="MH")
        w.add_arc((0, 0), radius=2, start=0, end=180, layer="MH")
        w.add_polyline_2d([(0, 0), (3, 0), (3, 3)], closed=True, layer="CB")
        w.add_text("label", insert=(1, 1), layer="TEXT")
        w.add_point((7, 7), layer="SURVEY")

    doc = parse_dxf(stream.getvalue())
    kinds = [e.kind for e in doc.entities]
    assert kinds == [
        EntityKind.LINE, EntityKind.CIRCLE, EntityKind.ARC, EntityKind.POLYLINE,
        EntityKind.TEXT, EntityKind.UNSUPPORTED
    ]
    assert doc.entities[3].closed
    assert doc.entities[4].geometry.content == "label"
    assert doc.entities[5].geometry.dxf_type == "POINT"
    assert len({e.handle for e in doc.entities}) == 6


def test_full_turn_arc():
    doc = parse_dxf(dxf(
        ["0", "ARC", "8", "0", "10", 0, "20", 0, "40", 2, "50", 0, "51", 360],
        ["0", "ARC", "8", "0", "10", 0, "20", 0, "40", 2, "50", 30, "51", 750],
        ["0", "ARC", "8", "0", "10", 0, "20", 0, "40", 2, "50", 30, "51", 30],
    ))

    assert [e.kind for e in doc.entities] == [EntityKind.ARC, EntityKind.ARC, EntityKind.UNSUPPORTED]
    assert doc.entities[0].geometry.sweep == 360.0
    assert doc.entities[1].geometry.sweep == 360.0
    assert inventory(doc).bbox == pytest.approx((-2.0, -2.0, 2.0, 2.0))


def test_unicode_separators_stay_in_values():
    text = dxf(
        ["0", "TEXT", "5", "T1", "8", "TEXT", "10", 1, "20", 2, "1", "A\u2028B"],
        ["0", "TEXT", "5", "T2", "8", "TEXT", "10", 3, "20", 4, "1", "C\u0085D\x0cE"],
    )
    doc = parse_dxf(text)

    assert [e.handle for e in doc.entities] == ["T1", "T2"]
    assert doc.entities[0].geometry.content == "A\u2028B"
    assert doc.entities[1].geometry.content == "C\u0085D\x0cE"


def test_crlf_line_endings():
    text = dxf(
        line(0, 0, 10, 0, layer="SEWER", handle="A1"),
        ["0", "TEXT", "5", "A2", "8", "TEXT", "10", 4, "20", 1, "1", "8in PVC"],
    ).replace("\n", "\r\n")
    doc = parse_dxf(text)

    assert doc.entities[0].geometry == LineGeometry((0.0, 0.0), (10.0, 0.0))
    assert doc.entities[1].layer == "TEXT"
    assert doc.entities[1].geometry.content == "8in PVC"


def test_parse_error_line_numbers():
    with pytest.raises(DxfParseException) as exinfo:
        parse_dxf("0\nSECTION\nxx\nENTITIES\n0\nENDSEC\n0\nEOF\n")
    assert exinfo.value.line == 3

    # comments count towards line numbers
    with pytest.raises(DxfParseException) as exinfo:
        parse_dxf("999\nnote\n0\nSECTION\n2\nENTITIES\n0\nLINE\n8\n0\n10\nabc\n0\nENDSEC\n0\nEOF\n")
    assert exinfo.value.line == 11

    assert parse_dxf(dxf() + "\n\n  \n").entities == ()
