from dataclasses import dataclass, field
import json
import logging
import math
from struct import pack
from typing import Any, Dict, Iterable, List, Optional, Tuple
from pydantic import BaseModel, Field
from .convert import (
    Feature,
    FeatureClass,
    FeatureSet,
    LineStringGeometry,
    PointGeometry,
    PolygonGeometry
)
from .passes import ExportException, GeometryException
from .profile import CrsInfo


logger = logging.getLogger(__name__)

REPORT_VERSION = "1"
COORD_FORMAT = "%.9f"

SHAPE_TYPES = {
    FeatureClass.POINT: 1,
    FeatureClass.ANNOTATION: 1,
    FeatureClass.LINE: 3,
    FeatureClass.POLYGON: 5,
}

DBF_FIELD_WIDTH = 254
DBF_NAME_LENGTH = 10


def _signed_area(coords) -> float:
    area = 0.0
    x0, y0 = coords[0]
    for (x1, y1), (x2, y2) in zip(coords[:-1], coords[1:]):
        area += (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    return area / 2.0


def _oriented_ring(coords, ccw: bool) -> Tuple[Tuple[float, float], ...]:
    area = _signed_area(coords)
    if (area < 0 and ccw) or (area > 0 and not ccw):
        return tuple(reversed(coords))
    return tuple(coords)


def _check_exportable(fs: FeatureSet):
    if not fs.georeferenced or fs.crs is None:
        raise ExportException("refusing to export drawing-space coordinates (feature set is not georeferenced)")
    for f in fs.features:
        for x, y in f.geometry.coords:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ExportException(f"{f.id}: non-finite coordinate")


# GeoJSON
def _coord_text(xy) -> str:
    return "[" + COORD_FORMAT % xy[0] + "," + COORD_FORMAT % xy[1] + "]"


def _geometry_text(geometry) -> str:
    if isinstance(geometry, PointGeometry):
        coords = _coord_text(geometry.xy)
    elif isinstance(geometry, LineStringGeometry):
        coords = "[" + ",".join(_coord_text(c) for c in geometry.coords) + "]"
    else:
        ring = _oriented_ring(geometry.coords, ccw=True)
        coords = "[[" + ",".join(_coord_text(c) for c in ring) + "]]"
    return '{"type":"' + geometry.type_name + '","coordinates":' + coords + "}"


def _feature_text(f: Feature) -> str:
    return (
        '{"type":"Feature","id":' + json.dumps(f.id)
        + ',"geometry":' + _geometry_text(f.geometry)
        + ',"properties":' + json.dumps(f.attributes, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        + "}"
    )


def feature_collection_text(features: Iterable[Feature], crs: CrsInfo, klass: FeatureClass) -> str:
    head = (
        '{"type":"FeatureCollection",'
        '"crs":{"type":"name","properties":{"name":"' + crs.name + '"}},'
        '"feature_class":"' + klass.value + '",'
        '"features":['
    )
    lines = [_feature_text(f) for f in sorted(features, key=lambda f: f.id)]
    if not lines:
        return head + "]}\n"
    return head + "\n" + ",\n".join(lines) + "\n]}\n"


def write_geojson(fs: FeatureSet) -> Dict[FeatureClass, str]:
    """One FeatureCollection text per feature class, features in id order."""
    _check_exportable(fs)
    return {klass: feature_collection_text(fs.of_class(klass).features, fs.crs, klass) for klass in FeatureClass}


def read_geojson(texts: Iterable[str]) -> FeatureSet:
    """Read FeatureCollections (as written by write_geojson, or structurally equivalent) into one FeatureSet."""
    features = []
    crs = None
    seen = set()
    for text in texts:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as jdex:
            raise ExportException(f"invalid GeoJSON at line {jdex.lineno}: {jdex.msg}")
        if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
            raise ExportException("GeoJSON document is not a FeatureCollection")

        name = ((doc.get("crs") or {}).get("properties") or {}).get("name", "")
        if name.startswith("EPSG:") and crs is None:
            try:
                crs = CrsInfo(epsg=int(name[5:]))
            except ValueError:
                raise ExportException(f"invalid CRS name '{name}'")
        collection_class = doc.get("feature_class")

        for n, item in enumerate(doc["features"]):
            try:
                f = _read_feature(item, collection_class, f"G{len(features) + 1:06d}")
            except (KeyError, TypeError, ValueError, IndexError, GeometryException) as ex:
                raise ExportException(f"malformed feature #{n}: {ex}")
            if f.id in seen:
                raise ExportException(f"duplicate feature id '{f.id}'")
            seen.add(f.id)
            features.append(f)

    return FeatureSet(tuple(features), crs=crs, georeferenced=crs is not None)


def _read_feature(item: Dict[str, Any], collection_class: Optional[str], default_id: str) -> Feature:
    geometry = item["geometry"]
    properties = {str(k): str(v) for k, v in (item.get("properties") or {}).items()}
    gtype = geometry["type"]
    coords = geometry["coordinates"]
    if gtype == "Point":
        g = PointGeometry((float(coords[0]), float(coords[1])))
        klass = FeatureClass.ANNOTATION if collection_class == "annotation" else FeatureClass.POINT
    elif gtype == "LineString":
        g = LineStringGeometry(tuple((float(c[0]), float(c[1])) for c in coords))
        klass = FeatureClass.LINE
    elif gtype == "Polygon":
        g = PolygonGeometry(tuple((float(c[0]), float(c[1])) for c in coords[0]))
        klass = FeatureClass.POLYGON
    else:
        raise ValueError(f"unsupported geometry type {gtype}")
    return Feature(id=str(item.get("id", default_id)), geometry=g, attributes=properties, klass=klass)


# Shapefile
@dataclass
class ShapefileParts:
    shp: bytes
    shx: bytes
    dbf: bytes
    prj: str
    cpg: str = "UTF-8"
    field_map: Dict[str, str] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)


def _shp_header(shape_type: int, length_words: int, bbox: Tuple[float, float, float, float]) -> bytes:
    return (
        pack(">6i", 9994, 0, 0, 0, 0, 0)
        + pack(">i", length_words)
        + pack("<2i", 1000, shape_type)
        + pack("<4d", *bbox)
        + pack("<4d", 0.0, 0.0, 0.0, 0.0)
    )


def _bbox(coords: List[Tuple[float, float]]) -> Tuple[float, float, float, float]:
    if not coords:
        return (0.0, 0.0, 0.0, 0.0)
    xs = [c[0] for c in coords]
    ys = [c[1] for c in coords]
    return (min(xs), min(ys), max(xs), max(ys))


def _stored(xy) -> Tuple[float, float]:
    # same 9-digit grid as the GeoJSON text
    return (float(COORD_FORMAT % xy[0]), float(COORD_FORMAT % xy[1]))


def _shp_content(shape_type: int, f: Feature) -> bytes:
    g = f.geometry
    if shape_type == 1:
        return pack("<i", 1) + pack("<2d", *_stored(g.xy))
    coords = g.coords
    if shape_type == 5:
        coords = _oriented_ring(coords, ccw=False)
    coords = [_stored(c) for c in coords]
    content = pack("<i", shape_type) + pack("<4d", *_bbox(list(coords)))
    content += pack("<i", 1) + pack("<i", len(coords)) + pack("<i", 0)
    for x, y in coords:
        content += pack("<2d", x, y)
    return content


def dbf_field_names(keys: List[str]) -> Dict[str, str]:
    """Attribute key -> DBF field name (at most 10 bytes, unique)."""
    names: Dict[str, str] = {}
    used = set()
    for key in keys:
        base = key.encode("utf-8")[:DBF_NAME_LENGTH].decode("utf-8", "ignore").replace(" ", "_")
        name = base
        n = 1
        while name.upper() in used:
            n += 1
            suffix = f"_{n}"
            name = base.encode("utf-8")[:DBF_NAME_LENGTH - len(suffix)].decode("utf-8", "ignore") + suffix
        used.add(name.upper())
        names[key] = name
    return names


def _dbf(features: List[Feature], warnings: List[str]) -> Tuple[bytes, Dict[str, str]]:
    keys = ["id"] + sorted({k for f in features for k in f.attributes if k != "id"})
    field_map = dbf_field_names(keys)

    header_length = 32 + 32 * len(keys) + 1
    record_length = 1 + DBF_FIELD_WIDTH * len(keys)
    # fixed date 1970-01-01
    out = [pack("<BBBBLHH20x", 3, 70, 1, 1, len(features), header_length, record_length)]
    for key in keys:
        name = field_map[key].encode("utf-8").ljust(11, b"\x00")
        out.append(pack("<11sc4xBB14x", name, b"C", DBF_FIELD_WIDTH, 0))
    out.append(b"\r")

    for f in features:
        out.append(b" ")
        for key in keys:
            value = f.id if key == "id" else f.attributes.get(key, "")
            raw = value.encode("utf-8")
            if len(raw) > DBF_FIELD_WIDTH:
                raw = raw[:DBF_FIELD_WIDTH].decode("utf-8", "ignore").encode("utf-8")
                message = f"{f.id}: attribute '{key}' truncated to {DBF_FIELD_WIDTH} bytes"
                logger.warning(message)
                warnings.append(message)
            out.append(raw.ljust(DBF_FIELD_WIDTH, b" "))
    out.append(b"\x1a")
    return b"".join(out), field_map


def write_shapefile(fs: FeatureSet, klass: FeatureClass) -> ShapefileParts:
    _check_exportable(fs)
    for f in fs.features:
        if f.klass != klass:
            raise ExportException(f"{f.id} is {f.klass.value}, cannot write into a {klass.value} shapefile")

    shape_type = SHAPE_TYPES[klass]
    expected = PolygonGeometry if shape_type == 5 else LineStringGeometry if shape_type == 3 else PointGeometry
    features = sorted(fs.features, key=lambda f: f.id)
    for f in features:
        if not isinstance(f.geometry, expected):
            raise ExportException(f"{f.id}: {f.geometry.type_name} geometry in a {klass.value} shapefile")

    records = []
    shx_records = []
    offset = 50
    for n, f in enumerate(features, start=1):
        content = _shp_content(shape_type, f)
        words = len(content) // 2
        records.append(pack(">2i", n, words) + content)
        shx_records.append(pack(">2i", offset, words))
        offset += 4 + words

    bbox = _bbox([_stored(c) for f in features for c in f.geometry.coords])
    body = b"".join(records)
    shp = _shp_header(shape_type, (100 + len(body)) // 2, bbox) + body
    shx = _shp_header(shape_type, (100 + 8 * len(features)) // 2, bbox) + b"".join(shx_records)

    warnings: List[str] = []
    dbf, field_map = _dbf(features, warnings)

    prj = fs.crs.wkt or ""
    if not prj:
        message = f"{klass.value}: no WKT in profile, writing empty .prj"
        logger.warning(message)
        warnings.append(message)

    return ShapefileParts(shp=shp, shx=shx, dbf=dbf, prj=prj, field_map=field_map, warnings=warnings)


# QA report
class Ledger(BaseModel):
    total: int = 0
    converted: int = 0
    dropped: int = 0
    merged: int = 0
    unsupported: int = 0

    @property
    def balanced(self) -> bool:
        return self.total == self.converted + self.dropped + self.merged + self.unsupported


class QaReport(BaseModel):
    report_version: str = REPORT_VERSION
    source_name: str = ""
    inventory: Dict[str, Any] = Field(default_factory=dict)
    step2: Dict[str, Any] = Field(default_factory=dict)
    conversion: Dict[str, Any] = Field(default_factory=dict)
    georef: Dict[str, Any] = Field(default_factory=dict)
    step5: Dict[str, Any] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)
    ledger: Ledger = Field(default_factory=Ledger)
    dbf_field_maps: Dict[str, Dict[str, str]] = Field(default_factory=dict)
    skipped_passes: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)


def write_report(r: QaReport) -> str:
    data = r.model_dump(mode="json")
    data["ledger"]["balanced"] = r.ledger.balanced
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
