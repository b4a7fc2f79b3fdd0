from dataclasses import dataclass, field, replace
from enum import Enum
import io
import logging
import math
from typing import TYPE_CHECKING, Dict, FrozenSet, List, Optional, Tuple, Union
from ezdxf.lldxf.const import DXFStructureError
from ezdxf.lldxf.tagger import ascii_tags_loader
from .passes import DxfParseException, DxfStructureException

if TYPE_CHECKING:
    from .profile import ConversionProfile


logger = logging.getLogger(__name__)

XY = Tuple[float, float]

BINARY_SENTINEL = "AutoCAD Binary DXF"

SUPPORTED_TYPES = ("LINE", "LWPOLYLINE", "POLYLINE", "CIRCLE", "ARC", "TEXT", "MTEXT")

# $INSUNITS codes
UNIT_NAMES = {
    0: "unitless", 1: "inches", 2: "feet", 3: "miles", 4: "millimeters",
    5: "centimeters", 6: "meters", 7: "kilometers", 8: "microinches", 9: "mils",
    10: "yards", 11: "angstroms", 12: "nanometers", 13: "microns", 14: "decimeters",
    15: "decameters", 16: "hectometers", 17: "gigameters", 18: "astronomical units",
    19: "light years", 20: "parsecs", 21: "US survey feet",
}

HEADER_VARIABLES = ("$ACADVER", "$INSUNITS", "$EXTMIN", "$EXTMAX")


class EntityKind(str, Enum):
    LINE = "Line"
    POLYLINE = "Polyline"
    CIRCLE = "Circle"
    ARC = "Arc"
    TEXT = "Text"
    UNSUPPORTED = "Unsupported"


# Geometry payloads
@dataclass(frozen=True)
class LineGeometry:
    start: XY
    end: XY

    @property
    def vertices(self) -> Tuple[XY, ...]:
        return (self.start, self.end)


@dataclass(frozen=True)
class PolylineGeometry:
    vertices: Tuple[XY, ...]
    closed: bool = False


@dataclass(frozen=True)
class CircleGeometry:
    center: XY
    radius: float

    @property
    def sweep(self) -> float:
        return 360.0


@dataclass(frozen=True)
class ArcGeometry:
    center: XY
    radius: float
    start_angle: float
    end_angle: float

    @property
    def sweep(self) -> float:
        """Counter-clockwise sweep in degrees; a non-zero multiple of 360 is a full turn."""
        raw = self.end_angle - self.start_angle
        sweep = raw % 360.0
        return 360.0 if sweep == 0.0 and raw != 0.0 else sweep


@dataclass(frozen=True)
class TextGeometry:
    insert: XY
    content: str


@dataclass(frozen=True)
class UnsupportedGeometry:
    dxf_type: str
    reason: str = ""


Geometry = Union[LineGeometry, PolylineGeometry, CircleGeometry, ArcGeometry, TextGeometry, UnsupportedGeometry]


@dataclass(frozen=True)
class CadEntity:
    handle: str
    layer: str
    kind: EntityKind
    geometry: Geometry

    @property
    def is_linear(self) -> bool:
        return self.kind in (EntityKind.LINE, EntityKind.POLYLINE)

    @property
    def vertices(self) -> Tuple[XY, ...]:
        """Vertex chain of a Line or Polyline, empty for other kinds."""
        if self.is_linear:
            return self.geometry.vertices
        return ()

    @property
    def closed(self) -> bool:
        return self.kind == EntityKind.POLYLINE and self.geometry.closed


@dataclass(frozen=True)
class CadDocument:
    entities: Tuple[CadEntity, ...] = ()
    source_name: str = ""
    header: Dict[str, str] = field(default_factory=dict)
    z_discarded: int = 0
    bulges_ignored: int = 0
    reference_handles: FrozenSet[str] = frozenset()

    @property
    def layers(self) -> FrozenSet[str]:
        return frozenset(e.layer for e in self.entities)

    def with_entities(self, entities) -> "CadDocument":
        entities = tuple(entities)
        handles = {e.handle for e in entities}
        return replace(self, entities=entities, reference_handles=frozenset(self.reference_handles & handles))

    def by_handle(self) -> Dict[str, CadEntity]:
        return {e.handle: e for e in self.entities}


@dataclass(frozen=True)
class LayerInventory:
    layers: Dict[str, Dict[str, int]]
    bbox: Optional[Tuple[float, float, float, float]]
    unsupported: Dict[str, int]
    total: int
    units: str = "unspecified"
    acadver: str = ""
    z_discarded: int = 0
    unmapped_layers: Tuple[str, ...] = ()

    @property
    def unsupported_total(self) -> int:
        return sum(self.unsupported.values())

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "bbox": list(self.bbox) if self.bbox else None,
            "unsupported": self.unsupported,
            "unsupported_total": self.unsupported_total,
            "total": self.total,
            "units": self.units,
            "acadver": self.acadver,
            "z_discarded": self.z_discarded,
            "unmapped_layers": list(self.unmapped_layers),
        }


# Group code reader
class DxfReader:
    """(code, value, line number) tags from ezdxf's ASCII tag loader.

    Lines end at "\\n" only; other Unicode line separators stay inside values.
    """

    def __init__(self, text: str):
        text = text.replace("\r\n", "\n").rstrip(" \t\r\n")
        # comments are kept in the stream so tag index maps to line number
        self._tags = ascii_tags_loader(io.StringIO(text + "\n"), skip_comments=False) if text else iter(())
        self._index = 0
        self._saved = None

    def _next_tag(self):
        try:
            return next(self._tags, None)
        except DXFStructureError as ex:
            raise DxfParseException(str(ex), line=2 * self._index + 1)

    def read(self) -> Optional[Tuple[int, str, int]]:
        """Read one (code, value, line number) triple, None at end of input."""
        if self._saved is not None:
            tag = self._saved
            self._saved = None
            return tag

        while True:
            tag = self._next_tag()
            if tag is None:
                return None
            lineno = 2 * self._index + 1
            self._index += 1
            code, value = tag.code, tag.value.rstrip("\r")
            if code == 999:
                continue    # comment
            if code not in (1, 3):
                value = value.strip()
            return code, value, lineno

    def push(self, tag: Tuple[int, str, int]):
        self._saved = tag

    def read_record(self) -> List[Tuple[int, str, int]]:
        """Read tags up to (not including) the next code 0."""
        tags = []
        while True:
            tag = self.read()
            if tag is None:
                return tags
            if tag[0] == 0:
                self.push(tag)
                return tags
            tags.append(tag)


def _number(tag: Tuple[int, str, int]) -> float:
    code, value, lineno = tag
    try:
        number = float(value)
    except ValueError:
        raise DxfParseException(f"numeric value expected for group code {code}, got {value!r}", line=lineno)
    if not math.isfinite(number):
        raise DxfParseException(f"non-finite value for group code {code}", line=lineno)
    return number


def _integer(tag: Tuple[int, str, int]) -> int:
    return int(_number(tag))


class _EntityBuilder:
    """Turns raw group-code records into CadEntity values."""

    def __init__(self):
        self.z_discarded = 0
        self.bulges_ignored = 0
        self.handles = set()
        self.ordinal = 0

    def _handle(self, raw: Optional[str]) -> str:
        self.ordinal += 1
        handle = raw if raw else f"#{self.ordinal}"
        suffix = 1
        base = handle
        while handle in self.handles:
            suffix += 1
            handle = f"{base}~{suffix}"
        self.handles.add(handle)
        return handle

    def _common(self, tags) -> Tuple[str, Optional[str], Dict[int, Tuple[int, str, int]]]:
        layer = "0"
        raw_handle = None
        first = {}
        for tag in tags:
            code = tag[0]
            if code == 8:
                layer = tag[1]
            elif code == 5 and raw_handle is None:
                raw_handle = tag[1]
            elif code in (30, 31):
                self.z_discarded += 1
            first.setdefault(code, tag)
        return layer, raw_handle, first

    @staticmethod
    def _xy(first, xcode: int, ycode: int) -> XY:
        x = _number(first[xcode]) if xcode in first else 0.0
        y = _number(first[ycode]) if ycode in first else 0.0
        return (x, y)

    @staticmethod
    def _unsupported(dxf_type: str, reason: str = "") -> Tuple[EntityKind, Geometry]:
        return EntityKind.UNSUPPORTED, UnsupportedGeometry(dxf_type, reason)

    @staticmethod
    def _clean_vertices(vertices: List[XY], closed: bool) -> Tuple[Tuple[XY, ...], bool]:
        cleaned = []
        for v in vertices:
            if not cleaned or cleaned[-1] != v:
                cleaned.append(v)
        if closed and len(cleaned) > 1 and cleaned[0] == cleaned[-1]:
            cleaned.pop()
        if closed and len(cleaned) < 3:
            closed = False
        return tuple(cleaned), closed

    def build(self, dxf_type: str, tags, vertex_records=None) -> CadEntity:
        layer, raw_handle, first = self._common(tags)
        for record in vertex_records or []:
            self._common(record)

        if dxf_type == "LINE":
            start = self._xy(first, 10, 20)
            end = self._xy(first, 11, 21)
            if start == end:
                kind, geometry = self._unsupported(dxf_type, "zero-length line")
            else:
                kind, geometry = EntityKind.LINE, LineGeometry(start, end)

        elif dxf_type in ("LWPOLYLINE", "POLYLINE"):
            flags = _integer(first[70]) if 70 in first else 0
            if dxf_type == "LWPOLYLINE":
                vertices = []
                for tag in tags:
                    if tag[0] == 10:
                        vertices.append([_number(tag), 0.0])
                    elif tag[0] == 20 and vertices:
                        vertices[-1][1] = _number(tag)
                    elif tag[0] == 42 and _number(tag) != 0.0:
                        self.bulges_ignored += 1
                vertices = [tuple(v) for v in vertices]
            else:
                vertices = []
                for record in vertex_records or []:
                    vfirst = {}
                    for tag in record:
                        vfirst.setdefault(tag[0], tag)
                    if 42 in vfirst and _number(vfirst[42]) != 0.0:
                        self.bulges_ignored += 1
                    vertices.append(self._xy(vfirst, 10, 20))

            if dxf_type == "POLYLINE" and flags & (16 | 64):
                kind, geometry = self._unsupported(dxf_type, "polygon mesh")
            else:
                cleaned, closed = self._clean_vertices(vertices, bool(flags & 1))
                if len(cleaned) < 2:
                    kind, geometry = self._unsupported(dxf_type, "fewer than 2 distinct vertices")
                else:
                    kind, geometry = EntityKind.POLYLINE, PolylineGeometry(cleaned, closed)

        elif dxf_type in ("CIRCLE", "ARC"):
            center = self._xy(first, 10, 20)
            radius = _number(first[40]) if 40 in first else 0.0
            if radius <= 0.0:
                kind, geometry = self._unsupported(dxf_type, "non-positive radius")
            elif dxf_type == "CIRCLE":
                kind, geometry = EntityKind.CIRCLE, CircleGeometry(center, radius)
            else:
                start_angle = _number(first[50]) if 50 in first else 0.0
                end_angle = _number(first[51]) if 51 in first else 0.0
                arc = ArcGeometry(center, radius, start_angle, end_angle)
                if arc.sweep == 0.0:
                    kind, geometry = self._unsupported(dxf_type, "zero sweep")
                else:
                    kind, geometry = EntityKind.ARC, arc

        elif dxf_type in ("TEXT", "MTEXT"):
            insert = self._xy(first, 10, 20)
            if dxf_type == "MTEXT":
                chunks = [tag[1] for tag in tags if tag[0] == 3]
                chunks += [tag[1] for tag in tags if tag[0] == 1]
                content = "".join(chunks).replace("\\P", " ")
            else:
                content = first[1][1] if 1 in first else ""
            kind, geometry = EntityKind.TEXT, TextGeometry(insert, content)

        else:
            kind, geometry = self._unsupported(dxf_type)

        return CadEntity(handle=self._handle(raw_handle), layer=layer, kind=kind, geometry=geometry)


def _read_header(reader: DxfReader) -> Dict[str, str]:
    header = {}
    var = None
    values = []

    def flush():
        if var in HEADER_VARIABLES:
            header[var] = ",".join(values)

    while True:
        tag = reader.read()
        if tag is None:
            raise DxfStructureException("HEADER section not terminated by ENDSEC")
        code, value, _ = tag
        if code == 0 and value == "ENDSEC":
            flush()
            return header
        if code == 9:
            flush()
            var = value
            values = []
        elif code not in (30,):
            values.append(value)


def _skip_section(reader: DxfReader, name: str):
    while True:
        tag = reader.read()
        if tag is None:
            raise DxfStructureException(f"{name} section not terminated by ENDSEC")
        if tag[0] == 0 and tag[1] == "ENDSEC":
            return


def _read_entities(reader: DxfReader, builder: _EntityBuilder) -> List[CadEntity]:
    entities = []
    while True:
        tag = reader.read()
        if tag is None:
            raise DxfStructureException("ENTITIES section not terminated by ENDSEC")
        code, value, lineno = tag
        if code != 0:
            raise DxfParseException(f"entity type (group code 0) expected, got code {code}", line=lineno)
        if value == "ENDSEC":
            return entities

        tags = reader.read_record()
        vertex_records = None
        if value == "POLYLINE":
            vertex_records = []
            while True:
                nxt = reader.read()
                if nxt is None:
                    break
                if nxt[0] == 0 and nxt[1] == "VERTEX":
                    vertex_records.append(reader.read_record())
                elif nxt[0] == 0 and nxt[1] == "SEQEND":
                    reader.read_record()
                    break
                else:
                    reader.push(nxt)
                    break

        entities.append(builder.build(value, tags, vertex_records))


def parse_dxf(text: str, source_name: str = "") -> CadDocument:
    """Parse ASCII DXF text into a CadDocument.

    Every entity record of the ENTITIES section yields exactly one CadEntity,
    in source order. Types outside the supported subset, block references and
    degenerate geometry become Unsupported records.
    """
    if text.startswith(BINARY_SENTINEL):
        raise DxfStructureException("binary DXF is not supported")

    reader = DxfReader(text)
    builder = _EntityBuilder()
    header = {}
    entities = None

    while True:
        tag = reader.read()
        if tag is None:
            break
        code, value, lineno = tag
        if code == 0 and value == "EOF":
            break
        if code == 0 and value == "SECTION":
            name_tag = reader.read()
            if name_tag is None or name_tag[0] != 2:
                raise DxfStructureException(f"section name (group code 2) expected after SECTION at line {lineno}")
            name = name_tag[1]
            if name == "HEADER":
                header = _read_header(reader)
            elif name == "ENTITIES":
                if entities is not None:
                    raise DxfStructureException("more than one ENTITIES section")
                entities = _read_entities(reader, builder)
            else:
                _skip_section(reader, name)
        else:
            raise DxfParseException(f"SECTION expected, got code {code} value {value!r}", line=lineno)

    if entities is None:
        raise DxfStructureException("ENTITIES section not found")

    if builder.z_discarded:
        logger.warning(f"{source_name or 'document'}: discarded {builder.z_discarded} Z coordinates")
    if builder.bulges_ignored:
        logger.warning(f"{source_name or 'document'}: ignored {builder.bulges_ignored} polyline bulges")
    unsupported = sum(1 for e in entities if e.kind == EntityKind.UNSUPPORTED)
    logger.info(f"Parsed {len(entities)} entities ({unsupported} unsupported) from {source_name or 'document'}")

    return CadDocument(
        entities=tuple(entities),
        source_name=source_name,
        header=header,
        z_discarded=builder.z_discarded,
        bulges_ignored=builder.bulges_ignored
    )


def arc_extent(center: XY, radius: float, start_angle: float, sweep: float) -> List[XY]:
    """Arc endpoints plus every axis extreme the arc passes through."""
    cx, cy = center
    angles = [start_angle, start_angle + sweep]
    first_quadrant = math.ceil(start_angle / 90.0) * 90.0
    q = first_quadrant
    while q < start_angle + sweep:
        angles.append(q)
        q += 90.0
    return [(cx + radius * math.cos(math.radians(a)), cy + radius * math.sin(math.radians(a))) for a in angles]


def entity_extent(entity: CadEntity) -> List[XY]:
    g = entity.geometry
    if entity.kind in (EntityKind.LINE, EntityKind.POLYLINE):
        return list(g.vertices)
    if entity.kind == EntityKind.CIRCLE:
        cx, cy = g.center
        r = g.radius
        return [(cx - r, cy - r), (cx + r, cy + r)]
    if entity.kind == EntityKind.ARC:
        return arc_extent(g.center, g.radius, g.start_angle, g.sweep)
    if entity.kind == EntityKind.TEXT:
        return [g.insert]
    return []


def inventory(doc: CadDocument, profile: Optional["ConversionProfile"] = None) -> LayerInventory:
    counts: Dict[str, Dict[str, int]] = {}
    unsupported: Dict[str, int] = {}
    xs = []
    ys = []

    for e in doc.entities:
        per_layer = counts.setdefault(e.layer, {})
        per_layer[e.kind.value] = per_layer.get(e.kind.value, 0) + 1
        if e.kind == EntityKind.UNSUPPORTED:
            unsupported[e.geometry.dxf_type] = unsupported.get(e.geometry.dxf_type, 0) + 1
        for x, y in entity_extent(e):
            xs.append(x)
            ys.append(y)

    bbox = (min(xs), min(ys), max(xs), max(ys)) if xs else None

    units = "unspecified"
    if "$INSUNITS" in doc.header:
        try:
            units = UNIT_NAMES.get(int(float(doc.header["$INSUNITS"])), "unknown")
        except ValueError:
            units = "unknown"

    unmapped = ()
    if profile is not None:
        unmapped = tuple(layer for layer in sorted(counts) if profile.match_rule(layer) is None)

    return LayerInventory(
        layers={layer: dict(sorted(counts[layer].items())) for layer in sorted(counts)},
        bbox=bbox,
        unsupported=dict(sorted(unsupported.items())),
        total=len(doc.entities),
        units=units,
        acadver=doc.header.get("$ACADVER", ""),
        z_discarded=doc.z_discarded,
        unmapped_layers=unmapped
    )


def format_inventory(inv: LayerInventory) -> str:
    kinds = [k.value for k in EntityKind]
    width = max([5] + [len(layer) for layer in inv.layers])
    lines = [f"{'LAYER':<{width}}  " + " ".join(f"{k:>11}" for k in kinds) + f" {'TOTAL':>7}"]
    for layer, per_kind in inv.layers.items():
        row = " ".join(f"{per_kind.get(k, 0):>11}" for k in kinds)
        lines.append(f"{layer:<{width}}  {row} {sum(per_kind.values()):>7}")
    lines.append(f"total entities: {inv.total}")
    if inv.bbox:
        lines.append("bbox: " + ", ".join(f"{v:.6f}" for v in inv.bbox))
    else:
        lines.append("bbox: undefined (no geometry)")
    lines.append(f"unsupported: {inv.unsupported_total}")
    for dxf_type, n in inv.unsupported.items():
        lines.append(f"  {dxf_type}: {n}")
    lines.append(f"units: {inv.units}")
    if inv.acadver:
        lines.append(f"acadver: {inv.acadver}")
    if inv.z_discarded:
        lines.append(f"z coordinates discarded: {inv.z_discarded}")
    if inv.unmapped_layers:
        lines.append("unmapped layers: " + ", ".join(inv.unmapped_layers))
    return "\n".join(lines) + "\n"
