"""Synthetic campus drawing: sewer conduits, manholes, catch basins and labels
with a known number of injected defects.

The expected dict returned by generate_campus is the oracle for end-to-end
runs of the pipeline on the generated files.
"""
from dataclasses import dataclass, field
import io
import json
import logging
from typing import Dict, List, Optional
from ezdxf.addons import r12writer
import numpy as np
from .georef import SimilarityTransform


logger = logging.getLogger(__name__)

NODE_SPACING = 40.0
GAP_HALF_WIDTH = 1.0
TEXT_OFFSET = 0.4
LABEL_OFFSET = 0.5
MANHOLE_RADIUS = 0.6
BASIN_HALF_SIZE = 1.0
BASIN_OFFSET = 10.0
RING_GAP = 0.001
NEAR_MISS = 0.02
STUB_LENGTH = 15.0

DEFAULT_TRANSFORM = SimilarityTransform(scale=0.3048, rotation=0.2, tx=350000.0, ty=1800000.0)
DEFAULT_EPSG = 26971


@dataclass
class SyntheticCampus:
    dxf_text: str
    profile_text: str
    control_points_text: str
    expected: Dict[str, int] = field(default_factory=dict)


def campus_profile(epsg: int = DEFAULT_EPSG) -> dict:
    return {
        "rules": [
            {"match": "SEWER", "action": "line", "attributes": {"system": "sanitary"}},
            {"match": "MH", "action": "point", "collapse": "centroid", "attributes": {"asset": "manhole"}},
            {"match": "CB", "action": "polygon", "attributes": {"asset": "catch basin"}},
            {"match": "TEXT", "action": "annotation"},
            {"match": "SIDEWALK", "action": "drop"},
            {"match": "BLDG", "action": "reference-only"},
        ],
        "tolerances": {
            "gap_bridge": 2.5,
            "lateral_offset": 0.1,
            "snap": 0.05,
            "ring_close": 0.05,
            "annotation_attach": 2.0,
            "arc_chord": 0.05,
            "dangle": 0.05,
        },
        "crs": {"epsg": epsg},
        "transform_model": "similarity",
    }


def _spread(candidates: List[int], count: int) -> List[int]:
    if count > len(candidates):
        raise ValueError(f"cannot place {count} items on {len(candidates)} slots")
    if count == 0:
        return []
    picks = np.linspace(0, len(candidates) - 1, count).round().astype(int)
    return [candidates[i] for i in picks]


def generate_campus(
    conduits: int = 12,
    text_gaps: int = 3,
    manholes: int = 4,
    unclosed_rings: int = 2,
    annotations: int = 6,
    dangles: int = 0,
    near_misses: int = 0,
    duplicates: int = 0,
    sidewalks: int = 2,
    buildings: int = 2,
    unsupported: int = 0,
    transform: Optional[SimilarityTransform] = None
) -> SyntheticCampus:
    """Build the campus drawing, its profile and exact control points.

    Conduit k runs from node k to node k+1 along y=0. Gap conduits are split
    around their midpoint with a TEXT label in the gap. Catch basins are open
    2x2 squares above interior nodes whose ring misses closure by 0.001.
    """
    transform = transform or DEFAULT_TRANSFORM
    if conduits < 1:
        raise ValueError("at least one conduit is required")
    if 2 * text_gaps > conduits:
        raise ValueError("text gaps need every other conduit")

    nodes = conduits + 1
    interior = list(range(1, nodes - 1))
    gap_conduits = [2 * i + 1 for i in range(text_gaps)]
    gap_set = set(gap_conduits)
    plain_conduits = [k for k in range(conduits) if k not in gap_set]
    # duplicates from the start, near misses from the end
    duplicated = plain_conduits[:duplicates]
    duplicated_set = set(duplicated)
    shiftable = [k for k in plain_conduits if k > 0 and k not in duplicated_set]
    near_miss_conduits = set(shiftable[::-1][:near_misses])
    if len(near_miss_conduits) < near_misses or len(duplicated) < duplicates:
        raise ValueError("not enough plain conduits for duplicates and near misses")

    if annotations < text_gaps:
        raise ValueError("every text gap carries one of the annotations")

    manhole_nodes = [0, nodes - 1][:manholes] + _spread(interior, max(0, manholes - 2))
    label_slots = annotations - text_gaps
    basin_labels = min(label_slots, unclosed_rings)
    label_slots -= basin_labels
    label_conduits = _spread(plain_conduits, label_slots)

    def x(node: int) -> float:
        return node * NODE_SPACING

    total = 0
    buf = io.StringIO()
    with r12writer(buf) as dxf:
        for k in range(conduits):
            start = (x(k), NEAR_MISS if k in near_miss_conduits else 0.0)
            end = (x(k + 1), 0.0)
            if k in gap_set:
                mid = (x(k) + x(k + 1)) / 2.0
                dxf.add_line(start, (mid - GAP_HALF_WIDTH, 0.0), layer="SEWER")
                dxf.add_line((mid + GAP_HALF_WIDTH, 0.0), end, layer="SEWER")
                total += 2
            else:
                dxf.add_line(start, end, layer="SEWER")
                total += 1
            if k in duplicated_set:
                dxf.add_line(start, end, layer="SEWER")
                total += 1

        for i, k in enumerate(gap_conduits):
            dxf.add_text(str(8 + 2 * (i % 5)), insert=((x(k) + x(k + 1)) / 2.0, TEXT_OFFSET), layer="TEXT")
            total += 1

        for k in label_conduits:
            dxf.add_text(f"C{k}", insert=((x(k) + x(k + 1)) / 2.0, LABEL_OFFSET), layer="TEXT")
            total += 1

        for node in manhole_nodes:
            dxf.add_circle((x(node), 0.0), MANHOLE_RADIUS, layer="MH")
            total += 1

        for i in range(unclosed_rings):
            node = interior[i % len(interior)] if interior else 0
            cx = x(node)
            cy = BASIN_OFFSET + 20.0 * (i // max(1, len(interior)))
            h = BASIN_HALF_SIZE
            ring = [(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h), (cx - h + RING_GAP, cy - h)]
            dxf.add_polyline_2d(ring, layer="CB")
            total += 1
            if i < basin_labels:
                dxf.add_text(f"CB{i + 1}", insert=(cx, cy), layer="TEXT")
                total += 1

        for i in range(dangles):
            node = interior[-1 - (i % len(interior))] if interior else nodes - 1
            length = STUB_LENGTH + 5.0 * (i // max(1, len(interior)))
            dxf.add_line((x(node), 0.0), (x(node), -length), layer="SEWER")
            total += 1

        for i in range(sidewalks):
            dxf.add_line((x(0), -30.0 - 3.0 * i), (x(nodes - 1), -30.0 - 3.0 * i), layer="SIDEWALK")
            total += 1

        for i in range(buildings):
            bx = x(i % nodes) + 5.0
            by = 40.0 + 30.0 * (i // nodes)
            dxf.add_polyline_2d([(bx, by), (bx + 20.0, by), (bx + 20.0, by + 15.0), (bx, by + 15.0)], closed=True, layer="BLDG")
            total += 1

        for i in range(unsupported):
            dxf.add_point((x(i % nodes), 60.0), layer="SEWER")
            total += 1

    width = x(nodes - 1)
    corners = [(0.0, -20.0), (width, -20.0), (width, 50.0), (0.0, 50.0)]
    targets = transform.apply(np.asarray(corners))
    lines = ["src_x,src_y,dst_x,dst_y,label"]
    for i, ((sx, sy), (dx, dy)) in enumerate(zip(corners, targets)):
        lines.append(f"{sx!r},{sy!r},{float(dx)!r},{float(dy)!r},corner{i + 1}")

    dropped = sidewalks + duplicates
    merged = text_gaps
    expected = {
        "total": total,
        "bridged": text_gaps,
        "merged": merged,
        "deduped": duplicates,
        "dropped": dropped,
        "unsupported": unsupported,
        "converted": total - dropped - merged - unsupported,
        "collapsed": manholes,
        "closed": unclosed_rings,
        "attached": annotations,
        "orphans": 0,
        "snapped": near_misses + unclosed_rings,
        "dangles": dangles + max(0, 2 - manholes),
        "reference": buildings,
    }

    logger.info(f"Synthetic campus: {total} entities, {conduits} conduits, {text_gaps} text gaps, {dangles} dangles")
    return SyntheticCampus(
        dxf_text=buf.getvalue(),
        profile_text=json.dumps(campus_profile(), indent=2, sort_keys=True) + "\n",
        control_points_text="\n".join(lines) + "\n",
        expected=expected
    )
