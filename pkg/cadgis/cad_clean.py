from dataclasses import dataclass, replace
import logging
import math
from typing import Dict, List, Optional, Tuple
import numpy as np
from scipy.spatial import cKDTree
from .cad_model import CadDocument, CadEntity, EntityKind, PolylineGeometry, XY
from .passes import CadPassBase
from .profile import ConversionProfile, LayerAction, Tolerances


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CleanFix:
    kind: str   # dropped-entity | bridged-gap | deduped
    involved_handles: Tuple[str, ...]
    detail: str = ""

    def __post_init__(self):
        if not self.involved_handles:
            raise ValueError("CleanFix needs at least one involved handle")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "involved_handles": list(self.involved_handles), "detail": self.detail}


def drop_irrelevant(doc: CadDocument, profile: ConversionProfile) -> Tuple[CadDocument, List[CleanFix]]:
    kept = []
    fixes = []
    reference = set(doc.reference_handles)

    for e in doc.entities:
        rule = profile.match_rule(e.layer)
        if rule is None:
            fixes.append(CleanFix("dropped-entity", (e.handle,), f"unmapped layer '{e.layer}'"))
            continue
        if rule.action == LayerAction.DROP:
            fixes.append(CleanFix("dropped-entity", (e.handle,), f"layer '{e.layer}' matches drop rule '{rule.match}'"))
            continue
        if rule.action == LayerAction.REFERENCE_ONLY:
            reference.add(e.handle)
        kept.append(e)

    unmapped = sorted({f.detail for f in fixes if f.detail.startswith("unmapped")})
    for detail in unmapped:
        logger.warning(f"Dropping entities on {detail}")

    return replace(doc, entities=tuple(kept), reference_handles=frozenset(reference)), fixes


def dedupe_entities(doc: CadDocument) -> Tuple[CadDocument, List[CleanFix]]:
    seen: Dict[tuple, str] = {}
    kept = []
    fixes = []

    for e in doc.entities:
        if e.kind == EntityKind.UNSUPPORTED:
            kept.append(e)
            continue
        key = (e.kind, e.layer, e.geometry)
        if key in seen:
            fixes.append(CleanFix("deduped", (e.handle, seen[key]), f"identical {e.kind.value} on layer '{e.layer}'"))
            continue
        seen[key] = e.handle
        kept.append(e)

    return doc.with_entities(kept), fixes


# Gap bridging
def _distance_to_line(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    d = b - a
    return abs(d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0])) / math.hypot(d[0], d[1])


@dataclass(frozen=True)
class _OpenEnd:
    entity: int     # index into the candidate entity list
    side: int       # 0 = first vertex, 1 = last vertex
    terminal: XY
    adjacent: XY


@dataclass(frozen=True)
class _GapLink:
    gap: float
    a: _OpenEnd
    b: _OpenEnd
    detail: str


def _open_ends(entities: List[CadEntity]) -> List[_OpenEnd]:
    ends = []
    for i, e in enumerate(entities):
        v = e.vertices
        ends.append(_OpenEnd(i, 0, v[0], v[1]))
        ends.append(_OpenEnd(i, 1, v[-1], v[-2]))
    return ends


def _qualifies(a: _OpenEnd, b: _OpenEnd, tol: Tolerances) -> bool:
    pa = np.asarray(a.terminal)
    pb = np.asarray(b.terminal)
    qa = np.asarray(a.adjacent)
    qb = np.asarray(b.adjacent)
    gap = pb - pa
    # both ends must face each other across the gap
    if np.dot(gap, pa - qa) <= 0 or np.dot(-gap, pb - qb) <= 0:
        return False
    for p in (pb, qb):
        if _distance_to_line(p, qa, pa) > tol.lateral_offset:
            return False
    for p in (pa, qa):
        if _distance_to_line(p, qb, pb) > tol.lateral_offset:
            return False
    return True


def _canonical_ring(vertices: List[XY]) -> Tuple[XY, ...]:
    start = min(range(len(vertices)), key=lambda i: vertices[i])
    ring = vertices[start:] + vertices[:start]
    if ring[-1] < ring[1]:
        ring = [ring[0]] + ring[1:][::-1]
    return tuple(ring)


def _find_links(entities: List[CadEntity], texts: Optional[cKDTree], text_content: List[str], tol: Tolerances) -> List[_GapLink]:
    """Every qualifying end pair, shortest gap first."""
    ends = _open_ends(entities)
    if not ends or texts is None:
        return []

    points = np.array([end.terminal for end in ends])
    links = []
    for i, j in cKDTree(points).query_pairs(r=tol.gap_bridge):
        a, b = ends[i], ends[j]
        if a.entity == b.entity or entities[a.entity].layer != entities[b.entity].layer:
            continue
        gap = float(np.hypot(*(points[j] - points[i])))
        if gap <= 0.0 or gap > tol.gap_bridge or not _qualifies(a, b, tol):
            continue
        near = texts.query_ball_point((points[i] + points[j]) / 2.0, r=tol.gap_bridge)
        if not near:
            continue
        if (entities[b.entity].handle, b.side) < (entities[a.entity].handle, a.side):
            a, b = b, a
        links.append(_GapLink(gap, a, b, f"gap {gap:.6f} bridged under text '{text_content[min(near)]}'"))

    links.sort(key=lambda k: (k.gap, entities[k.a.entity].handle, k.a.side, entities[k.b.entity].handle, k.b.side))
    return links


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> bool:
        ri = self.find(i)
        rj = self.find(j)
        if ri == rj:
            return False
        self.parent[max(ri, rj)] = min(ri, rj)
        return True


def _axis(link: _GapLink) -> np.ndarray:
    d = np.asarray(link.b.terminal, dtype=float) - np.asarray(link.a.terminal, dtype=float)
    d = d / math.hypot(d[0], d[1])
    if d[0] < 0 or (d[0] == 0 and d[1] < 0):
        d = -d
    return d


def _walk(entities: List[CadEntity], members: List[int], links: List[_GapLink]) -> Optional[Tuple[List[XY], bool]]:
    """Vertex chain of pieces joined end to end, None when pieces branch or overlap."""
    partner: Dict[Tuple[int, int], Tuple[int, int]] = {}
    for link in links:
        ka = (link.a.entity, link.a.side)
        kb = (link.b.entity, link.b.side)
        if ka in partner or kb in partner:
            return None
        partner[ka] = kb
        partner[kb] = ka
    if len(links) not in (len(members) - 1, len(members)):
        return None

    closed = len(links) == len(members)
    if closed:
        start, side = min(members), 0
    else:
        start, side = min((m, s) for m in members for s in (0, 1) if (m, s) not in partner)

    vertices: List[XY] = []
    current = start
    for _ in members:
        v = list(entities[current].vertices)
        if side == 1:
            v.reverse()
        vertices.extend(v)
        nxt = partner.get((current, 1 - side))
        if nxt is None or nxt[0] == start:
            break
        current, side = nxt
    return vertices, closed


def _merge_component(entities: List[CadEntity], members: List[int], links: List[_GapLink]) -> Tuple[Tuple[XY, ...], bool]:
    axis = _axis(links[0])
    walked = _walk(entities, members, links)
    if walked is None:
        points = {v for m in members for v in entities[m].vertices}
        vertices = sorted(points, key=lambda v: (float(np.dot(v, axis)), v))
        closed = False
    else:
        vertices, closed = walked

    cleaned: List[XY] = []
    for v in vertices:
        if not cleaned or cleaned[-1] != v:
            cleaned.append(v)
    if closed:
        if len(cleaned) > 1 and cleaned[0] == cleaned[-1]:
            cleaned.pop()
        if len(cleaned) >= 3:
            return _canonical_ring(cleaned), True

    # ascending along the gap direction, ties by coordinates
    span = float(np.dot(np.subtract(cleaned[-1], cleaned[0]), axis))
    if span < 0 or (span == 0 and cleaned[-1] < cleaned[0]):
        cleaned.reverse()
    return tuple(cleaned), False


def bridge_text_gaps(doc: CadDocument, tol: Tolerances) -> Tuple[CadDocument, List[CleanFix]]:
    """Merge collinear Line/Polyline pieces separated by a text-induced gap.

    Every qualifying end pair joins its two pieces and joins are transitive,
    so each connected group of pieces becomes one polyline ordered along the
    gap direction. Repeats until no pair qualifies.
    """
    text_entities = [e for e in doc.entities if e.kind == EntityKind.TEXT]
    texts = cKDTree(np.array([e.geometry.insert for e in text_entities])) if text_entities else None
    text_content = [e.geometry.content for e in text_entities]

    all_fixes: List[CleanFix] = []
    entities = list(doc.entities)

    while True:
        candidates = [e for e in entities if e.is_linear and not e.closed]
        links = _find_links(candidates, texts, text_content, tol)
        if not links:
            break

        def fix_for(link: _GapLink) -> CleanFix:
            handles = (candidates[link.a.entity].handle, candidates[link.b.entity].handle)
            return CleanFix("bridged-gap", handles, link.detail)

        groups = _UnionFind(len(candidates))
        redundant = set()
        for link in links:
            if groups.union(link.a.entity, link.b.entity):
                all_fixes.append(fix_for(link))
            else:
                redundant.add(link)

        members: Dict[int, List[int]] = {}
        for i in range(len(candidates)):
            members.setdefault(groups.find(i), []).append(i)
        component_links: Dict[int, List[_GapLink]] = {}
        for link in links:
            component_links.setdefault(groups.find(link.a.entity), []).append(link)

        # merged entity takes the place and handle of its earliest piece
        replacement: Dict[str, Optional[CadEntity]] = {}
        for root, group in members.items():
            if len(group) < 2:
                continue
            vertices, closed = _merge_component(candidates, group, component_links[root])
            if closed:
                # the gap that closes a ring is bridged too
                all_fixes.extend(fix_for(link) for link in component_links[root] if link in redundant)
            survivor = candidates[min(group)]
            for m in group:
                replacement[candidates[m].handle] = None
            replacement[survivor.handle] = CadEntity(
                handle=survivor.handle,
                layer=survivor.layer,
                kind=EntityKind.POLYLINE,
                geometry=PolylineGeometry(vertices, closed)
            )

        rebuilt = []
        for e in entities:
            e = replacement.get(e.handle, e)
            if e is not None:
                rebuilt.append(e)
        entities = rebuilt

    if all_fixes:
        logger.info(f"Bridged {len(all_fixes)} text gaps ({len(doc.entities) - len(entities)} entities absorbed)")
    return doc.with_entities(entities), all_fixes


# Pass wrappers
class DropIrrelevantPass(CadPassBase):
    name = "drop"

    def apply(self, doc: CadDocument, profile: ConversionProfile) -> Tuple[CadDocument, List[CleanFix]]:
        return drop_irrelevant(doc, profile)


class DedupeEntitiesPass(CadPassBase):
    name = "dedupe"

    def apply(self, doc: CadDocument, profile: ConversionProfile) -> Tuple[CadDocument, List[CleanFix]]:
        return dedupe_entities(doc)


class BridgeTextGapsPass(CadPassBase):
    name = "bridge"

    def apply(self, doc: CadDocument, profile: ConversionProfile) -> Tuple[CadDocument, List[CleanFix]]:
        return bridge_text_gaps(doc, profile.tolerances)


def default_cad_passes() -> List[CadPassBase]:
    return [DropIrrelevantPass(), DedupeEntitiesPass(), BridgeTextGapsPass()]
