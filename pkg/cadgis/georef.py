from abc import ABC, abstractmethod
import csv
from dataclasses import dataclass
import io
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple
import numpy as np
from .cad_model import XY
from .convert import FeatureSet
from .passes import ControlPointException, EstimationException, TransformException
from .profile import CrsInfo


logger = logging.getLogger(__name__)

CONTROL_POINT_HEADER = ("src_x", "src_y", "dst_x", "dst_y")


@dataclass(frozen=True)
class ControlPointPair:
    source: XY
    target: XY
    label: str = ""

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.source + self.target):
            raise ControlPointException(f"non-finite coordinate in control point '{self.label}'")


def _affine_apply(points, a: float, b: float, c: float, d: float, e: float, f: float) -> np.ndarray:
    # elementwise, so equal inputs map to equal outputs whatever the array shape
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x = points[:, 0]
    y = points[:, 1]
    return np.column_stack([a * x + b * y + c, d * x + e * y + f])


class TransformBase(ABC):
    model: str = ""

    @abstractmethod
    def apply(self, points: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def params(self) -> Dict[str, float]:
        ...

    def __call__(self, xy: XY) -> XY:
        x, y = self.apply(np.asarray([xy], dtype=float))[0]
        return (float(x), float(y))


@dataclass(frozen=True)
class SimilarityTransform(TransformBase):
    """(x, y) -> s * R(rotation) * (x, y) + (tx, ty); rotation in radians."""
    scale: float
    rotation: float
    tx: float
    ty: float
    model = "similarity"

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.scale, self.rotation, self.tx, self.ty)):
            raise TransformException("similarity parameters must be finite")
        if self.scale <= 0:
            raise TransformException(f"similarity scale must be positive, got {self.scale}")

    @property
    def matrix(self) -> np.ndarray:
        c = math.cos(self.rotation)
        s = math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        (a, b), (d, e) = self.matrix
        return _affine_apply(points, a, b, self.tx, d, e, self.ty)

    def params(self) -> Dict[str, float]:
        return {
            "scale": self.scale,
            "rotation": self.rotation,
            "rotation_deg": math.degrees(self.rotation),
            "tx": self.tx,
            "ty": self.ty,
        }


@dataclass(frozen=True)
class AffineTransform(TransformBase):
    """(x, y) -> (a*x + b*y + c, d*x + e*y + f)"""
    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    model = "affine"

    def __post_init__(self):
        values = (self.a, self.b, self.c, self.d, self.e, self.f)
        if not all(math.isfinite(v) for v in values):
            raise TransformException("affine coefficients must be finite")
        if self.a * self.e - self.b * self.d == 0:
            raise TransformException("affine transform is degenerate (determinant 0)")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return _affine_apply(points, self.a, self.b, self.c, self.d, self.e, self.f)

    def params(self) -> Dict[str, float]:
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d, "e": self.e, "f": self.f}


def _arrays(pairs: Sequence[ControlPointPair]) -> Tuple[np.ndarray, np.ndarray]:
    src = np.array([p.source for p in pairs], dtype=float).reshape(-1, 2)
    dst = np.array([p.target for p in pairs], dtype=float).reshape(-1, 2)
    return src, dst


def estimate_similarity(pairs: Sequence[ControlPointPair]) -> SimilarityTransform:
    """Least-squares similarity (no reflection) in closed form."""
    if len(pairs) < 2:
        raise EstimationException(f"similarity needs at least 2 control point pairs, got {len(pairs)}")

    src, dst = _arrays(pairs)
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    p = src - src_mean
    q = dst - dst_mean

    var = float(np.sum(p * p))
    if var == 0.0:
        raise EstimationException("all source control points are coincident")

    sxx = float(np.sum(p[:, 0] * q[:, 0] + p[:, 1] * q[:, 1]))
    sxy = float(np.sum(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]))
    norm = math.hypot(sxx, sxy)
    if norm == 0.0:
        raise EstimationException("target control points are degenerate (no scale can be estimated)")

    rotation = math.atan2(sxy, sxx)
    scale = norm / var
    c = math.cos(rotation)
    s = math.sin(rotation)
    tx = dst_mean[0] - scale * (c * src_mean[0] - s * src_mean[1])
    ty = dst_mean[1] - scale * (s * src_mean[0] + c * src_mean[1])

    t = SimilarityTransform(scale=scale, rotation=rotation, tx=float(tx), ty=float(ty))
    logger.info(f"Similarity fit: scale={scale:.9f} rotation={math.degrees(rotation):.6f}deg t=({tx:.3f}, {ty:.3f})")
    return t


def estimate_affine(pairs: Sequence[ControlPointPair]) -> AffineTransform:
    if len(pairs) < 3:
        raise EstimationException(f"affine needs at least 3 control point pairs, got {len(pairs)}")

    src, dst = _arrays(pairs)
    design = np.column_stack([src, np.ones(len(src))])
    # centered rank check so large coordinates do not hide collinearity
    centered = src - src.mean(axis=0)
    if np.linalg.matrix_rank(centered) < 2 or np.linalg.matrix_rank(design) < 3:
        raise EstimationException("source control points are collinear or coincident")

    coef, _, _, _ = np.linalg.lstsq(design, dst, rcond=None)
    (a, d), (b, e), (c, f) = coef
    try:
        t = AffineTransform(a=float(a), b=float(b), c=float(c), d=float(d), e=float(e), f=float(f))
    except TransformException as tex:
        raise EstimationException(f"target control points are degenerate: {tex.message}")
    logger.info(f"Affine fit: a={a:.9f} b={b:.9f} c={c:.3f} d={d:.9f} e={e:.9f} f={f:.3f}")
    return t


def fit_transform(pairs: Sequence[ControlPointPair], model: str = "similarity") -> TransformBase:
    if model == "similarity":
        return estimate_similarity(pairs)
    elif model == "affine":
        return estimate_affine(pairs)
    raise EstimationException(f"unknown transform model '{model}'")


def apply_transform(fs: FeatureSet, t: TransformBase, crs: CrsInfo) -> FeatureSet:
    if fs.georeferenced:
        raise TransformException("feature set is already georeferenced")
    if crs is None:
        raise TransformException("a CRS is required to georeference")
    features = tuple(f.transformed(t.apply) for f in fs.features)
    return FeatureSet(features=features, crs=crs, georeferenced=True)


@dataclass(frozen=True)
class ResidualReport:
    residuals: Tuple[float, ...]
    labels: Tuple[str, ...]
    rms: float
    max: float

    def suspects(self, threshold: Optional[float]) -> List[Tuple[int, str, float]]:
        """Pairs whose residual exceeds the threshold, as (index, label, residual)."""
        if threshold is None:
            return []
        return [(i, self.labels[i], r) for i, r in enumerate(self.residuals) if r > threshold]

    def to_dict(self, threshold: Optional[float] = None) -> dict:
        return {
            "residuals": [
                {"index": i, "label": label, "residual": r}
                for i, (label, r) in enumerate(zip(self.labels, self.residuals))
            ],
            "rms": self.rms,
            "max": self.max,
            "max_residual_threshold": threshold,
            "suspects": [{"index": i, "label": label, "residual": r} for i, label, r in self.suspects(threshold)],
        }


def residuals(t: TransformBase, pairs: Sequence[ControlPointPair]) -> ResidualReport:
    if not pairs:
        raise EstimationException("no control point pairs to compute residuals for")
    src, dst = _arrays(pairs)
    diff = t.apply(src) - dst
    values = np.hypot(diff[:, 0], diff[:, 1])
    rms = float(math.sqrt(np.mean(values * values)))
    return ResidualReport(
        residuals=tuple(float(v) for v in values),
        labels=tuple(p.label for p in pairs),
        rms=rms,
        max=float(values.max())
    )


def load_control_points(text: str) -> List[ControlPointPair]:
    """Read the control point CSV: src_x,src_y,dst_x,dst_y[,label]"""
    reader = csv.reader(io.StringIO(text.lstrip("\ufeff"), newline=""))
    rows = list(reader)
    if not rows:
        raise ControlPointException("control point file is empty", line=1)

    header = tuple(h.strip() for h in rows[0])
    if header[:4] != CONTROL_POINT_HEADER or len(header) > 5 or (len(header) == 5 and header[4] != "label"):
        raise ControlPointException(f"header must be {','.join(CONTROL_POINT_HEADER)}[,label], got {','.join(header)}", line=1)

    pairs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not v.strip() for v in row):
            continue
        if len(row) < 4 or len(row) > len(header):
            raise ControlPointException(f"expected {len(header)} columns, got {len(row)}", line=lineno)
        try:
            sx, sy, dx, dy = (float(v) for v in row[:4])
        except ValueError:
            raise ControlPointException(f"non-numeric coordinate in {row[:4]}", line=lineno)
        label = row[4].strip() if len(row) > 4 else ""
        try:
            pairs.append(ControlPointPair((sx, sy), (dx, dy), label))
        except ControlPointException as cpex:
            raise ControlPointException(cpex.message, line=lineno)

    logger.info(f"Loaded {len(pairs)} control point pairs")
    return pairs


def format_fit(t: TransformBase, report: ResidualReport, threshold: Optional[float] = None) -> str:
    lines = [f"model: {t.model}"]
    for key, value in t.params().items():
        lines.append(f"{key}: {value:.12g}")
    lines.append(f"{'#':>4} {'label':<16} {'residual':>16}")
    for i, (label, r) in enumerate(zip(report.labels, report.residuals)):
        mark = " *" if threshold is not None and r > threshold else ""
        lines.append(f"{i:>4} {label:<16} {r:>16.9f}{mark}")
    lines.append(f"rms: {report.rms:.9f}")
    lines.append(f"max: {report.max:.9f}")
    return "\n".join(lines) + "\n"
