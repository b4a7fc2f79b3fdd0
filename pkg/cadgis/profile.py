from enum import Enum
from functools import lru_cache
import json
import logging
import re
from typing import Dict, Literal, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, StrictInt, ValidationError, field_validator, model_validator
from .passes import ProfileValidationException


logger = logging.getLogger(__name__)

RESERVED_ATTRIBUTES = ("layer", "handle", "label", "radius", "attached_to")


class LayerAction(str, Enum):
    DROP = "drop"
    POINT = "point"
    LINE = "line"
    POLYGON = "polygon"
    ANNOTATION = "annotation"
    REFERENCE_ONLY = "reference-only"


class _ProfileModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LayerRule(_ProfileModel):
    match: str = Field(min_length=1)
    action: LayerAction
    collapse: Optional[Literal["centroid"]] = None
    attributes: Dict[str, str] = Field(default_factory=dict)

    @field_validator("attributes")
    @classmethod
    def check_reserved(cls, v: Dict[str, str]) -> Dict[str, str]:
        for key in v:
            if key in RESERVED_ATTRIBUTES:
                raise ValueError(f"attribute key '{key}' is reserved")
            if not key:
                raise ValueError("attribute key must not be empty")
        return v

    @model_validator(mode="after")
    def check_collapse(self) -> "LayerRule":
        if self.collapse is not None and self.action != LayerAction.POINT:
            raise ValueError(f"collapse is only allowed with action 'point', not '{self.action.value}'")
        return self

    def matches(self, layer: str) -> bool:
        return _glob_regex(self.match).fullmatch(layer) is not None


class Tolerances(_ProfileModel):
    """Repair tolerances. Drawing units for CAD-side values, target CRS units for the rest."""
    gap_bridge: float = Field(default=2.0, ge=0)
    lateral_offset: float = Field(default=0.1, ge=0)
    snap: float = Field(default=0.05, ge=0)
    ring_close: float = Field(default=0.05, ge=0)
    annotation_attach: float = Field(default=2.0, ge=0)
    arc_chord: float = Field(default=0.05, gt=0)
    dangle: float = Field(default=0.05, ge=0)


class CrsInfo(_ProfileModel):
    epsg: StrictInt = Field(gt=0)
    wkt: Optional[str] = None

    @property
    def name(self) -> str:
        return f"EPSG:{self.epsg}"


class ConversionProfile(_ProfileModel):
    rules: Tuple[LayerRule, ...] = ()
    tolerances: Tolerances = Field(default_factory=Tolerances)
    crs: CrsInfo
    transform_model: Literal["similarity", "affine"] = "similarity"

    def match_rule(self, layer: str) -> Optional[LayerRule]:
        for r in self.rules:
            if r.matches(layer):
                return r
        return None

    def layer_action(self, layer: str) -> LayerAction:
        return classify_layer(self, layer)

    def collapses(self, layer: str) -> bool:
        r = self.match_rule(layer)
        return r is not None and r.action == LayerAction.POINT and r.collapse == "centroid"


@lru_cache(maxsize=1024)
def _glob_regex(pattern: str) -> "re.Pattern":
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.DOTALL)


def classify_layer(profile: ConversionProfile, layer: str) -> LayerAction:
    """Action of the first rule matching the layer; unmapped layers drop."""
    r = profile.match_rule(layer)
    if r is None:
        return LayerAction.DROP
    return r.action


def load_profile(text: str) -> ConversionProfile:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as jdex:
        raise ProfileValidationException(f"invalid JSON at line {jdex.lineno}: {jdex.msg}")

    if not isinstance(data, dict):
        raise ProfileValidationException("profile must be a JSON object")

    try:
        profile = ConversionProfile.model_validate(data)
    except ValidationError as vex:
        err = vex.errors()[0]
        loc = ".".join(str(p) for p in err["loc"])
        raise ProfileValidationException(err["msg"], field=loc)

    logger.info(f"Profile loaded: {len(profile.rules)} rules, {profile.crs.name}, model={profile.transform_model}")
    return profile


def dump_profile(profile: ConversionProfile) -> str:
    return json.dumps(profile.model_dump(mode="json", exclude_none=True), sort_keys=True, indent=2)
