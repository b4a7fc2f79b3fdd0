from abc import ABC, abstractmethod
import logging
from typing import TYPE_CHECKING, List, Optional, Tuple

if TYPE_CHECKING:
    from .cad_clean import CleanFix
    from .cad_model import CadDocument
    from .convert import FeatureSet
    from .gis_clean import TopologyReport
    from .profile import ConversionProfile


logger = logging.getLogger(__name__)


# Exceptions
class ConversionException(Exception):
    def __init__(self, message: str, stage: str = "pipeline", exit_code: int = 2) -> None:
        super().__init__(message)
        self.message = message
        self.stage = stage
        self.exit_code = exit_code

    def __str__(self) -> str:
        return self.message


class DxfParseException(ConversionException):
    def __init__(self, message: str, line: int = 0) -> None:
        super().__init__(f"line {line}: {message}" if line else message, stage="parse")
        self.line = line


class DxfStructureException(ConversionException):
    def __init__(self, message: str) -> None:
        super().__init__(message, stage="parse")


class ProfileValidationException(ConversionException):
    def __init__(self, message: str, field: str = "") -> None:
        super().__init__(f"{field}: {message}" if field else message, stage="profile")
        self.field = field


class ControlPointException(ConversionException):
    def __init__(self, message: str, line: int = 0) -> None:
        super().__init__(f"line {line}: {message}" if line else message, stage="georef")
        self.line = line


class EstimationException(ConversionException):
    def __init__(self, message: str) -> None:
        super().__init__(message, stage="georef")


class TransformException(ConversionException):
    def __init__(self, message: str) -> None:
        super().__init__(message, stage="georef")


class GeometryException(ConversionException):
    def __init__(self, message: str) -> None:
        super().__init__(message, stage="convert")


class ExportException(ConversionException):
    def __init__(self, message: str) -> None:
        super().__init__(message, stage="export")


# Classes for cleaning passes
class CadPassBase(ABC):
    name: str = "cad"

    @abstractmethod
    def apply(self, doc: "CadDocument", profile: "ConversionProfile") -> Tuple["CadDocument", List["CleanFix"]]:
        ...


class GisPassBase(ABC):
    name: str = "gis"

    @abstractmethod
    def apply(self, fs: "FeatureSet", profile: "ConversionProfile") -> Tuple["FeatureSet", "TopologyReport"]:
        ...


class PassChain:
    """Ordered CAD-side and GIS-side passes with name-based skipping."""

    def __init__(
        self,
        *,
        cad_passes: Optional[List[CadPassBase]] = None,
        gis_passes: Optional[List[GisPassBase]] = None
    ):
        self.cad_passes = cad_passes or []
        self.gis_passes = gis_passes or []

    def add_pass(self, p):
        if isinstance(p, CadPassBase):
            self.cad_passes.append(p)
            logger.info(f"cad pass: {p.name}")
        elif isinstance(p, GisPassBase):
            self.gis_passes.append(p)
            logger.info(f"gis pass: {p.name}")
        else:
            logger.warning(f"Invalid pass: {p.__class__.__name__}")

    def skip(self, names: List[str]):
        skipped = set(names)
        if "cad" in skipped:
            skipped.update(p.name for p in self.cad_passes)
        if "gis" in skipped:
            skipped.update(p.name for p in self.gis_passes)
        known = {p.name for p in self.cad_passes} | {p.name for p in self.gis_passes} | {"cad", "gis"}
        for name in sorted(skipped - known):
            raise ConversionException(f"unknown pass name '{name}'", stage="config")
        self.cad_passes = [p for p in self.cad_passes if p.name not in skipped]
        self.gis_passes = [p for p in self.gis_passes if p.name not in skipped]
        for name in sorted(skipped & (known - {"cad", "gis"})):
            logger.info(f"pass skipped: {name}")

    @property
    def names(self) -> List[str]:
        return [p.name for p in self.cad_passes] + [p.name for p in self.gis_passes]
