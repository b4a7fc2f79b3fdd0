__version__ = "0.1.0"

import logging

logger = logging.getLogger("cadgis")
logger.setLevel(logging.INFO)
log_format = logging.Formatter("[%(levelname)s] %(asctime)s : %(message)s")
streamHandler = logging.StreamHandler()
streamHandler.setFormatter(log_format)
logger.addHandler(streamHandler)


from .passes import (
    ConversionException,
    DxfParseException,
    DxfStructureException,
    ProfileValidationException,
    ControlPointException,
    EstimationException,
    TransformException,
    GeometryException,
    ExportException,
    CadPassBase,
    GisPassBase,
    PassChain
)

from .cad_model import CadDocument, CadEntity, EntityKind, LayerInventory, parse_dxf, inventory
from .profile import ConversionProfile, LayerRule, Tolerances, load_profile, classify_layer
from .convert import Feature, FeatureSet, FeatureClass, convert_document, tessellate_arc
from .georef import (
    ControlPointPair,
    SimilarityTransform,
    AffineTransform,
    estimate_similarity,
    estimate_affine,
    apply_transform,
    residuals
)
from .io_formats import QaReport, write_geojson, write_shapefile, write_report
from .qalog import QaLogBase, QaLog, QaLogWriter
from .pipeline import PipelineConfig, Pipeline, run_pipeline
