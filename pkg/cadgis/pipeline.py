import logging
from pathlib import Path
import sys
import traceback
from typing import Dict, List, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator
from .cad_clean import CleanFix, default_cad_passes
from .cad_model import CadDocument, inventory, parse_dxf
from .convert import UNCLOSED_RING_CANDIDATE, ConversionResult, FeatureClass, FeatureSet, convert_document
from .georef import ResidualReport, TransformBase, apply_transform, fit_transform, load_control_points, residuals
from .gis_clean import TopologyReport, default_gis_passes
from .io_formats import Ledger, QaReport, write_geojson, write_report, write_shapefile
from .passes import ConversionException, PassChain
from .profile import ConversionProfile, load_profile
from .qalog import QaLogWriter


logger = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_WARNINGS = 1
EXIT_ERROR = 2


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dxf_path: str = Field(min_length=1)
    profile_path: str = Field(min_length=1)
    control_points_path: str = Field(min_length=1)
    out_dir: str = Field(min_length=1)
    formats: Tuple[str, ...] = ("geojson", "shapefile")
    report_path: str = Field(min_length=1)
    skip_passes: Tuple[str, ...] = ()
    max_residual: Optional[float] = Field(default=None, ge=0)
    qa_log: Optional[str] = None
    operator: str = ""

    @field_validator("formats")
    @classmethod
    def check_formats(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        if not v:
            raise ValueError("at least one output format is required")
        for f in v:
            if f not in ("geojson", "shapefile"):
                raise ValueError(f"unknown output format '{f}'")
        return tuple(dict.fromkeys(v))


def read_text(path: str, stage: str, errors: str = "strict") -> str:
    try:
        with open(path, "r", encoding="utf-8", errors=errors, newline="") as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as ex:
        raise ConversionException(f"cannot read {path}: {ex}", stage=stage)


def write_bytes(path: Path, data: bytes):
    try:
        path.write_bytes(data)
    except OSError as ex:
        raise ConversionException(f"cannot write {path}: {ex}", stage="export")


class Pipeline:
    def __init__(self, config: PipelineConfig, chain: PassChain = None):
        self.config = config
        if chain is None:
            chain = PassChain()
            for p in default_cad_passes() + default_gis_passes():
                chain.add_pass(p)
        self.chain = chain
        self.chain.skip(list(config.skip_passes))

    def clean_cad(self, doc: CadDocument, profile: ConversionProfile) -> Tuple[CadDocument, List[CleanFix], int, int]:
        """Step 2. Returns the cleaned document, fixes, dropped and merged entity counts."""
        fixes = []
        dropped = 0
        merged = 0
        for p in self.chain.cad_passes:
            before = len(doc.entities)
            doc, pass_fixes = p.apply(doc, profile)
            removed = before - len(doc.entities)
            if p.name == "bridge":
                merged += removed
            else:
                dropped += removed
            fixes.extend(pass_fixes)
            logger.info(f"Step 2: {p.name} -> {len(pass_fixes)} fixes, {removed} entities removed")
        return doc, fixes, dropped, merged

    def clean_gis(self, fs: FeatureSet, profile: ConversionProfile) -> Tuple[FeatureSet, TopologyReport]:
        report = TopologyReport()
        for p in self.chain.gis_passes:
            fs, fragment = p.apply(fs, profile)
            report = report.merge(fragment)
        return fs, report

    def georeference(self, conversion: ConversionResult, profile: ConversionProfile) -> Tuple[FeatureSet, FeatureSet, TransformBase, ResidualReport]:
        pairs = load_control_points(read_text(self.config.control_points_path, stage="georef"))
        t = fit_transform(pairs, profile.transform_model)
        res = residuals(t, pairs)
        logger.info(f"Step 4: {t.model} fit on {len(pairs)} pairs, rms={res.rms:.9f} max={res.max:.9f}")
        fs = apply_transform(conversion.features, t, profile.crs)
        reference = apply_transform(conversion.reference, t, profile.crs)
        return fs, reference, t, res

    def export(self, fs: FeatureSet) -> Dict[str, Dict[str, str]]:
        out_dir = Path(self.config.out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as ex:
            raise ConversionException(f"cannot create {out_dir}: {ex}", stage="export")

        stem = Path(self.config.dxf_path).stem
        field_maps = {}
        if "geojson" in self.config.formats:
            for klass, text in write_geojson(fs).items():
                write_bytes(out_dir / f"{stem}_{klass.value}.geojson", text.encode("utf-8"))
        if "shapefile" in self.config.formats:
            for klass in FeatureClass:
                parts = write_shapefile(fs.of_class(klass), klass)
                base = f"{stem}_{klass.value}"
                write_bytes(out_dir / f"{base}.shp", parts.shp)
                write_bytes(out_dir / f"{base}.shx", parts.shx)
                write_bytes(out_dir / f"{base}.dbf", parts.dbf)
                write_bytes(out_dir / f"{base}.prj", parts.prj.encode("utf-8"))
                write_bytes(out_dir / f"{base}.cpg", parts.cpg.encode("ascii"))
                field_maps[klass.value] = parts.field_map
        logger.info(f"Outputs written to {out_dir}")
        return field_maps

    def run(self) -> Tuple[int, QaReport]:
        cfg = self.config
        source_name = Path(cfg.dxf_path).name

        # Step 1: inventory against the authored profile
        profile = load_profile(read_text(cfg.profile_path, stage="profile"))
        doc = parse_dxf(read_text(cfg.dxf_path, stage="parse", errors="replace"), source_name=source_name)
        inv = inventory(doc, profile)
        total = len(doc.entities)

        # Step 2
        doc, fixes, dropped, merged = self.clean_cad(doc, profile)

        # Step 3
        conversion = convert_document(doc, profile)
        dropped += conversion.dropped

        # Step 4
        fs, reference, t, res = self.georeference(conversion, profile)

        # Step 5
        fs, topology = self.clean_gis(fs, profile)

        field_maps = self.export(fs)

        fix_counts = {"dropped-entity": 0, "deduped": 0, "bridged-gap": 0}
        for fix in fixes:
            fix_counts[fix.kind] += 1
        suspects = res.suspects(cfg.max_residual)
        unclosed = sum(1 for f in fs.features if UNCLOSED_RING_CANDIDATE in f.flags)
        warnings = list(conversion.warnings) + list(topology.warnings)
        if doc.z_discarded:
            warnings.append(f"discarded {doc.z_discarded} Z coordinates")
        if doc.bulges_ignored:
            warnings.append(f"ignored {doc.bulges_ignored} polyline bulges")
        for layer in inv.unmapped_layers:
            warnings.append(f"unmapped layer '{layer}'")

        summary = {
            "total": total,
            "bridged": fix_counts["bridged-gap"],
            "deduped": fix_counts["deduped"],
            "dropped": dropped,
            "merged": merged,
            "unsupported": conversion.unsupported_skipped,
            "converted": conversion.converted,
            "collapsed": conversion.collapsed_circles + topology.collapsed_polygons,
            "closed": topology.closed_rings,
            "unclosed": unclosed,
            "attached": topology.attached_annotations,
            "orphans": topology.orphan_annotations or 0,
            "ambiguous": len(topology.ambiguous_annotations),
            "snapped": topology.snapped_clusters,
            "dangles": topology.dangle_count,
            "collapsed_lines": len(topology.collapsed_lines),
            "residual_suspects": len(suspects),
            "rms": res.rms,
            "features": fs.counts(),
        }

        report = QaReport(
            source_name=source_name,
            inventory=inv.to_dict(),
            step2={"fixes": [f.to_dict() for f in fixes], "counts": fix_counts, "merged": merged},
            conversion={**conversion.summary(), "warnings": list(conversion.warnings)},
            georef={
                "model": t.model,
                "params": t.params(),
                "residuals": res.to_dict(cfg.max_residual),
                "crs": profile.crs.model_dump(exclude_none=True),
                "reference_features": len(reference),
            },
            step5=topology.to_dict(),
            summary=summary,
            ledger=Ledger(
                total=total,
                converted=conversion.converted,
                dropped=dropped,
                merged=merged,
                unsupported=conversion.unsupported_skipped
            ),
            dbf_field_maps=field_maps,
            skipped_passes=sorted(set(cfg.skip_passes)),
            warnings=warnings
        )
        if not report.ledger.balanced:
            logger.error(f"Conservation ledger does not balance: {report.ledger}")

        try:
            Path(cfg.report_path).parent.mkdir(parents=True, exist_ok=True)
        except OSError as ex:
            raise ConversionException(f"cannot create report directory: {ex}", stage="export")
        write_bytes(Path(cfg.report_path), write_report(report).encode("utf-8"))

        if cfg.qa_log:
            try:
                QaLogWriter(connection_str=cfg.qa_log).write_run(report, operator=cfg.operator)
            except Exception as ex:
                logger.error(f"Error at opening QA log {cfg.qa_log}: {ex}\n{traceback.format_exc()}")

        has_warnings = summary["dangles"] or summary["orphans"] or summary["collapsed_lines"] or unclosed or suspects
        exit_code = EXIT_WARNINGS if has_warnings else EXIT_CLEAN
        logger.info(
            f"Done: {summary['features']} features, dangles={summary['dangles']} orphans={summary['orphans']} "
            f"unclosed={unclosed} suspects={len(suspects)} -> exit {exit_code}"
        )
        return exit_code, report


def run_pipeline(cfg: PipelineConfig) -> int:
    try:
        exit_code, _ = Pipeline(cfg).run()
        return exit_code
    except ConversionException as cex:
        logger.debug(traceback.format_exc())
        print(f"{cex.stage} failed: {cex.message}", file=sys.stderr)
        return cex.exit_code
