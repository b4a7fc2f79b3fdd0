import argparse
import json
import logging
from pathlib import Path
import sys
import traceback
from typing import List, Optional
from pydantic import ValidationError
from . import __version__
from .cad_model import format_inventory, inventory, parse_dxf
from .georef import fit_transform, format_fit, load_control_points, residuals
from .gis_clean import validate_network
from .io_formats import read_geojson
from .passes import ConversionException
from .pipeline import EXIT_CLEAN, EXIT_ERROR, EXIT_WARNINGS, PipelineConfig, read_text, run_pipeline
from .profile import load_profile
from .synthetic import generate_campus


logger = logging.getLogger("cadgis")


def _formats(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cadgis", description="CAD (DXF) to GIS conversion pipeline")
    parser.add_argument("--version", action="version", version=f"cadgis {__version__}")
    parser.add_argument("--log-level", type=str, default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="log level (logs go to stderr)")
    sub = parser.add_subparsers(dest="command", required=True)

    convert = sub.add_parser("convert", help="run the five-step conversion")
    convert.add_argument("--dxf", type=str, required=True, help="input ASCII DXF")
    convert.add_argument("--profile", type=str, required=True, help="conversion profile JSON")
    convert.add_argument("--control-points", type=str, required=True, help="control point CSV")
    convert.add_argument("--out-dir", type=str, required=True, help="output directory")
    convert.add_argument("--formats", type=_formats, default=["geojson", "shapefile"], help="comma separated: geojson,shapefile")
    convert.add_argument("--report", type=str, required=True, help="QA report JSON path")
    convert.add_argument("--skip-pass", type=str, action="append", default=[], help="pass or group name to skip (repeatable)")
    convert.add_argument("--max-residual", type=float, default=None, required=False, help="flag control points above this residual")
    convert.add_argument("--qa-log", type=str, default=None, required=False, help="database connection string for the QA audit log")
    convert.add_argument("--operator", type=str, default="", required=False, help="operator name recorded in the QA audit log")

    inspect = sub.add_parser("inspect", help="print the layer inventory of a DXF")
    inspect.add_argument("dxf", type=str)
    inspect.add_argument("--profile", type=str, default=None, required=False, help="list layers no rule maps")

    fit = sub.add_parser("georef-fit", help="fit a transform to control points and print residuals")
    fit.add_argument("--control-points", type=str, required=True)
    fit.add_argument("--model", type=str, default="similarity", choices=["similarity", "affine"])
    fit.add_argument("--max-residual", type=float, default=None, required=False)

    validate = sub.add_parser("validate", help="report dangles and orphan annotations in GeoJSON output")
    validate.add_argument("geojson", type=str, nargs="+")
    validate.add_argument("--dangle-tol", type=float, default=0.05)

    synthetic = sub.add_parser("synthetic", help="write the synthetic campus fixture")
    synthetic.add_argument("--out-dir", type=str, required=True)
    synthetic.add_argument("--stem", type=str, default="campus")
    for name, default in (
        ("conduits", 12), ("text-gaps", 3), ("manholes", 4), ("unclosed-rings", 2), ("annotations", 6),
        ("dangles", 0), ("near-misses", 0), ("duplicates", 0), ("sidewalks", 2), ("buildings", 2), ("unsupported", 0)
    ):
        synthetic.add_argument(f"--{name}", type=int, default=default)

    return parser


def cmd_convert(args) -> int:
    try:
        cfg = PipelineConfig(
            dxf_path=args.dxf,
            profile_path=args.profile,
            control_points_path=args.control_points,
            out_dir=args.out_dir,
            formats=tuple(args.formats),
            report_path=args.report,
            skip_passes=tuple(args.skip_pass),
            max_residual=args.max_residual,
            qa_log=args.qa_log,
            operator=args.operator
        )
    except ValidationError as vex:
        err = vex.errors()[0]
        raise ConversionException(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}", stage="config")
    return run_pipeline(cfg)


def cmd_inspect(args) -> int:
    doc = parse_dxf(read_text(args.dxf, stage="parse", errors="replace"), source_name=Path(args.dxf).name)
    profile = load_profile(read_text(args.profile, stage="profile")) if args.profile else None
    sys.stdout.write(format_inventory(inventory(doc, profile)))
    return EXIT_CLEAN


def cmd_georef_fit(args) -> int:
    pairs = load_control_points(read_text(args.control_points, stage="georef"))
    t = fit_transform(pairs, args.model)
    report = residuals(t, pairs)
    sys.stdout.write(format_fit(t, report, args.max_residual))
    return EXIT_WARNINGS if report.suspects(args.max_residual) else EXIT_CLEAN


def cmd_validate(args) -> int:
    fs = read_geojson([read_text(p, stage="export") for p in args.geojson])
    report = validate_network(fs, args.dangle_tol)
    lines = [f"dangles: {report.dangle_count}"]
    for d in report.dangles:
        distance = "none" if d.distance is None else f"{d.distance:.9f}"
        lines.append(f"  {d.feature_id} {d.end} ({d.x:.9f}, {d.y:.9f}) nearest={distance}")
    lines.append(f"orphan annotations: {report.orphan_annotations}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_WARNINGS if report.dangle_count or report.orphan_annotations else EXIT_CLEAN


def cmd_synthetic(args) -> int:
    try:
        campus = generate_campus(
            conduits=args.conduits,
            text_gaps=args.text_gaps,
            manholes=args.manholes,
            unclosed_rings=args.unclosed_rings,
            annotations=args.annotations,
            dangles=args.dangles,
            near_misses=args.near_misses,
            duplicates=args.duplicates,
            sidewalks=args.sidewalks,
            buildings=args.buildings,
            unsupported=args.unsupported
        )
    except ValueError as ex:
        raise ConversionException(str(ex), stage="synthetic")

    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{args.stem}.dxf").write_text(campus.dxf_text, encoding="utf-8", newline="\n")
        (out_dir / f"{args.stem}_profile.json").write_text(campus.profile_text, encoding="utf-8", newline="\n")
        (out_dir / f"{args.stem}_control_points.csv").write_text(campus.control_points_text, encoding="utf-8", newline="\n")
        (out_dir / f"{args.stem}_expected.json").write_text(json.dumps(campus.expected, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
    except OSError as ex:
        raise ConversionException(f"cannot write fixture: {ex}", stage="synthetic")
    logger.info(f"Synthetic campus written to {out_dir}")
    return EXIT_CLEAN


COMMANDS = {
    "convert": cmd_convert,
    "inspect": cmd_inspect,
    "georef-fit": cmd_georef_fit,
    "validate": cmd_validate,
    "synthetic": cmd_synthetic,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger.setLevel(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except ConversionException as cex:
        logger.debug(traceback.format_exc())
        print(f"{cex.stage} failed: {cex.message}", file=sys.stderr)
        return cex.exit_code
    except Exception as ex:
        logger.error(f"Unexpected error: {ex}\n{traceback.format_exc()}")
        return EXIT_ERROR
