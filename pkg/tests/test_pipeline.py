import pytest
import json
from pathlib import Path
from time import perf_counter
from cadgis.passes import ConversionException
from cadgis.pipeline import EXIT_CLEAN, EXIT_ERROR, EXIT_WARNINGS, Pipeline, PipelineConfig, run_pipeline
from cadgis.synthetic import generate_campus


def write_campus(directory: Path, **counts) -> tuple:
    campus = generate_campus(**counts)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "campus.dxf").write_text(campus.dxf_text, encoding="utf-8")
    (directory / "campus_profile.json").write_text(campus.profile_text, encoding="utf-8")
    (directory / "campus_control_points.csv").write_text(campus.control_points_text, encoding="utf-8")
    config = PipelineConfig(
        dxf_path=str(directory / "campus.dxf"),
        profile_path=str(directory / "campus_profile.json"),
        control_points_path=str(directory / "campus_control_points.csv"),
        out_dir=str(directory / "out"),
        report_path=str(directory / "out" / "report.json")
    )
    return config, campus.expected


def assert_matches(summary: dict, expected: dict):
    for key in ("total", "bridged", "merged", "deduped", "dropped", "unsupported", "converted",
                "collapsed", "closed", "attached", "orphans", "snapped", "dangles"):
        assert summary[key] == expected[key], key


def test_campus_clean(tmp_path):
    config, expected = write_campus(tmp_path)

    exit_code, report = Pipeline(config).run()

    assert exit_code == EXIT_CLEAN
    assert_matches(report.summary, expected)
    assert report.summary["unclosed"] == 0
    assert report.summary["rms"] < 1e-6
    assert report.georef["reference_features"] == expected["reference"]
    assert report.ledger.balanced
    assert report.summary["features"] == {"point": 4, "line": 12, "polygon": 2, "annotation": 6}

    written = json.loads((tmp_path / "out" / "report.json").read_text(encoding="utf-8"))
    assert written["ledger"]["balanced"] is True
    assert written["summary"]["bridged"] == 3

    out = tmp_path / "out"
    for klass in ("point", "line", "polygon", "annotation"):
        assert (out / f"campus_{klass}.geojson").exists()
        for ext in ("shp", "shx", "dbf", "prj", "cpg"):
            assert (out / f"campus_{klass}.{ext}").exists()
    lines = json.loads((out / "campus_line.geojson").read_text(encoding="utf-8"))
    assert lines["crs"]["properties"]["name"] == "EPSG:26971"
    # gap texts and the conduit label attach to lines, basin labels to polygons
    assert sum(1 for f in lines["features"] if "label" in f["properties"]) == 4


@pytest.mark.parametrize("counts", [
    {"dangles": 1},
    {"dangles": 3, "near_misses": 2},
    {"duplicates": 2, "unsupported": 3, "sidewalks": 0},
    {"conduits": 20, "text_gaps": 7, "manholes": 6, "unclosed_rings": 4, "annotations": 12, "buildings": 0},
    {"manholes": 1},
])
def test_campus_defects(tmp_path, counts):
    config, expected = write_campus(tmp_path, **counts)

    exit_code, report = Pipeline(config).run()

    assert_matches(report.summary, expected)
    assert report.ledger.balanced
    assert exit_code == (EXIT_WARNINGS if expected["dangles"] else EXIT_CLEAN)


def test_deterministic(tmp_path):
    first, _ = write_campus(tmp_path / "a", dangles=2, near_misses=1)
    second, _ = write_campus(tmp_path / "b", dangles=2, near_misses=1)

    Pipeline(first).run()
    Pipeline(second).run()

    a = sorted((tmp_path / "a" / "out").iterdir())
    b = sorted((tmp_path / "b" / "out").iterdir())
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_empty_drawing(tmp_path):
    config, _ = write_campus(tmp_path)
    Path(config.dxf_path).write_text("0\nSECTION\n2\nENTITIES\n0\nENDSEC\n0\nEOF\n", encoding="utf-8")

    exit_code, report = Pipeline(config).run()

    assert exit_code == EXIT_CLEAN
    assert report.summary["total"] == 0
    assert report.summary["features"] == {"point": 0, "line": 0, "polygon": 0, "annotation": 0}
    assert report.inventory["bbox"] is None
    assert len((tmp_path / "out" / "campus_point.shp").read_bytes()) == 100


def test_single_control_point(tmp_path, capsys):
    config, _ = write_campus(tmp_path)
    Path(config.control_points_path).write_text("src_x,src_y,dst_x,dst_y\n0,0,350000,1800000\n", encoding="utf-8")

    assert run_pipeline(config) == EXIT_ERROR
    assert "georef failed" in capsys.readouterr().err
    assert not Path(config.report_path).exists()


def test_unparseable_drawing(tmp_path, capsys):
    config, _ = write_campus(tmp_path)
    Path(config.dxf_path).write_text("0\nSECTION\n2\nENTITIES\n0\nLINE\n10\nnot-a-number\n0\nENDSEC\n0\nEOF\n", encoding="utf-8")

    assert run_pipeline(config) == EXIT_ERROR
    assert "parse failed" in capsys.readouterr().err


def test_skip_gis_passes(tmp_path):
    config, expected = write_campus(tmp_path)
    config = config.model_copy(update={"skip_passes": ("gis",)})

    exit_code, report = Pipeline(config).run()

    # rings stay open without the ring closure pass
    assert exit_code == EXIT_WARNINGS
    assert report.summary["unclosed"] == expected["closed"]
    assert report.summary["closed"] == 0
    assert report.summary["attached"] == 0
    assert report.summary["bridged"] == expected["bridged"]
    assert report.skipped_passes == ["gis"]
    assert report.ledger.balanced


def test_skip_bridge_pass(tmp_path):
    config, expected = write_campus(tmp_path)
    config = config.model_copy(update={"skip_passes": ("bridge",)})

    exit_code, report = Pipeline(config).run()

    assert report.summary["bridged"] == 0
    assert report.summary["merged"] == 0
    assert report.summary["converted"] == expected["converted"] + expected["merged"]
    # each unbridged gap leaves two dangling piece ends
    assert report.summary["dangles"] == 2 * expected["bridged"]
    assert exit_code == EXIT_WARNINGS


def test_unknown_pass(tmp_path):
    config, _ = write_campus(tmp_path)
    with pytest.raises(ConversionException) as exinfo:
        Pipeline(config.model_copy(update={"skip_passes": ("polish",)}))
    assert exinfo.value.stage == "config"


def test_max_residual(tmp_path):
    config, _ = write_campus(tmp_path)
    lines = Path(config.control_points_path).read_text(encoding="utf-8").splitlines()
    fields = lines[2].split(",")
    fields[2] = repr(float(fields[2]) + 5.0)
    lines[2] = ",".join(fields)
    Path(config.control_points_path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    exit_code, report = Pipeline(config.model_copy(update={"max_residual": 1.0})).run()

    assert exit_code == EXIT_WARNINGS
    assert report.summary["residual_suspects"] >= 1
    assert report.georef["residuals"]["suspects"][0]["label"] == "corner2"


def test_formats(tmp_path):
    config, _ = write_campus(tmp_path)
    Pipeline(config.model_copy(update={"formats": ("geojson",)})).run()
    out = tmp_path / "out"
    assert (out / "campus_line.geojson").exists()
    assert not (out / "campus_line.shp").exists()

    with pytest.raises(ValueError):
        PipelineConfig.model_validate({**config.model_dump(), "formats": ("kml",)})


def test_ten_thousand_entities(tmp_path):
    config, expected = write_campus(tmp_path, conduits=8000, text_gaps=1000, annotations=1000)
    assert expected["total"] >= 10000

    start = perf_counter()
    exit_code, report = Pipeline(config).run()
    elapsed = perf_counter() - start

    assert exit_code == EXIT_CLEAN
    assert_matches(report.summary, expected)
    assert elapsed < 5.0
