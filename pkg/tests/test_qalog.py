import pytest
from uuid import uuid4
from sqlalchemy import Column, String
from cadgis.io_formats import Ledger, QaReport
from cadgis.qalog import QaEvent, QaLog, QaLogBase, QaLogWriter, _QaLogBase, report_events

sqlite_conn_str = "sqlite:///cadgis_test.db"

DB_CONNECTION_STR = sqlite_conn_str


# Custom log for test
class ProjectQaLog(QaLogBase):
    project = Column(String)


class ProjectQaEvent(QaEvent):
    def to_qalog(self, qalog_cls: _QaLogBase, run_id, created_at, source_name, operator) -> _QaLogBase:
        qalog = super().to_qalog(qalog_cls, run_id, created_at, source_name, operator)
        qalog.project = "campus"
        return qalog


@pytest.fixture
def report() -> QaReport:
    return QaReport(
        source_name="campus.dxf",
        step2={"fixes": [
            {"kind": "bridged-gap", "involved_handles": ["1A", "1B"], "detail": "gap 2.000000 bridged under text '8'"},
            {"kind": "deduped", "involved_handles": ["2C", "2A"], "detail": "identical Line on layer 'SEWER'"},
        ]},
        conversion={"warnings": ["3F: Line on layer 'CB' cannot form a polygon, kept as line"]},
        georef={"residuals": {
            "residuals": [{"index": 0, "label": "NW", "residual": 0.01}, {"index": 1, "label": "", "residual": 0.9}],
            "suspects": [{"index": 1, "label": "", "residual": 0.9}],
        }},
        step5={
            "unclosed_rings": [{"feature_id": "F000007", "gap": 0.5}],
            "ambiguous_annotations": [],
            "degenerate_collapses": [],
            "collapsed_lines": ["F000009"],
            "dangles": [{"feature_id": "F000002", "end": "end", "x": 1.0, "y": 2.0, "distance": 15.0}],
        },
        ledger=Ledger(total=20, converted=17, dropped=2, merged=1),
    )


def test_report_events(report):
    events = report_events(report)
    kinds = [(e.stage, e.kind) for e in events]

    assert kinds == [
        ("summary", "run"),
        ("cad_clean", "bridged-gap"),
        ("cad_clean", "deduped"),
        ("convert", "warning"),
        ("georef", "residual"),
        ("georef", "residual"),
        ("georef", "residual-suspect"),
        ("gis_clean", "unclosed-ring"),
        ("gis_clean", "collapsed-line"),
        ("gis_clean", "dangle"),
    ]
    assert events[-2].feature_ref == "F000009"
    assert events[1].feature_ref == "1A,1B"
    assert events[5].feature_ref == "1"
    assert events[-1].value == 15.0


def test_write_run(report):
    writer = QaLogWriter(connection_str=DB_CONNECTION_STR)
    run_id = writer.write_run(report, operator="tester")

    db = writer.get_session()
    try:
        rows = db.query(QaLog).filter(QaLog.run_id == run_id).order_by(QaLog.id).all()
    finally:
        db.close()

    assert len(rows) == 10
    assert all(r.source_name == "campus.dxf" for r in rows)
    assert all(r.operator == "tester" for r in rows)
    assert len({r.created_at for r in rows}) == 1
    assert rows[-1].kind == "dangle"
    assert rows[-1].feature_ref == "F000002"


def test_write_run_with_run_id(report):
    writer = QaLogWriter(connection_str=DB_CONNECTION_STR)
    run_id = str(uuid4())
    assert writer.write_run(report, run_id=run_id) == run_id


def test_custom_qalog(report):
    writer = QaLogWriter(connection_str=DB_CONNECTION_STR, qalog_cls=ProjectQaLog)
    run_id = str(uuid4())
    created_at = None
    qalogs = [
        ProjectQaEvent(e.stage, e.kind, e.feature_ref, e.detail, e.value).to_qalog(ProjectQaLog, run_id, created_at, report.source_name, "")
        for e in report_events(report)
    ]

    db = writer.get_session()
    try:
        writer.insert(qalogs, db)
        rows = db.query(ProjectQaLog).filter(ProjectQaLog.run_id == run_id).all()
    finally:
        db.close()

    assert len(rows) == 10
    assert all(r.project == "campus" for r in rows)
