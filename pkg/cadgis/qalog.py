from datetime import datetime, timezone
import logging
import traceback
from typing import List, Optional
from uuid import uuid4
from sqlalchemy import Column, Integer, String, Float, DateTime, create_engine
from sqlalchemy.orm import sessionmaker, declarative_base, declared_attr, Session
from .io_formats import QaReport


logger = logging.getLogger(__name__)


class _QaLogBase:
    @declared_attr
    def __tablename__(cls):
        return cls.__name__.lower()

    @declared_attr
    def id(cls):
        return Column(Integer, primary_key=True)

    @declared_attr
    def run_id(cls):
        return Column(String)

    @declared_attr
    def created_at(cls):
        return Column(DateTime)

    @declared_attr
    def source_name(cls):
        return Column(String)

    @declared_attr
    def operator(cls):
        return Column(String)

    @declared_attr
    def stage(cls):
        return Column(String)

    @declared_attr
    def kind(cls):
        return Column(String)

    @declared_attr
    def feature_ref(cls):
        return Column(String)

    @declared_attr
    def detail(cls):
        return Column(String)

    @declared_attr
    def value(cls):
        return Column(Float)


QaLogBase = declarative_base(cls=_QaLogBase)


class QaLog(QaLogBase): ...


class QaEvent:
    def __init__(self, stage: str, kind: str, feature_ref: str = "", detail: str = "", value: Optional[float] = None) -> None:
        self.stage = stage
        self.kind = kind
        self.feature_ref = feature_ref
        self.detail = detail
        self.value = value

    def to_qalog(self, qalog_cls, run_id: str, created_at: datetime, source_name: str, operator: str) -> _QaLogBase:
        return qalog_cls(
            run_id=run_id,
            created_at=created_at,
            source_name=source_name,
            operator=operator,
            stage=self.stage,
            kind=self.kind,
            feature_ref=self.feature_ref,
            detail=self.detail,
            value=self.value
        )


def report_events(report: QaReport) -> List[QaEvent]:
    """Flatten a QA report into audit events, one per finding."""
    events = [QaEvent("summary", "run", detail=f"total={report.ledger.total} converted={report.ledger.converted}")]

    for fix in report.step2.get("fixes", []):
        events.append(QaEvent("cad_clean", fix["kind"], ",".join(fix["involved_handles"]), fix["detail"]))

    for warning in report.conversion.get("warnings", []):
        events.append(QaEvent("convert", "warning", detail=warning))

    residual_report = report.georef.get("residuals") or {}
    for r in residual_report.get("residuals", []):
        events.append(QaEvent("georef", "residual", r["label"] or str(r["index"]), value=r["residual"]))
    for r in residual_report.get("suspects", []):
        events.append(QaEvent("georef", "residual-suspect", r["label"] or str(r["index"]), value=r["residual"]))

    step5 = report.step5
    for ring in step5.get("unclosed_rings", []):
        events.append(QaEvent("gis_clean", "unclosed-ring", ring["feature_id"], value=ring["gap"]))
    for a in step5.get("ambiguous_annotations", []):
        events.append(QaEvent(
            "gis_clean", "ambiguous-annotation", a["annotation_id"],
            f"'{a['label']}' -> {a['chosen_id']} (runner-up {a['runner_up_id']} at {a['runner_up_distance']:.6f})",
            a["chosen_distance"]
        ))
    for fid in step5.get("degenerate_collapses", []):
        events.append(QaEvent("gis_clean", "degenerate-collapse", fid))
    for fid in step5.get("collapsed_lines", []):
        events.append(QaEvent("gis_clean", "collapsed-line", fid))
    for d in step5.get("dangles") or []:
        events.append(QaEvent("gis_clean", "dangle", d["feature_id"], d["end"], d["distance"]))

    return events


class QaLogWriter:
    def __init__(self, *, connection_str: str = "sqlite:///cadgis.db", db_engine = None, qalog_cls = QaLog):
        if db_engine:
            self.db_engine = db_engine
        else:
            self.db_engine = create_engine(connection_str)
        self.qalog_cls = qalog_cls
        self.qalog_cls.metadata.create_all(bind=self.db_engine)
        self.get_session = sessionmaker(autocommit=False, autoflush=False, bind=self.db_engine)

    def insert(self, qalogs: List[_QaLogBase], db: Session):
        db.add_all(qalogs)
        db.commit()

    def write_run(self, report: QaReport, *, run_id: str = None, operator: str = "") -> str:
        run_id = run_id or str(uuid4())
        created_at = datetime.now(timezone.utc).replace(tzinfo=None)
        qalogs = [
            e.to_qalog(self.qalog_cls, run_id, created_at, report.source_name, operator)
            for e in report_events(report)
        ]

        db = self.get_session()
        try:
            self.insert(qalogs, db)
            logger.info(f"QA log: {len(qalogs)} events recorded for run {run_id}")
        except Exception as ex:
            logger.error(f"Error at writing QA log: {ex}\n{traceback.format_exc()}")
            db.rollback()
        finally:
            db.close()

        return run_id
