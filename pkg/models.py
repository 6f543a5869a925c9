import json
import logging

from sqlalchemy import Column, DateTime, Integer, String, Text
from sqlalchemy.sql import func

from database import Base, SessionLocal

logger = logging.getLogger(__name__)


class RunRecord(Base):
    __tablename__ = "run_records"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String, index=True, nullable=False)
    status = Column(String, nullable=False)  # passed / failed / error
    exit_code = Column(Integer, nullable=False, default=0)
    manifest = Column(Text, nullable=False)  # Manifest JSON
    summary = Column(Text, nullable=True)  # command-specific result JSON
    created_at = Column(DateTime, default=func.now(), nullable=False)

    @property
    def manifest_dict(self) -> dict:
        return json.loads(self.manifest)

    @property
    def summary_dict(self):
        return json.loads(self.summary) if self.summary else None

    def __repr__(self):
        return f"<RunRecord(id={self.id}, command={self.command}, status={self.status}, exit_code={self.exit_code})>"


def record_run(command: str, status: str, exit_code: int, manifest: dict, summary=None, db=None) -> RunRecord:
    """Append one run to the ledger; opens its own session unless ``db`` is given"""
    own = db is None
    db = db or SessionLocal()
    try:
        record = RunRecord(
            command=command,
            status=status,
            exit_code=exit_code,
            manifest=json.dumps(manifest, sort_keys=True),
            summary=json.dumps(summary, sort_keys=True) if summary is not None else None,
        )
        db.add(record)
        db.commit()
        db.refresh(record)
        logger.info("Recorded run %d (%s, %s)", record.id, command, status)
        return record
    except Exception:
        db.rollback()
        raise
    finally:
        if own:
            db.close()
