from datetime import datetime
from typing import Any, Dict, List, Optional

from fastapi import APIRouter, Depends, HTTPException, Query
from pydantic import BaseModel
from sqlalchemy import desc
from sqlalchemy.orm import Session

from database import get_db
from models import RunRecord

router = APIRouter()


class RunRecordResponse(BaseModel):
    id: int
    command: str
    status: str
    exit_code: int
    manifest: Dict[str, Any]
    summary: Optional[Any]
    created_at: datetime

    class Config:
        from_attributes = True

    @classmethod
    def from_record(cls, record: RunRecord) -> "RunRecordResponse":
        return cls(
            id=record.id,
            command=record.command,
            status=record.status,
            exit_code=record.exit_code,
            manifest=record.manifest_dict,
            summary=record.summary_dict,
            created_at=record.created_at,
        )


@router.get("/api/runs", response_model=List[RunRecordResponse])
async def get_runs(
    command: Optional[str] = Query(None, description="Only runs of this command"),
    limit: int = Query(50, description="Maximum number of runs to return"),
    db: Session = Depends(get_db),
):
    """Most recent runs first"""
    query = db.query(RunRecord)
    if command:
        query = query.filter(RunRecord.command == command)
    records = query.order_by(desc(RunRecord.id)).limit(limit).all()
    return [RunRecordResponse.from_record(r) for r in records]


@router.get("/api/runs/{run_id}", response_model=RunRecordResponse)
async def get_run(run_id: int, db: Session = Depends(get_db)):
    record = db.query(RunRecord).filter(RunRecord.id == run_id).first()
    if not record:
        raise HTTPException(status_code=404, detail="Run not found")
    return RunRecordResponse.from_record(record)
