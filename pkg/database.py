"""
Run registry - database configuration, session management and the run table
"""
import json
from contextlib import contextmanager
from typing import List, Optional

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker
from sqlalchemy.sql import func

from config import settings


def _make_engine(url: str):
    return create_engine(
        url,
        connect_args={"check_same_thread": False} if "sqlite" in url else {},
        echo=False,
    )


# Create engine
engine = _make_engine(settings.database_url)

# Create session factory
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

# Base class for models
Base = declarative_base()


class RunRecord(Base):
    """One training run (standalone or one ablation grid point)"""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    run_name = Column(String, nullable=False, index=True)
    command = Column(String, nullable=False)  # train, ablate
    method = Column(String, nullable=True)
    seed = Column(String, nullable=False)  # u64 does not fit a signed SQLite integer
    grid_point = Column(Text, nullable=True)  # JSON
    config_json = Column(Text, nullable=False)
    final_loss = Column(Float, nullable=True)
    final_entropy = Column(Float, nullable=True)
    report_path = Column(String, nullable=True)
    status = Column(String, default="completed", nullable=False)
    created_at = Column(DateTime, default=func.now())

    def __repr__(self):
        return f"<RunRecord(run_name={self.run_name}, command={self.command}, status={self.status})>"


def configure(url: str):
    """Point the registry at another database (used by tests and --out)"""
    global engine
    engine.dispose()
    engine = _make_engine(url)
    SessionLocal.configure(bind=engine)


@contextmanager
def db_session():
    """Context manager for database sessions"""
    db = SessionLocal()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()


def init_db():
    """Initialize database - create all tables"""
    Base.metadata.create_all(bind=engine)


def register_run(
    run_name: str,
    command: str,
    seed: int,
    config: dict,
    final_loss: Optional[float],
    final_entropy: Optional[float],
    report_path: Optional[str],
    status: str = "completed",
    method: Optional[str] = None,
    grid_point: Optional[dict] = None,
) -> int:
    """Insert a run and return its id"""
    init_db()
    with db_session() as db:
        record = RunRecord(
            run_name=run_name,
            command=command,
            method=method,
            seed=str(seed),
            grid_point=json.dumps(grid_point, sort_keys=True) if grid_point is not None else None,
            config_json=json.dumps(config, sort_keys=True),
            final_loss=final_loss,
            final_entropy=final_entropy,
            report_path=report_path,
            status=status,
        )
        db.add(record)
        db.flush()
        return record.id


def list_runs(session: Session, run_name: Optional[str] = None) -> List[RunRecord]:
    query = session.query(RunRecord)
    if run_name is not None:
        query = query.filter(RunRecord.run_name == run_name)
    return query.order_by(RunRecord.id).all()
