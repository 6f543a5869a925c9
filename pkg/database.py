from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from config import get_settings

# SQLite run ledger by default; IFS_DB_URL points elsewhere
SQLALCHEMY_DATABASE_URL = get_settings().db_url


def _make_engine(url: str):
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, connect_args=connect_args)


engine = _make_engine(SQLALCHEMY_DATABASE_URL)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()


def configure_database(url: str) -> None:
    """Rebind the engine and session factory (tests, --db flag)"""
    global engine, SQLALCHEMY_DATABASE_URL
    SQLALCHEMY_DATABASE_URL = url
    engine = _make_engine(url)
    SessionLocal.configure(bind=engine)


# Dependency to get database session
def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def init_db():
    """Create the run ledger tables"""
    import models  # noqa: F401  registers the tables on Base

    Base.metadata.create_all(bind=engine)
