# visadesk/database.py (engine + sessions du store bénéficiaires)
from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker
from sqlalchemy.pool import StaticPool

DEFAULT_DATABASE_URL = "sqlite://"

Base = declarative_base()


def make_engine(database_url: str = DEFAULT_DATABASE_URL) -> Engine:
    if database_url in ("sqlite://", "sqlite:///:memory:"):
        # une seule connexion partagée, sinon chaque session voit une base vide
        return create_engine(
            database_url,
            future=True,
            poolclass=StaticPool,
            connect_args={"check_same_thread": False},
        )
    return create_engine(database_url, pool_pre_ping=True, future=True)


def make_session_factory(engine: Engine) -> sessionmaker:
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)
