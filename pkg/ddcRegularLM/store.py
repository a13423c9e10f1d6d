# -*- encoding: utf-8 -*-
import sys
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Generator, Optional
import sqlalchemy as sa
from sqlalchemy import RowMapping
from sqlalchemy.engine import create_engine, Engine
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, Session, sessionmaker
from .exceptions import (
    StoreDeleteAllException,
    StoreExecuteException,
    StoreFetchAllException,
    StoreUpsertException,
)
from .settings import StoreSettings


class Base(DeclarativeBase):
    pass


class CellRecord(Base):
    """one (automaton, D) cell of an experiment"""

    __tablename__ = "cells"
    cell_id: Mapped[str] = mapped_column(primary_key=True)
    automaton_id: Mapped[str] = mapped_column(index=True)
    D: Mapped[int]
    status: Mapped[str] = mapped_column(server_default="pending")
    error: Mapped[Optional[str]] = mapped_column(nullable=True)
    automaton_file: Mapped[Optional[str]] = mapped_column(nullable=True)
    automaton_sha256: Mapped[Optional[str]] = mapped_column(nullable=True)
    dataset_file: Mapped[Optional[str]] = mapped_column(nullable=True)
    dataset_sha256: Mapped[Optional[str]] = mapped_column(nullable=True)
    checkpoint_file: Mapped[Optional[str]] = mapped_column(nullable=True)
    checkpoint_sha256: Mapped[Optional[str]] = mapped_column(nullable=True)
    scores_file: Mapped[Optional[str]] = mapped_column(nullable=True)
    scores_sha256: Mapped[Optional[str]] = mapped_column(nullable=True)
    kl_json: Mapped[Optional[str]] = mapped_column(nullable=True)
    loss_trace_json: Mapped[Optional[str]] = mapped_column(nullable=True)
    wall_clock: Mapped[Optional[float]] = mapped_column(nullable=True)


class ResultsStore:
    """
    Class to handle the SQLite cell registry
    """

    def __init__(
        self,
        filepath: Optional[str | Path] = None,
        echo: Optional[bool] = None,
        autoflush: Optional[bool] = None,
        expire_on_commit: Optional[bool] = None,
        extra_engine_args: Optional[dict] = None,
    ):
        _settings = StoreSettings()
        self.filepath = str(filepath or _settings.file_name)
        self.echo = _settings.echo if echo is None else echo
        self.autoflush = True if autoflush is None else autoflush
        self.expire_on_commit = False if expire_on_commit is None else expire_on_commit
        self.extra_engine_args = extra_engine_args or {}
        self.is_connected = False
        self.session: Optional[Session] = None
        self._engine: Optional[Engine] = None

    def __enter__(self) -> Session:
        self._engine = self._create_engine()
        Base.metadata.create_all(self._engine)
        session_maker = sessionmaker(
            bind=self._engine,
            class_=Session,
            autoflush=self.autoflush,
            expire_on_commit=self.expire_on_commit,
        )
        self.session = session_maker()
        self.is_connected = True
        return self.session

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.session:
            if exc_type is None:
                self.session.commit()
            else:
                self.session.rollback()
            self.session.close()
        if self._engine:
            self._engine.dispose()
        self.is_connected = False

    def _create_engine(self) -> Engine:
        try:
            if self.filepath != ":memory:":
                Path(self.filepath).parent.mkdir(parents=True, exist_ok=True)
            _engine_args = {
                "url": f"sqlite:///{self.filepath}",
                "echo": self.echo,
                **self.extra_engine_args,
            }
            return create_engine(**_engine_args)
        except Exception as e:
            dt = datetime.now().strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3]
            sys.stderr.write(
                f"[{dt}]:[ERROR]:Unable to Create Database Engine | "
                f"{repr(e)}\n"
            )
            raise


class StoreUtils:
    def __init__(self, session: Session):
        self.session = session

    def fetchall(self, stmt) -> list[RowMapping]:
        cursor = None
        try:
            cursor = self.session.execute(stmt)
            return cursor.mappings().all()
        except Exception as e:
            self.session.rollback()
            raise StoreFetchAllException(e)
        finally:
            cursor.close() if cursor is not None else None

    def upsert(self, record: Base) -> None:
        try:
            self.session.merge(record)
            self.session.commit()
        except Exception as e:
            self.session.rollback()
            raise StoreUpsertException(e)

    def deleteall(self, model) -> None:
        try:
            self.session.execute(sa.delete(model))
            self.session.commit()
        except Exception as e:
            self.session.rollback()
            raise StoreDeleteAllException(e)

    def execute(self, stmt) -> None:
        try:
            self.session.execute(stmt)
            self.session.commit()
        except Exception as e:
            self.session.rollback()
            raise StoreExecuteException(e)


class CellDal:
    """ Data Abstraction Layer """

    def __init__(self, session: Session):
        self.columns = [x for x in CellRecord.__table__.columns]
        self.store_utils = StoreUtils(session)

    def save(self, record: CellRecord) -> None:
        self.store_utils.upsert(record)

    def get(self, cell_id: str) -> Optional[RowMapping]:
        stmt = sa.select(*self.columns).where(CellRecord.cell_id == cell_id)
        rows = self.store_utils.fetchall(stmt)
        return rows[0] if rows else None

    def all(self) -> list[RowMapping]:
        stmt = sa.select(*self.columns).order_by(CellRecord.cell_id)
        return self.store_utils.fetchall(stmt)

    def by_status(self, status: str) -> list[RowMapping]:
        stmt = sa.select(*self.columns).where(CellRecord.status == status).order_by(CellRecord.cell_id)
        return self.store_utils.fetchall(stmt)

    def update_status(self, cell_id: str, status: str, error: Optional[str] = None) -> None:
        stmt = sa.update(CellRecord).where(CellRecord.cell_id == cell_id).values(status=status, error=error)
        self.store_utils.execute(stmt)

    def clear(self) -> None:
        self.store_utils.deleteall(CellRecord)


@contextmanager
def open_cells(filepath: str | Path, **kwargs) -> Generator[CellDal, None, None]:
    with ResultsStore(filepath=filepath, **kwargs) as session:
        yield CellDal(session)
