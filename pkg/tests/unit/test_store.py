# -*- coding: utf-8 -*-
import pytest
import sqlalchemy as sa
from ddcRegularLM.exceptions import StoreExecuteException, StoreFetchAllException
from ddcRegularLM.store import CellDal, CellRecord, ResultsStore, open_cells


class TestStore:
    @classmethod
    def setup_class(cls):
        """ setup_class """
        pass

    @classmethod
    def teardown_class(cls):
        """ teardown_class """
        pass

    def test_cells(self, store_session, fake_test_data):
        cell_dal = CellDal(store_session)
        cell_id = fake_test_data["cell_id"]
        cell_dal.save(
            CellRecord(
                cell_id=cell_id,
                automaton_id=fake_test_data["automaton_id"],
                D=fake_test_data["D"],
                wall_clock=fake_test_data["wall_clock"],
            )
        )

        # test_get
        result = cell_dal.get(cell_id)
        assert result["automaton_id"] == fake_test_data["automaton_id"]
        assert result["status"] == "pending"
        assert cell_dal.get("missing") is None

        # test_update_status
        cell_dal.update_status(cell_id, "failed", error="TrainingDivergenceException")
        result = cell_dal.get(cell_id)
        assert result["status"] == "failed"
        assert result["error"] == "TrainingDivergenceException"
        assert [r["cell_id"] for r in cell_dal.by_status("failed")] == [cell_id]

        # test_upsert_replaces
        cell_dal.save(CellRecord(cell_id=cell_id, automaton_id="other", D=2, status="ok"))
        assert len(cell_dal.all()) == 1
        assert cell_dal.get(cell_id)["status"] == "ok"
        assert cell_dal.by_status("failed") == []

        # test_clear
        cell_dal.clear()
        assert cell_dal.all() == []

    def test_bad_statements(self, store_session):
        cell_dal = CellDal(store_session)
        with pytest.raises(StoreFetchAllException):
            cell_dal.store_utils.fetchall(sa.text("SELECT * FROM no_such_table"))
        with pytest.raises(StoreExecuteException):
            cell_dal.store_utils.execute(sa.text("UPDATE no_such_table SET x = 1"))

    def test_file_store(self, tmp_path):
        path = tmp_path / "store" / "cells.db"
        with open_cells(path) as cell_dal:
            cell_dal.save(CellRecord(cell_id="a-D2", automaton_id="a", D=2, status="ok"))
        assert path.is_file()
        with open_cells(path) as cell_dal:
            assert [r["cell_id"] for r in cell_dal.all()] == ["a-D2"]
        store = ResultsStore(filepath=path)
        with store:
            assert store.is_connected
        assert not store.is_connected
