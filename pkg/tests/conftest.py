from datetime import date

import pytest

from profilebits.idgen import PartitionPlan
from helpers import write_table1

DAY = date(2024, 5, 1)


@pytest.fixture
def day():
    return DAY


@pytest.fixture
def store_root(tmp_path):
    root = tmp_path / "store"
    root.mkdir()
    return root


@pytest.fixture
def table1_path(tmp_path):
    return write_table1(tmp_path / "table1.tsv")


@pytest.fixture
def plan8():
    return PartitionPlan(8, 10_000)
