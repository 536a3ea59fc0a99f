import csv
from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def sharma_pairs():
    """Published CIEDE2000 reference pairs: (lab1, lab2, expected dE00)."""
    rows = []
    with open(DATA_DIR / "ciede2000_sharma.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            lab1 = (float(row["l1"]), float(row["a1"]), float(row["b1"]))
            lab2 = (float(row["l2"]), float(row["a2"]), float(row["b2"]))
            rows.append((lab1, lab2, float(row["de00"])))
    assert len(rows) == 34
    return rows
