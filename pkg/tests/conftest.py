from __future__ import annotations

import os
import sys
import tempfile
from pathlib import Path
from typing import Dict

# Keep test logs out of the project tree; must happen before gmi_tool attaches handlers.
os.environ.setdefault("GMI_LOG_DIR", tempfile.mkdtemp(prefix="gmi-test-logs-"))
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

import numpy as np
import pytest

from gmi_tool.config import GmiConfig, TrainConfig
from gmi_tool.graph import Graph, from_edges, toy_graph


CONTENT = """a\t1\t0\t1\tred
b\t0\t2\t0\tblue
c\t1\t1\t0\tred
d\t0\t0\t3\tgreen
e\t2\t0\t0\tblue
f\t1\t0\t0\tgreen
"""

CITES = """a\tb
b\tc
c\ta
c\td
d\te
e\tf
f\td
a\tc
"""


@pytest.fixture
def toy() -> Graph:
    """Two triangles joined by one bridge."""
    return toy_graph(seed=0)


@pytest.fixture
def path_graph() -> Graph:
    return from_edges(3, [(0, 1), (1, 2)], np.eye(3))


@pytest.fixture
def citation_files(tmp_path: Path) -> Dict[str, Path]:
    """A six-node citation dataset written as .content / .cites files."""
    directory = tmp_path / "tiny"
    directory.mkdir()
    content = directory / "tiny.content"
    cites = directory / "tiny.cites"
    content.write_text(CONTENT, encoding="utf-8")
    cites.write_text(CITES, encoding="utf-8")
    return {"dir": directory, "content": content, "cites": cites}


@pytest.fixture
def small_gmi() -> GmiConfig:
    return GmiConfig(hidden_dim=4, depth=2, negatives=2)


@pytest.fixture
def quick_train() -> TrainConfig:
    return TrainConfig(learning_rate=0.01, max_epochs=30, early_stop_window=5, seed=3, log_every=0)
