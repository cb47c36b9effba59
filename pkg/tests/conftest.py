import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mea.data_model import AnalysisConfig, ExperimentSpec, MetricSpec, UnitTable  # noqa: E402
from mea.datasets import load_handex  # noqa: E402


def make_config(variants, metrics=("y",), **kw):
    exps = tuple(
        ExperimentSpec(f"e{j + 1}", tuple(vs), vs[0]) for j, vs in enumerate(variants)
    )
    return AnalysisConfig(experiments=exps, metrics=tuple(MetricSpec(m) for m in metrics), **kw)


def table_from_rows(rows, variants, column="y", **kw):
    """UnitTable from oracle rows ``(unit_id, labels, value)``."""
    config = make_config(variants, (column,), **kw)
    codes = np.array(
        [[-1 if v is None else vs.index(v) for v, vs in zip(labels, variants)] for _, labels, _ in rows],
        dtype=np.int16,
    ).reshape(len(rows), len(variants))
    ids = np.array([r[0] for r in rows], dtype=object)
    return UnitTable(config, ids, codes, {column: np.array([r[2] for r in rows], dtype=float)})


@pytest.fixture
def handex():
    return load_handex()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
