"""Small built-in datasets."""

from __future__ import annotations

from .data_model import AnalysisConfig, ExperimentSpec, MetricSpec, UnitTable, ingest_unit_table

__all__ = ["HANDEX_CSV", "handex_config", "load_handex"]

# Two binary experiments, 20 units. Cell means of m1:
#   R11: (t1,t2)=10 (c1,c2)=4 (t1,c2)=7 (c1,t2)=6, two units each
#   R10: (t1,-)=5 (c1,-)=3, three units each
#   R01: (-,t2)=9 with four units, (-,c2)=5 with two units
HANDEX_CSV = """unit_id,e1,e2,m1
u01,t1,t2,9
u02,t1,t2,11
u03,c1,c2,3
u04,c1,c2,5
u05,t1,c2,6
u06,t1,c2,8
u07,c1,t2,5
u08,c1,t2,7
u09,t1,,4
u10,t1,,5
u11,t1,,6
u12,c1,,2
u13,c1,,3
u14,c1,,4
u15,,t2,8
u16,,t2,9
u17,,t2,9
u18,,t2,10
u19,,c2,4
u20,,c2,6
"""


def handex_config(**overrides) -> AnalysisConfig:
    kw = dict(
        experiments=(
            ExperimentSpec("e1", ("c1", "t1"), "c1"),
            ExperimentSpec("e2", ("c2", "t2"), "c2"),
        ),
        metrics=(MetricSpec("m1"),),
    )
    kw.update(overrides)
    return AnalysisConfig(**kw)


def load_handex(**overrides) -> UnitTable:
    return ingest_unit_table(HANDEX_CSV, handex_config(**overrides))
