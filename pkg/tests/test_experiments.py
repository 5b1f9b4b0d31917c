import numpy as np
import pytest

from ugcp.experiments import ABLATION_ROWS, Comparison, ModeResult, ablation, ablation_table, datasets, directional
from ugcp.heads import UgcpConfig, init_params
from ugcp.metrics import MetricReport
from ugcp.phantom import PhantomConfig


def _mode(cldice, hd, comps, diag=10.0):
    reports = [MetricReport(f"c{i}", 0.5, c, h, k, 1) for i, (c, h, k) in enumerate(zip(cldice, hd, comps))]
    return ModeResult("m", UgcpConfig(), init_params(0), reports, 0.0, 0.0, [diag] * len(reports))


def test_undefined_hd95_scores_as_diagonal():
    m = _mode([0.5, 0.6], [None, 2.0], [1, 1], diag=42.0)
    assert list(m.column("hd95")) == [42.0, 2.0]


def test_comparison_deltas():
    base = _mode([0.5, 0.6, 0.7], [4.0, None, 2.0], [3, 5, 1])
    ugcp = _mode([0.6, 0.6, 0.9], [3.0, 5.0, 2.0], [1, 2, 1])
    d = Comparison(base, ugcp).deltas
    assert d["median_delta_cldice"] == pytest.approx(0.1)
    assert d["median_delta_hd95"] == pytest.approx(-1.0)
    assert d["median_component_error_reduction"] == 2.0
    assert d["median_component_error_baseline"] == 2.0


@pytest.fixture(scope="module")
def tiny():
    return datasets(4, 3, PhantomConfig(extents=(16, 16), radius_max=2.0, gap_length=4, n_branches=2, seed=5))


def test_eval_seeds_disjoint(tiny):
    tr, ev = tiny
    assert not {s.seed for s in tr} & {s.seed for s in ev}


def test_directional_and_ablation_smoke(tiny):
    comp = directional(epochs=2, data=tiny)
    assert comp.baseline.cfg.T == 0 and comp.baseline.cfg.lambda_uq == 0.0
    assert comp.ugcp.cfg.T == 2 and comp.ugcp.cfg.lambda_uq == 0.1
    assert set(comp.deltas) >= {"median_delta_cldice", "median_delta_hd95", "median_component_error_reduction"}
    rows = ablation(epochs=2, data=tiny, reuse={"gamma+phi+R": comp.ugcp})
    assert rows["gamma+phi+R"] is comp.ugcp
    table = ablation_table(rows)
    assert [r["row"] for r in table] == list(ABLATION_ROWS)
    assert [(r["gamma"], r["phi"], r["R"]) for r in table] == [
        (False, False, False), (True, False, False), (True, True, False), (True, True, True)]
    assert all(np.isfinite(r["cldice_median"]) for r in table)
