"""Acceptance gate: criteria 1-10 at their stated tolerances.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion.  The phantom experiments (7, 8) train five
models and take several minutes.
"""
import time

import numpy as np
import pytest

from ugcp import backend
from ugcp.bench import doubling_shapes, linearity, time_refine
from ugcp.evidence import alpha_from_logits, expected_prob
from ugcp.experiments import ablation, ablation_table, datasets, directional
from ugcp.gradcheck import TOLERANCE, gradcheck
from ugcp.heads import UgcpConfig, init_params, project_logits
from ugcp.losses import evidential_loss_map
from ugcp.metrics import binarize, cl_dice, dice, evaluate_cases, hd95, skeletonize
from ugcp.phantom import PhantomConfig, make_dataset
from ugcp.propagation import directional_gate, edge_modulation, refine, step_arrays
from ugcp.training import OptConfig, train
from ugcp.windows import sliding_refine

from test_metrics import CASES, o_cldice, o_dice, o_hd95

THREADS = (1, 4, 8)
EPOCHS = 500


def detail(record_property, text):
    record_property("detail", text)


# 1 -------------------------------------------------------------------------------

@pytest.mark.criterion(1, "gradient fidelity (all dims, T, flag combinations)")
def test_c1_gradient_fidelity(record_property):
    t0 = time.perf_counter()
    report = gradcheck(dims=(2, 3), Ts=(0, 1, 2, 3))
    seconds = time.perf_counter() - t0
    detail(record_property, f"{len(report.entries)} configs, worst rel err {report.worst:.2e}, {seconds:.0f}s")
    assert len(report.entries) == 2 * 4 * 8
    assert report.worst <= TOLERANCE == 1e-5
    assert seconds <= 300


# 2 -------------------------------------------------------------------------------

@pytest.mark.criterion(2, "structural identities (gate complement, antisymmetry, conservation)")
def test_c2_gate_complement_and_antisymmetry(record_property):
    rng = np.random.default_rng(2)
    n = 100_000
    up, uq = rng.random(n), rng.random(n)
    tau = rng.choice([0.01, 0.1, 1.0], n)
    fp, fq = rng.normal(size=(n, 8)), rng.normal(size=(n, 8))
    w = rng.normal(size=8)
    worst_c = worst_a = 0.0
    for i in range(n):
        worst_c = max(worst_c, abs(directional_gate(up[i], uq[i], tau[i], 1e-8)
                                   + directional_gate(uq[i], up[i], tau[i], 1e-8) - 1))
        worst_a = max(worst_a, abs(edge_modulation(fp[i], fq[i], w) + edge_modulation(fq[i], fp[i], w)))
    detail(record_property, f"complement {worst_c:.1e}, antisymmetry {worst_a:.1e}")
    assert worst_c <= 1e-12 and worst_a <= 1e-12


@pytest.mark.criterion(2, "structural identities (gate complement, antisymmetry, conservation)")
@pytest.mark.parametrize("ext", [(16, 16), (8, 8, 8)])
@pytest.mark.parametrize("name", backend.available())
def test_c2_global_conservation(ext, name):
    rng = np.random.default_rng(len(ext))
    cfg = UgcpConfig.for_dim(len(ext), enable_phi=False, enable_source=False)
    for _ in range(5):
        s = rng.normal(scale=3, size=(2, *ext))
        g = rng.normal(size=ext)
        flux = step_arrays(s, s, g, cfg, backend.get(name)) - s
        bound = 1e-9 * s[0].size * np.abs(s).mean()
        assert np.all(np.abs(flux.reshape(2, -1).sum(axis=1)) <= bound)


# 3 -------------------------------------------------------------------------------

@pytest.mark.criterion(3, "degenerate cases (T=0, theta=0, forced source)")
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_c3_T0_is_one_shot_head(dtype):
    rng = np.random.default_rng(3)
    h = rng.normal(size=(4, 13, 11)).astype(dtype)
    params = init_params(3)
    res = refine(h, params, UgcpConfig.for_dim(2, T=0))
    head = expected_prob(alpha_from_logits(project_logits(h, params)))
    assert res.pi.tobytes() == head.tobytes()


@pytest.mark.criterion(3, "degenerate cases (T=0, theta=0, forced source)")
@pytest.mark.parametrize("name", backend.available())
def test_c3_theta_zero_noop(name):
    rng = np.random.default_rng(4)
    h = rng.normal(size=(4, 9, 7, 5))
    params = init_params(4)
    a = refine(h, params, UgcpConfig.for_dim(3, T=0), kernel=backend.get(name))
    b = refine(h, params, UgcpConfig.for_dim(3, T=3, theta=0.0), kernel=backend.get(name))
    assert a.s.tobytes() == b.s.tobytes()


@pytest.mark.criterion(3, "degenerate cases (T=0, theta=0, forced source)")
@pytest.mark.parametrize("name", backend.available())
def test_c3_forced_source_returns_anchor(name):
    # r == 1 via u0 -> 1 and tau -> 0; flux vanishes on a uniform state with phi neutral
    cfg = UgcpConfig(u0=1 - 1e-9, tau=1e-12, eps=1e-300, theta=1.0, enable_gamma=False, enable_phi=False)
    rng = np.random.default_rng(5)
    s0 = np.round(rng.normal(size=(2, 6, 6)) * 64) / 64  # dyadic so s + (s0 - s) is exact
    s = np.broadcast_to(np.array([1.5, -0.75])[:, None, None], s0.shape).copy()
    out = step_arrays(s, s0, np.zeros((6, 6)), cfg, backend.get(name))
    assert np.array_equal(out, s0)
    single = step_arrays(np.array([[[3.0]], [[2.0]]]), np.array([[[0.25]], [[-1.5]]]), np.zeros((1, 1)),
                         cfg.replace(enable_gamma=True, enable_phi=True), backend.get(name))
    assert np.array_equal(single, np.array([[[0.25]], [[-1.5]]]))


# 4 -------------------------------------------------------------------------------

def _by_threads(monkeypatch, fn):
    outs = []
    for n in THREADS:
        monkeypatch.setenv(backend.THREADS_ENV, str(n))
        outs.append(fn())
    return outs


@pytest.mark.criterion(4, "determinism across thread counts {1, 4, 8}")
def test_c4_refine(monkeypatch):
    rng = np.random.default_rng(6)
    h = rng.normal(size=(4, 40, 36))
    params = init_params(6)
    outs = _by_threads(monkeypatch, lambda: refine(h, params, UgcpConfig.for_dim(2, T=2)).s.tobytes())
    outs += _by_threads(monkeypatch, lambda: sliding_refine(h, params, UgcpConfig.for_dim(2), 16).s.tobytes())
    assert len(set(outs[:3])) == 1 and len(set(outs[3:])) == 1


@pytest.mark.criterion(4, "determinism across thread counts {1, 4, 8}")
def test_c4_phantom_train_eval(monkeypatch):
    cfg = PhantomConfig(extents=(24, 24), radius_max=2.0, gap_length=4, seed=9)

    def phantom():
        return b"".join(s.h.tobytes() + s.gt.tobytes() + s.observation.tobytes() for s in make_dataset(5, cfg))

    def fit():
        r = train(make_dataset(4, cfg), UgcpConfig.for_dim(2), OptConfig(epochs=3, lr=1e-2, batch_size=2))
        return b"".join(v.tobytes() for v in r.params.arrays().values())

    data = make_dataset(5, cfg)
    params = init_params(1)
    cases = [(str(i), binarize(refine(s.h, params, UgcpConfig.for_dim(2)).pi[1]), s.gt) for i, s in enumerate(data)]

    def evaluate():
        return repr([r.row() for r in evaluate_cases(cases)])

    for fn in (phantom, fit, evaluate):
        outs = _by_threads(monkeypatch, fn)
        assert outs[0] == outs[1] == outs[2], fn.__name__


# 5 -------------------------------------------------------------------------------

@pytest.mark.criterion(5, "metric oracles on constructed masks")
def test_c5_metric_oracles(record_property):
    assert len(CASES) >= 25
    for name, p, g in CASES:
        assert dice(p, g) == pytest.approx(o_dice(p, g), abs=1e-15), name
        assert hd95(p, g) == pytest.approx(o_hd95(p, g), abs=1e-12), name
        assert cl_dice(p, g) == pytest.approx(o_cldice(p, g, skeletonize(p), skeletonize(g)), abs=1e-15), name
    p = np.zeros((6, 6), bool)
    q = np.zeros((6, 6), bool)
    p[0, 0] = q[3, 4] = True
    assert hd95(p, q) == 5.0
    z = np.zeros((4, 4), bool)
    assert dice(z, z) == 1.0 and cl_dice(z, z) == 1.0
    detail(record_property, f"{len(CASES)} cases")


# 6 -------------------------------------------------------------------------------

@pytest.mark.criterion(6, "evidential loss anchor alpha=(1,1), y foreground")
def test_c6_evidential_anchor():
    loss = evidential_loss_map(np.ones((2, 1, 1)), np.ones((1, 1)))[0, 0]
    assert abs(loss - 1.0) <= 1e-10


# 7, 8 -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def protocol():
    data = datasets(32, 20)
    t0 = time.perf_counter()
    comp = directional(epochs=EPOCHS, data=data)
    return {"data": data, "comparison": comp, "seconds": time.perf_counter() - t0}


@pytest.mark.slow
@pytest.mark.criterion(7, "directional phantom result, T=2 vs T=0")
def test_c7_directional(protocol, record_property):
    comp, d = protocol["comparison"], protocol["comparison"].deltas
    detail(record_property,
           f"dclDice {d['median_delta_cldice']:+.4f}, dHD95 {d['median_delta_hd95']:+.3f}, "
           f"component error {d['median_component_error_baseline']:.1f} -> {d['median_component_error_ugcp']:.1f}, "
           f"{protocol['seconds']:.0f}s")
    assert len(comp.baseline.reports) == len(comp.ugcp.reports) == 20
    assert protocol["seconds"] <= 15 * 60
    assert d["median_delta_cldice"] > 0
    assert d["median_delta_hd95"] < 0
    assert d["median_component_error_reduction"] > 0


@pytest.mark.slow
@pytest.mark.criterion(8, "ablation: full (gamma+phi+R) not worse than none in median clDice")
def test_c8_ablation(protocol, record_property):
    rows = ablation(epochs=EPOCHS, data=protocol["data"], reuse={"gamma+phi+R": protocol["comparison"].ugcp})
    table = ablation_table(rows)
    assert [r["row"] for r in table] == ["none", "gamma", "gamma+phi", "gamma+phi+R"]
    for r in table:
        print(f"ablation {r['row']:<12} dsc {r['dsc_median']:.4f} cldice {r['cldice_median']:.4f} "
              f"hd95 {r['hd95_median']:.3f}")
    full, none = table[-1]["cldice_median"], table[0]["cldice_median"]
    detail(record_property, " / ".join(f"{r['row']} {r['cldice_median']:.4f}" for r in table))
    assert full >= none


# 9 -------------------------------------------------------------------------------

@pytest.mark.criterion(9, "overhead linearity, time(2N)/time(N) in [1.5, 2.6]")
def test_c9_linearity(record_property):
    shapes = doubling_shapes((64, 64, 64), 4)
    rows = [time_refine(s, T=2, reps=7, threads=1) for s in shapes]
    ratios = [e["ratio"] for e in linearity(rows)]
    detail(record_property, "ratios " + ", ".join(f"{r:.2f}" for r in ratios))
    assert len(ratios) == 3
    assert all(1.5 <= r <= 2.6 for r in ratios)


# 10 ------------------------------------------------------------------------------

@pytest.mark.criterion(10, "sliding-window consistency")
@pytest.mark.parametrize("dim", [2, 3])
def test_c10_sliding_windows(dim, record_property):
    pcfg = PhantomConfig.for_dim(dim, seed=60) if dim == 3 else PhantomConfig(seed=60)
    cfg = UgcpConfig.for_dim(dim, T=2)
    params = init_params(8)
    worst = 0.0
    for smp in make_dataset(3, pcfg):
        whole = refine(smp.h, params, cfg)
        patch = tuple(e // 2 for e in smp.h.shape[1:])
        win = sliding_refine(smp.h, params, cfg, patch, overlap=0.5)
        worst = max(worst, float(np.abs(win.pi - whole.pi).mean()))
        single = sliding_refine(smp.h, params, cfg, smp.h.shape[1:])
        assert single.pi.tobytes() == whole.pi.tobytes()
    detail(record_property, f"{dim}D worst mean |dpi| {worst:.4f}")
    assert worst <= 0.05
