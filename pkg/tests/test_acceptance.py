"""Full-scale acceptance runs.

The accuracy, cross-size and assembly checks share two module-scoped runs
(square 50 mm and pentagon 37 mm at the default desk-scale config). The
whole module takes roughly 20-30 minutes on one core.
"""

import math
import os
import time
from types import SimpleNamespace

import numpy as np
import pytest

from pegcontact import cli, harness
from pegcontact.classifier import PARAM_ORDER, Model
from pegcontact.config import RunConfig, parse_config
from pegcontact.control import AdmittanceParams
from pegcontact.oracles import (admittance_step_error, friction_cone_margin, gradient_check,
                                rasterize_reference)
from pegcontact.pattern import make_pattern, rasterize_polar

WORKERS = os.cpu_count() or 1
PENTAGON = "geometry.shape = pentagon\ngeometry.hole_side_mm = 37\n"


def _full_run(cfg: RunConfig, out):
    t0 = time.perf_counter()
    data = harness.collect(cfg, out / "data", workers=WORKERS, write_traces=False)
    t1 = time.perf_counter()
    model, report = harness.train_model(cfg, data, out / "model")
    t2 = time.perf_counter()
    return SimpleNamespace(cfg=cfg, out=out, data=data, model=model, report=report,
                           collect_s=t1 - t0, train_s=t2 - t1)


@pytest.fixture(scope="module")
def square_run(tmp_path_factory):
    return _full_run(RunConfig().validate(), tmp_path_factory.mktemp("square"))


@pytest.fixture(scope="module")
def pentagon_run(tmp_path_factory):
    return _full_run(parse_config(PENTAGON), tmp_path_factory.mktemp("pentagon"))


# --- learned behavior -------------------------------------------------------------

@pytest.mark.slow
def test_square_accuracy_and_budget(square_run, verdict):
    acc = square_run.report.test_accuracy
    total = square_run.collect_s + square_run.train_s
    verdict("square 50 mm held-out accuracy", acc >= 0.90,
            f"{acc:.4f} (>= 0.90) on {len(square_run.data)} episodes")
    verdict("square collection + training time", total <= 15 * 60,
            f"{total:.0f} s = {square_run.collect_s:.0f} s collect + {square_run.train_s:.0f} s train "
            f"(<= 900 s, {WORKERS} worker(s))")


@pytest.mark.slow
def test_cross_size_transfer(square_run, verdict):
    acc, _ = harness.crosssize(square_run.cfg, square_run.model, square_run.out / "crosssize",
                               workers=WORKERS)
    same = square_run.report.test_accuracy
    verdict("cross-size 50 -> 32 mm", same - acc <= 0.05,
            f"{acc:.4f} vs same-size {same:.4f}, drop {100 * (same - acc):.1f} points (<= 5)")


@pytest.mark.slow
def test_pentagon_accuracy(pentagon_run, verdict):
    acc = pentagon_run.report.test_accuracy
    verdict("pentagon 37 mm held-out accuracy", acc >= 0.85,
            f"{acc:.4f} (>= 0.85) on {len(pentagon_run.data)} episodes")


@pytest.mark.slow
@pytest.mark.parametrize("run,floor", [("square_run", 0.90), ("pentagon_run", 0.85)])
def test_assembly_campaign(request, run, floor, verdict, capsys):
    r = request.getfixturevalue(run)
    rep = harness.assemble(r.cfg, r.model, r.out / "assemble", workers=WORKERS)
    with capsys.disabled():
        print("\n" + (r.out / "assemble" / "report.txt").read_text())
    shape = r.cfg.geometry.shape
    verdict(f"{shape} assembly success", rep.success_rate >= floor,
            f"{rep.success_rate:.2f} (>= {floor}) over {len(rep.results)} trials, "
            f"histogram {rep.histogram}")
    t = rep.timings["assemble_seconds"]
    verdict(f"{shape} campaign time", t <= 600, f"{t:.0f} s (<= 600 s)")


@pytest.mark.slow
def test_label_coverage(square_run, pentagon_run, verdict):
    for r in (square_run, pentagon_run):
        h = harness.label_histogram(r.data) / len(r.data)
        n = len(r.cfg.geometry.build().hole_vertices)
        p0 = n * 0.002**2 * math.tan(math.pi / n) / 0.04**2
        band = 4 * math.sqrt(p0 * (1 - p0) / len(r.data))
        ok = h[1:].min() >= 0.02 and abs(h[0] - p0) <= band
        verdict(f"{r.cfg.geometry.shape} label coverage", ok,
                f"directional classes min {h[1:].min():.3f} (>= 0.02); center {h[0]:.4f} vs "
                f"area ratio {p0:.4f} +- {band:.4f}")


@pytest.mark.slow
def test_training_loss_monotone(square_run, pentagon_run, verdict):
    for r in (square_run, pentagon_run):
        loss = [e.train_loss for e in r.report.history]
        ups = sum(b > a for a, b in zip(loss, loss[1:]))
        verdict(f"{r.cfg.geometry.shape} training loss monotone", ups <= 3,
                f"{ups} increasing epochs of {len(loss)} (<= 3)")


@pytest.mark.slow
def test_errors_near_boundaries(square_run, pentagon_run, verdict):
    for r in (square_run, pentagon_run):
        rep = r.report
        frac = rep.boundary_errors / rep.errors if rep.errors else 1.0
        verdict(f"{r.cfg.geometry.shape} errors within 5 deg of a sector boundary", frac >= 0.5,
                f"{rep.boundary_errors} of {rep.errors} ({frac:.2f}, >= 0.50)")


# --- oracles ----------------------------------------------------------------------

def test_admittance_closed_form(verdict):
    worst = 0.0
    for zeta in (1.0, 0.7, 0.3, 2.5):
        base = AdmittanceParams()
        D = tuple(2 * zeta * math.sqrt(m * k) for m, k in zip(base.M_d, base.K_d))
        err = admittance_step_error(AdmittanceParams(D_d=D), [10.0, -7.0, 12.0, 0.3, -0.2, 0.1],
                                    duration=2.0)
        worst = max(worst, float(err.max()))
    verdict("admittance step response vs closed form", worst < 1e-6,
            f"max per-axis relative error {worst:.2e} over 2 s (< 1e-6)")


def test_gradients_finite_difference(verdict):
    worst, skipped = {}, {}
    for C, seed in ((9, 0), (11, 1), (9, 2)):
        rng = np.random.default_rng(seed)
        m = Model.init(C, seed)
        for k in m.params:
            m.params[k] += rng.normal(0, 0.05, m.params[k].shape)
        x = rng.random((2, 3, 20, 20))
        y = rng.integers(0, C, 2)
        skip = {}
        g = gradient_check(m, x, y, rng, per_tensor=9, h=1e-4, skipped=skip)
        for k in PARAM_ORDER:
            worst[k] = max(worst.get(k, 0.0), g[k])
            skipped[k] = skipped.get(k, 0) + skip[k]
    top = max(worst.values())
    verdict("finite-difference gradients (h = 1e-4)", top < 1e-5,
            f"worst relative error {top:.2e} (< 1e-5); per tensor "
            + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
            + f"; {sum(skipped.values())} kink-straddling draws redrawn")


def test_rasterization_oracle(verdict):
    rng = np.random.default_rng(7)
    bad = 0
    for i in range(20):
        n = (4, 50, 2000)[i % 3]
        seq = rng.random(n)
        bad += not np.array_equal(rasterize_polar(seq, 200), rasterize_reference(seq, 200))
    verdict("rasterization vs per-pixel oracle", bad == 0, f"{bad} of 20 images differ (0)")


def test_pattern_affine_invariance(verdict):
    rng = np.random.default_rng(8)
    bad = 0
    for _ in range(100):
        n = int(rng.integers(100, 2001))
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)[:, None]
        trace = (np.sin(rng.integers(1, 6, 12) * t + rng.random(12)) * rng.random(12)
                 + rng.normal(0, 0.02, (n, 12)))
        a = np.exp(rng.uniform(-4, 4, 12))
        b = rng.uniform(-100, 100, 12)
        bad += not np.array_equal(make_pattern(trace), make_pattern(trace * a + b))
    verdict("pattern invariance to per-channel affine maps", bad == 0,
            f"{bad} of 100 traces differ (0)")


def test_friction_cone(square, verdict):
    c = friction_cone_margin(square)
    worst = max(c["kernel"], c["per_step"])
    verdict("friction cone over a sweep episode", worst <= 1e-12,
            f"max ||f_t|| - mu ||f_n|| = {worst:.2e} N over {c['contacts']} contacts (<= 1e-12)")


# --- determinism ------------------------------------------------------------------

SMALL = """
seed = 12
data.num_episodes = 30
train.epochs = 4
assemble.trials = 3
"""


def test_end_to_end_determinism(tmp_path, verdict):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text(SMALL)
    for run in ("a", "b"):
        base = ["--config", str(cfgfile), "--out", str(tmp_path / run)]
        for cmd in ("collect", "train", "assemble"):
            assert cli.main([cmd, *base]) == 0

    def files(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
                if p.is_file() and p.name != "timings.json"}

    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    verdict("collect -> train -> assemble byte-identical", not differ and len(a) > 0,
            f"{len(a)} files compared, {len(differ)} differ"
            + (f" ({', '.join(differ[:5])})" if differ else ""))
