"""Experiment orchestration: dataset collection, training, cross-size tests, assembly campaigns.

Every output file is a deterministic function of (config, seed). Wall-clock
timings are the one exception and live in their own ``timings.json`` files.

Directory layout written by :func:`collect`::

    <dir>/labels.csv          episode,dx,dy,dyaw,label
    <dir>/inputs.npy          (M, 3, 20, 20) float64 classifier inputs
    <dir>/patterns/episode_NNNNN.csv   3 x 400 classifier input per episode
    <dir>/traces/episode_NNNNN.csv     step,x,y,z,roll,pitch,yaw,fx,fy,fz,mx,my,mz
    <dir>/failures.txt        one line per skipped episode
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import (Dataset, EpochStats, Model, evaluate, load_model, predict, save_model,
                         train_split, write_history)
from .config import GeometrySpec, RunConfig, dump_config
from .control import perturb_params
from .errors import IncompatibleModelError, PegContactError
from .geometry import PegHoleGeometry, label_offset, sample_contact_offset
from .pattern import make_pattern, pattern_input, write_input_csv, write_pattern_pgms
from .pipeline import (AssemblySetup, Episode, EpisodeResult, run_approach, run_assembly_episode,
                       run_estimation_sweep)

log = logging.getLogger(__name__)

TRACE_HEADER = "step,x,y,z,roll,pitch,yaw,fx,fy,fz,mx,my,mz"

# independent RNG streams so collection and assembly never share offsets
STREAM_COLLECT = 0
STREAM_ASSEMBLE = 1


class CollectionAbortedError(PegContactError):
    """Too many episodes failed during collection."""


def episode_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([stream, seed + index])


# --- traces ------------------------------------------------------------------

def write_trace_csv(path, trace) -> None:
    a = np.asarray(trace, dtype=float)
    rows = np.column_stack([np.arange(len(a)), a])
    fmt = ["%d"] + ["%.9e"] * a.shape[1]
    np.savetxt(path, rows, delimiter=",", fmt=fmt, header=TRACE_HEADER, comments="")


def read_trace_csv(path) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip()
    if header != TRACE_HEADER:
        raise ValueError(f"{path}: unexpected trace header")
    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return a[:, 1:]


# --- collection ----------------------------------------------------------------

@dataclass(frozen=True)
class _CollectJob:
    cfg: RunConfig
    gspec: GeometrySpec
    seed: int


def _collect_one(job: _CollectJob, index: int):
    """Approach + sweep for one episode; returns (offset, label, trace) or an error string."""
    cfg = job.cfg
    geom = job.gspec.build()
    rng = episode_rng(job.seed, index, STREAM_COLLECT)
    offset = sample_contact_offset(rng, cfg.data.offsets)
    params = perturb_params(cfg.control, rng, cfg.control_noise)
    ep = Episode.start(geom, cfg.sim, params, offset, cfg.traj.approach_height)
    try:
        run_approach(ep, cfg.traj)
        trace = run_estimation_sweep(ep, cfg.traj)
    except PegContactError as exc:
        return offset, None, f"{type(exc).__name__}: {exc}"
    return offset, label_offset(geom, offset[0], offset[1]), trace


def _map(fn, job, indices, workers: int):
    if workers <= 1:
        for i in indices:
            yield i, fn(job, i)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps input order, so outputs do not depend on completion order
        yield from zip(indices, pool.map(fn, [job] * len(indices), indices, chunksize=4))


def collect(cfg: RunConfig, out_dir, *, gspec: GeometrySpec | None = None,
            num_episodes: int | None = None, seed: int | None = None, workers: int = 1,
            write_traces: bool = True) -> Dataset:
    """Run approach + sweep episodes and write a labeled dataset to ``out_dir``.

    Failed episodes are logged and skipped; more than
    ``cfg.data.max_failure_fraction`` failures aborts the run.
    """
    gspec = cfg.geometry if gspec is None else gspec
    n = cfg.data.num_episodes if num_episodes is None else num_episodes
    seed = cfg.seed if seed is None else seed
    geom = gspec.build()
    out = Path(out_dir)
    (out / "patterns").mkdir(parents=True, exist_ok=True)
    if write_traces:
        (out / "traces").mkdir(exist_ok=True)
    job = _CollectJob(cfg, gspec, seed)
    inputs, labels, rows, failures = [], [], [], []
    allowed = math.floor(cfg.data.max_failure_fraction * n)
    for i, (offset, label, trace) in _map(_collect_one, job, list(range(n)), workers):
        if label is None:
            failures.append(f"episode {i}: {trace}")
            log.warning("episode %d skipped: %s", i, trace)
            if len(failures) > allowed:
                raise CollectionAbortedError(
                    f"{len(failures)} of {i + 1} episodes failed (limit {allowed} of {n}); "
                    f"last: {failures[-1]}")
            continue
        x = pattern_input(trace)
        name = f"episode_{i:05d}.csv"
        write_input_csv(out / "patterns" / name, x)
        if write_traces:
            write_trace_csv(out / "traces" / name, trace)
        inputs.append(x)
        labels.append(label)
        rows.append((i, *offset, label))
    with open(out / "labels.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["episode", "dx", "dy", "dyaw", "label"])
        for i, dx, dy, dyaw, label in rows:
            w.writerow([i, repr(dx), repr(dy), repr(dyaw), label])
    (out / "failures.txt").write_text("".join(line + "\n" for line in failures))
    X = np.array(inputs).reshape(-1, 3, 20, 20)
    np.save(out / "inputs.npy", X)
    meta = {"offsets": np.array([r[1:4] for r in rows]).reshape(-1, 3),
            "episodes": np.array([r[0] for r in rows], dtype=np.int64)}
    return Dataset(X, np.array(labels, dtype=np.int64), geom.num_classes, meta)


def load_dataset(path, num_classes: int) -> Dataset:
    d = Path(path)
    X = np.load(d / "inputs.npy")
    with open(d / "labels.csv") as f:
        rows = list(csv.DictReader(f))
    offsets = np.array([[float(r["dx"]), float(r["dy"]), float(r["dyaw"])] for r in rows]).reshape(-1, 3)
    meta = {"offsets": offsets, "episodes": np.array([int(r["episode"]) for r in rows], dtype=np.int64)}
    return Dataset(X, np.array([int(r["label"]) for r in rows], dtype=np.int64), num_classes, meta)


def label_histogram(dataset: Dataset) -> np.ndarray:
    return np.bincount(dataset.labels, minlength=dataset.num_classes)


# --- training ----------------------------------------------------------------

def boundary_distance(geom: PegHoleGeometry, offsets) -> np.ndarray:
    """Angular distance (rad) from each offset direction to the nearest sector boundary."""
    off = np.asarray(offsets, dtype=float).reshape(-1, 3)
    bounds = geom.sector_centers() + math.pi / (geom.num_classes - 1)
    ang = np.arctan2(off[:, 1], off[:, 0])
    d = (ang[:, None] - bounds[None, :] + math.pi) % (2.0 * math.pi) - math.pi
    return np.abs(d).min(axis=1)


@dataclass
class TrainReport:
    test_accuracy: float
    confusion: np.ndarray
    history: list[EpochStats]
    errors: int
    boundary_errors: int

    def text(self) -> str:
        h = self.history[-1] if self.history else None
        lines = [f"test_accuracy = {self.test_accuracy:.4f}"]
        if h is not None:
            lines.append(f"train_accuracy = {h.train_acc:.4f}")
            lines.append(f"epochs = {h.epoch}")
        lines.append(f"errors = {self.errors}")
        lines.append(f"errors_within_5deg_of_boundary = {self.boundary_errors}")
        lines.append("confusion (rows true, columns predicted):")
        lines.extend(" ".join(f"{v:4d}" for v in row) for row in self.confusion)
        return "\n".join(lines) + "\n"


def train_model(cfg: RunConfig, dataset: Dataset, out_dir=None,
                geom: PegHoleGeometry | None = None) -> tuple[Model, TrainReport]:
    """Split, train and evaluate; writes model.bin, history.csv and train_report.txt."""
    geom = cfg.geometry.build() if geom is None else geom
    train_set, test_set = dataset.split(cfg.train.split, cfg.train.seed)
    model, history = train_split(train_set, test_set, cfg.train)
    acc, conf = evaluate(model, test_set)
    wrong = np.zeros(len(test_set), dtype=bool)
    if len(test_set):
        wrong = predict(model, test_set.inputs) != test_set.labels
    near = 0
    if "offsets" in test_set.meta and wrong.any():
        near = int((boundary_distance(geom, test_set.meta["offsets"][wrong]) < math.radians(5)).sum())
    report = TrainReport(acc, conf, history, int(wrong.sum()), near)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(model, out / "model.bin")
        write_history(out / "history.csv", history)
        (out / "train_report.txt").write_text(report.text())
    return model, report


# --- cross-size ----------------------------------------------------------------

def crosssize(cfg: RunConfig, model: Model, out_dir, workers: int = 1) -> tuple[float, np.ndarray]:
    """Collect a fresh dataset at the alternate geometry and evaluate ``model`` on it."""
    alt = cfg.alt.build()
    if model.num_classes != alt.num_classes:
        raise IncompatibleModelError(
            f"model has {model.num_classes} classes, {cfg.alt.shape} needs {alt.num_classes}")
    out = Path(out_dir)
    data = collect(cfg, out / "data", gspec=cfg.alt, num_episodes=cfg.alt_episodes,
                   seed=cfg.seed + 1_000_000, workers=workers, write_traces=False)
    acc, conf = evaluate(model, data)
    lines = [f"alt_geometry = {cfg.alt.shape} {cfg.alt.hole_side * 1e3:g} mm",
             f"episodes = {len(data)}", f"accuracy = {acc:.4f}",
             "confusion (rows true, columns predicted):"]
    lines.extend(" ".join(f"{v:4d}" for v in row) for row in conf)
    (out / "crosssize_report.txt").write_text("\n".join(lines) + "\n")
    return acc, conf


# --- assembly ------------------------------------------------------------------

@dataclass
class CampaignReport:
    results: list[EpisodeResult]
    classifier_accuracy: float
    confusion: np.ndarray
    config_snapshot: str
    timings: dict = field(default_factory=dict)

    @property
    def histogram(self) -> dict[str, int]:
        """Attempts needed by successful episodes; failures land in the ">3" bucket."""
        h = {"1": 0, "2": 0, "3": 0, ">3": 0}
        for r in self.results:
            key = str(r.attempts) if r.success and r.attempts <= 3 else ">3"
            h[key] += 1
        return h

    @property
    def success_rate(self) -> float:
        if not self.results:
            return float("nan")
        return sum(r.success for r in self.results) / len(self.results)

    def table(self, name: str = "") -> str:
        h = self.histogram
        head = f"{'part':<16}{'1':>6}{'2':>6}{'3':>6}{'>3':>6}{'total':>8}{'success':>10}"
        row = (f"{name:<16}{h['1']:>6}{h['2']:>6}{h['3']:>6}{h['>3']:>6}{len(self.results):>8}"
               f"{100 * self.success_rate:>9.1f}%")
        return head + "\n" + row + "\n"


class ModelPredictor:
    """Classifier wrapper matching the pipeline's predictor signature."""

    def __init__(self, model: Model):
        self.model = model

    def __call__(self, trace, attempt: int) -> int:
        return int(predict(self.model, pattern_input(trace)[None])[0])


@dataclass(frozen=True)
class _AssembleJob:
    cfg: RunConfig
    model: Model | None
    seed: int


def _assemble_one(job: _AssembleJob, index: int) -> EpisodeResult:
    cfg = job.cfg
    setup = AssemblySetup(cfg.geometry.build(), cfg.sim, cfg.control, cfg.traj)
    rng = episode_rng(job.seed, index, STREAM_ASSEMBLE)
    offset = sample_contact_offset(rng, cfg.data.offsets)
    predictor = ModelPredictor(job.model)
    return run_assembly_episode(setup, rng, predictor, offset)


def assemble(cfg: RunConfig, model: Model, out_dir, trials: int | None = None,
             workers: int = 1, name: str | None = None) -> CampaignReport:
    """Run full trials with failure recovery; writes episodes.jsonl and report.txt."""
    trials = cfg.trials if trials is None else trials
    geom = cfg.geometry.build()
    if model.num_classes != geom.num_classes:
        raise IncompatibleModelError(
            f"model has {model.num_classes} classes, geometry needs {geom.num_classes}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    job = _AssembleJob(cfg, model, cfg.seed)
    results = [r for _, r in _map(_assemble_one, job, list(range(trials)), workers)]
    elapsed = time.perf_counter() - t0
    C = geom.num_classes
    conf = np.zeros((C, C), dtype=np.int64)
    for r in results:
        if r.predicted_labels and r.predicted_labels[0] >= 0:
            conf[r.true_label, r.predicted_labels[0]] += 1
    judged = conf.sum()
    acc = float(np.trace(conf) / judged) if judged else float("nan")
    report = CampaignReport(results, acc, conf, dump_config(cfg),
                            {"assemble_seconds": elapsed, "per_trial_seconds": elapsed / max(trials, 1)})
    label = name or f"{cfg.geometry.shape} ({cfg.geometry.hole_side * 1e3:g}mm)"
    with open(out / "episodes.jsonl", "w") as f:
        for r in results:
            f.write(json.dumps(r.as_record(), sort_keys=True) + "\n")
    lines = [report.table(label), f"first_attempt_classifier_accuracy = {acc:.4f}",
             "confusion (rows true, columns predicted; first attempt):"]
    lines.extend(" ".join(f"{v:4d}" for v in row) for row in conf)
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    (out / "config_snapshot.cfg").write_text(report.config_snapshot)
    (out / "timings.json").write_text(json.dumps(report.timings, indent=2) + "\n")
    return report


# --- rendering -----------------------------------------------------------------

def render(path, out_dir) -> list[Path]:
    """PGM images for a trace CSV (12 channels) or a saved (12, S, S) pattern .npy."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    if p.suffix == ".npy":
        pattern = np.load(p)
    else:
        pattern = make_pattern(read_trace_csv(p))
    return write_pattern_pgms(pattern, out_dir, stem=p.stem)


def load_trained(path, geom: PegHoleGeometry) -> Model:
    return load_model(path, geom.num_classes)
