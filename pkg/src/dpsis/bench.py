"""Experiment harness: configuration, seeded trial cells, CSV output."""

import dataclasses
import multiprocessing
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from dpsis import data
from dpsis.metrics import RankedReference, tgg_flags, topk_accuracy
from dpsis.seeding import INSTABILITY_STREAM, METHOD_IDS, derive_seed
from dpsis.selectors import (
    LassoParams,
    TwoStageParams,
    block_support_counts,
    dp_sis,
    lasso_ranking,
    select_from_counts,
    sis,
    two_stage_select,
)

PRIVATE_METHODS = ("dp-sis", "dp-two-stage")
DETERMINISTIC_METHODS = ("sis", "two-stage", "lasso-topk")
METHODS = tuple(METHOD_IDS)
WORKERS_ENV = "DPSIS_WORKERS"
DEFAULT_EPSILONS = tuple(float(f"{e:.6g}") for e in np.geomspace(0.1, 20.0, 15))

CSV_FIELDS = ("dataset_name", "method", "epsilon", "k", "trial_index", "seed",
              "accuracy", "top", "great", "good", "wall_time_ms")


@dataclasses.dataclass(frozen=True)
class DatasetSource:
    """Where the benchmark data comes from.

    ``kind`` is ``"csv"`` (``path`` and ``target``), ``"synthetic"``
    (``synth``), or ``"w1"`` / ``"w1w2"`` (``seed``).
    """

    kind: str
    path: Optional[str] = None
    target: str = "y"
    synth: Optional[data.SynthSpec] = None
    seed: int = 0

    def load(self):
        if self.kind == "csv":
            return data.load_dataset(self.path, self.target)
        if self.kind == "synthetic":
            return data.gen_synth_fan(self.synth)
        if self.kind == "w1":
            return data.gen_instability_w1(self.seed)
        if self.kind == "w1w2":
            return data.gen_instability_w1w2(self.seed)
        raise ValueError(f"unknown dataset kind {self.kind!r}")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource
    methods: tuple = ("dp-sis", "dp-two-stage")
    epsilons: tuple = DEFAULT_EPSILONS
    ks: tuple = (5,)
    trials: int = 100
    master_seed: int = 0
    lam: float = 0.1
    gamma: float = 0.5
    output_dir: str = "results"
    record_timing: bool = False

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHOD_IDS]
        if unknown:
            raise ValueError(f"unknown method(s) {unknown}; choose from {list(METHOD_IDS)}")
        if not self.methods:
            raise ValueError("no methods given")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.ks:
            raise ValueError("ks must be non-empty")
        if any(m in PRIVATE_METHODS for m in self.methods) and not self.epsilons:
            raise ValueError("private methods need at least one epsilon")
        if any(not e > 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")


@dataclasses.dataclass(frozen=True)
class ResultRow:
    dataset_name: str
    method: str
    epsilon: Optional[float]
    k: int
    trial_index: int
    seed: int
    accuracy: float
    top: bool
    great: bool
    good: bool
    wall_time_ms: Optional[float] = None

    def sort_key(self):
        return (self.method, -1.0 if self.epsilon is None else self.epsilon,
                self.k, self.trial_index)


def cell_seed(master_seed, method, epsilon, k, trial):
    return derive_seed(master_seed, METHOD_IDS[method],
                       0.0 if epsilon is None else float(epsilon), k, trial)


def reference_ranking(ds, lam):
    """Full feature ranking used to score selections, and its provenance.

    Known generating weights rank by ``|w|``; a bare known support ranks its
    members first; otherwise the LASSO fit at ``lam`` ranks by ``|w|``.
    """
    if ds.true_weights is not None:
        return np.argsort(-np.abs(ds.true_weights), kind="stable"), "true_weights"
    if ds.true_support is not None:
        rest = [j for j in range(ds.d) if j not in set(ds.true_support)]
        return np.array(list(ds.true_support) + rest), "true_support"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return lasso_ranking(ds, LassoParams(lam=lam)), f"lasso_topk(lambda={lam:g})"


@dataclasses.dataclass
class _Context:
    """Read-only state shared by every cell of one experiment."""

    ds: data.Dataset
    ranking: np.ndarray
    counts: Optional[np.ndarray]
    lasso_order: Optional[np.ndarray]
    master_seed: int
    lam: float
    gamma: float
    record_timing: bool


_WORKER_CONTEXT = None


def _init_worker(context):
    global _WORKER_CONTEXT
    _WORKER_CONTEXT = context


def _select(ctx, method, epsilon, k, seed):
    ds = ctx.ds
    if method == "sis":
        return sis(ds, k)
    if method == "dp-sis":
        return sorted(dp_sis(ds, k, epsilon, ctx.gamma, rng=seed).indices)
    if method in ("two-stage", "dp-two-stage"):
        params = TwoStageParams(k=k, lasso=LassoParams(lam=ctx.lam),
                                private_selection=method == "dp-two-stage",
                                epsilon=epsilon, gamma=ctx.gamma)
        return select_from_counts(ctx.counts, params, np.random.default_rng(seed))
    if method == "lasso-topk":
        return np.sort(ctx.lasso_order[:k])
    raise ValueError(method)


def _run_cell(ctx, cell):
    method, epsilon, k, trial = cell
    seed = cell_seed(ctx.master_seed, method, epsilon, k, trial)
    start = time.perf_counter()
    selected = [int(i) for i in _select(ctx, method, epsilon, k, seed)]
    elapsed = (time.perf_counter() - start) * 1e3
    ref = RankedReference(ctx.ranking, k)
    top, great, good = tgg_flags(selected, ref)
    return ResultRow(dataset_name=ctx.ds.name, method=method, epsilon=epsilon, k=k,
                     trial_index=trial, seed=seed,
                     accuracy=topk_accuracy(selected, ref.top(k)),
                     top=top, great=great, good=good,
                     wall_time_ms=elapsed if ctx.record_timing else None)


def _run_cell_in_worker(cell):
    return _run_cell(_WORKER_CONTEXT, cell)


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    if workers < 1:
        raise ValueError("worker count must be at least 1")
    return workers


def experiment_cells(cfg):
    cells = []
    for method in cfg.methods:
        eps_list = cfg.epsilons if method in PRIVATE_METHODS else (None,)
        for eps in eps_list:
            for k in cfg.ks:
                for trial in range(cfg.trials):
                    cells.append((method, None if eps is None else float(eps), int(k), trial))
    return cells


def prepare(cfg):
    """Loads and preprocesses the dataset and computes shared read-only state."""
    ds = cfg.dataset.load()
    if not ds.preprocessed:
        ds = data.preprocess(ds)
    for k in cfg.ks:
        if not 1 <= k < ds.d:
            raise ValueError(f"k={k} must lie in [1, d-1] for d={ds.d}")
    ranking, provenance = reference_ranking(ds, cfg.lam)
    counts = lasso_order = None
    if any(m in ("two-stage", "dp-two-stage") for m in cfg.methods):
        counts = block_support_counts(ds, lasso=LassoParams(lam=cfg.lam))
    if "lasso-topk" in cfg.methods:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lasso_order = lasso_ranking(ds, LassoParams(lam=cfg.lam))
    ctx = _Context(ds=ds, ranking=ranking, counts=counts, lasso_order=lasso_order,
                   master_seed=cfg.master_seed, lam=cfg.lam, gamma=cfg.gamma,
                   record_timing=cfg.record_timing)
    return ctx, provenance


def run_experiment(cfg, workers=None):
    """Runs every (method, epsilon, k, trial) cell and returns sorted rows.

    Each cell draws from its own stream seeded by
    :func:`cell_seed`, so results do not depend on ``workers``.
    """
    ctx, _ = prepare(cfg)
    return _run_cells(ctx, experiment_cells(cfg), workers)


def _run_cells(ctx, cells, workers):
    workers = min(resolve_workers(workers), max(1, len(cells)))
    if workers == 1:
        rows = [_run_cell(ctx, cell) for cell in cells]
    else:
        mp = multiprocessing.get_context("fork") if os.name == "posix" else None
        chunk = max(1, len(cells) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp,
                                 initializer=_init_worker, initargs=(ctx,)) as pool:
            rows = list(pool.map(_run_cell_in_worker, cells, chunksize=chunk))
    return sorted(rows, key=ResultRow.sort_key)


def _fmt(value):
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def emit_csv(rows, path):
    """Writes rows with a header, fields in :data:`CSV_FIELDS` order."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_FIELDS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(getattr(row, f)) for f in CSV_FIELDS) + "\n")


def read_csv_rows(path):
    """Parses a file written by :func:`emit_csv` back into ResultRows."""
    import csv

    def num(s, cast):
        return None if s == "NA" else cast(s)

    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ResultRow(
                dataset_name=rec["dataset_name"], method=rec["method"],
                epsilon=num(rec["epsilon"], float), k=int(rec["k"]),
                trial_index=int(rec["trial_index"]), seed=int(rec["seed"]),
                accuracy=float(rec["accuracy"]), top=rec["top"] == "true",
                great=rec["great"] == "true", good=rec["good"] == "true",
                wall_time_ms=num(rec["wall_time_ms"], float)))
    return rows


def write_metadata(cfg, ctx, provenance, path):
    lines = {
        "dataset": ctx.ds.name,
        "dataset_kind": cfg.dataset.kind,
        "n": ctx.ds.n,
        "d": ctx.ds.d,
        "reference": provenance,
        "methods": ",".join(cfg.methods),
        "epsilons": ",".join(f"{e:.6g}" for e in cfg.epsilons),
        "ks": ",".join(str(k) for k in cfg.ks),
        "trials": cfg.trials,
        "master_seed": cfg.master_seed,
        "lambda": f"{cfg.lam:g}",
        "gamma": f"{cfg.gamma:g}",
        "seed_scheme": "splitmix64 fold of (master_seed, method_id, epsilon_bits, k, trial)",
    }
    if cfg.dataset.synth is not None:
        lines.update({f"synth_{f.name}": getattr(cfg.dataset.synth, f.name)
                      for f in dataclasses.fields(cfg.dataset.synth)})
    with open(path, "w") as fh:
        for key, value in lines.items():
            fh.write(f"{key} = {value}\n")


def run_bench(cfg, workers=None, plot=True):
    """Runs an experiment and writes ``results.csv``, ``metadata.txt`` and ``accuracy.svg``."""
    from dpsis.plotting import emit_accuracy_plot

    os.makedirs(cfg.output_dir, exist_ok=True)
    ctx, provenance = prepare(cfg)
    rows = _run_cells(ctx, experiment_cells(cfg), workers)
    paths = {"csv": os.path.join(cfg.output_dir, "results.csv"),
             "metadata": os.path.join(cfg.output_dir, "metadata.txt")}
    emit_csv(rows, paths["csv"])
    write_metadata(cfg, ctx, provenance, paths["metadata"])
    if plot:
        paths["plot"] = os.path.join(cfg.output_dir, "accuracy.svg")
        emit_accuracy_plot(rows, paths["plot"], title=ctx.ds.name)
    return rows, paths


def _instability_rep(args):
    experiment, seed, lam = args
    gen = data.gen_instability_w1 if experiment == "w1" else data.gen_instability_w1w2
    ds = data.preprocess(gen(seed))
    chosen_sis = sis(ds, 5, standardize=True)
    chosen_two = two_stage_select(ds, TwoStageParams(k=5, lasso=LassoParams(lam=lam)))
    return experiment, chosen_sis, chosen_two


def replicate_instability(reps=1000, master_seed=0, lam=0.1, experiments=("w1", "w1w2"),
                          workers=None):
    """Counts how often SIS and non-private two-stage pick each feature.

    Returns ``{experiment: {"sis": counts, "two-stage": counts}}`` with one
    count per feature (0-based arrays). SIS ranks by absolute sample
    correlation, the usual non-private form of the screen.
    """
    jobs = [(exp, derive_seed(master_seed, INSTABILITY_STREAM, i, r), lam)
            for i, exp in enumerate(experiments) for r in range(reps)]
    workers = min(resolve_workers(workers), len(jobs))
    if workers == 1:
        results = list(map(_instability_rep, jobs))
    else:
        mp = multiprocessing.get_context("fork") if os.name == "posix" else None
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp) as pool:
            results = list(pool.map(_instability_rep, jobs,
                                    chunksize=max(1, len(jobs) // (4 * workers))))
    counts = {exp: {"sis": np.zeros(100, dtype=np.int64),
                    "two-stage": np.zeros(100, dtype=np.int64)} for exp in experiments}
    for exp, chosen_sis, chosen_two in results:
        counts[exp]["sis"][chosen_sis] += 1
        counts[exp]["two-stage"][chosen_two] += 1
    return counts


def emit_instability_csv(counts, path):
    with open(path, "w", newline="") as fh:
        fh.write("experiment,feature,sis,two_stage\n")
        for exp, per_method in counts.items():
            for j in range(len(per_method["sis"])):
                fh.write(f"{exp},{j + 1},{per_method['sis'][j]},{per_method['two-stage'][j]}\n")


def mean_true_feature_rate(counts, reps, support=range(5)):
    return {method: float(np.mean(values[list(support)])) / reps
            for method, values in counts.items()}
