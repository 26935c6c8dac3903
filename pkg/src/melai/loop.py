"""The outer loop: evolve body-plans, learn a controller for each, keep an archive.

With ``use_archive`` off this is plain morpho-evolution with learning (MEL);
with it on, each learner is seeded from the archive cell of its robot type
when one exists and the archive is updated with every learner's best.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import ControllerArchive, compatibility
from .arena import Environment, load_environment, task_performance
from .config import ConfigError, RunConfig, save_config
from .cppn_neat import NeatPopulation, create_population, genome_to_text, next_generation
from .morphogen import BodyPlan, DegenerateBodyError, OrganKind, RobotType, build_body
from .nipes import LearnOutcome, learn, write_learner_log


def learning_delta(f_star: float, f0: float, n: int) -> float:
    if n < 1:
        return 0.0
    return (f_star - f0) / n


@dataclass
class IndividualRecord:
    generation: int
    index: int
    type: RobotType | None  # None for degenerate bodies
    casters: int
    f0: float
    f_star: float
    n_best: int
    evaluations: int
    seeded: bool = False
    stop_reason: str = ""
    archive_f: float = math.nan  # stored performance of the seeding cell
    compatibility: float = math.nan
    archive_result: str = ""
    evaluated: bool = True

    @property
    def learning_delta(self) -> float:
        return learning_delta(self.f_star, self.f0, self.n_best)

    @property
    def learned(self) -> bool:
        return self.evaluations > 0


@dataclass
class GenerationMetrics:
    generation: int
    best_fitness: float
    best_initial_tp: float
    mean_initial_tp: float
    evaluations_this_gen: int
    mean_learning_delta: float
    archive_count: int
    archive_mean_f: float
    archive_best_f: float
    mean_compatibility: float
    best_compatibility: float
    truncated: bool = False
    individuals: list[IndividualRecord] = field(default_factory=list)


GENERATION_FIELDS = ["generation", "best_fitness", "best_initial_tp", "mean_initial_tp", "evaluations_this_gen",
                     "mean_learning_delta", "archive_count", "archive_mean_f", "archive_best_f",
                     "mean_compatibility", "best_compatibility", "truncated"]
INDIVIDUAL_FIELDS = ["generation", "index", "evaluated", "degenerate", "num_sensors", "num_wheels", "num_joints",
                     "num_casters", "f0", "f_star", "n_best", "evaluations", "learning_delta", "seeded",
                     "archive_f", "compatibility", "archive_result", "stop_reason"]


def _nan_stat(fn, values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return float(fn(values)) if values else math.nan


def summarize(generation: int, records: list[IndividualRecord], archive: ControllerArchive | None,
              truncated: bool = False) -> GenerationMetrics:
    learned = [r for r in records if r.learned]
    compat = [r.compatibility for r in records if r.seeded]
    stats = archive.stats() if archive is not None else None
    return GenerationMetrics(
        generation=generation,
        best_fitness=_nan_stat(max, [r.f_star for r in records]),
        best_initial_tp=_nan_stat(max, [r.f0 for r in learned]),
        mean_initial_tp=_nan_stat(np.mean, [r.f0 for r in learned]),
        evaluations_this_gen=sum(r.evaluations for r in records),
        mean_learning_delta=_nan_stat(np.mean, [r.learning_delta for r in learned if r.n_best >= 1]),
        archive_count=stats.count if stats else 0,
        archive_mean_f=stats.mean_f if stats and stats.count else math.nan,
        archive_best_f=stats.best_f if stats and stats.count else math.nan,
        mean_compatibility=_nan_stat(np.mean, compat),
        best_compatibility=_nan_stat(max, compat),
        truncated=truncated,
        individuals=records,
    )


def learner_rng(seed: int, generation: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, generation, index]))


def _learn_job(args):
    plan, seed_ctrl, budget, env, cfg, generation, index = args
    return learn(plan, seed_ctrl, budget, env, learner_rng(cfg.seed, generation, index), cfg.nipes,
                 cfg.hidden_size, cfg.arena)


def run_generation(pop: NeatPopulation, archive: ControllerArchive | None, config: RunConfig,
                   rng: np.random.Generator, env: Environment | None = None,
                   budget_left: int | None = None, learner_dir: Path | None = None,
                   pool: ProcessPoolExecutor | None = None) -> tuple[NeatPopulation, GenerationMetrics]:
    """Evaluate every genome of ``pop`` and breed the next population.

    In parallel mode (``config.parallel``) all learners are seeded from a copy
    of the archive taken at the start of the generation; with ``pool`` they
    also run in worker processes.  Archive updates are applied in index order.

    ``budget_left`` is the nominal budget still available to this run; once it
    is spent the remaining individuals are not evaluated and the generation is
    flagged as truncated.
    """
    env = env or load_environment(config.environment)
    gen = pop.generation
    use_archive = config.use_archive and archive is not None
    budget_left = math.inf if budget_left is None else budget_left
    start_f = task_performance(env.start[:2], env.beacon, env.diagonal)

    records: list[IndividualRecord | None] = [None] * len(pop.genomes)
    plans: list[BodyPlan | None] = [None] * len(pop.genomes)
    jobs = []
    truncated = False
    for i, genome in enumerate(pop.genomes):
        budget = int(min(config.per_body_budget, budget_left))
        if budget <= 0:
            truncated = True
            records[i] = IndividualRecord(gen, i, None, 0, math.nan, math.nan, 0, 0, evaluated=False)
            continue
        budget_left -= budget
        try:
            plan = build_body(genome, config.grid_resolution)
        except DegenerateBodyError:
            records[i] = IndividualRecord(gen, i, None, 0, start_f, start_f, 0, 0, stop_reason="degenerate")
            continue
        plans[i] = plan
        jobs.append((i, budget))

    def job_args(i: int, budget: int, source: ControllerArchive | None):
        seed_ctrl = source.lookup(plans[i].type) if use_archive else None
        seed_f = source.stored_performance(plans[i].type) if seed_ctrl is not None else math.nan
        return (plans[i], seed_ctrl, budget, env, config, gen, i), seed_f

    def finish(i: int, outcome: LearnOutcome, seed_f: float) -> None:
        plan = plans[i]
        rec = IndividualRecord(gen, i, plan.type, len(plan.organs_of(OrganKind.CASTER)), outcome.f0,
                               outcome.f_star, outcome.n_best, outcome.evaluations_used, outcome.seeded,
                               outcome.stop_reason)
        if outcome.seeded:
            rec.archive_f = seed_f
            rec.compatibility = compatibility(seed_f, outcome.f0)
        if use_archive and outcome.best_controller is not None:
            rec.archive_result = archive.update(plan.type, outcome.best_controller, outcome.f_star, gen)
        if learner_dir is not None and outcome.log:
            write_learner_log(outcome.log, learner_dir / f"gen_{gen}_ind_{i}.csv")
        records[i] = rec

    if not config.parallel:
        # sequential: individual i sees the updates made by individuals < i
        for i, budget in jobs:
            args, seed_f = job_args(i, budget, archive)
            finish(i, _learn_job(args), seed_f)
    else:
        snapshot = archive.copy() if use_archive else None
        prepared = [job_args(i, budget, snapshot) for i, budget in jobs]
        if pool is None:
            outcomes = [_learn_job(args) for args, _ in prepared]
        else:
            outcomes = list(pool.map(_learn_job, [args for args, _ in prepared]))
        for (i, _), (_, seed_f), outcome in zip(jobs, prepared, outcomes):
            finish(i, outcome, seed_f)

    metrics = summarize(gen, records, archive if use_archive else None, truncated)
    fitnesses = [r.f_star for r in records]
    return next_generation(pop, fitnesses, config.neat, rng), metrics


# ---------------------------------------------------------------------------
# run directories


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return "" if v is None else str(v)


def individual_row(r: IndividualRecord) -> dict:
    s, w, j = r.type if r.type is not None else ("", "", "")
    return {"generation": r.generation, "index": r.index, "evaluated": r.evaluated,
            "degenerate": r.evaluated and r.type is None, "num_sensors": s, "num_wheels": w, "num_joints": j,
            "num_casters": r.casters, "f0": r.f0, "f_star": r.f_star, "n_best": r.n_best,
            "evaluations": r.evaluations, "learning_delta": r.learning_delta if r.learned else math.nan,
            "seeded": r.seeded, "archive_f": r.archive_f, "compatibility": r.compatibility,
            "archive_result": r.archive_result, "stop_reason": r.stop_reason}


class _CsvAppender:
    def __init__(self, path: Path, fields: list[str]):
        self.path, self.fields = path, fields
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(fields)

    def write(self, row: dict) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row[k]) for k in self.fields])


def _prepare_dir(out: Path) -> None:
    if out.exists() and any(out.iterdir()):
        raise FileExistsError(f"run directory {out} already exists and is not empty")
    for sub in ("learners", "archive", "plots"):
        (out / sub).mkdir(parents=True, exist_ok=True)


@dataclass
class RunResult:
    directory: Path
    metrics: list[GenerationMetrics]
    archive: ControllerArchive | None
    population: NeatPopulation
    total_evaluations: int


def run_experiment(config: RunConfig, out_dir, env: Environment | None = None, plots: bool = True) -> RunResult:
    """Run all generations, writing CSVs, learner logs, checkpoints and plots to ``out_dir``."""
    out = Path(out_dir)
    if env is None:
        try:
            env = load_environment(config.environment)
        except KeyError as e:
            raise ConfigError(f"[run] environment: {e.args[0]}") from None
    _prepare_dir(out)
    save_config(config, out / "config.ini")
    gen_csv = _CsvAppender(out / "generations.csv", GENERATION_FIELDS)
    ind_csv = _CsvAppender(out / "individuals.csv", INDIVIDUAL_FIELDS)

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    pop = create_population(config.neat, rng)
    archive = ControllerArchive() if config.use_archive else None
    budget_left = config.total_budget
    history: list[GenerationMetrics] = []
    total = 0
    best = (-math.inf, None)

    pool = ProcessPoolExecutor(config.workers) if config.parallel and config.workers > 1 else None
    try:
        for _ in range(config.generations):
            if budget_left <= 0:
                break
            evaluated = pop
            pop, m = run_generation(pop, archive, config, rng, env, budget_left, out / "learners", pool)
            budget_left -= config.population_size * config.per_body_budget
            total += m.evaluations_this_gen
            history.append(m)
            gen_csv.write({k: getattr(m, k) for k in GENERATION_FIELDS})
            for r in m.individuals:
                ind_csv.write(individual_row(r))
                if r.evaluated and r.f_star > best[0]:
                    best = (r.f_star, evaluated.genomes[r.index])
            if archive is not None:
                archive.save(out / "archive" / f"gen_{m.generation}.ckpt")
    finally:
        if pool is not None:
            pool.shutdown()

    if best[1] is not None:
        (out / "best_genome.txt").write_text(genome_to_text(best[1]))
    if plots:
        from .plots import plot_run
        plot_run(out)
    return RunResult(out, history, archive, pop, total)


def default_run_dir(config: RunConfig, root=".") -> Path:
    return Path(root) / f"{config.environment}_{config.variant}_{config.per_body_budget}x{config.generations}_seed{config.seed}"


def cpu_count() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
