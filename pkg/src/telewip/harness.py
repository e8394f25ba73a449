"""Trial orchestration: scheduling, metrics, persistence, replay.

A trial is a pure function of (map name, map seed, feedback mode, operator
seed, engine configuration); the harness adds the bookkeeping around that
fact. Records persist as one JSON file per trial plus one aggregate CSV per
experiment, and any record can be replayed back through the engine and
checked for equality.

Metric names follow the evaluation convention: completion time (time to
goal, successes only), collision number (collisions per trial for a case),
completed distance (monotone envelope of x-progress as a fraction of the
start-goal span), success rate.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import engine_config_from_dict, engine_config_to_dict
from .engine import Engine, EngineConfig
from .sharedcontrol import FeedbackConfig, FeedbackMode
from .worlds import CollisionEvent, MapSpec, build_map

RECORD_SCHEMA_VERSION = 1

# the engine reports the fall outcome by its physical cause; records use
# the neutral trial-status vocabulary
_OUTCOME_NAMES = {"success": "success", "timeout": "timeout", "fell": "aborted"}
OUTCOMES = tuple(_OUTCOME_NAMES.values())


@dataclass(frozen=True)
class TrialSpec:
    """One cell of an experiment: which map, which mode, which seeds."""

    map_name: str
    map_seed: int
    mode: FeedbackMode
    operator_seed: int

    def slug(self) -> str:
        return f"{self.map_name}_{self.mode.value}_m{self.map_seed}_o{self.operator_seed}"


@dataclass
class TrialRecord:
    trial: TrialSpec
    config: dict
    outcome: str                     # success | timeout | aborted
    duration: float
    completion_time: float | None
    obstacle_collisions: int
    wall_collisions: int
    completed_distance: float        # fraction of the start-goal x span
    midpoints_done: int
    events: list[CollisionEvent]
    trajectory: np.ndarray | None = None
    commands: np.ndarray | None = None
    tape: np.ndarray | None = None

    @property
    def collisions(self) -> int:
        return self.obstacle_collisions + self.wall_collisions

    @property
    def success(self) -> bool:
        return self.outcome == "success"


def metric_completion_time(rec: TrialRecord) -> float | None:
    """Seconds from start to goal; absent unless the trial succeeded."""
    return rec.duration if rec.success else None


def metric_collision_number(records: list[TrialRecord]) -> float:
    """Total collisions across the case divided by the number of trials."""
    if not records:
        raise ValueError("no records")
    return sum(r.collisions for r in records) / len(records)


def metric_completed_distance(trajectory: np.ndarray, spec: MapSpec) -> float:
    """Monotone envelope of x-progress over the start-goal span, in [0, 1].

    Backtracking never reduces it and overshoot never exceeds 1.
    """
    span = spec.goal_x - spec.start[0]
    if span <= 0.0:
        raise ValueError("map start must lie before the goal")
    best = float(np.max(trajectory[:, 1])) if len(trajectory) else spec.start[0]
    return min(max((best - spec.start[0]) / span, 0.0), 1.0)


def metric_success_rate(records: list[TrialRecord]) -> float:
    if not records:
        raise ValueError("no records")
    return sum(1 for r in records if r.success) / len(records)


def run_trial(trial: TrialSpec, template: EngineConfig | None = None,
              include_trajectory: bool = True,
              tape: np.ndarray | None = None) -> TrialRecord:
    """Run one seeded trial to its outcome and compute its metrics."""
    template = EngineConfig() if template is None else template
    cfg = dataclasses.replace(
        template,
        feedback=FeedbackConfig.for_mode(
            trial.mode, activation_command=template.feedback.activation_command),
        operator=dataclasses.replace(template.operator, seed=trial.operator_seed),
    )
    spec = build_map(trial.map_name, trial.map_seed)
    result = Engine(spec, cfg, tape=tape).run()
    outcome = _OUTCOME_NAMES[result.outcome]
    return TrialRecord(
        trial=trial,
        config=engine_config_to_dict(cfg),
        outcome=outcome,
        duration=result.duration,
        completion_time=result.duration if outcome == "success" else None,
        obstacle_collisions=result.obstacle_collisions,
        wall_collisions=result.wall_collisions,
        completed_distance=metric_completed_distance(result.trajectory, spec),
        midpoints_done=result.midpoints_done,
        events=result.events,
        trajectory=result.trajectory if include_trajectory else None,
        commands=result.commands if include_trajectory else None,
        tape=tape,
    )


@dataclass(frozen=True)
class ExperimentPlan:
    """Paired, seeded, mode-interleaved trial schedule.

    Trial k of every mode shares its map seed and operator seed, so modes
    are compared on identical worlds and operator noise (paired design).
    The flat schedule is a seeded permutation, interleaving modes rather
    than running them in blocks.
    """

    maps: tuple[str, ...] = ("s1static", "s1dynamic", "s2bright", "s2dark", "s2dyn")
    modes: tuple[FeedbackMode, ...] = (FeedbackMode.NONE, FeedbackMode.HAPTIC,
                                       FeedbackMode.COMMAND, FeedbackMode.COMBINED)
    trials_static: int = 5
    trials_dynamic: int = 10
    base_seed: int = 0

    def trials_for(self, map_name: str) -> int:
        return self.trials_dynamic if map_name == "s2dyn" else self.trials_static

    def cells(self) -> list[TrialSpec]:
        """All trials in canonical (unshuffled) order."""
        out = []
        for map_name in self.maps:
            for k in range(self.trials_for(map_name)):
                for mode in self.modes:
                    out.append(TrialSpec(map_name, self.base_seed + k,
                                         mode, self.base_seed + k))
        return out

    def schedule(self) -> list[TrialSpec]:
        """Seeded permutation of the full trial list."""
        cells = self.cells()
        rng = np.random.default_rng(np.random.SeedSequence([self.base_seed, 1]))
        return [cells[i] for i in rng.permutation(len(cells))]


@dataclass(frozen=True)
class CaseSummary:
    """Aggregate row for one (map, mode) case."""

    map_name: str
    mode: str
    n_trials: int
    successes: int
    success_rate: float
    mean_completion_time: float | None
    std_completion_time: float | None
    mean_obstacle_collisions: float
    mean_wall_collisions: float
    mean_collisions: float
    std_collisions: float
    mean_completed_distance: float
    std_completed_distance: float


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(list(values), dtype=float)
    return float(np.mean(arr)), float(np.std(arr))


def aggregate(records: list[TrialRecord]) -> list[CaseSummary]:
    """Per-(map, mode) means and standard deviations.

    Invariant to the order records arrive in: rows are grouped and reduced
    over a canonical sort.
    """
    groups: dict[tuple[str, str], list[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.trial.map_name, r.trial.mode.value), []).append(r)
    rows = []
    for (map_name, mode) in sorted(groups):
        recs = sorted(groups[(map_name, mode)],
                      key=lambda r: (r.trial.map_seed, r.trial.operator_seed))
        times = [r.completion_time for r in recs if r.completion_time is not None]
        mean_ct, std_ct = _mean_std(times) if times else (None, None)
        mean_c, std_c = _mean_std(r.collisions for r in recs)
        mean_cd, std_cd = _mean_std(r.completed_distance for r in recs)
        rows.append(CaseSummary(
            map_name=map_name, mode=mode, n_trials=len(recs),
            successes=sum(1 for r in recs if r.success),
            success_rate=metric_success_rate(recs),
            mean_completion_time=mean_ct, std_completion_time=std_ct,
            mean_obstacle_collisions=float(np.mean([r.obstacle_collisions for r in recs])),
            mean_wall_collisions=float(np.mean([r.wall_collisions for r in recs])),
            mean_collisions=mean_c, std_collisions=std_c,
            mean_completed_distance=mean_cd, std_completed_distance=std_cd,
        ))
    return rows


CSV_COLUMNS = ("map", "mode", "n_trials", "successes", "success_rate",
               "mean_completion_time", "std_completion_time",
               "mean_obstacle_collisions", "mean_wall_collisions",
               "mean_collisions", "std_collisions",
               "mean_completed_distance", "std_completed_distance")


def write_summary_csv(rows: list[CaseSummary], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            writer.writerow([
                r.map_name, r.mode, r.n_trials, r.successes,
                repr(r.success_rate),
                "" if r.mean_completion_time is None else repr(r.mean_completion_time),
                "" if r.std_completion_time is None else repr(r.std_completion_time),
                repr(r.mean_obstacle_collisions), repr(r.mean_wall_collisions),
                repr(r.mean_collisions), repr(r.std_collisions),
                repr(r.mean_completed_distance), repr(r.std_completed_distance),
            ])


# ---------------------------------------------------------------------------
# per-trial JSON persistence

def record_to_dict(rec: TrialRecord) -> dict:
    return {
        "schema_version": RECORD_SCHEMA_VERSION,
        "trial": {"map": rec.trial.map_name, "map_seed": rec.trial.map_seed,
                  "mode": rec.trial.mode.value,
                  "operator_seed": rec.trial.operator_seed},
        "config": rec.config,
        "result": {
            "outcome": rec.outcome,
            "duration": rec.duration,
            "completion_time": rec.completion_time,
            "obstacle_collisions": rec.obstacle_collisions,
            "wall_collisions": rec.wall_collisions,
            "completed_distance": rec.completed_distance,
            "midpoints_done": rec.midpoints_done,
        },
        "events": [{"time": e.time, "target": e.target,
                    "penetration": e.penetration} for e in rec.events],
        "trajectory": None if rec.trajectory is None else rec.trajectory.tolist(),
        "commands": None if rec.commands is None else rec.commands.tolist(),
        "tape": None if rec.tape is None else rec.tape.tolist(),
    }


def record_from_dict(doc: dict) -> TrialRecord:
    if doc.get("schema_version") != RECORD_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported record schema {doc.get('schema_version')!r}, "
            f"expected {RECORD_SCHEMA_VERSION}")
    t = doc["trial"]
    res = doc["result"]
    return TrialRecord(
        trial=TrialSpec(t["map"], t["map_seed"], FeedbackMode(t["mode"]),
                        t["operator_seed"]),
        config=doc["config"],
        outcome=res["outcome"],
        duration=res["duration"],
        completion_time=res["completion_time"],
        obstacle_collisions=res["obstacle_collisions"],
        wall_collisions=res["wall_collisions"],
        completed_distance=res["completed_distance"],
        midpoints_done=res["midpoints_done"],
        events=[CollisionEvent(e["time"], e["target"], e["penetration"])
                for e in doc["events"]],
        trajectory=None if doc["trajectory"] is None else np.array(doc["trajectory"]),
        commands=None if doc["commands"] is None else np.array(doc["commands"]),
        tape=None if doc.get("tape") is None else np.array(doc["tape"]),
    )


def save_record(rec: TrialRecord, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(record_to_dict(rec), fh, separators=(",", ":"))
        fh.write("\n")


def load_record(path: str | Path) -> TrialRecord:
    with open(path) as fh:
        return record_from_dict(json.load(fh))


def records_equal(a: TrialRecord, b: TrialRecord) -> bool:
    """Field-for-field equality, arrays compared exactly."""
    scalars = ("outcome", "duration", "completion_time", "obstacle_collisions",
               "wall_collisions", "completed_distance", "midpoints_done")
    if a.trial != b.trial or a.events != b.events:
        return False
    if any(getattr(a, f) != getattr(b, f) for f in scalars):
        return False
    for f in ("trajectory", "commands", "tape"):
        xa, xb = getattr(a, f), getattr(b, f)
        if (xa is None) != (xb is None):
            return False
        if xa is not None and not np.array_equal(xa, xb):
            return False
    return True


def replay_record(rec: TrialRecord) -> tuple[TrialRecord, bool]:
    """Re-run a stored trial from its own config and compare.

    Synthetic trials regenerate from seeds; taped trials (live sessions)
    re-run their recorded lean tape. Returns (fresh record, identical?).
    """
    template = engine_config_from_dict(rec.config)
    fresh = run_trial(rec.trial, template=template,
                      include_trajectory=rec.trajectory is not None,
                      tape=rec.tape)
    return fresh, records_equal(rec, fresh)


@dataclass
class ExperimentResult:
    records: list[TrialRecord]
    summary: list[CaseSummary]
    out_dir: Path | None

    @property
    def aborted(self) -> int:
        return sum(1 for r in self.records if r.outcome == "aborted")


def run_experiment(plan: ExperimentPlan, template: EngineConfig | None = None,
                   out_dir: str | Path | None = None,
                   include_trajectory: bool = False,
                   progress=None) -> ExperimentResult:
    """Execute a full plan in schedule order and persist the results."""
    template = EngineConfig() if template is None else template
    schedule = plan.schedule()
    records = []
    for i, trial in enumerate(schedule):
        rec = run_trial(trial, template=template,
                        include_trajectory=include_trajectory)
        records.append(rec)
        if progress is not None:
            progress(f"[{i + 1}/{len(schedule)}] {trial.slug()}: {rec.outcome} "
                     f"t={rec.duration:.1f}s collisions={rec.collisions}")
    summary = aggregate(records)
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for rec in records:
            save_record(rec, out / f"trial_{rec.trial.slug()}.json")
        write_summary_csv(summary, out / "summary.csv")
    return ExperimentResult(records=records, summary=summary, out_dir=out)
