"""Benchmark suites, episode rollouts and metrics (crossing time, jerk, J_Interference)."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .env import IntersectionEnv
from .errors import InvariantViolation
from .safety import EMERGENCY_JERK_LIMIT, ShieldMode
from .scenario import DEFAULT_RANGES, ScenarioSpec, sample_scenario, with_noise
from .traffic import T_LIMIT, EpisodeStatus

JERK_BINS = np.linspace(-7.0, 7.0, 29)
RL_JERK_BAND = 1.5
ALPHA_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))
NOISE_LEVELS = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
JERK_LIMITS = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0)
Z95 = 1.959963984540054


@dataclass
class StepLog:
    t: float
    jerk_commanded: float
    jerk_executed: float
    emergency: bool
    emergency_jerk: float | None
    psa_mask: tuple = ()
    s: float = 0.0
    v: float = 0.0
    a: float = 0.0


@dataclass
class EpisodeLog:
    scenario_seed: int
    episode_seed: int
    policy_id: str
    alpha: float | None
    steps: list = field(default_factory=list)
    outcome: str = EpisodeStatus.RUNNING.value
    crossing_time: float | None = None
    collision: bool = False

    @property
    def emergency_jerks(self) -> list:
        return [s.emergency_jerk for s in self.steps if s.emergency]

    def validate(self) -> "EpisodeLog":
        for s in self.steps:
            if s.emergency != (s.emergency_jerk is not None):
                raise InvariantViolation("emergency jerk present iff the emergency flag is set")
        if (self.crossing_time is not None) != (self.outcome == EpisodeStatus.GOAL_REACHED.value):
            raise InvariantViolation("crossing time defined iff the goal was reached")
        return self


def _policy_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed) % 2**63).spawn(3)[2])


def run_episode(policy, scenario: ScenarioSpec, seed: int, mode: ShieldMode = ShieldMode.EVALUATION,
                jerk_limit: float = EMERGENCY_JERK_LIMIT, policy_id: str = "", alpha=None,
                t_limit: float = T_LIMIT, keep_env: bool = False):
    """Roll out one episode; unsafe proposals are replaced by the emergency jerk."""
    env = IntersectionEnv(scenario, seed, jerk_limit, mode, t_limit, record=keep_env)
    rng = _policy_rng(seed)
    log = EpisodeLog(scenario.seed, int(seed), policy_id or type(policy).__name__, alpha)
    while not env.done:
        verdict = env.verdict
        proposed = float(policy.propose(env.state, verdict, rng))
        ego = env.world.ego
        s, v, a = ego.s_route, ego.v, ego.a
        t = env.t
        res = env.step(proposed)
        log.steps.append(StepLog(t, proposed, res.executed_jerk, res.emergency,
                                 res.executed_jerk if res.emergency else None, verdict.mask,
                                 s, v, a))
        if res.cause.value == "interference":
            break
    log.outcome = env.status.value if env.status is not EpisodeStatus.RUNNING else "interference"
    log.collision = env.status is EpisodeStatus.COLLISION
    if env.status is EpisodeStatus.GOAL_REACHED:
        log.crossing_time = env.t
    return (log, env) if keep_env else log


# --- metrics -----------------------------------------------------------------

def j_interference(logs) -> float:
    """Sum of squared emergency jerks over all episodes, divided by the episode count."""
    logs = list(logs)
    if not logs:
        raise ValueError("j_interference needs at least one episode")
    total = math.fsum(j * j for log in logs for j in log.emergency_jerks)
    return total / len(logs)


@dataclass(frozen=True)
class CrossingStats:
    mean: float
    ci_low: float
    ci_high: float
    n: int

    @property
    def defined(self) -> bool:
        return self.n > 0


def crossing_time_stats(logs) -> CrossingStats:
    """Mean crossing time over goal episodes with a normal-approximation 95% CI."""
    times = np.array([log.crossing_time for log in logs if log.crossing_time is not None])
    n = len(times)
    if n == 0:
        return CrossingStats(math.nan, math.nan, math.nan, 0)
    mean = math.fsum(times) / n
    if n == 1:
        return CrossingStats(mean, mean, mean, 1)
    half = Z95 * float(np.std(times, ddof=1)) / math.sqrt(n)
    return CrossingStats(mean, mean - half, mean + half, n)


@dataclass(frozen=True)
class JerkStats:
    mean_abs: float
    histogram: tuple
    bin_edges: tuple
    in_band_fraction: float
    n_steps: int


def jerk_stats(logs) -> JerkStats:
    """Mean absolute executed jerk and a fixed-bin histogram over [-7, 7]."""
    jerks = np.array([s.jerk_executed for log in logs for s in log.steps], dtype=float)
    n = len(jerks)
    hist, _ = np.histogram(np.clip(jerks, JERK_BINS[0], JERK_BINS[-1]), bins=JERK_BINS)
    if n == 0:
        return JerkStats(math.nan, tuple(int(h) for h in hist), tuple(JERK_BINS), math.nan, 0)
    in_band = float(np.mean(np.abs(jerks) <= RL_JERK_BAND + 1e-12))
    return JerkStats(math.fsum(np.abs(jerks)) / n, tuple(int(h) for h in hist),
                     tuple(float(e) for e in JERK_BINS), in_band, n)


def summarize(logs, **labels) -> dict:
    logs = list(logs)
    cs = crossing_time_stats(logs)
    js = jerk_stats(logs)
    row = dict(labels)
    row.update({
        "episodes": len(logs),
        "goal_rate": sum(log.outcome == "goal_reached" for log in logs) / len(logs),
        "timeouts": sum(log.outcome == "timeout" for log in logs),
        "collisions": sum(log.collision for log in logs),
        "crossing_time_mean": cs.mean,
        "crossing_time_ci_low": cs.ci_low,
        "crossing_time_ci_high": cs.ci_high,
        "j_interference": j_interference(logs),
        "mean_abs_jerk": js.mean_abs,
        "emergency_steps": sum(len(log.emergency_jerks) for log in logs),
    })
    return row


# --- suites ------------------------------------------------------------------

@dataclass
class BenchmarkSuite:
    entries: list  # (ScenarioSpec, episode seed)
    master_seed: int = 0
    noise_levels: tuple = (0.0, 1.0, 2.0)
    coop_levels: tuple = (0.1, 0.4, 0.7)

    def __len__(self) -> int:
        return len(self.entries)

    def with_noise(self, sigma_d: float) -> "BenchmarkSuite":
        return replace(self, entries=[(with_noise(spec, sigma_d), seed) for spec, seed in self.entries])


def build_benchmark(master_seed: int = 0, n: int = 30, noise_levels=(0.0, 1.0, 2.0),
                    coop_levels=(0.1, 0.4, 0.7)) -> BenchmarkSuite:
    """Reproducible suite: random scenarios with random noise and cooperation levels."""
    rng = np.random.default_rng(master_seed)
    entries = []
    for _ in range(n):
        sigma_d = float(noise_levels[int(rng.integers(len(noise_levels)))])
        p_coop = float(coop_levels[int(rng.integers(len(coop_levels)))])
        ranges = replace(DEFAULT_RANGES, sigma_d=(sigma_d,), sigma_v=(2.0 * sigma_d,),
                         p_coop=(p_coop,))
        spec = sample_scenario(rng, ranges)
        entries.append((spec, int(rng.integers(0, 2**63 - 1))))
    return BenchmarkSuite(entries, master_seed, tuple(noise_levels), tuple(coop_levels))


def run_suite(policy, suite: BenchmarkSuite, jerk_limit: float = EMERGENCY_JERK_LIMIT,
              policy_id: str = "", alpha=None, strict: bool = True, workers: int = 1) -> list:
    """Evaluate a policy on every suite entry; logs come back in suite order."""
    jobs = [(policy, spec, seed, jerk_limit, policy_id, alpha) for spec, seed in suite.entries]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            logs = list(pool.map(_run_job, jobs))
    else:
        logs = [_run_job(job) for job in jobs]
    if strict:
        bad = [log.episode_seed for log in logs if log.collision]
        if bad:
            raise InvariantViolation(f"collision with the shield active (episode seeds {bad})")
    return logs


def _run_job(job):
    policy, spec, seed, jerk_limit, policy_id, alpha = job
    if alpha is not None and hasattr(policy, "alpha"):
        policy = _with_alpha(policy, alpha)
    return run_episode(policy, spec, seed, ShieldMode.EVALUATION, jerk_limit, policy_id, alpha)


def _with_alpha(policy, alpha):
    if getattr(policy, "alpha", None) == alpha:
        return policy
    policy.alpha = float(alpha)
    return policy


def alpha_sweep(agent, suite: BenchmarkSuite, grid=ALPHA_GRID, jerk_limit=EMERGENCY_JERK_LIMIT,
                policy_id: str = "iqn", workers: int = 1) -> list:
    rows = []
    original = agent.alpha
    try:
        for alpha in grid:
            agent.alpha = float(alpha)
            logs = run_suite(agent, suite, jerk_limit, policy_id, float(alpha), workers=workers)
            rows.append(summarize(logs, policy=policy_id, alpha=float(alpha)))
    finally:
        agent.alpha = original
    return rows


def best_alpha(rows) -> dict:
    """Speed: argmin mean crossing time; Comfort: argmin J_Interference (first wins ties)."""
    def key_speed(r):
        m = r["crossing_time_mean"]
        return math.inf if math.isnan(m) else m

    speed = min(rows, key=key_speed)
    comfort = min(rows, key=lambda r: r["j_interference"])
    return {"speed": speed["alpha"], "comfort": comfort["alpha"],
            "speed_row": speed, "comfort_row": comfort}


def noise_sweep(policies: dict, suite: BenchmarkSuite, levels=NOISE_LEVELS,
                jerk_limit=EMERGENCY_JERK_LIMIT, workers: int = 1) -> list:
    """One row per (sigma_d, policy); sigma_v = 2 sigma_d."""
    rows = []
    for sigma_d in levels:
        noisy = suite.with_noise(sigma_d)
        for name, policy in policies.items():
            logs = run_suite(policy, noisy, jerk_limit, name, getattr(policy, "alpha", None),
                             workers=workers)
            rows.append(summarize(logs, sigma_d=float(sigma_d), sigma_v=2.0 * float(sigma_d),
                                  policy=name))
    return rows


def jerk_limit_sweep(policy, suite: BenchmarkSuite, limits=JERK_LIMITS, policy_id: str = "rule",
                     workers: int = 1) -> list:
    rows = []
    for limit in limits:
        logs = run_suite(policy, suite, float(limit), policy_id, workers=workers)
        rows.append(summarize(logs, policy=policy_id, jerk_limit=float(limit)))
    return rows


# --- export ------------------------------------------------------------------

def _cell(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    if x is None:
        return ""
    return str(x)


def rows_to_csv(rows, path=None) -> str:
    rows = list(rows)
    header = []
    for r in rows:
        header += [k for k in r if k not in header and not isinstance(r[k], dict)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in header])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


STEP_FIELDS = ("t", "s", "v", "a", "jerk_commanded", "jerk_executed", "emergency",
               "emergency_jerk", "psa_mask")


def log_to_csv(log: EpisodeLog, path=None) -> str:
    """One row per decision step; metadata in leading comment lines."""
    buf = io.StringIO()
    buf.write(f"# scenario_seed={log.scenario_seed} episode_seed={log.episode_seed} "
              f"policy={log.policy_id} alpha={_cell(log.alpha)} outcome={log.outcome} "
              f"crossing_time={_cell(log.crossing_time)} collision={int(log.collision)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STEP_FIELDS)
    for s in log.steps:
        w.writerow([_cell(s.t), _cell(s.s), _cell(s.v), _cell(s.a), _cell(s.jerk_commanded),
                    _cell(s.jerk_executed), int(s.emergency), _cell(s.emergency_jerk),
                    "".join("1" if m else "0" for m in s.psa_mask)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def log_from_csv(text: str) -> EpisodeLog:
    lines = text.splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
    log = EpisodeLog(int(meta["scenario_seed"]), int(meta["episode_seed"]), meta["policy"],
                     float(meta["alpha"]) if meta["alpha"] else None, outcome=meta["outcome"],
                     crossing_time=float(meta["crossing_time"]) if meta["crossing_time"] else None,
                     collision=meta["collision"] == "1")
    for row in csv.DictReader(lines[1:]):
        log.steps.append(StepLog(
            float(row["t"]), float(row["jerk_commanded"]), float(row["jerk_executed"]),
            row["emergency"] == "1",
            float(row["emergency_jerk"]) if row["emergency_jerk"] else None,
            tuple(c == "1" for c in row["psa_mask"]), float(row["s"]), float(row["v"]),
            float(row["a"])))
    return log


def write_summary(rows, path, extra: dict | None = None) -> None:
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        return x

    payload = {"rows": [clean(r) for r in rows]}
    if extra:
        payload.update(clean(extra))
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
