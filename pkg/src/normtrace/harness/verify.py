"""Executable property suites for the analytic guarantees.

Each check runs a self-contained experiment at a stated scale and returns
a pass/fail verdict with the measured quantities.  The acceptance tests
call these functions at full scale; the CLI exposes them with a scale
knob for quick desk runs.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import intervention as iv
from ..attribution import compute_rho
from ..causal import first_exceedance_step, h0_for_alpha
from ..detection import BudgetAllocator, CusumDetector, NormSpec
from ..ledger import account_resources
from .config import ExperimentConfig, ScenarioConfig, config_hash
from .episode import run_episode

# Null-stream threshold where the self-calibrating detector settles for a
# standard-normal diagnostic with slack 0.1 and a 5% alarm budget;
# starting nearby keeps the whole-run alarm frequency inside tolerance.
CALIBRATED_H0 = 2.1


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"{status}  {self.name}  ({self.seconds:.1f}s)  {parts}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def _timed(fn):
    def wrapper(*args, **kwargs) -> CheckResult:
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        result.seconds = time.perf_counter() - start
        return result

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# responsibility normalization over full episodes


@_timed
def check_attribution_normalization(
    episodes: int = 100, agents: int = 10, steps: int = 1000, tol: float = 1e-9
) -> CheckResult:
    """Every attributed event's scores sum to one within tolerance."""
    worst = 0.0
    attributed_total = 0
    events_total = 0
    for seed in range(episodes):
        config = ExperimentConfig()
        config.world.num_agents = agents
        config.world.graph_k = 4
        config.episode_steps = steps
        config.detection.warmup_steps = min(500, steps // 2)
        probe: dict = {}
        run_episode(config, seed, probe=probe)
        ledger = probe["ledger"]
        for eid, ev in ledger.events.items():
            if ev.agent >= agents:
                continue
            events_total += 1
            rho = compute_rho(ledger, eid, agents)
            total = float(rho.sum())
            if total > 0.0:
                attributed_total += 1
                err = abs(total - 1.0)
                if err > worst:
                    worst = err
                if rho.min() < 0.0 or rho.max() > 1.0 + tol:
                    return CheckResult(
                        "attribution-normalization",
                        False,
                        {"reason": "score outside [0,1]", "seed": seed},
                    )
    return CheckResult(
        "attribution-normalization",
        worst <= tol and attributed_total > 0,
        {
            "episodes": episodes,
            "events": events_total,
            "attributed": attributed_total,
            "worst_error": worst,
            "tolerance": tol,
        },
    )


# ---------------------------------------------------------------------------
# any-time false-edge control on null streams


@_timed
def check_edge_fp_control(
    runs: int = 20_000,
    steps: int = 2000,
    alpha: float = 1e-3,
    lags: int = 8,
    window: int = 64,
    base_seed: int = 7_000_000,
) -> CheckResult:
    """Fraction of independent null pair-streams ever admitting an edge
    stays within alpha plus three binomial standard errors."""
    h0 = h0_for_alpha(alpha)
    hits = 0
    for i in range(runs):
        rng = np.random.default_rng(base_seed + i)
        src = rng.standard_normal(steps)
        tgt = rng.standard_normal(steps)
        if first_exceedance_step(src, tgt, lags, window, 1e-6, h0) > 0:
            hits += 1
    fraction = hits / runs
    limit = alpha + 3.0 * math.sqrt(alpha * (1.0 - alpha) / runs)
    return CheckResult(
        "edge-fp-control",
        fraction <= limit,
        {
            "runs": runs,
            "steps": steps,
            "alpha": alpha,
            "h0": h0,
            "fraction_with_edge": fraction,
            "limit": limit,
        },
    )


# ---------------------------------------------------------------------------
# long-run alarm-rate calibration


@_timed
def check_alarm_calibration(
    seeds: int = 20,
    steps: int = 50_000,
    alpha: float = 0.05,
    tol: float = 0.01,
    base_seed: int = 3_000_000,
) -> CheckResult:
    """Self-calibrating detector holds its alarm frequency at the budget on
    a stationary null stream, for every seed."""
    rates = []
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        spec = NormSpec(id="null", kind="load", mu0=0.0, delta=0.1, alpha=alpha)
        det = CusumDetector(spec, h0=CALIBRATED_H0)
        stream = rng.standard_normal(steps)
        for z in stream:
            det.step(z)
        rates.append(det.alarm_rate)
    worst = max(abs(r - alpha) for r in rates)
    return CheckResult(
        "alarm-calibration",
        worst <= tol,
        {
            "seeds": seeds,
            "steps": steps,
            "alpha": alpha,
            "rate_min": min(rates),
            "rate_max": max(rates),
            "worst_deviation": worst,
            "tolerance": tol,
        },
    )


# ---------------------------------------------------------------------------
# detection-delay bound under injected drift


@_timed
def check_delay_bound(
    trials: int = 500,
    drift: float = 1.0,
    slack: float = 0.1,
    alpha: float = 0.05,
    warm_steps: int = 4000,
    max_delay: int = 10_000,
    base_seed: int = 4_000_000,
) -> CheckResult:
    """Mean delay to the first alarm after a persistent drift stays within
    the converged-threshold bound plus two standard errors."""
    delays = []
    h_stars = []
    for s in range(trials):
        rng = np.random.default_rng(base_seed + s)
        spec = NormSpec(id="drift", kind="load", mu0=0.0, delta=slack, alpha=alpha)
        det = CusumDetector(spec, h0=CALIBRATED_H0)
        for z in rng.standard_normal(warm_steps):
            det.step(z)
        h_stars.append(det.h)
        delay = max_delay
        for k in range(1, max_delay + 1):
            if det.step(rng.normal(drift, 1.0)):
                delay = k
                break
        delays.append(delay)
    delays_arr = np.asarray(delays, dtype=float)
    mean_delay = float(delays_arr.mean())
    se = float(delays_arr.std(ddof=1) / math.sqrt(trials))
    from ..detection import lorden_delay_bound

    bound = lorden_delay_bound(float(np.mean(h_stars)), drift, slack)
    limit = bound + 2.0 * se
    return CheckResult(
        "delay-bound",
        mean_delay <= limit,
        {
            "trials": trials,
            "drift": drift,
            "slack": slack,
            "h_star_mean": float(np.mean(h_stars)),
            "mean_delay": mean_delay,
            "bound": bound,
            "limit": limit,
        },
    )


# ---------------------------------------------------------------------------
# bounded compromise with a scripted adversary


def _compromise_trial(
    seed: int,
    steps: int,
    alpha: float,
    window: int,
    penalty: float,
    gain_max: float,
) -> float:
    """Suffix-max violation ratio over the second half of a scripted run.

    The adversary harvests ``gain_max`` per step whenever no penalty
    window is active and pauses while one is (its in-window net is
    negative by the dominance margin), which is the worst case for the
    long-run ratio.
    """
    assert penalty * window > gain_max
    rng = np.random.default_rng(seed)
    spec = NormSpec(id="load", kind="load", mu0=0.0, delta=0.1, alpha=alpha)
    det = CusumDetector(spec, h0=1.0)
    allocator = BudgetAllocator(["load"], global_budget=alpha, planned_steps=steps)
    shaping_until = 0
    violations = 0
    ratios = np.empty(steps)
    for t in range(1, steps + 1):
        active = t <= shaping_until
        violate = not active
        z = (1.0 if violate else 0.0) + rng.normal(0.0, 0.05)
        alert = det.step(z)
        outcome = allocator.observe(["load"] if alert else [])
        if outcome.admitted and not active:
            shaping_until = t + window
        if violate:
            violations += 1
        ratios[t - 1] = violations / t
    return float(ratios[steps // 2 - 1 :].max())


@_timed
def check_bounded_compromise(
    seeds: int = 50,
    steps: int = 10_000,
    alpha: float = 0.05,
    window: int = 25,
    penalty: float = 0.2,
    gain_max: float = 1.0,
    tol: float = 0.02,
    base_seed: int = 5_000_000,
) -> CheckResult:
    """Suffix-max of the violation ratio stays below the analytic ceiling
    plus tolerance for every seed."""
    ceiling = iv.compromise_ceiling(alpha, window, penalty, gain_max)
    limit = ceiling + tol
    worst = 0.0
    failures = 0
    for s in range(seeds):
        r = _compromise_trial(base_seed + s, steps, alpha, window, penalty, gain_max)
        worst = max(worst, r)
        if r > limit:
            failures += 1
    return CheckResult(
        "bounded-compromise",
        failures == 0,
        {
            "seeds": seeds,
            "steps": steps,
            "ceiling": ceiling,
            "limit": limit,
            "worst_suffix_ratio": worst,
            "failures": failures,
        },
    )


# ---------------------------------------------------------------------------
# penalty calculators invert exactly


@_timed
def check_penalty_roundtrip(draws: int = 100, tol: float = 1e-12, seed: int = 99) -> CheckResult:
    """min_penalty is the exact inverse of compromise_ceiling."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        alpha = float(rng.uniform(0.01, 0.5))
        window = int(rng.integers(5, 51))
        gain = float(rng.uniform(0.0, 5.0))
        target = float(rng.uniform(0.05, 2.0))
        penalty = iv.min_penalty(gain, alpha, window, target)
        back = iv.compromise_ceiling(alpha, window, penalty, gain)
        worst = max(worst, abs(back - target))
    return CheckResult(
        "penalty-roundtrip",
        worst <= tol,
        {"draws": draws, "worst_error": worst, "tolerance": tol},
    )


# ---------------------------------------------------------------------------
# byte accounting against the declared budget


@_timed
def check_byte_accounting(steps: int = 10_000, agents: int = 100) -> CheckResult:
    """Live per-step bytes never exceed the formula budget, and the formula
    itself reproduces the reference constant."""
    formula = account_resources(100, 8, 8)
    if formula.bytes_per_step != 6048:
        return CheckResult(
            "byte-accounting",
            False,
            {"reason": "formula mismatch", "bytes_per_step": formula.bytes_per_step},
        )
    config = ExperimentConfig()
    config.world.num_agents = agents
    config.world.graph_k = 8
    config.world.max_degree = 8
    config.episode_steps = steps
    config.detection.warmup_steps = min(500, steps // 2)
    probe: dict = {}
    run_episode(config, 12345, probe=probe)
    live = probe["live"]
    bound = 40 * agents + 32 * config.world.max_degree * 8
    over = sum(1 for b in live.bytes_history if b > bound)
    return CheckResult(
        "byte-accounting",
        over == 0,
        {
            "steps": steps,
            "agents": agents,
            "bound": bound,
            "max_bytes_per_step": live.max_bytes_per_step,
            "mean_bytes_per_step": live.mean_bytes_per_step,
            "steps_over_bound": over,
            "formula_bytes_per_step": formula.bytes_per_step,
        },
    )


# ---------------------------------------------------------------------------
# alert-budget regret under a chronically firing norm


@_timed
def check_alert_regret(norms: int = 3, steps: int = 10_000, budget: float = 0.05) -> CheckResult:
    """Admitted alerts stay within budget*T plus the regret allowance even
    when one norm fires every step."""
    ids = [f"norm{i}" for i in range(norms)]
    allocator = BudgetAllocator(ids, global_budget=budget, planned_steps=steps)
    weights = []
    for _ in range(steps):
        allocator.observe([ids[0]])
        weights.append(float(allocator.weights[0]))
    limit = budget * steps + 2.0 * math.sqrt(steps * math.log(norms))
    monotone = all(b < a for a, b in zip(weights[:1000], weights[1:1001]))
    return CheckResult(
        "alert-regret",
        allocator.admitted_total <= limit and monotone,
        {
            "steps": steps,
            "admitted": allocator.admitted_total,
            "limit": limit,
            "weight_strictly_decreasing": monotone,
        },
    )


# ---------------------------------------------------------------------------
# cartel scenario: full stack against the untreated baseline


def cartel_config(
    agents: int = 12,
    cartel_size: int = 4,
    cartel_start: int = 150,
    steps: int = 800,
    penalty_factor: float = 30.0,
    baseline: str = "aaf",
) -> ExperimentConfig:
    config = ExperimentConfig()
    config.world.num_agents = agents
    config.world.graph_k = 4
    config.world.penalty_factor = penalty_factor
    config.world.eps_loss = 0.1
    config.episode_steps = steps
    config.detection.warmup_steps = 100
    config.intervention.k_targets = cartel_size
    config.baseline = baseline
    config.scenario = ScenarioConfig(
        kind="cartel", cartel_size=cartel_size, cartel_start=cartel_start
    )
    return config


@_timed
def check_collusion_mitigation(pairs: int = 20, base_seed: int = 6_000_000) -> CheckResult:
    """Full stack beats the untreated baseline on the cartel scenario in at
    least 90% of paired seeds, and detected cartels lose per-step gain
    after the first intervention."""
    lower = 0
    gain_drops = 0
    detected = 0
    details_ratio = []
    for s in range(pairs):
        seed = base_seed + s
        treated = run_episode(cartel_config(baseline="aaf"), seed)
        untreated = run_episode(cartel_config(baseline="learner_only"), seed)
        details_ratio.append((treated.compromise_ratio, untreated.compromise_ratio))
        if treated.compromise_ratio < untreated.compromise_ratio:
            lower += 1
        issued = sum(treated.interventions.values())
        if issued > 0 and treated.cartel_gain_pre is not None:
            detected += 1
            if (
                treated.cartel_gain_post is not None
                and treated.cartel_gain_post < treated.cartel_gain_pre
            ):
                gain_drops += 1
    frac_lower = lower / pairs
    passed = frac_lower >= 0.9 and detected > 0 and gain_drops == detected
    return CheckResult(
        "collusion-mitigation",
        passed,
        {
            "pairs": pairs,
            "fraction_lower": frac_lower,
            "detected_cases": detected,
            "gain_drops": gain_drops,
            "mean_treated_ratio": float(np.mean([a for a, _ in details_ratio])),
            "mean_untreated_ratio": float(np.mean([b for _, b in details_ratio])),
        },
    )


# ---------------------------------------------------------------------------
# reproducibility of records and grid cardinality


@_timed
def check_reproducibility(
    episode_steps: int = 200,
    warmup_steps: int = 50,
    workdir=None,
    resample: int = 8,
) -> CheckResult:
    """The default grid emits exactly 360 records, interrupted sweeps
    resume without duplicates, and re-running any (config, seed) yields a
    byte-identical record."""
    import tempfile
    from pathlib import Path

    from .grid import DEFAULT_GRID_SPEC, run_grid

    spec = dict(DEFAULT_GRID_SPEC)
    spec["episode_steps"] = episode_steps
    spec["warmup_steps"] = warmup_steps

    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        out = Path(tmp) / "records.jsonl"
        total = run_grid(spec, out, resume=False, jobs=1)
        lines = [ln for ln in out.read_text().splitlines() if ln.strip()]
        cardinality_ok = total == 360 and len(lines) == 360

        import json as _json

        keys = [( _json.loads(ln)["config_hash"], _json.loads(ln)["seed"]) for ln in lines]
        no_dupes = len(set(keys)) == len(keys)

        idx = np.linspace(0, len(lines) - 1, resample).astype(int)
        identical = True
        for i in idx:
            rec = _json.loads(lines[i])
            config = ExperimentConfig.from_dict(rec["config"])
            rerun = run_episode(config, rec["seed"]).to_json_line()
            if rerun != lines[i]:
                identical = False
                break

        # Interrupt-and-resume: truncate, then resume to completion.
        out.write_text("\n".join(lines[:100]) + "\n")
        total_after = run_grid(spec, out, resume=True, jobs=1)
        resumed_lines = [ln for ln in out.read_text().splitlines() if ln.strip()]
        resumed_keys = {( _json.loads(ln)["config_hash"], _json.loads(ln)["seed"]) for ln in resumed_lines}
        resume_ok = total_after == 360 and len(resumed_keys) == 360

    return CheckResult(
        "reproducibility",
        cardinality_ok and no_dupes and identical and resume_ok,
        {
            "records": total,
            "unique_keys": no_dupes,
            "byte_identical_resamples": identical,
            "resume_total": total_after,
        },
    )


# ---------------------------------------------------------------------------
# suite registry


SUITES = {
    "attribution-normalization": check_attribution_normalization,
    "edge-fp-control": check_edge_fp_control,
    "alarm-calibration": check_alarm_calibration,
    "delay-bound": check_delay_bound,
    "bounded-compromise": check_bounded_compromise,
    "penalty-roundtrip": check_penalty_roundtrip,
    "byte-accounting": check_byte_accounting,
    "alert-regret": check_alert_regret,
    "collusion-mitigation": check_collusion_mitigation,
    "reproducibility": check_reproducibility,
}

# Reduced parameters for quick desk runs through the CLI.
QUICK_OVERRIDES = {
    "attribution-normalization": {"episodes": 10},
    "edge-fp-control": {"runs": 2000, "steps": 500},
    "alarm-calibration": {"seeds": 5},
    "delay-bound": {"trials": 100, "warm_steps": 2000},
    "bounded-compromise": {"seeds": 10},
    "byte-accounting": {"steps": 2000, "agents": 20},
    "collusion-mitigation": {"pairs": 5},
    "reproducibility": {"episode_steps": 50, "warmup_steps": 20},
}


def run_suites(names, quick: bool = False) -> list[CheckResult]:
    results = []
    for name in names:
        if name not in SUITES:
            raise KeyError(name)
        kwargs = QUICK_OVERRIDES.get(name, {}) if quick else {}
        results.append(SUITES[name](**kwargs))
    return results
