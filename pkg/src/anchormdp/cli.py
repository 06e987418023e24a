"""Experiment driver: build a domain, run mechanisms, emit report CSVs.

Configuration comes from an optional KEY=VALUE file plus command-line
flags (flags win). Every invocation writes one run directory containing a
config snapshot, ``report.csv``, ``budget_allocation.csv``,
``violations.csv``, and ``summary.txt``. ``report.csv`` is byte-stable for
a fixed config and seed; wall-clock timings go to the summary only.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import evaluation, mechanisms
from .anchors import DEFAULT_ALPHA, DEFAULT_DECAY, GAMMA_DMAX_FRACTION
from .domain import build_domain, generate_uniform_square, load_nodes, write_nodes
from .evaluation import ExperimentReport
from .margins import build_margin_plan

FULL_LP_DEFAULT_CAP = 300

_POLICY_NAMES = {"exp": "exponential", "power": "power-law", "logistic": "logistic"}


@dataclass
class RunConfig:
    dataset: str | None = None
    synthetic: str | None = None  # "COUNT,SIDE_KM"
    k: int = 100
    users: int = 20
    epsilon: float = 5.0
    delta: float = 1e-7
    policy: str = "exp"
    alpha: float = DEFAULT_ALPHA
    decay: float = DEFAULT_DECAY  # the decay-rate flag (km^-1 or exponent)
    gamma: float | None = None  # None -> d_max / 50
    gamma_nn: int = 10
    em_scale: float = 1.0
    grid_rows: int = 8
    grid_cols: int = 8
    mechanisms: str = "em,anchor-exp"
    repeats: int = 1
    seed: int = 0
    out: str = "runs/run"
    workers: int = 1
    full_lp_cap: int = FULL_LP_DEFAULT_CAP
    force_full_lp: bool = False
    metric: str = "euclidean-km"

    def validate(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if not self.mechanism_list():
            raise ValueError("at least one mechanism is required")
        if self.dataset is None and self.synthetic is None:
            raise ValueError("either a dataset path or a synthetic spec is required")
        if self.policy not in _POLICY_NAMES:
            raise ValueError(f"unknown policy {self.policy!r}")

    def mechanism_list(self) -> list[str]:
        out = []
        for name in self.mechanisms.split(","):
            name = name.strip()
            if not name:
                continue
            if name == "anchor":
                name = f"anchor-{self.policy}"
            if name not in mechanisms.MECHANISM_NAMES:
                raise ValueError(f"unknown mechanism {name!r}")
            out.append(name)
        return out


def read_config_file(path) -> dict:
    """Parse a KEY=VALUE config file; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected KEY=VALUE")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def config_from(file_values: dict, flag_values: dict) -> RunConfig:
    cfg = RunConfig()
    casts = {f.name: f.type for f in fields(RunConfig)}
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    for key, value in merged.items():
        if key not in casts:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(value, str):
            value = _cast(key, value)
        cfg = replace(cfg, **{key: value})
    return cfg


def _cast(key: str, value: str):
    if key in ("k", "users", "repeats", "seed", "workers", "gamma_nn", "grid_rows", "grid_cols", "full_lp_cap"):
        return int(value)
    if key in ("epsilon", "delta", "alpha", "decay", "gamma", "em_scale"):
        return float(value)
    if key == "force_full_lp":
        return value.lower() in ("1", "true", "yes")
    return value


def generate_synthetic(count: int, side_km: float, seed: int, path) -> None:
    """Write a uniform-square node CSV loadable by the ingestion path."""
    pts = generate_uniform_square(count, side_km, seed)
    write_nodes(path, pts)


def _load_points(cfg: RunConfig, rng: np.random.Generator):
    if cfg.dataset is not None:
        return load_nodes(cfg.dataset)
    count_s, side_s = cfg.synthetic.split(",")
    return generate_uniform_square(int(count_s), float(side_s), int(rng.integers(2**31)))


def _policy_params(cfg: RunConfig, domain) -> dict:
    gamma = cfg.gamma if cfg.gamma is not None else domain.d_max / GAMMA_DMAX_FRACTION
    return {"alpha": cfg.alpha, "decay": cfg.decay, "gamma": gamma}


@dataclass
class RunResult:
    reports: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def run_experiment(cfg: RunConfig, out_dir=None) -> RunResult:
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config_snapshot(cfg, out / "config.txt")

    root = np.random.SeedSequence(cfg.seed)
    dom_seq, user_seq, repeat_seq = root.spawn(3)
    points = _load_points(cfg, np.random.default_rng(dom_seq))
    domain = build_domain(points, metric=cfg.metric, K=cfg.k, seed=int(dom_seq.generate_state(1)[0]))
    cost = _default_cost(domain)
    users = np.sort(
        np.random.default_rng(user_seq).choice(domain.size, size=min(cfg.users, domain.size), replace=False)
    )
    user_pairs = [(int(a), int(b)) for i, a in enumerate(users) for b in users[i + 1 :]]

    result = RunResult()
    mech_names = cfg.mechanism_list()
    policy_params = _policy_params(cfg, domain)
    for name in mech_names:
        t0 = time.perf_counter()
        try:
            if name == "lp-full" and domain.size > cfg.full_lp_cap and not cfg.force_full_lp:
                raise RuntimeError(
                    f"full LP refused at K={domain.size} (cap {cfg.full_lp_cap}); "
                    "pass --force-full-lp to override"
                )
            mech = mechanisms.build_mechanism(
                name,
                domain,
                cfg.epsilon,
                cfg.delta,
                cost,
                users,
                policy_params=policy_params,
                em_scale=cfg.em_scale,
                grid_dims=(cfg.grid_rows, cfg.grid_cols),
                gamma_nn=cfg.gamma_nn,
            )
            reports = _run_mechanism(cfg, domain, cost, mech, users, user_pairs, repeat_seq)
            result.reports.extend(reports)
        except Exception as exc:  # noqa: BLE001 - isolation is the contract
            result.errors[name] = f"{type(exc).__name__}: {exc}"
        result.timings[name] = time.perf_counter() - t0

    _write_reports(out, cfg, result, user_pairs)
    return result


def _default_cost(domain):
    from .domain import build_cost_model

    return build_cost_model(domain, "direct-distance")


def _run_mechanism(cfg, domain, cost, mech, users, user_pairs, repeat_seq) -> list[ExperimentReport]:
    seeds = repeat_seq.spawn(cfg.repeats)

    def one(repeat: int) -> ExperimentReport:
        rng = np.random.default_rng(seeds[repeat])
        rows = mech.utility_rows(rng)
        loss = evaluation.expected_utility_loss(
            rows[users], domain.priors, cost, records=users
        )
        rate = evaluation.empirical_violation_rate(
            mech, domain, cfg.epsilon, user_pairs, trials=1, rng=rng
        )
        report = ExperimentReport(
            mechanism=mech.name,
            seed=cfg.seed,
            repeat=repeat,
            utility_loss_km=loss,
            violation_rate=rate,
        )
        _attach_structure(report, domain, cfg, mech, user_pairs)
        return report

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(one, range(cfg.repeats)))
    return [one(r) for r in range(cfg.repeats)]


def _attach_structure(report, domain, cfg, mech, user_pairs):
    k = domain.size
    n_out = len(domain.outputs)
    if isinstance(mech, mechanisms.AnchorMechanism) and mech.last_problem is not None:
        stats = evaluation.lp_size_stats(mech.last_problem)
        report.lp_variables = stats.variables
        report.lp_inequalities = stats.inequalities
        report.anchor_fraction = stats.anchor_fraction
        plan = build_margin_plan(
            mech.tables, user_pairs, gamma_nn=cfg.gamma_nn, delta=cfg.delta, plan=mech.plan
        )
        breakdown = evaluation.budget_allocation(
            domain, mech.eps_bar, plan, cfg.epsilon, user_pairs
        )
        report.phase1_share = breakdown.phase1
        report.margin_share = breakdown.margin
        report.phase2_share = breakdown.phase2
    elif mech.name == "lp-full":
        report.lp_variables = k * n_out
        report.lp_inequalities = k * (k - 1) * n_out


def _write_config_snapshot(cfg: RunConfig, path):
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_reports(out: Path, cfg: RunConfig, result: RunResult, user_pairs):
    rows = [ExperimentReport.CSV_HEADER]
    rows += [r.csv_row() for r in result.reports]
    (out / "report.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    vio = ["mechanism,repeat,violation_rate,pairs"]
    vio += [
        f"{r.mechanism},{r.repeat},{r.violation_rate!r},{len(user_pairs)}"
        for r in result.reports
    ]
    (out / "violations.csv").write_text("\n".join(vio) + "\n", encoding="utf-8")

    bud = ["mechanism,repeat,phase1_share,margin_share,phase2_share"]
    bud += [
        f"{r.mechanism},{r.repeat},{r.phase1_share!r},{r.margin_share!r},{r.phase2_share!r}"
        for r in result.reports
        if r.phase1_share is not None
    ]
    (out / "budget_allocation.csv").write_text("\n".join(bud) + "\n", encoding="utf-8")

    (out / "summary.txt").write_text(_summary_text(result), encoding="utf-8")


def _summary_text(result: RunResult) -> str:
    lines = []
    by_mech: dict[str, list[ExperimentReport]] = {}
    for r in result.reports:
        by_mech.setdefault(r.mechanism, []).append(r)
    for name, rs in by_mech.items():
        losses = np.array([r.utility_loss_m for r in rs])
        rates = np.array([r.violation_rate for r in rs], dtype=float)
        lines.append(
            f"{name}: utility_loss_m = {losses.mean():.4f} +/- {1.96 * losses.std(ddof=0):.4f}"
            f" (n={len(rs)}), violation_rate = {rates.mean():.3g}"
        )
    for name, err in result.errors.items():
        lines.append(f"{name}: FAILED ({err})")
    for name, sec in result.timings.items():
        lines.append(f"timing {name}: {sec:.3f} s")
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anchormdp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", help="KEY=VALUE config file; flags override it")
    run.add_argument("--dataset", help="node CSV path (id,lat,lon[,weight])")
    run.add_argument("--synthetic", help="COUNT,SIDE_KM uniform-square generator spec")
    run.add_argument("--k", type=int, help="number of records to sample")
    run.add_argument("--users", type=int, help="number of participating users")
    run.add_argument("--epsilon", type=float, help="privacy budget per km (default 5)")
    run.add_argument("--delta", type=float, help="violation tolerance (default 1e-7)")
    run.add_argument("--policy", choices=sorted(_POLICY_NAMES), help="anchor decay family")
    run.add_argument("--alpha", type=float, help="selection scale (default 0.95)")
    run.add_argument("--lambda", dest="decay", type=float, help="decay rate (default 0.5)")
    run.add_argument("--gamma", type=float, help="clip distance km (default d_max/50)")
    run.add_argument("--cap-gamma-nn", dest="gamma_nn", type=int, help="margin neighborhood size")
    run.add_argument("--em-scale", dest="em_scale", type=float, help="EM exponent scale factor")
    run.add_argument("--grid-rows", dest="grid_rows", type=int)
    run.add_argument("--grid-cols", dest="grid_cols", type=int)
    run.add_argument("--mechanisms", help="comma list: " + ",".join(mechanisms.MECHANISM_NAMES))
    run.add_argument("--repeats", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--workers", type=int, help="parallel repeats")
    run.add_argument("--full-lp-cap", dest="full_lp_cap", type=int)
    run.add_argument("--force-full-lp", dest="force_full_lp", action="store_true", default=None)
    run.add_argument("--metric", choices=["euclidean-km", "haversine-km"])

    synth = sub.add_parser("synth", help="write a synthetic node CSV")
    synth.add_argument("--count", type=int, required=True)
    synth.add_argument("--side", type=float, required=True, help="square side, km")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "synth":
        generate_synthetic(args.count, args.side, args.seed, args.out)
        print(f"wrote {args.count} nodes to {args.out}")
        return 0

    file_values = read_config_file(args.config) if args.config else {}
    flag_values = {
        k: v for k, v in vars(args).items() if k not in ("command", "config")
    }
    try:
        cfg = config_from(file_values, flag_values)
        result = run_experiment(cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, err in result.errors.items():
        print(f"mechanism {name} failed: {err}", file=sys.stderr)
    print(f"wrote {len(result.reports)} report rows to {cfg.out}")
    return 0 if not result.errors else 1


if __name__ == "__main__":
    sys.exit(main())
