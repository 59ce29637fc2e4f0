"""Experiment runner: simulate, detect, analyze, sweep, markov, couple-check,
and one-command reproduction of the acceptance checks.

Configuration is a flat JSON document; every flag can also be given on the
command line (flags win).  Outputs are CSV or JSON-lines with stable schemas:

* simulate:   seed,strategy,alpha,beta,reward,pair_rate,pairs_won_fraction,
              solo_pairs_won_fraction,truncation_eps
* detect:     test,statistic,df,p_value,verdict
* markov:     kind,lead,probability  plus a reward summary line
* sweep:      the grid columns plus the requested formula value
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import analysis, detect, markov
from .engine import GameParams, couple_check, run_game
from .errors import ForksimError, ParameterError
from .model import StateSequence, view_from_csv, view_from_jsonl, height_states, view_to_csv, view_to_jsonl
from .strategies import STRATEGY_NAMES

EXIT_OK = 0
EXIT_CRITERION_FAILED = 1
EXIT_BAD_CONFIG = 2


@dataclass
class ExperimentConfig:
    """Complete, serializable description of one experiment."""

    kind: str = "simulate"
    strategy: str = "honest"
    alpha: Optional[float] = 0.3
    latency: float = 0.0
    alpha_prime: Optional[float] = None
    beta_prime: Optional[float] = None
    beta_target: Optional[float] = None
    beta_margin: Optional[float] = None
    lead_cap: int = 64
    tiebreak: str = "against-attacker"
    gamma: Optional[float] = None
    horizon_heights: int = 100_000
    num_seeds: int = 1
    base_seed: int = 1
    significance: float = 0.05
    markov_lead_cap: int = 100
    tol: float = 1e-12
    out: Optional[str] = None
    format: str = "csv"
    workers: int = 0
    hashrates: list = field(default_factory=list)

    def game_params(self, seed: int) -> GameParams:
        tb = self.gamma if self.gamma is not None else self.tiebreak
        return GameParams(alpha=self.alpha, latency=self.latency,
                          alpha_prime=self.alpha_prime, beta_prime=self.beta_prime,
                          horizon_heights=self.horizon_heights, seed=seed,
                          tiebreak=tb)

    def strategy_kwargs(self) -> dict:
        kw: dict = {}
        if self.strategy.startswith("usm"):
            if self.beta_target is not None:
                kw["beta"] = self.beta_target
            if self.beta_margin is not None:
                kw["beta_margin"] = self.beta_margin
            if self.strategy == "usm_general":
                kw["lead_cap"] = self.lead_cap
        return kw


def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    data = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ParameterError(f"bad config: {exc}") from exc


def _emit(rows: list[dict], fmt: str, out: Optional[str]) -> None:
    if not rows:
        return
    if fmt == "jsonl":
        text = "\n".join(json.dumps(r) for r in rows) + "\n"
    else:
        keys = list(rows[0].keys())
        import io
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
        text = buf.getvalue()
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _one_run(args) -> dict:
    cfg_dict, seed = args
    cfg = ExperimentConfig(**cfg_dict)
    res = run_game(cfg.game_params(seed), cfg.strategy, **cfg.strategy_kwargs())
    return res.summary()


def run_seeds(cfg: ExperimentConfig) -> list[dict]:
    seeds = [cfg.base_seed + i for i in range(cfg.num_seeds)]
    jobs = [(asdict(cfg), s) for s in seeds]
    workers = cfg.workers or min(len(seeds), os.cpu_count() or 1)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_one_run, jobs))
    else:
        rows = [_one_run(j) for j in jobs]
    return rows


def cmd_simulate(cfg: ExperimentConfig) -> int:
    rows = run_seeds(cfg)
    _emit(rows, cfg.format, cfg.out)
    rew = np.array([r["reward"] for r in rows])
    pr = np.array([r["pair_rate"] for r in rows])
    print(f"# {cfg.strategy}: seeds={cfg.num_seeds} reward={rew.mean():.6f}"
          f"+-{rew.std(ddof=1) / math.sqrt(len(rew)) if len(rew) > 1 else 0.0:.6f}"
          f" pair_rate={pr.mean():.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_detect(cfg: ExperimentConfig, input_path: str) -> int:
    with open(input_path) as fh:
        text = fh.read()
    if input_path.endswith(".jsonl"):
        first = text.lstrip().splitlines()[0] if text.strip() else ""
        if first.startswith("{"):
            view = view_from_jsonl(text)
            seq = height_states(view, view.max_height())
        else:
            raise ParameterError("unrecognized jsonl payload")
    elif "creator" in text.splitlines()[0]:
        view = view_from_csv(text)
        seq = height_states(view, view.max_height())
    else:
        vals = [int(x) for line in text.splitlines()[1:] if line.strip()
                for x in [line.split(",")[-1]]]
        seq = StateSequence.from_iterable(vals)
    rep = detect.battery(seq, significance=cfg.significance)
    rows = rep.rows()
    rows.append({"test": "beta_hat", "statistic": rep.beta_hat, "df": 0,
                 "p_value": float("nan"), "verdict": f"[{rep.beta_ci[0]:.6f},{rep.beta_ci[1]:.6f}]"})
    rows.append({"test": "overall", "statistic": float("nan"), "df": 0,
                 "p_value": float("nan"), "verdict": rep.verdict})
    _emit(rows, cfg.format, cfg.out)
    return EXIT_OK


def cmd_markov(cfg: ExperimentConfig) -> int:
    if cfg.beta_target is None:
        raise ParameterError("markov needs beta_target")
    gamma = cfg.gamma if cfg.gamma is not None else (
        1.0 if cfg.tiebreak == "favor-attacker" else 0.0)
    chain = markov.build_chain(cfg.alpha, cfg.beta_target, gamma, cfg.markov_lead_cap)
    dist = markov.stationary_distribution(chain, cfg.tol)
    rew = markov.chain_reward(chain, dist)
    rows = [{"kind": st.label(), "lead": st.lead, "probability": dist[i]}
            for i, st in enumerate(chain.states)]
    _emit(rows, cfg.format, cfg.out)
    print(f"# rewards block_ratio={rew.block_ratio:.12f} "
          f"pair_counting={rew.pair_counting:.12f} solo_pair={rew.solo_pair:.12f} "
          f"tail_mass={rew.tail_mass:.3e}", file=sys.stderr)
    return EXIT_OK


_FORMULAS = {
    "warmup_reward": lambda a: analysis.warmup_reward(a["alpha"], a["beta"]),
    "main_threshold": lambda a: analysis.main_threshold(a["beta"]),
    "alpha_star": lambda a: analysis.alpha_star(),
    "sm_threshold": lambda a: analysis.sm_threshold(a["gamma"]),
    "honest_reward_general": lambda a: analysis.honest_reward_general(a["alpha"], a["beta_prime"]),
    "honest_chain_share": lambda a: analysis.honest_chain_share(a["alpha"], a["beta_prime"]),
    "general_condition": lambda a: analysis.general_condition(a["alpha"], a["beta_prime"]),
    "general_condition_vs_honest": lambda a: analysis.general_condition_vs_honest(a["alpha"], a["beta_prime"]),
    "solo_pair_lower_bound": lambda a: analysis.solo_pair_lower_bound(a["alpha"], a["beta"]),
    "pairs_won_fraction": lambda a: analysis.pairs_won_fraction(a["w"], a["beta"]),
}


def cmd_analyze(formula: str, kwargs: dict) -> int:
    if formula not in _FORMULAS:
        raise ParameterError(f"unknown formula {formula!r}; "
                             f"choose from {sorted(_FORMULAS)}")
    print(_FORMULAS[formula](kwargs))
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, formula: str, grid: dict) -> int:
    if formula not in _FORMULAS:
        raise ParameterError(f"unknown formula {formula!r}")
    names = list(grid.keys())
    rows = []

    def rec(i: int, point: dict) -> None:
        if i == len(names):
            args = dict(point)
            try:
                val = _FORMULAS[formula](args)
                rows.append({**point, formula: val,
                             "sign": int(np.sign(val))})
            except ForksimError as exc:
                rows.append({**point, formula: float("nan"), "sign": 0})
            return
        for v in grid[names[i]]:
            rec(i + 1, {**point, names[i]: v})

    rec(0, {})
    _emit(rows, cfg.format, cfg.out)
    return EXIT_OK


def cmd_couple(cfg: ExperimentConfig) -> int:
    if not cfg.hashrates:
        raise ParameterError("couple-check needs hashrates")
    seeds = [cfg.base_seed + i for i in range(cfg.num_seeds)]
    rep = couple_check(cfg.hashrates, cfg.latency, cfg.strategy, seeds,
                       horizon_heights=cfg.horizon_heights, tiebreak=cfg.tiebreak)
    print(json.dumps({"seeds": rep.seeds, "rewards_equal": rep.rewards_equal,
                      "views_isomorphic": rep.views_isomorphic,
                      "first_divergence": rep.first_divergence, "ok": rep.ok}))
    return EXIT_OK if rep.ok else EXIT_CRITERION_FAILED


def cmd_repro(criterion: str, fast: bool) -> int:
    from . import acceptance
    ok = acceptance.run_criterion(criterion, fast=fast)
    return EXIT_OK if ok else EXIT_CRITERION_FAILED


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="forksim",
                                 description="Longest-chain withholding simulator and analyzer")
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--dump-defaults", action="store_true",
                    help="print the default config and exit")
    sub = ap.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--strategy", choices=STRATEGY_NAMES)
        p.add_argument("--alpha", type=float)
        p.add_argument("--latency", type=float)
        p.add_argument("--alpha-prime", dest="alpha_prime", type=float)
        p.add_argument("--beta-prime", dest="beta_prime", type=float)
        p.add_argument("--beta-target", dest="beta_target", type=float)
        p.add_argument("--beta-margin", dest="beta_margin", type=float)
        p.add_argument("--lead-cap", dest="lead_cap", type=int)
        p.add_argument("--tiebreak", choices=["favor-attacker", "against-attacker"])
        p.add_argument("--gamma", type=float)
        p.add_argument("--horizon", dest="horizon_heights", type=int)
        p.add_argument("--seed", dest="base_seed", type=int)
        p.add_argument("--seeds", dest="num_seeds", type=int)
        p.add_argument("--significance", type=float)
        p.add_argument("--markov-lead-cap", dest="markov_lead_cap", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--out")
        p.add_argument("--format", choices=["csv", "jsonl"])
        p.add_argument("--workers", type=int)

    common(sub.add_parser("simulate", help="run seeded games, emit summaries"))

    pd = sub.add_parser("detect", help="run the test battery on a view/state CSV")
    common(pd)
    pd.add_argument("input", help="view CSV/JSONL or two-column height,state CSV")

    common(sub.add_parser("markov", help="stationary distribution and exact rewards"))

    pa = sub.add_parser("analyze", help="evaluate one closed-form quantity")
    pa.add_argument("formula")
    pa.add_argument("--alpha", type=float, default=0.4)
    pa.add_argument("--beta", type=float, default=0.0)
    pa.add_argument("--beta-prime", dest="beta_prime", type=float, default=0.0)
    pa.add_argument("--gamma", type=float, default=0.0)
    pa.add_argument("--w", type=float, default=0.0)

    ps = sub.add_parser("sweep", help="evaluate a formula over a grid, emit CSV")
    common(ps)
    ps.add_argument("formula")
    ps.add_argument("--grid", required=True,
                    help='JSON, e.g. {"alpha":[0.36,0.38],"beta_prime":[0,0.1]}')

    pc = sub.add_parser("couple-check", help="n-player vs reduced 2-player run")
    common(pc)
    pc.add_argument("--hashrates", required=True,
                    help="JSON list, e.g. [0.35,0.30,0.20,0.15]")

    pr = sub.add_parser("repro", help="re-run one named acceptance criterion")
    pr.add_argument("criterion")
    pr.add_argument("--fast", action="store_true",
                    help="reduced scale for a quick check")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.dump_defaults:
        print(json.dumps(asdict(ExperimentConfig()), indent=2))
        return EXIT_OK
    if not args.command:
        ap.print_help()
        return EXIT_BAD_CONFIG
    try:
        if args.command == "repro":
            return cmd_repro(args.criterion, args.fast)
        if args.command == "analyze":
            return cmd_analyze(args.formula,
                               {"alpha": args.alpha, "beta": args.beta,
                                "beta_prime": args.beta_prime,
                                "gamma": args.gamma, "w": args.w})
        overrides = {k: v for k, v in vars(args).items()
                     if k not in ("command", "config", "dump_defaults", "input",
                                  "formula", "grid", "hashrates")}
        if args.command == "couple-check":
            overrides["hashrates"] = json.loads(args.hashrates)
            overrides.setdefault("kind", "couple-check")
        cfg = load_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "detect":
            return cmd_detect(cfg, args.input)
        if args.command == "markov":
            return cmd_markov(cfg)
        if args.command == "sweep":
            grid = {k: list(v) for k, v in json.loads(args.grid).items()}
            return cmd_sweep(cfg, args.formula, grid)
        if args.command == "couple-check":
            return cmd_couple(cfg)
        ap.print_help()
        return EXIT_BAD_CONFIG
    except ForksimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
