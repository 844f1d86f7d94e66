"""Command-line entry point.

Subcommands mirror the pipeline stages: ``kg`` (build/stats/ablate),
``instr gen``, ``synth gen``, ``align run``, ``eval run``, and
``backtest run``. Every run writes a manifest next to its outputs; report
paths write delimited files plus rendered figures.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error, with
one machine-parseable JSON error line on stderr.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from bisect import bisect_right
from typing import Dict, List, Optional, Sequence, Tuple

import click

from . import __version__
from .alignment import (
    AlignConfig,
    AlignmentEnv,
    PolicyState,
    RewardConfig,
    THETA_NAMES,
    align as run_align,
    evaluate_policy,
    theta_params,
)
from .config import (
    default_config,
    diffusion_params_from,
    layer_weights_from,
    load_config,
    require_path,
    require_seed,
    write_manifest,
)
from .diffusion import (
    Event,
    aggregate_shocks,
    propagate_diffusion,
    read_events_jsonl,
)
from .errors import ConfigError, DataError, MarketRippleError
from .evaluation import evaluate_events, null_propagator
from .graph import (
    GraphSeries,
    RelationKind,
    ablate_relation,
    build_series,
    read_cpc_profiles,
    read_edge_records,
    snapshot_stats,
    write_snapshot,
)
from .host import ExternalClient, external_propagator
from .instructions import QuestionClass, generate as generate_instructions, write_instructions_jsonl
from .pricing import (
    PricingModel,
    read_factors_csv,
    read_returns_csv,
    residual_panel,
)
from .portfolio import backtest as run_backtest, benchmark_schedules, ripple_schedule
from .synth import SynthConfig, generate as generate_synth, write_dataset


def _echo_error(kind: str, message: str) -> None:
    line = json.dumps({"error": {"kind": kind, "message": message}})
    click.echo(line, err=True)


def _resolve_out(cfg: dict, out: Optional[str]) -> str:
    if out:
        return out
    env = os.environ.get("MARKETRIPPLE_OUT")
    if env:
        return env
    return cfg["output_dir"]


def _write_table(path: str, header: Sequence[str], rows: Sequence[Sequence], fmt: str) -> None:
    if fmt == "jsonl":
        base, _ = os.path.splitext(path)
        with open(base + ".jsonl", "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(dict(zip(header, row)), separators=(",", ":")) + "\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _load_series(cfg: dict, edges: Optional[str], cpc: Optional[str]) -> GraphSeries:
    if edges:
        cfg["paths"]["edges"] = edges
    if cpc:
        cfg["paths"]["cpc"] = cpc
    records = read_edge_records(require_path(cfg, "edges"))
    profiles = None
    if cfg["paths"].get("cpc"):
        profiles = read_cpc_profiles(require_path(cfg, "cpc"))
    return build_series(records, cpc=profiles, layer_weights=layer_weights_from(cfg))


def _print_config_callback(ctx: click.Context, _param, value: bool):
    if value:
        click.echo(json.dumps(default_config(), indent=2, sort_keys=True))
        ctx.exit(0)


@click.group(name="marketripple")
@click.version_option(version=__version__, prog_name="marketripple")
@click.option(
    "--print-config",
    is_flag=True,
    expose_value=False,
    callback=_print_config_callback,
    is_eager=True,
    help="Print the full default configuration document and exit.",
)
def cli() -> None:
    """Event-shock propagation over firm graphs: build, align, evaluate, trade."""


# --- kg ---

@cli.group()
def kg() -> None:
    """Build, inspect, and ablate monthly graph snapshots."""


@kg.command("build")
@click.option("--edges", type=click.Path(), help="edges.csv path (overrides config)")
@click.option("--cpc", type=click.Path(), help="cpc.csv path (overrides config)")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
def kg_build(edges, cpc, config_path, out):
    """Construct snapshots and export one file per month."""
    cfg = load_config(config_path)
    series = _load_series(cfg, edges, cpc)
    out_dir = _resolve_out(cfg, out)
    os.makedirs(out_dir, exist_ok=True)
    for snap in series:
        write_snapshot(snap, os.path.join(out_dir, f"snapshot-{snap.month}.csv"))
    stats = snapshot_stats(series)
    _write_table(
        os.path.join(out_dir, "stats.csv"),
        list(stats.as_dict()),
        [list(stats.as_dict().values())],
        "csv",
    )
    write_manifest(out_dir, "kg build", cfg)
    click.echo(f"built {len(series)} snapshots -> {out_dir}")


@kg.command("stats")
@click.option("--edges", type=click.Path(), help="edges.csv path (overrides config)")
@click.option("--cpc", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), default="csv")
@click.option("--out", type=click.Path(), default=None, help="Write into this directory instead of stdout.")
def kg_stats(edges, cpc, config_path, fmt, out):
    """Snapshot-series statistics in the survey-table shape."""
    cfg = load_config(config_path)
    series = _load_series(cfg, edges, cpc)
    stats = snapshot_stats(series).as_dict()
    if out:
        os.makedirs(out, exist_ok=True)
        _write_table(
            os.path.join(out, "stats.csv"), list(stats), [list(stats.values())], fmt
        )
        write_manifest(out, "kg stats", cfg)
        click.echo(f"stats -> {out}")
    else:
        click.echo(json.dumps(stats, sort_keys=True))


@kg.command("ablate")
@click.option("--edges", type=click.Path(), help="edges.csv path (overrides config)")
@click.option("--cpc", type=click.Path(), default=None)
@click.option(
    "--relation",
    required=True,
    type=click.Choice([k.value for k in RelationKind]),
)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
def kg_ablate(edges, cpc, relation, config_path, out):
    """Export snapshots with one relation layer removed."""
    cfg = load_config(config_path)
    series = _load_series(cfg, edges, cpc)
    kind = RelationKind.from_name(relation)
    out_dir = _resolve_out(cfg, out)
    os.makedirs(out_dir, exist_ok=True)
    for snap in series:
        ablated = ablate_relation(snap, kind)
        write_snapshot(
            ablated, os.path.join(out_dir, f"snapshot-{snap.month}-no_{relation}.csv")
        )
    write_manifest(out_dir, f"kg ablate --relation {relation}", cfg)
    click.echo(f"ablated {relation} across {len(series)} snapshots -> {out_dir}")


# --- instr ---

@cli.group()
def instr() -> None:
    """Instruction-dataset generation."""


@instr.command("gen")
@click.option("--edges", type=click.Path(), help="edges.csv path (overrides config)")
@click.option("--cpc", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option(
    "--classes",
    default="retrieval,factual_judgment,factual_question",
    help="Comma-separated question classes to emit.",
)
@click.option("--out", type=click.Path(), default=None)
def instr_gen(edges, cpc, config_path, seed, classes, out):
    """Generate the line-delimited instruction dataset from all snapshots."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    use_seed = cfg.get("seed") or 0
    try:
        enabled = [QuestionClass(c.strip()) for c in classes.split(",") if c.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad question class: {exc}") from None
    series = _load_series(cfg, edges, cpc)
    out_dir = _resolve_out(cfg, out)
    os.makedirs(out_dir, exist_ok=True)
    pairs = []
    for snap in series:
        pairs.extend(generate_instructions(snap, classes=enabled, seed=use_seed))
    path = os.path.join(out_dir, "instructions.jsonl")
    write_instructions_jsonl(pairs, path)
    write_manifest(out_dir, "instr gen", cfg)
    click.echo(f"{len(pairs)} instruction pairs -> {path}")


# --- synth ---

@cli.group()
def synth() -> None:
    """Synthetic markets with known ground truth."""


@synth.command("gen")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def synth_gen(config_path, seed, out):
    """Generate a full synthetic dataset plus its ground truth."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    use_seed = require_seed(cfg)
    s = cfg["synth"]
    from .diffusion import DiffusionParams

    synth_cfg = SynthConfig(
        firms=s["firms"],
        events=s["events"],
        months=s["months"],
        event_sparsity=s["event_sparsity"],
        firm_sparsity=s["firm_sparsity"],
        beta_low=s["beta_low"],
        beta_high=s["beta_high"],
        market_drift=s["market_drift"],
        market_vol=s["market_vol"],
        risk_free=s["risk_free"],
        noise_vol=s["noise_vol"],
        impact_scale=s["impact_scale"],
        true_params=DiffusionParams.uniform(
            s["true_decay"], hops=s["true_hops"], seed_scale=s["true_seed_scale"]
        ),
        seed_score=s["seed_score"],
        warmup_months=s["warmup_months"],
        start=s["start"],
        edges_per_layer=s["edges_per_layer"],
        negative_edge_share=s["negative_edge_share"],
        seed=use_seed,
    )
    dataset = generate_synth(synth_cfg)
    out_dir = _resolve_out(cfg, out)
    paths = write_dataset(dataset, out_dir)
    write_manifest(out_dir, "synth gen", cfg)
    click.echo(f"synthetic market ({synth_cfg.firms} firms, {synth_cfg.events} events) -> {out_dir}")
    for p in paths:
        click.echo(f"  {p}")


# --- shared pipeline loading ---

def _load_market(cfg: dict) -> Tuple[GraphSeries, "ReturnPanel", "FactorPanel"]:
    series = _load_series(cfg, None, None)
    returns = read_returns_csv(require_path(cfg, "returns"))
    factors = read_factors_csv(require_path(cfg, "factors"))
    return series, returns, factors


def _model_from(cfg: dict) -> PricingModel:
    try:
        return PricingModel(cfg["model"])
    except ValueError:
        raise ConfigError(f"unknown pricing model {cfg['model']!r}") from None


def _residuals(cfg: dict, returns, factors, model: PricingModel):
    return residual_panel(
        returns,
        factors,
        model=model,
        window=int(cfg["pricing"]["window"]),
        min_obs=int(cfg["pricing"]["min_obs"]),
    )


# --- align ---

@cli.group(name="align")
def align_group() -> None:
    """Reward-aligned tuning of the diffusion propagator."""


@align_group.command("run")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
def align_run(config_path, seed, out):
    """Run the monthly policy-gradient loop; write trace, parameters, figure."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    use_seed = require_seed(cfg)
    series, returns, factors = _load_market(cfg)
    events = read_events_jsonl(require_path(cfg, "events"))
    model = _model_from(cfg)
    residuals = _residuals(cfg, returns, factors, model)

    months = sorted({e.date[:7] for e in events})
    holdout = int(cfg["alignment"]["holdout_months"])
    train_months = months[: len(months) - holdout] if holdout else months
    train_events = [e for e in events if e.date[:7] in train_months]
    env = AlignmentEnv(train_events, series, residuals)

    reward_cfg = RewardConfig(
        lam=float(cfg["reward"]["lambda"]),
        absolute_coverage=bool(cfg["reward"]["absolute_coverage"]),
    )
    state = PolicyState.initial(
        diffusion_params_from(cfg),
        sigma_explore=float(cfg["alignment"]["sigma_explore"]),
        learning_rate=float(cfg["alignment"]["learning_rate"]),
        clip_epsilon=float(cfg["alignment"]["clip_epsilon"]),
        baseline_decay=float(cfg["alignment"]["baseline_decay"]),
    )
    align_cfg = AlignConfig(
        seed=use_seed,
        epochs=int(cfg["alignment"]["epochs"]),
        reward=reward_cfg,
        seed_score=int(cfg["diffusion"]["seed_score"]),
    )
    trace = run_align(env, state, align_cfg)

    out_dir = _resolve_out(cfg, out)
    os.makedirs(out_dir, exist_ok=True)
    trace.write_csv(os.path.join(out_dir, "trace.csv"))
    final = {
        "theta": dict(zip(THETA_NAMES, [float(t) for t in trace.final_theta])),
        "baseline": state.baseline,
        "updates": trace.updates,
        "steps": len(trace.steps),
        "excluded_events": trace.excluded,
        "train_months": train_months,
    }
    if holdout:
        held_events = [e for e in events if e.date[:7] not in train_months]
        held_env = AlignmentEnv(held_events, series, residuals)
        rep = evaluate_policy(held_env, theta_params(trace.final_theta), reward_cfg)
        final["holdout_months"] = months[len(months) - holdout :]
        final["holdout_reward"] = rep.total
    with open(os.path.join(out_dir, "theta.json"), "w", encoding="utf-8") as fh:
        json.dump(final, fh, indent=2, sort_keys=True)
        fh.write("\n")
    from .plots import plot_alignment_trace

    plot_alignment_trace(trace, os.path.join(out_dir, "trace.png"))
    write_manifest(out_dir, "align run", cfg)
    click.echo(
        f"aligned over {len(trace.steps)} steps, {trace.updates} updates -> {out_dir}"
    )


# --- eval ---

@cli.group(name="eval")
def eval_group() -> None:
    """Propagator-constrained evaluation statistics."""


@eval_group.command("run")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option(
    "--propagator",
    default="diffusion",
    help="diffusion | null | external:<command>",
)
@click.option(
    "--ablate",
    "ablate_rel",
    type=click.Choice([k.value for k in RelationKind]),
    default=None,
    help="Drop one relation layer before evaluating.",
)
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), default="csv")
@click.option("--out", type=click.Path(), default=None)
def eval_run(config_path, seed, propagator, ablate_rel, fmt, out):
    """Regression, variance-decomposition, and refusal statistics."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    series, returns, factors = _load_market(cfg)
    events = read_events_jsonl(require_path(cfg, "events"))
    model = _model_from(cfg)
    residuals = _residuals(cfg, returns, factors, model)

    method = propagator
    if ablate_rel:
        kind = RelationKind.from_name(ablate_rel)
        series = GraphSeries([ablate_relation(s, kind) for s in series])
        method = f"{propagator}-no_{ablate_rel}"

    controls_panel = None
    if cfg["evaluation"]["controls"] == "ff5":
        try:
            factors.require(PricingModel.FF5)
            controls_panel = (
                residuals
                if model is PricingModel.FF5
                else _residuals(cfg, returns, factors, PricingModel.FF5)
            )
        except MarketRippleError:
            controls_panel = None

    client = None
    try:
        if propagator == "diffusion":
            params = diffusion_params_from(cfg)
            seed_score = int(cfg["diffusion"]["seed_score"])

            def predict(event, snapshot):
                return propagate_diffusion(snapshot, event, params, seed_score)

        elif propagator == "null":
            predict = null_propagator(
                int(cfg.get("seed") or 0), int(cfg["evaluation"]["null_claims"])
            )
        elif propagator.startswith("external:"):
            command = propagator.split(":", 1)[1]
            if not command.strip():
                raise ConfigError("external propagator needs a command")
            client = ExternalClient(
                command, timeout=float(cfg["evaluation"]["timeout_seconds"])
            )
            predict = external_propagator(
                client, edge_budget=int(cfg["evaluation"]["edge_budget"])
            )
        else:
            raise ConfigError(f"unknown propagator {propagator!r}")

        report = evaluate_events(
            events,
            series,
            residuals,
            predict,
            controls_panel=controls_panel,
            min_cross_section=int(cfg["evaluation"]["min_cross_section"]),
        )
    finally:
        if client is not None:
            client.close()

    out_dir = _resolve_out(cfg, out)
    os.makedirs(out_dir, exist_ok=True)
    reg_rows = []
    if report.pooled:
        r = report.pooled
        reg_rows.append(
            [model.value, method, r.gamma1, r.p_gamma1, r.r2_plain, r.r2_phi, r.n]
        )
    _write_table(
        os.path.join(out_dir, "regression.csv"),
        ["model", "method", "coef", "p", "r2", "r2_phi", "n"],
        reg_rows,
        fmt,
    )
    anova_rows = []
    if report.anova:
        a = report.anova
        anova_rows.append(
            [model.value, method, a.f, a.p, a.eta_squared, a.df_between, a.df_within]
        )
    _write_table(
        os.path.join(out_dir, "anova.csv"),
        ["model", "method", "anova_f", "anova_p", "es", "df_between", "df_within"],
        anova_rows,
        fmt,
    )
    ref_rows = [["total", report.refusals.total], ["rate", report.refusals.rate]]
    for reason, count in report.refusals.by_reason.items():
        ref_rows.append([f"reason:{reason}", count])
    for reason, count in sorted(report.skipped.items()):
        ref_rows.append([f"skipped:{reason}", count])
    _write_table(os.path.join(out_dir, "refusals.csv"), ["key", "value"], ref_rows, fmt)
    if report.pooled is not None and report.pooled_phi is not None:
        from .plots import plot_regression_scatter

        plot_regression_scatter(
            report.pooled_phi,
            report.pooled_y,
            report.pooled.gamma0,
            report.pooled.gamma1,
            os.path.join(out_dir, "regression_scatter.png"),
        )
    write_manifest(out_dir, f"eval run --propagator {propagator}", cfg)
    if report.pooled:
        click.echo(
            f"pooled: coef={report.pooled.gamma1:.4f} p={report.pooled.p_gamma1:.4g} "
            f"r2_phi={report.pooled.r2_phi:.4f} n={report.pooled.n} -> {out_dir}"
        )
    else:
        click.echo(f"no pooled regression (insufficient rows) -> {out_dir}")


# --- backtest ---

@cli.group(name="backtest")
def backtest_group() -> None:
    """Daily long-short and benchmark backtests."""


def _next_trading_day(dates: List[str], date: str) -> Optional[str]:
    pos = bisect_right(dates, date)
    return dates[pos] if pos < len(dates) else None


def _diffusion_shocks(cfg, series, returns, events) -> Dict[str, Dict[str, float]]:
    params = diffusion_params_from(cfg)
    seed_score = int(cfg["diffusion"]["seed_score"])
    shocks: Dict[str, Dict[str, float]] = {}
    for event in sorted(events, key=lambda e: e.id):
        month = event.date[:7]
        if not series.has(month):
            continue
        snapshot = series.get(month)
        if not any(c in snapshot.firms for c in event.company_codes):
            continue
        day = _next_trading_day(returns.dates, event.date)
        if day is None:
            continue
        z = aggregate_shocks(snapshot, propagate_diffusion(snapshot, event, params, seed_score))
        bucket = shocks.setdefault(day, {})
        for firm, value in z.values.items():
            if value != 0.0:
                bucket[firm] = bucket.get(firm, 0.0) + value
    return shocks


def _foresight_shocks(cfg, returns, events) -> Dict[str, Dict[str, float]]:
    path = require_path(cfg, "truth_impacts")
    by_event: Dict[str, Dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != [
            "event_id", "ticker", "shock",
        ]:
            raise DataError(f"{path}: expected header event_id,ticker,shock")
        for row in reader:
            by_event.setdefault(row["event_id"], {})[row["ticker"]] = float(row["shock"])
    shocks: Dict[str, Dict[str, float]] = {}
    for event in events:
        day = _next_trading_day(returns.dates, event.date)
        if day is None or event.id not in by_event:
            continue
        bucket = shocks.setdefault(day, {})
        for firm, value in by_event[event.id].items():
            bucket[firm] = bucket.get(firm, 0.0) + value
    return shocks


@backtest_group.command("run")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option(
    "--shocks",
    "shock_source",
    type=click.Choice(["diffusion", "foresight"]),
    default="diffusion",
    help="Morning predictions: built-in diffusion or true next-day impacts.",
)
@click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), default="csv")
@click.option("--out", type=click.Path(), default=None)
def backtest_run(config_path, shock_source, fmt, out):
    """Run the decile long-short plus the four benchmark allocators."""
    cfg = load_config(config_path)
    returns = read_returns_csv(require_path(cfg, "returns"))
    events = read_events_jsonl(require_path(cfg, "events"))
    if shock_source == "diffusion":
        series = _load_series(cfg, None, None)
        shocks = _diffusion_shocks(cfg, series, returns, events)
    else:
        shocks = _foresight_shocks(cfg, returns, events)

    window = int(cfg["portfolio"]["vol_window"])
    decile = float(cfg["portfolio"]["decile"])
    risk_free = float(cfg["portfolio"]["risk_free"])
    trade_dates = [d for d in returns.dates if d in shocks]
    reports = []
    ripple = ripple_schedule(shocks, returns, trade_dates, decile)
    if ripple:
        reports.append(run_backtest(ripple, returns, strategy="ripple", risk_free=risk_free))
    bench_dates = [d for i, d in enumerate(returns.dates) if i >= window]
    for name, schedule in benchmark_schedules(
        returns, bench_dates, window, float(cfg["portfolio"]["lambda_risk"])
    ).items():
        if schedule:
            reports.append(run_backtest(schedule, returns, strategy=name, risk_free=risk_free))

    out_dir = _resolve_out(cfg, out)
    os.makedirs(out_dir, exist_ok=True)
    _write_table(
        os.path.join(out_dir, "report.csv"),
        ["strategy", "daily_return", "sharpe", "mdd", "win_rate", "sharpe_annualized", "days"],
        [
            [
                r.strategy,
                r.mean_daily,
                r.sharpe,
                r.max_drawdown,
                r.win_rate,
                r.sharpe_annualized,
                len(r.dates),
            ]
            for r in reports
        ],
        fmt,
    )
    equity_rows = []
    for r in reports:
        for date, eq in zip(r.dates, r.equity):
            equity_rows.append([date, r.strategy, eq])
    _write_table(
        os.path.join(out_dir, "equity.csv"), ["date", "strategy", "equity"], equity_rows, fmt
    )
    if reports:
        from .plots import plot_equity_curves

        plot_equity_curves(reports, os.path.join(out_dir, "equity_curves.png"))
    write_manifest(out_dir, f"backtest run --shocks {shock_source}", cfg)
    for r in reports:
        click.echo(
            f"{r.strategy}: daily={r.mean_daily:.5f} sharpe={r.sharpe:.3f} "
            f"mdd={r.max_drawdown:.3f} win={r.win_rate:.3f}"
        )


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="marketripple", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.Abort:
        _echo_error("runtime", "aborted")
        return 3
    except click.exceptions.UsageError as exc:
        _echo_error("usage", exc.format_message())
        return 1
    except ConfigError as exc:
        _echo_error("usage", str(exc))
        return 1
    except DataError as exc:
        _echo_error("data", str(exc))
        return 2
    except MarketRippleError as exc:
        _echo_error("runtime", str(exc))
        return 3
    except Exception as exc:  # anything else is a runtime failure
        _echo_error("runtime", f"{type(exc).__name__}: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
