"""Command line: ``hrtmaddpg {train,eval,plot,compare}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import envs, harness
from .harness import ConfigError, EvalReport, ExperimentConfig
from .marl import CheckpointError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

# flag name -> config key, for flags whose names differ from the key
ALIASES = {"episodes": "train_episodes"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    taken = {"config"}
    for alias, key in ALIASES.items():
        p.add_argument(f"--{alias.replace('_', '-')}", dest=key, default=None, type=_flag_type(key))
        taken.add(key)
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in taken:
            continue
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, type=_flag_type(f.name))


def _flag_type(key: str):
    t = harness.FIELD_TYPES[key]
    return lambda raw: harness._parse_value(key, t, raw)


def _config_from(args, base_text: str | None = None) -> ExperimentConfig:
    values = {}
    if base_text is not None:
        values.update(harness.parse_config_text(base_text))
    if args.config:
        values.update(harness.parse_config_text(Path(args.config).read_text()))
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return ExperimentConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hrtmaddpg", description="MADDPG / RMADDPG / HRTMADDPG on particle-world scenarios")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="run a training job")
    _add_config_flags(t)
    t.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="format of the evaluation report table written next to the run")

    e = sub.add_parser("eval", help="evaluate a checkpoint (random policy when omitted)")
    _add_config_flags(e)
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--force", action="store_true", help="ignore a config-hash mismatch")
    e.add_argument("--format", choices=("csv", "json"), default="json")

    pl = sub.add_parser("plot", help="SVG reward curves")
    pl.add_argument("inputs", nargs="+", help="metrics files or run directories")
    pl.add_argument("--labels", nargs="*", default=None)
    pl.add_argument("--smooth", type=int, default=100)
    pl.add_argument("--out", required=True)

    c = sub.add_parser("compare", help="per-agent mean-return table across runs")
    c.add_argument("runs", nargs="+")
    c.add_argument("--smooth", type=int, default=None, help="train-final window (default: run's smooth)")
    c.add_argument("--format", choices=("text", "csv", "json"), default="text")
    return p


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    cfg = _config_from(args)
    if args.depth is not None and cfg.algo != "hrtmaddpg":
        raise UsageError("--depth requires --algo hrtmaddpg")

    def progress(ep, moving):
        print(f"episode {ep} mean_return {moving:.6f}", flush=True)

    metrics = harness.run_training(cfg, progress=progress)
    out = Path(cfg.out)
    print(f"wrote {out / 'metrics.csv'} ({len(metrics.returns)} episodes) and {out / 'checkpoint.ckpt'}")
    if cfg.eval_episodes > 0:
        report = harness.run_evaluation(cfg, out / "checkpoint.ckpt")
        _write_report(report, out, args.format)
        _print_report(report)
    return EXIT_OK


def _write_report(report: EvalReport, out: Path, fmt: str):
    report.write(out / "eval_report.json")
    if fmt == "csv":
        with open(out / "eval_report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["agent", "mean", "std"])
            for i, (m, s) in enumerate(zip(report.mean, report.std)):
                w.writerow([i, harness.fmt_float(m), harness.fmt_float(s)])


def _print_report(report: EvalReport):
    print(f"{envs.TITLES[report.scenario]} ({report.policy} policy, "
          f"{report.episode_returns.shape[0]} episodes)")
    for i, (m, s) in enumerate(zip(report.mean, report.std)):
        print(f"agent{i + 1}  {m:.6f} ± {s:.6f}")


def cmd_eval(args) -> int:
    base = None
    run_dir = Path(args.out) if args.out else None
    if run_dir is not None and (run_dir / "config.txt").exists():
        base = (run_dir / "config.txt").read_text()
    cfg = _config_from(args, base)
    if args.depth is not None and cfg.algo != "hrtmaddpg":
        raise UsageError("--depth requires --algo hrtmaddpg")
    ckpt = None
    if args.checkpoint is not None:
        ckpt = Path(args.checkpoint)
        if not ckpt.is_file():
            raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    report = harness.run_evaluation(cfg, ckpt, force=args.force)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(report, out, args.format)
    _print_report(report)
    return EXIT_OK


def _metrics_path(p: Path) -> Path:
    if p.is_dir():
        return p / "metrics.csv"
    return p


def render_svg(series: list[np.ndarray], labels: list[str], width: int = 800, height: int = 480) -> str:
    """Standalone SVG line chart. Polylines carry data coordinates
    (episode, value) and are mapped to the canvas by a transform."""
    left, right, top, bottom = 70, 160, 30, 50
    pw, ph = width - left - right, height - top - bottom
    xs_max = max((len(s) for s in series), default=1)
    finite = [v for s in series for v in s]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    x0, x1 = 1.0, float(max(xs_max, 2))
    sx = pw / (x1 - x0)
    sy = -ph / (hi - lo)
    tx = left - x0 * sx
    ty = top + ph - lo * sy
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{left}" y="{height - 15}" font-size="12">episode 1</text>',
        f'<text x="{left + pw}" y="{height - 15}" font-size="12" text-anchor="end">episode {int(x1)}</text>',
        f'<text x="{left - 5}" y="{top + 10}" font-size="12" text-anchor="end">{hi:.3g}</text>',
        f'<text x="{left - 5}" y="{top + ph}" font-size="12" text-anchor="end">{lo:.3g}</text>',
        f'<text x="{left + pw / 2}" y="{height - 15}" font-size="12" text-anchor="middle">episode</text>',
    ]
    for k, (s, label) in enumerate(zip(series, labels)):
        color = colors[k % len(colors)]
        pts = " ".join(f"{i + 1},{repr(float(v))}" for i, v in enumerate(s))
        out.append(f'<polyline class="series" data-label="{escape(label, {chr(34): "&quot;"})}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5" vector-effect="non-scaling-stroke" '
                   f'transform="matrix({sx!r} 0 0 {sy!r} {tx!r} {ty!r})" points="{pts}"/>')
        ly = top + 15 + 18 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{left + pw + 35}" y="{ly + 4}" font-size="12">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args) -> int:
    if args.smooth < 1:
        raise UsageError("--smooth must be >= 1")
    paths = [_metrics_path(Path(p)) for p in args.inputs]
    labels = args.labels or [str(Path(p)) for p in args.inputs]
    if len(labels) != len(paths):
        raise UsageError("need one label per input")
    series = []
    for p in paths:
        try:
            m = harness.read_metrics(p)
        except (OSError, ValueError, KeyError) as exc:
            raise RuntimeError(f"cannot parse metrics {p}: {exc}") from exc
        series.append(harness.trailing_mean(m.mean_return, args.smooth))
    Path(args.out).write_text(render_svg(series, labels))
    print(f"wrote {args.out}")
    return EXIT_OK


def _run_label(cfg: dict) -> str:
    algo = cfg.get("algo", "?")
    if algo == "hrtmaddpg":
        return f"T{cfg.get('depth', '?')}-HRTMADDPG"
    return algo.upper()


def compare_table(run_dirs: list[Path], smooth: int | None = None) -> dict:
    """Per-agent means across runs: train-final (last ``smooth`` episodes of
    metrics.csv) and test (eval_report.json, when present)."""
    rows = []
    scenario = None
    for d in run_dirs:
        d = Path(d)
        cfg = harness.parse_config_text((d / "config.txt").read_text())
        sc = cfg.get("scenario", "coop_nav")
        if scenario is None:
            scenario = sc
        elif sc != scenario:
            raise ValueError(f"runs mix scenarios: {scenario} vs {sc} ({d})")
        m = harness.read_metrics(d / "metrics.csv")
        w = smooth or int(cfg.get("smooth", 100))
        train = m.returns[-w:].mean(axis=0) if len(m.returns) else np.full(m.n_agents, np.nan)
        test = None
        if (d / "eval_report.json").exists():
            test = EvalReport.read(d / "eval_report.json").mean
        rows.append({"run": str(d), "label": _run_label(cfg), "train": train, "test": test})
    return {"scenario": scenario, "title": envs.TITLES[scenario], "rows": rows}


def format_table(table: dict) -> str:
    n = len(table["rows"][0]["train"])
    head = f"{'':<16}" + "".join(f"{'agent' + str(i + 1):>16}" for i in range(n))
    lines = [f"{table['title']:^{16 + 16 * n}}"]
    for phase in ("train", "test"):
        if phase == "test" and all(r["test"] is None for r in table["rows"]):
            continue
        lines.append(f"[{phase}]")
        lines.append(head)
        for r in table["rows"]:
            vals = r[phase]
            cells = "".join(f"{'-':>16}" for _ in range(n)) if vals is None else \
                "".join(f"{v:>16.6f}" for v in vals)
            lines.append(f"{r['label']:<16}{cells}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        raise UsageError("compare needs at least two run directories")
    table = compare_table([Path(r) for r in args.runs], args.smooth)
    if args.format == "text":
        print(format_table(table))
    elif args.format == "csv":
        w = csv.writer(sys.stdout)
        n = len(table["rows"][0]["train"])
        w.writerow(["run", "label", "phase"] + [f"agent{i + 1}" for i in range(n)])
        for r in table["rows"]:
            for phase in ("train", "test"):
                if r[phase] is not None:
                    w.writerow([r["run"], r["label"], phase] + [harness.fmt_float(v) for v in r[phase]])
    else:
        doc = {"scenario": table["scenario"], "rows": [
            {"run": r["run"], "label": r["label"], "train": [float(v) for v in r["train"]],
             "test": None if r["test"] is None else [float(v) for v in r["test"]]} for r in table["rows"]]}
        print(harness._json_dump(doc))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "plot": cmd_plot, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
