"""Command-line entry point and run persistence.

The only module with filesystem side effects. Every subcommand writes all
of its artifacts, including a config snapshot with content hashes, into
the directory given by --out and touches nothing outside it.

Exit codes: 0 success, 2 configuration or input error, 3 simulation
divergence, 4 non-finite training update.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import CorruptCheckpoint, NanGradient, NumericalDivergence, VersionMismatch
from .params import default_params, load_params
from .stim import StimulusCommand, analytic_rms, rms_power, synthesize
from .td3 import AgentParams, TD3Agent

EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_NAN = 4

_WINDOW_FIELDS = ("episode", "step", "r1_raw", "rms", "frequency", "amplitude",
                  "reward", "r1", "r2", "diverged")
_EPISODE_FIELDS = ("index", "seed", "vgi_beta", "episode_return", "n_steps")


# ----------------------------------------------------------------- CSV I/O

def write_windows_csv(path, windows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_WINDOW_FIELDS)
        for w in windows:
            writer.writerow([repr(getattr(w, f)) if isinstance(getattr(w, f), float)
                             else getattr(w, f) for f in _WINDOW_FIELDS])


def read_windows_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(harness.WindowRecord(
                episode=int(row["episode"]), step=int(row["step"]),
                r1_raw=float(row["r1_raw"]), rms=float(row["rms"]),
                frequency=float(row["frequency"]), amplitude=float(row["amplitude"]),
                reward=float(row["reward"]), r1=float(row["r1"]), r2=float(row["r2"]),
                diverged=row["diverged"] == "True",
            ))
    return out


def write_episodes_csv(path, episodes) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_EPISODE_FIELDS)
        for e in episodes:
            writer.writerow([repr(getattr(e, f)) if isinstance(getattr(e, f), float)
                             else getattr(e, f) for f in _EPISODE_FIELDS])


def read_episodes_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(harness.EpisodeRecord(
                index=int(row["index"]), seed=int(row["seed"]),
                vgi_beta=float(row["vgi_beta"]),
                episode_return=float(row["episode_return"]),
                n_steps=int(row["n_steps"]),
            ))
    return out


def write_summary_csv(path, reports) -> None:
    rows = [r.summary_row() for r in reports]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                             for k, v in row.items()})


def write_summary_table(path, reports) -> None:
    """Human-readable table: condition rows, biomarker and power columns."""
    lines = [
        f"{'condition':<12} {'S_Gi PSD':>12} {'V_Gi PSD':>14} {'power':>10} "
        f"{'freq (Hz)':>10} {'amp':>10}",
    ]
    for r in reports:
        lines.append(
            f"{r.condition:<12} {r.sgi_power.mean:>12.2f} {r.vgi_beta.mean:>14.1f} "
            f"{r.rms.mean:>10.2f} {r.frequency.mean:>10.1f} {r.amplitude.mean:>10.1f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_learning_curve_csv(path, result: harness.TrainResult, ma_window: int = 20) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "episode_return", "moving_avg"])
        for i, ret in enumerate(result.returns):
            ma = result.moving_avg[i - ma_window + 1] if i >= ma_window - 1 else ""
            writer.writerow([i, repr(ret), repr(ma) if ma != "" else ""])


# ------------------------------------------------------------- run helpers

def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _prepare_out(args, extra: dict) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = {k: v for k, v in vars(args).items() if k != "func"}
    snapshot.update(extra)
    payload = json.dumps(snapshot, sort_keys=True, default=str)
    snapshot["config_hash"] = hashlib.sha256(payload.encode()).hexdigest()[:16]
    with open(out / "config.json", "w") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return out


def _load_model(args):
    if args.params:
        return load_params(args.params)
    return default_params()


def _maybe_plot_curve(out: Path, result: harness.TrainResult) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        _log("matplotlib not installed, skipping plots")
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(result.returns, lw=0.8, alpha=0.6, label="episode return")
    if result.moving_avg:
        x0 = len(result.returns) - len(result.moving_avg)
        ax.plot(range(x0, len(result.returns)), result.moving_avg, lw=1.6,
                label="moving avg (20)")
    ax.set_xlabel("episode")
    ax.set_ylabel("return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "learning_curve.png", dpi=120)
    plt.close(fig)


def _maybe_plot_sgi(out: Path, sgi_episodes, dt_sample: float) -> None:
    if not sgi_episodes:
        return
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        _log("matplotlib not installed, skipping plots")
        return
    ep, sgi = sgi_episodes[0]
    t = np.arange(1, sgi.size + 1) * dt_sample
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, sgi, lw=0.7)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("mean S_Gi")
    ax.set_title(f"episode {ep}")
    fig.tight_layout()
    fig.savefig(out / "sgi_trace.png", dpi=120)
    plt.close(fig)


# ------------------------------------------------------------- subcommands

def cmd_calibrate(args) -> int:
    model = _load_model(args)
    out = _prepare_out(args, {"model_digest": model.digest()})
    _log(f"calibrating: {args.episodes} episodes per condition, seed {args.seed}")
    calibration = harness.calibrate(model, episodes_each=args.episodes, seed=args.seed)
    calibration.save(out / "calibration.json")
    calibration.norm_spec.save(out / "norm_spec.json")
    _log(f"wrote {out / 'calibration.json'} "
         f"(r1 anchors {calibration.r1_min:.2f} .. {calibration.r1_max:.2f})")
    return 0


def cmd_baseline(args) -> int:
    model = _load_model(args)
    calibration = harness.Calibration.load(args.calibration)
    out = _prepare_out(args, {"model_digest": model.digest(),
                              "norm_spec_id": calibration.provenance})
    trace_sink = open(out / "steps.jsonl", "w") if args.trace else None
    sgi_sink = [] if args.plot else None
    try:
        _log(f"baseline {args.condition}: {args.episodes} episodes, seed {args.seed}")
        report = harness.run_baseline(args.condition, model, calibration,
                                      episodes=args.episodes, seed=args.seed,
                                      trace_sink=trace_sink, sgi_sink=sgi_sink)
    finally:
        if trace_sink:
            trace_sink.close()
    write_windows_csv(out / "windows.csv", report.windows)
    write_episodes_csv(out / "episodes.csv", report.episodes)
    write_summary_csv(out / "summary.csv", [report])
    write_summary_table(out / "summary.txt", [report])
    if args.plot:
        _maybe_plot_sgi(out, sgi_sink, model.dt_sample)
    _log((out / "summary.txt").read_text().rstrip())
    return 0


def cmd_train(args) -> int:
    model = _load_model(args)
    calibration = harness.Calibration.load(args.calibration)
    agent_params = AgentParams(
        batch_size=args.batch_size, warmup_steps=args.warmup,
        exploration_sigma=args.exploration_sigma,
    )
    out = _prepare_out(args, {"model_digest": model.digest(),
                              "norm_spec_id": calibration.provenance})
    seeds = [int(s) for s in args.seeds.split(",")]
    best, results = harness.train_multi_seed(
        model, calibration, agent_params, seeds=seeds, max_steps=args.max_steps,
        progress=_log,
    )
    for res in results:
        write_learning_curve_csv(out / f"learning_curve_seed{res.seed}.csv", res)
    best.agent.save(out / "checkpoint.bin")
    calibration.norm_spec.save(out / "norm_spec.json")
    manifest = {
        "best_seed": best.seed,
        "env_steps": best.env_steps,
        "converged_episode": best.converged_episode,
        "episodes": len(best.returns),
        "final_moving_avg": best.moving_avg[-1] if best.moving_avg else None,
    }
    with open(out / "training.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if args.plot:
        _maybe_plot_curve(out, best)
    _log(f"best seed {best.seed}; checkpoint at {out / 'checkpoint.bin'}")
    return 0


def cmd_evaluate(args) -> int:
    model = _load_model(args)
    calibration = harness.Calibration.load(args.calibration)
    agent = TD3Agent.load(args.checkpoint)
    out = _prepare_out(args, {"model_digest": model.digest(),
                              "norm_spec_id": calibration.provenance})
    trace_sink = open(out / "steps.jsonl", "w") if args.trace else None
    sgi_sink = [] if args.plot else None
    try:
        report = harness.evaluate(agent, model, calibration,
                                  episodes=args.episodes, seed=args.seed,
                                  trace_sink=trace_sink, sgi_sink=sgi_sink)
    finally:
        if trace_sink:
            trace_sink.close()
    write_windows_csv(out / "windows.csv", report.windows)
    write_episodes_csv(out / "episodes.csv", report.episodes)
    write_summary_csv(out / "summary.csv", [report])
    write_summary_table(out / "summary.txt", [report])
    if args.plot:
        _maybe_plot_sgi(out, sgi_sink, model.dt_sample)
    _log((out / "summary.txt").read_text().rstrip())
    return 0


def cmd_export_waveform(args) -> int:
    out = _prepare_out(args, {})
    cmd = StimulusCommand(
        frequency=args.frequency, amplitude=args.amplitude,
        a0=2.0 * args.frequency / 185.0 - 1.0, a1=2.0 * args.amplitude / 5000.0 - 1.0,
    )
    wave = synthesize(cmd, args.duration, args.dt)
    with open(out / "waveform.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ms", "i_dbs"])
        for i, v in enumerate(wave.samples):
            writer.writerow([repr(i * wave.dt), repr(float(v))])
    _log(f"{args.frequency} Hz / {args.amplitude}: rms {rms_power(wave):.2f} "
         f"(analytic {analytic_rms(args.frequency, args.amplitude):.2f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cldbs",
        description="Closed-loop DBS on a basal-ganglia-thalamic network model",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, calibration=True):
        p.add_argument("--params", help="model parameter YAML (default: packaged set)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        if calibration:
            p.add_argument("--calibration", required=True,
                           help="calibration.json from `cldbs calibrate`")

    p = sub.add_parser("calibrate", help="fit feature normalization and reward anchors")
    common(p, calibration=False)
    p.add_argument("--episodes", type=int, default=3,
                   help="stimulus-free episodes per condition")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("baseline", help="run a fixed-policy reference condition")
    common(p)
    p.add_argument("--condition", required=True, choices=harness.BASELINE_CONDITIONS)
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--trace", action="store_true", help="write per-step steps.jsonl")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("train", help="train the stimulation agent")
    common(p)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    p.add_argument("--max-steps", type=int, default=5000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--exploration-sigma", type=float, default=0.1)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-waveform", help="write one pulse train to CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--frequency", type=float, required=True)
    p.add_argument("--amplitude", type=float, required=True)
    p.add_argument("--duration", type=float, default=100.0, help="ms")
    p.add_argument("--dt", type=float, default=0.025, help="ms")
    p.set_defaults(func=cmd_export_waveform)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError, VersionMismatch,
            CorruptCheckpoint) as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        _log(f"simulation diverged: {exc}")
        return EXIT_DIVERGENCE
    except NanGradient as exc:
        _log(f"training aborted: {exc}")
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
