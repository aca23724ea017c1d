"""Command-line driver for design, simulation, training and optimization runs.

Every command reads one INI config file (section ``[experiment]``), writes
plain-text artifacts (CSV, JSON) into the output directory and records a
manifest with a config hash and artifact checksums.  All outputs are
deterministic functions of config + seed: floats are written with ``repr``
and JSON with sorted keys, so reruns are byte-identical.

Exit codes: 0 success, 2 configuration or artifact-handling error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from .basis import project_nonneg, reconstruct
from .emulator import (
    global_quantile_error,
    load_emulator,
    predict_quantile,
    save_emulator,
    train_emulator,
)
from .errors import ConfigError, InvalidInputError, QuantemuError
from .qfei import QfeiConfig, direct_optimize, run_qfei
from .quantile import (
    QuantileFunction,
    default_grid,
    empirical_quantile_function,
    l2_distance,
    l2_norm,
    quantile_objective,
    read_quantile_csv,
    write_quantile_csv,
)
from .simulator import (
    DesignSpace,
    InputGrid,
    SyntheticSimulator,
    default_input_grid,
    derive_seed,
)

__all__ = ["ExperimentConfig", "load_config", "main"]

_CONFIG_SECTION = "experiment"

_INT_KEYS = {
    "seed", "n_learning", "n_study", "grid_m", "n_mc", "q",
    "max_iterations", "repetitions", "gp_starts", "qfei_gp_starts", "n_curves",
}
_FLOAT_KEYS = {"p"}
_STR_KEYS = {"out", "transform", "qfei_transform", "kernel", "trend", "lows", "highs"}


@dataclass(frozen=True)
class ExperimentConfig:
    """All experiment parameters; defaults follow the reference protocol."""

    seed: int = 0
    out: str = "runs/experiment"
    n_learning: int = 200
    n_study: int = 2000
    grid_m: int = 199
    n_mc: int = 10_000
    q: int = 5
    transform: str = "log"
    p: float = 0.4
    max_iterations: int = 50
    repetitions: int = 1
    kernel: str = "matern52"
    trend: str = "linear"
    gp_starts: int = 10
    qfei_gp_starts: int = 4
    qfei_transform: str = "identity"
    n_curves: int = 10
    lows: str = "41,41,41,41,11"
    highs: str = "50,50,50,50,20"

    def input_grid(self) -> InputGrid:
        try:
            lows = tuple(int(v) for v in self.lows.split(","))
            highs = tuple(int(v) for v in self.highs.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad grid bounds: {exc}") from exc
        return InputGrid(lows=lows, highs=highs)

    def validate(self) -> None:
        grid = self.input_grid()
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"p={self.p} outside (0, 1)")
        for key in ("n_learning", "n_study", "n_mc", "q", "grid_m", "repetitions"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be nonnegative")
        if self.n_learning > grid.size:
            raise ConfigError(
                f"n_learning={self.n_learning} exceeds the {grid.size}-point grid"
            )
        if self.n_study > grid.size:
            raise ConfigError(
                f"n_study={self.n_study} exceeds the {grid.size}-point grid"
            )
        if self.q > self.n_learning:
            raise ConfigError("q cannot exceed n_learning")

    def sha256(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode("ascii")
        return hashlib.sha256(blob).hexdigest()


def load_config(path, seed=None, out=None) -> ExperimentConfig:
    """Parse the INI config; optional seed/out override the file values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not parser.has_section(_CONFIG_SECTION):
        raise ConfigError(f"{path}: missing [{_CONFIG_SECTION}] section")
    values = {}
    for key, raw in parser.items(_CONFIG_SECTION):
        try:
            if key in _INT_KEYS:
                values[key] = int(raw)
            elif key in _FLOAT_KEYS:
                values[key] = float(raw)
            elif key in _STR_KEYS:
                values[key] = raw
            else:
                raise ConfigError(f"{path}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key!r}: {exc}") from exc
    config = ExperimentConfig(**values)
    if seed is not None:
        config = replace(config, seed=int(seed))
    if out is not None:
        config = replace(config, out=str(out))
    config.validate()
    return config


# -- artifact helpers --------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, payload) -> None:
    _write_text(path, json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _write_design_csv(path: Path, points: np.ndarray) -> None:
    d = points.shape[1]
    lines = [",".join(f"x{j + 1}" for j in range(d))]
    lines += [",".join(str(int(c)) for c in row) for row in points]
    _write_text(path, "\n".join(lines) + "\n")


def read_design_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"design file not found: {path}")
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        d = len(header.strip().split(","))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            try:
                row = [int(v) for v in parts]
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
            if len(row) != d:
                raise InvalidInputError(
                    f"{path}:{lineno}: expected {d} columns, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise InvalidInputError(f"{path}: no design rows")
    return np.asarray(rows, dtype=np.int64)


def _write_draws_csv(path: Path, draws: np.ndarray) -> None:
    lines = ["draw"] + [repr(float(v)) for v in draws]
    _write_text(path, "\n".join(lines) + "\n")


def read_draws_csv(path) -> np.ndarray:
    path = Path(path)
    values = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "draw":
            raise InvalidInputError(f"{path}:1: expected 'draw' header, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                values.append(float(line))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from exc
    if not values:
        raise InvalidInputError(f"{path}: no draws")
    return np.asarray(values)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _update_manifest(out: Path, command: str, config: ExperimentConfig, artifacts) -> None:
    path = out / "manifest.json"
    manifest = {}
    if path.is_file():
        with open(path, "r", encoding="ascii") as fh:
            manifest = json.load(fh)
    manifest[command] = {
        "config_sha256": config.sha256(),
        "seed": config.seed,
        "artifacts": {
            str(p.relative_to(out)): _sha256_file(p) for p in sorted(artifacts)
        },
    }
    _write_json(path, manifest)


def _refuse_overwrite(paths, force: bool) -> None:
    existing = [p for p in paths if Path(p).exists()]
    if existing and not force:
        raise ConfigError(
            f"refusing to overwrite {existing[0]} (pass --force to replace)"
        )


# -- commands ----------------------------------------------------------------


def cmd_design(config: ExperimentConfig, out: Path, force: bool) -> list[Path]:
    chi_path, study_path = out / "chi.csv", out / "study.csv"
    _refuse_overwrite([chi_path, study_path], force)
    space = DesignSpace.sample(
        config.input_grid(), config.n_learning, config.n_study, config.seed
    )
    _write_design_csv(chi_path, space.learning)
    _write_design_csv(study_path, space.study)
    return [chi_path, study_path]


def cmd_simulate(
    config: ExperimentConfig, out: Path, force: bool, resume: bool
) -> list[Path]:
    chi = read_design_csv(out / "chi.csv")
    sim = SyntheticSimulator(config.input_grid())
    grid = default_grid(config.grid_m)
    base = derive_seed(config.seed, 2)

    draw_dir, quant_dir = out / "draws", out / "quantiles"
    index_path = out / "simulate_index.csv"
    if not resume:
        _refuse_overwrite([index_path], force)
    artifacts = [index_path]
    index_lines = ["index," + ",".join(f"x{j + 1}" for j in range(chi.shape[1])) + ",seed,file"]
    for i, x in enumerate(chi):
        draw_path = draw_dir / f"point_{i + 1:04d}.csv"
        quant_path = quant_dir / f"q_{i + 1:04d}.csv"
        seed_i = derive_seed(base, i)
        if resume and draw_path.is_file() and quant_path.is_file():
            read_draws_csv(draw_path)
        else:
            batch = sim.simulate(x, config.n_mc, seed_i)
            _write_draws_csv(draw_path, batch.draws)
            write_quantile_csv(empirical_quantile_function(batch, grid), quant_path)
        index_lines.append(
            ",".join(str(int(c)) for c in x).join(
                [f"{i + 1},", f",{seed_i},draws/point_{i + 1:04d}.csv"]
            )
        )
        artifacts += [draw_path, quant_path]
    _write_text(index_path, "\n".join(index_lines) + "\n")
    return artifacts


def _load_learning(out: Path, config: ExperimentConfig):
    chi = read_design_csv(out / "chi.csv")
    outputs = []
    for i in range(chi.shape[0]):
        path = out / "quantiles" / f"q_{i + 1:04d}.csv"
        if not path.is_file():
            raise ConfigError(f"missing quantile file {path}; run simulate first")
        outputs.append(read_quantile_csv(path))
    return chi, outputs


def cmd_train(config: ExperimentConfig, out: Path, force: bool) -> list[Path]:
    chi, outputs = _load_learning(out, config)
    emulator = train_emulator(
        config.input_grid(),
        chi,
        outputs,
        q=config.q,
        transform=config.transform,
        kernel=config.kernel,
        trend=config.trend,
        n_starts=config.gp_starts,
    )
    bundle = out / "emulator"
    save_emulator(emulator, bundle)
    return sorted(bundle.iterdir())


def cmd_evaluate(config: ExperimentConfig, out: Path, force: bool) -> list[Path]:
    emulator = load_emulator(out / "emulator")
    study = read_design_csv(out / "study.csv")
    sim = SyntheticSimulator(config.input_grid())
    grid = emulator.grid

    rel_l2 = np.empty(study.shape[0])
    true_p = np.empty(study.shape[0])
    pred_p = np.empty(study.shape[0])
    truths = []
    for i, x in enumerate(study):
        truth = sim.true_quantile_function(x, grid)
        truths.append(truth)
        pred = predict_quantile(emulator, x)
        rel_l2[i] = l2_distance(truth, QuantileFunction(grid, pred.values)) / max(
            l2_norm(truth), 1e-300
        )
        true_p[i] = quantile_objective(truth, config.p)
        pred_p[i] = pred.at(config.p)

    d = study.shape[1]
    lines = [",".join(f"x{j + 1}" for j in range(d)) + ",rel_l2,true_p,pred_p"]
    for i, x in enumerate(study):
        coords = ",".join(str(int(c)) for c in x)
        lines.append(
            f"{coords},{repr(float(rel_l2[i]))},"
            f"{repr(float(true_p[i]))},{repr(float(pred_p[i]))}"
        )
    errors_path = out / "evaluate" / "errors.csv"
    _write_text(errors_path, "\n".join(lines) + "\n")

    summary = {
        "p": config.p,
        "median_rel_l2": float(np.median(rel_l2)),
        "err_at_p": global_quantile_error(emulator, study, truths, config.p),
        "err_at_median": global_quantile_error(emulator, study, truths, 0.5),
    }
    summary_path = out / "evaluate" / "summary.json"
    _write_json(summary_path, summary)
    return [errors_path, summary_path]


def _run_one_qfei(config: ExperimentConfig, seed: int, rep_dir: Path) -> dict:
    grid = config.input_grid()
    sim = SyntheticSimulator(grid)
    space = DesignSpace.sample(grid, config.n_learning, config.n_study, seed)
    qconfig = QfeiConfig(
        p=config.p,
        max_iterations=config.max_iterations,
        n_mc=config.n_mc,
        seed=seed,
        transform=config.qfei_transform,
        q=config.q,
        grid_m=config.grid_m,
        kernel=config.kernel,
        trend=config.trend,
        gp_starts=config.qfei_gp_starts,
    )
    report, state = run_qfei(sim, space, qconfig)

    n = space.learning.shape[0]
    initial = train_emulator(
        grid,
        space.learning,
        state.observed[:n],
        q=config.q,
        transform=config.qfei_transform,
        kernel=config.kernel,
        trend=config.trend,
        n_starts=config.qfei_gp_starts,
    )
    direct = direct_optimize(
        initial,
        space.study,
        config.p,
        simulator=sim,
        learning_values=state.observed_quantiles[:n],
    )

    trace_path = rep_dir / "trace.jsonl"
    _write_text(
        trace_path,
        "".join(json.dumps(r.as_dict(), sort_keys=True) + "\n" for r in report.trace),
    )
    _write_json(rep_dir / "summary.json", report.as_dict())
    _write_json(rep_dir / "direct.json", direct.as_dict())
    return {
        "seed": seed,
        "x_star": list(report.x_star),
        "value": report.value,
        "initial_value": report.initial_value,
        "true_value": report.true_value,
        "rank": report.rank,
        "direct_true_at_x_hat": direct.true_at_x_hat,
    }


def cmd_qfei(config: ExperimentConfig, out: Path, force: bool) -> list[Path]:
    qfei_dir = out / "qfei"
    _refuse_overwrite([qfei_dir / "summary.json", qfei_dir / "aggregate.json"], force)
    if config.repetitions == 1:
        _run_one_qfei(config, config.seed, qfei_dir)
        return [qfei_dir / "trace.jsonl", qfei_dir / "summary.json", qfei_dir / "direct.json"]

    rows = []
    artifacts = []
    for r in range(config.repetitions):
        rep_dir = qfei_dir / f"rep_{r + 1:02d}"
        rows.append(_run_one_qfei(config, derive_seed(config.seed, 4, r), rep_dir))
        artifacts += [rep_dir / "trace.jsonl", rep_dir / "summary.json", rep_dir / "direct.json"]

    header = "rep,seed,value,initial_value,true_value,rank,direct_true_at_x_hat"
    lines = [header]
    for r, row in enumerate(rows):
        lines.append(
            f"{r + 1},{row['seed']},{repr(row['value'])},{repr(row['initial_value'])},"
            f"{repr(row['true_value'])},{row['rank']},{repr(row['direct_true_at_x_hat'])}"
        )
    reps_path = qfei_dir / "repetitions.csv"
    _write_text(reps_path, "\n".join(lines) + "\n")

    n = len(rows)
    aggregate = {
        "repetitions": n,
        "top5_rate": sum(1 for r in rows if r["rank"] is not None and r["rank"] <= 5) / n,
        "improved_rate": sum(1 for r in rows if r["value"] >= r["initial_value"]) / n,
        "beats_direct_rate": sum(
            1
            for r in rows
            if r["true_value"] is not None
            and r["direct_true_at_x_hat"] is not None
            and r["true_value"] > r["direct_true_at_x_hat"]
        )
        / n,
    }
    agg_path = qfei_dir / "aggregate.json"
    _write_json(agg_path, aggregate)
    return artifacts + [reps_path, agg_path]


def cmd_figures(config: ExperimentConfig, out: Path, force: bool) -> list[Path]:
    fig_dir = out / "figures"
    sim = SyntheticSimulator(config.input_grid())
    grid = default_grid(config.grid_m)
    artifacts = []

    study = read_design_csv(out / "study.csv")
    n_curves = min(config.n_curves, study.shape[0])
    d = study.shape[1]
    coord_header = ",".join(f"x{j + 1}" for j in range(d))
    lines = [f"curve,{coord_header},p,value"]
    for i in range(n_curves):
        truth = sim.true_quantile_function(study[i], grid)
        coords = ",".join(str(int(c)) for c in study[i])
        for pk, v in zip(grid.points, truth.values):
            lines.append(f"{i + 1},{coords},{repr(float(pk))},{repr(float(v))}")
    curves_path = fig_dir / "fig_quantile_curves.csv"
    _write_text(curves_path, "\n".join(lines) + "\n")
    artifacts.append(curves_path)

    bundle = out / "emulator"
    if bundle.is_dir():
        emulator = load_emulator(bundle)
        chi, outputs = _load_learning(out, config)
        lines = [f"point,{coord_header},p,observed,projected,predicted"]
        for i in range(min(3, chi.shape[0])):
            observed = outputs[i]
            psi, _ = project_nonneg(observed, emulator.basis)
            projected = reconstruct(psi, emulator.basis)
            predicted = predict_quantile(emulator, chi[i])
            coords = ",".join(str(int(c)) for c in chi[i])
            for k, pk in enumerate(grid.points):
                lines.append(
                    f"{i + 1},{coords},{repr(float(pk))},"
                    f"{repr(float(observed.values[k]))},"
                    f"{repr(float(projected.values[k]))},"
                    f"{repr(float(predicted.values[k]))}"
                )
        overlay_path = fig_dir / "fig_projection_overlay.csv"
        _write_text(overlay_path, "\n".join(lines) + "\n")
        artifacts.append(overlay_path)

        lines = ["step,selected_index,residual"]
        for j, (idx, res) in enumerate(
            zip(emulator.basis.selected_indices, emulator.basis.step_residuals)
        ):
            lines.append(f"{j + 1},{idx},{repr(float(res))}")
        basis_path = fig_dir / "table_basis.csv"
        _write_text(basis_path, "\n".join(lines) + "\n")
        artifacts.append(basis_path)

    trace_path = out / "qfei" / "trace.jsonl"
    if trace_path.is_file():
        lines = ["iteration,ei,observed_quantile,incumbent"]
        with open(trace_path, "r", encoding="ascii") as fh:
            for line in fh:
                r = json.loads(line)
                lines.append(
                    f"{r['iteration']},{repr(r['ei'])},"
                    f"{repr(r['observed_quantile'])},{repr(r['incumbent'])}"
                )
        conv_path = fig_dir / "fig_incumbent.csv"
        _write_text(conv_path, "\n".join(lines) + "\n")
        artifacts.append(conv_path)
    return artifacts


_COMMANDS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "qfei": cmd_qfei,
    "figures": cmd_figures,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantemu",
        description="Quantile-function emulation and optimization experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name, help=f"run the {name} step")
        cmd.add_argument("--config", required=True, help="INI experiment file")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
        cmd.add_argument("--out", default=None, help="override output directory")
        cmd.add_argument("--force", action="store_true", help="overwrite artifacts")
        if name == "simulate":
            cmd.add_argument(
                "--resume", action="store_true", help="skip already-simulated points"
            )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed=args.seed, out=args.out)
    except (ConfigError, InvalidInputError) as exc:
        print(f"quantemu: config error: {exc}", file=sys.stderr)
        return 2

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        os.close(fd)
    except FileExistsError:
        print(
            f"quantemu: {out} is locked by another run (remove {lock} if stale)",
            file=sys.stderr,
        )
        return 2

    try:
        if args.command == "simulate":
            artifacts = cmd_simulate(config, out, args.force, args.resume)
        else:
            artifacts = _COMMANDS[args.command](config, out, args.force)
        _update_manifest(out, args.command, config, artifacts)
    except (ConfigError, OSError) as exc:
        print(f"quantemu: {exc}", file=sys.stderr)
        return 2
    except (QuantemuError, np.linalg.LinAlgError) as exc:
        print(f"quantemu: numerical failure: {exc}", file=sys.stderr)
        return 3
    finally:
        lock.unlink(missing_ok=True)
    print(f"quantemu {args.command}: wrote {len(artifacts)} artifacts under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
