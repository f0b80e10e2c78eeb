"""Command-line interface: experiment subcommands and artifact emission.

Each run writes, under the chosen output directory:

- ``manifest.txt``   the resolved configuration (itself a valid config
                     for the ``solve`` subcommand), plus resolved
                     quantities as comment lines.
- ``trace.csv``      per outer iteration: objective, inner-iteration
                     count, data residual.
- ``alpha.csv``      per coefficient: frame, index, value, variance and
                     variance scaled by its sensitivity.
- per-frame contribution signals (CSV) or images (PGM), plus the
  reconstruction, input data and ground truth.
- SVG figures: reconstruction overlay (1-D), inner-iteration counts,
  coefficient-magnitude histograms per frame in log scale.

Exit codes: 0 success, 1 configuration error, 2 solver parameter error,
3 I/O error; each failure prints a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import fileio, plots, solver
from .fileio import FLOAT_FMT
from .hyperprior import HyperParams, ParameterError
from .solver import StoppingRule, after_fixed, whichever_first

log = logging.getLogger(__name__)

EXPERIMENTS = ("deconv1d", "denoise2d", "restore2d", "natural2d", "dictlearn")
SUBCOMMANDS = ("deconv1d", "denoise2d", "restore2d", "dictlearn")
EMIT_KINDS = ("csv", "pgm", "svg")


class ConfigError(ValueError):
    """Invalid flags or configuration file contents."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run parameters; canonically serializable."""

    experiment: str
    n: int
    m: int
    w: float
    sigma_frac: float
    r1: float
    eta1: float
    r2: float
    eta2: float
    switch_after: int
    theta_rtol: float
    max_outer: int
    seed: int
    out: str
    emit: tuple[str, ...]
    exact_alpha: bool
    nonneg: bool
    local_hybrid: bool
    atoms: str
    digit_index: int
    tau: float

    def canonical_entries(self) -> dict[str, str]:
        entries: dict[str, str] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = FLOAT_FMT % value
            elif isinstance(value, tuple):
                text = ",".join(value)
            else:
                text = str(value)
            entries[f.name] = text
        return entries

    def canonical_text(self) -> str:
        return fileio.dump_config(self.canonical_entries())


_COMMON_DEFAULTS = dict(
    theta_rtol=1e-3,
    max_outer=100,
    seed=0,
    out="runs",
    emit=("csv", "pgm", "svg"),
    exact_alpha=False,
    nonneg=False,
    local_hybrid=False,
    atoms="",
    digit_index=0,
    tau=0.01,
)

# Per-experiment defaults.  Where the source problem family states a
# value (blur widths, noise fractions, 1-D sizes, hyper parameters,
# switch points) the default is that value; the 2-D image sizes default
# to desk scale instead of 200/100 to keep interactive runs quick.
_EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "deconv1d": dict(n=500, m=46, w=0.02, sigma_frac=0.02, r1=1.0, eta1=1e-4, r2=0.5, eta2=1e-3, switch_after=10),
    "denoise2d": dict(n=64, m=0, w=0.0, sigma_frac=0.1, r1=1.0, eta1=1e-3, r2=0.5, eta2=1e-2, switch_after=10),
    "restore2d": dict(n=48, m=0, w=0.006, sigma_frac=0.01, r1=1.0, eta1=1e-4, r2=0.5, eta2=1e-4, switch_after=10),
    "natural2d": dict(n=128, m=0, w=0.0, sigma_frac=0.05, r1=1.0, eta1=1e-4, r2=0.5, eta2=1e-3, switch_after=10),
    "dictlearn": dict(
        n=0, m=0, w=0.0, sigma_frac=0.01, r1=1.0, eta1=1e-4, r2=-1.0, eta2=-2.5,
        switch_after=80, max_outer=160, nonneg=True,
    ),
}

_FIELD_PARSERS = {
    int: lambda v: int(v),
    float: lambda v: float(v),
    str: lambda v: v,
}


def defaults_for(experiment: str) -> RunConfig:
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}"
        )
    merged = dict(_COMMON_DEFAULTS)
    merged.update(_EXPERIMENT_DEFAULTS[experiment])
    return RunConfig(experiment=experiment, **merged)


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def _parse_emit(value: str) -> tuple[str, ...]:
    kinds = tuple(k.strip() for k in value.split(",") if k.strip())
    for k in kinds:
        if k not in EMIT_KINDS:
            raise ConfigError(f"unknown emit kind {k!r}; expected subset of {','.join(EMIT_KINDS)}")
    return kinds


def config_from_mapping(mapping: dict[str, str]) -> RunConfig:
    """Resolve a flat key/value mapping against experiment defaults."""
    if "experiment" not in mapping:
        raise ConfigError("config must set 'experiment'")
    base = defaults_for(mapping["experiment"])
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    updates: dict[str, object] = {}
    for key, raw in mapping.items():
        if key == "experiment":
            continue
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(base, key)
        try:
            if isinstance(current, bool):
                updates[key] = _parse_bool(raw)
            elif isinstance(current, tuple):
                updates[key] = _parse_emit(raw)
            else:
                updates[key] = _FIELD_PARSERS[type(current)](raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    config = dataclasses.replace(base, **updates)
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    if config.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {config.experiment!r}")
    if config.experiment != "dictlearn" and config.n < 4:
        raise ConfigError(f"n = {config.n} is too small")
    if config.experiment == "deconv1d" and not config.n > config.m > 0:
        raise ConfigError(f"deconv1d needs n > m > 0, got n = {config.n}, m = {config.m}")
    if not 0 <= config.sigma_frac < 1:
        raise ConfigError(f"sigma_frac must be in [0, 1), got {config.sigma_frac}")
    if config.max_outer < 1:
        raise ConfigError("max_outer must be >= 1")
    if config.switch_after < 0:
        raise ConfigError("switch_after must be >= 0")
    if config.theta_rtol <= 0:
        raise ConfigError("theta_rtol must be positive")
    if config.tau <= 0:
        raise ConfigError("tau must be positive")


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise ConfigError(message)


def _add_run_flags(sub: argparse.ArgumentParser, experiment: str) -> None:
    d = defaults_for(experiment)
    sub.add_argument("--n", type=int, default=d.n, help=f"problem size (default {d.n})")
    if experiment == "deconv1d":
        sub.add_argument("--m", type=int, default=d.m, help=f"observation count (default {d.m})")
        sub.add_argument("--w", type=float, default=d.w, help=f"blur width (default {d.w})")
    if experiment == "restore2d":
        sub.add_argument("--w", type=float, default=d.w, help=f"blur width (default {d.w})")
    sub.add_argument(
        "--sigma-frac", type=float, default=d.sigma_frac, dest="sigma_frac",
        help=f"noise std as a fraction of the clean peak (default {d.sigma_frac})",
    )
    sub.add_argument("--r1", type=float, default=d.r1, help=f"first-regime r (default {d.r1})")
    sub.add_argument("--eta1", type=float, default=d.eta1, help=f"first-regime eta (default {d.eta1})")
    sub.add_argument("--r2", type=float, default=d.r2, help=f"second-regime r (default {d.r2})")
    sub.add_argument("--eta2", type=float, default=d.eta2, help=f"second-regime eta (default {d.eta2})")
    sub.add_argument(
        "--switch-after", type=int, default=d.switch_after, dest="switch_after",
        help=f"outer iterations before the hyperprior handoff (default {d.switch_after})",
    )
    sub.add_argument(
        "--theta-rtol", type=float, default=d.theta_rtol, dest="theta_rtol",
        help=f"relative variance-change stopping tolerance (default {d.theta_rtol})",
    )
    sub.add_argument(
        "--max-outer", type=int, default=d.max_outer, dest="max_outer",
        help=f"outer iteration cap (default {d.max_outer})",
    )
    sub.add_argument("--seed", type=int, default=d.seed, help="random seed (default 0)")
    sub.add_argument("--out", type=str, default=d.out, help=f"output directory (default {d.out!r})")
    sub.add_argument(
        "--emit", type=str, default=",".join(d.emit),
        help="comma-separated artifact kinds from csv,pgm,svg (default all)",
    )
    sub.add_argument("--exact-alpha", action="store_true", default=d.exact_alpha, dest="exact_alpha",
                     help="solve each coefficient update to high accuracy (slow)")
    sub.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=d.nonneg,
                     help="clamp coefficients to the positive cone after each update")
    sub.add_argument("--local-hybrid", action="store_true", default=d.local_hybrid, dest="local_hybrid",
                     help="switch per component at the convexity threshold instead of globally")
    if experiment == "dictlearn":
        sub.add_argument("--atoms", type=str, default=d.atoms,
                         help="atom matrix file (3-line header); default: bundled synthetic digits")
        sub.add_argument("--digit-index", type=int, default=d.digit_index, dest="digit_index",
                         help="which test digit (synthetic) or atom (file mode) to classify")
        sub.add_argument("--tau", type=float, default=d.tau,
                         help=f"vote threshold on |coefficient| (default {d.tau})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparse-ias", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        _add_run_flags(subs.add_parser(name, help=f"run the {name} experiment"), name)
    solve = subs.add_parser("solve", help="run from a flat key = value config file")
    solve.add_argument("config_file", type=str)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base = defaults_for(args.command)
    updates = {}
    for f in dataclasses.fields(RunConfig):
        if hasattr(args, f.name) and getattr(args, f.name) is not None:
            value = getattr(args, f.name)
            updates[f.name] = _parse_emit(value) if f.name == "emit" else value
    updates.pop("experiment", None)
    config = dataclasses.replace(base, **updates)
    _validate(config)
    return config


# ---------------------------------------------------------------------------
# running


def _build_problem(config: RunConfig):
    extras: dict[str, str] = {}
    if config.experiment == "deconv1d":
        problem = ex.make_deconv1d(config.n, config.m, config.w, config.sigma_frac, config.seed)
        extras["n_dense"] = "1253"
    elif config.experiment == "denoise2d":
        problem = ex.make_denoise2d(config.n, config.sigma_frac, config.seed)
    elif config.experiment == "restore2d":
        problem = ex.make_restore2d(config.n, config.w, config.sigma_frac, config.seed)
    elif config.experiment == "natural2d":
        problem = ex.make_natural2d(config.n, config.sigma_frac, config.seed)
    else:
        if config.atoms:
            atoms, labels = fileio.read_atoms(config.atoms)
            if labels is None:
                raise ConfigError(f"atom file {config.atoms!r} carries no labels")
            idx = config.digit_index
            if not 0 <= idx < atoms.shape[1]:
                raise ConfigError(f"digit index {idx} out of range for {atoms.shape[1]} atoms")
            digit = atoms[:, idx]
            atoms = np.delete(atoms, idx, axis=1)
            labels = np.delete(labels, idx)
        else:
            atoms, labels = ex.synthetic_digit_dictionary(seed=config.seed)
            digits, _ = ex.synthetic_test_digits(
                config.digit_index + 1, seed=config.seed, dictionary_seed=config.seed
            )
            digit = digits[:, config.digit_index]
        problem = ex.make_dictlearn(atoms, labels, digit, sigma=config.sigma_frac)
        extras["atom_count"] = str(atoms.shape[1])
    extras["sigma"] = FLOAT_FMT % problem.noise_std
    extras["coefficients"] = str(problem.dictionary.cols)
    return problem, extras


def _run_solver(config: RunConfig, problem) -> solver.SolveReport:
    scale = ex.default_scales(problem)
    if config.experiment == "dictlearn":
        switch = whichever_first(config.switch_after, config.theta_rtol)
    else:
        switch = after_fixed(config.switch_after)
    params1 = HyperParams.from_eta(config.r1, config.eta1, scale)
    stop = StoppingRule(config.max_outer, config.theta_rtol, switch)
    beta2 = (config.eta2 + 1.5) / config.r2
    driver = solver.hybrid_local if config.local_hybrid else solver.hybrid_global
    return driver(
        problem,
        params1,
        config.r2,
        beta2,
        stop,
        nonneg_projection=config.nonneg,
        exact_alpha=config.exact_alpha,
    )


def _emit_artifacts(config: RunConfig, problem, report: solver.SolveReport, out: Path, extras: dict[str, str]) -> None:
    state = report.final_state
    alpha, theta = state.alpha, state.theta
    dictionary = problem.dictionary
    scaled = theta / state.active_scales()
    frames = ex.frame_report(alpha, dictionary)
    recon = sum(f.contribution for f in frames)

    extras["switch_iteration"] = str(report.switch_iteration)
    extras["stop_reason"] = report.stop_reason
    extras["outer_iterations"] = str(report.outer_iterations)

    result = None
    if config.experiment == "dictlearn":
        result = ex.classify_majority(alpha, problem.labels, tau=config.tau, sigma_used=problem.noise_std)
        extras["predicted_label"] = str(result.predicted_label)
        extras["active_atoms"] = str(result.support_size)
        if result.tie:
            extras["vote_tie"] = "true"

    manifest = config.canonical_text() + "".join(f"# {k} = {v}\n" for k, v in extras.items())
    fileio.atomic_write_text(out / "manifest.txt", manifest)

    if "csv" in config.emit:
        iters = np.arange(1, report.outer_iterations + 1)
        fileio.write_csv(
            out / "trace.csv",
            ["outer_iter", "objective", "cgls_count", "residual"],
            [iters, np.array(report.objective_trace), np.array(report.cgls_counts), np.array(report.data_residual)],
        )
        frame_names = np.concatenate(
            [np.repeat(name, m.cols) for name, m in dictionary.subframes]
        )
        frame_index = np.concatenate([np.arange(m.cols) for _, m in dictionary.subframes])
        fileio.write_csv(
            out / "alpha.csv",
            ["frame", "index", "value", "theta", "theta_scaled"],
            [frame_names, frame_index, alpha, theta, scaled],
        )
        if problem.image_shape is None and config.experiment != "dictlearn":
            grid = problem.grid
            fileio.write_csv(out / "recon.csv", ["t", "truth", "recon"], [grid, problem.truth, recon])
            for i, f in enumerate(frames):
                fileio.write_csv(out / f"contribution_{i}_{f.name}.csv", ["t", "value"], [grid, f.contribution])
        if result is not None:
            fileio.write_csv(
                out / "votes.csv",
                ["label", "count"],
                [np.arange(10), result.vote_histogram],
            )

    if "pgm" in config.emit:
        if problem.image_shape is not None:
            n = problem.image_shape[0]
            for name, vec in (
                ("truth", problem.truth),
                ("data", problem.data),
                ("recon", recon),
            ):
                fileio.write_pgm(out / f"{name}.pgm", np.clip(ex.unstack(vec, n), 0, 1))
            for i, f in enumerate(frames):
                img = ex.unstack(f.contribution, n)
                peak = np.abs(img).max()
                fileio.write_pgm(out / f"contribution_{i}_{f.name}.pgm", np.clip(np.abs(img) / peak if peak > 0 else img, 0, 1))
        elif config.experiment == "dictlearn":
            side = int(round(np.sqrt(len(problem.truth))))
            if side * side == len(problem.truth):
                fileio.write_pgm(out / "digit.pgm", np.clip(ex.unstack(problem.truth, side), 0, 1))
                fileio.write_pgm(out / "synthesis.pgm", np.clip(ex.unstack(recon, side), 0, 1))

    if "svg" in config.emit:
        plots.emit_plot(np.array(report.cgls_counts), "stem", out / "cgls.svg",
                        title="inner iterations per outer step", xlabel="outer iteration")
        slices = dictionary.slices()
        plots.emit_plot(
            [np.abs(alpha[s]) for s in slices], "histogram-log", out / "alpha_hist.svg",
            title="coefficient magnitudes", labels=list(dictionary.names),
        )
        for i, (name, s) in enumerate(zip(dictionary.names, slices)):
            plots.emit_plot(scaled[s], "line", out / f"theta_scaled_{i}_{name}.svg",
                            title=f"scaled variances: {name}")
        if problem.image_shape is None and config.experiment != "dictlearn":
            plots.signal_overlay(
                out / "recon.svg",
                {"truth": problem.truth, "reconstruction": recon},
                x=problem.grid,
                title="reconstruction",
            )
        if result is not None:
            plots.emit_plot(np.abs(alpha), "stem", out / "alpha_stem.svg",
                            title="coefficient magnitudes", xlabel="atom")


def run(config: RunConfig) -> int:
    out = Path(config.out)
    if not out.exists():
        if not out.parent.is_dir():
            raise OSError(f"output directory {out} cannot be created: {out.parent} does not exist")
        out.mkdir()
    elif not out.is_dir():
        raise OSError(f"output path {out} exists and is not a directory")

    problem, extras = _build_problem(config)
    report = _run_solver(config, problem)
    _emit_artifacts(config, problem, report, out, extras)
    log.info("wrote artifacts to %s", out)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.command == "solve":
            try:
                text = Path(args.config_file).read_text()
            except OSError as exc:
                print(f"sparse-ias: I/O error: {exc}", file=sys.stderr)
                return 3
            try:
                config = config_from_mapping(fileio.parse_config(text))
            except (ConfigError, ValueError) as exc:
                print(f"sparse-ias: config error: {exc}", file=sys.stderr)
                return 1
        else:
            config = config_from_args(args)
        return run(config)
    except ConfigError as exc:
        print(f"sparse-ias: config error: {exc}", file=sys.stderr)
        return 1
    except ParameterError as exc:
        print(f"sparse-ias: parameter error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sparse-ias: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
