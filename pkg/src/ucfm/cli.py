"""Command-line entry point for the four-step analysis.

Each subcommand reads the config, does one step and saves its results in
the output directory, so later steps can resume from there::

    ucfm preprocess --config run.yaml
    ucfm select-dim --config run.yaml
    ucfm fit        --config run.yaml
    ucfm compare    --config run.yaml
    ucfm report     --config run.yaml
    ucfm all        --config run.yaml

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .compare import ConstraintMassError, compare_models
from .config import Config, ConfigError, load_config
from .dimension import rank_screen, select_dimension
from .dsl import DslError, expand, parse_models, render
from .preprocess import factor_upper_bound, kmo_label, prepare
from .report import (
    STEP_KEYS, load_results, matrix_to_json, posterior_summary, render_report, render_section, render_tables,
    reproduced_residual, save_results, summary_to_json,
)
from .sampler import NumericalError, gibbs_run, sample_prior
from .types import DataError, Dataset, PosteriorDraws, parse_spec, render_spec

log = logging.getLogger("ucfm")

OUT_DIR_ENV = "UCFM_OUT_DIR"
DEFAULT_OUT_DIR = "ucfm-out"
STANDARDIZED = "standardized.csv"
DRAWS = "draws.tsv"

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

_STEP_IDS = {"select-dim": 1, "fit": 2, "compare": 3}


class DependencyError(RuntimeError):
    """A step was asked for before the step it builds on."""


def step_seed(master: int, step: str) -> int:
    return int(np.random.SeedSequence([master, _STEP_IDS[step]]).generate_state(1)[0])


class Run:
    def __init__(self, config: Config, out_dir: Path, machine: bool):
        self.config = config
        self.out = out_dir
        self.machine = machine
        self.results = load_results(out_dir)

    def emit(self, key: str, table: str | None = None) -> None:
        if self.machine and table is not None:
            sys.stdout.write(render_tables(self.results)[table])
        else:
            sys.stdout.write(render_section(self.results, key) + "\n")

    def commit(self, key: str, value) -> None:
        """Store one step's results and discard those of later steps, which are now stale."""
        later = STEP_KEYS[STEP_KEYS.index(key) + 1:]
        for k in later:
            self.results.pop(k, None)
        self.results[key] = value
        prov = dict(self.config.provenance(), version=__version__)
        # chain settings belong to the step that ran them, not to the latest invocation
        chain = prov.pop("chain")
        steps = {k: v for k, v in self.results.get("provenance", {}).get("chain_by_step", {}).items()
                 if k in STEP_KEYS[:STEP_KEYS.index(key)]}
        if key in ("dimension", "fit"):
            steps[key] = chain
        prov["chain_by_step"] = steps
        self.results["provenance"] = prov
        save_results(self.results, self.out)

    def need(self, key: str, step: str) -> dict:
        if key not in self.results:
            raise DependencyError(f"'{step}' needs the results of '{_PRODUCER[key]}'; run that step first "
                                  f"(output directory {self.out})")
        return self.results[key]

    def standardized(self, step: str) -> Dataset:
        self.need("preprocess", step)
        path = self.out / STANDARDIZED
        if not path.exists():
            raise DependencyError(f"'{step}' needs {path}; run 'preprocess' first")
        return replace(Dataset.read_csv(path), standardized=True)


_PRODUCER = {"preprocess": "preprocess", "dimension": "select-dim", "fit": "fit", "comparison": "compare"}


def cmd_preprocess(run: Run) -> None:
    cfg = run.config
    try:
        raw = Dataset.read_csv(cfg.data_path)
    except FileNotFoundError:
        raise DataError(f"data file not found: {cfg.data_path}") from None
    z, corr = prepare(raw, cfg.log_columns)
    if not corr.nonsingular:
        raise DataError("the correlation matrix is singular; drop or combine collinear variables")
    run.out.mkdir(parents=True, exist_ok=True)
    z.write_csv(run.out / STANDARDIZED)
    run.commit("preprocess", {
        "n": z.n, "p": z.p, "names": z.names, "log_columns": list(cfg.log_columns),
        "nonsingular": corr.nonsingular, "kmo": corr.kmo, "kmo_label": kmo_label(corr.kmo),
        "max_m": factor_upper_bound(z.p), "correlation": matrix_to_json(corr.values),
    })
    run.emit("preprocess")


def cmd_select_dim(run: Run) -> None:
    cfg = run.config
    z = run.standardized("select-dim")
    bound = factor_upper_bound(z.p)
    if cfg.dimension.max_m is not None and cfg.dimension.max_m > bound:
        raise ConfigError("dimension.max_m", f"m={cfg.dimension.max_m} violates the existence bound "
                                             f"(p - m)^2 - p - m >= 0; the maximum for p={z.p} is {bound}")
    rep = select_dimension(z, cfg.prior, step_seed(cfg.seed, "select-dim"),
                           iterations=cfg.chain.iterations, burn_in=cfg.chain.burn_in,
                           splits=cfg.dimension.splits, max_m=cfg.dimension.max_m,
                           anchors=cfg.dimension.anchors)
    excluded = dict(rep.excluded)
    rows = [{"m": m, "status": "excluded" if m in excluded else "ok", "reason": excluded.get(m, ""),
             "log_marginal": None if np.isnan(lm) else float(lm), "pmp": float(pr)}
            for m, lm, pr in zip(rep.candidate_ms, rep.log_marginals, rep.pmps)]
    run.commit("dimension", {
        "rows": rows, "best": rep.best, "training_size": rep.training_size, "splits": cfg.dimension.splits,
        "specs": {str(m): render_spec(s) for m, s in rep.specs.items()},
    })
    run.emit("dimension", "dimension.tsv")


def _fit_spec(run: Run):
    if run.config.ucfm is not None:
        return run.config.ucfm
    dim = run.results.get("dimension")
    if dim is None:
        raise DependencyError("'fit' needs either a 'ucfm' block in the config or the results of "
                              "'select-dim'; run that step first")
    return parse_spec(dim["specs"][str(dim["best"])])


def cmd_fit(run: Run) -> None:
    cfg = run.config
    z = run.standardized("fit")
    spec = _fit_spec(run)
    draws = gibbs_run(z, spec, cfg.prior, cfg.chain.iterations, cfg.chain.burn_in,
                      seed=step_seed(cfg.seed, "fit"), chains=cfg.chain.chains)
    draws.write_tsv(run.out / DRAWS)
    # summarize what was persisted, so a resumed compare sees identical numbers
    draws = PosteriorDraws.read_tsv(run.out / DRAWS)
    corr = np.array(run.results["preprocess"]["correlation"])
    rr = reproduced_residual(corr, draws.mean_params())
    screen = rank_screen(draws) if len(draws) >= 1000 else None
    run.commit("fit", {
        "p": z.p, "m": spec.m, "spec": render_spec(spec), "draws": len(draws),
        "summary": summary_to_json(posterior_summary(draws)),
        "reproduced": matrix_to_json(rr["reproduced"]), "residual": matrix_to_json(rr["residual"]),
        "rank_screen": None if screen is None else screen.reason,
    })
    run.emit("fit", "loadings.tsv")


def cmd_compare(run: Run) -> None:
    cfg = run.config
    if cfg.models.path is None:
        raise ConfigError("models.path", "required for 'compare'")
    try:
        text = cfg.models.path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("models.path", f"cannot read {cfg.models.path}: {exc.strerror}") from None
    fit = run.need("fit", "compare")
    spec = parse_spec(fit["spec"])
    p = fit["p"]
    # parse and expand everything before touching the bundle
    name = cfg.models.path.name
    try:
        asts = parse_models(text, p, spec.m)
    except DslError as exc:
        raise ConfigError("models.path", f"{name}: {exc}") from None
    sets = {}
    for model, ast in asts.items():
        try:
            sets[model] = expand(ast, spec, p)
        except DslError as exc:
            raise ConfigError("models.path", f"{name}: model {model}, statement {exc.line}: {exc.message}") from None
    probs = cfg.models.prior_probs
    if probs is not None and len(probs) != len(sets):
        raise ConfigError("models.prior_probs", f"expected {len(sets)} values, one per model")
    path = run.out / DRAWS
    if not path.exists():
        raise DependencyError(f"'compare' needs {path}; run 'fit' first")
    draws = PosteriorDraws.read_tsv(path)
    prior = sample_prior(spec, cfg.prior, cfg.models.prior_draws, step_seed(cfg.seed, "compare"), p)
    try:
        result = compare_models(draws, prior, sets, probs)
    except ValueError as exc:
        if isinstance(exc, ConstraintMassError):
            raise
        raise ConfigError("models.prior_probs", str(exc)) from None
    rows = [dict(model=name, f=d["f"], c=d["c"], bf=d["bf"], mc_se=d["mc_se"], pmp=float(pp))
            for name, d, pp in zip(result.labels, result.details, result.posterior_probs)]
    run.results["models"] = {name: render(ast) for name, ast in asts.items()}
    run.commit("comparison", {"rows": rows, "best": result.best(), "prior_draws": len(prior)})
    run.emit("comparison", "comparison.tsv")


def cmd_report(run: Run) -> None:
    if not any(k in run.results for k in STEP_KEYS):
        raise DependencyError(f"'report' found no completed step in {run.out}; run 'preprocess' first")
    paths = render_report(run.results, run.out)
    if run.machine:
        sys.stdout.write("".join(f"{p}\n" for p in paths))
    else:
        sys.stdout.write((run.out / "summary.txt").read_text(encoding="utf-8"))


def cmd_all(run: Run) -> None:
    for step in (cmd_preprocess, cmd_select_dim, cmd_fit, cmd_compare, cmd_report):
        step(run)


COMMANDS = {
    "preprocess": cmd_preprocess,
    "select-dim": cmd_select_dim,
    "fit": cmd_fit,
    "compare": cmd_compare,
    "report": cmd_report,
    "all": cmd_all,
}


_HELP = {
    "preprocess": "log-transform, standardize and check the data",
    "select-dim": "choose the number of factors",
    "fit": "sample the unrestricted factor model",
    "compare": "compare constrained models by Bayes factors",
    "report": "write the text report and tables",
    "all": "run every step in order",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ucfm", description="Bayesian confirmatory factor analysis in four steps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", required=True, help="YAML configuration file")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out-dir", help=f"bundle directory (default: ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
        sp.add_argument("--chains", type=int, help="number of chains (overrides the config)")
        sp.add_argument("--machine-output", action="store_true", help="print tab-delimited tables")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be non-negative")
            cfg = replace(cfg, seed=args.seed)
        if args.chains is not None:
            if args.chains < 1:
                raise ConfigError("--chains", "must be >= 1")
            cfg = replace(cfg, chain=replace(cfg.chain, chains=args.chains))
        out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
        COMMANDS[args.command](Run(cfg, out, args.machine_output))
    except (ConfigError, DependencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ConstraintMassError, RuntimeError) as exc:
        # RuntimeError here means an analysis dead end, e.g. every candidate m excluded
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
