"""Posterior summaries, reproduced correlations, and the report bundle.

Every step stores its results in a JSON document of plain numbers and
strings. The text report and the delimited tables are rendered only from
that document, so rendering again from a saved ``results.json`` reproduces
the bundle byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocess import CorrelationMatrix
from .types import FactorParams, PosteriorDraws, to_tsv

DASH = "–"
MIN_DRAWS = 1000
RESULTS_FILE = "results.json"
STEP_KEYS = ("preprocess", "dimension", "fit", "models", "comparison")


@dataclass(frozen=True)
class SummaryRow:
    parameter: str
    mean: float | None  # None for a cell fixed at zero
    lower: float | None
    upper: float | None

    @property
    def fixed(self) -> bool:
        return self.mean is None


def _interval(x: np.ndarray, level: float = 0.95):
    tail = (1 - level) / 2
    lo, hi = np.quantile(x, [tail, 1 - tail])
    return float(np.mean(x)), float(lo), float(hi)


def posterior_summary(draws: PosteriorDraws, level: float = 0.95) -> list[SummaryRow]:
    """Posterior means and equal-tailed credible intervals.

    Rows run over the loadings of factor 1, then factor 2 and so on, then
    the factor correlations, uniquenesses and intercepts. Cells fixed at zero
    appear with no numbers.
    """
    if len(draws) < MIN_DRAWS:
        raise ValueError(f"posterior summary needs at least {MIN_DRAWS} draws, got {len(draws)}")
    p, m = draws.Lambda.shape[1:]
    free = draws.spec.free_mask(p)
    rows = []
    for k in range(m):
        for j in range(p):
            name = f"L[{j + 1},{k + 1}]"
            if free[j, k]:
                rows.append(SummaryRow(name, *_interval(draws.Lambda[:, j, k], level)))
            else:
                rows.append(SummaryRow(name, None, None, None))
    for k in range(m):
        for l in range(k + 1, m):
            rows.append(SummaryRow(f"Phi[{k + 1},{l + 1}]", *_interval(draws.Phi[:, l, k], level)))
    for j in range(p):
        rows.append(SummaryRow(f"psi[{j + 1}]", *_interval(draws.psi[:, j], level)))
    for j in range(p):
        rows.append(SummaryRow(f"mu[{j + 1}]", *_interval(draws.mu[:, j], level)))
    return rows


def reproduced_residual(corr, params: FactorParams) -> dict[str, np.ndarray]:
    """Reproduced matrix ``Lambda Phi Lambda' + Psi`` and residual ``S - reproduced``."""
    s = corr.values if isinstance(corr, CorrelationMatrix) else np.asarray(corr, dtype=float)
    if s.shape != (params.p, params.p):
        raise ValueError(f"correlation matrix is {s.shape}, parameters have p={params.p}")
    reproduced = params.Lambda @ params.Phi @ params.Lambda.T + np.diag(params.psi)
    return {"reproduced": reproduced, "residual": s - reproduced}


# -- results document ----------------------------------------------------------------

def summary_to_json(rows: list[SummaryRow]) -> list[dict]:
    return [{"parameter": r.parameter, "mean": r.mean, "lower": r.lower, "upper": r.upper} for r in rows]


def matrix_to_json(a: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.asarray(a)]


def load_results(out_dir) -> dict:
    path = Path(out_dir) / RESULTS_FILE
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_results(results: dict, out_dir) -> None:
    """Write atomically so an interrupted step never leaves a truncated document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / (RESULTS_FILE + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, out / RESULTS_FILE)


# -- formatting ---------------------------------------------------------------------

def fmt3(v) -> str:
    if v is None:
        return DASH
    if isinstance(v, float) and np.isnan(v):
        return "nan"
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def _full(v) -> str:
    if v is None:
        return "NA"
    return repr(float(v))


def _text_table(header, rows) -> str:
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for n, r in enumerate(cells):
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _matrix_text(names, a) -> str:
    return _text_table([""] + list(names), [[nm] + [fmt3(v) for v in row] for nm, row in zip(names, a)])


def _matrix_tsv(names, a) -> str:
    return to_tsv(["variable"] + list(names), [[nm] + [repr(float(v)) for v in row] for nm, row in zip(names, a)])


def _names(results: dict, p: int) -> list[str]:
    names = results.get("preprocess", {}).get("names")
    return list(names) if names and len(names) == p else [f"x{j + 1}" for j in range(p)]


# -- sections -------------------------------------------------------------------------

def _section_data(res: dict) -> str:
    pre = res["preprocess"]
    kmo = pre.get("kmo")
    lines = [
        "Data and assumption checks",
        "==========================",
        f"rows: {pre['n']}   variables: {pre['p']}",
        f"log-transformed: {', '.join(pre.get('log_columns') or []) or 'none'}",
        f"correlation matrix nonsingular: {'yes' if pre['nonsingular'] else 'NO'}",
        f"KMO: {fmt3(kmo) if kmo is not None else 'undefined'} ({pre.get('kmo_label', '')})",
        f"largest admissible number of factors: {pre['max_m']}",
    ]
    return "\n".join(lines)


def _section_dimension(res: dict) -> str:
    dim = res["dimension"]
    rows = [[r["m"], r["status"], fmt3(r["log_marginal"]) if r["log_marginal"] is not None else DASH,
             fmt3(r["pmp"])] for r in dim["rows"]]
    lines = [
        "Step 1: number of factors",
        "=========================",
        _text_table(["m", "status", "log m(X)", "PMP"], rows),
    ]
    for r in dim["rows"]:
        if r.get("reason"):
            lines.append(f"m={r['m']} {r['reason']}")
    if dim.get("training_size"):
        lines.append(f"training sample size: {dim['training_size']} rows, {dim.get('splits', 0)} splits")
    return "\n".join(lines)


def _section_fit(res: dict) -> str:
    fit = res["fit"]
    p, m = fit["p"], fit["m"]
    names = _names(res, p)
    by_name = {r["parameter"]: r for r in fit["summary"]}
    header = ["item"]
    for k in range(m):
        header += [f"L[.,{k + 1}]", "95% CI"]
    rows = []
    for j in range(p):
        row = [names[j]]
        for k in range(m):
            r = by_name[f"L[{j + 1},{k + 1}]"]
            row += [fmt3(r["mean"]), DASH if r["mean"] is None else f"[{fmt3(r['lower'])}, {fmt3(r['upper'])}]"]
        rows.append(row)
    other = [[r["parameter"], fmt3(r["mean"]), f"[{fmt3(r['lower'])}, {fmt3(r['upper'])}]"]
             for r in fit["summary"] if not r["parameter"].startswith("L[")]
    lines = [
        f"Step 2: unrestricted factor model (m={m})",
        "=" * len(f"Step 2: unrestricted factor model (m={m})"),
        fit["spec"],
        "",
        "Posterior means and 95% credible intervals",
        _text_table(header, rows),
        "",
        _text_table(["parameter", "mean", "95% CI"], other),
        "",
        "Reproduced correlations",
        _matrix_text(names, fit["reproduced"]),
        "",
        "Residual correlations (observed minus reproduced)",
        _matrix_text(names, fit["residual"]),
    ]
    return "\n".join(lines)


def _section_models(res: dict) -> str:
    lines = ["Step 3: competing constrained models", "===================================="]
    for name, text in res["models"].items():
        lines.append(f"[model {name}]")
        lines.append(text.rstrip())
        lines.append("")
    return "\n".join(lines).rstrip()


def _section_comparison(res: dict) -> str:
    cmp_ = res["comparison"]
    rows = [[r["model"], f"{r['f']:.4g}", f"{r['c']:.3e}", f"{r['bf']:.4g}", f"{r['mc_se']:.3g}", f"{r['pmp']:.4f}"]
            for r in cmp_["rows"]]
    lines = [
        "Step 4: constrained-model selection",
        "===================================",
        _text_table(["model", "f", "c", "BF", "mc_se", "PMP"], rows),
        f"most supported: {cmp_['best']}",
    ]
    return "\n".join(lines)


def _provenance_text(res: dict) -> str:
    prov = res.get("provenance", {})
    return "\n".join(f"{k}: {json.dumps(prov[k], sort_keys=True)}" for k in sorted(prov)) + "\n"


_SECTIONS = (
    ("preprocess", _section_data),
    ("dimension", _section_dimension),
    ("fit", _section_fit),
    ("models", _section_models),
    ("comparison", _section_comparison),
)


def render_section(results: dict, key: str) -> str:
    """Text of one completed step; ``key`` is one of STEP_KEYS."""
    return dict(_SECTIONS)[key](results)


def render_text(results: dict) -> str:
    """Human-readable report containing only the completed steps."""
    parts = [render(results) for key, render in _SECTIONS if key in results]
    if not parts:
        raise ValueError("no completed step to report")
    parts.append("Provenance\n==========\n" + _provenance_text(results).rstrip())
    return "\n\n".join(parts) + "\n"


def render_tables(results: dict) -> dict[str, str]:
    """Delimited tables at full precision, keyed by file name."""
    out = {}
    if "dimension" in results:
        out["dimension.tsv"] = to_tsv(
            ["m", "status", "log_marginal", "pmp", "reason"],
            [[r["m"], r["status"], _full(r["log_marginal"]), _full(r["pmp"]), r.get("reason", "")]
             for r in results["dimension"]["rows"]],
        )
    if "fit" in results:
        fit = results["fit"]
        names = _names(results, fit["p"])
        out["loadings.tsv"] = to_tsv(
            ["parameter", "mean", "lower", "upper"],
            [[r["parameter"], _full(r["mean"]), _full(r["lower"]), _full(r["upper"])] for r in fit["summary"]],
        )
        out["reproduced.tsv"] = _matrix_tsv(names, fit["reproduced"])
        out["residual.tsv"] = _matrix_tsv(names, fit["residual"])
    if "comparison" in results:
        out["comparison.tsv"] = to_tsv(
            ["model", "f", "c", "bf", "mc_se", "pmp"],
            [[r["model"], _full(r["f"]), _full(r["c"]), _full(r["bf"]), _full(r["mc_se"]), _full(r["pmp"])]
             for r in results["comparison"]["rows"]],
        )
    return out


def render_report(results: dict, out_dir) -> list[Path]:
    """Write summary.txt, provenance.txt and the delimited tables; return the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"summary.txt": render_text(results), "provenance.txt": _provenance_text(results)}
    files.update(render_tables(results))
    written = []
    for name, text in sorted(files.items()):
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


__all__ = [
    "SummaryRow", "posterior_summary", "reproduced_residual", "summary_to_json", "matrix_to_json",
    "load_results", "save_results", "render_section", "render_text", "render_tables", "render_report", "fmt3", "STEP_KEYS",
]
