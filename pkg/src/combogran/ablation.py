"""Ablation arithmetic: performance decline (PD), grids, retention and t-tests.

PD = (baseline - final) / baseline * 100. A positive PD means the configuration
scored below the baseline, i.e. whatever was removed had been helping.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .granularity import ExprSyntaxError, GranularityExpr, parse_expr
from .modal import UsageError

PRESENT, FUSED, MIXED, ABSENT = "✓", "*", "+", "×"
EMPTY_SYMBOLS = {"base", "0", ""}

QUALITY_METRICS = ("BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-L")
EFFICIENCY_METRICS = ("MPT", "RT", "SAM/s", "STEPS/s")


def pd(baseline: float, final: float) -> float:
    if baseline == 0:
        raise ValueError("PD undefined: baseline is 0")
    return (baseline - final) / baseline * 100.0


def difference_value(pd_a: float, pd_b: float) -> float:
    return pd_a - pd_b


def retention_rate(before: float, after: float) -> float:
    if before <= 0:
        raise ValueError(f"retention needs a positive pre-score, got {before}")
    return 100.0 * after / before


# -- metric tables ----------------------------------------------------------------

@dataclass
class MetricRow:
    test_set: str
    exp_no: int
    dataset: str
    symbol: str
    metrics: dict[str, float]


def _expr_or_none(symbol: str) -> GranularityExpr | None:
    if symbol.strip().lower() in EMPTY_SYMBOLS:
        return None
    return parse_expr(symbol)


def read_metric_table(path: str | Path) -> list[MetricRow]:
    """CSV with test_set, [exp_no], dataset, symbol and one column per metric."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fixed = {"test_set", "exp_no", "dataset", "symbol"}
        missing = {"test_set", "symbol"} - set(reader.fieldnames or ())
        if missing:
            raise UsageError(f"{path}: missing columns {sorted(missing)}")
        metric_cols = [c for c in reader.fieldnames if c not in fixed]
        for lineno, rec in enumerate(reader, 2):
            try:
                metrics = {c: float(rec[c]) for c in metric_cols if rec[c] not in ("", None)}
                exp_no = int(rec["exp_no"]) if rec.get("exp_no") else lineno - 1
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from exc
            rows.append(MetricRow(rec["test_set"], exp_no, rec.get("dataset", ""), rec["symbol"], metrics))
    return rows


def config_markers(symbol: str) -> dict[str, str]:
    """Per-modality marker: present, mixed in as its own term, or absent."""
    expr = _expr_or_none(symbol)
    out = {m: ABSENT for m in "SMV"}
    if expr is None:
        return out
    multi = len(expr.terms) > 1
    for term in expr.terms:
        for m in term:
            if multi and len(term) == 1:
                out[m] = MIXED
            elif out[m] != MIXED:
                out[m] = PRESENT
    return out


@dataclass
class AblationRow:
    test_set: str
    exp_no: int
    dataset: str
    symbol: str
    config: dict[str, str]
    metrics: dict[str, float]
    pd: dict[str, float]
    ratio: dict[str, float] = field(default_factory=dict)
    reduction: dict[str, float] = field(default_factory=dict)
    is_baseline: bool = False

    def to_dict(self) -> dict:
        return {
            "test_set": self.test_set, "exp_no": self.exp_no, "dataset": self.dataset,
            "symbol": self.symbol, "config": self.config, "metrics": self.metrics,
            "pd": self.pd, "ratio": self.ratio, "reduction": self.reduction,
            "is_baseline": self.is_baseline,
        }


def _same_symbol(a: str, b: str) -> bool:
    try:
        ea, eb = _expr_or_none(a), _expr_or_none(b)
    except ExprSyntaxError:
        return a.strip() == b.strip()
    if ea is None or eb is None:
        return ea is None and eb is None
    return ea.canonical() == eb.canonical()


def build_grid(rows: Sequence[MetricRow], baseline: str, metrics: Sequence[str] | None = None) -> list[AblationRow]:
    """PD, final/baseline ratio and fractional reduction for every row and metric."""
    by_set: dict[str, MetricRow] = {}
    for r in rows:
        if _same_symbol(r.symbol, baseline) and r.test_set not in by_set:
            by_set[r.test_set] = r
    set_order = {ts: i for i, ts in enumerate(dict.fromkeys(r.test_set for r in rows))}
    out = []
    for r in sorted(rows, key=lambda x: (set_order[x.test_set], x.exp_no)):
        base = by_set.get(r.test_set)
        if base is None:
            raise UsageError(f"test set {r.test_set!r} has no baseline row {baseline!r}")
        names = metrics or list(r.metrics)
        row = AblationRow(r.test_set, r.exp_no, r.dataset, r.symbol, config_markers(r.symbol),
                          {m: r.metrics[m] for m in names}, {}, is_baseline=r is base)
        for m in names:
            b, f = base.metrics[m], r.metrics[m]
            if b == 0:
                row.pd[m] = math.nan
                continue
            row.pd[m] = pd(b, f)
            row.ratio[m] = f / b
            row.reduction[m] = (b - f) / b
        out.append(row)
    return out


@dataclass(frozen=True)
class Discrepancy:
    exp_no: int
    metric: str
    computed: float
    printed: float
    kind: str  # "sign" when only the sign differs, else "value"


def compare_pd(grid: Iterable[AblationRow], printed: Mapping[int, Mapping[str, float]],
               tol: float = 0.01) -> list[Discrepancy]:
    """Cells whose printed PD misses the recomputed value by more than tol."""
    out = []
    for row in grid:
        ref = printed.get(row.exp_no)
        if ref is None:
            continue
        for m, value in ref.items():
            got = row.pd[m]
            if abs(got - value) <= tol:
                continue
            kind = "sign" if abs(got + value) <= tol else "value"
            out.append(Discrepancy(row.exp_no, m, got, value, kind))
    return out


def read_pd_table(path: str | Path) -> dict[int, dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {int(r.pop("exp_no")): {k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)}


def _fmt_pct(x: float) -> str:
    return "undefined" if math.isnan(x) else f"{x:.2f}%"


def render_table(grid: Sequence[AblationRow], metrics: Sequence[str] | None = None,
                 flags: Iterable[Discrepancy] = ()) -> str:
    """Plain-text PD table in grid order; flagged cells carry a trailing '!'."""
    if not grid:
        return ""
    metrics = list(metrics or grid[0].pd)
    flagged = {(d.exp_no, d.metric) for d in flags}
    has_mixed = any(MIXED in r.config.values() for r in grid)
    header = ["Test set", "Exp", "S", "M", "V", *metrics]
    lines = [header]
    for r in grid:
        marks = [FUSED if (has_mixed and r.config[m] == PRESENT) else r.config[m] for m in "SMV"]
        cells = [_fmt_pct(r.pd[m]) + ("!" if (r.exp_no, m) in flagged else "") for m in metrics]
        lines.append([r.test_set, str(r.exp_no), *marks, *cells])
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(line, widths)).rstrip() for line in lines) + "\n"


def write_grid_csv(grid: Sequence[AblationRow], path: str | Path) -> None:
    metrics = list(grid[0].pd) if grid else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["test_set", "exp_no", "dataset", "symbol", "S", "M", "V",
                    *(f"PD {m}" for m in metrics)])
        for r in grid:
            w.writerow([r.test_set, r.exp_no, r.dataset, r.symbol, r.config["S"], r.config["M"],
                        r.config["V"], *(f"{r.pd[m]:.2f}" for m in metrics)])


def write_grid_json(grid: Sequence[AblationRow], path: str | Path, flags: Iterable[Discrepancy] = ()) -> None:
    doc = {"rows": [r.to_dict() for r in grid],
           "flagged": [asdict(d) for d in flags]}
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=2, allow_nan=True) + "\n",
                          encoding="utf-8")


# -- one-sample t-test ----------------------------------------------------------

# Two-sided critical values of Student's t for alpha = 0.05, 0.01, 0.001, 0.0001,
# rounded up at the fourth decimal so the bound errs conservative.
P_LEVELS = (0.05, 0.01, 0.001, 0.0001)
T_CRITICAL = {
    1: (12.7063, 63.6568, 636.6193, 6366.1977),
    2: (4.3027, 9.9249, 31.5991, 99.9925),
    3: (3.1825, 5.8410, 12.9240, 28.0002),
    4: (2.7765, 4.6041, 8.6104, 15.5442),
    5: (2.5706, 4.0322, 6.8689, 11.1778),
    6: (2.4470, 3.7075, 5.9589, 9.0824),
    7: (2.3647, 3.4995, 5.4079, 7.8846),
    8: (2.3061, 3.3554, 5.0414, 7.1201),
    9: (2.2622, 3.2499, 4.7810, 6.5937),
    10: (2.2282, 3.1693, 4.5869, 6.2111),
    11: (2.2010, 3.1059, 4.4370, 5.9212),
    12: (2.1789, 3.0546, 4.3178, 5.6945),
    13: (2.1604, 3.0123, 4.2209, 5.5126),
    14: (2.1448, 2.9769, 4.1405, 5.3635),
    15: (2.1315, 2.9468, 4.0728, 5.2391),
    16: (2.1200, 2.9208, 4.0150, 5.1339),
    17: (2.1099, 2.8983, 3.9652, 5.0438),
    18: (2.1010, 2.8785, 3.9217, 4.9658),
    19: (2.0931, 2.8610, 3.8835, 4.8975),
    20: (2.0860, 2.8454, 3.8496, 4.8374),
    21: (2.0797, 2.8314, 3.8193, 4.7839),
    22: (2.0739, 2.8188, 3.7922, 4.7362),
    23: (2.0687, 2.8074, 3.7677, 4.6932),
    24: (2.0639, 2.7970, 3.7454, 4.6544),
    25: (2.0596, 2.7875, 3.7252, 4.6192),
    26: (2.0556, 2.7788, 3.7067, 4.5870),
    27: (2.0519, 2.7707, 3.6896, 4.5576),
    28: (2.0485, 2.7633, 3.6740, 4.5305),
    29: (2.0453, 2.7564, 3.6595, 4.5056),
    30: (2.0423, 2.7500, 3.6460, 4.4825),
}


class ZeroVarianceError(ValueError):
    def __init__(self, mean: float):
        super().__init__(f"zero variance: every score equals {mean}")
        self.mean = mean


@dataclass(frozen=True)
class TTestResult:
    n: int
    mean: float
    sample_sd: float
    t: float
    df: int
    p_bound: str

    def to_dict(self) -> dict:
        return dict(vars(self))


def p_bound(t: float, df: int) -> str:
    """Tightest tabulated two-sided level beaten by |t|; df > 30 uses the df=30 row."""
    if df < 1:
        raise ValueError("df must be >= 1")
    row = T_CRITICAL[min(df, 30)]
    best = None
    for level, crit in zip(P_LEVELS, row):
        if abs(t) > crit:
            best = level
    return f"< {best:g}" if best is not None else f">= {P_LEVELS[0]:g}"


def one_sample_t(scores: Sequence[float], mu0: float) -> TTestResult:
    n = len(scores)
    if n < 2:
        raise ValueError("one-sample t-test needs at least two scores")
    mean = math.fsum(scores) / n
    var = math.fsum((x - mean) ** 2 for x in scores) / (n - 1)
    if var == 0:
        raise ZeroVarianceError(mean)
    sd = math.sqrt(var)
    t = (mean - mu0) / (sd / math.sqrt(n))
    return TTestResult(n, mean, sd, t, n - 1, p_bound(t, n - 1))
