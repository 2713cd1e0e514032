"""Validator-quality analysis: weighted rank correlation against the oracle,
per-validator rank aggregation, gap-to-oracle statistics, and the
green/red/dark-red cell classification used in the rendered tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DavalidError
from .numerics import average_ranks


def weighted_spearman(scores, oracle, weight_exponent: float = 2.0) -> float:
    """Weighted Pearson correlation of the two rank vectors.

    Weights are the minmax-normalized oracle values raised to
    ``weight_exponent`` (exponent 0 recovers the unweighted Spearman), so
    agreement among the best checkpoints counts for more.
    """
    x = np.asarray(scores, dtype=np.float64)
    y = np.asarray(oracle, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch {x.shape} vs {y.shape}")
    if x.size < 3:
        raise ValueError("need at least 3 points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite inputs")
    rx = average_ranks(x)
    ry = average_ranks(y)
    span = y.max() - y.min()
    normalized = (y - y.min()) / span if span > 0 else np.zeros_like(y)
    with np.errstate(invalid="ignore"):
        weights = normalized ** weight_exponent
    weights[normalized == 0.0] = 0.0 if weight_exponent > 0 else 1.0
    total = weights.sum()
    if total <= 0:
        raise ValueError("zero total weight")
    weights = weights / total
    mx = float(weights @ rx)
    my = float(weights @ ry)
    cov = float(weights @ ((rx - mx) * (ry - my)))
    vx = float(weights @ ((rx - mx) ** 2))
    vy = float(weights @ ((ry - my) ** 2))
    if vx <= 0 or vy <= 0:
        raise ValueError("degenerate rank variance")
    return cov / np.sqrt(vx * vy)


def gap_to_oracle(selected: float, oracle: float, higher_better: bool = True) -> float:
    """How much worse the validator's pick is than the oracle's, in metric
    units; negative gaps indicate a pool mismatch and are a hard error."""
    gap = (oracle - selected) if higher_better else (selected - oracle)
    if gap < -1e-9:
        raise DavalidError(
            f"selected metric {selected} beats oracle {oracle}: pool mismatch")
    return max(gap, 0.0)


def classify_cell(value: float, baseline: float, lower_better: bool = False) -> str:
    """green = beats the baseline, dark-red = not even half the baseline's
    performance, red = in between. Strict inequalities; the baseline itself
    is red."""
    if lower_better:
        if value < baseline:
            return "green"
        if value > 2.0 * baseline:
            return "dark-red"
        return "red"
    if value > baseline:
        return "green"
    if value < 0.5 * baseline:
        return "dark-red"
    return "red"


def average_rank_table(rows: dict[str, dict[str, float]],
                       lower_better: bool = False) -> dict[str, float]:
    """Per-validator mean rank across algorithm rows (rank 1 = best in each
    row, ties averaged). Every row must cover the same validators."""
    if not rows:
        raise DavalidError("no rows to rank")
    validators = None
    mean_ranks: dict[str, float] = {}
    for algorithm, cells in rows.items():
        names = sorted(cells)
        if validators is None:
            validators = names
            mean_ranks = {name: 0.0 for name in names}
        elif names != validators:
            raise DavalidError(f"row {algorithm} has a different validator set")
        values = np.asarray([cells[name] for name in validators], dtype=np.float64)
        ranks = average_ranks(values if lower_better else -values)
        for name, rank in zip(validators, ranks):
            mean_ranks[name] += float(rank)
    count = len(rows)
    return {name: total / count for name, total in mean_ranks.items()}


@dataclass
class AnalysisReport:
    validators: list[str]
    algorithms: list[str]
    selected: dict[str, dict[str, float]]    # algorithm -> validator -> metric
    oracle: dict[str, float]                 # algorithm -> oracle metric
    baseline: float
    lower_better: bool = False
    correlations: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)
    # validator -> task -> (rho_weighted, rho_unweighted); NaNs for degenerate
    metadata: dict = field(default_factory=dict)

    def cell_classes(self) -> dict[str, dict[str, str]]:
        has_baseline = self.baseline == self.baseline  # not NaN
        return {
            algorithm: {
                validator: (classify_cell(value, self.baseline, self.lower_better)
                            if has_baseline else "n/a")
                for validator, value in cells.items()
            }
            for algorithm, cells in self.selected.items()
        }

    def avg_row(self) -> dict[str, float]:
        out = {}
        for validator in self.validators:
            out[validator] = float(np.mean(
                [self.selected[algorithm][validator] for algorithm in self.algorithms]))
        out["oracle"] = float(np.mean(
            [self.oracle[algorithm] for algorithm in self.algorithms]))
        return out

    def avg_rank_row(self) -> dict[str, float]:
        rows = {
            algorithm: {validator: self.selected[algorithm][validator]
                        for validator in self.validators}
            for algorithm in self.algorithms
        }
        return average_rank_table(rows, lower_better=self.lower_better)

    def correlation_row(self) -> dict[str, float]:
        out = {}
        for validator in self.validators:
            per_task = [
                rho_w for (rho_w, _) in self.correlations.get(validator, {}).values()
                if np.isfinite(rho_w)
            ]
            out[validator] = float(np.mean(per_task)) if per_task else float("nan")
        return out

    def gap_rows(self) -> tuple[dict[str, float], dict[str, float]]:
        mean_gap, max_gap = {}, {}
        for validator in self.validators:
            gaps = [
                gap_to_oracle(self.selected[algorithm][validator],
                              self.oracle[algorithm],
                              higher_better=not self.lower_better)
                for algorithm in self.algorithms
            ]
            mean_gap[validator] = float(np.mean(gaps))
            max_gap[validator] = float(np.max(gaps))
        return mean_gap, max_gap


def _fmt(value: float) -> str:
    if value != value:  # NaN
        return ""
    return repr(float(value))


def _fmt2(value: float) -> str:
    return "" if value != value else f"{value:.2f}"


def emit_report(report: AnalysisReport, out_dir,
                formats: tuple[str, ...] = ("csv", "md")) -> dict[str, str]:
    """Write report.csv, report.md, cells.csv, correlations.csv. Renderings
    are deterministic; CSVs keep full precision, markdown shows 2 decimals."""
    from pathlib import Path

    unknown = set(formats) - {"csv", "md"}
    if unknown:
        raise DavalidError(f"unknown report format {sorted(unknown)[0]!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = list(report.validators) + ["oracle"]
    classes = report.cell_classes()
    avg = report.avg_row()
    ranks = report.avg_rank_row()
    corr = report.correlation_row()
    mean_gap, max_gap = report.gap_rows()

    def row_values(mapping: dict[str, float], with_oracle: bool = False) -> list[str]:
        values = [_fmt(mapping.get(validator, float("nan")))
                  for validator in report.validators]
        values.append(_fmt(mapping.get("oracle", float("nan"))) if with_oracle else "")
        return values

    lines = ["algorithm," + ",".join(columns)]
    for algorithm in report.algorithms:
        cells = [_fmt(report.selected[algorithm][v]) for v in report.validators]
        cells.append(_fmt(report.oracle[algorithm]))
        lines.append(f"{algorithm}," + ",".join(cells))
    lines.append("Avg.," + ",".join(row_values(avg, with_oracle=True)))
    lines.append("Avg. Rank," + ",".join(row_values(ranks)))
    lines.append("Correlation," + ",".join(row_values(corr)))
    lines.append("Mean Gap," + ",".join(row_values(mean_gap)))
    lines.append("Max Gap," + ",".join(row_values(max_gap)))
    baseline_cells = [""] * len(report.validators) + [_fmt(report.baseline)]
    lines.append("Source-only," + ",".join(baseline_cells))
    report_csv = "\n".join(lines) + "\n"
    if "csv" in formats:
        (out / "report.csv").write_text(report_csv)

    md = ["| algorithm | " + " | ".join(columns) + " |",
          "|" + "---|" * (len(columns) + 1)]
    for algorithm in report.algorithms:
        cells = []
        for validator in report.validators:
            value = report.selected[algorithm][validator]
            cells.append(f"{_fmt2(value)} ({classes[algorithm][validator]})")
        cells.append(_fmt2(report.oracle[algorithm]))
        md.append(f"| {algorithm} | " + " | ".join(cells) + " |")
    for name, mapping, with_oracle in (("Avg.", avg, True), ("Avg. Rank", ranks, False),
                                       ("Correlation", corr, False),
                                       ("Mean Gap", mean_gap, False),
                                       ("Max Gap", max_gap, False)):
        cells = [_fmt2(mapping.get(v, float("nan"))) for v in report.validators]
        cells.append(_fmt2(mapping["oracle"]) if with_oracle else "")
        md.append(f"| {name} | " + " | ".join(cells) + " |")
    md.append("| Source-only | " + " | ".join([""] * len(report.validators)
                                              + [_fmt2(report.baseline)]) + " |")
    report_md = "\n".join(md) + "\n"
    if "md" in formats:
        (out / "report.md").write_text(report_md)

    if "csv" not in formats:
        return {"report.csv": report_csv, "report.md": report_md}

    cell_lines = ["algorithm,validator_id,value,class"]
    for algorithm in report.algorithms:
        for validator in report.validators:
            value = report.selected[algorithm][validator]
            cell_lines.append(
                f"{algorithm},{validator},{_fmt(value)},{classes[algorithm][validator]}")
    (out / "cells.csv").write_text("\n".join(cell_lines) + "\n")

    corr_lines = ["validator_id,task,rho_weighted,rho_unweighted"]
    for validator in report.validators:
        for task in sorted(report.correlations.get(validator, {})):
            rho_w, rho_u = report.correlations[validator][task]
            corr_lines.append(f"{validator},{task},{_fmt(rho_w)},{_fmt(rho_u)}")
    (out / "correlations.csv").write_text("\n".join(corr_lines) + "\n")

    return {
        "report.csv": report_csv,
        "report.md": report_md,
    }
