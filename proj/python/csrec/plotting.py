"""Read, write and plot the flat report CSV (metric,group,mean,std,seeds)."""

import argparse
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

COLUMNS = ["metric", "group", "mean", "std", "seeds"]


@dataclass(frozen=True)
class ReportRow:
    metric: str
    group: str
    mean: float
    std: float
    seeds: int


def read_report_csv(path) -> List[ReportRow]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(COLUMNS)}, got {header}")
        rows = []
        for line, fields in enumerate(reader, start=2):
            if len(fields) != len(COLUMNS):
                raise ValueError(f"{path}:{line}: expected {len(COLUMNS)} fields")
            rows.append(ReportRow(fields[0], fields[1], float(fields[2]), float(fields[3]), int(fields[4])))
    return rows


def write_report_csv(rows: Iterable[ReportRow], path) -> None:
    # repr keeps every float exact on re-read.
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COLUMNS)
        for r in rows:
            writer.writerow([r.metric, r.group, repr(r.mean), repr(r.std), r.seeds])


def plot_groups(rows: List[ReportRow], metric: str, output, title: Optional[str] = None) -> None:
    """Bar chart of one metric across groups with seed standard deviations."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    selected = [r for r in rows if r.metric == metric]
    if not selected:
        raise ValueError(f"no rows for metric {metric}")
    fig, ax = plt.subplots(figsize=(max(4, len(selected) * 0.9), 3.5))
    ax.bar([r.group for r in selected], [r.mean for r in selected], yerr=[r.std for r in selected], capsize=3)
    ax.set_ylabel(metric)
    ax.set_title(title or metric)
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(output)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Plot one metric from a report CSV.")
    parser.add_argument("report_csv", type=Path)
    parser.add_argument("--metric", default="recall@10")
    parser.add_argument("--output", type=Path, default=Path("report.png"))
    parser.add_argument("--roundtrip", type=Path, help="also rewrite the CSV to this path")
    args = parser.parse_args(argv)
    rows = read_report_csv(args.report_csv)
    if args.roundtrip:
        write_report_csv(rows, args.roundtrip)
    plot_groups(rows, args.metric, args.output)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
