import json
from pathlib import Path

import pandas as pd

from .multiplicity import SelectionResult, write_selection
from .utils import CONFIG, ensure_dir, strategy_file_name


def write_mae_vs_k(rows, path):
    """Write ``(strategy, n_selected, mae)`` rows as the MAE-vs-size table."""
    frame = pd.DataFrame(list(rows), columns=['strategy', 'n_selected', 'mae'])
    frame.to_csv(path, index=False, lineterminator='\n')
    return path


def selection_map(report):
    """Variable x strategy 0/1 matrix, one column per strategy."""
    frame = pd.DataFrame({'variable': range(report.n_vars)})
    for entry in report.entries:
        column = [0] * report.n_vars
        for v in entry.selected:
            column[v] = 1
        frame[entry.strategy] = column
    return frame


def emit_report(report, out_dir):
    """Write report.json, counts.csv, mae_vs_k.csv, selection_map.csv and one
    selection CSV per strategy. Returns the written paths.
    """
    out_dir = Path(out_dir)
    files = CONFIG['files']
    written = []
    try:
        ensure_dir(out_dir)

        report_file = out_dir / files['report']
        with open(report_file, 'w', encoding='utf-8') as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write('\n')
        written.append(report_file)

        counts_file = out_dir / files['counts']
        pd.DataFrame({'variable': range(report.n_vars), 'count': list(report.counts)}).to_csv(
            counts_file, index=False, lineterminator='\n')
        written.append(counts_file)

        for entry in report.entries:
            sel = SelectionResult(entry.selected, entry.method, report.n_vars, entry.cutoff)
            written.append(write_selection(sel, out_dir / strategy_file_name(entry.strategy)))

        rows = [(e.strategy, e.n_selected, e.mae) for e in report.entries]
        written.append(write_mae_vs_k(rows, out_dir / files['mae_vs_k']))

        map_file = out_dir / files['selection_map']
        selection_map(report).to_csv(map_file, index=False, lineterminator='\n')
        written.append(map_file)
    except OSError as e:
        raise OSError(f"cannot write report to {out_dir}: {e}") from e
    return written


def format_comparison(rows):
    header = f"{'strategy':<16} {'n_selected':>10} {'mae':>12}"
    lines = [header, '-' * len(header)]
    for strategy, n_selected, score in rows:
        lines.append(f"{strategy:<16} {n_selected:>10d} {score:>12.6f}")
    return '\n'.join(lines)
