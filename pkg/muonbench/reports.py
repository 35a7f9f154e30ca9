"""
Writing experiment results to disk: one CSV per run, a summary CSV, and
SVG line plots. Every file is written to a temporary name in the output
directory and renamed into place.

Floats are written with ``repr`` so that parsing a run CSV gives back the
exact values that were recorded.
"""
import csv
import io
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import List

import svgwrite

from .errors import ReportError
from .harness import EvalRow, RunRecord
from .sweeps import AblationTable, SweepResult, TelescopeResult

logger = logging.getLogger(__name__)

__all__ = [
    'RUN_COLUMNS',
    'SUMMARY_COLUMNS',
    'RunCsv',
    'emit_reports',
    'line_plot',
    'read_run_csv',
]

RUN_COLUMNS = ['run_id', 'optimizer', 'batch_size', 'step', 'tokens_seen',
               'train_loss', 'val_loss', 'grad_global_norm', 'update_rms',
               'eta_t', 'wall_ms']
SUMMARY_COLUMNS = ['run_id', 'optimizer', 'batch_size', 'tokens_to_target',
                   'terminated', 'loss_spike_count', 'final_val_loss',
                   'state_scalar_count']
TELESCOPE_COLUMNS = ['width', 'eta_extent', 'lambda_extent', 'cells',
                     'best_eta', 'best_lambda', 'best_val_loss', 'transferred']

PALETTE = ['#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b',
           '#e377c2', '#7f7f7f', '#bcbd22', '#17becf', '#000000', '#aec7e8']


def _fmt(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write_atomic(path, text):
    directory = os.path.dirname(path) or '.'
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix='.',
                                   suffix='.' + os.path.basename(path))
        with io.open(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        if tmp is not None and os.path.exists(tmp):
            os.remove(tmp)
        raise ReportError(e.strerror or str(e), path)
    logger.debug("wrote %s", path)
    return path


def run_rows(record):
    for r in record.rows:
        yield [record.run_id, record.optimizer, record.batch_size, r.step,
               r.tokens_seen, float(r.train_loss), float(r.val_loss),
               float(r.grad_global_norm), float(r.update_rms), float(r.eta_t),
               float(r.wall_ms)]


def summary_row(record):
    s = record.summary
    return [record.run_id, record.optimizer, record.batch_size,
            s.tokens_to_target, s.terminated, s.loss_spike_count,
            float(s.final_val_loss), s.state_scalar_count]


def _finite_points(xs, ys):
    return [(float(x), float(y)) for x, y in zip(xs, ys)
            if math.isfinite(x) and math.isfinite(y)]


def line_plot(series, x_label, y_label, title='', width=640, height=400):
    """
    An SVG document with one polyline per series, linear axes, and the
    series labels written in a legend.

    :param series: ``(label, xs, ys)`` triples; non-finite points are
        dropped.
    :return str: The SVG text.
    """
    margin_left, margin_right, margin_top, margin_bottom = 70, 160, 40, 50
    plot_w = width - margin_left - margin_right
    plot_h = height - margin_top - margin_bottom
    points = [(label, _finite_points(xs, ys)) for label, xs, ys in series]
    all_points = [p for _, pts in points for p in pts]
    if all_points:
        x_lo = min(x for x, _ in all_points)
        x_hi = max(x for x, _ in all_points)
        y_lo = min(y for _, y in all_points)
        y_hi = max(y for _, y in all_points)
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0

    def to_px(x, y):
        px = margin_left + plot_w * (x - x_lo) / (x_hi - x_lo)
        py = margin_top + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo))
        return (round(px, 2), round(py, 2))

    dwg = svgwrite.Drawing(size=(width, height))
    dwg.add(dwg.rect(insert=(0, 0), size=(width, height), fill='white'))
    x0, y0 = margin_left, margin_top + plot_h
    dwg.add(dwg.line(start=(x0, y0), end=(x0 + plot_w, y0), stroke='black'))
    dwg.add(dwg.line(start=(x0, y0), end=(x0, margin_top), stroke='black'))
    dwg.add(dwg.text(title, insert=(margin_left, margin_top - 15), font_size=14))
    dwg.add(dwg.text(x_label, insert=(margin_left + plot_w / 2, height - 10),
                     font_size=12, text_anchor='middle'))
    dwg.add(dwg.text(y_label, insert=(15, margin_top + plot_h / 2),
                     font_size=12, text_anchor='middle',
                     transform='rotate(-90 15 {})'.format(margin_top + plot_h / 2)))
    for value, anchor in ((x_lo, 'start'), (x_hi, 'end')):
        px, _ = to_px(value, y_lo)
        dwg.add(dwg.text('{:.4g}'.format(value), insert=(px, y0 + 18),
                         font_size=10, text_anchor=anchor))
    for value in (y_lo, y_hi):
        _, py = to_px(x_lo, value)
        dwg.add(dwg.text('{:.4g}'.format(value), insert=(x0 - 5, py + 4),
                         font_size=10, text_anchor='end'))

    for k, (label, pts) in enumerate(points):
        color = PALETTE[k % len(PALETTE)]
        pixels = [to_px(x, y) for x, y in pts]
        if len(pixels) > 1:
            dwg.add(dwg.polyline(pixels, stroke=color, fill='none', stroke_width=2))
        for px, py in pixels:
            dwg.add(dwg.circle(center=(px, py), r=2.5, fill=color))
        legend_y = margin_top + 16 * k
        dwg.add(dwg.line(start=(width - margin_right + 10, legend_y),
                         end=(width - margin_right + 30, legend_y),
                         stroke=color, stroke_width=2))
        dwg.add(dwg.text(label, insert=(width - margin_right + 35, legend_y + 4),
                         font_size=11))
    return dwg.tostring()


def _loss_series(records, label_of):
    return [(label_of(r), [row.tokens_seen for row in r.rows],
             [row.val_loss for row in r.rows]) for r in records]


def _emit_runs(records, out_dir):
    paths = []
    for record in records:
        path = os.path.join(out_dir, record.run_id + '.csv')
        paths.append(_write_atomic(path, _csv_text(RUN_COLUMNS, run_rows(record))))
    summary = _csv_text(SUMMARY_COLUMNS, [summary_row(r) for r in records])
    paths.append(_write_atomic(os.path.join(out_dir, 'summary.csv'), summary))
    return paths


def _emit_sweep(result, out_dir):
    records = [result.records[key] for key in sorted(result.records)]
    paths = _emit_runs(records, out_dir)
    if not records:
        return paths
    present = [(b, r) for b, r in sorted(result.ratios.items()) if r is not None]
    ratio_svg = line_plot([('R_L(B)', [b for b, _ in present], [r for _, r in present])],
                          'batch size (samples)', 'T_adamw / T_muon',
                          'token ratio at target {!r}'.format(result.target_loss))
    paths.append(_write_atomic(os.path.join(out_dir, 'ratio.svg'), ratio_svg))
    largest = max(b for _, b in result.records)
    shown = [r for (_, b), r in sorted(result.records.items()) if b == largest]
    loss_svg = line_plot(_loss_series(shown, lambda r: '{} (B={})'.format(
                                      r.optimizer, r.batch_size)),
                         'tokens seen', 'validation loss',
                         'loss vs tokens at B={}'.format(largest))
    paths.append(_write_atomic(os.path.join(out_dir, 'loss_vs_tokens.svg'), loss_svg))
    return paths


def _emit_ablation(table, out_dir):
    records = [c.record for c in table.cells if c.record is not None]
    paths = _emit_runs(records, out_dir)
    if records:
        svg = line_plot(_loss_series(records, lambda r: r.run_id),
                        'tokens seen', 'validation loss', 'ablation')
        paths.append(_write_atomic(os.path.join(out_dir, 'loss_vs_tokens.svg'), svg))
    return paths


def _emit_telescope(result, out_dir):
    records = [s.best_record for s in result.stages if s.best_record is not None]
    paths = _emit_runs(records, out_dir)
    rows = [[s.width, float(s.eta_extent), float(s.lambda_extent), s.cells,
             float(s.best_eta), float(s.best_lambda), float(s.best_loss),
             s.transferred] for s in result.stages]
    paths.append(_write_atomic(os.path.join(out_dir, 'telescope.csv'),
                               _csv_text(TELESCOPE_COLUMNS, rows)))
    if result.stages:
        svg = line_plot([('best eta', [s.width for s in result.stages],
                          [s.best_eta for s in result.stages])],
                        'hidden width', 'best eta0', 'telescoping sweep')
        paths.append(_write_atomic(os.path.join(out_dir, 'telescope.svg'), svg))
    return paths


def emit_reports(result, out_dir):
    """
    Write the files for a result into ``out_dir`` (created if needed).

    - :class:`SweepResult`: one run CSV per best ``(optimizer, B)`` cell,
      ``summary.csv``, ``ratio.svg`` and ``loss_vs_tokens.svg`` (the
      largest batch size, one series per optimizer). An empty sweep
      writes only the header of ``summary.csv``.
    - :class:`AblationTable`: one run CSV per cell, ``summary.csv`` and
      ``loss_vs_tokens.svg``.
    - :class:`TelescopeResult`: the best run of each stage, ``summary.csv``,
      ``telescope.csv`` and ``telescope.svg``.
    - :class:`RunRecord` or a list of them: run CSVs and ``summary.csv``.

    :return list: Paths written.
    :raises ReportError: If a file cannot be written.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise ReportError(e.strerror or str(e), out_dir)
    if isinstance(result, SweepResult):
        paths = _emit_sweep(result, out_dir)
    elif isinstance(result, AblationTable):
        paths = _emit_ablation(result, out_dir)
    elif isinstance(result, TelescopeResult):
        paths = _emit_telescope(result, out_dir)
    elif isinstance(result, RunRecord):
        paths = _emit_runs([result], out_dir)
    else:
        paths = _emit_runs(list(result), out_dir)
    logger.info("wrote %d files to %s", len(paths), out_dir)
    return paths


@dataclass
class RunCsv:
    run_id: str
    optimizer: str
    batch_size: int
    rows: List[EvalRow] = field(default_factory=list)


def read_run_csv(path):
    """
    Parse a run CSV written by :func:`emit_reports`.

    :return RunCsv: The run's identity and its rows, with the exact float
        values that were written.
    :raises ReportError: If the file cannot be read or has the wrong columns.
    """
    try:
        with io.open(path, encoding='utf-8', newline='') as f:
            reader = csv.reader(f)
            header = next(reader, None)
            lines = list(reader)
    except OSError as e:
        raise ReportError(e.strerror or str(e), path)
    if header != RUN_COLUMNS:
        raise ReportError("unexpected header {!r}".format(header), path)
    if not lines:
        return RunCsv(os.path.splitext(os.path.basename(path))[0], '', 0)
    out = RunCsv(lines[0][0], lines[0][1], int(lines[0][2]))
    for line in lines:
        out.rows.append(EvalRow(step=int(line[3]),
                                tokens_seen=int(line[4]),
                                train_loss=float(line[5]),
                                val_loss=float(line[6]),
                                grad_global_norm=float(line[7]),
                                update_rms=float(line[8]),
                                eta_t=float(line[9]),
                                wall_ms=float(line[10])))
    return out
