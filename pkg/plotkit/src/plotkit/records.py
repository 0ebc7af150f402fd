"""Strict parsers for the producer's CSV artifacts.

Every parse failure raises PlotDataError naming the file and line so a bad
row in a batch of hundreds is findable immediately.
"""

from pathlib import Path

import numpy as np

RUNRECORD_HEADER = (
    "iter,loss,grad_inf_norm,wall_ms_forward,wall_ms_backward,converged"
)


class PlotDataError(ValueError):
    """Malformed input file; the message starts with path:line."""


def _fail(path, lineno, msg):
    raise PlotDataError(f"{path}:{lineno}: {msg}")


def read_runrecord(path):
    """Parse one runrecord CSV into a dict of numpy columns.

    Columns: iter (int), loss, grad_inf_norm, wall_ms_forward,
    wall_ms_backward (float, nan allowed for failed iterations), converged
    (bool from 0/1).
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        _fail(path, 1, "empty file")
    if lines[0].strip() != RUNRECORD_HEADER:
        _fail(path, 1, f"bad header {lines[0]!r}, expected {RUNRECORD_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 6:
            _fail(path, lineno, f"expected 6 columns, got {len(cells)}")
        try:
            it = int(cells[0])
            vals = [float(c) for c in cells[1:5]]
        except ValueError as exc:
            _fail(path, lineno, str(exc))
        if cells[5].strip() not in ("0", "1"):
            _fail(path, lineno, f"converged must be 0 or 1, got {cells[5]!r}")
        rows.append((it, *vals, cells[5].strip() == "1"))
    if not rows:
        _fail(path, 2, "no data rows")
    return {
        "iter": np.array([r[0] for r in rows], dtype=int),
        "loss": np.array([r[1] for r in rows]),
        "grad_inf_norm": np.array([r[2] for r in rows]),
        "wall_ms_forward": np.array([r[3] for r in rows]),
        "wall_ms_backward": np.array([r[4] for r in rows]),
        "converged": np.array([r[5] for r in rows], dtype=bool),
    }


def read_trajectory(path):
    """Parse one trajectory CSV into (t, states, controls).

    Header is t,x0..x{n-1},u0..u{m-1}; control cells may be blank on the
    final row (and only there).
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        _fail(path, 1, "empty file")
    header = lines[0].split(",")
    if not header or header[0] != "t":
        _fail(path, 1, f"bad header {lines[0]!r}, expected t,x0..,u0..")
    n = sum(1 for h in header if h.startswith("x"))
    m = sum(1 for h in header if h.startswith("u"))
    if 1 + n + m != len(header) or n == 0:
        _fail(path, 1, f"bad header {lines[0]!r}, expected t,x0..,u0..")
    ts, states, controls = [], [], []
    data_lines = [
        (lineno, line)
        for lineno, line in enumerate(lines[1:], start=2)
        if line.strip()
    ]
    for row_idx, (lineno, line) in enumerate(data_lines):
        cells = line.split(",")
        if len(cells) != len(header):
            _fail(path, lineno, f"expected {len(header)} columns, got {len(cells)}")
        try:
            ts.append(float(cells[0]))
            states.append([float(c) for c in cells[1 : 1 + n]])
        except ValueError as exc:
            _fail(path, lineno, str(exc))
        tail = cells[1 + n :]
        if all(c.strip() == "" for c in tail):
            if row_idx != len(data_lines) - 1:
                _fail(path, lineno, "blank control cells before the final row")
        else:
            try:
                controls.append([float(c) for c in tail])
            except ValueError as exc:
                _fail(path, lineno, str(exc))
    if not ts:
        _fail(path, 2, "no data rows")
    return np.array(ts), np.array(states), np.array(controls)
