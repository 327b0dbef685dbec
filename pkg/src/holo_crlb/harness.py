"""Experiment orchestration, held-out evaluation and result serialization."""

import csv
import io
import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import bench
from .channel import Beamforming, build_tables, capacity, synth_received
from .fisher import batch_terms, checked_inverse, crlb_values, fim, prepare
from .grad import gradient_check
from .opt import TRACE_COLUMNS, init_vars
from .scene import load_config, sample_positions

REPORT_SCHEMA = 1
GRADCHECK_TOL = 1e-5
HEATMAP_GRID = 24
COMMANDS = ("optimize", "benchmark", "evaluate", "gradcheck", "sample-signals")

ERROR_MODEL_NOTE = (
    "Capacity loss uses a Gaussian efficient-estimator error model "
    "(per-axis std = sqrt(diag(FIM^-1))) in place of a trained positioning network."
)

# sub-streams derived from the user seed
_TRAIN, _EVAL, _USERS, _ERRORS, _SIGNALS = range(5)


def stream(seed, which):
    return np.random.SeedSequence([int(seed), which])


def thread_limit() -> Optional[int]:
    """Thread cap from ``HOLO_CRLB_THREADS``; ``None`` means no cap."""
    raw = os.environ.get("HOLO_CRLB_THREADS")
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"HOLO_CRLB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"HOLO_CRLB_THREADS must be a positive integer, got {raw!r}")
    return n


def evaluate_avg_crlb(bf: Beamforming, tables, n_eval: int, seed) -> float:
    """Average CRLB over ``n_eval`` fresh uniform ROI samples drawn from ``seed``."""
    samples = sample_positions(tables.cfg.roi, n_eval, seed)
    return float(np.mean(crlb_values(samples, bf, tables)))


def error_model(p_true, fim_eval, seed, size=None):
    """Position estimate with Gaussian error of per-axis std ``sqrt([F^-1]_uu)``.

    ``fim_eval`` may be a :class:`~holo_crlb.fisher.FimEval` or a 3x3 FIM.
    With ``size`` the result has shape ``(size, 3)``.
    """
    f = getattr(fim_eval, "fim", fim_eval)
    p_true = np.asarray(p_true, float)
    inv = checked_inverse(np.asarray(f, float)[None], p_true[None])[0]
    std = np.sqrt(np.clip(np.diag(inv), 0.0, None))
    rng = np.random.default_rng(seed)
    shape = (3,) if size is None else (size, 3)
    return p_true + std * rng.standard_normal(shape)


def focused_capacity(band, target, p_user, tables):
    c, s = bench.focus_beam(band, target, tables)
    return capacity(band, bench.transmit_rows(band, c, s, tables), p_user, tables)


def capacity_loss(band: int, p_true, p_est, tables) -> float:
    """Rate lost at ``p_true`` when the beam is focused on ``p_est`` instead."""
    return (focused_capacity(band, p_true, p_true, tables)
            - focused_capacity(band, p_est, p_true, tables))


def capacity_losses(bf, tables, band, n_users, seed):
    """Capacity loss of ``n_users`` ROI users whose estimates follow :func:`error_model`."""
    users = sample_positions(tables.cfg.roi, n_users, stream(seed, _USERS))
    state = prepare(bf, tables)
    _, _, _, per_band = batch_terms(users, state, tables)
    fims = per_band.sum(axis=1)
    checked_inverse(fims, users)
    seeds = stream(seed, _ERRORS).spawn(n_users)
    out = np.empty(n_users)
    for k, (p, f) in enumerate(zip(users, fims)):
        out[k] = capacity_loss(band, p, error_model(p, f, seeds[k]), tables)
    return out


def loss_stats(losses):
    q1, med, q3 = np.percentile(losses, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3),
            "mean": float(np.mean(losses)), "n": int(len(losses))}


# ---------------------------------------------------------------- serialization

def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def trace_csv(trace, method=None):
    header = list(TRACE_COLUMNS) + (["method"] if method is not None else [])
    rows = [[r[k] for k in TRACE_COLUMNS] + ([method] if method is not None else [])
            for r in trace.rows]
    return _csv_text(header, rows)


def samples_csv(samples, values):
    return _csv_text(["x", "y", "z", "crlb"],
                     [[*map(float, p), float(v)] for p, v in zip(samples, values)])


def _colour(t):
    """Dark blue to yellow ramp for t in [0, 1]."""
    lo, hi = np.array([40, 30, 110]), np.array([250, 230, 40])
    r, g, b = np.round(lo + (hi - lo) * float(np.clip(t, 0.0, 1.0))).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(bf, tables, n=HEATMAP_GRID, cell=12):
    """log10 CRLB on an x-y grid through the middle of the ROI."""
    roi = tables.cfg.roi
    lo, hi = roi.lower, roi.upper
    xs = lo[0] + (np.arange(n) + 0.5) / n * (hi[0] - lo[0])
    ys = lo[1] + (np.arange(n) + 0.5) / n * (hi[1] - lo[1])
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(n * n, roi.center[2])])
    state = prepare(bf, tables)
    vals = np.full(n * n, np.nan)
    for k, p in enumerate(pts):
        try:
            vals[k] = np.log10(fim(p, bf, tables, state).crlb)
        except ValueError:
            pass
    finite = vals[np.isfinite(vals)]
    vmin, vmax = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = vmax - vmin if vmax > vmin else 1.0
    size = n * cell
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}">']
    for k, v in enumerate(vals):
        ix, iy = divmod(k, n)
        fill = "#888888" if not np.isfinite(v) else _colour((v - vmin) / span)
        parts.append(f'<rect x="{ix * cell}" y="{(n - 1 - iy) * cell}" width="{cell}" '
                     f'height="{cell}" fill="{fill}"/>')
    parts.append(f'<text x="2" y="{size + 14}" font-size="11">log10 CRLB [m^2], '
                 f'z={roi.center[2]:g} m: {vmin:.3g} to {vmax:.3g}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def write_outputs(out_dir, files):
    """Write ``{name: text}`` into ``out_dir`` via a staging directory and atomic renames."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir))
    try:
        for name, text in files.items():
            with open(stage / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        for name in files:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return sorted(files)


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


# ---------------------------------------------------------------- commands

def _evaluation(bf, tables, seed, n_eval, band):
    samples = sample_positions(tables.cfg.roi, n_eval, stream(seed, _EVAL))
    values = crlb_values(samples, bf, tables)
    losses = capacity_losses(bf, tables, band, n_eval, seed)
    table = {"avg_crlb_heldout": float(np.mean(values)), "n_eval": int(n_eval),
             "capacity_loss_band": int(band), "capacity_loss_bps": loss_stats(losses)}
    return table, samples, values


def train_samples(cfg, seed):
    return sample_positions(cfg.roi, cfg.n_roi_samples, stream(seed, _TRAIN))


def _load_beams(path, cfg):
    try:
        with open(path, encoding="utf-8") as fh:
            bf = Beamforming.from_dict(json.load(fh))
    except FileNotFoundError:
        raise FileNotFoundError(f"beamforming file not found: {path}") from None
    expected = (cfg.n_bands, cfg.n_subbands, cfg.n_frames, cfg.n_feeds, cfg.n_elements)
    if bf.shape != expected:
        raise ValueError(f"beamforming shape {bf.shape} does not match config {expected}")
    return bf


def _optimize(cfg, tables, seed, method, n_eval, band, **_):
    res = bench.run_method(method, cfg, tables, train_samples(cfg, seed), seed)
    table, samples, values = _evaluation(res.beamforming, tables, seed, n_eval, band)
    files = {
        "beams.json": _dumps(res.beamforming.to_dict()),
        "trace.csv": trace_csv(res.trace),
        "crlb_samples.csv": samples_csv(samples, values),
        "crlb_heatmap.svg": heatmap_svg(res.beamforming, tables),
    }
    return [res.summary()], table, files


def _benchmark(cfg, tables, seed, method, n_eval, band, **_):
    methods = list(bench.METHODS) if method is None else [method]
    train = train_samples(cfg, seed)
    summaries, tables_out, traces = [], {}, []
    for name in methods:
        res = bench.run_method(name, cfg, tables, train, seed)
        summaries.append(res.summary())
        tables_out[name], _, _ = _evaluation(res.beamforming, tables, seed, n_eval, band)
        traces.append(trace_csv(res.trace, method=name))
    merged = traces[0] + "".join(t.split("\n", 1)[1] for t in traces[1:])
    return summaries, tables_out, {"trace.csv": merged}


def _evaluate(cfg, tables, seed, n_eval, band, beams, out, **_):
    bf = _load_beams(beams or Path(out) / "beams.json", cfg)
    table, samples, values = _evaluation(bf, tables, seed, n_eval, band)
    return [], table, {"crlb_samples.csv": samples_csv(samples, values)}


def _gradcheck(cfg, tables, seed, **_):
    samples = train_samples(cfg, seed)
    err_c, err_s = gradient_check(samples, init_vars(cfg, seed), tables)
    err = max(err_c, err_s)
    table = {"rel_err_C": err_c, "rel_err_S": err_s, "max_rel_err": err,
             "tolerance": GRADCHECK_TOL, "passed": bool(err <= GRADCHECK_TOL)}
    return [], table, {}


def _sample_signals(cfg, tables, seed, n_eval, beams, **_):
    bf = _load_beams(beams, cfg) if beams else init_vars(cfg, seed)
    users = sample_positions(cfg.roi, n_eval, stream(seed, _SIGNALS))
    seeds = stream(seed, _SIGNALS).spawn(n_eval)
    header = ["user", "x", "y", "z", "band", "row", "re", "im"]
    rows = []
    for u, (p, ss) in enumerate(zip(users, seeds)):
        y = synth_received(p, bf, tables, seed=ss)
        for i in range(y.shape[0]):
            for r in range(y.shape[1]):
                rows.append([u, *map(float, p), i, r, float(y[i, r].real), float(y[i, r].imag)])
    table = {"n_users": int(n_eval), "rows_per_band": int(cfg.n_subbands * cfg.n_frames)}
    return [], table, {"signals.csv": _csv_text(header, rows)}


_HANDLERS = {
    "optimize": _optimize,
    "benchmark": _benchmark,
    "evaluate": _evaluate,
    "gradcheck": _gradcheck,
    "sample-signals": _sample_signals,
}


def run_experiment(command: str, config_path, seed: int, out, method: Optional[str] = None,
                   band: int = 0, eval_samples: int = 1000, beams=None) -> dict:
    """Run one subcommand and write its outputs; returns the report dict."""
    if command not in _HANDLERS:
        raise ValueError(f"unknown command {command!r}")
    cfg = load_config(config_path)
    if not 0 <= band < cfg.n_bands:
        raise ValueError(f"band must be in [0, {cfg.n_bands - 1}], got {band}")
    if eval_samples < 1:
        raise ValueError("eval_samples must be positive")
    if command == "optimize" and method is None:
        method = "alt"
    with threadpool_limits(limits=thread_limit()):
        tables = build_tables(cfg)
        summaries, evaluation, files = _HANDLERS[command](
            cfg, tables, seed, method=method, n_eval=eval_samples, band=band,
            beams=beams, out=out)
    report = {
        "schema": REPORT_SCHEMA,
        "command": command,
        "seed": int(seed),
        "config": cfg.to_dict(),
        "methods": summaries,
        "evaluation": evaluation,
        "notes": ERROR_MODEL_NOTE,
        "files": sorted(list(files) + ["report.json"]),
    }
    files["report.json"] = _dumps(report)
    write_outputs(out, files)
    return report
