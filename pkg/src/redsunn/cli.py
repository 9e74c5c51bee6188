"""Command-line interface: generate, unmix, eval, baseline-fcls, plot.

Exit codes: 0 success, 2 bad input (arguments, malformed or mismatched
files), 3 numeric divergence during training, 4 I/O failure.  Every
command that takes --seed is deterministic end to end.  The --threads
flag (or the REDSUNN_THREADS environment variable) controls trainer
parallelism only; results do not depend on it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import cubeio
from .baselines import fcls_cube, vca
from .cubeio import CubeFormatError, RunConfig
from .elbo import estimate
from .metrics import evaluate, nrmse_reconstruction
from .mixing import EndmemberBasis, unvec_psi
from .params import init_generative, init_posterior
from .plotting import save_abundance_maps, write_endmember_csv
from .synthdata import Ds1Config, Ds2Config, gen_ds1, gen_ds2
from .trainer import DivergenceError, TrainConfig, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def _threads(args: argparse.Namespace) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("REDSUNN_THREADS", "")
    return max(1, int(env)) if env.strip() else 1


def _shape_dict(t: int, rows: int, cols: int, bands: int, p: int) -> dict:
    return {"t": t, "rows": rows, "cols": cols, "bands": bands, "p": p}


def cmd_generate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.dataset == "ds1":
        cfg = Ds1Config()
        gt = gen_ds1(cfg, rng)
    else:
        cfg = Ds2Config()
        gt = gen_ds2(cfg, rng)
    t_len, n_pix, bands = gt.observed.shape
    rows, cols, p = gt.rows, gt.cols, gt.abundances.shape[2]

    def grid(a: np.ndarray) -> np.ndarray:
        return a.reshape(t_len, rows, cols, -1)

    cubeio.write_cube(out / cubeio.OBSERVED_CUBE, grid(gt.observed))
    cubeio.write_cube(out / cubeio.TRUTH_ABUNDANCES_CUBE, grid(gt.abundances))
    cubeio.write_cube(out / cubeio.TRUTH_SCALINGS_CUBE,
                      grid(gt.scalings.reshape(t_len, n_pix, bands * p)))
    cubeio.write_cube(out / cubeio.CHANGE_MASK_CUBE,
                      grid(gt.change_mask.astype(np.float32)))
    manifest = {
        "dataset": args.dataset,
        "seed": args.seed,
        "config": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in dataclasses.asdict(cfg).items()},
        "shape": _shape_dict(t_len, rows, cols, bands, p),
        "files": {"observed": cubeio.OBSERVED_CUBE,
                  "abundances": cubeio.TRUTH_ABUNDANCES_CUBE,
                  "scalings": cubeio.TRUTH_SCALINGS_CUBE,
                  "change_mask": cubeio.CHANGE_MASK_CUBE},
        "base_endmembers": gt.m0.tolist(),
    }
    cubeio.write_json(out / cubeio.MANIFEST_JSON, "manifest", manifest)
    print(f"wrote {args.dataset} sequence {tuple(gt.observed.shape)} to {out}")
    return EXIT_OK


def cmd_unmix(args: argparse.Namespace) -> int:
    run_cfg = RunConfig.load(args.config)
    if args.epochs is not None:
        run_cfg.epochs = args.epochs
    cube = cubeio.read_cube(args.data)
    t_len, rows, cols, bands = cube.shape
    run_cfg.validate(bands)
    data = cube.reshape(t_len, rows * cols, bands).astype(np.float64)
    cfg = run_cfg.model_config(bands)
    tc = run_cfg.train_config(_threads(args))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / cubeio.EPOCH_LOG_JSONL
    log_path.write_text("")

    def on_epoch(entry: dict) -> None:
        cubeio.append_jsonl(log_path, entry)

    t0 = time.perf_counter()
    try:
        m0 = vca(data.reshape(-1, bands).T, cfg.p,
                 np.random.default_rng(tc.seed))[0]
        if tc.epochs == 0:
            # smoke mode: estimates straight from the initialization,
            # drawn exactly as the trainer would draw it
            rng = np.random.default_rng(tc.seed)
            theta = init_generative(cfg, tc.r_sigma_a, m0, rng)
            phi = init_posterior(cfg, rng)
            history: list[dict] = []
        else:
            theta, phi, history = train(data, cfg, m0, tc,
                                        epoch_callback=on_epoch)
    except DivergenceError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    train_seconds = time.perf_counter() - t0

    basis = EndmemberBasis.create(bands, cfg.k)
    abund, psis = estimate(data, theta, phi, cfg, basis)
    m_est = theta.m0 * (1.0 + np.einsum("lk,tnkp->tnlp", basis.matrix,
                                        unvec_psi(psis, cfg.p, cfg.k)))
    cubeio.write_cube(out / cubeio.ABUNDANCES_CUBE,
                      abund.reshape(t_len, rows, cols, cfg.p))
    cubeio.write_cube(out / cubeio.SCALINGS_CUBE,
                      psis.reshape(t_len, rows, cols, cfg.psi_dim))
    cubeio.save_params(out / cubeio.PARAMS_ARCHIVE,
                       list(theta.named()) + list(phi.named()))
    summary = {
        "method": "redsunn",
        "alignment": "global",
        "config": run_cfg.to_dict(),
        "shape": _shape_dict(t_len, rows, cols, bands, cfg.p),
        "nrmse_y": nrmse_reconstruction(data, m_est, abund),
        "final_elbo": history[-1]["elbo"] if history else None,
        "epochs_run": len(history),
        "timing": {"train_seconds": train_seconds,
                   "total_seconds": time.perf_counter() - t0},
    }
    cubeio.write_json(out / cubeio.SUMMARY_JSON, "summary", summary)
    print(f"unmix done: nrmse_y {summary['nrmse_y']:.4f} "
          f"({len(history)} epochs, {train_seconds:.1f}s)")
    return EXIT_OK


def cmd_baseline_fcls(args: argparse.Namespace) -> int:
    cube = cubeio.read_cube(args.data)
    t_len, rows, cols, bands = cube.shape
    p = args.endmembers
    if not 0 < p <= bands:
        raise ValueError(f"endmember count {p} outside [1, {bands}]")
    data = cube.reshape(t_len, rows * cols, bands).astype(np.float64)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    rng = np.random.default_rng(args.seed)
    m_per_t = np.empty((t_len, bands, p))
    for t in range(t_len):
        m_per_t[t] = vca(data[t].T, p, rng)[0]
    abund = fcls_cube(data, m_per_t)
    m_full = np.broadcast_to(m_per_t[:, None], (t_len, data.shape[1], bands, p))

    cubeio.write_cube(out / cubeio.ABUNDANCES_CUBE,
                      abund.reshape(t_len, rows, cols, p))
    cubeio.write_cube(out / cubeio.ENDMEMBERS_CUBE,
                      m_per_t.reshape(t_len, 1, 1, bands * p))
    (out / cubeio.EPOCH_LOG_JSONL).write_text("")
    summary = {
        "method": "fcls-vca",
        "alignment": "per-time",
        "shape": _shape_dict(t_len, rows, cols, bands, p),
        "nrmse_y": nrmse_reconstruction(data, m_full, abund),
        "final_elbo": None,
        "epochs_run": 0,
        "timing": {"train_seconds": 0.0,
                   "total_seconds": time.perf_counter() - t0},
    }
    cubeio.write_json(out / cubeio.SUMMARY_JSON, "summary", summary)
    print(f"baseline done: nrmse_y {summary['nrmse_y']:.4f}")
    return EXIT_OK


def _load_truth(truth_dir: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    manifest = cubeio.read_json(truth_dir / cubeio.MANIFEST_JSON, "manifest")
    files = manifest["files"]
    y = cubeio.read_cube(truth_dir / files["observed"]).astype(np.float64)
    a = cubeio.read_cube(truth_dir / files["abundances"]).astype(np.float64)
    s = cubeio.read_cube(truth_dir / files["scalings"]).astype(np.float64)
    t_len, rows, cols, bands = y.shape
    p = a.shape[3]
    m0 = np.asarray(manifest["base_endmembers"], dtype=np.float64)
    m = m0 * s.reshape(t_len, rows * cols, bands, p)
    return (y.reshape(t_len, rows * cols, bands),
            a.reshape(t_len, rows * cols, p), m, manifest)


def _load_estimate(est_dir: Path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Return (abundances (T,N,p), endmembers (T,N,bands,p), summary)."""
    summary = cubeio.read_json(est_dir / cubeio.SUMMARY_JSON, "summary")
    a = cubeio.read_cube(est_dir / cubeio.ABUNDANCES_CUBE).astype(np.float64)
    t_len, rows, cols, p = a.shape
    n_pix = rows * cols
    shape = summary["shape"]
    bands = shape["bands"]
    if summary["method"] == "redsunn":
        psis = cubeio.read_cube(est_dir / cubeio.SCALINGS_CUBE)
        psis = psis.reshape(t_len, n_pix, -1).astype(np.float64)
        k = psis.shape[2] // p
        params = cubeio.load_params(est_dir / cubeio.PARAMS_ARCHIVE)
        m0 = params["theta.m0"]
        basis = EndmemberBasis.create(bands, k)
        m = m0 * (1.0 + np.einsum("lk,tnkp->tnlp", basis.matrix,
                                  unvec_psi(psis, p, k)))
    else:
        m_per_t = cubeio.read_cube(est_dir / cubeio.ENDMEMBERS_CUBE)
        m_per_t = m_per_t.reshape(t_len, bands, p).astype(np.float64)
        m = np.broadcast_to(m_per_t[:, None], (t_len, n_pix, bands, p))
    return a.reshape(t_len, n_pix, p), m, summary


def cmd_eval(args: argparse.Namespace) -> int:
    y, a_true, m_true, _ = _load_truth(Path(args.truth))
    a_est, m_est, summary = _load_estimate(Path(args.est))
    if a_true.shape != a_est.shape:
        raise ValueError(
            f"estimate abundances {a_est.shape} do not match ground truth "
            f"{a_true.shape} (T, pixels, P)")
    if m_true.shape[2] != m_est.shape[2]:
        raise ValueError(
            f"estimate has {m_est.shape[2]} bands, ground truth has "
            f"{m_true.shape[2]}")
    alignment = args.align
    if alignment == "auto":
        alignment = summary["alignment"]
    report = evaluate(y, a_true, m_true, a_est, m_est, alignment)
    obj = report.to_dict()
    cubeio.validate_json("metrics", obj)
    text = json.dumps(obj, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    est_dir = Path(args.est)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    a_cube = cubeio.read_cube(est_dir / cubeio.ABUNDANCES_CUBE)
    t_len, rows, cols, p = a_cube.shape
    paths = save_abundance_maps(a_cube.astype(np.float64), out)

    a_est, m_est, _ = _load_estimate(est_dir)
    rng = np.random.default_rng(args.seed)
    samples = []
    for _ in range(args.samples):
        t = int(rng.integers(t_len))
        r = int(rng.integers(rows))
        c = int(rng.integers(cols))
        samples.append((t, r, c, m_est[t, r * cols + c]))
    n_rows = write_endmember_csv(out / "endmember_spectra.csv", samples)
    print(f"wrote {len(paths)} map(s) and {n_rows} spectra rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redsunn",
        description="Multitemporal hyperspectral unmixing with change-aware "
                    "variational inference")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic image sequence")
    g.add_argument("--dataset", choices=("ds1", "ds2"), required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    u = sub.add_parser("unmix", help="fit the model and write estimates")
    u.add_argument("--config", required=True, help="run-config JSON path")
    u.add_argument("--data", required=True, help="observed cube path")
    u.add_argument("--out", required=True)
    u.add_argument("--epochs", type=int, default=None,
                   help="override the config epoch count (0 = smoke mode)")
    u.add_argument("--threads", type=int, default=None)
    u.set_defaults(func=cmd_unmix)

    b = sub.add_parser("baseline-fcls",
                       help="per-instant VCA endmembers + FCLS abundances")
    b.add_argument("--data", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--endmembers", type=int, required=True,
                   help="number of materials to extract")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_baseline_fcls)

    e = sub.add_parser("eval", help="compare an estimate with ground truth")
    e.add_argument("--truth", required=True, help="generate output directory")
    e.add_argument("--est", required=True, help="unmix/baseline directory")
    e.add_argument("--align", choices=("auto", "global", "per-time"),
                   default="auto")
    e.add_argument("--out", default=None, help="also write the JSON here")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render abundance maps and spectra CSV")
    p.add_argument("--est", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=16,
                   help="number of (pixel, instant) spectra to export")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CubeFormatError, ValueError, KeyError,
            jsonschema.ValidationError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
