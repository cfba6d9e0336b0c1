"""Command-line entry point: ``labelprior {train,predict,eval,bench-decode}``.

Exit codes: 0 success, 2 bad input (arguments, config, data files), 3 solver
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import report
from .dataio import (DATA_ENV, DataFormatError, MultiLabelDataset, apply_scaling, data_root,
                     load_model, load_mulan_dataset, load_svmlight_multilabel, maxabs_factors,
                     save_model, split_validation)
from .exact import InfeasibleProblemError, NotSubmodularError
from .model import DimensionError, LossKind, ModelParams, QboProblem, SignConstraint
from .sdp import SdpConfig, SdpConvergenceError
from .solvers import DECODERS, DecoderOptions, decode, resolve_decoder
from .spectral import SpectralConfig, SpectralError
from .trainer import (NonFiniteGradientError, TrainConfig, evaluate_predictions, predict,
                      select_per_label, train)

log = logging.getLogger("labelprior")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3
SOLVER_ERRORS = (SpectralError, SdpConvergenceError, NonFiniteGradientError,
                 InfeasibleProblemError, np.linalg.LinAlgError)
INPUT_ERRORS = (DataFormatError, DimensionError, NotSubmodularError, FileNotFoundError,
                ValueError, KeyError, TypeError, yaml.YAMLError)
GRID_KEYS = ("lambda_W", "lambda_A", "step0")
TRAIN_KEYS = ("loss", "decoder", "sign_constraint", "epochs", "batch_size", "average",
              "average_start_epoch", "lambda_W", "lambda_A", "step0")


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------

def load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    cfg = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: experiment config must be a mapping")
    return cfg


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _resolve_path(p: str) -> Path:
    path = Path(p)
    if path.is_absolute():
        return path
    root = data_root()
    if root is None:
        raise ConfigError(f"relative dataset path {p!r} needs ${DATA_ENV} to be set")
    return root / path


def load_dataset(source: dict) -> MultiLabelDataset:
    """Dataset section of a config: ``{name, format, path, labels, test_path}``."""
    fmt = source.get("format", "mulan")
    if fmt == "mulan":
        name = source.get("name")
        if not name:
            raise ConfigError("mulan datasets need a 'name'")
        if "path" in source:
            directory = _resolve_path(source["path"])
        else:
            directory = data_root()
            if directory is None:
                raise ConfigError(f"set ${DATA_ENV} to the directory holding the Mulan files")
        return load_mulan_dataset(directory, name)
    if fmt == "svmlight":
        v = int(source["labels"])
        zb = bool(source.get("zero_based", False))
        ds = load_svmlight_multilabel(_resolve_path(source["path"]), v, source.get("features"), zb)
        if "test_path" in source:
            test = load_svmlight_multilabel(_resolve_path(source["test_path"]), v, ds.d, zb)
            test.split[:] = "test"
            from .dataio import concat
            ds = concat([ds, test])
        return ds
    raise ConfigError(f"unknown dataset format {fmt!r}")


def _floats(values, key) -> List[float]:
    if not isinstance(values, (list, tuple)):
        values = [values]
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigError(f"grid entry {key!r} must be numbers") from None


def train_config(section: dict, seed: int, **overrides) -> TrainConfig:
    unknown = set(section) - set(TRAIN_KEYS) - {"sdp", "spectral", "n_samples"}
    if unknown:
        raise ConfigError(f"unknown train keys {sorted(unknown)}")
    kw = {k: section[k] for k in TRAIN_KEYS if k in section}
    for k in ("lambda_W", "lambda_A", "step0"):
        if k in kw:
            kw[k] = float(kw[k])
    kw.update(overrides)
    opts = DecoderOptions(SdpConfig(**section.get("sdp", {})),
                          SpectralConfig(**section.get("spectral", {})),
                          int(section.get("n_samples", 100)))
    return TrainConfig(seed=seed, options=opts, **kw)


def _grid(cfg: dict, base: TrainConfig) -> List[dict]:
    grid = cfg.get("grid") or {}
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}")
    axes = {k: _floats(grid[k], k) if k in grid else [getattr(base, k)] for k in GRID_KEYS}
    if any(len(v) == 0 for v in axes.values()):
        raise ConfigError("hyperparameter grid is empty")
    return [dict(zip(GRID_KEYS, combo)) for combo in itertools.product(*axes.values())]


# -- shared helpers --------------------------------------------------------------

def _decode_all(X, params: ModelParams, decoder: str, options, seed: int, threads: int):
    N = X.shape[0]
    if threads <= 1 or N < 64:
        return predict(X, params, decoder, options, seed)
    bounds = np.linspace(0, N, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as ex:
        parts = ex.map(lambda lo_hi: predict(X[lo_hi[0]:lo_hi[1]], params, decoder, options,
                                             seed + int(lo_hi[0])),
                       list(zip(bounds[:-1], bounds[1:])))
        return np.vstack(list(parts))


def _prediction_rows(pred, Y, names, metrics, idx):
    rows = []
    for j, (p, i) in enumerate(zip(pred, idx)):
        rows.append({"instance": int(i),
                     "predicted": " ".join(n for n, s in zip(names, p) if s > 0) or "-",
                     "f1_loss": metrics["per_instance_f1"][j],
                     "hamming_loss": metrics["per_instance_hamming"][j]})
    return rows


def _summary(metrics: dict, split: str, extra: Optional[dict] = None) -> dict:
    rec = {"split": split, "n": metrics["n"], "f1_loss": metrics["f1_loss"],
           "hamming_loss": metrics["hamming_loss"],
           "per_label_error": metrics["per_label_error"]}
    rec.update(extra or {})
    return rec


def _prepare(ds: MultiLabelDataset, factors):
    if factors is None:
        return ds.X
    return apply_scaling(ds.X, np.asarray(factors))


# -- train -----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    ds = load_dataset(cfg.get("dataset") or {})
    fraction = float(cfg.get("valid_fraction", 0.2))
    if "valid" not in set(ds.split):
        ds = split_validation(ds, fraction, args.seed)
    select_by = cfg.get("select_by", "f1")
    if select_by not in ("f1", "hamming"):
        raise ConfigError("select_by must be 'f1' or 'hamming'")
    regime = cfg.get("regime", "single")
    base = train_config(cfg.get("train") or {}, args.seed)
    cells = _grid(cfg, base)
    if regime == "multiple" and base.sign_constraint is not SignConstraint.ZERO:
        raise ConfigError("the per-label ('multiple') regime needs sign_constraint: zero")
    if regime not in ("single", "multiple"):
        raise ConfigError("regime must be 'single' or 'multiple'")

    fit_mask = ds.split != "test"
    factors = maxabs_factors(ds.X[fit_mask]).tolist() if cfg.get("scale", False) else None
    X = _prepare(ds, factors)
    tr, va, te = ds.indices("train"), ds.indices("valid"), ds.indices("test")
    if tr.size == 0 or va.size == 0:
        raise ConfigError("need non-empty train and validation portions")
    eval_decoder = cfg.get("eval_decoder") or base.decoder

    def run_cell(cell):
        c = train_config(cfg.get("train") or {}, args.seed, **cell)
        res = train(X[tr], ds.Y[tr], c)
        dec = resolve_decoder(eval_decoder, ds.V, c.sign_constraint)
        pred = predict(X[va], res.params, dec, c.options, args.seed)
        return c, res, evaluate_predictions(pred, ds.Y[va])

    with ThreadPoolExecutor(max(1, args.threads)) as ex:
        results = list(ex.map(run_cell, cells))
    grid_rows = []
    for i, (cell, (_, res, m)) in enumerate(zip(cells, results)):
        grid_rows.append({"cell": i, **cell, "valid_f1_loss": m["f1_loss"],
                          "valid_hamming_loss": m["hamming_loss"],
                          "final_objective": res.objectives[-1] if res.objectives else None})
    key = "valid_f1_loss" if select_by == "f1" else "valid_hamming_loss"
    full = np.concatenate([tr, va])

    if regime == "single":
        best = min(range(len(cells)), key=lambda i: (grid_rows[i][key], i))
        chosen = {"cell": best, **cells[best]}
        c = train_config(cfg.get("train") or {}, args.seed, **cells[best])
        final = train(X[full], ds.Y[full], c)
        params, curves = final.params, {"final": final.objectives}
    else:
        errs = np.array([m["per_label_error"] for _, _, m in results])
        best_per_label = np.argmin(errs, axis=0)
        chosen = {"per_label_cell": best_per_label.tolist()}
        retrained = {}
        for i in sorted(set(best_per_label.tolist())):
            c = train_config(cfg.get("train") or {}, args.seed, **cells[i])
            retrained[i] = train(X[full], ds.Y[full], c)
        models = [retrained[i].params if i in retrained else results[i][1].params
                  for i in range(len(cells))]
        params = select_per_label(models, errs)
        curves = {f"cell {i}": r.objectives for i, r in retrained.items()}
        c = results[0][0]
    dec = resolve_decoder(eval_decoder, ds.V, params.sign_constraint)

    records = []
    pred_full = _decode_all(X[full], params, dec, c.options, args.seed, args.threads)
    m_full = evaluate_predictions(pred_full, ds.Y[full])
    records.append(_summary(m_full, "train+valid"))
    per_label, title = m_full["per_label_error"], "train+valid"
    if te.size:
        pred_te = _decode_all(X[te], params, dec, c.options, args.seed, args.threads)
        m_te = evaluate_predictions(pred_te, ds.Y[te])
        records.append(_summary(m_te, "test"))
        per_label, title = m_te["per_label_error"], "test"
        report.write_tsv(_prediction_rows(pred_te, ds.Y[te], ds.label_names, m_te, te),
                         out / "predictions_test.tsv")

    cfg_digest = _digest(cfg)
    meta = {"config": cfg, "seed": args.seed, "valid_fraction": fraction,
            "select_by": select_by, "regime": regime, "selected": chosen,
            "decoder": dec, "train_decoder": resolve_decoder(base.decoder, ds.V,
                                                             base.sign_constraint),
            "scale_factors": factors, "metrics": records,
            "provenance": report.provenance(args.seed, cfg_digest)}
    save_model(params, meta, out / "model.json", ds.label_names)
    report.write_tsv(grid_rows, out / "grid.tsv")
    report.write_jsonl([{**r, "provenance": meta["provenance"], "selected": chosen}
                        for r in records], out / "metrics.jsonl")
    report.plot_objectives(curves, out / "objective.png")
    report.plot_per_label(per_label, ds.label_names, out / "per_label_error.png", title)
    report.write_tsv([{"command": "train", "seconds": time.perf_counter() - t_start}],
                     out / "timing.tsv")
    print(report.format_table(grid_rows, ["cell", *GRID_KEYS, "valid_f1_loss",
                                          "valid_hamming_loss"]))
    print(f"selected by {select_by}: {chosen}")
    print(report.format_table(records, ["split", "n", "f1_loss", "hamming_loss"]))
    return EXIT_OK


# -- predict / eval --------------------------------------------------------------

def _dataset_from_args(args, meta: dict) -> MultiLabelDataset:
    if args.config:
        source = load_config(args.config).get("dataset") or {}
    elif args.dataset:
        source = {"name": args.dataset, "format": args.format}
        if args.path:
            source["path"] = args.path
        if args.labels is not None:
            source["labels"] = args.labels
    else:
        source = (meta.get("meta", {}).get("config") or {}).get("dataset")
        if not source:
            raise ConfigError("no dataset given (use --config or --dataset)")
    ds = load_dataset(source)
    m = meta.get("meta", {})
    if "valid" not in set(ds.split) and "valid_fraction" in m:
        ds = split_validation(ds, float(m["valid_fraction"]), int(m.get("seed", 0)))
    return ds


def _select(ds: MultiLabelDataset, split: str) -> np.ndarray:
    if split == "all":
        return np.arange(ds.N)
    if split == "train+valid":
        return np.flatnonzero(ds.split != "test")
    idx = ds.indices(split)
    if idx.size == 0:
        raise ConfigError(f"dataset has no {split!r} instances")
    return idx


def _load_for_inference(args):
    params, payload = load_model(args.model)
    ds = _dataset_from_args(args, payload)
    if ds.d != params.d or ds.V != params.V:
        raise DimensionError(f"model is d={params.d}, V={params.V}; "
                             f"dataset is d={ds.d}, V={ds.V}")
    m = payload.get("meta", {})
    decoder = args.decoder or m.get("decoder", "auto")
    decoder = resolve_decoder(decoder, params.V, params.sign_constraint)
    X = _prepare(ds, m.get("scale_factors"))
    return params, payload, ds, X, decoder


def cmd_predict(args) -> int:
    params, payload, ds, X, decoder = _load_for_inference(args)
    idx = _select(ds, args.split)
    pred = _decode_all(X[idx], params, decoder, DecoderOptions(), args.seed, args.threads)
    names = payload.get("label_names") or ds.label_names
    lines = ["\t".join(n for n, s in zip(names, p) if s > 0) for p in pred]
    text = "".join(line + "\n" for line in lines)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    t_start = time.perf_counter()
    params, payload, ds, X, decoder = _load_for_inference(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    idx = _select(ds, args.split)
    pred = _decode_all(X[idx], params, decoder, DecoderOptions(), args.seed, args.threads)
    m = evaluate_predictions(pred, ds.Y[idx])
    rec = _summary(m, args.split, {"decoder": decoder,
                                   "provenance": report.provenance(args.seed, _digest(
                                       payload.get("meta", {}).get("config")))})
    report.write_jsonl([rec], out / "metrics.jsonl")
    report.write_tsv(_prediction_rows(pred, ds.Y[idx], ds.label_names, m, idx),
                     out / f"predictions_{args.split}.tsv")
    report.plot_per_label(m["per_label_error"], ds.label_names, out / "per_label_error.png",
                          args.split)
    report.write_tsv([{"command": "eval", "seconds": time.perf_counter() - t_start}],
                     out / "timing.tsv")
    print(report.format_table([rec], ["split", "n", "f1_loss", "hamming_loss", "decoder"]))
    return EXIT_OK


# -- bench-decode ----------------------------------------------------------------

def random_problem(rng: np.random.Generator, V: int, prior: str, cardinality: bool):
    A = rng.standard_normal((V, V))
    A = 0.5 * (A + A.T)
    if prior == "nonpos":
        A = -np.abs(A)
    b = rng.standard_normal(V)
    if cardinality:
        return QboProblem.with_cardinality(A, b, int(rng.integers(0, V + 1)))
    return QboProblem(A, b)


def bench_rows(v: int, trials: int, decoders: List[str], seed: int, prior: str = "any",
               cardinality: bool = False, options: Optional[DecoderOptions] = None):
    """Deterministic comparison rows and (separately) wall times per solve."""
    if "exhaustive" in decoders and v > 20:
        raise ConfigError("exhaustive benchmarking limited to v <= 20")
    sc = SignConstraint.NONPOS if prior == "nonpos" else SignConstraint.ANY
    for dname in decoders:
        if dname == "auto":
            raise ConfigError("benchmark concrete decoders, not 'auto'")
        resolve_decoder(dname, v, sc)
    from .exact import exhaustive_decode
    rng = np.random.default_rng(seed)
    rows, times = [], []
    for trial in range(trials):
        problem = random_problem(rng, v, prior, cardinality)
        exact = exhaustive_decode(problem).rounded_value if v <= 20 else None
        for dname in decoders:
            t0 = time.perf_counter()
            sol = decode(problem, dname, options, seed + trial)
            times.append({"trial": trial, "decoder": dname,
                          "seconds": time.perf_counter() - t0})
            ok = exact is not None and exact > 0
            rows.append({
                "trial": trial, "decoder": dname, "V": v,
                "k": problem.cardinality if problem.cardinality is not None else "",
                "exact_value": exact, "rounded_value": sol.rounded_value,
                "relaxation_value": sol.relaxation_value,
                "rounded_ratio": sol.rounded_value / exact if ok else None,
                "relaxation_ratio": sol.relaxation_value / exact if ok else None,
                "feasible": bool(problem.is_feasible(sol.rounded)),
                "approximate": bool(sol.approximate),
            })
    return rows, times


def bench_summary(rows, times, decoders):
    out = []
    for dname in decoders:
        rs = [r for r in rows if r["decoder"] == dname]
        if not rs:
            continue
        ratios = [r["rounded_ratio"] for r in rs if r["rounded_ratio"] is not None]
        relax = [r["relaxation_ratio"] for r in rs if r["relaxation_ratio"] is not None]
        ts = [t["seconds"] for t in times if t["decoder"] == dname]
        out.append({"decoder": dname, "trials": len(rs),
                    "mean_rounded_ratio": float(np.mean(ratios)) if ratios else None,
                    "min_relaxation_ratio": float(np.min(relax)) if relax else None,
                    "feasible_rate": float(np.mean([r["feasible"] for r in rs])),
                    "mean_seconds": float(np.mean(ts))})
    return out


BENCH_COLUMNS = ["trial", "decoder", "V", "k", "exact_value", "rounded_value",
                 "relaxation_value", "rounded_ratio", "relaxation_ratio", "feasible",
                 "approximate"]


def cmd_bench(args) -> int:
    decoders = [d.strip() for d in args.decoders.split(",") if d.strip()]
    unknown = [d for d in decoders if d not in DECODERS]
    if unknown or not decoders:
        raise ConfigError(f"unknown decoders {unknown}; choose from {DECODERS}")
    if args.trials < 0 or args.v < 1:
        raise ConfigError("need v >= 1 and trials >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, times = bench_rows(args.v, args.trials, decoders, args.seed, args.prior,
                             args.constraint == "cardinality")
    report.write_tsv(rows, out / "bench.tsv", BENCH_COLUMNS)
    summary = bench_summary(rows, times, decoders)
    cols = ["decoder", "trials", "mean_rounded_ratio", "min_relaxation_ratio",
            "feasible_rate"]
    # wall times stay out of the deterministic files
    report.write_tsv(summary, out / "bench_summary.tsv", cols)
    report.write_tsv(times, out / "timing.tsv", ["trial", "decoder", "seconds"])
    report.plot_bench(rows, out / "bench.png")
    print(report.format_table(summary, cols + ["mean_seconds"]))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="labelprior", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_, out_help):
        sp_.add_argument("--seed", type=int, default=0)
        sp_.add_argument("--threads", type=int, default=1,
                         help="worker threads for grid cells / decodes, also caps BLAS")
        sp_.add_argument("--out", required=True, help=out_help)

    t = sub.add_parser("train", help="grid search, retrain, test")
    t.add_argument("--config", required=True, help="YAML or JSON experiment config")
    common(t, "output directory")
    t.set_defaults(func=cmd_train)

    for name, func, out_help in (("predict", cmd_predict, "predictions file ('-' for stdout)"),
                                 ("eval", cmd_eval, "output directory")):
        s = sub.add_parser(name)
        s.add_argument("--model", required=True)
        s.add_argument("--config", help="take the dataset section of this config")
        s.add_argument("--dataset", help="Mulan dataset name under $" + DATA_ENV)
        s.add_argument("--format", default="mulan", choices=("mulan", "svmlight"))
        s.add_argument("--path")
        s.add_argument("--labels", type=int)
        s.add_argument("--split", default="test",
                       choices=("train", "valid", "test", "train+valid", "all"))
        s.add_argument("--decoder", choices=DECODERS, help="override the model's decoder")
        common(s, out_help)
        s.set_defaults(func=func)

    b = sub.add_parser("bench-decode", help="compare decoders on random problems")
    b.add_argument("--v", type=int, default=10)
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--decoders", default="exhaustive,mincut,sdp,spectral")
    b.add_argument("--prior", default="nonpos", choices=("any", "nonpos"))
    b.add_argument("--constraint", default="none", choices=("none", "cardinality"))
    common(b, "output directory")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except INPUT_ERRORS as exc:
        print(f"input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
