"""Command-line pipeline: train, score, threshold, eval, ablate-q, synth, convert.

Options can come from a `key = value` config file (--config); explicit
flags override file values, and every run that writes outputs also dumps
the effective configuration next to them so it can be re-fed verbatim.

Exit codes: 0 ok, 2 input error, 3 shape/config error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_DIVERGED = 4

_TRAIN_FIELDS = {
    "q": float,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "weight_decay": float,
    "dropout": float,
    "blocks": int,
    "fc_layers": int,
    "fc_neurons": int,
    "clamp": float,
    "seed": int,
    "standardize": lambda s: s.lower() in ("1", "true", "yes"),
    "loss_kind": str,
}


def _read_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _train_config(args) -> "TrainConfig":
    from .training import TrainConfig

    values: dict = {}
    if args.config:
        raw = _read_config_file(Path(args.config))
        for key, text in raw.items():
            if key in _TRAIN_FIELDS:
                values[key] = _TRAIN_FIELDS[key](text)
    for key in _TRAIN_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return TrainConfig(**values)


def _dump_effective(cfg, extra: dict, path: Path) -> None:
    lines = [f"{name} = {getattr(cfg, name)}" for name in _TRAIN_FIELDS]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n")


def _add_train_flags(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--q", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--weight-decay", dest="weight_decay", type=float)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--blocks", type=int)
    parser.add_argument("--fc-layers", dest="fc_layers", type=int)
    parser.add_argument("--fc-neurons", dest="fc_neurons", type=int)
    parser.add_argument("--clamp", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--standardize", action="store_const", const=True, default=None)
    parser.add_argument("--loss", dest="loss_kind", choices=["quantile", "mean"])


def _load_feature_arg(path_text: str):
    from .features import load_csv, load_features

    path = Path(path_text)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    return load_features(path)


def cmd_train(args) -> int:
    from .training import train

    cfg = _train_config(args)
    features = _load_feature_arg(args.features)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(record):
        print(
            f"epoch {record.epoch}: loss={record.loss:.4f} "
            f"min_ll={record.min_ll:.4f} median_ll={record.median_ll:.4f}",
            flush=True,
        )

    model, log = train(features, cfg, checkpoint_dir=out_dir / "checkpoints", progress=progress)
    model.save(out_dir / "model.qodm")
    log.write(out_dir / "trainlog.txt")
    _dump_effective(cfg, {"features": args.features}, out_dir / "effective.cfg")
    print(f"model written to {out_dir / 'model.qodm'}")
    return EXIT_OK


def cmd_score(args) -> int:
    from .detector import save_scores, save_scores_text, score
    from .flow import FlowModel

    model = FlowModel.load(args.model)
    features = _load_feature_arg(args.features)
    scores = score(model, features, model_id=str(args.model))
    save_scores(scores, args.out)
    if args.text:
        save_scores_text(scores, args.text)
    print(f"scored {len(scores)} samples -> {args.out}")
    return EXIT_OK


def cmd_threshold(args) -> int:
    from .detector import load_scores, save_threshold, select_threshold

    scores = load_scores(args.scores)
    threshold = select_threshold(scores, beta=args.beta)
    save_threshold(threshold, args.out)
    print(f"tau={threshold.tau!r} beta={threshold.beta}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .flow import FlowModel
    from .metrics import evaluate

    model = FlowModel.load(args.model)
    inliers = _load_feature_arg(args.inliers)
    outliers = _load_feature_arg(args.outliers)
    report, in_scores, out_scores = evaluate(model, inliers, outliers, beta=args.beta)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.table() + "\n")
    (out_dir / "report.kv").write_text("\n".join(report.kv_lines()) + "\n")
    if args.export_scores:
        from .detector import save_scores

        save_scores(in_scores, out_dir / "inlier_scores.qods")
        save_scores(out_scores, out_dir / "outlier_scores.qods")
    print(report.table())
    return EXIT_OK


def cmd_ablate_q(args) -> int:
    import numpy as np

    from .metrics import auroc, fpr_at_tpr
    from .detector import score
    from .objective import quantile
    from .synthetic import heavy_tailed_task
    from .training import LOSS_MEAN, LOSS_QUANTILE, train

    q_values = []
    for token in args.q_list.split(","):
        token = token.strip()
        q_values.append(None if token == "mean" else float(token))

    cfg = _train_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ["loss\tq\tseed\tfpr95\tauroc\tll_p05"]
    summary = {}
    for q in q_values:
        per_seed = []
        for offset in range(args.seeds):
            seed = cfg.seed + offset
            if args.inliers and args.held_out and args.outliers:
                train_fs = _load_feature_arg(args.inliers)
                held_fs = _load_feature_arg(args.held_out)
                out_fs = _load_feature_arg(args.outliers)
            else:
                task = heavy_tailed_task(dim=args.dim, seed=seed)
                train_fs, held_fs, out_fs = task.train, task.held_out, task.outliers
            if q is None:
                run_cfg = _replace(cfg, loss_kind=LOSS_MEAN, seed=seed)
            else:
                run_cfg = _replace(cfg, loss_kind=LOSS_QUANTILE, q=q, seed=seed)
            model, _ = train(train_fs, run_cfg)
            held_scores = score(model, held_fs)
            out_scores = score(model, out_fs)
            row_fpr = fpr_at_tpr(held_scores, out_scores)
            row_auc = auroc(held_scores, out_scores)
            ll_p05, _, _, _ = quantile(held_scores.scores, 0.05)
            label = "mean" if q is None else "quantile"
            q_text = "-" if q is None else repr(q)
            rows.append(f"{label}\t{q_text}\t{seed}\t{row_fpr!r}\t{row_auc!r}\t{ll_p05!r}")
            per_seed.append((row_fpr, row_auc, ll_p05))
        arr = np.array(per_seed)
        summary[q] = tuple(np.median(arr, axis=0))
    for q, (med_fpr, med_auc, med_ll) in summary.items():
        label = "mean" if q is None else "quantile"
        q_text = "-" if q is None else repr(q)
        rows.append(f"median:{label}\t{q_text}\t-\t{med_fpr!r}\t{med_auc!r}\t{med_ll!r}")
    (out_dir / "ablation.tsv").write_text("\n".join(rows) + "\n")
    _dump_effective(cfg, {"q_list": args.q_list, "seeds": args.seeds}, out_dir / "effective.cfg")
    print("\n".join(rows))
    return EXIT_OK


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


def _parse_dist_spec(text: str, dim: int, seed: int):
    from . import synthetic

    kind, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            params[key.strip()] = value.strip()
    if kind == "normal":
        return synthetic.standard_normal(dim=dim, seed=seed)
    if kind == "uniform":
        lo = float(params.get("lo", "-1"))
        hi = float(params.get("hi", "1"))
        return synthetic.uniform_box(lo, hi, dim=dim, seed=seed)
    if kind == "student-t":
        return synthetic.student_t(
            dof=float(params.get("dof", "4")),
            scale=float(params.get("scale", "1")),
            dim=dim,
            seed=seed,
        )
    if kind == "mixture":
        # components separated by '|', each 'weight@mean*sd' with scalar
        # mean/sd broadcast over dims, e.g. "0.85@0*1|0.15@3*2"
        comps = []
        import numpy as np

        for part in params.get("components", "0.5@0*1|0.5@3*1").split("|"):
            weight, _, moments = part.partition("@")
            mean_text, _, sd_text = moments.partition("*")
            mean = np.full(dim, float(mean_text))
            var = np.full(dim, float(sd_text) ** 2)
            comps.append((mean, var, float(weight)))
        return synthetic.gaussian_mixture(comps, dim=dim, seed=seed)
    raise ValueError(f"unknown distribution spec {text!r}")


def cmd_synth(args) -> int:
    from .features import save_features
    from .synthetic import sample

    spec = _parse_dist_spec(args.spec, dim=args.dim, seed=args.seed)
    fs = sample(spec, args.n)
    save_features(fs, args.out)
    print(f"wrote {fs.count} x {fs.dim} features -> {args.out}")
    return EXIT_OK


def cmd_convert(args) -> int:
    from .features import load_csv, load_features, save_csv, save_features

    src, dst = Path(args.src), Path(args.dst)
    if not src.exists():
        raise FileNotFoundError(f"input file not found: {src}")
    if src.suffix.lower() == ".csv":
        fs = load_csv(src, labels=args.labels)
        save_features(fs, dst)
    else:
        fs = load_features(src)
        save_csv(fs, dst)
    print(f"converted {src} -> {dst} ({fs.count} x {fs.dim})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantflow",
        description="Density-based outlier detection with a quantile-trained flow.",
    )
    parser.add_argument("--threads", type=int, default=None, help="cap worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a flow to inlier features")
    _add_train_flags(p)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="log-likelihood scores for a feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--text", help="also write two-column text scores")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("threshold", help="pick the TPR-beta threshold from scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--beta", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("eval", help="FPR95/AUROC/AUPR report for inliers vs outliers")
    p.add_argument("--model", required=True)
    p.add_argument("--inliers", required=True)
    p.add_argument("--outliers", required=True)
    p.add_argument("--beta", type=float, default=0.95)
    p.add_argument("--out", required=True)
    p.add_argument("--export-scores", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-q", help="compare quantile levels against the mean loss")
    _add_train_flags(p)
    p.add_argument("--q-list", default="mean,0.05", help="comma list of q values or 'mean'")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--inliers", help="training features (else the built-in synthetic task)")
    p.add_argument("--held-out", dest="held_out")
    p.add_argument("--outliers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate_q)

    p = sub.add_parser("synth", help="generate a feature file from a distribution spec")
    p.add_argument("--spec", required=True, help="normal | uniform:lo=..,hi=.. | student-t:dof=..,scale=.. | mixture:components=w@m*sd|..")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert between CSV and QODF")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--labels", action="store_true", help="CSV has a final label column")
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # cap BLAS pools before numpy loads; numba is capped after import
    if "--threads" in argv:
        try:
            threads = argv[argv.index("--threads") + 1]
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ.setdefault(var, threads)
        except IndexError:
            pass

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))

    from .errors import (
        ConfigError,
        DivergenceError,
        FeatureFormatError,
        ShapeMismatchError,
    )

    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ShapeMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, FeatureFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
