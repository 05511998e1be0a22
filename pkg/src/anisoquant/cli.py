"""Command-line interface.

Verbs: ``gen``, ``convert``, ``diagnose``, ``train``, ``encode``, ``search``,
``eval`` and ``eta``. ``train``, ``encode`` and ``eval`` read an optional
JSON experiment document (``--config``); individual flags override it.

Exit status is 0 on success, 2 for invalid input or configuration and 3
for numerical/runtime failures.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import Dataset, diagnose, generate_synthetic, read_fvecs, unit_normalize, write_fvecs
from .errors import AnisoQuantError, ValidationError
from .formats import read_codebook, read_codes, write_codebook, write_codes
from .geometry import AnisotropicWeights, eta_exact, eta_limit, indicator_weights
from .index import adc_search, evaluate, exact_search
from .pq import ProductCodebook, pq_quantize, train_apq, train_l2_pq
from .vq import Codebook, TrainConfig, train_avq, vq_quantize

log = logging.getLogger("anisoquant")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3

DEFAULT_CONFIG = {
    "data": None,
    "normalize": True,
    "loss": {"type": "score_aware", "threshold": 0.2, "eta": None, "eta_mode": "limit"},
    "quantizer": {"type": "pq", "M": 8, "k": 16},
    "train": {
        "max_iterations": 100,
        "relative_tolerance": 1e-6,
        "empty_partition_policy": "reseed",
        "ridge": None,
        "sweeps": 1,
        "warm_start": True,
    },
    "encode": {"passes": 1},
    "eval": {"queries": None, "ground_truth": None, "Ns": [1, 10, 100], "k": 10, "cache_dir": None},
    "output": None,
    "seed": 0,
}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# experiment config


@dataclass
class ExperimentConfig:
    data: str | None = None
    normalize: bool = True
    loss: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["loss"]))
    quantizer: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["quantizer"]))
    train: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["train"]))
    encode: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["encode"]))
    eval: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG["eval"]))
    output: str | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        merged = _deep_merge(copy.deepcopy(DEFAULT_CONFIG), doc)
        unknown = set(merged) - set(DEFAULT_CONFIG)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        loss_type = self.loss.get("type")
        if loss_type not in ("reconstruction", "score_aware"):
            raise ValidationError("loss.type must be 'reconstruction' or 'score_aware'")
        if loss_type == "score_aware":
            if self.loss.get("eta") is None and self.loss.get("threshold") is None:
                raise ValidationError("score_aware loss needs loss.threshold or loss.eta")
            if self.loss.get("eta_mode") not in ("limit", "exact"):
                raise ValidationError("loss.eta_mode must be 'limit' or 'exact'")
            if self.loss.get("eta") is not None and self.loss["eta"] < 0:
                raise ValidationError("loss.eta must be non-negative")
        qtype = self.quantizer.get("type")
        if qtype not in ("vq", "pq"):
            raise ValidationError("quantizer.type must be 'vq' or 'pq'")
        if int(self.quantizer.get("k", 0)) < 1:
            raise ValidationError("quantizer.k must be >= 1")
        if qtype == "pq" and int(self.quantizer.get("M", 0)) < 1:
            raise ValidationError("quantizer.M must be >= 1")
        self.train_config()  # raises on bad values

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            max_iterations=int(t["max_iterations"]),
            relative_tolerance=float(t["relative_tolerance"]),
            seed=int(self.seed),
            empty_partition_policy=t["empty_partition_policy"],
            ridge=None if t["ridge"] is None else float(t["ridge"]),
            sweeps=int(t["sweeps"]),
        )

    def as_dict(self) -> dict:
        return asdict(self)


def _deep_merge(base: dict, over: dict) -> dict:
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = _deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def _set_path(doc: dict, dotted: str, value) -> None:
    node = doc
    *parents, leaf = dotted.split(".")
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


# flag dest -> config path
_OVERRIDES = {
    "data": "data",
    "normalize": "normalize",
    "loss": "loss.type",
    "threshold": "loss.threshold",
    "eta": "loss.eta",
    "eta_mode": "loss.eta_mode",
    "quantizer": "quantizer.type",
    "M": "quantizer.M",
    "k": "quantizer.k",
    "max_iterations": "train.max_iterations",
    "tolerance": "train.relative_tolerance",
    "empty_policy": "train.empty_partition_policy",
    "ridge": "train.ridge",
    "sweeps": "train.sweeps",
    "warm_start": "train.warm_start",
    "passes": "encode.passes",
    "queries": "eval.queries",
    "ground_truth": "eval.ground_truth",
    "Ns": "eval.Ns",
    "eval_k": "eval.k",
    "cache_dir": "eval.cache_dir",
    "out": "output",
    "seed": "seed",
}


def load_config(args) -> ExperimentConfig:
    doc: dict = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file is not valid JSON: {exc}") from None
    for dest, path in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            _set_path(doc, path, value)
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# helpers


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_dataset(path, normalize: bool, what: str = "dataset") -> Dataset:
    if path is None:
        raise ValidationError(f"no {what} path given")
    if not Path(path).exists():
        raise ValidationError(f"{what} file not found: {path}")
    ds = read_fvecs(path)
    if ds.n == 0:
        raise ValidationError(f"{what} file {path} is empty")
    return unit_normalize(ds) if normalize else ds


def resolve_weights(cfg: ExperimentConfig, ds: Dataset) -> tuple[AnisotropicWeights, dict]:
    """Loss weights for ``ds`` under the configured loss, plus a log record."""
    loss = cfg.loss
    if loss["type"] == "reconstruction":
        return AnisotropicWeights.isotropic(), {"loss": "reconstruction", "eta": 1.0}
    if loss.get("eta") is not None:
        eta = float(loss["eta"])
        return AnisotropicWeights.from_eta(eta), {"loss": "score_aware", "eta": eta, "eta_source": "explicit"}
    T = float(loss["threshold"])
    # unit-norm data read back from float32 is normalized only to ~1e-7
    norms = np.ones(ds.n) if ds.normalized else ds.norms
    if loss["eta_mode"] == "exact":
        w = indicator_weights(T, norms, ds.d)
        etas = np.asarray(w.eta)
        record = {"loss": "score_aware", "threshold": T, "eta_source": "exact"}
    else:
        if np.any(norms <= T):
            raise ValidationError("eta_mode 'limit' needs every norm above the threshold; use 'exact'")
        etas = np.array([eta_limit(T, float(nm), ds.d) for nm in norms])
        w = AnisotropicWeights(etas, 1.0)
        record = {"loss": "score_aware", "threshold": T, "eta_source": "limit"}
    if np.allclose(etas, etas[0], rtol=0, atol=1e-12):
        record["eta"] = float(etas[0])
        if loss["eta_mode"] == "limit":
            w = AnisotropicWeights.from_eta(float(etas[0]))
    else:
        record.update(eta_min=float(etas.min()), eta_max=float(etas.max()), eta_mean=float(etas.mean()))
    return w, record


def _threads(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    total = args.n + (args.queries or 0)
    ds = generate_synthetic(
        args.kind, total, args.d, args.seed,
        centers=args.centers, spread=args.spread, normalize=not args.no_normalize,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_fvecs(ds.values[: args.n], out)
    meta = {
        "kind": args.kind, "n": args.n, "d": args.d, "seed": args.seed,
        "centers": args.centers, "spread": args.spread, "normalized": not args.no_normalize,
        "base": {"path": out.name, "sha256": file_digest(out)},
    }
    if args.queries:
        qpath = out.with_name(out.stem + ".queries.fvecs")
        write_fvecs(ds.values[args.n :], qpath)
        meta["queries"] = {"path": qpath.name, "n": args.queries, "sha256": file_digest(qpath)}
    _write_json(out.with_name(out.name + ".json"), meta)
    print(f"wrote {out} ({args.n} x {args.d})")
    return EXIT_OK


def _read_any(path: Path) -> np.ndarray:
    suffix = path.suffix.lower()
    if suffix == ".fvecs":
        return read_fvecs(path, validate=False)
    if suffix == ".npy":
        return np.load(path)
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                # word-vector text format: leading token is the word
                rows.append([float(p) for p in parts[1:]])
    return np.asarray(rows, dtype=float)


def cmd_convert(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    if not src.exists():
        raise ValidationError(f"input file not found: {src}")
    arr = np.asarray(_read_any(src), dtype=float)
    if arr.ndim != 2:
        raise ValidationError("input must be a 2-D matrix")
    if args.normalize:
        arr = unit_normalize(arr).values
    else:
        Dataset.from_array(arr)  # validation only
    if dst.suffix.lower() == ".npy":
        np.save(dst, arr.astype(np.float32))
    else:
        write_fvecs(arr, dst)
    print(f"wrote {dst} ({arr.shape[0]} x {arr.shape[1]})")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    ds = _load_dataset(args.input, normalize=False)
    report = diagnose(ds)
    print(f"n\t{ds.n}\nd\t{ds.d}")
    print(f"variance_ratio\t{report.variance_ratio:.6g}")
    print(f"max_abs_offdiagonal_correlation\t{report.max_abs_offdiagonal_correlation:.6g}")
    print(f"variance_min\t{report.per_dimension_variance.min():.6g}")
    print(f"variance_max\t{report.per_dimension_variance.max():.6g}")
    if args.json:
        _write_json(Path(args.json), report.as_dict())
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    if cfg.output is None:
        raise ValidationError("no output directory given (--out or 'output')")
    ds = _load_dataset(cfg.data, cfg.normalize)
    weights, weight_record = resolve_weights(cfg, ds)
    tc = cfg.train_config()
    q = cfg.quantizer
    k = int(q["k"])
    isotropic = weights.is_isotropic
    if q["type"] == "vq":
        book, result = train_avq(ds, k, weights, tc)
        codes = result.assignments[:, None]
    elif isotropic:
        # score-aware with eta == 1 is the reconstruction loss
        book, result = train_l2_pq(ds, int(q["M"]), k, tc)
        codes = result.assignments
    else:
        book, result = train_apq(ds, int(q["M"]), k, weights, tc, warm_start=bool(cfg.train["warm_start"]))
        codes = result.assignments

    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_codebook(out / "codebook.bin", book)
    write_codes(out / "codes.bin", codes, k)
    with open(out / "train_log.jsonl", "w") as f:
        f.write(json.dumps({"event": "weights", **weight_record}, sort_keys=True) + "\n")
        for it, loss in enumerate(result.loss_history):
            f.write(json.dumps({"event": "iteration", "iteration": it, "loss": loss}, sort_keys=True) + "\n")
        f.write(json.dumps({"event": "done", "converged": result.converged,
                            "iterations": result.iterations}, sort_keys=True) + "\n")
    manifest = {
        "command": "train",
        "version": __version__,
        "config": cfg.as_dict(),
        "resolved_train_config": asdict(tc),
        "weights": weight_record,
        "inputs": {"data": {"path": str(cfg.data), "sha256": file_digest(cfg.data)}},
        "outputs": {name: file_digest(out / name) for name in ("codebook.bin", "codes.bin", "train_log.jsonl")},
    }
    _write_json(out / "manifest.json", manifest)
    final = result.loss_history[-1] if result.loss_history else float("nan")
    print(f"trained {q['type']} codebook: {result.iterations} iterations, final loss {final:.6g}, eta {weight_record.get('eta', 'per-point')}")
    return EXIT_OK


def _load_artifacts(cfg_or_dir, codebook=None, codes=None):
    base = Path(cfg_or_dir) if cfg_or_dir else None
    cb_path = Path(codebook) if codebook else (base / "codebook.bin" if base else None)
    codes_path = Path(codes) if codes else (base / "codes.bin" if base else None)
    for p, what in ((cb_path, "codebook"), (codes_path, "codes")):
        if p is None or not p.exists():
            raise ValidationError(f"missing {what} artifact: {p}")
    book = read_codebook(cb_path)
    code_matrix, k = read_codes(codes_path)
    return book, code_matrix, cb_path, codes_path


def cmd_encode(args) -> int:
    cfg = load_config(args)
    ds = _load_dataset(cfg.data, cfg.normalize)
    if not args.codebook or not Path(args.codebook).exists():
        raise ValidationError(f"missing codebook artifact: {args.codebook}")
    book = read_codebook(args.codebook)
    weights, record = resolve_weights(cfg, ds)
    if isinstance(book, Codebook):
        codes = vq_quantize(ds, book, weights).codes
    else:
        passes = cfg.encode.get("passes")
        codes = pq_quantize(ds, book, weights, passes=None if passes is None else int(passes))
    dest = Path(args.codes_out or (Path(cfg.output) / "codes.bin" if cfg.output else "codes.bin"))
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_codes(dest, codes, book.k)
    print(f"encoded {ds.n} points -> {dest} (eta {record.get('eta', 'per-point')})")
    return EXIT_OK


def cmd_search(args) -> int:
    if args.query_file:
        queries = read_fvecs(args.query_file, validate=False)
        if queries.shape[0] == 0:
            raise ValidationError("query file is empty")
        q = np.asarray(queries[args.query_index], dtype=float)
    elif args.query:
        q = np.array([float(v) for v in args.query.split(",")])
    else:
        raise ValidationError("give --query-file or --query")
    if args.exact:
        ds = _load_dataset(args.data, normalize=False)
        result = exact_search(q, ds, args.topN)
    else:
        book, codes, _, _ = _load_artifacts(args.artifacts, args.codebook, args.codes)
        result = adc_search(q, codes, book, args.topN)
    for idx, score in result.hits:
        print(f"{idx}\t{score:.9g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args)
    ds = _load_dataset(cfg.data, cfg.normalize)
    qs = _load_dataset(cfg.eval["queries"], cfg.normalize, what="query")
    book, codes, cb_path, codes_path = _load_artifacts(args.artifacts, args.codebook, args.codes)
    if codes.shape[0] != ds.n:
        raise ValidationError(f"codes have {codes.shape[0]} rows but the dataset has {ds.n}")
    gt = None
    if cfg.eval.get("ground_truth"):
        from .datasets import read_ivecs

        gt = read_ivecs(cfg.eval["ground_truth"])
    meta = {"codebook_sha256": file_digest(cb_path), "codes_sha256": file_digest(codes_path)}
    report = evaluate(
        qs, ds, codes, book, meta, cfg.eval["Ns"],
        k=int(cfg.eval["k"]), ground_truth_indices=gt, cache_dir=cfg.eval.get("cache_dir"),
    )
    sys.stdout.write(report.to_text())
    if cfg.output:
        report.write(cfg.output, stem=args.stem)
    return EXIT_OK


def eta_table(T: float, norm: float, d_max: int, d_min: int = 2) -> list[dict]:
    if d_min < 2 or d_max < d_min:
        raise ValidationError("need 2 <= d_min <= d_max")
    rows = []
    for d in range(d_min, d_max + 1):
        exact = eta_exact(T, norm, d)
        limit = eta_limit(T, norm, d)
        rows.append({"d": d, "eta_exact": exact, "eta_limit": limit,
                     "eta_exact_per_dim": exact / (d - 1), "limit_per_dim": limit / (d - 1)})
    return rows


def cmd_eta(args) -> int:
    rows = eta_table(args.T, args.norm, args.d_max, args.d_min)
    if args.json:
        print(json.dumps(rows))
        return EXIT_OK
    print("d\teta_exact\teta_limit\teta_exact/(d-1)\tlimit/(d-1)")
    for r in rows:
        print(f"{r['d']}\t{r['eta_exact']:.10g}\t{r['eta_limit']:.10g}\t"
              f"{r['eta_exact_per_dim']:.10g}\t{r['limit_per_dim']:.10g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment document")
    p.add_argument("--data", help="dataset (fvecs)")
    p.add_argument("--normalize", dest="normalize", action="store_const", const=True, default=None)
    p.add_argument("--no-normalize", dest="normalize", action="store_const", const=False)
    p.add_argument("--loss", choices=["reconstruction", "score_aware"])
    p.add_argument("--threshold", "-T", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--eta-mode", choices=["limit", "exact"])
    p.add_argument("--quantizer", choices=["vq", "pq"])
    p.add_argument("-M", type=int)
    p.add_argument("-k", type=int)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--empty-policy", choices=["reseed", "keep"])
    p.add_argument("--ridge", type=float)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--warm-start", dest="warm_start", action="store_const", const=True, default=None)
    p.add_argument("--no-warm-start", dest="warm_start", action="store_const", const=False)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anisoquant", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=["uniform_sphere", "gaussian_mixture"], default="gaussian_mixture")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--queries", type=int, default=0, help="extra held-out rows written as queries")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--centers", type=int, default=32)
    p.add_argument("--spread", type=float, default=0.5)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert", help="convert .npy/.txt/.fvecs to fvecs or npy")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--normalize", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("diagnose", help="per-dimension variance and correlation")
    p.add_argument("--input", required=True)
    p.add_argument("--json")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("train", help="train a codebook")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a dataset with a trained codebook")
    _add_experiment_flags(p)
    p.add_argument("--codebook", required=True)
    p.add_argument("--passes", type=int)
    p.add_argument("--codes-out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", help="top-N search for one query")
    p.add_argument("--artifacts", help="directory holding codebook.bin and codes.bin")
    p.add_argument("--codebook")
    p.add_argument("--codes")
    p.add_argument("--data", help="dataset for --exact search")
    p.add_argument("--exact", action="store_true")
    p.add_argument("--query-file")
    p.add_argument("--query-index", type=int, default=0)
    p.add_argument("--query", help="comma-separated query vector")
    p.add_argument("--topN", "--top-n", type=int, default=10)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="recall and relative-error report")
    _add_experiment_flags(p)
    p.add_argument("--artifacts", help="directory holding codebook.bin and codes.bin")
    p.add_argument("--codebook")
    p.add_argument("--codes")
    p.add_argument("--queries")
    p.add_argument("--ground-truth")
    p.add_argument("--Ns", type=_csv_ints)
    p.add_argument("--eval-k", type=int)
    p.add_argument("--cache-dir")
    p.add_argument("--stem", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eta", help="tabulate exact and limit eta against d")
    p.add_argument("-T", "--threshold", dest="T", type=float, required=True)
    p.add_argument("--norm", type=float, default=1.0)
    p.add_argument("--d-max", type=int, default=256)
    p.add_argument("--d-min", type=int, default=2)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eta)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(args.threads):
            return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (AnisoQuantError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
