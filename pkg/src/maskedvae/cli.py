"""Command-line experiment harness.

Ties ingestion, mask generation, training, evaluation, statistics, and grid
rendering into reproducible runs.  Subcommands: make-masks, train, evaluate,
experiment, visualize.  Every run is driven by an ExperimentConfig whose
fields can come from a config file (one KEY=VALUE per line, # comments) with
command-line flags taking precedence.

All artifacts (masks, checkpoints, metric records, grids) are derived from
(config, seed) alone, so a repeated run in a fresh directory reproduces them
byte for byte, and an interrupted experiment resumes from its partial
results.
"""

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from maskedvae import evaluation, idx, stats, synthdigits
from maskedvae.masking import (
    MASK_TABLES,
    MaskedSample,
    assign_mnar_configs,
    generate_masks,
)
from maskedvae.model import DATASET_SPECS, MaskedVAE, Variant
from maskedvae.rng import child_seed, substream
from maskedvae.training import TrainConfig, load_model_for_eval, train

DATASETS = ("mnist", "svhn")
MISSINGNESS = ("mcar", "mnar")
METHODS = tuple(v.value for v in Variant)
NUM_CLASSES = 10

# expected IDX file names under --data-dir (classic layout for both datasets)
IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class CliError(Exception):
    """User-facing configuration or input problem."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; see the config-file grammar in the module doc."""

    dataset: str = "mnist"
    missingness: str = "mcar"
    methods: tuple = METHODS
    replicates: int = 1
    seed: int = 0
    data_dir: str = ""
    out_dir: str = "runs/experiment"
    train_count: int = 50000
    val_count: int = 10000
    test_count: int = 10000
    eval_count: int = 0  # 0 evaluates every test image
    grid_count: int = 8
    k: int = 256
    s: int = 256
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    verbose: bool = False

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise CliError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.missingness not in MISSINGNESS:
            raise CliError(
                f"missingness must be one of {MISSINGNESS}, got {self.missingness!r}"
            )
        methods = tuple(self.methods)
        if not methods:
            raise CliError("methods must be nonempty")
        for m in methods:
            if m not in METHODS:
                raise CliError(f"unknown method {m!r}; choose from {METHODS}")
        if len(set(methods)) != len(methods):
            raise CliError(f"duplicate method in {methods}")
        object.__setattr__(self, "methods", methods)
        if self.replicates < 1:
            raise CliError("replicates must be >= 1")
        if min(self.train_count, self.val_count, self.test_count) < 1:
            raise CliError("train/val/test counts must be positive")
        if self.eval_count < 0 or self.grid_count < 1:
            raise CliError("eval_count must be >= 0 and grid_count >= 1")
        if self.k < 1 or self.s < 1:
            raise CliError("k and s must be >= 1")

    def train_config(self, train_seed: int) -> TrainConfig:
        # patience beyond max_epochs can never trigger; clamp instead of erroring
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=min(self.patience, self.max_epochs),
            seed=train_seed,
        )


_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value: str):
    kind = _FIELDS[key]
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError(f"{key}: expected a boolean, got {value!r}")
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    if kind is tuple:
        return tuple(part.strip() for part in value.split(",") if part.strip())
    return value


def read_config_file(path) -> dict:
    """Parse KEY=VALUE lines; # starts a comment, blank lines are skipped."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected KEY=VALUE, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower().replace("-", "_")
        if key not in _FIELDS:
            raise CliError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values


# -- data ------------------------------------------------------------------


def _split_counts(source, train_count, val_count, seed):
    """Seed-permuted (train, val) subsets; unused leftovers are dropped."""
    n = len(source)
    if train_count + val_count > n:
        raise CliError(
            f"train_count + val_count = {train_count + val_count} "
            f"exceeds the {n} available training images"
        )
    perm = substream(seed, "train-val-split").permutation(n)
    ti = np.sort(perm[:train_count])
    vi = np.sort(perm[train_count : train_count + val_count])
    return (
        idx.ImageDataset(source.images[ti], source.labels[ti], source.name),
        idx.ImageDataset(source.images[vi], source.labels[vi], source.name),
    )


def load_experiment_data(config: ExperimentConfig):
    """(train, val, test) ImageDatasets for the configured dataset.

    Reads IDX files from data_dir when present.  For mnist a missing data
    directory falls back to the bundled synthetic digit renderer (with a
    warning); svhn has no synthetic stand-in and requires real files.
    """
    split_seed = child_seed(config.seed, "data-split")
    if config.data_dir:
        paths = {key: Path(config.data_dir) / name for key, name in IDX_NAMES.items()}
        missing = [str(p) for p in paths.values() if not p.exists()]
        if not missing:
            source = idx.load_pair(
                paths["train_images"], paths["train_labels"], config.dataset
            )
            train, val = _split_counts(
                source, config.train_count, config.val_count, split_seed
            )
            test = idx.load_pair(
                paths["test_images"], paths["test_labels"], config.dataset
            )
            expected = DATASET_SPECS[config.dataset](Variant.NO_IND).image_shape
            if tuple(train.image_shape) != tuple(expected):
                raise CliError(
                    f"{config.dataset} expects images shaped {expected}, "
                    f"data directory holds {tuple(train.image_shape)}"
                )
            return train, val, test
        if config.dataset == "svhn":
            raise CliError(f"svhn needs IDX data files; missing: {', '.join(missing)}")
        print(
            f"warning: missing {', '.join(missing)}; using synthetic digits",
            file=sys.stderr,
        )
    elif config.dataset == "svhn":
        raise CliError("svhn requires --data-dir with IDX files")
    else:
        print(
            "warning: no --data-dir given; using synthetic digits", file=sys.stderr
        )
    train = synthdigits.make_dataset(config.train_count, split_seed, purpose="train")
    val = synthdigits.make_dataset(config.val_count, split_seed, purpose="val")
    test = synthdigits.make_dataset(config.test_count, split_seed, purpose="test")
    return train, val, test


# -- per-replicate plumbing -------------------------------------------------


def replicate_seed_for(config: ExperimentConfig, replicate: int) -> int:
    return child_seed(config.seed, "replicate", replicate)


def make_replicate_masks(config: ExperimentConfig, rep_seed: int, datasets):
    """Frozen masks for every split of one replicate.

    All methods of the replicate share these masks; under MNAR one
    label-to-config assignment covers all three splits.
    """
    train, val, test = datasets
    table = MASK_TABLES[config.dataset]
    h, w = train.image_shape[:2]
    assignment = None
    if config.missingness == "mnar":
        assignment = assign_mnar_configs(
            table, NUM_CLASSES, substream(rep_seed, "mnar-assignment")
        )
    masks = {}
    for split, ds in (("train", train), ("val", val), ("test", test)):
        labels = ds.labels if config.missingness == "mnar" else None
        masks[split] = generate_masks(
            table,
            h,
            w,
            len(ds),
            rep_seed,
            split,
            labels=labels,
            num_classes=NUM_CLASSES,
            assignment=assignment,
        )
    return masks, assignment


def _corrupt(images, masks):
    return np.asarray(images * masks[..., None], dtype=np.float32)


def _test_samples(test, masks, limit):
    count = len(test) if limit == 0 else min(limit, len(test))
    out = []
    for i in range(count):
        out.append(
            MaskedSample.zero_filled(
                np.asarray(test.images[i], dtype=np.float64),
                np.asarray(masks[i], dtype=np.float64),
                int(test.labels[i]),
            )
        )
    return out


def _checkpoint_path(out: Path, replicate: int, method: str) -> Path:
    return out / "checkpoints" / f"rep{replicate:03d}-{method}.ckpt"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def train_one_method(config, datasets, masks, replicate, rep_seed, method):
    """Train (or resume) one conditioning method; returns (net, TrainResult)."""
    train_ds, val_ds, _ = datasets
    spec = DATASET_SPECS[config.dataset](Variant(method))
    net = MaskedVAE(spec, init_seed=child_seed(rep_seed, f"init-{method}"))
    tconf = config.train_config(child_seed(rep_seed, f"train-{method}"))
    out = Path(config.out_dir)
    ckpt = _checkpoint_path(out, replicate, method)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    result = train(
        net,
        _corrupt(train_ds.images, masks["train"]),
        masks["train"].astype(np.float32),
        _corrupt(val_ds.images, masks["val"]),
        masks["val"].astype(np.float32),
        tconf,
        checkpoint_path=str(ckpt),
        verbose=config.verbose,
    )
    log_lines = [
        f"replicate={replicate} method={method} "
        f"best_epoch={result.best_epoch} best_val_elbo={result.best_val_elbo!r}"
    ]
    for entry in result.epoch_log:
        log_lines.append(
            f"epoch={entry['epoch']} train_elbo={entry['train_elbo']!r} "
            f"val_elbo={entry['val_elbo']!r}"
        )
    _write_text(out / "logs" / f"rep{replicate:03d}-{method}.log", "\n".join(log_lines) + "\n")
    return net, result


def evaluate_one_method(config, net, test_samples, method, rep_seed):
    eval_seed = child_seed(rep_seed, f"eval-{method}")
    return evaluation.evaluate_dataset(
        net,
        test_samples,
        config.k,
        config.s,
        eval_seed,
        method=method,
        missingness=config.missingness,
        replicate_seed=rep_seed,
    )


def render_replicate_grid(config, nets, test_samples, replicate, rep_seed):
    path = Path(config.out_dir) / "grids" / f"rep{replicate:03d}.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    subset = test_samples[: config.grid_count]
    recons = []
    for method in config.methods:
        eval_seed = child_seed(rep_seed, f"eval-{method}")
        x_hats = evaluation.dataset_mean_reconstruction(
            nets[method], subset, config.s, eval_seed
        )
        recons.append((method, [x_hats[i] for i in range(len(subset))]))
    evaluation.render_grid(subset, recons, str(path))
    return path


# -- results files ----------------------------------------------------------


def _results_path(config) -> Path:
    return Path(config.out_dir) / "results.jsonl"


def read_reports(path: Path):
    reports = []
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                reports.append(evaluation.MetricReport.from_json(line))
    return reports


def _append_report(path: Path, report) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")


_METRIC_COLUMNS = (
    "logpx_o",
    "imput_loglik",
    "bits_per_pixel",
    "mse_observed",
    "mse_missing",
)


def write_summary(config, reports) -> Path:
    """Per-method means over replicates plus paired t-tests against ed_ind."""
    rep_seeds = [replicate_seed_for(config, r) for r in range(config.replicates)]
    by_key = {(rep.method, rep.replicate_seed): rep for rep in reports}
    lines = [
        f"dataset={config.dataset} missingness={config.missingness} "
        f"replicates={config.replicates} seed={config.seed}",
        f"methods={','.join(config.methods)} k={config.k} s={config.s}",
        "",
    ]
    complete = {}
    for method in config.methods:
        rows = [by_key.get((method, rs)) for rs in rep_seeds]
        rows = [r for r in rows if r is not None]
        complete[method] = rows
        if not rows:
            lines.append(f"{method}: no completed replicates")
            continue
        parts = [f"{method} (n={len(rows)})"]
        for col in _METRIC_COLUMNS:
            vals = np.array([getattr(r, col) for r in rows])
            sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            parts.append(f"{col}={vals.mean():.4f}±{sd:.4f}")
        lines.append("  ".join(parts))
    reference = "ed_ind"
    if reference in config.methods:
        lines.append("")
        lines.append(f"paired t-tests vs {reference} (two-sided; * marks p < 0.001)")
        ref_rows = {r.replicate_seed: r for r in complete.get(reference, [])}
        for method in config.methods:
            if method == reference:
                continue
            shared = [
                rs
                for rs in rep_seeds
                if rs in ref_rows
                and any(r.replicate_seed == rs for r in complete.get(method, []))
            ]
            if len(shared) < 2:
                lines.append(f"{method}: fewer than 2 shared replicates, skipped")
                continue
            meth_rows = {r.replicate_seed: r for r in complete[method]}
            parts = [f"{method} (n={len(shared)})"]
            for col in _METRIC_COLUMNS:
                a = [getattr(meth_rows[rs], col) for rs in shared]
                b = [getattr(ref_rows[rs], col) for rs in shared]
                try:
                    t, p, _ = stats.paired_t_test(a, b)
                    parts.append(
                        f"{col}: t={t:+.3f} p={p:.3g}{stats.significance_stars(p)}"
                    )
                except ValueError:
                    parts.append(f"{col}: degenerate (zero variance)")
            lines.append("  ".join(parts))
    path = Path(config.out_dir) / "summary.txt"
    _write_text(path, "\n".join(lines) + "\n")
    return path


# -- subcommands -------------------------------------------------------------


def cmd_make_masks(config: ExperimentConfig, replicate: int = 0):
    """Write frozen IDX mask and corrupted-image files for one replicate."""
    datasets = load_experiment_data(config)
    rep_seed = replicate_seed_for(config, replicate)
    masks, assignment = make_replicate_masks(config, rep_seed, datasets)
    out = Path(config.out_dir) / "masks"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for split, ds in zip(("train", "val", "test"), datasets):
        mask_path = out / f"rep{replicate:03d}-{split}-masks-idx3-ubyte"
        idx.write_idx(mask_path, masks[split].astype(np.uint8))
        corrupted = np.rint(_corrupt(ds.images, masks[split]) * 255).astype(np.uint8)
        if corrupted.shape[-1] == 1:
            corrupted = corrupted[..., 0]
        rank = corrupted.ndim
        data_path = out / f"rep{replicate:03d}-{split}-corrupted-idx{rank}-ubyte"
        idx.write_idx(data_path, corrupted)
        written.extend([mask_path, data_path])
    if assignment is not None:
        lines = [
            f"{label} {cfg.block_count} {cfg.block_side}"
            for label, cfg in sorted(assignment.items())
        ]
        apath = out / f"rep{replicate:03d}-mnar-assignment.txt"
        _write_text(apath, "\n".join(lines) + "\n")
        written.append(apath)
    for path in written:
        print(path)
    return written


def _load_replicate_masks(config: ExperimentConfig, replicate: int, datasets):
    """Masks for train/val/test: from mask files when present, else derived."""
    out = Path(config.out_dir) / "masks"
    paths = {
        split: out / f"rep{replicate:03d}-{split}-masks-idx3-ubyte"
        for split in ("train", "val", "test")
    }
    if all(p.exists() for p in paths.values()):
        masks = {split: idx.read_idx(p) for split, p in paths.items()}
        for split, ds in zip(("train", "val", "test"), datasets):
            if masks[split].shape != (len(ds),) + tuple(ds.image_shape[:2]):
                raise CliError(
                    f"{paths[split]}: mask shape {masks[split].shape} does not "
                    f"match the {split} split"
                )
        return masks
    rep_seed = replicate_seed_for(config, replicate)
    masks, _ = make_replicate_masks(config, rep_seed, datasets)
    return masks


def cmd_train(config: ExperimentConfig, method: str, replicate: int = 0, fresh=False):
    """Train one method for one replicate; resumes from its checkpoint."""
    if method not in METHODS:
        raise CliError(f"unknown method {method!r}; choose from {METHODS}")
    datasets = load_experiment_data(config)
    masks = _load_replicate_masks(config, replicate, datasets)
    rep_seed = replicate_seed_for(config, replicate)
    ckpt = _checkpoint_path(Path(config.out_dir), replicate, method)
    if fresh and ckpt.exists():
        ckpt.unlink()
    _, result = train_one_method(config, datasets, masks, replicate, rep_seed, method)
    print(
        f"{method} replicate {replicate}: {result.epochs_run} epochs, "
        f"best val ELBO {result.best_val_elbo:.4f} at epoch {result.best_epoch} "
        f"-> {ckpt}"
    )
    return result


def cmd_evaluate(config: ExperimentConfig, checkpoint: str, replicate: int = 0):
    """Evaluate a checkpoint on the replicate's corrupted test set."""
    ckpt = Path(checkpoint)
    if not ckpt.exists():
        raise CliError(f"checkpoint not found: {ckpt}")
    net, _ = load_model_for_eval(ckpt)
    method = net.spec.variant.value
    datasets = load_experiment_data(config)
    masks = _load_replicate_masks(config, replicate, datasets)
    rep_seed = replicate_seed_for(config, replicate)
    test_samples = _test_samples(datasets[2], masks["test"], config.eval_count)
    report = evaluate_one_method(config, net, test_samples, method, rep_seed)
    _append_report(_results_path(config), report)
    print(report.to_json())
    return report


def cmd_experiment(config: ExperimentConfig):
    """Full pipeline: per replicate, fresh masks, train every method on the
    identical corrupted data, evaluate, render a grid; then summarize with
    paired t-tests against ed_ind.  Completed (replicate, method) pairs found
    in results.jsonl are skipped, so interrupted runs resume."""
    datasets = load_experiment_data(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = _results_path(config)
    reports = read_reports(results_path)
    done = {(r.method, r.replicate_seed) for r in reports}
    for replicate in range(config.replicates):
        rep_seed = replicate_seed_for(config, replicate)
        grid_path = out / "grids" / f"rep{replicate:03d}.png"
        todo = [m for m in config.methods if (m, rep_seed) not in done]
        if not todo and grid_path.exists():
            continue
        masks, _ = make_replicate_masks(config, rep_seed, datasets)
        test_samples = _test_samples(datasets[2], masks["test"], config.eval_count)
        nets = {}
        for method in config.methods:
            net, result = train_one_method(
                config, datasets, masks, replicate, rep_seed, method
            )
            nets[method] = net
            if (method, rep_seed) in done:
                continue
            report = evaluate_one_method(config, net, test_samples, method, rep_seed)
            _append_report(results_path, report)
            reports.append(report)
            done.add((method, rep_seed))
            print(
                f"replicate {replicate} {method}: {result.epochs_run} epochs, "
                f"logpx {report.logpx_o:.4f}, imputation {report.imput_loglik:.4f}"
            )
        if not grid_path.exists():
            render_replicate_grid(config, nets, test_samples, replicate, rep_seed)
    summary_path = write_summary(config, reports)
    print(f"results: {results_path}")
    print(f"summary: {summary_path}")
    print(summary_path.read_text(encoding="utf-8"), end="")
    return reports


def cmd_visualize(config: ExperimentConfig, checkpoints, replicate: int = 0):
    """Render a reconstruction grid from existing checkpoints."""
    datasets = load_experiment_data(config)
    masks = _load_replicate_masks(config, replicate, datasets)
    rep_seed = replicate_seed_for(config, replicate)
    test_samples = _test_samples(datasets[2], masks["test"], config.eval_count)
    subset = test_samples[: config.grid_count]
    recons = []
    for path in checkpoints:
        if not Path(path).exists():
            raise CliError(f"checkpoint not found: {path}")
        net, _ = load_model_for_eval(path)
        method = net.spec.variant.value
        eval_seed = child_seed(rep_seed, f"eval-{method}")
        x_hats = evaluation.dataset_mean_reconstruction(
            net, subset, config.s, eval_seed
        )
        recons.append((method, [x_hats[i] for i in range(len(subset))]))
    out = Path(config.out_dir) / "grids" / f"rep{replicate:03d}-visualize.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.render_grid(subset, recons, str(out))
    print(out)
    return out


# -- argument parsing ---------------------------------------------------------


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="FILE", help="KEY=VALUE config file")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool:
            parser.add_argument(
                flag, dest=f.name, action="store_const", const=True, default=None
            )
        elif f.type is int:
            parser.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type is float:
            parser.add_argument(flag, dest=f.name, type=float, default=None)
        elif f.type is tuple:
            parser.add_argument(
                flag,
                dest=f.name,
                default=None,
                help="comma-separated subset of " + ",".join(METHODS),
            )
        else:
            parser.add_argument(flag, dest=f.name, default=None)


def config_from_args(args) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(ExperimentConfig):
        given = getattr(args, f.name, None)
        if given is None:
            continue
        values[f.name] = _coerce(f.name, given) if isinstance(given, str) else given
    return ExperimentConfig(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskedvae",
        description="Train and evaluate mask-conditioned VAEs on corrupted images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-masks", help="write frozen mask/corrupted files")
    _add_config_flags(p)
    p.add_argument("--replicate", type=int, default=0)

    p = sub.add_parser("train", help="train one conditioning method")
    _add_config_flags(p)
    p.add_argument("method", choices=METHODS)
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument(
        "--fresh", action="store_true", help="discard an existing checkpoint"
    )

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test set")
    _add_config_flags(p)
    p.add_argument("checkpoint")
    p.add_argument("--replicate", type=int, default=0)

    p = sub.add_parser("experiment", help="replicated train/evaluate pipeline")
    _add_config_flags(p)

    p = sub.add_parser("visualize", help="render a reconstruction grid")
    _add_config_flags(p)
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--replicate", type=int, default=0)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == "make-masks":
            cmd_make_masks(config, replicate=args.replicate)
        elif args.command == "train":
            cmd_train(config, args.method, replicate=args.replicate, fresh=args.fresh)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.checkpoint, replicate=args.replicate)
        elif args.command == "experiment":
            cmd_experiment(config)
        elif args.command == "visualize":
            cmd_visualize(config, args.checkpoints, replicate=args.replicate)
    except (CliError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
