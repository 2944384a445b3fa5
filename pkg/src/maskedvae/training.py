"""Adam training loop with early stopping and deterministic checkpoints.

All per-epoch randomness (shuffle order, reparameterization noise,
validation noise) comes from substreams derived from (seed, purpose, epoch),
so a resumed run consumes exactly the same random numbers as an
uninterrupted one and checkpoints never need to serialize generator state
beyond the seed and epoch counter.

Checkpoint files are a self-describing container: a little-endian uint32
header length, a JSON header (sorted keys) listing named tensors with dtype
and shape plus scalar metadata, then the raw tensor bytes in listed order.
Writing the same state twice produces identical bytes.
"""

import json
import os
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from maskedvae import rng as rng_mod

CHECKPOINT_MAGIC = b"MVCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")


class AdamState:
    """First/second moment estimates plus the step counter."""

    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """One Adam minimization step, in place.

    ``grads`` must be gradients of the quantity being minimized (pass the
    negated ELBO gradients to maximize).
    """
    state.t += 1
    t = state.t
    b1, b2 = config.adam_beta1, config.adam_beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        mhat = m / corr1
        vhat = v / corr2
        p -= (config.learning_rate * mhat / (np.sqrt(vhat) + config.adam_eps)).astype(
            p.dtype
        )
    return params, state


# -- checkpoint container ----------------------------------------------------


def _tensor_dict(prefix: str, tensors: dict) -> dict:
    return {f"{prefix}/{k}": np.asarray(v) for k, v in tensors.items()}


def write_checkpoint(path, tensors: dict, scalars: dict) -> None:
    """Write named tensors + JSON-serializable scalars deterministically."""
    names = sorted(tensors)
    header = {
        "scalars": scalars,
        "tensors": [
            {
                "name": name,
                "dtype": tensors[name].dtype.name,
                "shape": list(tensors[name].shape),
            }
            for name in names
        ],
        "version": CHECKPOINT_VERSION,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in names:
            f.write(np.ascontiguousarray(tensors[name]).tobytes())
    os.replace(tmp, path)


def read_checkpoint(path):
    """Read back (tensors, scalars) from a checkpoint file."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (blob_len,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + blob_len].decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    offset = 8 + blob_len
    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise ValueError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = (
            np.frombuffer(data, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                          offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes")
    return tensors, header["scalars"]


# -- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    epoch_log: list
    best_val_elbo: float
    best_epoch: int
    epochs_run: int


def _batches(order, batch_size):
    # keeps the final partial batch
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def _mean_val_elbo(net, x_tilde, masks, config, epoch):
    gen = rng_mod.substream(config.seed, "val-eps", epoch)
    eps = gen.standard_normal((len(x_tilde), net.spec.latent_dim))
    total = 0.0
    for idx in _batches(np.arange(len(x_tilde)), config.batch_size):
        total += float(np.sum(net.elbo_values(x_tilde[idx], masks[idx], eps[idx])))
    return total / len(x_tilde)


def _save_state(path, net, adam, scalars, best_params):
    tensors = {}
    tensors.update(_tensor_dict("params", net.params()))
    tensors.update(_tensor_dict("best", best_params))
    tensors.update(_tensor_dict("adam_m", adam.m))
    tensors.update(_tensor_dict("adam_v", adam.v))
    write_checkpoint(path, tensors, scalars)


def _split_prefix(tensors, prefix):
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in tensors.items() if k.startswith(f"{prefix}/")}


def load_training_state(path, net, config: TrainConfig):
    """Restore (adam, scalars, best_params) and load current params into net."""
    tensors, scalars = read_checkpoint(path)
    if scalars.get("seed") != config.seed:
        raise ValueError(
            f"{path}: checkpoint seed {scalars.get('seed')} != config {config.seed}"
        )
    net.set_params(_split_prefix(tensors, "params"))
    adam = AdamState(net.params())
    adam.m = {k: v.copy() for k, v in _split_prefix(tensors, "adam_m").items()}
    adam.v = {k: v.copy() for k, v in _split_prefix(tensors, "adam_v").items()}
    adam.t = int(scalars["adam_t"])
    best_params = {k: v.copy() for k, v in _split_prefix(tensors, "best").items()}
    return adam, scalars, best_params


def load_model_for_eval(path, dtype=np.float32):
    """Rebuild a model from a checkpoint, holding its best-validation params.

    Returns (net, scalars).  The scalars carry the stored train_config,
    model_spec text, and epoch_log.
    """
    from maskedvae.model import MaskedVAE, ModelSpec

    tensors, scalars = read_checkpoint(path)
    spec = ModelSpec.from_text(scalars["model_spec"])
    net = MaskedVAE(spec, init_seed=0, dtype=dtype)
    net.set_params(_split_prefix(tensors, "best"))
    return net, scalars


def train(
    net,
    train_x_tilde,
    train_masks,
    val_x_tilde,
    val_masks,
    config: TrainConfig,
    checkpoint_path=None,
    verbose=False,
) -> TrainResult:
    """Maximize the single-sample ELBO with Adam and early stopping.

    Stops once validation has gone ``patience`` consecutive epochs without a
    strictly better ELBO (a patience of 0 behaves as 1), or at max_epochs.
    The network is left holding the best-validation parameters.  When
    ``checkpoint_path`` is given, state is persisted after every epoch and
    an existing file resumes training bit-exactly.
    """
    n = len(train_x_tilde)
    if n == 0 or len(val_x_tilde) == 0:
        raise ValueError("empty training or validation set")
    latent = net.spec.latent_dim

    adam = AdamState(net.params())
    epoch_log = []
    best_val = -np.inf
    best_epoch = 0
    since_improve = 0
    start_epoch = 1
    best_params = {k: v.copy() for k, v in net.params().items()}

    if checkpoint_path is not None and os.path.exists(checkpoint_path):
        adam, scalars, best_params = load_training_state(checkpoint_path, net, config)
        epoch_log = scalars["epoch_log"]
        best_val = float(scalars["best_val_elbo"])
        best_epoch = int(scalars["best_epoch"])
        since_improve = int(scalars["since_improve"])
        start_epoch = int(scalars["epoch"]) + 1

    stop_after = max(config.patience, 1)
    for epoch in range(start_epoch, config.max_epochs + 1):
        if since_improve >= stop_after:
            break
        started = time.monotonic()
        order = rng_mod.substream(config.seed, "shuffle", epoch).permutation(n)
        eps_gen = rng_mod.substream(config.seed, "train-eps", epoch)
        total = 0.0
        for batch in _batches(order, config.batch_size):
            eps = eps_gen.standard_normal((len(batch), latent))
            elbos, _, _, grads = net.elbo_with_grads(
                train_x_tilde[batch], train_masks[batch], eps
            )
            if not np.all(np.isfinite(elbos)):
                raise FloatingPointError(
                    f"non-finite ELBO at epoch {epoch} "
                    f"(batch starting with index {batch[0]})"
                )
            total += float(np.sum(elbos))
            # grads are ascent directions for the mean ELBO; negate to minimize
            neg = {k: -g for k, g in grads.items()}
            adam_step(net.params(), neg, adam, config)
        train_elbo = total / n
        val_elbo = _mean_val_elbo(net, val_x_tilde, val_masks, config, epoch)
        epoch_log.append(
            {"epoch": epoch, "train_elbo": train_elbo, "val_elbo": val_elbo}
        )
        if val_elbo > best_val:
            best_val = val_elbo
            best_epoch = epoch
            since_improve = 0
            best_params = {k: v.copy() for k, v in net.params().items()}
        else:
            since_improve += 1
        if verbose:
            print(
                f"epoch {epoch}: train_elbo {train_elbo:.4f} "
                f"val_elbo {val_elbo:.4f} ({time.monotonic() - started:.1f}s)",
                flush=True,
            )
        if checkpoint_path is not None:
            _save_state(
                checkpoint_path,
                net,
                adam,
                {
                    "seed": config.seed,
                    "epoch": epoch,
                    "adam_t": adam.t,
                    "best_val_elbo": best_val,
                    "best_epoch": best_epoch,
                    "since_improve": since_improve,
                    "epoch_log": epoch_log,
                    "train_config": asdict(config),
                    "model_spec": net.spec.to_text(),
                },
                best_params,
            )

    net.set_params(best_params)
    return TrainResult(
        epoch_log=epoch_log,
        best_val_elbo=best_val,
        best_epoch=best_epoch,
        epochs_run=len(epoch_log),
    )
