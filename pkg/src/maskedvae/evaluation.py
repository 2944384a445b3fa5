"""Test-set estimators and reconstruction rendering.

Marginal log-likelihood log p(x_o | m) is estimated by importance sampling
with the posterior as proposal; imputation quality is the Monte Carlo
estimate of E_q[log p(x_m | z, m)], the same masked log-probability with
the selector complemented.  Only the imputation and MSE metrics ever touch
ground truth at missing pixels; everything else reads the corrupted view.

Per-image random substreams make evaluation order-independent: a parallel
map over images draws exactly the numbers a serial loop would.
"""

import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from PIL import Image

from maskedvae import likelihoods
from maskedvae import rng as rng_mod
from maskedvae.model import BERNOULLI, Variant
from maskedvae.nn import sigmoid as nn_sigmoid

LN2 = math.log(2.0)

# decoder draws are evaluated in batches of this many samples
DRAW_BATCH = 256


def _posterior(net, sample):
    sees = net.spec.variant is not Variant.NO_IND
    mu, sigma = net.encode(sample.x_tilde, sample.m if sees else None)
    return (
        np.asarray(mu[0], dtype=np.float64),
        np.asarray(sigma[0], dtype=np.float64),
    )


def _draw_recon_values(net, sample, target, sel, mu, sigma, count, gen):
    """Reconstruction log-probs (and z draws) for ``count`` posterior draws.

    The observed-side and imputation-side computations share this path;
    only the selector differs.
    """
    sees_decoder = net.spec.variant is Variant.ED_IND
    values = np.empty(count)
    zs = np.empty((count, net.spec.latent_dim))
    target = np.asarray(target, dtype=np.float64)
    for start in range(0, count, DRAW_BATCH):
        stop = min(start + DRAW_BATCH, count)
        eps = gen.standard_normal((stop - start, net.spec.latent_dim))
        z = mu + sigma * eps
        m_batch = None
        if sees_decoder:
            m_batch = np.repeat(sample.m[np.newaxis], stop - start, axis=0)
        raw = net.decode_raw(z.astype(net.dtype), m_batch)
        tgt = np.broadcast_to(target[np.newaxis], raw.shape[:3] + target.shape[-1:])
        sel_b = np.broadcast_to(sel[np.newaxis], tgt.shape[:3])
        values[start:stop] = net.recon_logprob_from_raw(raw, tgt, sel_b)
        zs[start:stop] = z
    return values, zs


def importance_logpx(net, sample, k: int, gen) -> float:
    """Importance-sampled estimate of log p(x_o | m), in nats.

    log-mean over K posterior draws of p(x_o|z,m) p(z) / q(z|x_tilde,m).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    mu, sigma = _posterior(net, sample)
    recons, zs = _draw_recon_values(
        net, sample, sample.x_tilde, sample.m, mu, sigma, k, gen
    )
    log_weights = (
        recons
        + likelihoods.log_standard_normal(zs)
        - likelihoods.log_normal_diag(zs, mu[np.newaxis], sigma[np.newaxis])
    )
    return likelihoods.log_sum_exp(log_weights) - math.log(k)


def imputation_loglik(net, sample, s: int, gen) -> float:
    """MC estimate of E_q[log p(x_m | z, m)] over ``s`` posterior draws.

    Zero when nothing is missing.  Reads ground truth at missing pixels.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    mu, sigma = _posterior(net, sample)
    values, _ = _draw_recon_values(
        net, sample, sample.x, 1 - sample.m, mu, sigma, s, gen
    )
    return float(values.mean())


def bits_per_pixel(logpx_o: float, m) -> float:
    """-log p(x_o|m) in bits, divided by the count of observed pixels.

    A multi-channel pixel counts once.
    """
    n_obs = int(np.sum(np.asarray(m) != 0))
    if n_obs == 0:
        raise ValueError("no observed pixels")
    return -logpx_o / (n_obs * LN2)


def mean_reconstruction(net, sample, s: int, gen) -> np.ndarray:
    """Average decoder per-pixel mean over ``s`` posterior draws.

    Bernoulli: emission probability.  Logistic: the mean parameter clamped
    to [0, 1], since pixels live there.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    mu, sigma = _posterior(net, sample)
    h, w, c = net.spec.image_shape
    acc = np.zeros((h, w, c))
    for start in range(0, s, DRAW_BATCH):
        stop = min(start + DRAW_BATCH, s)
        eps = gen.standard_normal((stop - start, net.spec.latent_dim))
        z = mu + sigma * eps
        m_batch = None
        if net.spec.variant is Variant.ED_IND:
            m_batch = np.repeat(sample.m[np.newaxis], stop - start, axis=0)
        out = net.decode(z.astype(net.dtype), m_batch)
        if net.spec.likelihood == BERNOULLI:
            acc += np.asarray(out, dtype=np.float64).sum(axis=0)
        else:
            acc += np.clip(np.asarray(out[0], dtype=np.float64), 0.0, 1.0).sum(axis=0)
    return acc / s


def _encode_dataset(net, samples):
    """Posterior (mu, sigma) rows for every sample, batch-chunked."""
    n = len(samples)
    sees = net.spec.variant is not Variant.NO_IND
    mu = np.empty((n, net.spec.latent_dim))
    sigma = np.empty((n, net.spec.latent_dim))
    for start in range(0, n, DRAW_BATCH):
        stop = min(start + DRAW_BATCH, n)
        xt = np.stack([s.x_tilde for s in samples[start:stop]])
        mb = np.stack([s.m for s in samples[start:stop]]) if sees else None
        mu_b, sigma_b = net.encode(xt, mb)
        mu[start:stop] = np.asarray(mu_b, dtype=np.float64)
        sigma[start:stop] = np.asarray(sigma_b, dtype=np.float64)
    return mu, sigma


def _grouped_draws(net, samples, start, stop, mu, sigma, count, seed, purpose):
    """Posterior draws for samples[start:stop]: (z, raw decoder output).

    Draw i of image j reproduces what the per-image path would draw, but the
    decoder runs once over the whole group.
    """
    g = stop - start
    ld = net.spec.latent_dim
    eps = np.stack(
        [
            rng_mod.substream(seed, purpose, i).standard_normal((count, ld))
            for i in range(start, stop)
        ]
    )
    z = mu[start:stop, None, :] + sigma[start:stop, None, :] * eps
    m_rows = None
    if net.spec.variant is Variant.ED_IND:
        m_rows = np.repeat(
            np.stack([s.m for s in samples[start:stop]]), count, axis=0
        )
    raw = net.decode_raw(z.reshape(g * count, ld).astype(net.dtype), m_rows)
    return z, raw


def _grouped_recon(net, samples, start, stop, raw, count, observed_side):
    """Masked recon log-probs for grouped raw output, (g, count)."""
    g = stop - start
    if observed_side:
        tgt = [s.x_tilde for s in samples[start:stop]]
        sel = [s.m for s in samples[start:stop]]
    else:
        tgt = [s.x for s in samples[start:stop]]
        sel = [1 - s.m for s in samples[start:stop]]
    tgt = np.repeat(np.asarray(np.stack(tgt), dtype=np.float64), count, axis=0)
    sel = np.repeat(np.asarray(np.stack(sel), dtype=np.float64), count, axis=0)
    return net.recon_logprob_from_raw(raw, tgt, sel).reshape(g, count)


def dataset_logpx(net, samples, k: int, seed: int) -> np.ndarray:
    """Per-image importance-sampled log p(x_o | m) over an evaluation set.

    Matches importance_logpx image by image (same substreams, same draws)
    while batching several images into each decoder call.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    samples = list(samples)
    n = len(samples)
    out = np.empty(n)
    if k > DRAW_BATCH:
        for i, sample in enumerate(samples):
            out[i] = importance_logpx(
                net, sample, k, rng_mod.substream(seed, "eval-logpx", i)
            )
        return out
    mu, sigma = _encode_dataset(net, samples)
    group = max(1, DRAW_BATCH // k)
    for start in range(0, n, group):
        stop = min(start + group, n)
        z, raw = _grouped_draws(
            net, samples, start, stop, mu, sigma, k, seed, "eval-logpx"
        )
        recons = _grouped_recon(net, samples, start, stop, raw, k, True)
        g = stop - start
        z2 = z.reshape(g * k, -1)
        log_weights = (
            recons
            + likelihoods.log_standard_normal(z2).reshape(g, k)
            - likelihoods.log_normal_diag(
                z2,
                np.repeat(mu[start:stop], k, axis=0),
                np.repeat(sigma[start:stop], k, axis=0),
            ).reshape(g, k)
        )
        for j in range(g):
            out[start + j] = likelihoods.log_sum_exp(log_weights[j]) - math.log(k)
    return out


def dataset_imputation(net, samples, s: int, seed: int) -> np.ndarray:
    """Per-image imputation log-likelihoods over an evaluation set.

    Matches imputation_loglik image by image while batching decoder calls.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    samples = list(samples)
    n = len(samples)
    out = np.empty(n)
    if s > DRAW_BATCH:
        for i, sample in enumerate(samples):
            out[i] = imputation_loglik(
                net, sample, s, rng_mod.substream(seed, "eval-imput", i)
            )
        return out
    mu, sigma = _encode_dataset(net, samples)
    group = max(1, DRAW_BATCH // s)
    for start in range(0, n, group):
        stop = min(start + group, n)
        _, raw = _grouped_draws(
            net, samples, start, stop, mu, sigma, s, seed, "eval-imput"
        )
        values = _grouped_recon(net, samples, start, stop, raw, s, False)
        out[start:stop] = values.mean(axis=1)
    return out


def dataset_mean_reconstruction(net, samples, s: int, seed: int) -> np.ndarray:
    """Per-image mean reconstructions, (n, H, W, C), batching decoder calls."""
    if s < 1:
        raise ValueError("s must be >= 1")
    samples = list(samples)
    n = len(samples)
    h, w, c = net.spec.image_shape
    out = np.empty((n, h, w, c))
    if s > DRAW_BATCH:
        for i, sample in enumerate(samples):
            out[i] = mean_reconstruction(
                net, sample, s, rng_mod.substream(seed, "eval-recon", i)
            )
        return out
    mu, sigma = _encode_dataset(net, samples)
    group = max(1, DRAW_BATCH // s)
    for start in range(0, n, group):
        stop = min(start + group, n)
        g = stop - start
        _, raw = _grouped_draws(
            net, samples, start, stop, mu, sigma, s, seed, "eval-recon"
        )
        if net.spec.likelihood == BERNOULLI:
            vals = np.asarray(nn_sigmoid(raw), dtype=np.float64)
        else:
            mu_x, _, _ = net.split_logistic_raw(raw)
            vals = np.clip(mu_x, 0.0, 1.0)
        out[start:stop] = vals.reshape(g, s, h, w, c).mean(axis=1)
    return out


def mse_metrics(x, x_hat, m):
    """(observed MSE, missing MSE) per selected pixel component."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    sq = (x - x_hat) ** 2
    m = np.asarray(m)
    out = []
    for name, sel in (("observed", m != 0), ("missing", m == 0)):
        if not sel.any():
            raise ValueError(f"{name} selector is empty")
        out.append(float(sq[sel].mean()))
    return tuple(out)


@dataclass(frozen=True)
class MetricReport:
    """Aggregate metrics for one method on one corrupted test set."""

    method: str
    missingness: str
    logpx_o: float
    imput_loglik: float
    bits_per_pixel: float
    mse_observed: float
    mse_missing: float
    replicate_seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "MetricReport":
        return cls(**json.loads(line))


def evaluate_dataset(
    net,
    samples,
    k: int,
    s: int,
    seed: int,
    method: str,
    missingness: str,
    replicate_seed: int,
) -> MetricReport:
    """All five metrics over a sequence of MaskedSamples.

    Per-image Monte Carlo uses substreams keyed on (seed, purpose, image
    index).  logpx and imputation are reported as per-image means;
    bits/pixel aggregates total nats over total observed pixels; MSEs
    average the per-image means.
    """
    samples = list(samples)
    n = len(samples)
    if n == 0:
        raise ValueError("empty evaluation set")
    logpx = dataset_logpx(net, samples, k, seed)
    imput = dataset_imputation(net, samples, s, seed)
    x_hats = dataset_mean_reconstruction(net, samples, s, seed)
    mse_obs = np.empty(n)
    mse_mis = np.empty(n)
    n_obs = np.empty(n)
    for i, sample in enumerate(samples):
        mse_obs[i], mse_mis[i] = mse_metrics(sample.x, x_hats[i], sample.m)
        n_obs[i] = int(np.sum(sample.m != 0))
    return MetricReport(
        method=method,
        missingness=missingness,
        logpx_o=float(logpx.mean()),
        imput_loglik=float(imput.mean()),
        bits_per_pixel=float(-logpx.sum() / (n_obs.sum() * LN2)),
        mse_observed=float(mse_obs.mean()),
        mse_missing=float(mse_mis.mean()),
        replicate_seed=replicate_seed,
    )


def _to_cell(img) -> np.ndarray:
    """Image in [0,1] (H, W, C) or (H, W) -> uint8 (H, W, C)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., np.newaxis]
    return np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)


def render_grid(samples, reconstructions, path) -> None:
    """Write a lossless PNG grid: rows = samples, columns = [x, m,
    x_tilde, one per method].

    ``reconstructions`` is an ordered list of (method_name, list of x_hat).
    Masks render white = observed.  Output size is exactly
    (rows*H, cols*W); identical inputs give identical bytes.
    """
    rows = len(samples)
    if rows == 0:
        raise ValueError("no samples to render")
    h, w = samples[0].x.shape[:2]
    c = samples[0].x.shape[2] if samples[0].x.ndim == 3 else 1
    cols = 3 + len(reconstructions)
    grid = np.zeros((rows * h, cols * w, c), dtype=np.uint8)
    for r, sample in enumerate(samples):
        cells = [sample.x, sample.m.astype(np.float64), sample.x_tilde]
        cells += [recons[r] for _, recons in reconstructions]
        for col, cell in enumerate(cells):
            tile = _to_cell(cell)
            if tile.shape[2] == 1 and c == 3:
                tile = np.repeat(tile, 3, axis=2)
            grid[r * h : (r + 1) * h, col * w : (col + 1) * w, :] = tile
    if c == 1:
        pil = Image.fromarray(grid[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(grid, mode="RGB")
    pil.save(path, format="PNG")
