"""Pixel likelihoods, the diagonal-Gaussian KL, and log-sum-exp.

Two emission families: Bernoulli (grayscale, real-valued targets in [0, 1])
and a discretized single-component logistic over the 256 8-bit levels
(color, one mean and one scale per channel component).  Selector tensors
restrict the log-probability sum to a pixel subset (the observed set during
training, its complement for imputation scoring).

Everything here computes in float64 regardless of input dtype.
"""

import numpy as np

# floor for bin probabilities before taking logs; small enough that the
# 256-bin normalization check is unaffected, large enough to keep log finite
TINY_PROB = 1e-300

SCALE_FLOOR = 1e-2

# one 8-bit level on the [0, 1] scale is 1/255; bins extend half a level
# on each side of the grid point
BIN_HALF_WIDTH = 1.0 / 510.0


def _sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


def _log_sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    return -np.logaddexp(0.0, -t)


def _check_selector(sel):
    sel = np.asarray(sel)
    if not np.all((sel == 0) | (sel == 1)):
        raise ValueError("selector must be binary (0/1)")
    return sel.astype(np.float64)


def _check_same_shape(*arrays):
    shapes = {np.asarray(a).shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def bernoulli_masked_logprob(x, p, sel) -> float:
    """Sum of Bernoulli log-probabilities over the selected components.

    Targets may be real-valued in [0, 1]; each contributes
    x*ln(p) + (1-x)*ln(1-p).
    """
    _check_same_shape(x, p, sel)
    sel = _check_selector(sel)
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return float(np.sum(sel * (x * np.log(p) + (1.0 - x) * np.log1p(-p))))


def bernoulli_logprob_from_logits(x, logits, sel):
    """Per-sample Bernoulli log-prob sums and their logit gradients.

    Inputs are batched (leading axis = sample); returns (values, grads)
    where values has shape (N,) and grads matches ``logits``.  Working from
    logits keeps both the value (via log-sigmoid) and the gradient
    (sel * (x - p)) finite for saturated outputs.
    """
    _check_same_shape(x, logits, sel)
    sel = _check_selector(sel)
    x = np.asarray(x, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    elem = x * _log_sigmoid(logits) + (1.0 - x) * _log_sigmoid(-logits)
    values = np.sum(sel * elem, axis=tuple(range(1, elem.ndim)))
    grads = sel * (x - _sigmoid(logits))
    return values, grads


def logistic_cdf(v, mu, s):
    """CDF of the logistic distribution: sigmoid((v - mu) / s)."""
    return _sigmoid((np.asarray(v, dtype=np.float64) - mu) / s)


def _check_grid(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    levels = x * 255.0
    snapped = np.round(levels)
    # tolerance absorbs float32 rounding of value/255 conversions
    if x.size and np.max(np.abs(levels - snapped)) > 1e-4:
        raise ValueError("pixel values must be multiples of 1/255")
    return snapped / 255.0


def _logistic_bin_terms(v, mu, s):
    """Bin probabilities and CDF edge terms for the discretized logistic.

    Returns (delta, tl, th, sig_lo, sig_hi) where delta is the bin mass,
    t* are the standardized edges (±inf at the boundary levels, whose bins
    absorb the tails) and sig_* the edge CDF values.
    """
    lo = np.where(v <= 0.0, -np.inf, v - BIN_HALF_WIDTH)
    hi = np.where(v >= 1.0, np.inf, v + BIN_HALF_WIDTH)
    tl = (lo - mu) / s
    th = (hi - mu) / s
    sig_lo = _sigmoid(tl)
    sig_hi = _sigmoid(th)
    # evaluate the difference in whichever tail avoids cancellation:
    # CDF(hi) - CDF(lo) = sigmoid(-tl) - sigmoid(-th)
    upper = tl + th > 0
    delta = np.where(upper, _sigmoid(-tl) - _sigmoid(-th), sig_hi - sig_lo)
    return delta, tl, th, sig_lo, sig_hi


def _check_scale(s):
    s = np.asarray(s, dtype=np.float64)
    if s.size and s.min() < SCALE_FLOOR - 1e-12:
        raise ValueError(f"logistic scale must be >= {SCALE_FLOOR}, got {s.min()}")
    return s


def discretized_logistic_masked_logprob(x, mu, s, sel) -> float:
    """Sum of discretized-logistic log bin probabilities over the selection.

    Each 8-bit level owns the CDF mass of its bin; the 0 and 255 levels
    absorb the tails below/above.  Inputs off the 1/255 grid are rejected.
    """
    _check_same_shape(x, mu, s, sel)
    sel = _check_selector(sel)
    v = _check_grid(x)
    mu = np.asarray(mu, dtype=np.float64)
    s = _check_scale(s)
    delta, _, _, _, _ = _logistic_bin_terms(v, mu, s)
    return float(np.sum(sel * np.log(np.maximum(delta, TINY_PROB))))


def discretized_logistic_logprob_grads(x, mu, s, sel):
    """Per-sample discretized-logistic log-prob sums with (dmu, ds) grads.

    Batched like :func:`bernoulli_logprob_from_logits`.  Gradients flow
    through the bin mass CDF(hi) - CDF(lo); the probability floor
    contributes zero gradient where it binds.
    """
    _check_same_shape(x, mu, s, sel)
    sel = _check_selector(sel)
    v = _check_grid(x)
    mu = np.asarray(mu, dtype=np.float64)
    s = _check_scale(s)
    delta, tl, th, sig_lo, sig_hi = _logistic_bin_terms(v, mu, s)
    floored = delta < TINY_PROB
    values = np.sum(
        sel * np.log(np.maximum(delta, TINY_PROB)),
        axis=tuple(range(1, delta.ndim)),
    )
    pdf_lo = sig_lo * (1.0 - sig_lo)
    pdf_hi = sig_hi * (1.0 - sig_hi)
    # d delta / dmu = (pdf_lo - pdf_hi) / s;  d delta / ds has an extra t
    # factor per edge; infinite edges contribute 0 (their pdf is 0)
    t_pdf_lo = np.where(np.isfinite(tl), tl, 0.0) * pdf_lo
    t_pdf_hi = np.where(np.isfinite(th), th, 0.0) * pdf_hi
    inv = sel * np.where(floored, 0.0, 1.0 / np.maximum(delta, TINY_PROB))
    dmu = inv * (pdf_lo - pdf_hi) / s
    ds = inv * (t_pdf_lo - t_pdf_hi) / s
    return values, dmu, ds


def gaussian_kl_to_standard_normal(mu, sigma) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)) in closed form."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _check_same_shape(mu, sigma)
    if sigma.size and sigma.min() <= 0.0:
        raise ValueError("sigma must be positive")
    return float(0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma)))


def gaussian_kl_grads(mu, sigma):
    """Per-sample KL values with gradients (dmu = mu, dsigma = s - 1/s)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _check_same_shape(mu, sigma)
    if sigma.size and sigma.min() <= 0.0:
        raise ValueError("sigma must be positive")
    values = 0.5 * np.sum(
        mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma),
        axis=tuple(range(1, mu.ndim)),
    )
    return values, mu.copy(), sigma - 1.0 / sigma


def log_sum_exp(values) -> float:
    """max(v) + ln(sum(exp(v - max))), exact for length-1 input."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = float(values.max())
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.sum(np.exp(values - m))))


def log_normal_diag(z, mu, sigma):
    """Per-sample log density of a diagonal Gaussian, summed over dims."""
    z = np.asarray(z, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    elem = -0.5 * np.log(2.0 * np.pi) - np.log(sigma) - 0.5 * ((z - mu) / sigma) ** 2
    return np.sum(elem, axis=tuple(range(1, elem.ndim)))


def log_standard_normal(z):
    """Per-sample log density of N(0, I), summed over dims."""
    z = np.asarray(z, dtype=np.float64)
    elem = -0.5 * np.log(2.0 * np.pi) - 0.5 * z**2
    return np.sum(elem, axis=tuple(range(1, elem.ndim)))
