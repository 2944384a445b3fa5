"""Acceptance gate: one test per release criterion, run in numeric order.

Each test prints a single PASS line with its timing; a failure of any assert
is the corresponding FAIL.  Budgets are asserted, not aspirational.
"""

import math
import time

import mpmath
import numpy as np
import scipy.integrate
import scipy.special
import scipy.stats

from conftest import build_tiny_net, make_sample
from maskedvae.cli import (
    ExperimentConfig,
    _test_samples,
    cmd_experiment,
    evaluate_one_method,
    load_experiment_data,
    make_replicate_masks,
    replicate_seed_for,
    train_one_method,
)
from maskedvae.evaluation import bits_per_pixel, importance_logpx, imputation_loglik
from maskedvae.likelihoods import (
    discretized_logistic_logprob_grads,
    gaussian_kl_grads,
)
from maskedvae.masking import MASK_TABLES, generate_masks
from maskedvae.model import Variant
from maskedvae.rng import substream
from maskedvae.stats import paired_t_test, paired_t_test_one_sided

mpmath.mp.dps = 50


def test_criterion_1_numerical_core_exactness():
    start = time.perf_counter()

    # closed-form Gaussian KL against adaptive quadrature
    worst_kl = 0.0
    for mu, sigma in ((0.0, 1.0), (1.3, 0.4), (-0.8, 2.5), (0.2, 0.07)):
        kl, _, _ = gaussian_kl_grads(
            np.array([[mu]]), np.array([[sigma]])
        )

        def integrand(z, mu=mu, sigma=sigma):
            logq = -0.5 * ((z - mu) / sigma) ** 2 - math.log(
                sigma * math.sqrt(2 * math.pi)
            )
            logp = -0.5 * z * z - 0.5 * math.log(2 * math.pi)
            return math.exp(logq) * (logq - logp)

        ref, _ = scipy.integrate.quad(
            integrand, mu - 40 * sigma, mu + 40 * sigma, limit=400
        )
        worst_kl = max(worst_kl, abs(float(kl[0]) - ref))
    assert worst_kl <= 1e-6

    # the 256 discretized-logistic bins exhaust the probability mass
    levels = np.arange(256.0) / 255.0
    sel = np.ones_like(levels)
    worst_norm = 0.0
    for mu, s in ((0.5, 0.1), (0.0, 0.3), (1.4, 0.05), (0.5, 3.0)):
        logp, _, _ = discretized_logistic_logprob_grads(
            levels, np.full_like(levels, mu), np.full_like(levels, s), sel
        )
        total = float(np.exp(scipy.special.logsumexp(logp)))
        worst_norm = max(worst_norm, abs(total - 1.0))
    assert worst_norm <= 1e-6

    # paired t-test p-values against a high-precision incomplete-beta oracle
    gen = np.random.default_rng(7)
    worst_p = 0.0
    for n in (3, 6, 12, 40):
        a = gen.normal(0.0, 1.0, size=n)
        b = a + gen.normal(0.2, 0.7, size=n)
        t, p, dof = paired_t_test(a, b)
        x = dof / (dof + t * t)
        oracle = float(mpmath.betainc(dof / 2, 0.5, 0, x, regularized=True))
        worst_p = max(worst_p, abs(p - oracle))
        worst_p = max(worst_p, abs(p - 2.0 * float(scipy.stats.t.sf(abs(t), dof))))
    assert worst_p <= 1e-9

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    print(
        f"criterion 1 PASS ({elapsed:.3f}s; KL dev {worst_kl:.2e}, "
        f"bin-mass dev {worst_norm:.2e}, t-test dev {worst_p:.2e})"
    )


def test_criterion_2_gradient_correctness():
    start = time.perf_counter()
    worst = 0.0
    h = 1e-4
    for variant in Variant:
        net = build_tiny_net(variant)  # 4x4 images, latent_dim 2
        sample = make_sample(seed=13)
        eps = substream(5, "accept-grad").standard_normal(net.spec.latent_dim)
        _, _, _, grads = net.elbo_with_grads(
            sample.x_tilde[np.newaxis], sample.m[np.newaxis], eps[np.newaxis]
        )
        for name, param in net.params().items():
            an = np.asarray(grads[name], dtype=np.float64)
            fd = np.empty(param.size)
            flat = param.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = net.elbo_single_sample(sample, eps)[0]
                flat[i] = keep - h
                down = net.elbo_single_sample(sample, eps)[0]
                flat[i] = keep
                fd[i] = (up - down) / (2 * h)
            fd = fd.reshape(param.shape)
            denom = np.linalg.norm(fd) + np.linalg.norm(an) + 1e-12
            rel = np.linalg.norm(fd - an) / denom
            worst = max(worst, rel)
            assert rel <= 1e-3, f"{variant.value}:{name} rel err {rel:.2e}"
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    print(f"criterion 2 PASS ({elapsed:.1f}s; worst relative error {worst:.2e})")


def _quadrature_logpx(net, sample):
    """log p(x_o|m) for a 1-d latent by trapezoid over the prior axis."""
    zs = np.linspace(-10.0, 10.0, 40001)
    step = zs[1] - zs[0]
    log_w = np.full(zs.shape, math.log(step))
    log_w[0] += math.log(0.5)
    log_w[-1] += math.log(0.5)
    log_prior = -0.5 * zs**2 - 0.5 * math.log(2 * math.pi)
    target = np.asarray(sample.x_tilde, dtype=np.float64)
    recon = np.empty_like(zs)
    for lo in range(0, zs.size, 4096):
        hi = min(lo + 4096, zs.size)
        raw = net.decode_raw(zs[lo:hi, None])
        tgt = np.broadcast_to(target[None], raw.shape[:3] + target.shape[-1:])
        sel = np.broadcast_to(sample.m[None], tgt.shape[:3])
        recon[lo:hi] = net.recon_logprob_from_raw(raw, tgt, sel)
    return float(scipy.special.logsumexp(recon + log_prior + log_w))


def _quadrature_imputation(net, sample):
    """E_q[log p(x_m|z)] for a 1-d latent by trapezoid over the posterior."""
    mu, sigma = net.encode(sample.x_tilde)
    mu = float(np.asarray(mu)[0, 0])
    sigma = float(np.asarray(sigma)[0, 0])
    zs = np.linspace(mu - 10 * sigma, mu + 10 * sigma, 40001)
    q = np.exp(-0.5 * ((zs - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    target = np.asarray(sample.x, dtype=np.float64)
    g = np.empty_like(zs)
    for lo in range(0, zs.size, 4096):
        hi = min(lo + 4096, zs.size)
        raw = net.decode_raw(zs[lo:hi, None])
        tgt = np.broadcast_to(target[None], raw.shape[:3] + target.shape[-1:])
        sel = np.broadcast_to((1 - sample.m)[None], tgt.shape[:3])
        g[lo:hi] = net.recon_logprob_from_raw(raw, tgt, sel)
    return float(scipy.integrate.trapezoid(q * g, zs))


def test_criterion_3_estimator_oracles():
    start = time.perf_counter()
    net = build_tiny_net(Variant.NO_IND, latent_dim=1, dtype=np.float64)
    sample = make_sample(seed=21)

    quad_logpx = _quadrature_logpx(net, sample)
    mc_logpx = importance_logpx(net, sample, 10_000, substream(3, "accept-logpx"))
    rel_logpx = abs(mc_logpx - quad_logpx) / abs(quad_logpx)
    assert rel_logpx <= 0.01

    quad_imp = _quadrature_imputation(net, sample)
    mc_imp = imputation_loglik(net, sample, 100_000, substream(3, "accept-imp"))
    rel_imp = abs(mc_imp - quad_imp) / abs(quad_imp)
    assert rel_imp <= 0.01

    elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    print(
        f"criterion 3 PASS ({elapsed:.1f}s; logpx {mc_logpx:.6f} vs "
        f"{quad_logpx:.6f} ({rel_logpx:.2%}), imputation {mc_imp:.6f} vs "
        f"{quad_imp:.6f} ({rel_imp:.2%}))"
    )


def test_criterion_4_mask_statistics():
    start = time.perf_counter()
    draws = 10_000
    observed = {}
    for name, side, expected in (("mnist", 28, 0.23), ("svhn", 32, 0.20)):
        masks = generate_masks(
            MASK_TABLES[name], side, side, draws, 99, f"accept-{name}"
        )
        frac = float(1.0 - masks.mean())
        observed[name] = frac
        assert abs(frac - expected) <= 0.03, f"{name}: missing fraction {frac:.4f}"
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    print(
        f"criterion 4 PASS ({elapsed:.1f}s; missing fraction "
        f"mnist {observed['mnist']:.4f}, svhn {observed['svhn']:.4f})"
    )


def test_criterion_5_method_ordering_at_desk_scale(tmp_path):
    start = time.perf_counter()
    config = ExperimentConfig(
        dataset="mnist",
        missingness="mcar",
        methods=("no_ind", "ed_ind"),
        replicates=5,
        seed=0,
        out_dir=str(tmp_path / "desk"),
        train_count=5000,
        val_count=1000,
        test_count=400,
        eval_count=400,
        grid_count=4,
        k=64,
        s=64,
        learning_rate=1e-3,
        batch_size=64,
        max_epochs=20,
        patience=20,
    )
    datasets = load_experiment_data(config)
    logpx = {m: [] for m in config.methods}
    imput = {m: [] for m in config.methods}
    for replicate in range(config.replicates):
        rep_seed = replicate_seed_for(config, replicate)
        masks, _ = make_replicate_masks(config, rep_seed, datasets)
        samples = _test_samples(datasets[2], masks["test"], config.eval_count)
        for method in config.methods:
            net, _ = train_one_method(
                config, datasets, masks, replicate, rep_seed, method
            )
            report = evaluate_one_method(config, net, samples, method, rep_seed)
            logpx[method].append(report.logpx_o)
            imput[method].append(report.imput_loglik)
            print(
                f"  replicate {replicate} {method}: logpx {report.logpx_o:.4f} "
                f"imputation {report.imput_loglik:.4f}",
                flush=True,
            )
    assert np.mean(logpx["ed_ind"]) > np.mean(logpx["no_ind"])
    assert np.mean(imput["ed_ind"]) > np.mean(imput["no_ind"])
    _, p_logpx, _ = paired_t_test_one_sided(logpx["ed_ind"], logpx["no_ind"])
    _, p_imput, _ = paired_t_test_one_sided(imput["ed_ind"], imput["no_ind"])
    assert p_logpx < 0.05
    assert p_imput < 0.05
    elapsed = time.perf_counter() - start
    assert elapsed < 7200.0
    print(
        f"criterion 5 PASS ({elapsed / 60:.1f} min; "
        f"logpx ed {np.mean(logpx['ed_ind']):.3f} > no {np.mean(logpx['no_ind']):.3f} "
        f"p={p_logpx:.2e}; imputation ed {np.mean(imput['ed_ind']):.3f} > "
        f"no {np.mean(imput['no_ind']):.3f} p={p_imput:.2e})"
    )


def test_criterion_6_bits_per_pixel_consistency():
    start = time.perf_counter()
    # 604/784 observed = 77.0%
    m_mnist = np.zeros(784)
    m_mnist[:604] = 1
    bits_mnist = bits_per_pixel(-62.99, m_mnist.reshape(28, 28))
    assert abs(bits_mnist - 0.150) <= 0.002

    # 819/1024 observed = 80.0%
    m_svhn = np.zeros(1024)
    m_svhn[:819] = 1
    bits_svhn = bits_per_pixel(-5828.0, m_svhn.reshape(32, 32))
    assert abs(bits_svhn - 10.3) <= 0.2

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    print(
        f"criterion 6 PASS ({elapsed:.3f}s; mnist {bits_mnist:.4f} bits, "
        f"svhn {bits_svhn:.4f} bits)"
    )


def test_criterion_7_experiment_reproducibility(tmp_path):
    start = time.perf_counter()

    def run(out_dir):
        config = ExperimentConfig(
            methods=("no_ind", "eo_ind", "ed_ind"),
            replicates=2,
            seed=11,
            out_dir=str(out_dir),
            train_count=48,
            val_count=16,
            test_count=12,
            eval_count=0,
            grid_count=4,
            k=4,
            s=4,
            batch_size=16,
            max_epochs=2,
            patience=2,
        )
        cmd_experiment(config)
        return out_dir

    a = run(tmp_path / "a")
    b = run(tmp_path / "b")
    compared = []
    for rel in ("results.jsonl", "summary.txt", "grids/rep000.png", "grids/rep001.png"):
        one = (a / rel).read_bytes()
        two = (b / rel).read_bytes()
        assert one == two, f"{rel} differs between identical runs"
        compared.append(rel)
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0
    print(
        f"criterion 7 PASS ({elapsed:.1f}s; byte-identical: {', '.join(compared)})"
    )
