"""Conditional VAEs for images with block-missing pixels.

Training maximizes a conditional evidence lower bound on log p(x_o | m)
where only observed pixels enter the reconstruction term; the mask can be
fed to neither network, the encoder, or both encoder and decoder.  Masks
are generated MCAR or MNAR (block statistics tied to the class label),
frozen, and shared by all methods under comparison.  Evaluation estimates
the marginal likelihood by importance sampling, the imputation likelihood
on the missing side, bits/pixel, and per-pixel reconstruction errors, with
paired t-tests across replicates.
"""

from maskedvae.evaluation import (
    MetricReport,
    bits_per_pixel,
    dataset_imputation,
    dataset_logpx,
    dataset_mean_reconstruction,
    evaluate_dataset,
    importance_logpx,
    imputation_loglik,
    mean_reconstruction,
    mse_metrics,
    render_grid,
)
from maskedvae.idx import (
    ImageDataset,
    SplitSpec,
    load_dataset,
    read_idx,
    split_train_val,
    write_idx,
)
from maskedvae.masking import (
    MASK_TABLES,
    MNIST_MASK_TABLE,
    SVHN_MASK_TABLE,
    MaskConfig,
    MaskedSample,
    assign_mnar_configs,
    corrupt_mean,
    corrupt_zero,
    generate_masks,
    sample_mcar_mask,
    sample_mnar_mask,
)
from maskedvae.model import (
    BERNOULLI,
    DATASET_SPECS,
    LOGISTIC,
    MaskedVAE,
    ModelSpec,
    Variant,
    mnist_spec,
    svhn_spec,
    tiny_spec,
)
from maskedvae.rng import child_seed, substream
from maskedvae.stats import (
    paired_t_test,
    paired_t_test_one_sided,
    significance_stars,
)
from maskedvae.training import (
    TrainConfig,
    TrainResult,
    load_model_for_eval,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BERNOULLI",
    "DATASET_SPECS",
    "ImageDataset",
    "LOGISTIC",
    "MASK_TABLES",
    "MNIST_MASK_TABLE",
    "MaskConfig",
    "MaskedSample",
    "MaskedVAE",
    "MetricReport",
    "ModelSpec",
    "SVHN_MASK_TABLE",
    "SplitSpec",
    "TrainConfig",
    "TrainResult",
    "Variant",
    "assign_mnar_configs",
    "bits_per_pixel",
    "child_seed",
    "corrupt_mean",
    "corrupt_zero",
    "dataset_imputation",
    "dataset_logpx",
    "dataset_mean_reconstruction",
    "evaluate_dataset",
    "generate_masks",
    "importance_logpx",
    "imputation_loglik",
    "load_dataset",
    "load_model_for_eval",
    "mean_reconstruction",
    "mnist_spec",
    "mse_metrics",
    "paired_t_test",
    "paired_t_test_one_sided",
    "read_idx",
    "render_grid",
    "sample_mcar_mask",
    "sample_mnar_mask",
    "significance_stars",
    "split_train_val",
    "substream",
    "svhn_spec",
    "tiny_spec",
    "train",
    "write_idx",
]
