"""Conditional VAE over corrupted images with mask-conditioning variants.

The generative story: a latent z with standard-normal prior produces the
observed pixels through the decoder likelihood p(x_o | z, m); the encoder
q(z | x_tilde, m) sees the zero-filled corrupted image.  Which networks
receive the mask is the conditioning variant:

  * no_ind: neither network sees m
  * eo_ind: the encoder sees m (as an extra input channel)
  * ed_ind: encoder and decoder both see m (the decoder concatenates it
    after the transposed-convolution stack)

The prior over z never depends on m, so the usual closed-form Gaussian KL
applies and the training objective is recon - KL with the reconstruction
summed over observed pixels only.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from maskedvae import likelihoods, nn
from maskedvae import rng as rng_mod


class Variant(Enum):
    NO_IND = "no_ind"
    EO_IND = "eo_ind"
    ED_IND = "ed_ind"


BERNOULLI = "bernoulli"
LOGISTIC = "discretized-logistic"

POSTERIOR_STD_FLOOR = 1e-3


@dataclass(frozen=True)
class LayerSpec:
    """One decoder/encoder layer descriptor.

    kind 'conv'/'tconv' use (filters, kernel, stride, activation);
    'fc' uses (filters, activation); 'reshape' uses (h, w, c);
    'concat-mask' has no fields.
    """

    kind: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    activation: str = "linear"
    h: int = 0
    w: int = 0
    c: int = 0

    def to_text(self) -> str:
        if self.kind in ("conv", "tconv"):
            return (
                f"{self.kind} filters={self.filters} kernel={self.kernel} "
                f"stride={self.stride} activation={self.activation}"
            )
        if self.kind == "fc":
            return f"fc units={self.filters} activation={self.activation}"
        if self.kind == "reshape":
            return f"reshape h={self.h} w={self.w} c={self.c}"
        if self.kind == "concat-mask":
            return "concat-mask"
        raise ValueError(f"unknown layer kind {self.kind!r}")

    @classmethod
    def from_text(cls, line: str) -> "LayerSpec":
        parts = line.split()
        kind = parts[0]
        kv = {}
        for part in parts[1:]:
            key, _, value = part.partition("=")
            kv[key] = value
        if kind in ("conv", "tconv"):
            return cls(
                kind=kind,
                filters=int(kv["filters"]),
                kernel=int(kv["kernel"]),
                stride=int(kv["stride"]),
                activation=kv["activation"],
            )
        if kind == "fc":
            return cls(kind="fc", filters=int(kv["units"]), activation=kv["activation"])
        if kind == "reshape":
            return cls(kind="reshape", h=int(kv["h"]), w=int(kv["w"]), c=int(kv["c"]))
        if kind == "concat-mask":
            return cls(kind="concat-mask")
        raise ValueError(f"unknown layer kind {kind!r}")


def conv(filters, kernel, stride, activation):
    return LayerSpec("conv", filters=filters, kernel=kernel, stride=stride,
                     activation=activation)


def tconv(filters, kernel, stride, activation):
    return LayerSpec("tconv", filters=filters, kernel=kernel, stride=stride,
                     activation=activation)


def fc(units, activation):
    return LayerSpec("fc", filters=units, activation=activation)


def reshape(h, w, c):
    return LayerSpec("reshape", h=h, w=w, c=c)


def concat_mask():
    return LayerSpec("concat-mask")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: layers, latent size, likelihood, variant."""

    latent_dim: int
    image_shape: tuple
    likelihood: str
    variant: Variant
    encoder_layers: tuple
    decoder_layers: tuple

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.likelihood not in (BERNOULLI, LOGISTIC):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        has_concat = any(s.kind == "concat-mask" for s in self.decoder_layers)
        if has_concat != (self.variant is Variant.ED_IND):
            raise ValueError(
                "decoder concat-mask layer is required exactly when the "
                "variant is ed_ind"
            )
        if sum(s.kind == "concat-mask" for s in self.decoder_layers) > 1:
            raise ValueError("at most one concat-mask layer is allowed")

    @property
    def output_channels(self) -> int:
        c = self.image_shape[2]
        return c if self.likelihood == BERNOULLI else 2 * c

    def to_text(self) -> str:
        lines = [
            f"latent_dim {self.latent_dim}",
            f"image {self.image_shape[0]} {self.image_shape[1]} "
            f"{self.image_shape[2]}",
            f"likelihood {self.likelihood}",
            f"variant {self.variant.value}",
        ]
        lines += [f"encoder {s.to_text()}" for s in self.encoder_layers]
        lines += [f"decoder {s.to_text()}" for s in self.decoder_layers]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelSpec":
        fields = {}
        encoder, decoder = [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            if key == "encoder":
                encoder.append(LayerSpec.from_text(rest))
            elif key == "decoder":
                decoder.append(LayerSpec.from_text(rest))
            elif key in ("latent_dim", "image", "likelihood", "variant"):
                fields[key] = rest
            else:
                raise ValueError(f"unknown model spec key {key!r}")
        missing = {"latent_dim", "image", "likelihood", "variant"} - set(fields)
        if missing:
            raise ValueError(f"model spec missing keys: {sorted(missing)}")
        h, w, c = (int(v) for v in fields["image"].split())
        return cls(
            latent_dim=int(fields["latent_dim"]),
            image_shape=(h, w, c),
            likelihood=fields["likelihood"],
            variant=Variant(fields["variant"]),
            encoder_layers=tuple(encoder),
            decoder_layers=tuple(decoder),
        )


def mnist_spec(variant: Variant) -> ModelSpec:
    decoder = [
        fc(7 * 7 * 20, "relu"),
        reshape(7, 7, 20),
        tconv(40, 5, 2, "relu"),
        tconv(20, 5, 2, "relu"),
    ]
    if variant is Variant.ED_IND:
        decoder.append(concat_mask())
    decoder += [
        conv(10, 5, 1, "relu"),
        conv(10, 5, 1, "relu"),
        conv(1, 3, 1, "sigmoid"),
    ]
    return ModelSpec(
        latent_dim=50,
        image_shape=(28, 28, 1),
        likelihood=BERNOULLI,
        variant=variant,
        encoder_layers=(conv(20, 5, 2, "relu"), conv(40, 5, 2, "relu")),
        decoder_layers=tuple(decoder),
    )


def svhn_spec(variant: Variant) -> ModelSpec:
    decoder = [
        fc(4 * 4 * 60, "relu"),
        reshape(4, 4, 60),
        tconv(60, 5, 2, "relu"),
        tconv(60, 3, 2, "relu"),
        tconv(40, 3, 2, "relu"),
    ]
    if variant is Variant.ED_IND:
        decoder.append(concat_mask())
    decoder += [
        conv(30, 5, 1, "relu"),
        conv(30, 5, 1, "relu"),
        # 3 linear means + 3 exponential-activated scales, floored at 1e-2
        conv(6, 3, 1, "linear"),
    ]
    return ModelSpec(
        latent_dim=200,
        image_shape=(32, 32, 3),
        likelihood=LOGISTIC,
        variant=variant,
        encoder_layers=(
            conv(40, 3, 2, "relu"),
            conv(60, 3, 2, "relu"),
            conv(60, 5, 2, "relu"),
        ),
        decoder_layers=tuple(decoder),
    )


def tiny_spec(variant: Variant, latent_dim=2, image=4, likelihood=BERNOULLI,
              channels=1) -> ModelSpec:
    """Small spec for oracle tests: one conv each way on image x image pixels."""
    decoder = [
        fc(image * image * 3, "relu"),
        reshape(image, image, 3),
    ]
    if variant is Variant.ED_IND:
        decoder.append(concat_mask())
    out_ch = channels if likelihood == BERNOULLI else 2 * channels
    final_act = "sigmoid" if likelihood == BERNOULLI else "linear"
    decoder.append(conv(out_ch, 3, 1, final_act))
    return ModelSpec(
        latent_dim=latent_dim,
        image_shape=(image, image, channels),
        likelihood=likelihood,
        variant=variant,
        encoder_layers=(conv(3, 3, 1, "relu"),),
        decoder_layers=tuple(decoder),
    )


DATASET_SPECS = {"mnist": mnist_spec, "svhn": svhn_spec}


class MaskedVAE:
    """Encoder/decoder pair with parameters, built from a ModelSpec.

    The final decoder convolution always runs with a linear activation; the
    declared output activation (Bernoulli sigmoid, logistic exponential
    scales) is applied on top of the raw output, which keeps the training
    gradients finite when outputs saturate.
    """

    def __init__(self, spec: ModelSpec, init_seed: int, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype).type
        if self.dtype not in (np.float32, np.float64):
            raise ValueError("network dtype must be float32 or float64")
        gen = rng_mod.substream(init_seed, "model-init")
        h, w, c = spec.image_shape
        in_ch = c + (0 if spec.variant is Variant.NO_IND else 1)

        layers = []
        for i, ls in enumerate(spec.encoder_layers):
            if ls.kind != "conv":
                raise ValueError(f"encoder layer {i} must be conv, got {ls.kind}")
            layers.append(
                nn.Conv2d(f"enc/conv{i}", in_ch, ls.filters, ls.kernel,
                          ls.stride, ls.activation, gen, self.dtype)
            )
            h = -(-h // ls.stride)
            w = -(-w // ls.stride)
            in_ch = ls.filters
        layers.append(nn.Flatten())
        # the data gradient at the encoder input is never consumed
        layers[0].skip_input_grad = True
        self.encoder_trunk = nn.Sequential(layers)
        feat = h * w * in_ch
        self.head_mu = nn.Dense("enc/mu", feat, spec.latent_dim, "linear",
                                gen, self.dtype)
        self.head_sigma = nn.Dense("enc/sigma", feat, spec.latent_dim,
                                   "softplus", gen, self.dtype)

        ih, iw, ic = spec.image_shape
        pre, post = [], []
        current = pre
        dh = dw = dc = 0
        features = spec.latent_dim
        for i, ls in enumerate(spec.decoder_layers):
            is_last = i == len(spec.decoder_layers) - 1
            if ls.kind == "fc":
                current.append(
                    nn.Dense(f"dec/fc{i}", features, ls.filters,
                             ls.activation, gen, self.dtype)
                )
                features = ls.filters
            elif ls.kind == "reshape":
                if features != ls.h * ls.w * ls.c:
                    raise ValueError(
                        f"decoder reshape to {ls.h}x{ls.w}x{ls.c} does not "
                        f"match {features} features"
                    )
                current.append(nn.Reshape(ls.h, ls.w, ls.c, name=f"dec/reshape{i}"))
                dh, dw, dc = ls.h, ls.w, ls.c
            elif ls.kind == "tconv":
                current.append(
                    nn.ConvTranspose2d(f"dec/tconv{i}", dc, ls.filters,
                                       ls.kernel, ls.stride, ls.activation,
                                       gen, self.dtype)
                )
                dh, dw, dc = dh * ls.stride, dw * ls.stride, ls.filters
            elif ls.kind == "concat-mask":
                if (dh, dw) != (ih, iw):
                    raise ValueError(
                        f"concat-mask at {dh}x{dw} but the mask is {ih}x{iw}"
                    )
                dc += 1
                current = post
            elif ls.kind == "conv":
                activation = ls.activation
                if is_last:
                    if spec.likelihood == BERNOULLI and activation != "sigmoid":
                        raise ValueError(
                            "bernoulli output layer must declare sigmoid"
                        )
                    if spec.likelihood == LOGISTIC and activation != "linear":
                        raise ValueError(
                            "logistic output layer must declare linear"
                        )
                    activation = "linear"
                current.append(
                    nn.Conv2d(f"dec/conv{i}", dc, ls.filters, ls.kernel,
                              ls.stride, activation, gen, self.dtype)
                )
                dh = -(-dh // ls.stride)
                dw = -(-dw // ls.stride)
                dc = ls.filters
            else:
                raise ValueError(f"unknown decoder layer kind {ls.kind!r}")
        if (dh, dw, dc) != (ih, iw, spec.output_channels):
            raise ValueError(
                f"decoder output {dh}x{dw}x{dc} does not match expected "
                f"{ih}x{iw}x{spec.output_channels}"
            )
        self.decoder_pre = nn.Sequential(pre)
        self.decoder_post = nn.Sequential(post)

    # -- parameter access ------------------------------------------------

    def _modules(self):
        return (self.encoder_trunk, self.head_mu, self.head_sigma,
                self.decoder_pre, self.decoder_post)

    def params(self) -> dict:
        out = {}
        for mod in self._modules():
            out.update(mod.params())
        return out

    def grads(self) -> dict:
        out = {}
        for mod in self._modules():
            out.update(mod.grads())
        return out

    def set_params(self, values: dict) -> None:
        current = self.params()
        if set(values) != set(current):
            raise ValueError("parameter name mismatch")
        for name, arr in current.items():
            new = np.asarray(values[name], dtype=self.dtype)
            if new.shape != arr.shape:
                raise ValueError(f"{name}: shape {new.shape} != {arr.shape}")
            arr[...] = new

    # -- forward paths ---------------------------------------------------

    def _check_images(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[np.newaxis]
        if x.shape[1:] != self.spec.image_shape:
            raise ValueError(
                f"images shaped {x.shape[1:]}, expected {self.spec.image_shape}"
            )
        return x

    def _check_mask(self, m, n, required: bool):
        if m is None:
            if required:
                raise ValueError(
                    f"variant {self.spec.variant.value} requires a mask"
                )
            return None
        m = np.asarray(m)
        if m.ndim == 2:
            m = m[np.newaxis]
        if m.shape != (n,) + self.spec.image_shape[:2]:
            raise ValueError(
                f"mask shaped {m.shape}, expected {(n,) + self.spec.image_shape[:2]}"
            )
        return m.astype(self.dtype)

    def encode(self, x_tilde, m=None):
        """Posterior parameters (mu, sigma) with sigma >= 1e-3."""
        x = self._check_images(x_tilde)
        sees_mask = self.spec.variant is not Variant.NO_IND
        m = self._check_mask(m, x.shape[0], required=sees_mask)
        if sees_mask:
            x = np.concatenate([x, m[..., np.newaxis]], axis=-1)
        feat = self.encoder_trunk.forward(x)
        mu = self.head_mu.forward(feat)
        sigma = self.head_sigma.forward(feat) + self.dtype(POSTERIOR_STD_FLOOR)
        return mu, sigma

    @staticmethod
    def reparameterize(mu, sigma, eps):
        """z = mu + sigma * eps for standard-normal eps."""
        if eps.shape != np.shape(mu):
            raise ValueError(f"eps shaped {eps.shape}, expected {np.shape(mu)}")
        return mu + sigma * eps

    def decode_raw(self, z, m=None):
        """Raw (pre-output-activation) decoder tensor, (N, H, W, C_out)."""
        z = np.asarray(z, dtype=self.dtype)
        if z.ndim == 1:
            z = z[np.newaxis]
        if z.shape[1] != self.spec.latent_dim:
            raise ValueError(
                f"latent shaped {z.shape}, expected (N, {self.spec.latent_dim})"
            )
        hidden = self.decoder_pre.forward(z)
        if self.spec.variant is Variant.ED_IND:
            m = self._check_mask(m, z.shape[0], required=True)
            hidden = np.concatenate([hidden, m[..., np.newaxis]], axis=-1)
        return self.decoder_post.forward(hidden)

    def _backward_decoder(self, draw):
        dhidden = self.decoder_post.backward(draw)
        if self.spec.variant is Variant.ED_IND:
            dhidden = dhidden[..., :-1]
        return self.decoder_pre.backward(dhidden)

    def split_logistic_raw(self, raw):
        """Raw 2C channels -> (mu, scale, dscale/draw) in float64."""
        c = self.spec.image_shape[2]
        mu = np.asarray(raw[..., :c], dtype=np.float64)
        raw_s = np.asarray(raw[..., c:], dtype=np.float64)
        expd = np.exp(np.minimum(raw_s, nn._EXP_CLIP))
        s = np.maximum(expd, likelihoods.SCALE_FLOOR)
        dsdraw = np.where(
            (expd > likelihoods.SCALE_FLOOR) & (raw_s < nn._EXP_CLIP), expd, 0.0
        )
        return mu, s, dsdraw

    def decode(self, z, m=None):
        """Likelihood parameters: Bernoulli p, or logistic (mu, s)."""
        raw = self.decode_raw(z, m)
        if self.spec.likelihood == BERNOULLI:
            return nn.sigmoid(raw)
        mu, s, _ = self.split_logistic_raw(raw)
        return mu, s

    def recon_logprob_from_raw(self, raw, target, sel):
        """Per-sample masked reconstruction log-probs (float64)."""
        sel = np.broadcast_to(
            np.asarray(sel, dtype=np.float64)[..., np.newaxis], target.shape
        )
        if self.spec.likelihood == BERNOULLI:
            values, _ = likelihoods.bernoulli_logprob_from_logits(target, raw, sel)
            return values
        mu, s, _ = self.split_logistic_raw(raw)
        values, _, _ = likelihoods.discretized_logistic_logprob_grads(
            target, mu, s, sel
        )
        return values

    # -- objectives --------------------------------------------------------

    def elbo_with_grads(self, x_tilde, m, eps):
        """Batched single-sample ELBO values and gradients of their mean.

        Returns (elbos, recons, kls, grads) where the first three are
        per-sample float64 vectors and grads maps parameter names to arrays
        (ascent direction: gradients of mean ELBO).
        """
        x = self._check_images(x_tilde)
        n = x.shape[0]
        mask = self._check_mask(m, n, required=True)
        eps = np.asarray(eps, dtype=np.float64)

        mu_net, sigma_net = self.encode(
            x, mask if self.spec.variant is not Variant.NO_IND else None
        )
        mu = np.asarray(mu_net, dtype=np.float64)
        sigma = np.asarray(sigma_net, dtype=np.float64)
        z = self.reparameterize(mu, sigma, eps)
        dec_m = mask if self.spec.variant is Variant.ED_IND else None
        raw = self.decode_raw(z.astype(self.dtype), dec_m)

        sel = np.broadcast_to(
            np.asarray(mask, dtype=np.float64)[..., np.newaxis], x.shape
        )
        target = np.asarray(x, dtype=np.float64)
        if self.spec.likelihood == BERNOULLI:
            recons, draw = likelihoods.bernoulli_logprob_from_logits(
                target, raw, sel
            )
        else:
            lmu, ls, dsdraw = self.split_logistic_raw(raw)
            recons, dlmu, dls = likelihoods.discretized_logistic_logprob_grads(
                target, lmu, ls, sel
            )
            draw = np.concatenate([dlmu, dls * dsdraw], axis=-1)
        kls, dkl_mu, dkl_sigma = likelihoods.gaussian_kl_grads(mu, sigma)
        elbos = recons - kls

        # gradients of mean(elbo): decoder path, then encoder heads
        dz = np.asarray(
            self._backward_decoder((draw / n).astype(self.dtype)),
            dtype=np.float64,
        )
        dmu = dz - dkl_mu / n
        dsigma = dz * eps - dkl_sigma / n
        dfeat = self.head_mu.backward(dmu.astype(self.dtype))
        dfeat = dfeat + self.head_sigma.backward(dsigma.astype(self.dtype))
        self.encoder_trunk.backward(dfeat)
        return elbos, recons, kls, self.grads()

    def elbo_values(self, x_tilde, m, eps):
        """Per-sample single-sample ELBO values without gradients."""
        x = self._check_images(x_tilde)
        mask = self._check_mask(m, x.shape[0], required=True)
        mu, sigma = self.encode(
            x, mask if self.spec.variant is not Variant.NO_IND else None
        )
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        z = self.reparameterize(mu, sigma, np.asarray(eps, dtype=np.float64))
        dec_m = mask if self.spec.variant is Variant.ED_IND else None
        raw = self.decode_raw(z.astype(self.dtype), dec_m)
        recons = self.recon_logprob_from_raw(
            raw, np.asarray(x, dtype=np.float64), mask
        )
        kls, _, _ = likelihoods.gaussian_kl_grads(mu, sigma)
        return recons - kls

    def elbo_single_sample(self, sample, eps):
        """(elbo, recon, kl) for one MaskedSample and one noise draw."""
        mu, sigma = self.encode(
            sample.x_tilde,
            sample.m if self.spec.variant is not Variant.NO_IND else None,
        )
        mu64 = np.asarray(mu, dtype=np.float64)
        sigma64 = np.asarray(sigma, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64).reshape(mu64.shape)
        z = self.reparameterize(mu64, sigma64, eps)
        dec_m = sample.m if self.spec.variant is Variant.ED_IND else None
        raw = self.decode_raw(z.astype(self.dtype), dec_m)
        target = np.asarray(sample.x_tilde, dtype=np.float64)[np.newaxis]
        recon = float(
            self.recon_logprob_from_raw(raw, target, sample.m[np.newaxis])[0]
        )
        kl = float(likelihoods.gaussian_kl_to_standard_normal(mu64[0], sigma64[0]))
        return recon - kl, recon, kl
