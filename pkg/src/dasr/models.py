"""Networks: the dense-block generator, both discriminators, and the frozen
feature pyramid that stands in for a pretrained perceptual backbone.

Every model keeps its parameters in a name -> Parameter registry and exposes
them in sorted-name order, which is the contract the checkpoint format and
the optimizer rely on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .imaging import Image, SOBEL_H, SOBEL_V, bicubic_resize
from .rng import generator
from .tensor import Parameter, Tensor

LRELU_SLOPE = 0.2

# the frozen feature extractor is the same across all runs and seeds
_FEATURE_EXTRACTOR_SEED = 0x5EEDFEA7

PRIOR_DEPTHS = ("shallow", "middle", "deep")


@dataclass
class GeneratorConfig:
    n_blocks: int = 4
    base_channels: int = 32
    growth_channels: int = 16
    scale: int = 2
    residual_scale: float = 0.2

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if not 0.0 <= self.residual_scale <= 1.0:
            raise ValueError(
                f"residual_scale must be in [0,1], got {self.residual_scale}")


def desk_generator_config(scale: int = 2) -> GeneratorConfig:
    return GeneratorConfig(scale=scale)


def paper_scale_generator_config(scale: int = 2) -> GeneratorConfig:
    return GeneratorConfig(n_blocks=23, base_channels=64, growth_channels=32,
                           scale=scale)


class Model:
    """Base: parameter registry with unique names, sorted enumeration."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def _add(self, name: str, data, frozen: bool = False) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(data, name=name, frozen=frozen)
        self._params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        """Trainable parameters in sorted-name order."""
        return [self._params[k] for k in sorted(self._params)
                if not self._params[k].frozen]

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """All parameters (frozen included) in sorted-name order."""
        return [(k, self._params[k].data) for k in sorted(self._params)]

    def load_named_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in tensors:
                raise ValueError(f"checkpoint missing tensor {name!r}")
            arr = np.asarray(tensors[name], dtype=np.float32)
            if arr.shape != p.shape:
                raise ValueError(
                    f"tensor {name!r}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.size for p in self._params.values() if not p.frozen)

    def frozen_hash(self) -> str:
        """SHA-256 over all frozen tensors, in sorted-name order."""
        h = hashlib.sha256()
        for k in sorted(self._params):
            p = self._params[k]
            if p.frozen:
                h.update(k.encode())
                h.update(p.data.tobytes())
        return h.hexdigest()


def _kaiming(rng: np.random.Generator, shape: tuple, fan_in: int,
             slope: float = LRELU_SLOPE) -> np.ndarray:
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    std = gain / np.sqrt(fan_in)
    return rng.normal(0.0, std, size=shape).astype(np.float32)


class Conv2dLayer:
    def __init__(self, model: Model, name: str, cin: int, cout: int,
                 rng: np.random.Generator, k: int = 3, stride: int = 1,
                 padding: int = 1, zero_init: bool = False):
        shape = (cout, cin, k, k)
        if zero_init:
            wdata = np.zeros(shape, dtype=np.float32)
        else:
            wdata = _kaiming(rng, shape, cin * k * k)
        self.weight = model._add(f"{name}.weight", wdata)
        self.bias = model._add(f"{name}.bias", np.zeros(cout, dtype=np.float32))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride,
                        padding=self.padding)


class LinearLayer:
    def __init__(self, model: Model, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator):
        self.weight = model._add(f"{name}.weight",
                                 _kaiming(rng, (d_out, d_in), d_in))
        self.bias = model._add(f"{name}.bias",
                               np.zeros(d_out, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class SobelLayer:
    """Fixed depthwise Sobel pair: C channels in, 2C channels out, valid."""

    def __init__(self, model: Model, name: str, channels: int):
        w = np.zeros((2 * channels, channels, 3, 3), dtype=np.float32)
        for c in range(channels):
            w[2 * c, c] = SOBEL_H
            w[2 * c + 1, c] = SOBEL_V
        self.weight = model._add(f"{name}.weight", w, frozen=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, stride=1, padding=0)


class DenseBlock:
    """Five 3x3 convs with dense concatenation and a scaled residual."""

    def __init__(self, model: Model, name: str, channels: int, growth: int,
                 residual_scale: float, rng: np.random.Generator):
        self.residual_scale = residual_scale
        self.convs = []
        cin = channels
        for i in range(4):
            self.convs.append(Conv2dLayer(model, f"{name}.conv{i}", cin,
                                          growth, rng))
            cin += growth
        self.convs.append(Conv2dLayer(model, f"{name}.conv4", cin, channels,
                                      rng))

    def __call__(self, x: Tensor) -> Tensor:
        feats = [x]
        for conv in self.convs[:-1]:
            inp = feats[0] if len(feats) == 1 else T.concat(feats, axis=1)
            feats.append(T.leaky_relu(conv(inp), LRELU_SLOPE))
        out = self.convs[-1](T.concat(feats, axis=1))
        return T.add(x, T.scale(out, self.residual_scale))


class RRDB:
    """Three dense blocks under an outer scaled residual.

    The outer residual adds the scaled *delta* of the dense chain, so a
    block with all-zero conv weights (or residual_scale 0) is exactly the
    identity.
    """

    def __init__(self, model: Model, name: str, channels: int, growth: int,
                 residual_scale: float, rng: np.random.Generator):
        self.residual_scale = residual_scale
        self.blocks = [
            DenseBlock(model, f"{name}.db{i}", channels, growth,
                       residual_scale, rng)
            for i in range(3)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        t = x
        for blk in self.blocks:
            t = blk(t)
        return T.add(x, T.scale(T.sub(t, x), self.residual_scale))


class Generator(Model):
    """1-channel super-resolution generator: shallow conv, dense-block
    trunk with a global skip, pixel-shuffle upsampler, zero-initialized
    output conv, and a bicubic skip from input to output.

    The learned path is a residual on top of the bicubic upscale, so a
    fresh generator reproduces the bicubic identity exactly and early
    training is stable around it.
    """

    def __init__(self, config: GeneratorConfig, seed: int):
        super().__init__()
        self.config = config
        rng = generator(seed, "generator-init")
        ch, gr = config.base_channels, config.growth_channels
        self.conv_first = Conv2dLayer(self, "conv_first", 1, ch, rng)
        self.blocks = [
            RRDB(self, f"rrdb{i}", ch, gr, config.residual_scale, rng)
            for i in range(config.n_blocks)
        ]
        self.trunk_conv = Conv2dLayer(self, "trunk_conv", ch, ch, rng)
        n_up = {2: 1, 4: 2}[config.scale]
        self.upsample = [
            Conv2dLayer(self, f"up{i}", ch, 4 * ch, rng) for i in range(n_up)
        ]
        self.conv_last = Conv2dLayer(self, "conv_last", ch, 1, rng,
                                     zero_init=True)

    def _bicubic_skip(self, lr: Tensor) -> Tensor:
        s = self.config.scale
        ups = []
        for i in range(lr.shape[0]):
            img = Image(lr.data[i, 0].astype(np.float64)[:, :, None])
            up = bicubic_resize(img, s * img.height, s * img.width)
            ups.append(up.array[:, :, 0])
        return Tensor(np.stack(ups)[:, None].astype(np.float32))

    def __call__(self, lr: Tensor) -> Tensor:
        if lr.data.ndim != 4 or lr.shape[1] != 1:
            raise ValueError(
                f"generator expects [N,1,h,w] input, got {lr.shape}")
        if lr.requires_grad:
            # the bicubic skip is treated as data; gradients w.r.t. the
            # generator input would silently miss its contribution
            raise ValueError("generator input must not require gradients")
        fea = self.conv_first(lr)
        t = fea
        for blk in self.blocks:
            t = blk(t)
        fea = T.add(fea, self.trunk_conv(t))
        for up in self.upsample:
            fea = T.leaky_relu(T.pixel_shuffle(up(fea), 2), LRELU_SLOPE)
        return T.add(self.conv_last(fea), self._bicubic_skip(lr))


_DISC_CHANNELS = (32, 64, 128, 256)


def _disc_stack(model: Model, prefix: str, rng: np.random.Generator,
                in_hw: int) -> tuple[list[Conv2dLayer], int]:
    """Four strided convs, channels doubling; returns layers + flat size."""
    layers = []
    cin = 1
    hw = in_hw
    for i, cout in enumerate(_DISC_CHANNELS):
        layers.append(Conv2dLayer(model, f"{prefix}.conv{i}", cin, cout, rng,
                                  stride=2, padding=1))
        cin = cout
        hw = (hw + 2 - 3) // 2 + 1
    return layers, cin * hw * hw


class DiscSpre(Model):
    """Stage-1 discriminator: strided conv stack -> flatten -> logit."""

    def __init__(self, in_hw: int, seed: int):
        super().__init__()
        self.in_hw = in_hw
        rng = generator(seed, "disc-spre-init")
        self.stack, flat = _disc_stack(self, "main", rng, in_hw)
        self.head = LinearLayer(self, "head", flat, 1, rng)
        self._flat = flat

    def __call__(self, img: Tensor) -> Tensor:
        t = img
        for conv in self.stack:
            t = T.leaky_relu(conv(t), LRELU_SLOPE)
        n = t.shape[0]
        flat_size = t.size // n
        if flat_size != self._flat:
            raise ValueError(
                f"discriminator built for {self.in_hw}x{self.in_hw} inputs "
                f"(flat {self._flat}), got feature size {flat_size}")
        return self.head(T.reshape(t, (n, flat_size)))


class DiscTrans(Model):
    """Stage-2 discriminator with a texture-prior branch.

    The prior branch alternates learned valid convs with fixed Sobel filter
    layers, so an edge-free input yields an exactly zero prior latent. Its
    output v_p is exposed alongside the logit because the texture loss
    compares prior latents of prediction and target.
    """

    def __init__(self, in_hw: int, seed: int, prior_blocks: int = 2):
        super().__init__()
        if prior_blocks < 1:
            raise ValueError(f"prior_blocks must be >= 1, got {prior_blocks}")
        self.in_hw = in_hw
        rng = generator(seed, "disc-trans-init")
        self.stack, main_flat = _disc_stack(self, "main", rng, in_hw)

        self.prior: list[tuple[Conv2dLayer, SobelLayer]] = []
        cin = 1
        hw = in_hw
        for i in range(prior_blocks):
            cout = 16 * (2 ** i)
            conv = Conv2dLayer(self, f"prior.conv{i}", cin, cout, rng,
                               stride=2, padding=0)
            hw = (hw - 3) // 2 + 1
            sobel = SobelLayer(self, f"prior.sobel{i}", cout)
            hw = hw - 2
            if hw < 1:
                raise ValueError(
                    f"input {in_hw}x{in_hw} too small for {prior_blocks} "
                    "prior blocks")
            self.prior.append((conv, sobel))
            cin = 2 * cout
        prior_flat = cin * hw * hw
        self.head = LinearLayer(self, "head", main_flat + prior_flat, 1, rng)
        self._main_flat = main_flat
        self._prior_flat = prior_flat

    def prior_branch(self, img: Tensor) -> Tensor:
        t = img
        for conv, sobel in self.prior:
            t = T.leaky_relu(sobel(conv(t)), LRELU_SLOPE)
        return t

    def __call__(self, img: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (logit [N,1], prior latent v_p)."""
        v_p = self.prior_branch(img)
        t = img
        for conv in self.stack:
            t = T.leaky_relu(conv(t), LRELU_SLOPE)
        n = t.shape[0]
        if t.size // n != self._main_flat or v_p.size // n != self._prior_flat:
            raise ValueError(
                f"discriminator built for {self.in_hw}x{self.in_hw} inputs, "
                f"got {img.shape[2]}x{img.shape[3]}")
        v_g = T.reshape(t, (n, self._main_flat))
        fused = T.concat([T.reshape(v_p, (n, self._prior_flat)), v_g], axis=1)
        return self.head(fused), v_p


class FeatureExtractor(Model):
    """Frozen random conv pyramid standing in for a pretrained backbone.

    Three stages at halving resolution; weights come from a fixed seed that
    does not depend on the run seed, so features are comparable across runs.
    tap_depth names the stage used as the noise-loss feature level
    (shallow=0, middle=1, deep=2).
    """

    K = 3
    _CHANNELS = (16, 32, 64)

    def __init__(self, tap_depth: str = "middle"):
        super().__init__()
        if tap_depth not in PRIOR_DEPTHS:
            raise ValueError(
                f"tap_depth must be one of {PRIOR_DEPTHS}, got {tap_depth!r}")
        self.tap_depth = tap_depth
        self.stage_weights = [1.0 / self.K] * self.K
        rng = generator(_FEATURE_EXTRACTOR_SEED, "feature-extractor")
        self.stages = []
        cin = 1
        for i, cout in enumerate(self._CHANNELS):
            w = _kaiming(rng, (cout, cin, 3, 3), cin * 9)
            self.stages.append(self._add(f"stage{i}.weight", w, frozen=True))
            cin = cout

    def __call__(self, img: Tensor) -> list[Tensor]:
        """K feature maps at decreasing resolution."""
        feats = []
        t = img
        for w in self.stages:
            t = T.leaky_relu(T.conv2d(t, w, stride=2, padding=1),
                             LRELU_SLOPE)
            feats.append(t)
        return feats

    def tap_weights(self) -> list[float]:
        """One-hot stage weights for the configured tap depth."""
        idx = PRIOR_DEPTHS.index(self.tap_depth)
        return [1.0 if i == idx else 0.0 for i in range(self.K)]
