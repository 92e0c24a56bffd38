"""Parameter containers and forward contexts for training and frozen inference."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autograd import Tensor
from .backbone import backbone_forward
from .binarize import LatentParameter, FrozenParameter, binarize, freeze, get_binarizer, sign
from .config import ModelConfig
from .embedding import EmbeddedSequence, embed
from .errors import ConfigError
from .exits import exit_head_forward
from .packed import PackedMatrix, pack, packed_matmul_t


def block_weight_shapes(cfg: ModelConfig, c: int) -> dict[str, tuple[int, ...]]:
    d, dh = cfg.model_dim, cfg.slfn_dim
    shapes = {f"block{c}.attn.{w}": (d, d) for w in ("wq", "wk", "wv", "wo")}
    if cfg.use_slfn:
        p = f"block{c}.slfn"
        shapes.update({f"{p}.w_sg": (d, dh), f"{p}.w_tg": (d, dh),
                       f"{p}.u_sg": (dh, dh), f"{p}.u_tg": (dh, dh)})
        if cfg.slfn_rule == "corrected" and not cfg.share_sh_weight:
            shapes[f"{p}.u_sh"] = (dh, dh)
        shapes[f"{p}.proj"] = (dh, d)
    return shapes


def block_fp_shapes(cfg: ModelConfig, c: int) -> dict[str, tuple[int, ...]]:
    norms = ("ln1", "ln2") if cfg.use_slfn else ("ln1",)
    return {f"block{c}.{n}.{k}": (cfg.model_dim,) for n in norms for k in ("gain", "bias")}


def head_weight_shapes(cfg: ModelConfig, c: int) -> dict[str, tuple[int, ...]]:
    return {f"head{c}.w1": (cfg.model_dim, cfg.exit_dim),
            f"head{c}.w2": (cfg.exit_dim, cfg.num_classes)}


def binarized_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for c in range(1, cfg.num_blocks + 1):
        shapes.update(block_weight_shapes(cfg, c))
    for c in cfg.exit_blocks:
        shapes.update(head_weight_shapes(cfg, c))
    return shapes


def full_precision_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {"embedding": (cfg.vocab_size + 2, cfg.embed_dim)}
    for c in range(1, cfg.num_blocks + 1):
        shapes.update(block_fp_shapes(cfg, c))
    for c in cfg.exit_blocks:
        shapes[f"head{c}.bias"] = (cfg.num_classes,)
    return shapes


def block_parameter_count(cfg: ModelConfig, c: int = 1) -> int:
    shapes = {**block_weight_shapes(cfg, c), **block_fp_shapes(cfg, c)}
    return int(sum(np.prod(s) for s in shapes.values()))


def head_parameter_count(cfg: ModelConfig, c: int = 1) -> int:
    return int(sum(np.prod(s) for s in head_weight_shapes(cfg, c).values())) + cfg.num_classes


class TrainingContext:
    """Forward context over latent weights: ``b(W^r)`` and ``b(A)`` everywhere.

    ``weights="sign"`` swaps the weight binarizer for ``sign`` while leaving
    activations on the configured binarizer; this is the reference the
    frozen model must reproduce.
    """

    def __init__(self, model: "BEExformer", training: bool = False,
                 rng: np.random.Generator | None = None, weights: str | None = None):
        self.model = model
        self.training = training
        self.rng = rng
        self.act = get_binarizer(model.config.binarizer)
        self._weight_fn = get_binarizer(weights) if weights else self.act
        self._cache: dict[str, Tensor] = {}
        if training and model.config.dropout > 0 and rng is None:
            raise ConfigError("training-mode forward with dropout needs an rng")

    def weight(self, name: str) -> Tensor:
        w = self._cache.get(name)
        if w is None:
            w = self._cache[name] = self._weight_fn(self.model.latents[name].latent)
        return w

    def bilinear(self, x: Tensor, name: str) -> Tensor:
        return self.act(x) @ self.weight(name)

    def fp(self, name: str) -> Tensor:
        return self.model.fp[name]

    def dropout(self, x: Tensor) -> Tensor:
        p = self.model.config.dropout
        if not self.training or p == 0.0:
            return x
        keep = (self.rng.random(x.shape) >= p) / (1.0 - p)
        return x * Tensor(keep)


class FrozenContext:
    """Forward context over frozen +-1 weights.

    ``activations="b2"`` keeps the polynomial activation binarizer (weights
    alone are frozen); ``"sign"`` makes every matmul operand +-1, which is
    what the packed XNOR-popcount path computes.
    """

    def __init__(self, model: "FrozenModel", activations: str = "b2", packed: bool = False):
        if packed and activations != "sign":
            raise ConfigError("the packed path needs sign activations")
        if activations not in ("b2", "sign"):
            raise ConfigError(f"frozen activations must be 'b2' or 'sign', got {activations!r}")
        self.model = model
        self.packed = packed
        self.act = sign if activations == "sign" else binarize

    def weight(self, name: str) -> Tensor:
        return self.model.weight_tensor(name)

    def bilinear(self, x: Tensor, name: str) -> Tensor:
        if not self.packed:
            return self.act(x) @ self.weight(name)
        k = x.shape[-1]
        rows = pack(np.where(x.data.reshape(-1, k) < 0, -1.0, 1.0))
        out = packed_matmul_t(rows, self.model.transposed(name))
        return Tensor(out.reshape(*x.shape[:-1], out.shape[-1]))

    def fp(self, name: str) -> Tensor:
        return self.model.fp[name]

    def dropout(self, x: Tensor) -> Tensor:
        return x


def forward_exits(model, ids, ctx) -> tuple[EmbeddedSequence, list[Tensor], dict[int, Tensor]]:
    """Embed ``ids`` ``(B, L)``, run every block, and evaluate every exit head."""
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    x = model.embed(ids)
    hiddens = backbone_forward(x, ctx, model.config)
    logits = {c: exit_head_forward(hiddens[c - 1], ctx, c, x.pad_mask) for c in model.config.exit_blocks}
    return x, hiddens, logits


class BEExformer:
    """Trainable model: binarized latent weights plus full-precision extras."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        r = config.init_range
        self.latents: dict[str, LatentParameter] = {
            name: LatentParameter(name, rng.uniform(-r, r, size=shape))
            for name, shape in binarized_shapes(config).items()
        }
        self.fp: dict[str, Tensor] = {}
        for name, shape in full_precision_shapes(config).items():
            if name == "embedding":
                values = rng.uniform(-r, r, size=shape)
                values[0] = 0.0
            elif name.endswith(".gain"):
                values = np.ones(shape)
            else:
                values = np.zeros(shape)
            self.fp[name] = Tensor(values, requires_grad=True)

    def latent_parameters(self) -> list[LatentParameter]:
        return list(self.latents.values())

    def fp_tensors(self) -> list[Tensor]:
        return list(self.fp.values())

    def tensors(self) -> Iterator[tuple[str, Tensor]]:
        for name, p in self.latents.items():
            yield name, p.latent
        yield from self.fp.items()

    def zero_grad(self) -> None:
        for _, t in self.tensors():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.tensors())

    def context(self, training: bool = False, rng=None, weights: str | None = None) -> TrainingContext:
        return TrainingContext(self, training, rng, weights)

    def embed(self, ids) -> EmbeddedSequence:
        return embed(ids, self.fp["embedding"])

    def forward(self, ids, training: bool = False, rng=None) -> dict[int, Tensor]:
        """Logits ``(B, m)`` of every exit head, keyed by block index."""
        return forward_exits(self, ids, self.context(training, rng))[2]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.tensors():
            t.data[...] = state[name]

    def freeze(self, activations: str = "b2") -> "FrozenModel":
        return FrozenModel(
            self.config,
            {p.name: p for p in freeze(self.latent_parameters())},
            {name: t.data for name, t in self.fp.items()},
            activations,
        )


class FrozenModel:
    """Inference-only model: sign-frozen packed weights, float32 full-precision extras."""

    def __init__(self, config: ModelConfig, weights: dict[str, FrozenParameter],
                 fp: dict[str, np.ndarray], activations: str = "b2"):
        self.config = config
        self.weights = weights
        self.fp = {name: Tensor(np.asarray(v, dtype=np.float32).astype(np.float64)) for name, v in fp.items()}
        self.activations = activations
        self._dense: dict[str, Tensor] = {}
        self._transposed: dict[str, PackedMatrix] = {}

    def weight_tensor(self, name: str) -> Tensor:
        w = self._dense.get(name)
        if w is None:
            w = self._dense[name] = Tensor(self.weights[name].values())
        return w

    def transposed(self, name: str) -> PackedMatrix:
        t = self._transposed.get(name)
        if t is None:
            t = self._transposed[name] = self.weights[name].packed.transpose()
        return t

    def context(self, packed: bool = False, activations: str | None = None) -> FrozenContext:
        return FrozenContext(self, activations or ("sign" if packed else self.activations), packed)

    def embed(self, ids) -> EmbeddedSequence:
        return embed(ids, self.fp["embedding"])

    def forward(self, ids, packed: bool = False, activations: str | None = None) -> dict[int, Tensor]:
        return forward_exits(self, ids, self.context(packed, activations))[2]

    def num_parameters(self) -> int:
        return sum(int(np.prod(p.shape)) for p in self.weights.values()) + sum(t.size for t in self.fp.values())
