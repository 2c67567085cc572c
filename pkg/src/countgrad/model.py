"""Conditioned convolutional counter with cardinality and classification heads.

The trunk downsamples three times (stride 2 each); a learned category
embedding gates trunk channels through sigmoid attention, one top-down pass
refines the gated features, and two parallel heads emit per-cell outputs at
1/8 input resolution: a softplus cardinality grid (never negative) and a
sigmoid class-probability grid from a scaled inner product between cell
features and the projected embedding.

Checkpoints are single files: magic, version, a JSON echo of the config,
then named float64 weight blocks in declaration order, and a trailing
CRC32. Loading a checkpoint reproduces the model bitwise.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from . import autodiff as ad

__all__ = [
    "ModelConfig",
    "CountModel",
    "ForwardPass",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

CHECKPOINT_MAGIC = b"CGCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    grid_factor: int = 8
    channels: tuple[int, int, int] = (8, 16, 24)
    fused_channels: int = 24
    embed_dim: int = 8
    num_categories: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.grid_factor != 8:
            # three stride-2 trunk stages plus one stride-2 head fix the ratio
            raise ValueError("architecture produces a fixed 1/8 grid; grid_factor must be 8")
        if self.input_size < 16 or self.input_size % self.grid_factor:
            raise ValueError("input_size must be a multiple of 8, at least 16")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ValueError("channels must be three positive widths")
        if self.embed_dim < 1 or self.num_categories < 1:
            raise ValueError("embed_dim and num_categories must be positive")

    @property
    def grid_size(self) -> int:
        return self.input_size // self.grid_factor

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        raw["channels"] = tuple(raw["channels"])
        return cls(**raw)


def _weight_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Declaration-ordered weight table; checkpoint layout follows this order."""
    c1, c2, c3 = cfg.channels
    cf, d = cfg.fused_channels, cfg.embed_dim
    return {
        "stage1_k": (3, 3, 1, c1),
        "stage1_b": (c1,),
        "stage2_k": (3, 3, c1, c2),
        "stage2_b": (c2,),
        "stage3_k": (3, 3, c2, c3),
        "stage3_b": (c3,),
        "embed": (cfg.num_categories, d),
        "attn2_w": (c2, d),
        "attn2_b": (c2,),
        "attn3_w": (c3, d),
        "attn3_b": (c3,),
        "fuse_k": (3, 3, c2 + c3, cf),
        "fuse_b": (cf,),
        "head_cnt_k": (3, 3, cf, cf),
        "head_cnt_b": (cf,),
        "head_cls_k": (3, 3, cf, cf),
        "head_cls_b": (cf,),
        "cnt_out_k": (1, 1, cf, 1),
        "cnt_out_b": (1,),
        "cls_proj_w": (cf, d),
        "cls_proj_b": (cf,),
        "cls_logit_scale": (),
        "cls_logit_bias": (),
    }

TRUNK_WEIGHTS = ("stage1_k", "stage1_b", "stage2_k", "stage2_b", "stage3_k", "stage3_b")


@dataclass
class ForwardPass:
    """Handles returned by one on-tape evaluation."""

    y_cnt: ad.DiffArray  # (grid, grid), non-negative
    y_cls: ad.DiffArray  # (grid, grid), in (0, 1)
    image_node: ad.DiffArray
    params: dict[str, ad.DiffArray] | None = None


class CountModel:
    """Counting network: weights dict plus the pure forward computation."""

    def __init__(self, config: ModelConfig, weights: dict[str, np.ndarray]):
        shapes = _weight_shapes(config)
        if list(weights) != list(shapes):
            raise ValueError("weight names do not match the declaration order")
        for name, shape in shapes.items():
            if weights[name].shape != shape:
                raise ValueError(f"{name} has shape {weights[name].shape}, expected {shape}")
        self.config = config
        self.weights = weights

    @classmethod
    def create(cls, config: ModelConfig | None = None) -> "CountModel":
        """Fresh model with seeded centered-uniform fan-in initialization."""
        cfg = config or ModelConfig()
        rng = np.random.default_rng(cfg.seed)
        weights: dict[str, np.ndarray] = {}
        for name, shape in _weight_shapes(cfg).items():
            if name.endswith("_b") or name == "cls_logit_bias":
                weights[name] = np.zeros(shape)
            elif name == "cls_logit_scale":
                weights[name] = np.asarray(1.0)
            else:
                fan_in = math.prod(shape[:-1]) if len(shape) > 1 else shape[0]
                bound = math.sqrt(1.0 / fan_in)
                if name == "cnt_out_k":
                    # The absolute-error count objective needs per-cell logit
                    # spread at init: cells with noticeably higher logits
                    # dominate the shared-kernel gradient and anchor the head
                    # in its responsive range. With near-equal logits the
                    # zero-target majority drags every cell into softplus
                    # saturation, where the constant-sign updates of an
                    # adaptive optimizer never anneal. Fan-in scaling alone
                    # gives too little spread; 10x holds up across seeds and
                    # instance-size ranges where 5x still collapses sometimes.
                    bound *= 10.0
                weights[name] = rng.uniform(-bound, bound, size=shape)
        # start the count head near zero mass so early training is stable
        weights["cnt_out_b"] = np.full((1,), -3.0)
        return cls(cfg, weights)

    def param_groups(self) -> dict[str, list[str]]:
        heads = [n for n in self.weights if n not in TRUNK_WEIGHTS]
        return {"trunk": list(TRUNK_WEIGHTS), "heads": heads}

    # -- forward -----------------------------------------------------------

    def forward_on_tape(
        self,
        tape: ad.Tape,
        image,
        category_id: int,
        trainable: bool = False,
    ) -> ForwardPass:
        """Run the network on a tape.

        ``image`` may be a plain array or a DiffArray already on ``tape``
        (the guidance path). With ``trainable`` the weights are registered
        as parameters and returned for gradient reads; otherwise they enter
        as constants and only image-dependent work is recorded.
        """
        cfg = self.config
        if not 0 <= category_id < cfg.num_categories:
            raise ValueError(f"unknown category {category_id}")
        n = cfg.input_size

        if isinstance(image, ad.DiffArray):
            if image.shape == (n, n):
                x = ad.reshape(image, (n, n, 1))
            elif image.shape == (n, n, 1):
                x = image
            else:
                raise ValueError(f"image shape {image.shape} does not match input size {n}")
            image_node = image
        else:
            arr = np.asarray(image, dtype=np.float64)
            if arr.shape != (n, n):
                raise ValueError(f"image shape {arr.shape} does not match input size {n}")
            image_node = ad.new_param(tape, arr.reshape(n, n, 1))
            x = image_node

        params: dict[str, ad.DiffArray] | None = None
        if trainable:
            params = {k: ad.new_param(tape, v) for k, v in self.weights.items()}
            w = params
            emb = ad.take_index(w["embed"], category_id)
            gate2 = ad.sigmoid(ad.add(ad.matvec(w["attn2_w"], emb), w["attn2_b"]))
            gate3 = ad.sigmoid(ad.add(ad.matvec(w["attn3_w"], emb), w["attn3_b"]))
            cls_query = ad.reshape(
                ad.add(ad.matvec(w["cls_proj_w"], emb), w["cls_proj_b"]),
                (1, 1, cfg.fused_channels, 1),
            )
            scale_node, bias_node = w["cls_logit_scale"], w["cls_logit_bias"]
        else:
            w = self.weights
            emb_v = w["embed"][category_id]
            gate2 = expit(w["attn2_w"] @ emb_v + w["attn2_b"])
            gate3 = expit(w["attn3_w"] @ emb_v + w["attn3_b"])
            cls_query = (w["cls_proj_w"] @ emb_v + w["cls_proj_b"]).reshape(
                1, 1, cfg.fused_channels, 1
            )
            scale_node, bias_node = float(w["cls_logit_scale"]), float(w["cls_logit_bias"])

        def block(h, kname, bname, stride):
            return ad.leaky_relu(
                ad.add(ad.conv2d(h, w[kname], stride=stride, padding=1), w[bname])
            )

        h1 = block(x, "stage1_k", "stage1_b", 2)
        h2 = block(h1, "stage2_k", "stage2_b", 2)
        h3 = block(h2, "stage3_k", "stage3_b", 2)

        # category conditioning: per-channel sigmoid gates on both scales
        h2g = ad.mul(h2, gate2)
        h3g = ad.mul(h3, gate3)

        # one top-down refinement pass: upsample deep features onto mid scale
        fused = ad.leaky_relu(
            ad.add(
                ad.conv2d(
                    ad.concat_channels(h2g, ad.upsample_nearest(h3g, 2)),
                    w["fuse_k"],
                    stride=1,
                    padding=1,
                ),
                w["fuse_b"],
            )
        )

        f_cnt = block(fused, "head_cnt_k", "head_cnt_b", 2)
        f_cls = block(fused, "head_cls_k", "head_cls_b", 2)

        g = cfg.grid_size
        y_cnt = ad.reshape(
            ad.softplus(ad.add(ad.conv2d(f_cnt, w["cnt_out_k"]), w["cnt_out_b"])),
            (g, g),
        )
        logits = ad.add(ad.mul(ad.conv2d(f_cls, cls_query), scale_node), bias_node)
        y_cls = ad.reshape(ad.sigmoid(logits), (g, g))
        return ForwardPass(y_cnt, y_cls, image_node, params)

    def forward(self, image: np.ndarray, category_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Plain-array forward: (cardinality grid, class-probability grid)."""
        out = self.forward_on_tape(ad.Tape(), image, category_id)
        return out.y_cnt.values, out.y_cls.values

    # -- inference-time counts ----------------------------------------------

    def predict_count(self, image: np.ndarray, category_id: int) -> float:
        """Total predicted count: exact sum over the cardinality grid."""
        y_cnt, _ = self.forward(image, category_id)
        return math.fsum(y_cnt.ravel())

    def thresholded_count(self, image: np.ndarray, category_id: int, kappa: float) -> float:
        """Count over cells whose class probability exceeds ``kappa``.

        Sums are exact (fsum), so the result is monotone non-increasing in
        kappa and coincides bit-for-bit with predict_count at kappa=0.
        """
        if not 0.0 <= kappa < 1.0:
            raise ValueError("kappa must lie in [0, 1)")
        y_cnt, y_cls = self.forward(image, category_id)
        return math.fsum(y_cnt[y_cls > kappa])

    def tiled_count(
        self,
        image: np.ndarray,
        category_id: int,
        tile_size: int | None = None,
        stride: int | None = None,
        kappa: float = 0.0,
    ) -> float:
        """Clip-and-aggregate counting for images larger than the input size.

        The image is padded at the right/bottom borders (with its own
        minimum, i.e. the darkest background present) to a whole number of
        tiles, and per-tile counts are summed.
        """
        tile = tile_size or self.config.input_size
        if tile != self.config.input_size:
            raise ValueError("tile size must equal the model input size")
        step = stride or tile
        if step < 1 or step > tile:
            raise ValueError("stride must lie in [1, tile size]")
        arr = np.asarray(image, dtype=np.float64)
        h, w = arr.shape
        nr = max(1, math.ceil((h - tile) / step) + 1)
        nc = max(1, math.ceil((w - tile) / step) + 1)
        ph = (nr - 1) * step + tile
        pw = (nc - 1) * step + tile
        padded = np.full((ph, pw), arr.min(), dtype=np.float64)
        padded[:h, :w] = arr
        counts = [
            self.thresholded_count(
                padded[i * step : i * step + tile, j * step : j * step + tile],
                category_id,
                kappa,
            )
            for i in range(nr)
            for j in range(nc)
        ]
        return math.fsum(counts)


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


def save_checkpoint(model: CountModel, path) -> None:
    """Write magic, version, config JSON, named weight blocks, CRC32."""
    body = bytearray()
    body += CHECKPOINT_VERSION.to_bytes(2, "little")
    cfg = model.config.to_json().encode()
    body += len(cfg).to_bytes(4, "little") + cfg
    body += len(model.weights).to_bytes(2, "little")
    for name, arr in model.weights.items():
        nb = name.encode()
        body += len(nb).to_bytes(2, "little") + nb
        body += arr.ndim.to_bytes(1, "little")
        for extent in arr.shape:
            body += extent.to_bytes(4, "little")
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(body)
        fh.write(zlib.crc32(body).to_bytes(4, "little"))


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated at byte {self.pos}: needed {n} more")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, n: int) -> int:
        return int.from_bytes(self.take(n), "little")


def load_checkpoint(path) -> CountModel:
    """Exact inverse of save_checkpoint, with integrity verification."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic at byte 0: {blob[:4]!r}")
    if len(blob) < 8:
        raise CheckpointError("file too short for checksum")
    body, stored = blob[4:-4], int.from_bytes(blob[-4:], "little")
    if zlib.crc32(body) != stored:
        raise CheckpointError("checksum mismatch")
    r = _Reader(body)
    version = r.u(2)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {version}")
    cfg = ModelConfig.from_json(r.take(r.u(4)).decode())
    weights: dict[str, np.ndarray] = {}
    for _ in range(r.u(2)):
        name = r.take(r.u(2)).decode()
        shape = tuple(r.u(4) for _ in range(r.u(1)))
        count = math.prod(shape)
        arr = np.frombuffer(r.take(count * 8), dtype="<f8").reshape(shape)
        weights[name] = arr.astype(np.float64)
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes after weights")
    return CountModel(cfg, weights)
