"""UNet and UNet++ forecasting networks plus checkpoint serialization.

Both architectures share a 4-level encoder (two conv blocks per level, three
2x2 max pools, widths doubling from ``base_width``) and a decoder with three
upsampling steps, two conv blocks per level, and a bare 3x3 projection head
to one channel.  The UNet++ variant adds six single-conv nested nodes that
densify the skip connections; each nested node consumes the outputs of every
earlier node at its level plus an upsampled feed from the level below.

A checkpoint is a directory: ``manifest.json`` (configuration, normalization
statistics, provenance, tensor table) plus one raw little-endian f32 blob per
named tensor under ``weights/``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import NormStats
from .errors import CheckpointError, DimensionError, ValidationError
from .nn import ConvBlock, ConvCircular, MaxPool2, Tensor, Upsample2, concat_channels
from .stacking import case_by_id, channel_count

ARCHITECTURES = ("unet", "unetpp")
FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    arch: str
    in_channels: int
    case_id: str
    norm_stats: NormStats
    base_width: int = 32
    elevation: bool = False
    padding_mode: str = "circular-both"

    def validate(self):
        if self.arch not in ARCHITECTURES:
            raise ValidationError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.base_width < 1:
            raise ValidationError(f"base_width must be >= 1, got {self.base_width}")
        if self.padding_mode not in ("circular-both", "circular-lon-reflect-lat"):
            raise ValidationError(f"unknown padding mode {self.padding_mode!r}")
        case = case_by_id(self.case_id)
        expected = channel_count(case, self.elevation)
        if self.in_channels != expected:
            raise ValidationError(
                f"case {self.case_id} with elevation={self.elevation} implies "
                f"{expected} input channels, got {self.in_channels}"
            )

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "in_channels": self.in_channels,
            "case_id": self.case_id,
            "base_width": self.base_width,
            "elevation": self.elevation,
            "padding_mode": self.padding_mode,
            "norm_stats": self.norm_stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["norm_stats"] = NormStats.from_dict(d["norm_stats"])
        return cls(**d)


class Model:
    """A built network: layer registry, forward pass, state access."""

    def __init__(self, cfg: ModelConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        w = cfg.base_width
        pm = cfg.padding_mode
        widths = [w, 2 * w, 4 * w, 8 * w]

        self.encoder_blocks = []
        c_prev = cfg.in_channels
        for lvl, c in enumerate(widths):
            self.encoder_blocks.append(ConvBlock(f"enc{lvl}.a", c_prev, c, rng, pm))
            self.encoder_blocks.append(ConvBlock(f"enc{lvl}.b", c, c, rng, pm))
            c_prev = c

        self.mid_blocks = []
        if cfg.arch == "unetpp":
            # nested nodes (level, depth): in = level outputs so far + upsampled feed
            mids = [
                ("mid01", w + 2 * w, w),
                ("mid11", 2 * w + 4 * w, 2 * w),
                ("mid21", 4 * w + 8 * w, 4 * w),
                ("mid02", 2 * w + 2 * w, w),
                ("mid12", 4 * w + 4 * w, 2 * w),
                ("mid03", 3 * w + 2 * w, w),
            ]
            for name, c_in, c_out in mids:
                self.mid_blocks.append(ConvBlock(name, c_in, c_out, rng, pm))

        if cfg.arch == "unet":
            dec_in = [8 * w + 4 * w, 4 * w + 2 * w, 2 * w + w]
        else:
            dec_in = [8 * w + 2 * 4 * w, 4 * w + 3 * 2 * w, 2 * w + 4 * w]
        self.decoder_blocks = []
        for lvl, c_in in zip((2, 1, 0), dec_in):
            c_out = widths[lvl]
            self.decoder_blocks.append(ConvBlock(f"dec{lvl}.a", c_in, c_out, rng, pm))
            self.decoder_blocks.append(ConvBlock(f"dec{lvl}.b", c_out, c_out, rng, pm))
        self.head = ConvCircular("head", w, 1, rng, pm)

        self.pools = [MaxPool2() for _ in range(3)]
        self.decoder_upsamples = [Upsample2() for _ in range(3)]
        self.nested_upsamples = (
            [Upsample2() for _ in range(6)] if cfg.arch == "unetpp" else []
        )

    # -- forward ---------------------------------------------------------

    def forward(self, x, training: bool = False) -> Tensor:
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if data.ndim != 4:
            raise DimensionError(f"input must be NCHW, got shape {data.shape}")
        if data.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"model for case {self.cfg.case_id} expects {self.cfg.in_channels} "
                f"channels, got {data.shape[1]}"
            )
        if data.shape[2] % 8 or data.shape[3] % 8:
            raise DimensionError(
                f"spatial dims must be divisible by 8, got {data.shape[2]}x{data.shape[3]}"
            )
        if not isinstance(x, Tensor):
            x = Tensor(data)
        if self.cfg.arch == "unet":
            return self._forward_unet(x, training)
        return self._forward_unetpp(x, training)

    def _encode(self, x, training):
        eb = self.encoder_blocks
        outs = []
        h = x
        for lvl in range(4):
            h = eb[2 * lvl + 1](eb[2 * lvl](h, training), training)
            outs.append(h)
            if lvl < 3:
                h = self.pools[lvl](h)
        return outs  # per-level outputs, top to bottom

    def _decode(self, skips_per_level, bottom, training):
        db = self.decoder_blocks
        h = bottom
        for i, lvl in enumerate((2, 1, 0)):
            up = self.decoder_upsamples[i](h)
            h = concat_channels(skips_per_level[lvl] + [up])
            h = db[2 * i + 1](db[2 * i](h, training), training)
        return self.head(h)

    def _forward_unet(self, x, training):
        x00, x10, x20, x30 = self._encode(x, training)
        return self._decode([[x00], [x10], [x20]], x30, training)

    def _forward_unetpp(self, x, training):
        x00, x10, x20, x30 = self._encode(x, training)
        mb = self.mid_blocks
        nup = self.nested_upsamples
        x01 = mb[0](concat_channels([x00, nup[0](x10)]), training)
        x11 = mb[1](concat_channels([x10, nup[1](x20)]), training)
        x21 = mb[2](concat_channels([x20, nup[2](x30)]), training)
        x02 = mb[3](concat_channels([x00, x01, nup[3](x11)]), training)
        x12 = mb[4](concat_channels([x10, x11, nup[4](x21)]), training)
        x03 = mb[5](concat_channels([x00, x01, x02, nup[5](x12)]), training)
        skips = [[x00, x01, x02, x03], [x10, x11, x12], [x20, x21]]
        return self._decode(skips, x30, training)

    # -- introspection -----------------------------------------------------

    def layer_counts(self) -> dict:
        return {
            "encoder_convs": len(self.encoder_blocks),
            "decoder_convs": len(self.decoder_blocks) + 1,  # + projection head
            "intermediate_convs": len(self.mid_blocks),
            "maxpools": len(self.pools),
            "decoder_upsamples": len(self.decoder_upsamples),
            "nested_upsamples": len(self.nested_upsamples),
            "batchnorms": len(self.encoder_blocks)
            + len(self.mid_blocks)
            + len(self.decoder_blocks),
        }

    def _blocks(self):
        return self.encoder_blocks + self.mid_blocks + self.decoder_blocks

    def parameters(self):
        params = []
        for block in self._blocks():
            params.extend(block.parameters())
        params.extend(self.head.parameters())
        return params

    def batchnorms(self):
        return [b.bn for b in self._blocks()]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    @property
    def bn_initialized(self) -> bool:
        return all(bn.initialized for bn in self.batchnorms())

    def mark_bn_initialized(self):
        for bn in self.batchnorms():
            bn.initialized = True

    # -- state -------------------------------------------------------------

    def buffers(self) -> dict:
        out = {}
        for bn in self.batchnorms():
            out.update(bn.buffers())
        return out

    def get_state(self) -> dict:
        state = {p.name: p.data.copy() for p in self.parameters()}
        state.update({k: v.copy() for k, v in self.buffers().items()})
        return state

    def set_state(self, state: dict):
        for p in self.parameters():
            src = state[p.name]
            if src.shape != p.data.shape:
                raise CheckpointError(
                    f"tensor {p.name}: shape {src.shape} != expected {p.data.shape}"
                )
            p.data = src.astype(p.data.dtype, copy=True)
        for bn in self.batchnorms():
            bn.load_buffers(
                state[f"{bn.name}.running_mean"], state[f"{bn.name}.running_var"]
            )


def build_model(cfg: ModelConfig, seed: int) -> Model:
    """Deterministically initialize a network from its configuration."""
    return Model(cfg, seed)


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(
    model: Model,
    path,
    provenance: dict | None = None,
    optimizer_hparams: dict | None = None,
) -> Path:
    path = Path(path)
    (path / "weights").mkdir(parents=True, exist_ok=True)
    params = {p.name: p.data for p in model.parameters()}
    buffers = model.buffers()
    tensors = [{"name": k, "shape": list(v.shape), "kind": "param"} for k, v in params.items()]
    tensors += [{"name": k, "shape": list(v.shape), "kind": "buffer"} for k, v in buffers.items()]
    manifest = {
        "format_version": FORMAT_VERSION,
        "model": model.cfg.to_dict(),
        "seed": model.seed,
        "bn_initialized": model.bn_initialized,
        "optimizer": optimizer_hparams,
        "provenance": provenance or {},
        "tensors": tensors,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for name, arr in list(params.items()) + list(buffers.items()):
        (path / "weights" / f"{name}.bin").write_bytes(
            np.ascontiguousarray(arr, dtype="<f4").tobytes()
        )
    return path


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint directory; returns (model, manifest)."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise CheckpointError(f"{path}: no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {manifest.get('format_version')}"
        )
    cfg = ModelConfig.from_dict(manifest["model"])
    model = Model(cfg, manifest.get("seed", 0))
    state = {}
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        blob = path / "weights" / f"{name}.bin"
        if not blob.is_file():
            raise CheckpointError(f"{path}: missing blob for tensor {name}")
        raw = blob.read_bytes()
        expected = int(np.prod(shape)) * 4
        if len(raw) != expected:
            raise CheckpointError(
                f"{path}: tensor {name} blob is {len(raw)} bytes, expected {expected}"
            )
        state[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    try:
        model.set_state(state)
    except KeyError as exc:
        raise CheckpointError(f"{path}: manifest omits tensor {exc.args[0]}") from None
    if not manifest.get("bn_initialized", False):
        for bn in model.batchnorms():
            bn.initialized = False
    return model, manifest
