"""Per-frame feature rows for a tubelet pair.

Channels, each optional:

* ``motion``   10 relative-geometry values per frame
* ``mask``     two ``grid x grid`` occupancy maps (subject, then object)
* ``language`` learnable class embeddings of subject and object
* externals    precomputed per-frame vectors loaded from JSON
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import TubeletPair, box_iou
from .numcore import DataError, InvalidArgument, ParamTensor

MOTION_DIM = 10
_LOG_FLOOR = 1e-6


@dataclass
class FeatureConfig:
    use_motion: bool = True
    use_mask: bool = True
    use_language: bool = True
    mask_grid: int = 8
    language_dim: int = 16
    num_classes: int = 8
    external_channels: list[tuple[str, int]] = field(default_factory=list)
    order: list[str] | None = None

    def __post_init__(self):
        self.external_channels = [(str(n), int(d)) for n, d in self.external_channels]
        if self.order is None:
            self.order = ["motion", "mask", "language"] + [n for n, _ in self.external_channels]
        enabled = set(self.enabled_channels())
        if not enabled:
            raise InvalidArgument("FeatureConfig: at least one channel must be enabled")
        if self.use_mask and self.mask_grid < 2:
            raise InvalidArgument("mask_grid must be >= 2")
        missing = enabled - set(self.order)
        if missing:
            raise InvalidArgument(f"channel order is missing {sorted(missing)}")

    def enabled_channels(self) -> list[str]:
        out = []
        if self.use_motion:
            out.append("motion")
        if self.use_mask:
            out.append("mask")
        if self.use_language:
            out.append("language")
        out.extend(n for n, _ in self.external_channels)
        return out

    def channel_dim(self, name: str) -> int:
        if name == "motion":
            return MOTION_DIM
        if name == "mask":
            return 2 * self.mask_grid**2
        if name == "language":
            return 2 * self.language_dim
        for n, d in self.external_channels:
            if n == name:
                return d
        raise InvalidArgument(f"unknown channel {name!r}")

    def layout(self) -> dict[str, slice]:
        """Column slice of each enabled channel in declared order."""
        enabled = set(self.enabled_channels())
        out, start = {}, 0
        for name in self.order:
            if name not in enabled:
                continue
            d = self.channel_dim(name)
            out[name] = slice(start, start + d)
            start += d
        return out

    @property
    def dim(self) -> int:
        return sum(self.channel_dim(n) for n in self.enabled_channels())

    def to_dict(self) -> dict:
        return {
            "use_motion": self.use_motion,
            "use_mask": self.use_mask,
            "use_language": self.use_language,
            "mask_grid": self.mask_grid,
            "language_dim": self.language_dim,
            "num_classes": self.num_classes,
            "external_channels": [list(c) for c in self.external_channels],
            "order": list(self.order),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureConfig":
        d = dict(d)
        d["external_channels"] = [tuple(c) for c in d.get("external_channels", [])]
        return cls(**d)


@dataclass
class PairFrameFeatures:
    pair: TubeletPair
    frames: np.ndarray
    frame_index: np.ndarray


# --------------------------------------------------------------------------
# Channels
# --------------------------------------------------------------------------


def motion_features(s: np.ndarray, o: np.ndarray) -> np.ndarray:
    """Relative geometry of (N, 4) subject/object boxes, one row of 10 per frame.

    Columns: center offset (object minus subject) over subject width and
    height, log width and height ratios, IoU, subject area, object area,
    intersection over enclosing-box area, subject center x and y.
    """
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    o = np.atleast_2d(np.asarray(o, dtype=np.float64))
    ws = np.maximum(s[:, 2] - s[:, 0], _LOG_FLOOR)
    hs = np.maximum(s[:, 3] - s[:, 1], _LOG_FLOOR)
    wo = np.maximum(o[:, 2] - o[:, 0], _LOG_FLOOR)
    ho = np.maximum(o[:, 3] - o[:, 1], _LOG_FLOOR)
    cxs, cys = (s[:, 0] + s[:, 2]) / 2, (s[:, 1] + s[:, 3]) / 2
    cxo, cyo = (o[:, 0] + o[:, 2]) / 2, (o[:, 1] + o[:, 3]) / 2
    iw = np.clip(np.minimum(s[:, 2], o[:, 2]) - np.maximum(s[:, 0], o[:, 0]), 0, None)
    ih = np.clip(np.minimum(s[:, 3], o[:, 3]) - np.maximum(s[:, 1], o[:, 1]), 0, None)
    inter = iw * ih
    enclosing = (np.maximum(s[:, 2], o[:, 2]) - np.minimum(s[:, 0], o[:, 0])) * (
        np.maximum(s[:, 3], o[:, 3]) - np.minimum(s[:, 1], o[:, 1])
    )
    return np.stack(
        [
            (cxo - cxs) / ws,
            (cyo - cys) / hs,
            np.log(np.maximum(ws / wo, _LOG_FLOOR)),
            np.log(np.maximum(hs / ho, _LOG_FLOOR)),
            box_iou(s, o),
            ws * hs,
            wo * ho,
            inter / np.maximum(enclosing, _LOG_FLOOR),
            cxs,
            cys,
        ],
        axis=1,
    )


def motion_feature(s, o) -> np.ndarray:
    return motion_features(np.asarray(s)[None], np.asarray(o)[None])[0]


def _axis_coverage(lo: np.ndarray, hi: np.ndarray, grid: int) -> np.ndarray:
    edges = np.arange(grid + 1) / grid
    cov = np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1])
    return np.clip(cov, 0.0, None) * grid


def occupancy(boxes: np.ndarray, grid: int) -> np.ndarray:
    """(N, grid*grid) fraction of each cell covered by the box, rows = y."""
    boxes = np.atleast_2d(boxes)
    cx = _axis_coverage(boxes[:, 0], boxes[:, 2], grid)
    cy = _axis_coverage(boxes[:, 1], boxes[:, 3], grid)
    return (cy[:, :, None] * cx[:, None, :]).reshape(len(boxes), grid * grid)


def mask_features(s: np.ndarray, o: np.ndarray, grid: int = 8) -> np.ndarray:
    if grid < 2:
        raise InvalidArgument("mask grid must be >= 2")
    return np.concatenate([occupancy(s, grid), occupancy(o, grid)], axis=1)


def mask_feature(s, o, grid: int = 8) -> np.ndarray:
    return mask_features(np.asarray(s)[None], np.asarray(o)[None], grid)[0]


def init_language_table(cfg: FeatureConfig, rng) -> ParamTensor:
    return ParamTensor("lang_table", rng.normal_array((cfg.num_classes, cfg.language_dim), std=1.0))


def language_feature(subject_cat: int, object_cat: int, table: ParamTensor) -> np.ndarray:
    n = table.value.shape[0]
    for c in (subject_cat, object_cat):
        if not 0 <= c < n:
            raise InvalidArgument(f"category {c} outside [0, {n})")
    return np.concatenate([table.value[subject_cat], table.value[object_cat]])


# --------------------------------------------------------------------------
# Pair assembly
# --------------------------------------------------------------------------


class PairFeatureCache:
    """Pair features with the learnable language block kept separate.

    ``static`` holds every non-language column over the pair's overlap, so a
    batch of rows can be re-assembled cheaply after each update of the
    embedding table.
    """

    def __init__(self, pair: TubeletPair, cfg: FeatureConfig, externals: Mapping | None = None):
        self.pair = pair
        self.cfg = cfg
        lo, hi = pair.overlap
        self.frame_index = np.arange(lo, hi)
        self.static = static_features(pair, cfg, externals)
        self.subject_cat = pair.subject.category
        self.object_cat = pair.object.category

    def rows(self, frames: np.ndarray, table: ParamTensor | None) -> np.ndarray:
        """Full (len(frames), F) feature rows for absolute frame indices."""
        local = np.asarray(frames) - self.pair.overlap[0]
        return assemble(self.static[local], self.subject_cat, self.object_cat, self.cfg, table)


def static_columns(cfg: FeatureConfig) -> np.ndarray:
    lay = cfg.layout()
    cols = [np.arange(sl.start, sl.stop) for name, sl in lay.items() if name != "language"]
    return np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)


def static_features(pair: TubeletPair, cfg: FeatureConfig, externals: Mapping | None = None) -> np.ndarray:
    """All non-language channels over the overlap, in declared order."""
    lo, hi = pair.overlap
    sb, ob = pair.subject.boxes_over(lo, hi), pair.object.boxes_over(lo, hi)
    blocks = []
    for name in cfg.layout():
        if name == "motion":
            blocks.append(motion_features(sb, ob))
        elif name == "mask":
            blocks.append(mask_features(sb, ob, cfg.mask_grid))
        elif name == "language":
            continue
        else:
            blocks.append(_external_block(name, cfg.channel_dim(name), lo, hi, externals))
    if not blocks:
        return np.zeros((hi - lo, 0))
    return np.concatenate(blocks, axis=1)


def _external_block(name: str, dim: int, lo: int, hi: int, externals: Mapping | None) -> np.ndarray:
    if externals is None or name not in externals:
        raise DataError(f"external channel {name!r} not provided")
    frames = externals[name]
    out = np.empty((hi - lo, dim))
    for t in range(lo, hi):
        vec = frames.get(t)
        if vec is None:
            raise DataError(f"external channel {name!r} missing frame {t}")
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (dim,):
            raise DataError(f"external channel {name!r} frame {t}: expected dim {dim}, got {vec.shape}")
        out[t - lo] = vec
    return out


def assemble(static: np.ndarray, subject_cat, object_cat, cfg: FeatureConfig, table: ParamTensor | None) -> np.ndarray:
    """Insert the language block into static rows.

    ``static`` is (..., N, F_static); categories are scalars or arrays matching
    the leading batch axes.
    """
    lay = cfg.layout()
    out = np.empty(static.shape[:-1] + (cfg.dim,))
    out[..., static_columns(cfg)] = static
    if "language" in lay:
        if table is None:
            raise InvalidArgument("language channel enabled but no embedding table given")
        e = cfg.language_dim
        sl = lay["language"]
        sc = np.asarray(subject_cat)
        oc = np.asarray(object_cat)
        out[..., sl.start : sl.start + e] = table.value[sc][..., None, :]
        out[..., sl.start + e : sl.stop] = table.value[oc][..., None, :]
    return out


def accumulate_language_grad(dS: np.ndarray, subject_cat, object_cat, cfg: FeatureConfig, table: ParamTensor) -> None:
    """Scatter-add the language-column gradient of (B, N, F) ``dS`` into the table."""
    lay = cfg.layout()
    if "language" not in lay:
        return
    e = cfg.language_dim
    sl = lay["language"]
    ds = dS[..., sl.start : sl.start + e].sum(axis=-2)
    do = dS[..., sl.start + e : sl.stop].sum(axis=-2)
    np.add.at(table.grad, np.asarray(subject_cat).reshape(-1), ds.reshape(-1, e))
    np.add.at(table.grad, np.asarray(object_cat).reshape(-1), do.reshape(-1, e))


def build_pair_features(
    pair: TubeletPair,
    cfg: FeatureConfig,
    externals: Mapping | None = None,
    table: ParamTensor | None = None,
) -> PairFrameFeatures:
    cache = PairFeatureCache(pair, cfg, externals)
    return PairFrameFeatures(pair, cache.rows(cache.frame_index, table), cache.frame_index)


def single_frame_features(
    subject_box,
    object_box,
    cfg: FeatureConfig,
    table: ParamTensor | None,
    subject_cat: int | None = None,
    object_cat: int | None = None,
) -> np.ndarray:
    """Non-temporal features for one (subject, object) box pair.

    External channels are zero-filled. A missing category uses the mean of
    the embedding table.
    """
    s = np.asarray(subject_box, dtype=np.float64)[None]
    o = np.asarray(object_box, dtype=np.float64)[None]
    lay = cfg.layout()
    out = np.zeros(cfg.dim)
    for name, sl in lay.items():
        if name == "motion":
            out[sl] = motion_features(s, o)[0]
        elif name == "mask":
            out[sl] = mask_features(s, o, cfg.mask_grid)[0]
        elif name == "language":
            e = cfg.language_dim
            mean = table.value.mean(axis=0)
            out[sl.start : sl.start + e] = mean if subject_cat is None else table.value[subject_cat]
            out[sl.start + e : sl.stop] = mean if object_cat is None else table.value[object_cat]
    return out


# --------------------------------------------------------------------------
# External feature files
# --------------------------------------------------------------------------


def load_external(path: str | Path) -> tuple[str, str, dict[int, np.ndarray]]:
    """Read one external feature file; returns (video_id, channel, frames)."""
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("video_id", "channel_name", "dim", "frames"):
        if key not in doc:
            raise DataError(f"{path}: missing key {key!r}")
    dim = int(doc["dim"])
    frames = {}
    for k, v in doc["frames"].items():
        vec = np.asarray(v, dtype=np.float64)
        if vec.shape != (dim,):
            raise DataError(f"{path}: frame {k} has shape {vec.shape}, expected ({dim},)")
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}: frame {k} has non-finite values")
        frames[int(k)] = vec
    return str(doc["video_id"]), str(doc["channel_name"]), frames


def save_external(path: str | Path, video_id: str, channel: str, frames: Mapping[int, Sequence[float]]) -> None:
    dims = {len(v) for v in frames.values()}
    if len(dims) > 1:
        raise DataError("external frames must share one dimension")
    doc = {
        "video_id": video_id,
        "channel_name": channel,
        "dim": dims.pop() if dims else 0,
        "frames": {str(k): [float(x) for x in v] for k, v in sorted(frames.items())},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
