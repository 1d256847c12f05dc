"""Video/dataset containers and their JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import RelationInstance, Tubelet
from .numcore import DataError

DATASET_SCHEMA = "socialfabric.dataset/1"


@dataclass
class Video:
    video_id: str
    num_frames: int
    tubelets: list[Tubelet]
    gt: list[RelationInstance] = field(default_factory=list)

    def tubelet(self, tid: int) -> Tubelet:
        for t in self.tubelets:
            if t.tid == tid:
                return t
        raise KeyError(tid)


@dataclass
class Dataset:
    name: str
    predicates: list[str]
    num_classes: int
    videos: list[Video]
    meta: dict = field(default_factory=dict)

    def video(self, video_id: str) -> Video:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)


def tubelet_to_json(t: Tubelet) -> dict:
    return {
        "tid": t.tid,
        "category": t.category,
        "score": t.score,
        "t_begin": t.t_begin,
        "boxes": t.boxes.tolist(),
        "frame_scores": t.frame_scores.tolist(),
    }


def tubelet_from_json(d: dict) -> Tubelet:
    return Tubelet(
        category=int(d["category"]),
        score=float(d["score"]),
        t_begin=int(d["t_begin"]),
        boxes=d["boxes"],
        tid=int(d["tid"]),
        frame_scores=d.get("frame_scores"),
    )


def dataset_to_json(ds: Dataset) -> dict:
    videos = []
    for v in ds.videos:
        videos.append(
            {
                "video_id": v.video_id,
                "num_frames": v.num_frames,
                "tubelets": [tubelet_to_json(t) for t in v.tubelets],
                "gt": [
                    {
                        "subject_tid": r.subject_track.tid,
                        "object_tid": r.object_track.tid,
                        "subject_cat": r.subject_cat,
                        "predicate": r.predicate,
                        "object_cat": r.object_cat,
                        "span": list(r.span),
                        "extra": r.extra,
                    }
                    for r in v.gt
                ],
            }
        )
    return {
        "schema": DATASET_SCHEMA,
        "name": ds.name,
        "predicates": ds.predicates,
        "num_classes": ds.num_classes,
        "meta": ds.meta,
        "videos": videos,
    }


def dataset_from_json(doc: dict) -> Dataset:
    if doc.get("schema") != DATASET_SCHEMA:
        raise DataError(f"dataset schema {doc.get('schema')!r} != {DATASET_SCHEMA!r}")
    videos = []
    for vd in doc["videos"]:
        tubs = [tubelet_from_json(t) for t in vd["tubelets"]]
        by_id = {t.tid: t for t in tubs}
        gt = []
        for g in vd["gt"]:
            try:
                s, o = by_id[g["subject_tid"]], by_id[g["object_tid"]]
            except KeyError as exc:
                raise DataError(f"{vd['video_id']}: GT references unknown tubelet {exc}") from None
            gt.append(
                RelationInstance(
                    subject_cat=int(g["subject_cat"]),
                    predicate=int(g["predicate"]),
                    object_cat=int(g["object_cat"]),
                    subject_track=s,
                    object_track=o,
                    span=(int(g["span"][0]), int(g["span"][1])),
                    extra=g.get("extra", {}),
                )
            )
        videos.append(Video(vd["video_id"], int(vd["num_frames"]), tubs, gt))
    return Dataset(doc["name"], list(doc["predicates"]), int(doc["num_classes"]), videos, doc.get("meta", {}))


def save_dataset(ds: Dataset, path: str | Path) -> None:
    from .io import write_json

    write_json(path, dataset_to_json(ds))


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path) as fh:
        return dataset_from_json(json.load(fh))
