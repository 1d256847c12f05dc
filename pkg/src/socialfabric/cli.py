"""Command-line entry point: ``socialfabric <subcommand> [flags]``.

Exit codes: 0 ok, 1 usage, 2 data, 3 numeric. Failures print one JSON
line to stderr, e.g. ``{"error": "data", "message": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import experiments as exps
from . import io as sfio
from . import synth
from .dataset import Dataset, load_dataset, save_dataset
from .evaluation import VideoResult, evaluate
from .geometry import RelationInstance, TubeletPair, span_overlap
from .numcore import DataError, InvalidArgument, NumericFailure, Rng
from .pipeline import RunConfig, feature_config_for, init_stage1, propose_all
from .search import load_query, search
from .stage1 import InteractionProposal, train_stage1
from .stage2 import PredicateModel, assemble_triplets, train_stage2

log = logging.getLogger("socialfabric")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int, help="embedding size D")
    p.add_argument("--k", type=int, help="number of primitives K")
    p.add_argument("--variant", choices=["literal", "aggregate", "avgpool"])
    p.add_argument("--m", type=int, help="stage-1 window length")
    p.add_argument("--n", type=int, help="stage-2 frames per proposal")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--out", required=True, help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_config(args, stage: str | None = None) -> RunConfig:
    """Config file first, then flags. Training flags apply to ``stage``; with
    no stage (full runs) they apply to both."""
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_dict(sfio.read_json(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.d is not None:
        cfg.D = args.d
    if args.k is not None:
        cfg.K = args.k
    if args.variant is not None:
        cfg.variant = args.variant
    if args.m is not None:
        cfg.stage1.m = args.m
    if args.n is not None:
        cfg.stage2.n = args.n
    targets = {"stage1": [cfg.stage1], "stage2": [cfg.stage2], None: [cfg.stage1, cfg.stage2]}[stage]
    for t in targets:
        for name in ("epochs", "lr", "batch"):
            v = getattr(args, name)
            if v is not None:
                setattr(t, name, v)
    for name, v in (("D", cfg.D), ("K", cfg.K), ("m", cfg.stage1.m), ("n", cfg.stage2.n)):
        if v < 1:
            raise InvalidArgument(f"{name} must be >= 1, got {v}")
    for t in (cfg.stage1, cfg.stage2):
        if t.lr <= 0 or t.batch < 1 or t.epochs < 0:
            raise InvalidArgument("lr must be > 0, batch >= 1 and epochs >= 0")
    return cfg


def _dataset_config(cfg: RunConfig, ds: Dataset) -> RunConfig:
    cfg.features = feature_config_for(cfg, ds)
    return cfg


def _require(path: str | None, what: str) -> str:
    if not path:
        raise UsageError(f"missing --{what}")
    if not Path(path).exists():
        raise DataError(f"{what} file not found: {path}")
    return path


def _write_csv(path: Path, losses, accuracies) -> None:
    lines = ["epoch,loss,accuracy"] + [f"{i + 1},{l!r},{a!r}" for i, (l, a) in enumerate(zip(losses, accuracies))]
    sfio.write_text(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Proposal and detection files
# --------------------------------------------------------------------------


def _pair(video, s_tid: int, o_tid: int) -> TubeletPair:
    try:
        s, o = video.tubelet(s_tid), video.tubelet(o_tid)
    except KeyError as exc:
        raise DataError(f"{video.video_id}: unknown tubelet {exc}") from None
    return TubeletPair(s, o, span_overlap(s.span, o.span))


def load_proposals(path: str, ds: Dataset) -> dict[str, list[InteractionProposal]]:
    out: dict[str, list[InteractionProposal]] = {v.video_id: [] for v in ds.videos}
    for i, row in enumerate(sfio.read_jsonl(path)):
        try:
            video = ds.video(row["video_id"])
            out[video.video_id].append(
                InteractionProposal(
                    _pair(video, int(row["subject_tid"]), int(row["object_tid"])),
                    (int(row["span"][0]), int(row["span"][1])),
                    float(row["mean_score"]),
                    float(row["subject_score"]),
                    float(row["object_score"]),
                    video.video_id,
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}:{i + 1}: missing or unknown {exc}") from None
    return out


def load_detections(path: str, ds: Dataset) -> dict[str, list[RelationInstance]]:
    out: dict[str, list[RelationInstance]] = {v.video_id: [] for v in ds.videos}
    for i, row in enumerate(sfio.read_jsonl(path)):
        try:
            video = ds.video(row["video_id"])
            pair = _pair(video, int(row["subject_tid"]), int(row["object_tid"]))
            out[video.video_id].append(
                RelationInstance(
                    int(row["subject_cat"]),
                    int(row["predicate"]),
                    int(row["object_cat"]),
                    pair.subject,
                    pair.object,
                    (int(row["span"][0]), int(row["span"][1])),
                    float(row["final_score"]),
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}:{i + 1}: missing or unknown {exc}") from None
    return out


def _proposal_rows(ds: Dataset, props) -> list[dict]:
    return [p.to_json() for v in ds.videos for p in props.get(v.video_id, [])]


def _load_model(path: str) -> tuple[PredicateModel, RunConfig]:
    params, config, meta = sfio.load_checkpoint(path)
    if "predicates" not in meta:
        raise DataError(f"{path}: not a stage-2 checkpoint (no predicate list)")
    cfg = RunConfig.from_dict(config)
    if params.F != cfg.features.dim:
        raise DataError(f"{path}: checkpoint F={params.F} but features give {cfg.features.dim}")
    model = PredicateModel(params, cfg.features, list(meta["predicates"]), cfg.stage2.n, trained=True)
    return model, cfg


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_gen(args) -> dict:
    suite = synth.make_suite(args.suite, seed=args.seed or 0, noise=args.noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, ds in suite.items():
        save_dataset(ds, out / f"{split}.json")
    return {"train": str(out / "train.json"), "test": str(out / "test.json")}


def cmd_train_stage1(args) -> dict:
    ds = load_dataset(_require(args.data, "data"))
    cfg = _dataset_config(build_config(args, "stage1"), ds)
    root = Rng(cfg.seed)
    params = init_stage1(cfg, cfg.features, root.spawn(1))
    res = train_stage1(ds, params, cfg.features, cfg.stage1, root.spawn(2))
    out = Path(args.out)
    meta = {"stage": 1, "epochs": cfg.stage1.epochs, "final_loss": res.losses[-1] if res.losses else None, "seed": cfg.seed}
    sfio.save_checkpoint(out, params, cfg.to_dict(), meta)
    _write_csv(out.with_suffix(".loss.csv"), res.losses, res.accuracies)
    return {"checkpoint": str(out), "final_loss": meta["final_loss"]}


def cmd_propose(args) -> dict:
    ds = load_dataset(_require(args.data, "data"))
    params, config, _ = sfio.load_checkpoint(_require(args.ckpt, "ckpt"))
    cfg = RunConfig.from_dict(config)
    if args.m is not None:
        cfg.stage1.m = args.m
    props = propose_all(ds, params, cfg.features, cfg.stage1)
    rows = _proposal_rows(ds, props)
    sfio.write_jsonl(args.out, rows)
    return {"proposals": len(rows)}


def cmd_train_stage2(args) -> dict:
    ds = load_dataset(_require(args.data, "data"))
    params, config, _ = sfio.load_checkpoint(_require(args.ckpt, "ckpt"))
    cfg = _overlay(RunConfig.from_dict(sfio.read_json(args.config) if args.config else config), args)
    cfg.features = RunConfig.from_dict(config).features
    if params.F != cfg.features.dim:
        raise DataError(f"stage-1 checkpoint F={params.F} but features give {cfg.features.dim}")
    props = load_proposals(args.proposals, ds) if args.proposals else None
    model = train_stage2(ds, props, params, cfg.features, cfg.stage2, Rng(cfg.seed).spawn(3))
    out = Path(args.out)
    meta = {
        "stage": 2,
        "epochs": cfg.stage2.epochs,
        "final_loss": model.losses[-1] if model.losses else None,
        "seed": cfg.seed,
        "predicates": model.predicates,
    }
    sfio.save_checkpoint(out, model.params, cfg.to_dict(), meta)
    _write_csv(out.with_suffix(".loss.csv"), model.losses, model.accuracies)
    return {"checkpoint": str(out), "final_loss": meta["final_loss"]}


def _overlay(base: RunConfig, args) -> RunConfig:
    """Stage-2 flags on top of the stage-1 checkpoint's configuration."""
    if args.seed is not None:
        base.seed = args.seed
    if args.n is not None:
        base.stage2.n = args.n
    for name in ("epochs", "lr", "batch"):
        v = getattr(args, name)
        if v is not None:
            setattr(base.stage2, name, v)
    if base.stage2.lr <= 0 or base.stage2.batch < 1 or base.stage2.epochs < 0 or base.stage2.n < 1:
        raise InvalidArgument("stage 2 needs lr > 0, batch >= 1, epochs >= 0, n >= 1")
    return base


def cmd_detect(args) -> dict:
    ds = load_dataset(_require(args.data, "data"))
    model, cfg = _load_model(_require(args.ckpt, "ckpt"))
    if args.n is not None:
        model.n_sample = args.n
    props = load_proposals(_require(args.proposals, "proposals"), ds)
    rows = []
    for v in ds.videos:
        rows.extend(t.to_json() | {"video_id": v.video_id} for t in assemble_triplets(props[v.video_id], model, args.top_p))
    sfio.write_jsonl(args.out, rows)
    return {"detections": len(rows)}


def cmd_eval(args) -> dict:
    ds = load_dataset(_require(args.data, "data"))
    dets = load_detections(_require(args.detections, "detections"), ds)
    results = [VideoResult(v.video_id, dets[v.video_id], v.gt) for v in ds.videos]
    report = evaluate(results)
    sfio.write_json(args.out, report.to_json())
    sys.stdout.write(report.table())
    return {"map": report.map}


def cmd_search(args) -> dict:
    ds = load_dataset(_require(args.data, "data"))
    model, _ = _load_model(_require(args.ckpt, "ckpt"))
    props = load_proposals(_require(args.proposals, "proposals"), ds)
    query = load_query(sfio.read_json(_require(args.query, "query")))
    pool = [p for v in ds.videos for p in props[v.video_id]]
    hits = search(query, pool, model, top_r=args.top_r)
    sfio.write_jsonl(args.out, [h.to_json() | {"primitives": query.resolved} for h in hits])
    return {"primitives": query.resolved, "hits": len(hits)}


def cmd_gradcheck(args) -> dict:
    res = exps.gradient_suite(args.configs, args.seed or 0)
    worst = max(r.max_rel_error for r in res)
    rows = [{"variant": r.variant, "H": r.H, "dims": list(r.dims), "max_rel_error": r.max_rel_error} for r in res]
    sfio.write_json(args.out, {"checks": rows, "max_rel_error": worst, "tolerance": 1e-4})
    if worst >= 1e-4:
        raise NumericFailure(f"gradient check failed: max relative error {worst:.3e}")
    return {"checks": len(res), "max_rel_error": worst}


def _suite_run(args):
    cfg = build_config(args)
    suite = synth.make_suite(args.suite, seed=cfg.seed)
    return suite["train"], suite["test"], _dataset_config(cfg, suite["train"])


def cmd_ablate_k(args) -> dict:
    train, test, cfg = _suite_run(args)
    ks = [int(k) for k in args.ks.split(",")] if args.ks else list(exps.K_SWEEP)
    rows = exps.ablate_k(train, test, cfg, ks)
    table = exps.ablation_table(rows, "K")
    sfio.write_json(args.out, {"rows": [r.to_json() for r in rows], "config": cfg.to_dict()})
    sys.stdout.write(table)
    return {"rows": len(rows)}


def cmd_ablate_variant(args) -> dict:
    train, test, cfg = _suite_run(args)
    rows = exps.ablate_variant(train, test, cfg)
    sfio.write_json(args.out, {"rows": [r.to_json() for r in rows], "config": cfg.to_dict()})
    sys.stdout.write(exps.ablation_table(rows, "variant"))
    return {"rows": len(rows)}


def cmd_duration_report(args) -> dict:
    train, test, cfg = _suite_run(args)
    per_bucket, out = exps.duration_report(train, test, cfg)
    sfio.write_json(args.out, {"per_duration": per_bucket, "report": out.report.to_json(), "config": cfg.to_dict()})
    sys.stdout.write(exps.duration_table(per_bucket))
    return {"per_duration": per_bucket}


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="socialfabric", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic suite (train.json, test.json)")
    _add_common(p)
    p.add_argument("--suite", choices=sorted(synth.SUITES), required=True)
    p.add_argument("--noise", type=float, default=0.004)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-stage1", help="train the interactivity scorer")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("propose", help="write interaction proposals as JSON lines")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="stage-1 checkpoint")
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("train-stage2", help="fine-tune the predicate classifier")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="stage-1 checkpoint")
    p.add_argument("--proposals", help="training-split proposals (JSON lines)")
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("detect", help="score proposals into relation triplets")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="stage-2 checkpoint")
    p.add_argument("--proposals", required=True)
    p.add_argument("--top-p", type=int, default=3)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="tagging and detection metrics")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--detections", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="rank proposals by example frames")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="stage-2 checkpoint")
    p.add_argument("--proposals", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--top-r", type=int, default=10)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("gradcheck", help="finite-difference check of the encoding stack")
    _add_common(p)
    p.add_argument("--configs", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    for name, func, extra in (
        ("ablate-k", cmd_ablate_k, True),
        ("ablate-variant", cmd_ablate_variant, False),
        ("duration-report", cmd_duration_report, False),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        p.add_argument("--suite", choices=sorted(synth.SUITES), default="duration" if name == "duration-report" else "compositional")
        if extra:
            p.add_argument("--ks", help="comma-separated K values")
        p.set_defaults(func=func)
    return parser


def _limit_threads():
    n = os.environ.get("SF_THREADS")
    if not n:
        return None
    try:
        count = int(n)
    except ValueError:
        raise UsageError(f"SF_THREADS must be an integer, got {n!r}") from None
    if count < 1:
        raise UsageError("SF_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=count)


def _fail(kind: str, code: int, exc) -> int:
    msg = " ".join(str(exc).split())
    sys.stderr.write(json.dumps({"error": kind, "message": msg}) + "\n")
    return code


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        limiter = _limit_threads()
        try:
            summary = args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except InvalidArgument as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except (DataError, KeyError, json.JSONDecodeError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except (NumericFailure, FloatingPointError) as exc:
        return _fail("numeric", EXIT_NUMERIC, exc)
    except OSError as exc:
        return _fail("data", EXIT_DATA, exc)
    print(json.dumps({"ok": args.command, **summary}, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
