"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 missing artifact, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import CteConfig, KMeansConfig, cte_segment, kmeans_segment, naive_equal_splits
from .config import CLIP_DURATION_PRESETS, RunConfig
from .datamodel import (
    MODALITIES,
    Segmentation,
    SynthConfig,
    clipify,
    course_of,
    generate_synthetic,
    read_corpus,
    read_cues,
    read_manifest,
    write_corpus,
)
from .embedder import (
    Adam,
    TrainConfig,
    embed_clips,
    embed_lecture,
    embed_texts,
    init_params,
    load_embeddings,
    load_training_state,
    retrieve,
    save_embeddings,
    save_params,
    train,
)
from .exceptions import NumericalError, ValidationError
from .metrics import MetricReport, evaluate, format_table, mean_report
from .twfinch import AUTO_K_CHOICES, TWFinch

EXIT_OK, EXIT_VALIDATION, EXIT_MISSING, EXIT_NUMERICAL = 0, 1, 2, 3
METHODS = ("twfinch", "naive", "kmeans", "cte")
BASELINE_METHODS = ("naive", "kmeans", "cte")


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation failures (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _require(path, what: str) -> Path:
    if path is None:
        raise FileNotFoundError(f"no {what} given")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parallel_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_corpus(path) -> list:
    corpus = read_corpus(_require(path, "corpus directory"))
    if not corpus:
        raise ValidationError(f"corpus {path} lists no lectures")
    return corpus


def _course_map(corpus_dir) -> dict:
    return {e["id"]: e.get("course", course_of(e["id"])) for e in read_manifest(corpus_dir)}


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _parse_modalities(text):
    if text is None:
        return None
    mods = [m.strip() for m in text.split(",") if m.strip()]
    alias = {"2d": "v2d", "3d": "v3d"}
    mods = [alias.get(m, m) for m in mods]
    bad = [m for m in mods if m not in MODALITIES]
    if bad or not mods:
        raise ValidationError(f"modalities must be a comma list drawn from {MODALITIES}")
    return mods


def _parse_k_source(text: str):
    if text in ("gt",) + AUTO_K_CHOICES:
        return text, None
    if text.startswith("fixed:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad k_source {text!r}") from None
        if k < 1:
            raise ValidationError("fixed K must be >= 1")
        return "fixed", k
    raise ValidationError(f"k_source must be gt, second_last, third_last or fixed:K, got {text!r}")


# ---------------------------------------------------------------- synth / clipify


def cmd_synth(cfg: RunConfig, args) -> int:
    s = cfg.synth
    synth_cfg = SynthConfig(
        n_lectures=s.n_lectures,
        k_range=tuple(s.k_range),
        clip_len_s=s.clip_len_s,
        clips_per_lecture=s.clips_per_lecture,
        noise_sigma=s.noise_sigma,
        dims=tuple(s.dims),
        cross_modal_map_seed=s.cross_modal_map_seed,
        rng_seed=cfg.seed,
        modality_informativeness=dict(s.modality_informativeness),
        latent_dim=s.latent_dim,
        n_courses=s.n_courses,
    )
    lectures = generate_synthetic(synth_cfg)
    out = _out_dir(cfg)
    write_corpus(lectures, out, courses={lec.lecture_id: course_of(lec.lecture_id) for lec in lectures})
    print(f"wrote {len(lectures)} lectures to {out}")
    return EXIT_OK


def cmd_clipify(cfg: RunConfig, args) -> int:
    cues_path = _require(args.cues, "subtitle file")
    lo, hi = cfg.clip.min_len_s, cfg.clip.max_len_s
    if args.duration is not None:
        lo, hi = CLIP_DURATION_PRESETS[args.duration]
    cues = read_cues(cues_path)
    clips = clipify(cues, lo, hi)
    doc = [
        {
            "clip_index": i,
            "start_s": start,
            "end_s": end,
            "cue_indices": idx,
            "text": " ".join(cues[j].text for j in idx).strip(),
        }
        for i, (start, end, idx) in enumerate(clips)
    ]
    out = _out_dir(cfg) / f"{cues_path.stem}.clips.json"
    _write_json(out, doc)
    print(f"{len(doc)} clips -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train / embed


def _train_config(cfg: RunConfig, epochs: int) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        batch_size=t.batch_size,
        margin=t.margin,
        lr=t.lr,
        lr_decay=t.lr_decay,
        epochs=epochs,
        intra_lecture_fraction=t.intra_lecture_fraction,
        rng_seed=cfg.seed,
        modality_mask=tuple(cfg.modality_mask),
        batches_per_epoch=t.batches_per_epoch,
    )


def _write_loss_csv(path: Path, trace) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(trace, start=1):
            w.writerow([i, repr(float(loss))])


def cmd_train(cfg: RunConfig, args) -> int:
    """Pre-train on ``paths.corpus``; optionally fine-tune on ``paths.finetune_corpus``."""
    stages = [("pretrain", cfg.paths.corpus, cfg.train.epochs)]
    if cfg.paths.finetune_corpus:
        stages.append(("finetune", cfg.paths.finetune_corpus, cfg.train.finetune_epochs))
    corpora = {tag: _load_corpus(path) for tag, path, _ in stages}
    dims = corpora["pretrain"][0].dims
    for tag, lectures in corpora.items():
        if any(lec.dims != dims for lec in lectures):
            raise ValidationError(f"{tag} corpus has feature dims differing from {dims}")
    out = _out_dir(cfg)

    resume = None
    if args.resume:
        params, state, meta = load_training_state(_require(args.resume, "checkpoint"))
        if state is None or "tag" not in meta:
            raise FileNotFoundError(f"{args.resume}: optimizer state or metadata sidecar missing")
        if meta["tag"] not in corpora:
            raise ValidationError(f"checkpoint stage {meta['tag']!r} is not part of this run")
        resume = (meta["tag"], params, Adam.from_state(state), int(meta["epochs_done"]), meta["loss_trace"])
    else:
        params = init_params(*dims, cfg.model.embed_dim, cfg.model.ocr_proj_dim, cfg.seed)

    skipping = resume is not None
    for tag, _, epochs in stages:
        start, opt, history = 0, None, []
        if skipping:
            if tag != resume[0]:
                continue
            skipping = False
            _, params, opt, start, history = resume
        result = train(
            params,
            corpora[tag],
            _train_config(cfg, epochs),
            start_epoch=start,
            optimizer=opt,
            checkpoint_dir=out,
            checkpoint_every=cfg.train.checkpoint_every,
            tag=tag,
            loss_history=history,
        )
        params = result.params
        trace = list(history) + result.loss_trace
        save_params(params, out / f"{tag}.avle")
        _write_loss_csv(out / f"{tag}_loss.csv", trace)
        print(f"{tag}: {len(trace)} epochs, final loss {trace[-1]:.6f} -> {out / (tag + '.avle')}")
    return EXIT_OK


def _load_params(cfg: RunConfig):
    params, _, _ = load_training_state(_require(cfg.paths.checkpoint, "checkpoint"))
    return params


def cmd_embed(cfg: RunConfig, args) -> int:
    params = _load_params(cfg)
    corpus = _load_corpus(cfg.paths.corpus)
    out = _out_dir(cfg)

    def run(lec):
        f, g = embed_lecture(params, lec, cfg.modality_mask)
        save_embeddings(f, g, out / f"{lec.lecture_id}.avlz")

    _parallel_map(run, corpus, args.jobs)
    print(f"embedded {len(corpus)} lectures -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- segment / baseline


def _representation_source(cfg: RunConfig, repr_kind: str):
    """Return a function lecture -> (f, g) for learned features, or None for raw."""
    if repr_kind == "raw":
        return None
    if cfg.paths.embeddings:
        emb_dir = _require(cfg.paths.embeddings, "embeddings directory")

        def from_files(lec, mask):
            return load_embeddings(_require(emb_dir / f"{lec.lecture_id}.avlz", "embedding file"))

        return from_files
    params = _load_params(cfg)
    return lambda lec, mask: embed_lecture(params, lec, mask)


def lecture_features(lec, repr_kind, modalities, learned_source, default_mask) -> np.ndarray:
    """Per-clip representation used for segmentation.

    Raw features concatenate the requested modalities. Learned features are
    ``[f(c), g(t)]``; restricting ``modalities`` keeps ``f`` (computed from
    the listed visual streams) and/or ``g`` (when ``text`` is listed).
    """
    if repr_kind == "raw":
        return lec.raw_features(modalities or MODALITIES)
    if modalities is None:
        f, g = learned_source(lec, default_mask)
        return np.hstack([f, g])
    visual = [m for m in modalities if m != "text"]
    f, g = learned_source(lec, visual or default_mask)
    parts = ([f] if visual else []) + ([g] if "text" in modalities else [])
    return np.hstack(parts)


def _segment_one(lec, cfg, method, k_mode, k_fixed, features):
    tw = cfg.twfinch
    estimator = TWFinch(
        alpha_init=tw.alpha_init,
        alpha_step=tw.alpha_step,
        alpha_max=tw.alpha_max,
        require_contiguous=tw.require_contiguous,
        shared_neighbor=tw.shared_neighbor,
    )
    if k_mode == "gt":
        if lec.gt is None:
            raise ValidationError(f"{lec.lecture_id}: k_source=gt but no ground truth")
        K = lec.gt.k
    elif k_mode == "fixed":
        K = k_fixed
    else:
        # auto modes: K is the size of the chosen TW-FINCH hierarchy level
        estimator.set_params(n_clusters=None, auto_k=k_mode)
        estimator.fit(features(lec), timestamps=lec.midpoints, total_duration=lec.total_duration_s)
        K = estimator.n_clusters_
    if K > lec.n_clips:
        raise ValidationError(f"{lec.lecture_id}: K={K} exceeds {lec.n_clips} clips")

    alpha = None
    if method == "twfinch":
        if k_mode not in AUTO_K_CHOICES:
            estimator.set_params(n_clusters=K)
            estimator.fit(features(lec), timestamps=lec.midpoints, total_duration=lec.total_duration_s)
        seg, alpha = estimator.segmentation(), estimator.alpha_used_
    elif method == "naive":
        seg = naive_equal_splits(lec.n_clips, np.column_stack([lec.starts, lec.ends]), K, lec.total_duration_s)
    else:
        km = cfg.kmeans
        kcfg = KMeansConfig(K, km.n_restarts, km.max_iters, km.tol, cfg.seed)
        if method == "kmeans":
            seg = kmeans_segment(features(lec), kcfg)
        else:
            seg = cte_segment(features(lec), lec.midpoints, lec.total_duration_s, CteConfig(kcfg, km.time_weight))
    return seg, alpha


def segmentation_doc(lec, seg: Segmentation, method, alpha, k_source, repr_kind) -> dict:
    return {
        "lecture_id": lec.lecture_id,
        "k": seg.k,
        "alpha_used": alpha,
        "contiguous": seg.contiguous,
        "labels": seg.labels.tolist(),
        "boundaries_s": seg.boundaries(lec.starts),
        "method": method,
        "k_source": k_source,
        "repr": repr_kind,
    }


def cmd_segment(cfg: RunConfig, args) -> int:
    method = args.method
    k_mode, k_fixed = _parse_k_source(args.k_source)
    modalities = _parse_modalities(args.modalities)
    corpus = _load_corpus(cfg.paths.corpus)
    needs_features = method != "naive" or k_mode in AUTO_K_CHOICES
    source = _representation_source(cfg, args.repr) if needs_features else None

    def features(lec):
        return lecture_features(lec, args.repr, modalities, source, cfg.modality_mask)

    out = _out_dir(cfg)

    def run(lec):
        seg, alpha = _segment_one(lec, cfg, method, k_mode, k_fixed, features)
        doc = segmentation_doc(lec, seg, method, alpha, args.k_source, args.repr if needs_features else None)
        _write_json(out / f"{lec.lecture_id}.json", doc)
        return seg

    segs = _parallel_map(run, corpus, args.jobs)
    broken = sum(not s.contiguous for s in segs)
    print(f"{method}: segmented {len(segs)} lectures -> {out}" + (f" ({broken} non-contiguous)" if broken else ""))
    return EXIT_OK


# ---------------------------------------------------------------- eval / report


def _read_prediction(path: Path, lec) -> Segmentation:
    doc = json.loads(_require(path, "segmentation file").read_text(encoding="utf-8"))
    if doc.get("lecture_id") != lec.lecture_id:
        raise ValidationError(f"{path}: lecture_id does not match {lec.lecture_id}")
    labels = doc.get("labels")
    if not isinstance(labels, list) or len(labels) != lec.n_clips:
        raise ValidationError(f"{path}: expected {lec.n_clips} labels")
    return Segmentation(np.asarray(labels, dtype=np.int64))


def cmd_eval(cfg: RunConfig, args) -> int:
    corpus_dir = _require(cfg.paths.corpus, "corpus directory")
    corpus = _load_corpus(corpus_dir)
    pred_dir = _require(args.pred, "prediction directory")
    courses = _course_map(corpus_dir)
    k_list = tuple(float(k) for k in cfg.k_list)

    def run(lec):
        if lec.gt is None:
            raise ValidationError(f"{lec.lecture_id}: no ground truth to evaluate against")
        pred = _read_prediction(pred_dir / f"{lec.lecture_id}.json", lec)
        return evaluate(pred, lec.gt, lec, k_list)

    reports = _parallel_map(run, corpus, args.jobs)
    per_lecture = {lec.lecture_id: r for lec, r in zip(corpus, reports)}
    groups = defaultdict(list)
    for lec in corpus:
        groups[courses.get(lec.lecture_id, course_of(lec.lecture_id))].append(per_lecture[lec.lecture_id])
    per_course = {c: mean_report(rs) for c, rs in sorted(groups.items())}
    mean = mean_report(reports)

    name = args.name or pred_dir.name
    bs_k = k_list[0]
    doc = {
        "name": name,
        "k_list": list(k_list),
        "per_lecture": {k: r.as_dict() for k, r in per_lecture.items()},
        "per_course": {k: r.as_dict() for k, r in per_course.items()},
        "mean": mean.as_dict(),
    }
    out = _out_dir(cfg)
    _write_json(out / "report.json", doc)
    blocks = []
    if args.by_course:
        for course, rep in per_course.items():
            blocks.append(f"[course {course}] {len(groups[course])} lectures\n" + format_table([(name, rep)], bs_k))
    blocks.append(f"[all] {len(corpus)} lectures\n" + format_table([(name, mean)], bs_k))
    text = "\n\n".join(blocks)
    (out / "table.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    rows = []
    for item in args.reports:
        name, _, path = item.rpartition("=")
        doc = json.loads(_require(path, "report file").read_text(encoding="utf-8"))
        rows.append((name or doc.get("name") or Path(path).parent.name, MetricReport.from_dict(doc["mean"])))
    text = format_table(rows, args.bs_k)
    (_out_dir(cfg) / "table.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- retrieve


def _read_query(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        q = np.load(path)
    else:
        q = np.asarray(json.loads(path.read_text(encoding="utf-8")), dtype=np.float64)
    q = np.asarray(q, dtype=np.float64).ravel()
    if not np.all(np.isfinite(q)):
        raise ValidationError("query vector has non-finite entries")
    return q


def cmd_retrieve(cfg: RunConfig, args) -> int:
    params = _load_params(cfg)
    query = _read_query(_require(args.query, "query vector file"))
    if query.size != params.d_text:
        raise ValidationError(f"query has {query.size} dims, checkpoint expects {params.d_text}")
    corpus = _load_corpus(cfg.paths.corpus)
    emb, ids = [], []
    for lec in corpus:
        emb.append(embed_clips(params, lec.matrix("v2d"), lec.matrix("v3d"), lec.matrix("ocr"), cfg.modality_mask))
        ids.extend((lec.lecture_id, c.clip_index) for c in lec.clips)
    q = embed_texts(params, query)[0]
    ranked = retrieve(q, np.vstack(emb), ids, args.top_k)
    rows = [
        {"rank": r, "lecture_id": lid, "clip_index": ci, "score": score}
        for r, ((lid, ci), score) in enumerate(ranked, start=1)
    ]
    _write_json(_out_dir(cfg) / "retrieval.json", rows)
    for row in rows:
        print(f"{row['rank']}\t{row['lecture_id']}\t{row['clip_index']}\t{row['score']:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for per-lecture work")
    common.add_argument("--seed", type=int, help="seed for every random draw")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="lecseg", description="Unsupervised lecture segmentation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic corpus")
    p.add_argument("--n-lectures", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--dims", type=lambda s: [int(x) for x in s.split(",")], help="v2d,v3d,ocr,text")
    p.add_argument("--n-courses", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("clipify", parents=[common], help="group subtitle cues into clips")
    p.add_argument("cues", help="SRT or JSON cue file")
    p.add_argument("--min-len", type=float)
    p.add_argument("--max-len", type=float)
    p.add_argument("--duration", choices=sorted(CLIP_DURATION_PRESETS), help="preset min-max clip length")
    p.set_defaults(func=cmd_clipify)

    p = sub.add_parser("train", parents=[common], help="train the joint embedding")
    p.add_argument("--corpus")
    p.add_argument("--finetune-corpus")
    p.add_argument("--epochs", type=int)
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--ocr-proj-dim", type=int)
    p.add_argument("--resume", help="checkpoint (.avle) with optimizer sidecar to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", parents=[common], help="write AVLZ embedding dumps")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_embed)

    for name, methods, default in (("segment", METHODS, "twfinch"), ("baseline", BASELINE_METHODS, "naive")):
        p = sub.add_parser(name, parents=[common], help=f"write segmentation JSON per lecture ({name})")
        p.add_argument("--corpus")
        p.add_argument("--method", choices=methods, default=default)
        p.add_argument("--k-source", default="gt", help="gt | second_last | third_last | fixed:K")
        p.add_argument("--repr", choices=("learned", "raw"), default="learned")
        p.add_argument("--modalities", help="comma list of v2d,v3d,ocr,text")
        p.add_argument("--checkpoint")
        p.add_argument("--embeddings", help="directory of AVLZ files")
        p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", parents=[common], help="score segmentations against ground truth")
    p.add_argument("--corpus")
    p.add_argument("--pred", required=True, help="directory of segmentation JSON files")
    p.add_argument("--name", help="row label in the table")
    p.add_argument("--k-list", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--by-course", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", parents=[common], help="rank clips for a text feature query")
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--query", required=True, help=".npy or JSON list holding one text feature vector")
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("report", parents=[common], help="combine eval reports into one table")
    p.add_argument("reports", nargs="+", help="report.json paths, optionally NAME=PATH")
    p.add_argument("--bs-k", type=float, default=30)
    p.set_defaults(func=cmd_report)
    return parser


FLAG_KEYS = {
    "seed": "seed",
    "out": "paths.out",
    "corpus": "paths.corpus",
    "finetune_corpus": "paths.finetune_corpus",
    "checkpoint": "paths.checkpoint",
    "embeddings": "paths.embeddings",
    "n_lectures": "synth.n_lectures",
    "noise_sigma": "synth.noise_sigma",
    "dims": "synth.dims",
    "n_courses": "synth.n_courses",
    "min_len": "clip.min_len_s",
    "max_len": "clip.max_len_s",
    "epochs": "train.epochs",
    "finetune_epochs": "train.finetune_epochs",
    "embed_dim": "model.embed_dim",
    "ocr_proj_dim": "model.ocr_proj_dim",
    "k_list": "k_list",
}


def resolve_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for attr, key in FLAG_KEYS.items():
        cfg.override(key, getattr(args, attr, None))
    if args.jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
