"""``negground`` command-line entry point.

Exit codes: 0 success, 1 domain error (bad data, failed check), 2 usage
error. Data goes to stdout or ``--out``; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from contextlib import contextmanager

import numpy as np

from . import adapter as adapter_mod
from . import formats, metrics
from .config import load_config
from .exceptions import NegGroundError
from .negtome import BoostConfig, merge
from .textparse import Lexicon, ParsedCaption, parse

log = logging.getLogger("negground")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


@contextmanager
def _output(path, binary=False):
    if path in (None, "-"):
        yield sys.stdout.buffer if binary else sys.stdout
    else:
        with open(path, "wb" if binary else "w", **({} if binary else {"encoding": "utf-8"})) as fh:
            yield fh


def _read_lines(path):
    if path in (None, "-"):
        return sys.stdin.read().splitlines()
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _lexicon(cfg):
    return Lexicon.load(cfg.cue_lexicon, cfg.un_exclusions, cfg.un_stems)


# ---------------------------------------------------------------- commands

def cmd_parse(args, cfg):
    lexicon = _lexicon(cfg)
    with _output(args.out) as fh:
        for line in _read_lines(args.input):
            if line.strip():
                fh.write(json.dumps(parse(line, lexicon).to_dict(), ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_merge(args, cfg):
    lexicon = _lexicon(cfg)
    embeddings = formats.read_embeddings(args.embeddings)
    if args.parsed:
        parsed = [ParsedCaption.from_dict(r) for r in formats.read_jsonl(args.parsed)]
    else:
        if any(c is None for c, _ in embeddings):
            raise formats.FormatError("binary embeddings need --parsed captions")
        parsed = [parse(c, lexicon) for c, _ in embeddings]
    if len(parsed) != len(embeddings):
        raise formats.FormatError(f"{len(parsed)} captions but {len(embeddings)} embedding matrices")
    boost = BoostConfig(cfg.beta)
    merged = [merge(p, emb, boost) for p, (_, emb) in zip(parsed, embeddings)]
    if args.format == "binary":
        with _output(args.out, binary=True) as fh:
            fh.write(formats.encode_blocks([m.rows for m in merged]))
    else:
        with _output(args.out) as fh:
            for p, m in zip(parsed, merged):
                fh.write(json.dumps({"caption": p.raw, **m.to_dict()}) + "\n")
    return EXIT_OK


def cmd_adapter_check(args, cfg):
    result = adapter_mod.gradient_check(n_layers=args.layers, eps=args.eps, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    identity_ok = True
    for _ in range(args.layers):
        d = int(rng.integers(1, 9))
        layer = adapter_mod.LoraLinear.init(rng.normal(size=(d, d)), min(4, d), random_state=rng.integers(1 << 31))
        x = rng.normal(size=d)
        identity_ok &= bool(np.array_equal(layer.forward(x), layer.W @ x))
    print(f"max_relative_error {result['max_relative_error']:.3e}")
    print(f"identity_at_init {'ok' if identity_ok else 'FAILED'}")
    return EXIT_OK if result["max_relative_error"] < args.tolerance and identity_ok else EXIT_DOMAIN


def cmd_eval(args, cfg):
    dets = metrics.load_detections(args.detections)
    qs = metrics.QuerySet.load(args.queries)
    report = metrics.evaluate(dets, qs, iou_thresh=cfg.iou_thresh, score_thresh=cfg.score_thresh,
                              protocol=args.protocol, nms=args.nms, max_dets=args.max_dets)
    with _output(args.out) as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(report.to_table(), file=sys.stderr)
    return EXIT_OK


def cmd_nms(args, cfg):
    dets = metrics.load_detections(args.detections)
    kept = metrics.nms_per_image(dets, cfg.iou_thresh)
    with _output(args.out) as fh:
        formats.dump_jsonl([d.to_dict() for d in kept], fh)
    log.info("kept %d of %d detections", len(kept), len(dets))
    return EXIT_OK


def _clients(args, cfg):
    from .pipeline.clients import HttpClient, MockClient

    if args.mock_fixtures:
        mock = MockClient(args.mock_fixtures)
        return mock, mock
    return (HttpClient(cfg.endpoint_env, cfg.api_key_env, model=args.generator_model),
            HttpClient(cfg.endpoint_env, cfg.api_key_env, model=args.vqa_model))


def cmd_build_dataset(args, cfg):
    from .pipeline.builder import BuildConfig, build_dataset

    images = formats.read_jsonl(args.annotations)
    generator, vqa = _clients(args, cfg)
    bcfg = BuildConfig(seed=args.seed, retry_limit=cfg.retry_limit, max_area_ratio=cfg.max_area_ratio,
                       parallelism=cfg.parallelism, split=args.split,
                       generator_model=args.generator_model, vqa_model=args.vqa_model)
    result = build_dataset(images, generator, vqa, bcfg)
    with _output(args.out) as fh:
        result.write_jsonl(fh)
    print(json.dumps(dict(sorted(result.summary.items()))), file=sys.stderr)
    return EXIT_OK


def _corpus(paths):
    items = []
    for path in paths or ["-"]:
        for line in _read_lines(path):
            line = line.strip()
            if not line:
                continue
            if line.startswith("{"):
                try:
                    items.append(json.loads(line))
                    continue
                except json.JSONDecodeError:
                    pass
            items.append(line)
    return items


def cmd_stats(args, cfg):
    from .pipeline.stats import corpus_stats

    stats = corpus_stats(_corpus(args.inputs))
    with _output(args.out) as fh:
        json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def cmd_posthoc(args, cfg):
    from .pipeline.posthoc import posthoc_coordinate_prompt, posthoc_crop_verify

    dets = metrics.load_detections(args.detections)
    qs = metrics.QuerySet.load(args.queries)
    client, _ = _clients(args, cfg)
    groups = defaultdict(list)
    for d in dets:
        groups[(d.image_id, d.caption_id)].append(d)
    kept = []
    for (image_id, cid), group in groups.items():
        query = qs.queries[cid].text if cid in qs.queries else str(cid)
        if args.mode == "crop":
            kept.extend(posthoc_crop_verify(group, query, client, args.k, model=args.vqa_model))
        else:
            kept.extend(posthoc_coordinate_prompt(group, query, client, args.k, model=args.vqa_model))
    with _output(args.out) as fh:
        formats.dump_jsonl([d.to_dict() for d in kept], fh)
    return EXIT_OK


def cmd_diag_attn(args, cfg):
    with open(args.input, encoding="utf-8") as fh:
        obj = json.load(fh)
    classes = obj.get("classes")
    if classes is None:
        if "caption" not in obj:
            raise formats.FormatError("diag-attn input needs 'classes' or 'caption'")
        classes = [t.tag for t in parse(obj["caption"], _lexicon(cfg)).tokens]
    diag = adapter_mod.attention_by_class(obj["attention"], classes)
    with _output(args.out) as fh:
        json.dump(diag.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--verbose", "-v", action="store_true", help="log to stderr and echo the config")
    common.add_argument("--out", "-o", help="output path (default: stdout)")

    p = _Parser(prog="negground", description="Negation-aware grounding toolkit.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("parse", parents=[common], help="tokenize, tag and chunk captions (one per line)")
    s.add_argument("--input", "-i", help="caption file (default: stdin)")
    s.add_argument("--cue-lexicon")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("merge", parents=[common], help="merge token embeddings per phrase")
    s.add_argument("--embeddings", required=True, help="JSONL {caption, embeddings} or EMB1 binary")
    s.add_argument("--parsed", help="JSONL from `parse`; required for binary embeddings")
    s.add_argument("--beta", type=float)
    s.add_argument("--format", choices=("jsonl", "binary"), default="jsonl")
    s.add_argument("--cue-lexicon")
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("adapter-check", parents=[common], help="finite-difference check of adapter gradients")
    s.add_argument("--layers", type=int, default=50)
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_adapter_check)

    s = sub.add_parser("eval", parents=[common], help="AP / NMS-AP / AR / FPR for detections")
    s.add_argument("--detections", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--iou-thresh", type=float)
    s.add_argument("--score-thresh", type=float)
    s.add_argument("--protocol", choices=sorted(metrics.PROTOCOLS), default="coco")
    s.add_argument("--nms", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--max-dets", type=int, default=metrics.DEFAULT_MAX_DETS)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("nms", parents=[common], help="class-ignored NMS per image")
    s.add_argument("--detections", required=True)
    s.add_argument("--iou-thresh", type=float)
    s.set_defaults(func=cmd_nms)

    model_args = argparse.ArgumentParser(add_help=False)
    model_args.add_argument("--mock-fixtures", help="directory of canned client responses")
    model_args.add_argument("--generator-model", default="gpt-4o")
    model_args.add_argument("--vqa-model", default="vqa")

    s = sub.add_parser("build-dataset", parents=[common, model_args], help="build a negation caption dataset")
    s.add_argument("--annotations", required=True)
    s.add_argument("--split", choices=("S", "M", "L"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--retry-limit", type=int)
    s.add_argument("--max-area-ratio", type=float)
    s.add_argument("--parallelism", type=int)
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("stats", parents=[common], help="negation frequency and word classes of a corpus")
    s.add_argument("inputs", nargs="*", help="caption or record files (default: stdin)")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("posthoc", parents=[common, model_args], help="post-hoc VQA filtering of detections")
    s.add_argument("--detections", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--mode", choices=("crop", "coordinate"), required=True)
    s.add_argument("--k", type=int, default=5)
    s.set_defaults(func=cmd_posthoc)

    s = sub.add_parser("diag-attn", parents=[common], help="mean attention per word class")
    s.add_argument("--input", required=True, help="JSON {attention: [...], classes | caption}")
    s.set_defaults(func=cmd_diag_attn)
    return p


_OVERRIDES = ("beta", "iou_thresh", "score_thresh", "retry_limit", "parallelism",
              "max_area_ratio", "cue_lexicon")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
        cfg = load_config(args.config, overrides)
        if args.verbose:
            print(json.dumps({"config": cfg.to_dict()}, sort_keys=True), file=sys.stderr)
        return args.func(args, cfg)
    except NegGroundError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


dispatch = main


if __name__ == "__main__":
    sys.exit(main())
