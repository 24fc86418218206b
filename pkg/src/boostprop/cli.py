"""Batch command-line front end for the full pipeline.

Subcommands: synth-filters, train, propose, regress-fit, refine, eval,
demo-synth. Every command takes an optional `--config FILE` of
`key = value` lines (keys are the long flag names); explicit flags win
over the config, which wins over built-in defaults. Exit codes: 0 on
success, 2 for usage errors, 1 for runtime/data errors.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, _kernels, boost, dataio, demo, detector, evaluation, regress, sampler
from .channels import synth_filter_bank
from .errors import BoostpropError, ConfigurationError, ParseError, SamplingError, TrainingError
from .geometry import Box, ScoredBox

DEFAULTS = {
    # synth-filters
    "seed": 0,
    "count": 16,
    "size": 5,
    "channels": 3,
    # training
    "d": 25,
    "shrink": 4,
    "trees": 2048,
    "neg": 20000,
    "bootstrap": 3,
    "neg-max-iou": 0.3,
    "mine-stride": 1,
    "threads": 1,
    # detector
    "S": detector.DEFAULT_S,
    "R": detector.DEFAULT_R,
    "U": detector.DEFAULT_U,
    "V": detector.DEFAULT_V,
    "stride": 1,
    "max": detector.DEFAULT_MAX_PROPOSALS,
    "score-floor": -math.inf,
    # regression
    "lambda": regress.DEFAULT_LAMBDA,
    # eval
    "budgets": "10,100,1000,10000",
    # demo-synth
    "images": 20,
    "side": 288,
}


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _any_int(text):
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None


def _odd_int(text):
    v = _positive_int(text)
    if v % 2 == 0:
        raise argparse.ArgumentTypeError(f"must be odd, got {v}")
    return v


def _unit_interval(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {v}")
    return v


def _fraction(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1), got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _plane_count(text):
    v = _any_int(text)
    if v not in (1, 3):
        raise argparse.ArgumentTypeError(f"must be 1 or 3, got {v}")
    return v


CONVERTERS = {
    "seed": _any_int,
    "count": _positive_int,
    "size": _odd_int,
    "channels": _plane_count,
    "d": _positive_int,
    "shrink": _positive_int,
    "trees": _positive_int,
    "neg": _positive_int,
    "bootstrap": _nonneg_int,
    "neg-max-iou": _fraction,
    "mine-stride": _positive_int,
    "threads": _positive_int,
    "S": _positive_int,
    "R": _odd_int,
    "U": _unit_interval,
    "V": _unit_interval,
    "stride": _positive_int,
    "max": _positive_int,
    "score-floor": float,
    "lambda": _positive_float,
    "budgets": str,
    "images": _positive_int,
    "side": _positive_int,
}


def parse_config_file(path) -> dict:
    """`key = value` lines; `#` starts a comment; blank lines ignored."""
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(
                "expected `key = value`", element_path=str(path), line=lineno
            )
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


class _Resolver:
    """Layered option lookup: explicit flag > config file > DEFAULTS."""

    def __init__(self, args, parser):
        self.args = args
        self.parser = parser
        self.config = parse_config_file(args.config) if getattr(args, "config", None) else {}
        for key in self.config:
            if key not in CONVERTERS and key not in _PATH_KEYS:
                self.parser.error(f"unknown config key {key!r}")

    def get(self, key):
        v = getattr(self.args, key.replace("-", "_"), None)
        if v is not None:
            return v
        if key in self.config:
            try:
                return CONVERTERS[key](self.config[key])
            except argparse.ArgumentTypeError as exc:
                self.parser.error(f"config key {key!r}: {exc}")
        return DEFAULTS[key]

    def path(self, key):
        """A required path option, from flag or config."""
        v = getattr(self.args, key.replace("-", "_"), None)
        if v is None:
            v = self.config.get(key)
        if v is None:
            self.parser.error(f"missing required option --{key}")
        return Path(v)

    def opt_path(self, key):
        v = getattr(self.args, key.replace("-", "_"), None)
        if v is None:
            v = self.config.get(key)
        return Path(v) if v is not None else None


_PATH_KEYS = {
    "manifest",
    "bank",
    "model",
    "out",
    "out-model",
    "out-csv",
    "out-svg",
    "out-dir",
    "proposals",
    "regressor",
    "blacklist",
}


def _tool_header(seed, fingerprints: dict) -> dict:
    header = {"tool": f"boostprop {__version__}", "seed": seed}
    header.update(fingerprints)
    return header


def _load_dataset(manifest_path, include_difficult=True):
    """[(image_id, ImagePlanes, [Box])] in manifest order."""
    manifest = dataio.read_manifest(manifest_path)
    if not manifest.entries:
        raise BoostpropError(f"no images listed in manifest {manifest_path}")
    data = []
    for img_path, ann_path in manifest.entries:
        image = dataio.load_image(img_path)
        ann = dataio.parse_voc_xml(Path(ann_path).read_bytes())
        boxes = [
            b
            for b, diff in zip(ann.boxes, ann.difficult)
            if include_difficult or not diff
        ]
        data.append((img_path.stem, image, boxes))
    return data


def _area_quotas(areas, total: int):
    """Split `total` proportionally to areas by largest remainder."""
    areas = np.asarray(areas, dtype=np.float64)
    raw = total * areas / areas.sum()
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    frac = raw - base
    order = np.lexsort((np.arange(len(areas)), -frac))
    base[order[:short]] += 1
    return base


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_filters(args, parser):
    opt = _Resolver(args, parser)
    seed = opt.get("seed")
    count, size, planes = opt.get("count"), opt.get("size"), opt.get("channels")
    out = opt.path("out")
    bank = synth_filter_bank(seed, count, size, size, planes)
    dataio.write_cfbk(bank, out)
    fp = dataio.bank_fingerprint(bank)
    print(f"wrote {count} {size}x{size} filters over {planes} plane(s), fingerprint {fp[:16]}")
    return 0


def cmd_train(args, parser):
    opt = _Resolver(args, parser)
    _kernels.set_thread_cap(opt.get("threads"))
    seed = opt.get("seed")
    d, shrink = opt.get("d"), opt.get("shrink")
    trees, neg, rounds = opt.get("trees"), opt.get("neg"), opt.get("bootstrap")
    s_levels, r_aspects = opt.get("S"), opt.get("R")
    bank = dataio.read_cfbk(opt.path("bank"))
    fp = dataio.bank_fingerprint(bank)
    data = _load_dataset(opt.path("manifest"), include_difficult=not args.exclude_difficult)
    spec = sampler.SampleSpec(
        neg_per_round=neg,
        bootstrap_rounds=rounds,
        neg_max_iou=opt.get("neg-max-iou"),
        rng_seed=seed,
    )

    positives = []
    for _, image, boxes in data:
        positives.extend(
            sampler.extract_positive(image, boxes, bank, d, shrink, S=s_levels, R=r_aspects)
        )
    if not positives:
        raise TrainingError("no usable positive boxes in the dataset")
    quotas = _area_quotas([im.width * im.height for _, im, _ in data], neg)
    negatives = []
    for idx, ((_, image, boxes), quota) in enumerate(zip(data, quotas)):
        negatives.extend(
            desc
            for _, desc in sampler.sample_negatives(
                image, boxes, spec, int(quota),
                bank=bank, d=d, shrink=shrink, S=s_levels, R=r_aspects, salt=idx,
            )
        )
    wset = sampler.make_weighted_set(positives, negatives, d, bank.count)

    model = boost.adaboost_train(
        wset, trees, shrink=shrink, bank_fingerprint=fp
    )
    print(
        f"round 0: training error {model.meta['train_error'][-1]:.4f} "
        f"on {wset.size} samples ({len(negatives)} negatives)"
    )
    mine_cfg_kwargs = dict(
        S=s_levels, R=r_aspects, stride_cells=opt.get("mine-stride")
    )
    pair_data = [(image, boxes) for _, image, boxes in data]
    for r in range(1, rounds + 1):
        mine_cfg = detector.DetectorConfig(models=(model,), **mine_cfg_kwargs)
        wset = sampler.bootstrap(model, wset, pair_data, bank, spec, mine_cfg=mine_cfg)
        model = boost.adaboost_train(wset, trees, shrink=shrink, bank_fingerprint=fp)
        print(
            f"round {r}: training error {model.meta['train_error'][-1]:.4f} "
            f"on {wset.size} samples"
        )
    model.meta.update(
        {
            "tool": f"boostprop {__version__}",
            "seed": seed,
            "bank": fp,
            "trees": trees,
            "bootstrap_rounds": rounds,
            "S": s_levels,
            "R": r_aspects,
        }
    )
    out_path = opt.path("out-model")
    dataio.save_model(model, out_path)
    print(f"saved {model.tree_count}-tree model to {out_path}")
    return 0


def _detector_config(opt, models):
    return detector.DetectorConfig(
        models=tuple(models),
        S=opt.get("S"),
        R=opt.get("R"),
        U=opt.get("U"),
        V=opt.get("V"),
        stride_cells=opt.get("stride"),
        max_proposals=opt.get("max"),
        score_floor=opt.get("score-floor"),
    )


def cmd_propose(args, parser):
    opt = _Resolver(args, parser)
    _kernels.set_thread_cap(opt.get("threads"))
    bank = dataio.read_cfbk(opt.path("bank"))
    model_paths = [Path(p) for p in str(opt.path("model")).split(",")]
    models = [dataio.load_model(p) for p in model_paths]
    cfg = _detector_config(opt, models)
    data = _load_dataset(opt.path("manifest"))
    by_image = {}
    for image_id, image, _ in data:
        by_image[image_id] = detector.propose(image, bank, cfg)
    header = _tool_header(
        "-",
        {
            "bank": dataio.bank_fingerprint(bank),
            "models": ",".join(dataio.sha256_file(p) for p in model_paths),
            "detector": (
                f"S={cfg.S} R={cfg.R} U={cfg.U} V={cfg.V} "
                f"stride={cfg.stride_cells} max={cfg.max_proposals}"
            ),
        },
    )
    out_path = opt.path("out")
    dataio.write_proposals(out_path, by_image, header)
    counts = [len(v) for v in by_image.values()]
    print(
        f"{len(by_image)} images, avg {float(np.mean(counts)):.1f} proposals/image "
        f"-> {out_path}"
    )
    return 0


def cmd_regress_fit(args, parser):
    opt = _Resolver(args, parser)
    _kernels.set_thread_cap(opt.get("threads"))
    ridge_lambda = opt.get("lambda")
    d, shrink = opt.get("d"), opt.get("shrink")
    s_levels, r_aspects = opt.get("S"), opt.get("R")
    bank = dataio.read_cfbk(opt.path("bank"))
    props = dataio.read_proposals(opt.path("proposals"))
    data = _load_dataset(opt.path("manifest"), include_difficult=not args.exclude_difficult)
    pairs = []
    for image_id, image, boxes in data:
        plist = props.get(image_id, [])
        selected = regress.select_pairs(plist, boxes)
        if not selected:
            continue
        cache = sampler.PyramidCache(image, bank, d, shrink, s_levels, r_aspects)
        for pi, gj in selected:
            phi = sampler.extract_descriptor(cache, plist[pi].box)
            if phi is None:
                continue
            pairs.append(regress.RegressionPair(plist[pi].box, boxes[gj], phi))
    if not pairs:
        raise SamplingError(
            "no proposal/ground-truth pairs reached IoU "
            f"{regress.PAIR_MIN_IOU}; increase the proposal budget (--max) "
            "or improve the model"
        )
    reg = regress.fit(
        pairs,
        ridge_lambda,
        meta={
            "tool": f"boostprop {__version__}",
            "seed": "-",
            "bank": dataio.bank_fingerprint(bank),
            "lambda": ridge_lambda,
            "pairs": len(pairs),
            "d": d,
            "shrink": shrink,
            "S": s_levels,
            "R": r_aspects,
        },
    )
    out_path = opt.path("out")
    dataio.save_regressor(reg, out_path)
    print(f"fitted box regressor on {len(pairs)} pairs (lambda={ridge_lambda}) -> {out_path}")
    return 0


def cmd_refine(args, parser):
    opt = _Resolver(args, parser)
    _kernels.set_thread_cap(opt.get("threads"))
    bank = dataio.read_cfbk(opt.path("bank"))
    reg_path = opt.path("regressor")
    reg = dataio.load_regressor(reg_path)
    geo = reg.meta
    for key in ("d", "shrink", "S", "R"):
        if key not in geo:
            raise ConfigurationError(
                f"regressor file lacks extraction geometry key {key!r}"
            )
    props = dataio.read_proposals(opt.path("proposals"))
    data = _load_dataset(opt.path("manifest"))
    out_map = {}
    for image_id, image, _ in data:
        plist = props.get(image_id, [])
        cache = sampler.PyramidCache(
            image, bank, int(geo["d"]), int(geo["shrink"]), int(geo["S"]), int(geo["R"])
        )
        refined = []
        for sb in plist:
            phi = sampler.extract_descriptor(cache, sb.box)
            if phi is None:
                refined.append(sb)
                continue
            nb = regress.apply(reg, sb.box, phi)
            x1 = max(nb.x1, 0.0)
            y1 = max(nb.y1, 0.0)
            x2 = min(nb.x2, float(image.width))
            y2 = min(nb.y2, float(image.height))
            if x2 <= x1 or y2 <= y1:  # refined entirely off-image: keep the original
                refined.append(sb)
            else:
                refined.append(ScoredBox(Box(x1, y1, x2, y2), sb.score))
        out_map[image_id] = refined
    header = _tool_header(
        "-",
        {
            "bank": dataio.bank_fingerprint(bank),
            "regressor": dataio.sha256_file(reg_path),
        },
    )
    out_path = opt.path("out")
    dataio.write_proposals(out_path, out_map, header)
    total = sum(len(v) for v in out_map.values())
    print(f"refined {total} proposals over {len(out_map)} images -> {out_path}")
    return 0


def cmd_eval(args, parser):
    opt = _Resolver(args, parser)
    props_path = opt.path("proposals")
    props = dataio.read_proposals(props_path)
    data = _load_dataset(opt.path("manifest"), include_difficult=not args.exclude_difficult)
    gts = {image_id: boxes for image_id, _, boxes in data}
    blk_path = opt.opt_path("blacklist")
    blacklist = dataio.read_blacklist(blk_path) if blk_path else set()
    try:
        budgets = tuple(int(b) for b in str(opt.get("budgets")).split(","))
    except ValueError:
        parser.error("--budgets must be comma-separated integers")
    report = evaluation.evaluate(props, gts, blacklist, budgets)
    header = _tool_header(
        "-",
        {"proposals": dataio.sha256_file(props_path)},
    )
    out_csv = opt.path("out-csv")
    evaluation.write_report_csv(report, out_csv, header)
    svg_path = opt.opt_path("out-svg")
    if svg_path:
        evaluation.write_report_svg(report, svg_path, header)
    t, r = report.iou_thresholds, report.recall_at
    picks = [float(np.interp(x, t, r)) for x in (0.50, 0.65, 0.80)]
    print(
        f"recall@0.50 {picks[0]:.3f} | recall@0.65 {picks[1]:.3f} | "
        f"recall@0.80 {picks[2]:.3f} | AUC {report.auc:.3f}"
    )
    print(
        f"images {report.images_evaluated} (blacklisted {report.images_blacklisted}), "
        f"avg {report.avg_proposals_per_image:.1f} proposals/image"
    )
    return 0


def cmd_demo_synth(args, parser):
    opt = _Resolver(args, parser)
    seed, n, side = opt.get("seed"), opt.get("images"), opt.get("side")
    out_dir = opt.path("out-dir")
    header = {
        "tool": f"boostprop {__version__}",
        "seed": seed,
        "images": n,
        "side": side,
    }
    manifest = demo.generate_dataset(out_dir, n, seed, side, header)
    print(f"wrote {n} synthetic images; manifest at {manifest}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def _add_common(sp, *names):
    sp.add_argument("--config", metavar="FILE", help="key = value option file")
    for name in names:
        if name in _PATH_KEYS:
            sp.add_argument(f"--{name}", metavar="PATH")
        else:
            sp.add_argument(f"--{name}", type=CONVERTERS[name], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boostprop",
        description="Generic object-proposal pipeline: filter banks, boosted "
        "window scoring, NMS, box regression, and recall evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"boostprop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth-filters", help="generate a deterministic filter bank")
    _add_common(sp, "seed", "count", "size", "channels", "out")
    sp.set_defaults(func=cmd_synth_filters)

    sp = sub.add_parser("train", help="train a boosted window classifier")
    _add_common(
        sp,
        "manifest", "bank", "out-model",
        "d", "shrink", "trees", "neg", "bootstrap", "neg-max-iou",
        "mine-stride", "S", "R", "seed", "threads",
    )
    sp.add_argument("--exclude-difficult", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("propose", help="generate proposals for every image")
    _add_common(
        sp,
        "manifest", "bank", "model", "out",
        "S", "R", "U", "V", "stride", "max", "score-floor", "threads",
    )
    sp.set_defaults(func=cmd_propose)

    sp = sub.add_parser("regress-fit", help="fit the box refinement regressor")
    _add_common(
        sp,
        "proposals", "manifest", "bank", "out",
        "lambda", "d", "shrink", "S", "R", "threads",
    )
    sp.add_argument("--exclude-difficult", action="store_true")
    sp.set_defaults(func=cmd_regress_fit)

    sp = sub.add_parser("refine", help="apply the regressor to a proposals file")
    _add_common(sp, "proposals", "manifest", "bank", "regressor", "out", "threads")
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("eval", help="recall curves and AUC for a proposals file")
    _add_common(sp, "proposals", "manifest", "blacklist", "out-csv", "out-svg", "budgets")
    sp.add_argument("--exclude-difficult", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("demo-synth", help="generate a synthetic demo dataset")
    _add_common(sp, "out-dir", "images", "seed", "side")
    sp.set_defaults(func=cmd_demo_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser) or 0
    except (BoostpropError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
