"""Command-line interface.

Subcommands mirror the pipeline stages: ``curate`` (scene annotations ->
crop specs, optionally rendering crop PNGs), ``augment`` (weather
corruption over a directory of PNGs), ``aggregate`` (multi-pass
predictions -> aggregated JSONL), ``evaluate`` (predictions + ground truth
-> full-precision run JSON), ``report`` (run JSON -> markdown/CSV tables,
with calibration figures rendered next to a file target) and
``reliability`` (run JSON -> per-bin/per-level CSV plus figures).

Exit codes: 0 on success, 1 on validation errors (including usage
errors), 2 on I/O errors. A ``--config FILE`` of ``key=value`` lines may
set any flag of the invoked subcommand; explicit flags override the file.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import re
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .aggregation import parse_aggregated, serialize_aggregated
from .curation import (
    CurationConfig,
    apply_class_caps,
    curate_scenes,
    parse_scenes,
    serialize_crop_specs,
)
from .errors import ShiftBenchError, ValidationError
from .records import parse_ground_truth
from .regression import calibration_levels_csv
from .report import (
    EvaluationRun,
    dataset_display_name,
    evaluate,
    load_run,
    render_report,
    run_to_json,
)
from .streaming import aggregate_prediction_stream
from .weather import FRAME_PIXELS, apply_fog, apply_rain, get_preset

__all__ = ["build_parser", "main"]

_DEFAULT_CFG = CurationConfig()


class _Parser(argparse.ArgumentParser):
    """Parser whose usage errors surface as validation errors (exit 1)."""

    def error(self, message: str):  # noqa: D102 (argparse override)
        raise ValidationError(message)


# ---------------------------------------------------------------------------
# config file support


def _prescan(argv: list[str]) -> tuple[str | None, str | None]:
    """Find the subcommand and any --config path without parsing."""
    command = None
    config = None
    i = 0
    while i < len(argv):
        token = argv[i]
        if token == "--config":
            config = argv[i + 1] if i + 1 < len(argv) else None
            i += 2
            continue
        if token.startswith("--config="):
            config = token.split("=", 1)[1]
            i += 1
            continue
        if command is None and not token.startswith("-"):
            command = token
        i += 1
    return command, config


def _convert_config_value(action: argparse.Action, value: str, lineno: int):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValidationError(
            f"config line {lineno}: '{action.dest}' expects a boolean, got '{value}'"
        )
    convert = action.type or str
    try:
        if isinstance(action, argparse._AppendAction):
            return [convert(part.strip()) for part in value.split(",") if part.strip()]
        converted = convert(value.strip())
    except (TypeError, ValueError):
        raise ValidationError(
            f"config line {lineno}: invalid value '{value}' for '{action.dest}'"
        )
    if action.choices is not None and converted not in action.choices:
        allowed = ", ".join(str(c) for c in action.choices)
        raise ValidationError(
            f"config line {lineno}: '{action.dest}' must be one of {allowed}, "
            f"got '{converted}'"
        )
    return converted


def _apply_config(path: str, sub: argparse.ArgumentParser) -> None:
    """Load key=value lines as subcommand defaults (flags still override)."""
    text = Path(path).read_text(encoding="utf-8")
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"config line {lineno} is not key=value: '{line}'")
        dest = key.strip().replace("-", "_")
        action = actions.get(dest)
        if action is None or dest in ("help", "config"):
            raise ValidationError(f"config line {lineno}: unknown option '{key.strip()}'")
        defaults[dest] = _convert_config_value(action, value, lineno)
    sub.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# shared helpers


def _slug(tag: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", tag) or "_"


def _filename_rng(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode()).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "big")])


def _parse_key_int(pairs: list[str] | None, flag: str) -> dict[str, int]:
    out: dict[str, int] = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValidationError(f"{flag} expects KEY=N, got '{pair}'")
        try:
            out[key.strip()] = int(value)
        except ValueError:
            raise ValidationError(f"{flag} expects an integer value, got '{pair}'")
    return out


def _load_pil():
    from PIL import Image

    return Image


# ---------------------------------------------------------------------------
# subcommands


def _cmd_aggregate(args: argparse.Namespace) -> int:
    aggs = aggregate_prediction_stream(Path(args.predictions).read_bytes())
    Path(args.out).write_bytes(serialize_aggregated(aggs))
    print(f"wrote {len(aggs)} aggregated predictions to {args.out}", file=sys.stderr)
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    raw = Path(args.predictions).read_bytes()
    if args.aggregated:
        aggregated = parse_aggregated(raw)
    else:
        aggregated = aggregate_prediction_stream(raw)
    truth = parse_ground_truth(Path(args.truth).read_bytes())
    run = evaluate(
        aggregated,
        truth,
        task=args.task,
        n_bins=args.bins,
        n_levels=args.levels,
        seed=args.seed,
    )
    Path(args.out).write_bytes(run_to_json(run))
    print(
        f"evaluated {len(run.methods)} method(s) x {len(run.datasets)} dataset(s) "
        f"-> {args.out}",
        file=sys.stderr,
    )
    return 0


def _run_figures(run: EvaluationRun, directory: Path, stem: str) -> list[Path]:
    # figure rendering imports matplotlib; keep it off the table-only path
    from .figures import save_calibration_curve, save_reliability_diagram

    written = []
    for cell in run.cells:
        label = f"{cell.method} / {dataset_display_name(cell.dataset)}"
        suffix = f"{_slug(cell.method)}_{_slug(cell.dataset)}"
        if cell.classification is not None:
            path = directory / f"{stem}_reliability_{suffix}.png"
            save_reliability_diagram(cell.classification.bins, path, title=label)
            written.append(path)
        if cell.regression is not None and cell.regression.levels:
            path = directory / f"{stem}_calibration_{suffix}.png"
            save_calibration_curve(cell.regression.levels, path, title=label)
            written.append(path)
    return written


def _cmd_report(args: argparse.Namespace) -> int:
    run = load_run(Path(args.run).read_bytes())
    payload = render_report(run, args.format)
    if args.out is None:
        sys.stdout.write(payload.decode())
        return 0
    out = Path(args.out)
    out.write_bytes(payload)
    messages = [f"wrote {args.format} report to {out}"]
    if not args.no_figures:
        figures = _run_figures(run, out.parent, out.stem)
        messages.append(f"rendered {len(figures)} figure(s) alongside")
    print("; ".join(messages), file=sys.stderr)
    return 0


def _reliability_cells(run: EvaluationRun, args: argparse.Namespace):
    chosen = []
    for cell in run.cells:
        if args.method is not None and cell.method != args.method:
            continue
        if args.dataset is not None and cell.dataset != args.dataset:
            continue
        if args.task == "classification":
            if cell.classification is not None:
                chosen.append(cell)
        else:
            if cell.regression is not None and cell.regression.levels:
                chosen.append(cell)
    if not chosen:
        what = "reliability bins" if args.task == "classification" else "calibration levels"
        raise ValidationError(f"no scored cells with {what} match the selection")
    return chosen


def _reliability_csv(cells, task: str) -> str:
    single = len(cells) == 1
    if single and task == "regression":
        return calibration_levels_csv(cells[0].regression.levels)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    prefix = () if single else ("method", "dataset")
    if task == "classification":
        writer.writerow(prefix + ("bin_lo", "bin_hi", "mean_confidence", "accuracy", "count"))
        for cell in cells:
            lead = () if single else (cell.method, cell.dataset)
            for b in cell.classification.bins:
                writer.writerow(lead + (b.lo, b.hi, b.mean_confidence, b.accuracy, b.count))
    else:
        writer.writerow(prefix + ("level", "empirical_frequency"))
        for cell in cells:
            lead = (cell.method, cell.dataset)
            for lv in cell.regression.levels:
                writer.writerow(lead + (lv.level, lv.empirical_frequency))
    return buffer.getvalue()


def _cmd_reliability(args: argparse.Namespace) -> int:
    run = load_run(Path(args.run).read_bytes())
    cells = _reliability_cells(run, args)
    out = Path(args.out)
    out.write_text(_reliability_csv(cells, args.task), encoding="utf-8")
    messages = [f"wrote {args.task} curve data for {len(cells)} cell(s) to {out}"]
    if not args.no_figure:
        from .figures import save_calibration_curve, save_reliability_diagram

        written = []
        for cell in cells:
            label = f"{cell.method} / {dataset_display_name(cell.dataset)}"
            if len(cells) == 1:
                path = out.with_suffix(".png")
            else:
                path = out.parent / (
                    f"{out.stem}_{_slug(cell.method)}_{_slug(cell.dataset)}.png"
                )
            if args.task == "classification":
                save_reliability_diagram(cell.classification.bins, path, title=label)
            else:
                save_calibration_curve(cell.regression.levels, path, title=label)
            written.append(path)
        messages.append(f"rendered {len(written)} figure(s) alongside")
    print("; ".join(messages), file=sys.stderr)
    return 0


def _cmd_curate(args: argparse.Namespace) -> int:
    if (args.images is None) != (args.crops is None):
        raise ValidationError("--images and --crops must be given together")
    caps = dict(_DEFAULT_CFG.class_caps)
    caps.update(_parse_key_int(args.cap, "--cap"))
    try:
        remap = tuple((int(k), v) for k, v in _parse_key_int(args.remap, "--remap").items())
    except ValueError:
        raise ValidationError("--remap expects OLD=NEW with integer class ids")
    cfg = CurationConfig(
        target_size=args.target_size,
        min_object_width=args.min_object_width,
        overlap_ratio_max=args.overlap_ratio_max,
        max_expansion=args.max_expansion,
        class_caps=caps,
        split=args.split,
        drop_occluded_truncated=not args.keep_occluded,
        class_remap=remap,
        seed=args.seed,
    )
    scenes = parse_scenes(Path(args.scenes).read_bytes())
    result = curate_scenes(scenes, cfg)
    kept = apply_class_caps(result.specs, cfg)
    Path(args.out).write_bytes(serialize_crop_specs(kept))
    skips = ", ".join(f"{k}={v}" for k, v in sorted(result.skip_counts.items())) or "none"
    print(
        f"curated {result.n_scenes} scene(s): {len(result.specs)} crop(s) proposed, "
        f"{len(kept)} kept after class caps to {args.out} (skips: {skips})",
        file=sys.stderr,
    )
    if args.images is not None:
        target = round(cfg.target_size)
        if abs(cfg.target_size - target) > 0.0:
            raise ValidationError(
                "target size must be a whole number of pixels to render crops"
            )
        Image = _load_pil()
        crops_dir = Path(args.crops)
        crops_dir.mkdir(parents=True, exist_ok=True)
        for spec in kept:
            source = Path(args.images) / f"{spec.image_id}.png"
            with Image.open(source) as img:
                x1, y1, x2, y2 = spec.window
                rendered = img.convert("RGB").resize(
                    (target, target), resample=Image.BILINEAR, box=(x1, y1, x2, y2)
                )
            rendered.save(crops_dir / f"{spec.image_id}_{spec.main_object_index}.png")
        print(f"rendered {len(kept)} crop(s) into {crops_dir}", file=sys.stderr)
    return 0


def _cmd_augment(args: argparse.Namespace) -> int:
    preset = get_preset(args.effect, args.level)
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise ValidationError(f"--in must be a directory, got '{in_dir}'")
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise ValidationError(f"no .png files found in '{in_dir}'")
    Image = _load_pil()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    apply = apply_rain if preset.effect == "rain" else apply_fog
    for path in files:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"))
        if pixels.shape != (FRAME_PIXELS, FRAME_PIXELS, 3):
            raise ValidationError(
                f"'{path.name}' is {pixels.shape[1]}x{pixels.shape[0]}, "
                f"expected {FRAME_PIXELS}x{FRAME_PIXELS}"
            )
        corrupted = apply(pixels, preset, _filename_rng(args.seed, path.name))
        Image.fromarray(corrupted).save(out_dir / path.name)
    print(
        f"applied {args.effect} level {args.level} to {len(files)} image(s) "
        f"-> {out_dir}",
        file=sys.stderr,
    )
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    parser = _Parser(
        prog="shiftbench",
        description="Uncertainty benchmark toolkit: curate, corrupt, aggregate, score.",
    )
    parser.add_argument("--version", action="version", version=f"shiftbench {__version__}")
    parser.set_defaults(command=None, func=None)
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub_map: dict[str, argparse.ArgumentParser] = {}

    def _sub(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subs.add_parser(name, help=help_text, description=help_text)
        sub.add_argument("--config", help="key=value file of defaults for this subcommand")
        sub_map[name] = sub
        return sub

    sub = _sub("aggregate", "Collapse multi-pass predictions into one record per (image, method).")
    sub.add_argument("--predictions", required=True, help="multi-pass predictions JSONL")
    sub.add_argument("--out", required=True, help="aggregated JSONL destination")
    sub.set_defaults(func=_cmd_aggregate)

    sub = _sub("evaluate", "Score predictions against ground truth into a run JSON.")
    sub.add_argument("--predictions", required=True, help="predictions JSONL")
    sub.add_argument(
        "--aggregated",
        action="store_true",
        help="treat --predictions as already-aggregated JSONL",
    )
    sub.add_argument("--truth", required=True, help="ground-truth JSONL")
    sub.add_argument(
        "--task",
        choices=("classification", "regression", "both"),
        default="both",
    )
    sub.add_argument("--bins", type=int, default=10, help="reliability bins (default 10)")
    sub.add_argument("--levels", type=int, default=10, help="calibration levels (default 10)")
    sub.add_argument("--seed", type=int, default=None, help="recorded in run metadata")
    sub.add_argument("--out", required=True, help="run JSON destination")
    sub.set_defaults(func=_cmd_evaluate)

    sub = _sub("report", "Render a run JSON as markdown or CSV tables.")
    sub.add_argument("--run", required=True, help="run JSON from 'evaluate'")
    sub.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    sub.add_argument("--out", default=None, help="write here instead of stdout")
    sub.add_argument(
        "--no-figures",
        action="store_true",
        help="skip rendering calibration figures next to --out",
    )
    sub.set_defaults(func=_cmd_report)

    sub = _sub("reliability", "Export per-bin/per-level curve data from a run JSON.")
    sub.add_argument("--run", required=True, help="run JSON from 'evaluate'")
    sub.add_argument("--out", required=True, help="CSV destination")
    sub.add_argument(
        "--task", choices=("classification", "regression"), default="classification"
    )
    sub.add_argument("--method", default=None, help="restrict to one method tag")
    sub.add_argument("--dataset", default=None, help="restrict to one dataset tag")
    sub.add_argument(
        "--no-figure", action="store_true", help="skip rendering figures next to --out"
    )
    sub.set_defaults(func=_cmd_reliability)

    sub = _sub("curate", "Turn scene annotations into single-object crop specs.")
    sub.add_argument("--scenes", required=True, help="scene annotations JSONL")
    sub.add_argument("--out", required=True, help="crop specs JSONL destination")
    sub.add_argument("--seed", type=int, default=_DEFAULT_CFG.seed)
    sub.add_argument("--split", default=_DEFAULT_CFG.split, help="split whose cap applies")
    sub.add_argument("--target-size", type=float, default=_DEFAULT_CFG.target_size)
    sub.add_argument(
        "--min-object-width", type=float, default=_DEFAULT_CFG.min_object_width
    )
    sub.add_argument(
        "--overlap-ratio-max", type=float, default=_DEFAULT_CFG.overlap_ratio_max
    )
    sub.add_argument("--max-expansion", type=float, default=_DEFAULT_CFG.max_expansion)
    sub.add_argument(
        "--keep-occluded",
        action="store_true",
        help="keep occluded/truncated objects for every class",
    )
    sub.add_argument(
        "--cap",
        action="append",
        metavar="SPLIT=N",
        help="per-class cap for a split (repeatable)",
    )
    sub.add_argument(
        "--remap",
        action="append",
        metavar="OLD=NEW",
        help="merge class id OLD into NEW (repeatable)",
    )
    sub.add_argument("--images", default=None, help="directory of <image_id>.png scenes")
    sub.add_argument("--crops", default=None, help="directory for rendered crop PNGs")
    sub.set_defaults(func=_cmd_curate)

    sub = _sub("augment", "Apply a weather corruption to every PNG in a directory.")
    sub.add_argument("--effect", choices=("rain", "fog"), required=True)
    sub.add_argument("--level", type=int, choices=(1, 2), required=True)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--in", dest="in_dir", required=True, help="input directory")
    sub.add_argument("--out", required=True, help="output directory")
    sub.set_defaults(func=_cmd_augment)

    parser._sub_map = sub_map  # type: ignore[attr-defined]
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        command, config_path = _prescan(argv)
        if config_path is not None:
            if command is None or command not in parser._sub_map:
                raise ValidationError("--config requires a valid subcommand")
            _apply_config(config_path, parser._sub_map[command])
        args = parser.parse_args(argv)
        if args.func is None:
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        return args.func(args)
    except ShiftBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
