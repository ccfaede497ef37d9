"""``tapetrack`` command line: ``synth``, ``track`` and ``eval`` over one scene directory.

Typical use::

    tapetrack synth --out scene/
    tapetrack track --out scene/ --jobs 4
    tapetrack eval --out scene/

Failures print one JSON object (``error``, ``message``, optional ``path``)
to stderr; bad or missing inputs exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from tapetrack.config import load_config
from tapetrack.errors import TapeTrackError
from tapetrack.evaluation import evaluate, write_metrics_csv, write_summary
from tapetrack.pipeline import (
    MalformedInputError,
    MissingInputError,
    load_inputs,
    load_tracks,
    resolve,
    track_frames,
    write_tracks,
)
from tapetrack.synth import generate_scene, load_truth, write_bundle

logger = logging.getLogger("tapetrack")

EXIT_INPUT = 2
EXIT_INTERNAL = 1


def parse_frames(text: str | None) -> list[int] | None:
    """``"a..b"`` (inclusive) or a single index."""
    if text is None:
        return None
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"frames must look like a..b, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"empty or negative frame range {text!r}")
    return list(range(lo, hi + 1))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tapetrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic scene bundle"),
        ("track", "reconstruct dot positions from detections"),
        ("eval", "compare tracks with ground truth"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="pipeline config JSON (defaults apply to missing keys)")
        p.add_argument("--out", required=True, help="output directory (also the default scene directory)")
        p.add_argument("--scene", help="scene directory to read inputs from (default: --out)")
        p.add_argument("--frames", type=parse_frames, help="inclusive frame range a..b")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for tracking")
        p.add_argument("--seed", type=int, help="overrides the config seed and TAPE_TRACK_SEED")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def cmd_synth(cfg, args) -> None:
    bundle = generate_scene(cfg.scene)
    out = write_bundle(bundle, args.out)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
    logger.info("wrote %d frames to %s", len(bundle.frames), out)


def cmd_track(cfg, args) -> None:
    scene = Path(args.scene or args.out)
    inputs = load_inputs(cfg, scene)
    frames = args.frames if args.frames is not None else sorted(inputs.detections)
    records = track_frames(inputs, frames, cfg.mrf, cfg.tracker, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tracks(records, resolve(cfg.tracks, out, "tracks.json"))


def cmd_eval(cfg, args) -> None:
    scene = Path(args.scene or args.out)
    out = Path(args.out)
    tracks_path = resolve(cfg.tracks, out, "tracks.json")
    truth_path = resolve(cfg.truth, scene, "truth.json")
    for path, what in ((tracks_path, "tracks"), (truth_path, "ground truth")):
        if not path.exists():
            raise MissingInputError(path, what)
    try:
        tracks = load_tracks(tracks_path)
    except json.JSONDecodeError as exc:
        raise MalformedInputError(tracks_path, exc) from exc
    try:
        truth = load_truth(truth_path)
    except json.JSONDecodeError as exc:
        raise MalformedInputError(truth_path, exc) from exc
    frames = args.frames
    if frames is None:
        frames = sorted(int(t["frame"]) for t in tracks)
    report = evaluate(tracks, truth, frames)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out / "metrics.csv")
    write_summary(report, out / "summary.json")
    logger.info("mean error %.4f mm over %d frames", report.overall_mean, len(frames))


COMMANDS = {"synth": cmd_synth, "track": cmd_track, "eval": cmd_eval}


def _fail(code: str, message: str, path: str | None, status: int) -> int:
    payload = {"error": code, "message": message}
    if path is not None:
        payload["path"] = path
    print(json.dumps(payload), file=sys.stderr)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        return _fail("invalid-argument", "--jobs must be at least 1", None, EXIT_INPUT)
    try:
        try:
            cfg = load_config(args.config, args.seed)
        except FileNotFoundError as exc:
            raise MissingInputError(args.config, "config") from exc
        except json.JSONDecodeError as exc:
            raise MalformedInputError(args.config, exc) from exc
        COMMANDS[args.command](cfg, args)
    except (MissingInputError, MalformedInputError) as exc:
        return _fail(exc.code, str(exc), exc.path, EXIT_INPUT)
    except FileNotFoundError as exc:
        return _fail("missing-input", str(exc), exc.filename, EXIT_INPUT)
    except TapeTrackError as exc:
        return _fail(exc.code, str(exc), None, EXIT_INPUT)
    except Exception as exc:  # noqa: BLE001 - last resort, still machine readable
        logger.debug("unexpected failure", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}", None, EXIT_INTERNAL)
    return 0


if __name__ == "__main__":
    sys.exit(main())
