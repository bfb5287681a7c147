"""Command line entry point: ``mobpheno <command> [options]``.

Exit codes: 0 success, 1 data error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import FORMAT_VERSION, __version__, pipeline
from .errors import ConfigError, ConfigInvalid, DataError, InvalidSpec, MobphenoError
from .pipeline import RunConfig
from .synth import ScheduleSpec, generate_study, paper_scale_days, write_cohort

log = logging.getLogger("mobpheno")

STAGES = {
    "ingest": pipeline.run_ingest,
    "ddp": pipeline.run_ddp,
    "pca": pipeline.run_pca,
    "circadian": pipeline.run_circadian,
    "phenotypes": pipeline.run_phenotypes,
    "compare": pipeline.run_compare,
    "predict": pipeline.run_predict,
    "pipeline": pipeline.run_pipeline,
}

HELP = {
    "ingest": "validate GPS files and write canonical traces",
    "ddp": "build daily displacement profiles",
    "pca": "principal components of the displacement profiles",
    "circadian": "IS, IV, M10, L5 and RA per participant and per day",
    "phenotypes": "place clustering and the seven daily phenotypes",
    "compare": "Welch PRE vs POST report over PCs, circadian metrics and phenotypes",
    "predict": "leave-one-participant-out severe-sadness prediction",
    "pipeline": "run every stage in order",
}


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    # defaults are None so that only flags given on the command line override the config file
    p.add_argument("--config", help="JSON file with run settings")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--gps-dir", help="directory of <participant_id>.csv GPS files")
    p.add_argument("--roster", help="CSV with participant_id, group[, timezone_offset_minutes]")
    p.add_argument("--survey", help="CSV with participant_id, local_date, sadness_level")
    p.add_argument("--timezone-offset", dest="timezone_offset_minutes", type=int,
                   help="default local offset from UTC in minutes")
    p.add_argument("--min-coverage", type=float)
    p.add_argument("--d-thresh", type=float, help="stay radius in meters")
    p.add_argument("--t-thresh", type=float, help="minimum stay duration in seconds")
    p.add_argument("--merge-distance", type=float, help="place merge radius in meters")
    p.add_argument("--loc-var-units", choices=["m", "deg"])
    p.add_argument("--pca-components", type=int)
    p.add_argument("--pca-log", type=_bool, metavar="BOOL")
    p.add_argument("--pca-correlation", type=_bool, metavar="BOOL")
    p.add_argument("--circadian-pad", type=_bool, metavar="BOOL")
    p.add_argument("--lambda", dest="lam", type=float, help="ridge penalty of the logistic model")
    p.add_argument("--n-trees", type=int)
    p.add_argument("--max-features", type=int)
    p.add_argument("--min-samples-leaf", type=int)
    p.add_argument("--min-severe-days", type=int)
    p.add_argument("--methods", nargs="+", choices=["logistic", "forest"])
    p.add_argument("--standardize", type=_bool, metavar="BOOL")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes over participants")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobpheno", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"mobpheno {__version__} (format version {FORMAT_VERSION})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        _add_run_options(sub.add_parser(name, help=HELP[name]))

    s = sub.add_parser("synth", help="generate a synthetic PRE_LIKE + POST_LIKE cohort")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n-pre", type=int, default=50)
    s.add_argument("--n-post", type=int, default=50)
    s.add_argument("--days", type=int, default=60, help="days per participant")
    s.add_argument("--paper-scale", action="store_true",
                   help="126 participants sharing 6442 days, split evenly between groups")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pre-spec", help="JSON schedule spec for the PRE_LIKE group")
    s.add_argument("--post-spec", help="JSON schedule spec for the POST_LIKE group")
    return parser


def _read_spec(path):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise ConfigInvalid(f"schedule spec not found: {p}")
    return ScheduleSpec.from_json(p.read_text())


def run_synth(args) -> dict:
    if args.paper_scale:
        n_pre, n_post = 63, 63
        days = paper_scale_days(n_pre + n_post)
    else:
        n_pre, n_post, days = args.n_pre, args.n_post, args.days
        if n_pre < 0 or n_post < 0 or n_pre + n_post == 0 or days < 1:
            raise InvalidSpec("need at least one participant and one day")
    cohort = generate_study(n_pre, n_post, days, args.seed,
                            _read_spec(args.pre_spec), _read_spec(args.post_spec))
    out = write_cohort(cohort, args.out)
    return {"out": str(out), "participants": len(cohort.gps),
            "survey_rows": len(cohort.survey)}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            info = run_synth(args)
        else:
            opts = vars(args).copy()
            for k in ("command", "verbose", "config"):
                opts.pop(k)
            cfg = RunConfig.load(args.config, **opts)
            info = STAGES[args.command](cfg)
    except ConfigError as e:
        print(f"mobpheno: config error: {e}", file=sys.stderr)
        return 2
    except (DataError, MobphenoError) as e:
        print(f"mobpheno: data error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(info, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
