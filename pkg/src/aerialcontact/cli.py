"""Command-line entry point: ``learn``, ``infer``, ``eval-density`` and ``version``.

Every :class:`~aerialcontact.config.RunConfig` field is available both as a
``key = value`` line in the ``--config`` file and as a ``--key`` flag; a flag
overrides the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cloud import load_cloud
from .config import RunConfig, field_type, load_config, parse_value
from .errors import (AllZeroWeightsError, CloudParseError, ContactError, DimensionMismatchError,
                     DownsampleOverflowError, SchemaError)
from .geom import Pose
from .models import DemonstrationRecord, learn_models, load_model, save_model
from .transfer import build_query_density, optimize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_MISMATCH = 4
EXIT_NO_FEASIBLE = 5

logger = logging.getLogger("aerialcontact")


class UsageError(Exception):
    pass


def parse_links(path):
    """One drone per line: ``b`` then ``L``, each ``px py pz qw qx qy qz``."""
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 14:
            raise CloudParseError(f"{path}:{lineno}: expected 14 numbers, got {len(toks)}")
        try:
            v = np.array([float(t) for t in toks])
        except ValueError:
            raise CloudParseError(f"{path}:{lineno}: non-numeric field") from None
        if not np.all(np.isfinite(v)):
            raise CloudParseError(f"{path}:{lineno}: non-finite value")
        try:
            pairs.append((Pose.from_array(v[:7]), Pose.from_array(v[7:])))
        except ValueError as exc:
            raise CloudParseError(f"{path}:{lineno}: {exc}") from None
    if not pairs:
        raise UsageError(f"{path}: links file holds no poses")
    return pairs


def write_links(path, pairs):
    with open(path, "w") as fh:
        for b, L in pairs:
            fh.write(" ".join(repr(float(x)) for x in np.concatenate([b.as_array(), L.as_array()])) + "\n")


def parse_grid(spec: str):
    """``x0:x1:nx,y0:y1:ny,z0:z1:nz``; a bare number fixes that axis."""
    parts = spec.split(",")
    if len(parts) != 3:
        raise UsageError(f"grid spec needs three comma-separated axes, got {spec!r}")
    axes = []
    for p in parts:
        bits = p.split(":")
        try:
            if len(bits) == 1:
                axes.append(np.array([float(bits[0])]))
            elif len(bits) == 3 and int(bits[2]) >= 1:
                axes.append(np.linspace(float(bits[0]), float(bits[1]), int(bits[2])))
            else:
                raise ValueError
        except ValueError:
            raise UsageError(f"bad grid axis {p!r}; expected lo:hi:n or a number") from None
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            over[f.name] = v
    return replace(cfg, **over)


def _candidate_doc(rank, c):
    return {
        "rank": rank,
        "log_j": c.log_j if np.isfinite(c.log_j) else None,
        "feasible": bool(c.feasible),
        "reason": c.reason,
        "drones": [
            {"b": b.as_array().tolist(), "L": L.as_array().tolist(),
             "nearest_point": None if c.nearest is None else c.nearest[m]}
            for m, (b, L) in enumerate(c.pairs)
        ],
    }


def cmd_learn(args) -> int:
    cfg = _run_config(args)
    cloud = load_cloud(args.cloud)
    pairs = parse_links(args.links)
    bundle = learn_models(DemonstrationRecord(cloud, pairs, label=args.label or Path(args.cloud).stem),
                          **cfg.learn_kwargs())
    save_model(args.out, bundle)
    tw = bundle.task.density.weights
    print(f"object kernels {len(bundle.object.density)}  task kernels {len(bundle.task.density)}  "
          f"contact kernels {[len(l) for l in bundle.contact.links]}  configuration kernels {len(bundle.configuration)}")
    print(f"task weights: max {tw.max():.4g}  nonzero {int(np.count_nonzero(tw))}")
    return EXIT_OK


def _query(cfg, bundle, cloud):
    return build_query_density(bundle.contact, bundle.task, cloud, cfg.transfer_params())


def cmd_infer(args) -> int:
    cfg = _run_config(args)
    bundle = load_model(args.model)
    cloud = load_cloud(args.cloud)
    q = _query(cfg, bundle, cloud)
    cands = optimize(q, bundle.configuration, cfg.transfer_params(), query_cloud=cloud, k=cfg.k,
                     min_separation=cfg.min_separation, max_tilt=cfg.max_tilt,
                     contact_radius=cfg.contact_radius)
    doc = {"model": str(args.model), "cloud": str(args.cloud), "ablate_task": cfg.ablate_task,
           "seed": cfg.seed, "candidates": [_candidate_doc(r, c) for r, c in enumerate(cands)]}
    Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    if args.diagnostics:
        with open(args.diagnostics, "w") as fh:
            fh.write("# link x y z log_q\n")
            for n, ql in enumerate(q.links):
                lq = q.position_logpdf(n, ql.positions)
                for row in np.column_stack([ql.positions, lq]).tolist():
                    fh.write(f"{n} " + " ".join(map(repr, row)) + "\n")
    print(f"{'rank':>4} {'log J':>12}  feasible")
    for r, c in enumerate(cands):
        print(f"{r:>4} {c.log_j:>12.4f}  {'yes' if c.feasible else 'no  ' + c.reason}")
    if not any(c.feasible for c in cands):
        print("no feasible candidate", file=sys.stderr)
        return EXIT_NO_FEASIBLE
    return EXIT_OK


def cmd_eval_density(args) -> int:
    cfg = _run_config(args)
    pts = parse_grid(args.grid)
    bundle = load_model(args.model)
    cloud = load_cloud(args.cloud)
    if not 0 <= args.link < len(bundle.contact.links):
        raise UsageError(f"link index {args.link} out of range for a {len(bundle.contact.links)}-link model")
    q = _query(cfg, bundle, cloud)
    lq = q.position_logpdf(args.link, pts)
    with open(args.out, "w") as fh:
        fh.write("# x y z log_q\n")
        for row in np.column_stack([pts, lq]).tolist():
            fh.write(" ".join(map(repr, row)) + "\n")
    print(f"wrote {len(pts)} rows to {args.out}")
    return EXIT_OK


def cmd_version(args) -> int:
    print(__version__)
    return EXIT_OK


def _converter(name):
    def convert(text):
        return parse_value(name, text)
    convert.__name__ = field_type(name).__name__
    return convert


def _add_config_flags(p):
    g = p.add_argument_group("configuration overrides")
    g.add_argument("--config", help="key=value configuration file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        t = field_type(f.name)
        if t is bool:
            g.add_argument(flag, dest=f.name, nargs="?", const=True, default=None,
                           type=_converter(f.name), metavar="BOOL")
        else:
            g.add_argument(flag, dest=f.name, default=None, type=_converter(f.name),
                           metavar=t.__name__.upper())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aerialcontact", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a model bundle from one demonstration")
    p.add_argument("cloud")
    p.add_argument("links")
    p.add_argument("out")
    p.add_argument("--label", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("infer", help="transfer learned contacts to a new cloud")
    p.add_argument("model")
    p.add_argument("cloud")
    p.add_argument("out")
    p.add_argument("--diagnostics", default=None, help="write (link, x, y, z, log Q) samples here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval-density", help="evaluate the query position density on a grid")
    p.add_argument("model")
    p.add_argument("cloud")
    p.add_argument("out")
    p.add_argument("--grid", required=True,
                   help="x0:x1:nx,y0:y1:ny,z0:z1:nz (a bare number fixes an axis)")
    p.add_argument("--link", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval_density)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=cmd_version)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DownsampleOverflowError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AllZeroWeightsError, DimensionMismatchError) as exc:
        print(f"model mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (SchemaError, ContactError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
