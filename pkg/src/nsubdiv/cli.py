"""Command-line surface for the toolkit (installed as ``ns``).

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

import argparse
import os
import sys

import numpy as np

from .classic import butterfly_subdivide, loop_subdivide, midpoint_subdivide
from .mesh import MeshError, load_obj, mesh_digest, normalize_unit_box, save_obj
from .metrics import compare_schemes, format_comparison, surface_distance
from .neural import load_checkpoint, neural_subdivide, save_checkpoint
from .selfparam import CollapseRejected, MapError, decimate, save_map
from .training import generate_dataset, grad_check, load_dataset, save_dataset, train


class _UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("%s: error: %s\n" % (self.prog, message))
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="ns", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decimate", help="edge-collapse decimation with a bijective map")
    p.add_argument("--input", required=True)
    p.add_argument("--target-vertices", type=int, required=True)
    p.add_argument("--policy", choices=["qslim", "random100"], default="qslim")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--map", dest="map_path")

    p = sub.add_parser("gen-data", help="generate self-supervised training pairs")
    p.add_argument("--input", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--min-v", type=int, default=150)
    p.add_argument("--max-v", type=int, default=300)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train the subdivision modules on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=700)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("subdivide", help="apply a trained model to a coarse mesh")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--output", required=True)
    p.add_argument("--all-levels", dest="all_levels_dir")

    p = sub.add_parser("subdivide-classic", help="classic subdivision baselines")
    p.add_argument("--scheme", choices=["loop", "butterfly", "midpoint"], required=True)
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("eval", help="metro-style surface distances between two meshes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("compare", help="loop / butterfly / neural against a reference")
    p.add_argument("--input", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_decimate(args):
    mesh = load_obj(args.input)
    result = decimate(mesh, args.target_vertices, policy=args.policy, seed=args.seed)
    if not result.reached_target:
        sys.stderr.write(
            "warning: no valid edge left at %d vertices (target %d); "
            "writing best effort\n" % (result.coarse.n_vertices, args.target_vertices)
        )
    save_obj(result.coarse, args.output)
    if args.map_path:
        save_map(result.bijective_map, args.map_path)
    print("decimated %d -> %d vertices (%d collapses)"
          % (mesh.n_vertices, result.coarse.n_vertices, result.n_collapses))
    return 0


def _cmd_gen_data(args):
    mesh = load_obj(args.input)
    normalized, transform = normalize_unit_box(mesh)
    pairs = generate_dataset(normalized, count=args.count, min_v=args.min_v,
                             max_v=args.max_v, levels=args.levels, seed=args.seed)
    save_dataset(
        pairs, args.out_dir, seed=args.seed, source_digest=mesh_digest(mesh),
        extra={
            "min_v": args.min_v,
            "max_v": args.max_v,
            "source_scale": repr(float(transform.scale)),
            "source_center": "%r %r %r" % tuple(float(x) for x in transform.center),
        },
    )
    print("wrote %d pairs to %s" % (len(pairs), args.out_dir))
    return 0


def _read_manifest(data_dir):
    meta = {}
    path = os.path.join(data_dir, "manifest.txt")
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                parts = line.split(None, 1)
                if len(parts) == 2:
                    meta[parts[0]] = parts[1].strip()
    return meta


def _cmd_train(args):
    dataset = load_dataset(args.data)
    manifest = _read_manifest(args.data)
    result = train(dataset, epochs=args.epochs, seed=args.seed, lr=args.lr,
                   levels=args.levels,
                   progress=lambda e, l: print("epoch %4d  loss %.6e" % (e, l)))
    if result.diverged:
        sys.stderr.write("warning: loss became non-finite; kept last good epoch\n")
    levels = args.levels or (dataset[0].levels if dataset else 2)
    source_scale = float(manifest.get("source_scale", 1.0))
    source_center = np.array(
        manifest.get("source_center", "0 0 0").split(), dtype=float
    )
    save_checkpoint(args.checkpoint, result.bundle, levels=levels,
                    source_scale=source_scale, source_center=source_center)
    print("checkpoint written to %s (final loss %.6e)"
          % (args.checkpoint, result.history[-1] if result.history else float("nan")))
    return 0


def _cmd_subdivide(args):
    mesh = load_obj(args.input)
    bundle, meta = load_checkpoint(args.checkpoint)
    levels = args.levels if args.levels is not None else int(meta.get("levels", 2))
    trained = int(meta.get("levels", levels))
    if levels > trained:
        sys.stderr.write(
            "warning: checkpoint was trained for %d levels, subdividing %d\n"
            % (trained, levels)
        )
    outputs = neural_subdivide(mesh, bundle, levels)
    save_obj(outputs[-1], args.output)
    if args.all_levels_dir:
        os.makedirs(args.all_levels_dir, exist_ok=True)
        for l, m in enumerate(outputs, start=1):
            save_obj(m, os.path.join(args.all_levels_dir, "level_%d.obj" % l))
    print("subdivided to %d vertices / %d faces"
          % (outputs[-1].n_vertices, outputs[-1].n_faces))
    return 0


def _cmd_subdivide_classic(args):
    mesh = load_obj(args.input)
    scheme = {"loop": loop_subdivide, "butterfly": butterfly_subdivide,
              "midpoint": midpoint_subdivide}[args.scheme]
    out = scheme(mesh, args.levels)
    save_obj(out, args.output)
    print("subdivided to %d vertices / %d faces" % (out.n_vertices, out.n_faces))
    return 0


def _cmd_eval(args):
    a = load_obj(args.a)
    b = load_obj(args.b)
    report = surface_distance(a, b, samples=args.samples, seed=args.seed)
    if args.json:
        print(report.to_json())
    else:
        print("hausdorff      %r" % report.hausdorff)
        print("mean_distance  %r" % report.mean_distance)
        print("a->b  mean %r  max %r" % (report.a_to_b_mean, report.a_to_b_max))
        print("b->a  mean %r  max %r" % (report.b_to_a_mean, report.b_to_a_max))
    return 0


def _cmd_compare(args):
    coarse = load_obj(args.input)
    reference = load_obj(args.reference)
    bundle, _ = load_checkpoint(args.checkpoint)
    rows = compare_schemes(coarse, reference, bundle, levels=args.levels,
                           samples=args.samples, seed=args.seed)
    print(format_comparison(rows, reference.bbox_diagonal()))
    return 0


def _cmd_gradcheck(args):
    report = grad_check(seed=args.seed)
    print(report)
    return 0 if report.max_rel_error < 1e-4 else 2


_COMMANDS = {
    "decimate": _cmd_decimate,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "subdivide": _cmd_subdivide,
    "subdivide-classic": _cmd_subdivide_classic,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "gradcheck": _cmd_gradcheck,
}


def cli_main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except (MeshError, MapError, CollapseRejected, ValueError) as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 2
    except OSError as exc:
        sys.stderr.write("error: %s\n" % exc)
        return 2


def main():
    sys.exit(cli_main())
