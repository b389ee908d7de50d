"""Command-line pipeline: annotate, train, retrieve, evaluate, verify gradients.

Every command is a thin composition of module operations. All randomness in a
command flows from its single --seed flag, outputs are written atomically,
and re-running with identical flags produces byte-identical files.

Exit codes: 0 success, 1 validation error (bad flags, unparseable or invalid
inputs), 2 runtime error, 3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import formats, metrics, synth
from .embedding import embed_matrix, initialize_model
from .errors import (
    ConfigurationError,
    FormatError,
    GradedSimError,
    InvalidInputError,
)
from .fov2d import (
    DEFAULT_OVERLAP_MODE,
    FovParams,
    OverlapMode,
    pairwise_similarity_matrix,
)
from .fov3d import fov3d_matrix
from .gradcheck import run_gradcheck
from .retrieval import RetrievalIndex
from .training import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    """argparse with validation failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InvalidInputError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InvalidInputError(f"expected comma-separated numbers, got {text!r}") from None


def _tier_list(text: str) -> list[tuple[float, float]]:
    tiers = []
    for part in text.split(","):
        if not part.strip():
            continue
        pieces = part.split(":")
        if len(pieces) != 2:
            raise InvalidInputError(f"expected translation:rotation tier, got {part!r}")
        tiers.append((float(pieces[0]), float(pieces[1])))
    if not tiers:
        raise InvalidInputError("no localization tiers given")
    return tiers


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gradedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate-2d", help="graded pair CSV from planar pose annotations")
    p.add_argument("poses", nargs="?", help="pose CSV for an all-pairs matrix with itself")
    p.add_argument("--queries", help="query pose CSV (with --maps, replaces the positional file)")
    p.add_argument("--maps", help="map pose CSV")
    p.add_argument("--theta", type=float, default=90.0, help="sector aperture in degrees")
    p.add_argument("--radius", type=float, default=50.0, help="sector radius in meters")
    p.add_argument(
        "--mode",
        choices=["iou", "ioa"],
        default=DEFAULT_OVERLAP_MODE.value,
        help="overlap definition: intersection over union or over one sector's area",
    )
    p.add_argument("--out", required=True, help="output graded pair CSV")

    p = sub.add_parser("annotate-3d", help="graded pair CSV from point-cloud visibility")
    p.add_argument("cloud", help="point cloud (.xyz or .ply)")
    p.add_argument("intrinsics", help="pinhole intrinsics key=value file")
    p.add_argument("--poses", help="6DOF pose CSV for an all-pairs matrix with itself")
    p.add_argument("--queries", help="query 6DOF pose CSV (with --maps)")
    p.add_argument("--maps", help="map 6DOF pose CSV")
    p.add_argument("--out", required=True, help="output graded pair CSV")

    p = sub.add_parser("train", help="train the embedding model on graded pairs")
    p.add_argument("pairs", help="graded pair CSV")
    p.add_argument("features", help="input feature store (.gdsc)")
    p.add_argument("--loss", choices=["gcl", "cl"], default="gcl")
    p.add_argument("--strategy", choices=["A", "B", "C", "D"], default="A")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=None, help="initial rate (default 0.1 gcl / 0.01 cl)")
    p.add_argument("--tau", type=float, default=0.5, help="contrastive margin")
    p.add_argument("--decay-every", type=int, default=250_000, help="pairs between rate decays")
    p.add_argument("--decay-factor", type=float, default=10.0)
    p.add_argument("--dims", default=None, help="layer dims like 16,32,16 (default: D,2D,D)")
    p.add_argument("--no-normalize", action="store_true", help="skip output L2 normalization")
    p.add_argument("--checkpoint-every", type=int, default=None, metavar="N",
                   help="write intermediate checkpoints every N batches")
    p.add_argument("--trace", default=None, help="loss trace CSV (default: OUT.trace.csv)")
    p.add_argument("--out", required=True, help="output checkpoint (.gsim)")

    p = sub.add_parser("retrieve", help="embed features and run exhaustive search")
    p.add_argument("model", help="model checkpoint (.gsim)")
    p.add_argument("map_features", help="map feature store (.gdsc)")
    p.add_argument("query_features", help="query feature store (.gdsc)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--whiten", type=int, default=None, metavar="DIMS",
                   help="fit PCA whitening of this dimensionality on map descriptors")
    p.add_argument("--no-renormalize", action="store_true",
                   help="skip L2 renormalization after whitening")
    p.add_argument("--save-whitening", default=None, help="persist the transform (.gpca)")
    p.add_argument("--out", required=True, help="output ranked results CSV")

    p = sub.add_parser("eval", help="retrieval metrics from a results CSV")
    p.add_argument("results", help="ranked results CSV")
    p.add_argument("--criterion", choices=["geo", "psi"], default="geo")
    p.add_argument("--ks", default="1,5,10", help="comma-separated recall cutoffs")
    p.add_argument("--poses", help="planar pose CSV (geo criterion / localization)")
    p.add_argument("--poses6", help="6DOF pose CSV (geo criterion / localization)")
    p.add_argument("--pairs", help="graded pair CSV (psi criterion / psi sweep)")
    p.add_argument("--max-dist", type=float, default=25.0, help="geo distance threshold, meters")
    p.add_argument("--max-angle", type=float, default=40.0,
                   help="geo viewpoint threshold, degrees (negative disables)")
    p.add_argument("--min-psi", type=float, default=0.5, help="psi positive threshold (strict)")
    p.add_argument("--tiers", default="0.25:2,0.5:5,5:10",
                   help="localization tiers translation_m:rotation_deg,...")
    p.add_argument("--ap", action="store_true", help="also report average precision over listed pairs")
    p.add_argument("--sweep-axis", choices=["distance", "psi"], default=None)
    p.add_argument("--sweep-grid", default=None, help="comma-separated sweep thresholds")
    p.add_argument("--sweep-k", type=int, default=5)
    p.add_argument("--sweep-out", default=None, help="sweep curve CSV")
    p.add_argument("--out", required=True, help="output metrics JSON")

    p = sub.add_parser("gradcheck", help="finite-difference verification of gradients")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dims", default="2,16", help="descriptor dimension range LOW,HIGH")
    p.add_argument("--out", default=None, help="optional JSON report path")

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--scenario", choices=["city2d", "cloud3d"], required=True)
    p.add_argument("--n", type=int, required=True,
                   help="map pose count (city2d) or cloud point count (cloud3d)")
    p.add_argument("--queries", type=int, default=None,
                   help="city2d query count (default n//5)")
    p.add_argument("--poses", type=int, default=None,
                   help="cloud3d camera count (default 32)")
    p.add_argument("--feature-dim", type=int, default=None,
                   help="override the scenario's default feature dimensionality")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)

    return parser


def _load_pose_lists(args, reader):
    both = args.queries is not None and args.maps is not None
    single = getattr(args, "poses", None)
    if both == bool(single):
        raise InvalidInputError("give either one pose file or both --queries and --maps")
    if both:
        return reader(args.queries), reader(args.maps)
    poses = reader(single)
    return poses, poses


def _cmd_annotate_2d(args) -> int:
    queries, maps = _load_pose_lists(args, formats.read_pose2d_csv)
    params = FovParams(theta_deg=args.theta, radius_m=args.radius)
    pairs = pairwise_similarity_matrix(queries, maps, params, OverlapMode(args.mode))
    formats.write_pair_csv(args.out, pairs)
    return 0


def _cmd_annotate_3d(args) -> int:
    queries, maps = _load_pose_lists(args, formats.read_pose6_csv)
    cloud = formats.load_point_cloud(args.cloud)
    intr = formats.read_intrinsics(args.intrinsics)
    pairs = fov3d_matrix(cloud, queries, maps, intr)
    formats.write_pair_csv(args.out, pairs)
    return 0


def _cmd_train(args) -> int:
    pairs = formats.read_pair_csv(args.pairs)
    store = formats.load_descriptor_store(args.features)
    if args.dims is not None:
        dims = _int_list(args.dims)
    else:
        dims = [store.dim, 32, 16]
    cfg = TrainConfig(
        loss_kind=args.loss,
        initial_lr=args.lr,
        lr_decay_factor=args.decay_factor,
        decay_every_pairs=args.decay_every,
        batch_size=args.batch_size,
        margin_tau=args.tau,
        strategy=args.strategy,
        epochs=args.epochs,
        seed=args.seed,
    )
    model = initialize_model(dims, seed=args.seed, output_normalize=not args.no_normalize)
    meta = {
        "command": "train",
        "dims": dims,
        "loss": args.loss,
        "strategy": args.strategy,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "initial_lr": cfg.resolved_initial_lr,
        "decay_every_pairs": args.decay_every,
        "decay_factor": args.decay_factor,
        "margin_tau": args.tau,
        "output_normalize": not args.no_normalize,
    }

    on_batch_end = None
    if args.checkpoint_every is not None:
        if args.checkpoint_every < 1:
            raise InvalidInputError("--checkpoint-every must be positive")

        def on_batch_end(batch_index, current_model):
            if batch_index % args.checkpoint_every == 0:
                formats.save_checkpoint(
                    f"{args.out}.batch{batch_index}", current_model, seed=args.seed, config=meta
                )

    report = train(model, pairs, store, cfg, on_batch_end=on_batch_end)
    formats.save_checkpoint(args.out, model, seed=args.seed, config=meta)
    trace_path = args.trace if args.trace is not None else args.out + ".trace.csv"
    formats.write_trace_csv(trace_path, report)
    print(f"trained {report.batches} batches ({report.pairs_seen} pairs); wrote {args.out}")
    return 0


def _cmd_retrieve(args) -> int:
    model, _ = formats.load_checkpoint(args.model)
    map_store = formats.load_descriptor_store(args.map_features)
    query_store = formats.load_descriptor_store(args.query_features)
    map_desc = embed_matrix(model, map_store.matrix)
    query_desc = embed_matrix(model, query_store.matrix)
    index = RetrievalIndex.build(
        map_store.ids,
        map_desc,
        whiten_dims=args.whiten,
        renormalize=not args.no_renormalize,
    )
    if args.save_whitening is not None:
        if index.whitener is None:
            raise InvalidInputError("--save-whitening requires --whiten")
        formats.save_whitening(args.save_whitening, index.whitener)
    results = index.search_many(query_store.ids, query_desc, args.k)
    formats.write_results_csv(args.out, results)
    return 0


def _cmd_eval(args) -> int:
    results = formats.read_results_csv(args.results)
    ks = _int_list(args.ks)
    report: dict[str, float] = {}

    poses = None
    if args.poses is not None and args.poses6 is not None:
        raise InvalidInputError("give at most one of --poses and --poses6")
    if args.poses is not None:
        poses = {p.id: p for p in formats.read_pose2d_csv(args.poses)}
    elif args.poses6 is not None:
        poses = {p.id: p for p in formats.read_pose6_csv(args.poses6)}
    pair_set = formats.read_pair_csv(args.pairs) if args.pairs is not None else None

    retrieved_map_ids = sorted({mid for matches in results.values() for mid, _ in matches})

    if args.criterion == "geo":
        if poses is None:
            raise InvalidInputError("geo criterion requires --poses or --poses6")
        max_angle = None if args.max_angle < 0 else args.max_angle
        positives = metrics.geo_positives(
            list(results),
            retrieved_map_ids,
            poses,
            metrics.GeoCriterion(max_dist_m=args.max_dist, max_angle_deg=max_angle),
        )
    else:
        if pair_set is None:
            raise InvalidInputError("psi criterion requires --pairs")
        for qid in results:
            if not pair_set.has_query(qid):
                raise InvalidInputError(f"missing ground truth for query id {qid!r}")
        positives = metrics.psi_positives(pair_set, metrics.PsiCriterion(min_psi=args.min_psi))

    for k, value in metrics.recall_at_k(results, positives, ks).items():
        report[f"recall@{k}"] = value

    if args.ap:
        distances, labels = [], []
        for qid, matches in results.items():
            for mid, dist in matches:
                distances.append(dist)
                labels.append(1 if mid in positives.get(qid, set()) else 0)
        report["ap"] = metrics.average_precision(distances, labels)

    if poses is not None:
        tiers = _tier_list(args.tiers)
        fractions = metrics.localized_fraction(results, poses, poses, tiers)
        for (max_t, max_r), frac in zip(tiers, fractions):
            report[f"localized@{max_t:g}m/{max_r:g}deg"] = frac

    if args.sweep_axis is not None:
        if args.sweep_grid is None:
            raise InvalidInputError("--sweep-axis requires --sweep-grid")
        grid = _float_list(args.sweep_grid)
        if args.sweep_axis == "distance":
            if poses is None:
                raise InvalidInputError("distance sweep requires poses")
            curve = metrics.threshold_sweep(
                results, "distance_m", grid, poses=poses,
                map_ids=retrieved_map_ids, k=args.sweep_k,
            )
        else:
            if pair_set is None:
                raise InvalidInputError("psi sweep requires --pairs")
            curve = metrics.threshold_sweep(
                results, "psi", grid, pair_set=pair_set, k=args.sweep_k
            )
        if args.sweep_out is not None:
            formats.write_curve_csv(args.sweep_out, curve)
        for t, r in curve:
            report[f"sweep@{t:g}"] = r

    formats.write_metrics_report(args.out, report)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    dims = _int_list(args.dims)
    if len(dims) != 2 or dims[0] < 1 or dims[1] < dims[0]:
        raise InvalidInputError("--dims must be LOW,HIGH with 1 <= LOW <= HIGH")
    if args.trials == 0:
        print("warning: --trials 0 requested; gradient check is vacuous", file=sys.stderr)
        print("gradcheck: PASS (vacuous, 0 trials)")
        if args.out:
            formats.write_metrics_report(args.out, {"trials": 0, "passed": True})
        return 0
    report = run_gradcheck(trials=args.trials, seed=args.seed, dims=(dims[0], dims[1]))
    print(
        f"descriptor-level: max relative error {report.max_rel_error_loss:.3e} "
        f"(tolerance {report.loss_tolerance:g}, {report.loss_trials} trials)"
    )
    print(
        f"model-level:      max relative error {report.max_rel_error_model:.3e} "
        f"(tolerance {report.model_tolerance:g}, {report.model_trials} trials)"
    )
    print(f"gradcheck: {'PASS' if report.passed else 'FAIL'}")
    if args.out:
        formats.write_metrics_report(
            args.out,
            {
                "trials": args.trials,
                "max_rel_error_loss": report.max_rel_error_loss,
                "max_rel_error_model": report.max_rel_error_model,
                "passed": report.passed,
            },
        )
    return 0 if report.passed else 3


def _cmd_synth(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.n < 1:
        raise InvalidInputError("--n must be positive")

    def path(name):
        return os.path.join(args.out_dir, name)

    extra = {} if args.feature_dim is None else {"feature_dim": args.feature_dim}
    if args.scenario == "city2d":
        n_query = args.queries if args.queries is not None else max(1, args.n // 5)
        scn = synth.make_city2d(args.n, n_query, args.seed, **extra)
        formats.write_pose2d_csv(path("map_poses.csv"), scn.map_poses)
        formats.write_pose2d_csv(path("query_poses.csv"), scn.query_poses)
        formats.save_descriptor_store(path("features.gdsc"), scn.store)
        map_ids = [p.id for p in scn.map_poses]
        query_ids = [p.id for p in scn.query_poses]
        formats.save_descriptor_store(path("map_features.gdsc"), scn.store.subset(map_ids))
        formats.save_descriptor_store(path("query_features.gdsc"), scn.store.subset(query_ids))
        print(f"wrote city2d scenario ({args.n} map / {n_query} query) to {args.out_dir}")
    else:
        n_poses = args.poses if args.poses is not None else 32
        scn = synth.make_cloud3d(args.n, n_poses, args.seed, **extra)
        formats.write_pose6_csv(path("poses6.csv"), scn.poses)
        formats.write_xyz(path("cloud.xyz"), scn.cloud)
        formats.write_intrinsics(path("intrinsics.txt"), scn.intrinsics)
        formats.save_descriptor_store(path("features.gdsc"), scn.store)
        print(f"wrote cloud3d scenario ({args.n} points / {n_poses} poses) to {args.out_dir}")
    return 0


_COMMANDS = {
    "annotate-2d": _cmd_annotate_2d,
    "annotate-3d": _cmd_annotate_3d,
    "train": _cmd_train,
    "retrieve": _cmd_retrieve,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (InvalidInputError, FormatError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GradedSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
