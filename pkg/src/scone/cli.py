"""Command-line frontend: prepare, train, eval, toysgm.

Exit codes: 0 success, 1 internal failure (including a failed toy check),
2 usage or input errors. SCONE_THREADS caps the BLAS thread pool; it must be
set before numpy is first imported, which is why this module defers all
heavy imports into the command bodies.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")


def _apply_thread_cap():
    # Only effective if numpy has not been imported yet; the BLAS pool size
    # is fixed at import time.
    cap = os.environ.get("SCONE_THREADS")
    if not cap:
        return
    for var in _THREAD_VARS:
        os.environ.setdefault(var, cap)


_apply_thread_cap()


class UsageError(Exception):
    """Input/usage problems that should exit with code 2."""


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ")


def _version() -> str:
    try:
        from importlib.metadata import version
        return "scone-" + version("scone")
    except Exception:
        return "scone-unknown"


def write_manifest(out_dir, command: str, config_snapshot: dict, seed,
                   outputs, started: str) -> str:
    manifest = {
        "command": command,
        "config": config_snapshot,
        "seed": seed,
        "version": _version(),
        "started": started,
        "finished": _utc_now(),
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def cmd_prepare(args) -> int:
    from scone.data import load_interactions, save_split, split_dataset

    started = _utc_now()
    if not os.path.isfile(args.input):
        raise UsageError(f"input file not found: {args.input}")
    edges = load_interactions(args.input)
    ratios = tuple(args.split)
    dataset = split_dataset(edges, ratios=ratios, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    written = save_split(dataset, args.out)
    manifest = write_manifest(
        args.out, "prepare",
        {"input": os.path.abspath(args.input), "split": list(ratios)},
        args.seed, written, started)
    print(f"prepared {dataset.user_count} users, {dataset.item_count} items: "
          f"{len(dataset.train_edges)} train / {len(dataset.valid_edges)} valid / "
          f"{len(dataset.test_edges)} test edges")
    print(f"wrote {len(written)} split files + {os.path.basename(manifest)} "
          f"to {args.out}")
    return 0


_ABLATIONS = {
    "none": {},
    "no-cl": {"use_cl": False},
    "no-ns": {"use_hard_neg": False},
    "lightgcn": {"use_cl": False, "use_hard_neg": False},
}


def cmd_train(args) -> int:
    import dataclasses

    from scone.config import load_config
    from scone.data import load_split
    from scone.training import TrainingDiverged, fit

    started = _utc_now()
    if not os.path.isdir(args.data):
        raise UsageError(f"data directory not found: {args.data}")
    config = load_config(args.config) if args.config else None
    if config is None:
        from scone.config import TrainConfig
        config = TrainConfig()
    overrides = dict(_ABLATIONS[args.ablation])
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = dataclasses.replace(config, **overrides)
    dataset = load_split(args.data)
    os.makedirs(args.out, exist_ok=True)
    try:
        result = fit(dataset, config, out_dir=args.out,
                     log=None if args.quiet else print)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outputs = [os.path.join(args.out, name)
               for name in ("history.csv", "best_theta.ckpt", "best_sgm.ckpt")]
    write_manifest(args.out, "train", config.as_dict(), config.seed,
                   outputs, started)
    print(f"best valid recall@{config.eval_k} = {result.best_recall:.6f} "
          f"at epoch {result.best_epoch} (ran {result.stopped_epoch})")
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from scone.checkpoint import CheckpointError, load_embeddings
    from scone.data import build_adjacency, load_split
    from scone.encoder import finalize, propagate, uniform_alphas
    from scone.evaluation import (decomposed_recall, metric_rows_to_csv,
                                  recall_ndcg, strata_assign, stratified_user_eval,
                                  topk_for_users, train_counts, uniformity)

    if not os.path.isdir(args.data):
        raise UsageError(f"data directory not found: {args.data}")
    if not os.path.isfile(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    dataset = load_split(args.data)
    try:
        theta = load_embeddings(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from exc
    if theta.shape[0] != dataset.node_count:
        raise UsageError(
            f"checkpoint covers {theta.shape[0]} nodes but the dataset has "
            f"{dataset.node_count} (users + items)")
    adjacency = build_adjacency(dataset, dtype=theta.dtype)
    layers = propagate(theta, adjacency, args.layers)
    final = finalize(layers, uniform_alphas(args.layers))

    if args.on == "valid":
        truth = dataset.valid_items_by_user()
        exclude_valid = False
    else:
        truth = dataset.test_items_by_user()
        exclude_valid = True
    users = np.unique(
        (dataset.valid_edges if args.on == "valid" else dataset.test_edges)[:, 0])
    if len(users) == 0:
        raise UsageError(f"no users with {args.on} items to evaluate")
    topk = topk_for_users(final, dataset, users, args.k, exclude_valid=exclude_valid)
    result = recall_ndcg(topk, truth, users, args.k)

    rows = [(f"recall@{args.k}", "all", result.recall_at_k),
            (f"ndcg@{args.k}", "all", result.ndcg_at_k)]
    if args.strata:
        u_counts, i_counts = train_counts(dataset)
        groups = stratified_user_eval(result, strata_assign(u_counts))
        for name, res in groups.items():
            rows.append((f"recall@{args.k}", f"user_{name}", res.recall_at_k))
        for name, res in groups.items():
            rows.append((f"ndcg@{args.k}", f"user_{name}", res.ndcg_at_k))
        decomposed = decomposed_recall(topk, truth, users,
                                       strata_assign(i_counts), args.k)
        for name, value in decomposed.items():
            rows.append((f"decomposed_recall@{args.k}", f"item_{name}", value))
    if args.uniformity:
        rng = np.random.default_rng(args.seed)
        user_emb = final[:dataset.user_count]
        if dataset.user_count > args.uniformity_users:
            pick = rng.choice(dataset.user_count, size=args.uniformity_users,
                              replace=False)
            user_emb = user_emb[np.sort(pick)]
        rows.append(("uniformity", "users", uniformity(user_emb, rng)))
        _, i_counts = train_counts(dataset)
        popular = np.nonzero(i_counts > args.popular_threshold)[0]
        if len(popular) >= 2:
            item_emb = final[dataset.user_count + popular]
            rows.append(("uniformity", "items", uniformity(item_emb, rng)))

    csv_text = metric_rows_to_csv(rows)
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(out_dir, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return 0


def cmd_toysgm(args) -> int:
    import numpy as np

    from scone.config import SdeSchedule
    from scone.optim import Adam
    from scone.sampler import generate_views
    from scone.score_model import ScoreNet, dsm_loss

    started = _utc_now()
    try:
        os.makedirs(args.out, exist_ok=True)
    except (OSError, FileExistsError) as exc:
        raise UsageError(f"cannot create output directory {args.out}: {exc}")
    if not os.path.isdir(args.out):
        raise UsageError(f"not a directory: {args.out}")

    rng = np.random.default_rng(args.seed)
    if len(args.means) % 2 != 0:
        raise UsageError("--means needs an even number of values (2-d points)")
    means = np.asarray(args.means, dtype=np.float64).reshape(-1, 2)
    cov_scale = 0.05
    n_train = 4096
    component = rng.integers(0, len(means), size=n_train)
    data = (means[component]
            + np.sqrt(cov_scale) * rng.standard_normal((n_train, 2))).astype(np.float32)

    # sigma_max tracks the data diameter; the recommender default (50) would
    # spend most of the 100 steps at noise scales this toy never occupies.
    diam = 0.0
    if len(means) > 1:
        diff = means[:, None, :] - means[None, :, :]
        diam = float(np.sqrt((diff ** 2).sum(axis=-1)).max())
    schedule = SdeSchedule(sigma_max=max(1.0, diam), sampling_steps=100)
    net = ScoreNet(embed_dim=2, hidden=32, wide=64, time_dim=32,
                   rng=np.random.default_rng([args.seed, 1]))
    adam = Adam(net.params, lr=3e-3)
    loss = float("nan")
    for it in range(args.iters):
        if it == (2 * args.iters) // 3:
            adam.lr = 1e-3  # settle the small-sigma tail
        batch = data[rng.integers(0, n_train, size=1024)]
        loss, grads = dsm_loss(net, batch, schedule, rng)
        adam.step(grads)

    sample_rng = np.random.default_rng([args.seed, 2])
    start = data[sample_rng.integers(0, n_train, size=args.draws)]
    views = generate_views(start, net, schedule, sample_rng)
    draws = views.view_b

    true_mean = means.mean(axis=0)
    # mixture covariance = within-component + between-means (population form)
    spread = float(np.trace(np.cov(means.T, bias=True))) if len(means) > 1 else 0.0
    true_cov_trace = 2 * cov_scale + spread
    mean_err = float(np.linalg.norm(draws.mean(axis=0) - true_mean))
    cov_trace = float(np.trace(np.cov(draws.T)))
    cov_err = abs(cov_trace - true_cov_trace) / true_cov_trace
    passed = bool(mean_err < 0.1 and cov_err < 0.2)

    report = {
        "seed": args.seed,
        "final_dsm_loss": loss,
        "sample_mean": draws.mean(axis=0).tolist(),
        "target_mean": true_mean.tolist(),
        "mean_error": mean_err,
        "cov_trace": cov_trace,
        "target_cov_trace": true_cov_trace,
        "cov_trace_rel_error": cov_err,
        "passed": passed,
    }
    report_path = os.path.join(args.out, "toysgm_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    write_manifest(args.out, "toysgm", {"iters": args.iters, "draws": args.draws},
                   args.seed, [report_path], started)
    status = "pass" if passed else "FAIL"
    print(f"toysgm {status}: mean error {mean_err:.4f} (< 0.1), "
          f"cov trace rel error {cov_err:.3f} (< 0.2)")
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scone",
        description="Graph collaborative filtering with score-based "
                    "stochastic sampling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a raw interaction TSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", nargs=3, type=float, default=[0.7, 0.1, 0.2],
                   metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None,
                   help="config file path or packaged preset name")
    p.add_argument("--ablation", choices=sorted(_ABLATIONS), default="none")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained embedding checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--on", choices=["valid", "test"], default="test")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--strata", action="store_true")
    p.add_argument("--uniformity", action="store_true")
    p.add_argument("--uniformity-users", type=int, default=5000)
    p.add_argument("--popular-threshold", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("toysgm", help="2-d self-check of the generative stack")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=8000)
    p.add_argument("--draws", type=int, default=4096)
    p.add_argument("--means", nargs="+", type=float, default=[1.0, -0.5],
                   help="flat list of 2-d component means")
    p.set_defaults(func=cmd_toysgm)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        # malformed inputs and configs are usage errors; the rest is internal
        from scone.config import ConfigError
        from scone.data import DataError
        if isinstance(exc, (DataError, ConfigError)):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
