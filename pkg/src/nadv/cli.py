"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 runtime failure (search exhaustion,
transport trouble, bad checkpoint, ...). Diagnostics go to stderr;
machine-readable results go to the paths given by flags. Every subcommand
takes --seed and, given the same flags and seed, writes byte-identical
outputs at --threads 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint, classify, gan, inverter, search
from .data import Dataset, downsample, gen_blobs, gen_swiss_roll, load_idx
from .errors import DimensionError, NadvError
from .evaluate import RobustnessRecord, attack_instances, delta_z_stats, \
    emit_report, rank_correlation


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract here reserves 2 for
    # runtime failures, so remap to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.split(",") if p.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}")
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(
            f"dims must be positive integers, got {text!r}")
    return dims


def _load_as(path: str, kinds: tuple[str, ...], what: str):
    obj = checkpoint.load_checkpoint(path)
    kind = checkpoint.peek_kind(path)
    if kind not in kinds:
        raise DimensionError(
            f"{path} holds a {kind!r} checkpoint; expected {what}"
        )
    return obj


def _parse_input(text: str) -> tuple[str, int]:
    path, sep, idx = text.rpartition(":")
    if not sep or not idx.lstrip("-").isdigit():
        raise DimensionError(
            f"--input must look like dataset.nadv:INDEX, got {text!r}"
        )
    return path, int(idx)


def _load_instance(text: str) -> tuple[Dataset, int, np.ndarray]:
    path, index = _parse_input(text)
    ds = _load_as(path, ("dataset",), "a dataset")
    if not 0 <= index < ds.n:
        raise DimensionError(
            f"instance index {index} outside [0, {ds.n}) for {path}"
        )
    return ds, index, ds.x[index]


def _open_classifier(spec: str, input_dim: int, num_classes: int | None,
                     timeout: float) -> classify.ClassifierHandle:
    scheme, sep, rest = spec.partition(":")
    if not sep or scheme not in ("file", "exec"):
        raise DimensionError(
            f"--classifier must be file:PATH or exec:\"COMMAND\", got "
            f"{spec!r}"
        )
    if scheme == "file":
        handle = classify.handle_for(
            _load_as(rest, ("mlp", "forest"), "a classifier"))
        if handle.input_dim != input_dim:
            raise DimensionError(
                f"classifier expects {handle.input_dim}-dim instances, "
                f"pipeline produces {input_dim}"
            )
        return handle
    if num_classes is None:
        raise DimensionError(
            "--num-classes is required with exec: classifiers (the "
            "handshake verifies it)"
        )
    return classify.spawn_external(rest, input_dim, num_classes,
                                   timeout=timeout)


def _write_json(obj: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dr", type=float, default=0.01,
                   help="annulus width (default 0.01)")
    p.add_argument("--n-samples", type=int, default=5000,
                   help="candidates per annulus (default 5000)")
    p.add_argument("--r-init", type=float, default=5.0,
                   help="initial upper bound of the hybrid search")
    p.add_argument("--b", type=int, default=5,
                   help="consecutive-miss budget of the hybrid descend phase")
    p.add_argument("--max-annuli", type=int, default=1000)
    p.add_argument("--threads", type=int, default=None,
                   help="candidate-evaluation threads "
                        "(default: NADV_THREADS or 1)")


def _search_config(args) -> search.SearchConfig:
    return search.SearchConfig(
        delta_r=args.dr, n_samples=args.n_samples, b_limit=args.b,
        r_init=args.r_init, max_annuli=args.max_annuli, seed=args.seed,
        threads=search.resolve_threads(args.threads))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nadv",
                     description="Natural adversarial examples via "
                                 "latent-space search.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate or ingest a dataset")
    p.add_argument("shape", choices=["swiss-roll", "blobs", "idx"])
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--centers", type=int, default=3,
                   help="blob count (blobs only)")
    p.add_argument("--images", help="IDX image file (idx only)")
    p.add_argument("--labels", help="IDX label file (idx only)")
    p.add_argument("--downsample", type=int, default=None, metavar="FACTOR",
                   help="block-mean pool ingested images by FACTOR")
    p.add_argument("--pad-to", type=int, default=None,
                   help="pad images to this square size before pooling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-gan", help="train the generator/critic pair")
    p.add_argument("--data", required=True)
    p.add_argument("--latent-dim", type=int, required=True)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--gp-weight", type=float, default=10.0)
    p.add_argument("--critic-iters", type=int, default=5)
    p.add_argument("--gen-hidden", type=_dims, default=(64, 64, 64))
    p.add_argument("--critic-hidden", type=_dims, default=(64, 64, 64))
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-inverter", help="train the latent inverter")
    p.add_argument("--gan", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1,
                   help="divergence-term weight (default 0.1)")
    p.add_argument("--recon-norm", choices=inverter.RECON_NORMS,
                   default="l2")
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--hidden", type=_dims, default=(64, 64, 64))
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-clf", help="train a target classifier")
    p.add_argument("family", choices=["mlp", "forest"])
    p.add_argument("--data", required=True, help="labeled dataset checkpoint")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--hidden", type=_dims, default=(64,),
                   help="mlp hidden sizes")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--holdout", type=float, default=0.0,
                   help="held-out fraction for accuracy reporting")
    p.add_argument("--trees", type=int, default=5)
    p.add_argument("--max-depth", type=int, default=8)
    p.add_argument("--feature-subsample", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attack", help="search for a natural adversary")
    p.add_argument("--gan", required=True)
    p.add_argument("--inverter", required=True)
    p.add_argument("--classifier", required=True,
                   help="file:PATH or exec:\"COMMAND\"")
    p.add_argument("--num-classes", type=int, default=None,
                   help="class count of an exec: classifier")
    p.add_argument("--timeout", type=float, default=30.0,
                   help="per-batch reply timeout for exec: classifiers")
    p.add_argument("--input", required=True, help="dataset.nadv:INDEX")
    p.add_argument("--algo", choices=["iterative", "hybrid"],
                   default="hybrid")
    _add_search_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None,
                   help="write a per-iteration JSONL trace here")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fgsm", help="signed-gradient baseline (mlp only)")
    p.add_argument("--classifier", required=True, help="file:PATH of an mlp")
    p.add_argument("--input", required=True, help="dataset.nadv:INDEX")
    p.add_argument("--epsilon", type=float, required=True,
                   help="perturbation size (no default on purpose)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate",
                       help="delta_z statistics for a classifier group")
    p.add_argument("--gan", required=True)
    p.add_argument("--inverter", required=True)
    p.add_argument("--classifiers", required=True,
                   help="comma-separated classifier checkpoint paths")
    p.add_argument("--instances", required=True,
                   help="labeled dataset checkpoint")
    p.add_argument("--attack-count", type=int, default=None,
                   help="attack only the first K instances")
    p.add_argument("--algo", choices=["iterative", "hybrid"],
                   default="hybrid")
    _add_search_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-dir", required=True)
    return parser


def _cmd_gen_data(args) -> int:
    if args.shape == "swiss-roll":
        ds = gen_swiss_roll(args.n, noise_sigma=args.noise, seed=args.seed)
    elif args.shape == "blobs":
        ds = gen_blobs(args.n, centers=args.centers, sigma=args.noise,
                       seed=args.seed)
    else:
        if args.images is None:
            raise DimensionError("gen-data idx requires --images")
        ds = load_idx(args.images, args.labels)
        if args.downsample is not None:
            side = int(round(np.sqrt(ds.dim)))
            if side * side != ds.dim:
                raise DimensionError(
                    f"--downsample expects square images, rows have "
                    f"{ds.dim} pixels"
                )
            x = downsample(ds.x, side, side, args.downsample,
                           pad_to=args.pad_to)
            m = x.shape[1]
            ds = Dataset(x, np.full(m, ds.norm_lo[0]),
                         np.full(m, ds.norm_hi[0]), y=ds.y,
                         provenance=ds.provenance
                         + f"|pooled(factor={args.downsample},"
                           f"pad_to={args.pad_to})")
    checkpoint.save_checkpoint(ds, args.out)
    print(f"wrote {args.out}: {ds.n} x {ds.dim} ({ds.provenance})")
    return 0


def _cmd_train_gan(args) -> int:
    ds = _load_as(args.data, ("dataset",), "a dataset")
    spec = gan.GanSpec(latent_dim=args.latent_dim, data_dim=ds.dim,
                       gen_hidden=args.gen_hidden,
                       critic_hidden=args.critic_hidden)
    cfg = gan.GanTrainConfig(steps=args.steps, batch_size=args.batch,
                             critic_iters=args.critic_iters,
                             gp_weight=args.gp_weight, lr=args.lr,
                             seed=args.seed)
    model, history = gan.train_wgan(ds.x, spec, cfg)
    checkpoint.save_checkpoint(model, args.out)
    print(f"wrote {args.out}: latent_dim={model.latent_dim} "
          f"data_dim={model.data_dim} "
          f"final critic loss {history[-1][0]:.6f}")
    return 0


def _cmd_train_inverter(args) -> int:
    gan_model = _load_as(args.gan, ("gan",), "a gan")
    ds = _load_as(args.data, ("dataset",), "a dataset")
    cfg = inverter.InverterTrainConfig(
        steps=args.steps, batch_size=args.batch, lam=args.lam,
        recon_norm=args.recon_norm, hidden=args.hidden, lr=args.lr,
        seed=args.seed)
    model, history = inverter.train_inverter(gan_model, ds.x, cfg)
    checkpoint.save_checkpoint(model, args.out)
    print(f"wrote {args.out}: final loss {history[-1][0]:.6f} "
          f"(recon {history[-1][1]:.6f}, div {history[-1][2]:.6f})")
    return 0


def _cmd_train_clf(args) -> int:
    ds = _load_as(args.data, ("dataset",), "a dataset")
    if ds.y is None:
        raise DimensionError(f"{args.data} has no labels")
    if args.family == "mlp":
        cfg = classify.MlpTrainConfig(
            hidden=args.hidden, steps=args.steps, batch_size=args.batch,
            lr=args.lr, holdout_fraction=args.holdout, seed=args.seed)
        handle, acc = classify.train_mlp_classifier(
            ds.x, ds.y, cfg, num_classes=args.num_classes)
        suffix = "" if acc is None else f", held-out accuracy {acc:.4f}"
        checkpoint.save_checkpoint(handle.model, args.out)
        print(f"wrote {args.out}: mlp hidden={args.hidden}{suffix}")
    else:
        handle = classify.train_forest(
            ds.x, ds.y, num_trees=args.trees, max_depth=args.max_depth,
            feature_subsample=args.feature_subsample, seed=args.seed,
            num_classes=args.num_classes)
        checkpoint.save_checkpoint(handle.model, args.out)
        print(f"wrote {args.out}: forest with {args.trees} trees")
    return 0


def _cmd_attack(args) -> int:
    gan_model = _load_as(args.gan, ("gan",), "a gan")
    inv = _load_as(args.inverter, ("inverter",), "an inverter")
    inverter.check_pair(gan_model, inv)
    ds, index, x = _load_instance(args.input)
    if ds.dim != gan_model.data_dim:
        raise DimensionError(
            f"dataset rows are {ds.dim}-dim but the generator produces "
            f"{gan_model.data_dim}-dim instances"
        )
    cfg = _search_config(args)
    handle = _open_classifier(args.classifier, gan_model.data_dim,
                              args.num_classes, args.timeout)
    try:
        predicate = search.make_flip_predicate(handle, x)
        run = (search.hybrid_search if args.algo == "hybrid"
               else search.iterative_search)
        result = run(gan_model, inv, predicate, x, cfg)
    finally:
        handle.close()
    if args.trace:
        search.write_trace(result, args.trace)
    _write_json({
        "input": {"dataset": args.input, "index": index,
                  "label": predicate.orig_label},
        "algo": result.algo,
        "config": cfg.as_dict(),
        "delta_z": result.delta_z,
        "y_star": result.y_star,
        "z_prime": result.z_prime.tolist(),
        "z_star": result.z_star.tolist(),
        "x_star": result.x_star.tolist(),
        "x_star_raw": ds.denormalize(result.x_star).tolist(),
        "generator_evals": result.generator_evals,
        "classifier_queries": result.classifier_queries,
        "annuli_visited": result.annuli_visited,
    }, args.out)
    print(f"adversary found: label {predicate.orig_label} -> "
          f"{result.y_star}, delta_z {result.delta_z:.6f} "
          f"({result.generator_evals} generator evals)")
    return 0


def _cmd_fgsm(args) -> int:
    scheme, _, rest = args.classifier.partition(":")
    if scheme != "file":
        raise DimensionError(
            "fgsm needs gradient access, so only file: classifiers work"
        )
    handle = classify.handle_for(
        _load_as(rest, ("mlp", "forest"), "a classifier"))
    ds, index, x = _load_instance(args.input)
    orig = int(classify.query(handle, x[None, :])[0])
    adv = classify.fgsm(handle, x, args.epsilon)
    new = int(classify.query(handle, adv[None, :])[0])
    _write_json({
        "input": {"dataset": args.input, "index": index, "label": orig},
        "epsilon": args.epsilon,
        "adv_label": new,
        "flipped": new != orig,
        "linf": float(np.max(np.abs(adv - x))),
        "x_adv": adv.tolist(),
        "x_adv_raw": ds.denormalize(adv).tolist(),
    }, args.out)
    print(f"fgsm: label {orig} -> {new} at epsilon {args.epsilon}")
    return 0


def _cmd_evaluate(args) -> int:
    gan_model = _load_as(args.gan, ("gan",), "a gan")
    inv = _load_as(args.inverter, ("inverter",), "an inverter")
    inverter.check_pair(gan_model, inv)
    ds = _load_as(args.instances, ("dataset",), "a dataset")
    if ds.y is None:
        raise DimensionError(f"{args.instances} has no labels")
    paths = [p for p in args.classifiers.split(",") if p]
    if not paths:
        raise DimensionError("--classifiers lists no paths")
    cfg = _search_config(args)
    n_attack = ds.n if args.attack_count is None else args.attack_count
    if not 1 <= n_attack <= ds.n:
        raise DimensionError(
            f"--attack-count must lie in [1, {ds.n}], got {n_attack}"
        )

    handles: dict[str, classify.ClassifierHandle] = {}
    for path in paths:
        handle = classify.handle_for(
            _load_as(path, ("mlp", "forest"), "a classifier"))
        if handle.input_dim != ds.dim:
            raise DimensionError(
                f"{path} expects {handle.input_dim}-dim instances, dataset "
                f"rows are {ds.dim}-dim"
            )
        handles[path] = handle

    per_clf = {path: attack_instances(gan_model, inv, handle,
                                      ds.x[:n_attack], cfg, algo=args.algo)
               for path, handle in handles.items()}
    table = delta_z_stats(per_clf)
    records = []
    accuracies = []
    for path, row in zip(paths, table.rows):
        acc = classify.accuracy(handles[path], ds.x, ds.y)
        accuracies.append(acc)
        deltas = [None if r is None else r.delta_z for r in per_clf[path]]
        records.append(RobustnessRecord(
            os.path.basename(path), checkpoint.peek_kind(path), acc,
            deltas, row.avg_delta_z, row.p_largest, row.win_count,
            row.exhaustion_count))
    rho = rank_correlation(accuracies, [r.avg_delta_z for r in records])
    written = emit_report(records, args.report_dir, rho)
    print("wrote " + ", ".join(written))
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-gan": _cmd_train_gan,
    "train-inverter": _cmd_train_inverter,
    "train-clf": _cmd_train_clf,
    "attack": _cmd_attack,
    "fgsm": _cmd_fgsm,
    "evaluate": _cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NadvError as e:
        print(f"nadv: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"nadv: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
