"""Acceptance gate: eleven numbered criteria, one printed verdict line
each. Heavy shared artifacts (trained generators and inverters) come from
session fixtures in conftest; everything is single-threaded and seeded."""

import json
import shlex
import sys
import time

import numpy as np

from conftest import record_criterion
from nadv import classify, evaluate, gan, inverter, nn, search
from nadv.checkpoint import content_hash, save_checkpoint
from nadv.errors import TransportError, UnsupportedTargetError

from oracles import energy_distance_nd, swiss_roll_curve_distance

REFCLF = f"{shlex.quote(sys.executable)} -m nadv.refclf"


# --------------------------------------------------------- criterion 1


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    rng = np.random.default_rng(0)
    hidden_kinds = ("relu", "tanh", "leaky_relu")
    out_kinds = ("identity", "tanh", "relu", "leaky_relu")
    worst = 0.0
    for i in range(50):
        n_layers = int(rng.integers(2, 5))         # 2..4 layers
        dims = [int(rng.integers(2, 6)) for _ in range(n_layers + 1)]
        net = nn.init_net(dims,
                          hidden_activation=hidden_kinds[i % 3],
                          output_activation=out_kinds[i % 4],
                          rng=rng)
        for layer in net.layers:
            # random biases keep piecewise activations off their exact
            # kinks, where central differences straddle the subgradient
            layer.bias[...] = 0.1 * rng.standard_normal(layer.bias.shape)
        batch = rng.normal(size=(4, dims[0]))
        worst = max(worst, nn.grad_check(net, batch, h=1e-5))
    elapsed = time.time() - t0
    ok = worst < 1e-5 and elapsed < 60.0
    record_criterion(1, "gradient correctness", ok,
                     f"max rel err {worst:.2e} over 50 nets in {elapsed:.1f}s")


# --------------------------------------------------------- criterion 2


def test_criterion_2_penalty_closed_form():
    rng = np.random.default_rng(1)
    worst = 0.0
    for scale in (0.5, 1.0, 2.0):
        w = rng.normal(size=(1, 4))
        w *= scale / np.linalg.norm(w)
        critic = nn.DenseNet([nn.Layer(w, np.zeros(1), "identity")])
        pen = gan.gradient_penalty(critic, rng.normal(size=(32, 4)),
                                   rng.normal(size=(32, 4)),
                                   np.random.default_rng(2))
        worst = max(worst, abs(pen - (scale - 1.0) ** 2))
    ok = worst < 1e-9
    record_criterion(2, "penalty closed form", ok,
                     f"max deviation {worst:.2e} for norms 0.5/1/2")


# --------------------------------------------------------- criterion 3


def test_criterion_3_generative_fidelity(swiss_gan, swiss_train,
                                         swiss_held):
    x, _ = gan.sample(swiss_gan, 1000, seed=11)
    # compare in raw space: generator and held-out set carry their own
    # normalization frames
    x_raw = swiss_train.denormalize(x)
    energy = energy_distance_nd(x_raw, swiss_held.denormalize(swiss_held.x))
    dist = swiss_roll_curve_distance(x_raw)
    frac = float((dist < 0.2).mean())
    ok = energy < 0.05 and frac >= 0.95
    record_criterion(3, "generative fidelity", ok,
                     f"energy {energy:.4f} < 0.05, "
                     f"on-manifold {frac:.3f} >= 0.95")


# --------------------------------------------------------- criterion 4


def test_criterion_4_inversion_fidelity(swiss_gan, swiss_inverter,
                                        swiss_held):
    recon = inverter.reconstruct(swiss_gan, swiss_inverter, swiss_held.x)
    recon_err = float(np.linalg.norm(recon - swiss_held.x, axis=1).mean())
    z = np.random.default_rng(12).standard_normal((1000, 2))
    z_cycle = inverter.invert(swiss_inverter, swiss_gan.generate(z))
    div = float(((z_cycle - z) ** 2).sum(axis=1).mean())
    ok = recon_err < 0.1 and div < 0.5
    record_criterion(4, "inversion fidelity", ok,
                     f"recon {recon_err:.4f} < 0.1, cycle div {div:.4f} < 0.5")


# --------------------------------------------------------- criterion 5


def _plane_problem(seed: int, dim: int = 2, gap_lo: float = 0.1,
                   gap_hi: float = 0.6):
    """Instance x, a unit-normal plane the classifier thresholds on, and
    the exact distance from x to the decision boundary."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 0.5, size=dim)
    w = rng.normal(size=dim)
    w /= np.linalg.norm(w)
    gap = float(rng.uniform(gap_lo, gap_hi))
    c = float(w @ x) + gap

    weight = np.vstack([np.zeros(dim), w])
    bias = np.array([0.0, -c])
    net = nn.DenseNet([nn.Layer(weight, bias, "identity")])
    handle = classify.mlp_handle(classify.MlpClassifier(net, 2))
    return x, handle, gap


def _identity_pair(dim: int = 2):
    g = gan.GanModel(nn.identity_net(dim),
                     nn.init_net([dim, 4, 1], rng=np.random.default_rng(0)))
    inv = inverter.InverterModel(nn.identity_net(dim), content_hash(g))
    return g, inv


def test_criterion_5_search_optimality_bound():
    g, inv = _identity_pair()
    cfg = search.SearchConfig(delta_r=0.01, n_samples=5000)
    below = 0
    within = 0
    for i in range(50):
        x, handle, gap = _plane_problem(seed=100 + i)
        res = search.iterative_search(
            g, inv, search.make_flip_predicate(handle, x), x,
            search.SearchConfig(delta_r=cfg.delta_r,
                                n_samples=cfg.n_samples, seed=i))
        if res.delta_z < gap - 1e-12:
            below += 1
        if res.delta_z <= gap + 2 * cfg.delta_r:
            within += 1
    ok = below == 0 and within >= 49
    record_criterion(5, "search optimality bound", ok,
                     f"0 expected below oracle, got {below}; "
                     f"{within}/50 within oracle+2dr (need >= 49)")


# --------------------------------------------------------- criterion 6


def test_criterion_6_hybrid_efficiency():
    g, inv = _identity_pair()
    ratios = []
    quality_ok = 0
    evals_it_total = evals_hy_total = 0
    for i in range(20):
        # boundary well away from x, the regime the shrinking search is for
        x, handle, gap = _plane_problem(seed=300 + i, gap_lo=0.5,
                                        gap_hi=2.0)
        cfg = search.SearchConfig(delta_r=0.01, n_samples=500, r_init=5.0,
                                  seed=i)
        it = search.iterative_search(
            g, inv, search.make_flip_predicate(handle, x), x, cfg)
        hy = search.hybrid_search(
            g, inv, search.make_flip_predicate(handle, x), x, cfg)
        if abs(hy.delta_z - it.delta_z) <= 0.10 * it.delta_z:
            quality_ok += 1
        evals_it_total += it.generator_evals + it.classifier_queries
        evals_hy_total += hy.generator_evals + hy.classifier_queries
        ratios.append((hy.generator_evals + hy.classifier_queries)
                      / (it.generator_evals + it.classifier_queries))
    ratio = evals_hy_total / evals_it_total
    ok = quality_ok == 20 and ratio <= 0.5
    record_criterion(6, "hybrid efficiency", ok,
                     f"matched quality on {quality_ok}/20, "
                     f"eval ratio {ratio:.3f} <= 0.5 "
                     f"(per-instance worst {max(ratios):.3f})")


# --------------------------------------------------------- criterion 7


def _digit_search_config(seed: int = 0) -> search.SearchConfig:
    return search.SearchConfig(delta_r=0.05, n_samples=1000, b_limit=5,
                               r_init=8.0, max_annuli=400, seed=seed)


def test_criterion_7_robustness_correlation(digit_gan, digit_inverter,
                                            digits_split):
    t0 = time.time()
    train, held = digits_split
    members = []
    for width in (2, 4, 8, 16, 32, 64, 128, 256):
        # trained to convergence so capacity differences express in both
        # accuracy and boundary distance
        cfg = classify.MlpTrainConfig(hidden=(width,), steps=6000,
                                      batch_size=64, seed=width)
        members.append(evaluate.FamilyMember(
            f"mlp{width}", f"hidden={width}",
            lambda x, y, cfg=cfg: classify.train_mlp_classifier(
                x, y, cfg, num_classes=10)[0]))
    # iterative returns the tightest delta_z (criterion 5's bound), which
    # the near-tied wide members need to separate
    records, rho = evaluate.robustness_sweep(
        members, train.x, train.y, held.x, held.y, digit_gan,
        digit_inverter,
        search.SearchConfig(delta_r=0.02, n_samples=2000, b_limit=5,
                            r_init=8.0, max_annuli=400, seed=0),
        algo="iterative", attack_count=50)
    accs = [r.test_accuracy for r in records]
    avgs = [r.avg_delta_z for r in records]
    best = int(np.argmax(accs))
    top_is_top = bool(np.argmax(avgs) == best)
    elapsed = time.time() - t0
    ok = (isinstance(rho, float) and rho >= 0.5 and top_is_top
          and elapsed < 1800)
    detail = (f"rho {rho if isinstance(rho, str) else round(rho, 3)} >= 0.5, "
              f"top-accuracy model has top avg dz: {top_is_top}, "
              f"{elapsed:.0f}s")
    record_criterion(7, "robustness correlation", ok, detail)


# --------------------------------------------------------- criterion 8


def test_criterion_8_forest_vs_mlp_ordering(digit_gan, digit_inverter,
                                            digits_split):
    train, held = digits_split
    mlp_cfg = classify.MlpTrainConfig(hidden=(64,), steps=3000,
                                      batch_size=64, seed=0)
    members = [
        evaluate.FamilyMember(
            "forest5", "trees=5",
            lambda x, y: classify.train_forest(x, y, num_trees=5,
                                               max_depth=8, seed=0,
                                               num_classes=10)),
        evaluate.FamilyMember(
            "mlp64", "hidden=64",
            lambda x, y: classify.train_mlp_classifier(
                x, y, mlp_cfg, num_classes=10)[0]),
    ]
    records, _ = evaluate.robustness_sweep(
        members, train.x, train.y, held.x, held.y, digit_gan,
        digit_inverter, _digit_search_config(seed=1), algo="hybrid",
        attack_count=50)
    hi, lo = ((records[1], records[0])
              if records[1].test_accuracy > records[0].test_accuracy
              else (records[0], records[1]))
    ok = (hi.avg_delta_z > lo.avg_delta_z and hi.p_largest > lo.p_largest)
    record_criterion(
        8, "forest vs mlp ordering", ok,
        f"{hi.classifier_id} acc {hi.test_accuracy:.3f} dz "
        f"{hi.avg_delta_z:.3f} P {hi.p_largest:.2f} vs {lo.classifier_id} "
        f"acc {lo.test_accuracy:.3f} dz {lo.avg_delta_z:.3f} "
        f"P {lo.p_largest:.2f}")


# --------------------------------------------------------- criterion 9


def test_criterion_9_fgsm_baseline(digits_split):
    train, held = digits_split
    cfg = classify.MlpTrainConfig(hidden=(64,), steps=3000, batch_size=64,
                                  seed=0)
    handle, _ = classify.train_mlp_classifier(train.x, train.y, cfg,
                                              num_classes=10)
    x = held.x[:50]
    orig = classify.query(handle, x)
    best_eps, best_rate = None, 0.0
    for eps in (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4):
        adv = classify.fgsm(handle, x, eps)
        rate = float((classify.query(handle, adv) != orig).mean())
        if rate > best_rate:
            best_eps, best_rate = eps, rate

    forest = classify.train_forest(train.x[:300], train.y[:300],
                                   num_trees=2, seed=0, num_classes=10)
    try:
        classify.fgsm(forest, x[:1], 0.1)
        forest_rejected = False
    except UnsupportedTargetError:
        forest_rejected = True

    ok = best_rate >= 0.70 and forest_rejected
    record_criterion(9, "fgsm baseline", ok,
                     f"best flip rate {best_rate:.2f} at eps {best_eps} "
                     f"(need >= 0.70); forest rejected: {forest_rejected}")


# -------------------------------------------------------- criterion 10


def test_criterion_10_blackbox_conformance(tmp_path, swiss_gan,
                                           swiss_inverter, swiss_train):
    from nadv import cli

    ds_path = tmp_path / "swiss.nadv"
    gan_path = tmp_path / "gan.nadv"
    inv_path = tmp_path / "inv.nadv"
    out_path = tmp_path / "adv.json"
    save_checkpoint(swiss_train, str(ds_path))
    save_checkpoint(swiss_gan, str(gan_path))
    save_checkpoint(swiss_inverter, str(inv_path))

    cmd = f"{REFCLF} --threshold 0:0.0 --input-dim 2 --num-classes 2"
    code = cli.main([
        "attack", "--gan", str(gan_path), "--inverter", str(inv_path),
        "--classifier", f"exec:{cmd}", "--num-classes", "2",
        "--input", f"{ds_path}:0", "--algo", "hybrid", "--dr", "0.02",
        "--n-samples", "500", "--r-init", "6.0", "--seed", "0",
        "--out", str(out_path)])
    wire_ok = code == 0 and json.loads(out_path.read_text())["delta_z"] > 0

    # fault injection: peer killed after the handshake
    dying = tmp_path / "dying.py"
    dying.write_text(
        "import json, sys\n"
        "line = sys.stdin.readline()\n"
        "print(json.dumps({'type': 'ready', 'input_dim': 2,"
        " 'num_classes': 2}), flush=True)\n"
        "sys.exit(9)\n")
    t0 = time.time()
    handle = classify.spawn_external(
        f"{shlex.quote(sys.executable)} {shlex.quote(str(dying))}",
        input_dim=2, num_classes=2, timeout=10.0)
    try:
        search.iterative_search(
            swiss_gan, swiss_inverter,
            search.make_flip_predicate(handle, swiss_train.x[0]),
            swiss_train.x[0],
            search.SearchConfig(delta_r=0.05, n_samples=50, seed=0))
        fault_ok = False
    except TransportError:
        fault_ok = time.time() - t0 < 10.0
    finally:
        handle.close()

    ok = wire_ok and fault_ok
    record_criterion(10, "black-box conformance", ok,
                     f"wire attack exit ok: {wire_ok}; killed process "
                     f"raised transport error in time: {fault_ok}")


# -------------------------------------------------------- criterion 11


def test_criterion_11_cli_reproducibility(tmp_path):
    from nadv import cli

    d = tmp_path

    def run(*argv):
        assert cli.main(list(argv)) == 0

    def twice(name, *argv):
        outs = []
        for tag in ("a", "b"):
            out = d / f"{name}_{tag}"
            run(*argv, *(["--report-dir", str(out)] if name == "evaluate"
                         else ["--out", str(out)]))
            if name == "evaluate":
                blob = b"".join((out / f).read_bytes() for f in
                                ("report.csv", "scatter.csv", "summary.txt"))
            else:
                blob = out.read_bytes()
            outs.append(blob)
        return outs[0] == outs[1]

    results = {}
    results["gen-data"] = twice("gen-data", "gen-data", "blobs", "--n",
                                "200", "--noise", "0.08", "--seed", "5")
    data_p = str(d / "gen-data_a")
    results["train-gan"] = twice(
        "train-gan", "train-gan", "--data", data_p, "--latent-dim", "2",
        "--steps", "30", "--batch", "32", "--gen-hidden", "16",
        "--critic-hidden", "16")
    gan_p = str(d / "train-gan_a")
    results["train-inverter"] = twice(
        "train-inverter", "train-inverter", "--gan", gan_p, "--data",
        data_p, "--steps", "40", "--batch", "32", "--hidden", "16")
    inv_p = str(d / "train-inverter_a")
    results["train-clf"] = twice(
        "train-clf", "train-clf", "mlp", "--data", data_p, "--hidden",
        "16", "--steps", "200")
    clf_p = str(d / "train-clf_a")
    results["attack"] = twice(
        "attack", "attack", "--gan", gan_p, "--inverter", inv_p,
        "--classifier", f"file:{clf_p}", "--input", f"{data_p}:0",
        "--dr", "0.05", "--n-samples", "200", "--r-init", "4.0",
        "--seed", "1", "--threads", "1")
    results["fgsm"] = twice(
        "fgsm", "fgsm", "--classifier", f"file:{clf_p}", "--input",
        f"{data_p}:1", "--epsilon", "0.2")
    results["evaluate"] = twice(
        "evaluate", "evaluate", "--gan", gan_p, "--inverter", inv_p,
        "--classifiers", clf_p, "--instances", data_p, "--attack-count",
        "3", "--dr", "0.05", "--n-samples", "100", "--r-init", "4.0",
        "--threads", "1")

    bad = [k for k, v in results.items() if not v]
    ok = not bad
    record_criterion(11, "cli reproducibility", ok,
                     "all 7 subcommands byte-identical" if ok else
                     f"non-identical outputs: {bad}")
