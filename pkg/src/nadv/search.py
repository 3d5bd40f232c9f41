"""Latent-space searches for natural adversaries.

Both searches start from z' = I(x) and draw candidate latent codes at
controlled distances from it, decode them through the generator, and ask
the target classifier for labels only. They differ in how the search radius
moves:

  iterative_search  walks annuli (0, dr], (dr, 2dr], ... outward and stops
                    at the first annulus containing a hit.
  hybrid_search     starts from a wide interval (0, r_init], bisects its
                    lower edge upward on misses and collapses the upper
                    bound onto each hit, then walks the upper bound down in
                    dr steps until b_limit consecutive misses.

Either way the reported adversary is the hit closest to z' in the final
batch, and its latent distance delta_z upper-bounds the optimum.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import json
import os

import numpy as np

from .classify import ClassifierHandle, query
from .errors import ExhaustionError, IntervalError
from .gan import GanModel
from .inverter import InverterModel, invert

DEFAULT_THREADS_ENV = "NADV_THREADS"


@dataclass
class SearchConfig:
    delta_r: float = 0.01
    n_samples: int = 5000
    b_limit: int = 5          # consecutive-miss budget of the descend phase
    r_init: float = 5.0       # initial upper bound of hybrid_search
    max_annuli: int = 1000
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.delta_r <= 0:
            raise IntervalError(f"delta_r must be > 0, got {self.delta_r}")
        if self.n_samples < 1:
            raise IntervalError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.b_limit < 1:
            raise IntervalError(f"b_limit must be >= 1, got {self.b_limit}")
        if self.r_init <= self.delta_r:
            raise IntervalError(
                f"r_init must exceed delta_r, got r_init={self.r_init} "
                f"delta_r={self.delta_r}"
            )
        if self.max_annuli < 1:
            raise IntervalError(f"max_annuli must be >= 1, got {self.max_annuli}")
        if self.threads < 1:
            raise IntervalError(f"threads must be >= 1, got {self.threads}")

    def as_dict(self) -> dict:
        return {"delta_r": self.delta_r, "n_samples": self.n_samples,
                "b_limit": self.b_limit, "r_init": self.r_init,
                "max_annuli": self.max_annuli, "seed": self.seed,
                "threads": self.threads}


@dataclass
class AdversaryResult:
    x_star: np.ndarray
    y_star: int | None
    z_star: np.ndarray
    z_prime: np.ndarray
    delta_z: float
    generator_evals: int
    classifier_queries: int
    annuli_visited: int
    algo: str
    config: SearchConfig
    trace: list[dict] = field(default_factory=list)


class FlipPredicate:
    """True for candidates the classifier labels differently than x.

    The original label is captured once at construction, so the predicate
    stays fixed even for stateful targets.
    """

    def __init__(self, handle: ClassifierHandle, x: np.ndarray):
        self.handle = handle
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        self.orig_label = int(query(handle, x)[0])

    def evaluate(self, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        labels = query(self.handle, batch)
        return labels != self.orig_label, labels


def make_flip_predicate(handle: ClassifierHandle, x: np.ndarray) -> FlipPredicate:
    return FlipPredicate(handle, x)


def _evaluate(predicate, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    if hasattr(predicate, "evaluate"):
        mask, labels = predicate.evaluate(batch)
        return np.asarray(mask, dtype=bool), labels
    return np.asarray(predicate(batch), dtype=bool), None


def sample_annulus(z_prime: np.ndarray, l: float, r: float, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """n rows z' + eps with ||eps|| in (l, r]: directions uniform on the
    sphere, norms uniform on the interval."""
    if not 0.0 <= l < r:
        raise IntervalError(f"need 0 <= l < r, got l={l} r={r}")
    if n < 1:
        raise IntervalError(f"n must be >= 1, got {n}")
    z_prime = np.asarray(z_prime, dtype=np.float64).reshape(-1)
    d = z_prime.shape[0]
    dirs = rng.standard_normal((n, d))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs /= np.maximum(norms, 1e-300)
    # uniform draws land in [0, 1), so r - (r-l)*u lands in (l, r]
    radii = r - (r - l) * rng.uniform(size=(n, 1))
    return z_prime + dirs * radii


class _Generate:
    """Batched generator evaluation with optional thread fan-out; chunks
    are merged in index order so results never depend on scheduling."""

    def __init__(self, gan: GanModel, threads: int):
        self.gan = gan
        self.pool = ThreadPoolExecutor(threads) if threads > 1 else None
        self.threads = threads

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.pool is None or z.shape[0] < 2 * self.threads:
            return self.gan.generate(z)
        chunks = np.array_split(z, self.threads)
        return np.vstack(list(self.pool.map(self.gan.generate, chunks)))

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown()


def _closest_hit(z_tilde: np.ndarray, z_prime: np.ndarray,
                 mask: np.ndarray) -> tuple[int, float] | None:
    hits = np.flatnonzero(mask)
    if hits.size == 0:
        return None
    dists = np.linalg.norm(z_tilde[hits] - z_prime, axis=1)
    j = int(hits[np.argmin(dists)])  # ties fall to the lowest sample index
    return j, float(np.linalg.norm(z_tilde[j] - z_prime))


def iterative_search(gan: GanModel, inv: InverterModel, predicate,
                     x: np.ndarray, cfg: SearchConfig) -> AdversaryResult:
    """Expand annuli outward from z' and return the closest hit in the
    first annulus containing any."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z_prime = invert(inv, x)
    rng = np.random.default_rng(cfg.seed)
    generate = _Generate(gan, cfg.threads)
    gen_evals = clf_queries = 0
    trace: list[dict] = []
    try:
        for k in range(cfg.max_annuli):
            l, r = k * cfg.delta_r, (k + 1) * cfg.delta_r
            z_tilde = sample_annulus(z_prime, l, r, cfg.n_samples, rng)
            x_tilde = generate(z_tilde)
            gen_evals += cfg.n_samples
            mask, labels = _evaluate(predicate, x_tilde)
            clf_queries += cfg.n_samples
            found = _closest_hit(z_tilde, z_prime, mask)
            trace.append({"phase": "outward", "l": l, "r": r,
                          "hits": int(mask.sum()),
                          "best_delta_z": None if found is None else found[1],
                          "generator_evals": gen_evals,
                          "classifier_queries": clf_queries})
            if found is not None:
                j, dz = found
                return AdversaryResult(
                    x_star=x_tilde[j],
                    y_star=None if labels is None else int(labels[j]),
                    z_star=z_tilde[j], z_prime=z_prime, delta_z=dz,
                    generator_evals=gen_evals,
                    classifier_queries=clf_queries, annuli_visited=k + 1,
                    algo="iterative", config=cfg, trace=trace)
        raise ExhaustionError(
            f"no adversary within radius "
            f"{cfg.max_annuli * cfg.delta_r:.6g} after {cfg.max_annuli} "
            f"annuli ({gen_evals} generator evals, {clf_queries} "
            f"classifier queries)",
            radius_reached=cfg.max_annuli * cfg.delta_r,
            generator_evals=gen_evals, classifier_queries=clf_queries)
    finally:
        generate.close()


def hybrid_search(gan: GanModel, inv: InverterModel, predicate,
                  x: np.ndarray, cfg: SearchConfig) -> AdversaryResult:
    """Bisection over (0, r_init] to find and tighten a first hit, then a
    downward walk of the upper bound until b_limit consecutive misses."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z_prime = invert(inv, x)
    rng = np.random.default_rng(cfg.seed)
    generate = _Generate(gan, cfg.threads)
    gen_evals = clf_queries = 0
    annuli = 0
    trace: list[dict] = []
    best: tuple[np.ndarray, int | None, np.ndarray, float] | None = None

    def probe(l: float, r: float, phase: str):
        nonlocal gen_evals, clf_queries, annuli, best
        z_tilde = sample_annulus(z_prime, l, r, cfg.n_samples, rng)
        x_tilde = generate(z_tilde)
        gen_evals += cfg.n_samples
        mask, labels = _evaluate(predicate, x_tilde)
        clf_queries += cfg.n_samples
        annuli += 1
        found = _closest_hit(z_tilde, z_prime, mask)
        if found is not None:
            j, dz = found
            best = (x_tilde[j],
                    None if labels is None else int(labels[j]),
                    z_tilde[j], dz)
        trace.append({"phase": phase, "l": l, "r": r,
                      "hits": int(mask.sum()),
                      "best_delta_z": None if found is None else found[1],
                      "generator_evals": gen_evals,
                      "classifier_queries": clf_queries})
        return found

    try:
        l, r = 0.0, cfg.r_init
        while r - l >= cfg.delta_r and annuli < cfg.max_annuli:
            found = probe(l, r, "bisect")
            if found is None:
                l = 0.5 * (l + r)
            else:
                l, r = 0.0, found[1]
        if best is None:
            raise ExhaustionError(
                f"no adversary within radius {cfg.r_init:.6g}; consider a "
                f"larger r_init ({gen_evals} generator evals, "
                f"{clf_queries} classifier queries)",
                radius_reached=cfg.r_init, generator_evals=gen_evals,
                classifier_queries=clf_queries)

        misses = 0
        r = best[3]
        while misses < cfg.b_limit and r > 0.0 and annuli < cfg.max_annuli:
            found = probe(max(0.0, r - cfg.delta_r), r, "descend")
            if found is None:
                misses += 1
                r -= cfg.delta_r
            else:
                misses = 0
                r = found[1]

        x_star, y_star, z_star, dz = best
        return AdversaryResult(
            x_star=x_star, y_star=y_star, z_star=z_star, z_prime=z_prime,
            delta_z=dz, generator_evals=gen_evals,
            classifier_queries=clf_queries, annuli_visited=annuli,
            algo="hybrid", config=cfg, trace=trace)
    finally:
        generate.close()


def write_trace(result: AdversaryResult, path: str) -> None:
    """One JSON object per line: a config record, the per-iteration
    records, then a summary record."""
    with open(path, "w") as f:
        head = {"record": "config", "algo": result.algo}
        head.update(result.config.as_dict())
        f.write(json.dumps(head, sort_keys=True) + "\n")
        for entry in result.trace:
            row = {"record": "iteration"}
            row.update(entry)
            f.write(json.dumps(row, sort_keys=True) + "\n")
        f.write(json.dumps(
            {"record": "summary", "delta_z": result.delta_z,
             "y_star": result.y_star,
             "generator_evals": result.generator_evals,
             "classifier_queries": result.classifier_queries,
             "annuli_visited": result.annuli_visited}, sort_keys=True) + "\n")


def resolve_threads(flag_value: int | None) -> int:
    """--threads flag wins; otherwise the NADV_THREADS variable; else 1."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(DEFAULT_THREADS_ENV)
    if env is None:
        return 1
    try:
        value = int(env)
    except ValueError:
        raise IntervalError(
            f"{DEFAULT_THREADS_ENV} must be an integer, got {env!r}"
        ) from None
    return value
