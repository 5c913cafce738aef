"""Built-in verification suites: gradient checks, naive-loop oracles, exact invariants.

``run()`` is what ``gtforensics selftest`` executes; the acceptance tests call
the same functions so the two can never drift apart.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import KINDS, CorruptionSpec, corrupt
from .graph_transformer import (
    GraphTransformerConfig,
    classifier_loss,
    forward,
    init_classifier,
    mincut_losses,
)
from .layers import init_block, msa, wrap
from .numerics import Tensor, exact_reductions, finite_diff_check, softmax_rows, tsum
from .patch_graph import PatchGrid, build_knn_adjacency, normalize_adjacency
from .relevancy import AttentionRecord, block_relevance, chain_relevance, explain
from .rng import stream
from .ssl.encoder import ViTEncoderConfig, init_encoder
from .ssl.losses import AugmentedViews, StudentTeacherState, total_loss

log = logging.getLogger(__name__)

ORACLE_TOL = 1e-12
GRAD_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# toy models -----------------------------------------------------------------

TOY_ENCODER = ViTEncoderConfig(image_size=4, patch_size=2, channels=3, dim=8, heads=2, depth=2,
                               mlp_dim=8, head_hidden=8, prototypes=6)
TOY_CLASSIFIER = GraphTransformerConfig(in_dim=4, k=3, gcn_layers=2, blocks=2, heads=2, dim=8,
                                        mlp_dim=8, clusters=3)


def _toy_ssl(seed: int = 0):
    rng = stream(seed, "selftest/ssl")
    state = StudentTeacherState.create(TOY_ENCODER, rng, tau_s=0.1, tau_t=0.04)
    # a teacher distinct from the student keeps the targets non-trivial
    state.teacher = {k: v + rng.normal(0.0, 0.05, v.shape) for k, v in state.teacher.items()}
    state.center = rng.normal(0.0, 0.1, TOY_ENCODER.prototypes)
    s = TOY_ENCODER.image_size
    views = AugmentedViews(rng.uniform(0, 1, (2, s, s, 3)), rng.uniform(0, 1, (2, s, s, 3)),
                           np.array([[1.0, 0, 1, 0], [0, 1, 1, 0]]),
                           np.array([[0.0, 1, 0, 1], [1, 1, 0, 0]]))
    return state, views


def _toy_graph(seed: int = 0, batch: int = 2):
    rng = stream(seed, "selftest/graph")
    grid = PatchGrid(3, 3, 1)
    adj = build_knn_adjacency(grid, TOY_CLASSIFIER.k)
    feats = rng.normal(0.0, 1.0, (batch, grid.n, TOY_CLASSIFIER.in_dim))
    params = init_classifier(TOY_CLASSIFIER, rng)
    # larger than the trunc-normal init so every term carries visible gradient
    params = {k: v + rng.normal(0.0, 0.3, v.shape) if v.ndim == 2 else v
              for k, v in params.items()}
    return params, feats, adj, rng.integers(0, 2, batch)


# criterion: gradient correctness -----------------------------------------

def gradcheck_ssl(part: str, seed: int = 0):
    state, views = _toy_ssl(seed)

    def objective(p):
        parts = total_loss(state, views, student=p)
        return {"cls": parts.cls, "mim": parts.mim, "total": parts.total}[part]

    return finite_diff_check(objective, state.student, tolerance=GRAD_TOL)


def gradcheck_composition(seed: int = 0):
    params, feats, adj, _ = _toy_graph(seed)
    probe = stream(seed, "selftest/probe").normal(0.0, 1.0, (feats.shape[0], 2))

    def objective(p):
        res = forward(p, TOY_CLASSIFIER, p["features"], adj)
        return tsum(res.logits * probe) + res.pool.cut_loss + res.pool.ortho_loss

    return finite_diff_check(objective, {**params, "features": feats}, tolerance=GRAD_TOL)


def gradcheck_classifier_loss(seed: int = 0):
    params, feats, adj, labels = _toy_graph(seed)

    def objective(p):
        res = forward(p, TOY_CLASSIFIER, feats, adj)
        return classifier_loss(res.logits, labels, res.pool.cut_loss, res.pool.ortho_loss, 1.0)

    return finite_diff_check(objective, params, tolerance=GRAD_TOL)


def gradient_checks(seed: int = 0) -> list[CheckResult]:
    suites = [("loss_cls", lambda: gradcheck_ssl("cls", seed)),
              ("loss_mim", lambda: gradcheck_ssl("mim", seed)),
              ("total_loss", lambda: gradcheck_ssl("total", seed)),
              ("gcn+mincut+transformer", lambda: gradcheck_composition(seed)),
              ("classifier_loss", lambda: gradcheck_classifier_loss(seed))]
    out = []
    for name, fn in suites:
        t0 = time.perf_counter()
        report = fn()
        out.append(CheckResult(f"gradcheck {name}", report.passed,
                               f"max rel err {report.max_error:.2e} < {GRAD_TOL:g} "
                               f"({time.perf_counter() - t0:.1f}s)"))
    return out


# criterion: naive-loop oracles --------------------------------------------

def _random_adjacency(rng, n: int) -> np.ndarray:
    a = np.triu(rng.random((n, n)) < 0.5, 1)
    return (a | a.T).astype(np.float64)


def oracle_normalize_adjacency(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    deg = [1.0 + sum(a[i, j] for j in range(n)) for i in range(n)]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = (a[i, j] + (1.0 if i == j else 0.0)) / math.sqrt(deg[i] * deg[j])
    return out


def oracle_msa(z: np.ndarray, p: dict, prefix: str, heads: int) -> np.ndarray:
    t, d = z.shape
    dk = d // heads

    def affine(x, w, b):
        return [[sum(x[i, a] * w[a, c] for a in range(x.shape[1])) + (b[c] if b is not None else 0.0)
                 for c in range(w.shape[1])] for i in range(x.shape[0])]

    q = np.array(affine(z, p[f"{prefix}.wq"], p.get(f"{prefix}.bq")))
    k = np.array(affine(z, p[f"{prefix}.wk"], p.get(f"{prefix}.bk")))
    v = np.array(affine(z, p[f"{prefix}.wv"], p.get(f"{prefix}.bv")))
    concat = np.zeros((t, d))
    for h in range(heads):
        cols = range(h * dk, (h + 1) * dk)
        for i in range(t):
            s = [sum(q[i, c] * k[j, c] for c in cols) / math.sqrt(dk) for j in range(t)]
            m = max(s)
            e = [math.exp(x - m) for x in s]
            tot = sum(e)
            for c in cols:
                concat[i, c] = sum(e[j] / tot * v[j, c] for j in range(t))
    return np.array(affine(concat, p[f"{prefix}.wo"], p.get(f"{prefix}.bo")))


def oracle_mincut(s: np.ndarray, a: np.ndarray) -> tuple[float, float]:
    n, kc = s.shape
    at = a + np.eye(n)
    deg = [sum(at[i, j] for j in range(n)) for i in range(n)]
    num = sum(s[i, c] * at[i, j] * s[j, c] for c in range(kc) for i in range(n) for j in range(n))
    den = sum(s[i, c] * deg[i] * s[i, c] for c in range(kc) for i in range(n))
    ss = [[sum(s[i, x] * s[i, y] for i in range(n)) for y in range(kc)] for x in range(kc)]
    fro = math.sqrt(sum(ss[x][y] ** 2 for x in range(kc) for y in range(kc)))
    ortho = math.sqrt(sum((ss[x][y] / fro - (1.0 if x == y else 0.0) / math.sqrt(kc)) ** 2
                          for x in range(kc) for y in range(kc)))
    return -num / den, ortho


def oracle_chain(attention: list[np.ndarray], grads: list[np.ndarray]) -> np.ndarray:
    heads, t, _ = attention[0].shape
    out = None
    for a, g in zip(attention, grads):
        bar = [[sum(g[h, i, j] * a[h, i, j] for h in range(heads)) / heads + (i == j)
                for j in range(t)] for i in range(t)]
        if out is None:
            out = bar
        else:
            out = [[sum(out[i][m] * bar[m][j] for m in range(t)) for j in range(t)]
                   for i in range(t)]
    return np.array(out, dtype=np.float64)


def oracle_checks(trials: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = stream(seed, "selftest/oracles")
    worst = {"normalize_adjacency": 0.0, "msa": 0.0, "mincut": 0.0, "chain_relevance": 0.0}
    for _ in range(trials):
        n = int(rng.integers(1, 7))
        a = _random_adjacency(rng, n)
        worst["normalize_adjacency"] = max(worst["normalize_adjacency"], float(
            np.abs(normalize_adjacency(a) - oracle_normalize_adjacency(a)).max()))

        heads = int(rng.choice([1, 2]))
        d = heads * int(rng.integers(1, 4))
        p = init_block(rng, "b", d, d, bias=bool(rng.integers(0, 2)))
        p = {k: rng.normal(0.0, 1.0, v.shape) for k, v in p.items()}
        z = rng.normal(0.0, 1.0, (n, d))
        got = msa(Tensor(z), wrap(p), "b.attn", heads).data
        worst["msa"] = max(worst["msa"], float(np.abs(got - oracle_msa(z, p, "b.attn", heads)).max()))

        kc = int(rng.integers(1, n + 1))
        s = rng.dirichlet(np.ones(kc), size=n)
        cut, ortho = mincut_losses(Tensor(s), a)
        ocut, oortho = oracle_mincut(s, a)
        worst["mincut"] = max(worst["mincut"], abs(cut.item() - ocut), abs(ortho.item() - oortho))

        blocks, hh, t = int(rng.integers(1, 4)), int(rng.integers(1, 3)), n
        att = [rng.dirichlet(np.ones(t), size=(hh, t)) for _ in range(blocks)]
        grd = [rng.normal(0.0, 1.0, (hh, t, t)) for _ in range(blocks)]
        rec = AttentionRecord(att, grd, np.eye(t), np.zeros(2), 1)
        worst["chain_relevance"] = max(worst["chain_relevance"], float(
            np.abs(chain_relevance(rec) - oracle_chain(att, grd)).max()))
    return [CheckResult(f"oracle {k}", v <= ORACLE_TOL, f"max abs diff {v:.1e} over {trials} trials")
            for k, v in worst.items()]


# criterion: exact permutation invariance --------------------------------

def permutation_check(perms: int = 20, seed: int = 0, n_side: int = 8) -> CheckResult:
    cfg = GraphTransformerConfig()
    rng = stream(seed, "selftest/permutation")
    grid = PatchGrid(n_side, n_side, 1)
    adj = build_knn_adjacency(grid, cfg.k)
    params = init_classifier(cfg, rng)
    params = {k: v + rng.normal(0.0, 0.1, v.shape) for k, v in params.items()}
    feats = rng.normal(0.0, 1.0, (grid.n, cfg.in_dim))
    with exact_reductions():
        base = forward(params, cfg, feats, adj).logits.data.copy()
        bad = 0
        for _ in range(perms):
            p = rng.permutation(grid.n)
            got = forward(params, cfg, feats[p], adj[np.ix_(p, p)]).logits.data
            bad += int(not np.array_equal(got, base))
    return CheckResult("permutation invariance", bad == 0,
                       f"{perms - bad}/{perms} permutations bit-identical (N={grid.n})")


# criterion: relevancy identities ------------------------------------------

def relevancy_identity_checks(seed: int = 0) -> list[CheckResult]:
    params, feats, adj, _ = _toy_graph(seed, batch=1)
    params = dict(params)
    params["head.w"] = np.zeros_like(params["head.w"])
    params["head.b"] = np.zeros_like(params["head.b"])
    rel = explain(params, TOY_CLASSIFIER, feats[0], adj, PatchGrid(3, 3, 1), 1)
    t = rel.chained.shape[0]
    ok_chain = np.array_equal(rel.chained, np.eye(t))
    ok_heat = np.array_equal(rel.heatmap, np.full((3, 3), 0.5))
    a = stream(seed, "selftest/rel").dirichlet(np.ones(4), size=(2, 4))
    rec = AttentionRecord([a], [np.zeros_like(a)], np.eye(4), np.zeros(2), 0)
    ok_bar = np.array_equal(block_relevance(rec, 0), np.eye(4))
    return [CheckResult("zero-gradient model gives C_t = I", ok_chain, f"T={t}"),
            CheckResult("zero-gradient model gives uniform 0.5 heatmap", ok_heat, "3x3 grid"),
            CheckResult("zero attention gradient gives A_bar = I", ok_bar, "exact")]


# lighter invariants ---------------------------------------------------------

def invariant_checks(seed: int = 0) -> list[CheckResult]:
    rng = stream(seed, "selftest/invariants")
    x = rng.normal(0.0, 5.0, (50, 7))
    rows = softmax_rows(Tensor(x)).data.sum(axis=1)
    out = [CheckResult("softmax rows sum to 1", bool(np.abs(rows - 1).max() <= 1e-12),
                       f"max dev {np.abs(rows - 1).max():.1e}")]
    floor, sym = True, True
    for k in (1, 2, 4, 8):
        a = build_knn_adjacency(PatchGrid(8, 8, 1), k)
        floor &= bool(a.sum(axis=1).min() >= 1)
        sym &= bool(np.array_equal(normalize_adjacency(a), normalize_adjacency(a).T))
    out.append(CheckResult("adjacency degree floor and symmetric normalization", floor and sym,
                           "K in {1,2,4,8}"))
    img = rng.uniform(0, 1, (16, 16, 3))
    ident = all(np.array_equal(corrupt(img, CorruptionSpec(k, 0)), img) for k in KINDS)
    out.append(CheckResult("corruption level 0 is the identity", ident, f"{len(KINDS)} kinds"))
    enc = init_encoder(TOY_ENCODER, rng)
    out.append(CheckResult("encoder init is finite", all(np.all(np.isfinite(v)) for v in enc.values()),
                           f"{len(enc)} tensors"))
    return out


SUITES: dict[str, Callable[[], list[CheckResult]]] = {
    "gradients": gradient_checks,
    "oracles": oracle_checks,
    "permutation": lambda: [permutation_check()],
    "relevancy": relevancy_identity_checks,
    "invariants": invariant_checks,
}


def run(suites: list[str] | None = None) -> list[CheckResult]:
    results = []
    for name in suites or list(SUITES):
        for r in SUITES[name]():
            log.info(r.line())
            results.append(r)
    return results
