"""Acceptance harness: one test per criterion, one printed PASS line each.

Criteria 1-6 are property checks with independent in-file oracles.
Criteria 7-10 share a cached set of benchmark training runs (3 seeds,
frozen toy-scale config) and check directional orderings plus bitwise
determinism; expect roughly half an hour total on one desktop core.
"""

import os
import time

import numpy as np
import pytest

from patchcontrast import autodiff as ad
from patchcontrast import data, disparity, evaluation, fda, losses, network, pairing, train

VOID = disparity.VOID


def report(num, ok, detail):
    print(f"\nCRITERION {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------------------
# independent oracles (deliberately naive reimplementations)


def naive_pyramid_disparity(a, b, n_classes):
    """Direct transliteration: per level, per cell, squared histogram gap."""
    total = 0.0
    for level, weight in zip(range(3), (16, 4, 1)):
        cells = 2 ** level
        hs = a.shape[0] // cells
        ws = a.shape[1] // cells
        for r in range(cells):
            for c in range(cells):
                pa = a[r * hs:(r + 1) * hs, c * ws:(c + 1) * ws]
                pb = b[r * hs:(r + 1) * hs, c * ws:(c + 1) * ws]
                ha = _hist(pa, n_classes)
                hb = _hist(pb, n_classes)
                total += weight * float(((ha - hb) ** 2).sum())
    return total


def _hist(patch, n_classes):
    valid = patch[patch != VOID]
    h = np.zeros(n_classes)
    if valid.size == 0:
        return h
    for v in valid:
        h[v] += 1.0
    return h / valid.size


def direct_infonce(q, pos, negs, tau):
    """Eq.-form contrastive loss straight from the definition."""
    def cos(u, v):
        return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))

    sim_p = np.exp(cos(q, pos) / tau)
    sim_n = sum(np.exp(cos(q, n) / tau) for n in negs)
    return -np.log(sim_p / (sim_p + sim_n))


# ---------------------------------------------------------------------------
# criteria 1-6


def test_criterion_1_disparity_oracle_equivalence():
    rng = np.random.default_rng(100)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        a = rng.integers(0, 5, size=(32, 16)).astype(np.uint8)
        b = rng.integers(0, 5, size=(32, 16)).astype(np.uint8)
        a[rng.random(size=a.shape) < 0.1] = VOID
        b[rng.random(size=b.shape) < 0.1] = VOID
        got = disparity.patch_disparity(a, b, 5)
        want = naive_pyramid_disparity(a, b, 5)
        worst = max(worst, abs(got - want))
    elapsed = time.perf_counter() - t0
    report(
        1,
        worst < 1e-9 and elapsed < 10.0,
        f"1000 random 32x16 pairs, max |production - naive| = {worst:.2e} "
        f"(tol 1e-9), {elapsed:.1f}s (budget 10s)",
    )


def test_criterion_2_disparity_bounds_and_anchors():
    a = np.zeros((32, 16), dtype=np.uint8)
    b = np.ones((32, 16), dtype=np.uint8)
    half = np.zeros((32, 16), dtype=np.uint8)
    half[:, 8:] = 1
    d_self = disparity.patch_disparity(a, a, 5)
    d_disjoint = disparity.patch_disparity(a, b, 5)
    d_half = disparity.patch_disparity(a, half, 5)
    ok = (
        d_self == 0.0
        and d_disjoint == 96.0
        and abs(d_half - 40.0) < 1e-12
        and 0.0 <= 3.0 <= 96.0
        and 0.0 <= 70.0 <= 96.0
    )
    report(
        2,
        ok,
        f"D(a,a)={d_self}, disjoint={d_disjoint}, half-split={d_half} "
        f"(want 0/96/40); thresholds alpha=3, beta=70 inside [0, 96]",
    )


def test_criterion_3_contrastive_dual_form_grads_scale():
    rng = np.random.default_rng(200)
    worst_pair = 0.0
    worst_scale = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        d = int(rng.integers(2, 16))
        q = rng.normal(size=d)
        pos = rng.normal(size=d)
        negs = [rng.normal(size=d) for _ in range(k)]
        tau = float(rng.uniform(0.05, 0.5))
        direct = direct_infonce(q, pos, negs, tau)
        prod = pairing.contrastive_loss(q, pos, negs, tau)
        worst_pair = max(worst_pair, abs(direct - prod))
        c = float(rng.uniform(0.1, 10.0))
        scaled = pairing.contrastive_loss(c * q, c * pos, [c * n for n in negs], tau)
        worst_scale = max(worst_scale, abs(scaled - prod))

    worst_grad = 0.0
    for i in range(20):
        qs = ad.leaf("q")
        ks = ad.leaf("k")
        m, k = 3, 4
        g = ad.Graph(
            pairing.contrastive_loss_batch(
                qs, ks,
                pos_idx=[0, 1, 2],
                neg_idx=np.arange(3, 3 + m * k).reshape(m, k) % 8,
                tau=0.07,
            )
        )
        err = ad.grad_check(
            g,
            {"q": rng.normal(size=(m, 6)), "k": rng.normal(size=(8, 6))},
            eps=1e-5,
            seed=i,
        )
        worst_grad = max(worst_grad, err)
    ok = worst_pair < 1e-9 and worst_grad < 1e-4 and worst_scale < 1e-9
    report(
        3,
        ok,
        f"1000 sets: |direct - softmax form| max {worst_pair:.2e} (tol 1e-9); "
        f"grad check max rel err {worst_grad:.2e} (tol 1e-4); "
        f"scale invariance max {worst_scale:.2e} (tol 1e-9)",
    )


def test_criterion_4_loss_suite_grad_checks():
    rng = np.random.default_rng(300)
    t0 = time.perf_counter()
    errs = {}

    labels = rng.integers(0, 5, size=(8, 10)).astype(np.uint8)
    labels[0, :4] = VOID
    pred = ad.softmax(ad.leaf("logits"), axis=0)
    errs["L_sup"] = ad.grad_check(
        ad.Graph(losses.cross_entropy(pred, labels, 5)),
        {"logits": rng.normal(size=(5, 8, 10))},
    )

    pred = ad.softmax(ad.leaf("logits"), axis=0)
    errs["L_ent"] = ad.grad_check(
        ad.Graph(losses.entropy_reg(pred, eta=2.0)),
        {"logits": rng.normal(size=(5, 8, 10))},
    )

    probs_np = rng.dirichlet(np.ones(5), size=(8, 10)).transpose(2, 0, 1)
    pl = losses.pseudo_labels(probs_np)
    pred = ad.softmax(ad.leaf("logits"), axis=0)
    errs["L_self"] = ad.grad_check(
        ad.Graph(losses.cross_entropy(pred, pl, 5)),
        {"logits": rng.normal(size=(5, 8, 10))},
    )

    # Full composite objective on one random toy batch.
    pred_s = ad.softmax(ad.leaf("logits_s"), axis=0)
    pred_u = ad.softmax(ad.leaf("logits_u"), axis=0)
    q = ad.leaf("q")
    kk = ad.leaf("k")
    cont = pairing.contrastive_loss_batch(q, kk, [0, 1], [[2, 3], [4, 5]], tau=0.07)
    total = losses.total_loss(
        {
            "sup_s": losses.cross_entropy(pred_s, labels, 5),
            "ent": losses.entropy_reg(pred_u, eta=2.0),
            "self": losses.cross_entropy(pred_u, pl, 5),
            "cont_gt": cont,
        },
        losses.LossWeights(),
        losses.FULL,
    )
    errs["L_all"] = ad.grad_check(
        ad.Graph(total),
        {
            "logits_s": rng.normal(size=(5, 8, 10)),
            "logits_u": rng.normal(size=(5, 8, 10)),
            "q": rng.normal(size=(2, 6)),
            "k": rng.normal(size=(6, 6)),
        },
    )
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    report(
        4,
        worst < 1e-4 and elapsed < 60.0,
        "grad checks "
        + ", ".join(f"{k}={v:.2e}" for k, v in errs.items())
        + f" (tol 1e-4), {elapsed:.1f}s (budget 60s)",
    )


def test_criterion_5_fda_identities():
    rng = np.random.default_rng(400)
    # low-contrast images keep the [0,1] clamp inactive
    src = 0.3 + 0.4 * rng.random((3, 32, 48))
    tgt = 0.3 + 0.4 * rng.random((3, 32, 48))

    d_zero = np.abs(fda.translate(src, tgt, 0.0) - src).max()
    d_same = np.abs(fda.translate(src, src, 0.2) - src).max()

    spec = fda.dft2(src[0])
    d_round = np.abs(fda.idft2(spec) - src[0]).max()

    out = fda.translate(src, tgt, 0.1)
    worst_phase = 0.0
    for c in range(3):
        so = fda.dft2(out[c])
        ss = fda.dft2(src[c])
        good = (np.abs(so) > 1e-6) & (np.abs(ss) > 1e-6)
        rot = so[good] / np.abs(so[good]) * np.abs(ss[good]) / ss[good]
        worst_phase = max(worst_phase, np.abs(rot - 1.0).max())

    ok = d_zero < 1e-6 and d_same < 1e-6 and d_round < 1e-9 and worst_phase < 1e-6
    report(
        5,
        ok,
        f"ratio0 diff {d_zero:.2e} (<1e-6), same-image diff {d_same:.2e} (<1e-6), "
        f"round trip {d_round:.2e} (<1e-9), phase drift {worst_phase:.2e} (<1e-6)",
    )


def test_criterion_6_entropy_anchors():
    h, w = 6, 7
    one_hot = np.zeros((5, h, w))
    one_hot[2] = 1.0
    uniform = np.full((5, h, w), 0.2)

    got_hot = ad.evaluate(
        ad.Graph(losses.entropy_reg(ad.const(one_hot), eta=2.0)), {}
    )["output"]
    got_uni = ad.evaluate(
        ad.Graph(losses.entropy_reg(ad.const(uniform), eta=2.0)), {}
    )["output"]

    want_hot = (1e-6) ** 2.0
    # entropy of one-hot with the log epsilon is not exactly 0; the anchor
    # tolerance absorbs the 1e-12 perturbation
    ent_u = -5 * 0.2 * np.log(0.2 + 1e-12)
    want_uni = (ent_u ** 2 + 1e-6) ** 2.0
    ok = (
        abs(float(got_hot) - want_hot) < 1e-6
        and abs(float(got_uni) - want_uni) < 1e-6
        and abs(want_uni - 6.7095) < 5e-4
    )
    report(
        6,
        ok,
        f"one-hot penalty {float(got_hot):.3e} (want (1e-6)^2), "
        f"uniform penalty {float(got_uni):.7f} (want ~6.7095 via closed form, tol 1e-6)",
    )


# ---------------------------------------------------------------------------
# criteria 7-10: the benchmark matrix

BENCH_SEEDS = (0, 1, 2)


class _BenchRuns:
    """Memoized two-phase benchmark runs, shared across criteria 7-10.

    One frozen dataset (generator seed 0); the acceptance seeds vary the
    training stochasticity: init, batch order, labeled-target selection,
    mining draws.
    """

    def __init__(self, tmp):
        self.tmp = str(tmp)
        self.pools = data.make_benchmark(200, 100, 50, seed=0)
        self.results = {}
        self.times = {}

    def run(self, variant="full", n_labeled=5, fraction=1.0, seed=0, tag=""):
        key = (variant, n_labeled, fraction, seed, tag)
        if key not in self.results:
            cfg = train.toy_benchmark_config(
                seed=seed, n_labeled=n_labeled, annotation_fraction=fraction
            )
            out = os.path.join(
                self.tmp, f"{variant}_n{n_labeled}_f{fraction}_s{seed}{tag}"
            )
            src, tgt, val = self.pools
            t0 = time.perf_counter()
            _, report = train.run_two_phase(
                cfg, src, tgt, val, out_dir=out, variant=variant
            )
            self.times[key] = time.perf_counter() - t0
            self.results[key] = (report["val_miou"], out)
        return self.results[key]

    def mean(self, **kw):
        return float(np.mean([self.run(seed=s, **kw)[0] for s in BENCH_SEEDS]))

    def spent(self, **kw):
        keys = [
            (
                kw.get("variant", "full"),
                kw.get("n_labeled", 5),
                kw.get("fraction", 1.0),
                s,
                kw.get("tag", ""),
            )
            for s in BENCH_SEEDS
        ]
        return sum(self.times[k] for k in keys)


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    return _BenchRuns(tmp_path_factory.mktemp("bench"))


def test_criterion_7_ablation_ordering(bench):
    m_base = bench.mean(variant="base")
    m_self = bench.mean(variant="base_self")
    m_full = bench.mean(variant="full")
    spent = sum(bench.spent(variant=v) for v in train.VARIANTS)
    ok = (
        m_base < m_self < m_full
        and m_full >= m_base + 0.01
        and spent < 45 * 60
    )
    report(
        7,
        ok,
        f"3-seed means base={m_base:.4f} < base_self={m_self:.4f} < "
        f"full={m_full:.4f}, full-base=+{m_full - m_base:.4f} (need >= 0.01); "
        f"{spent / 60:.1f} min (budget 45)",
    )


def test_criterion_8_ssda_monotonicity(bench):
    means = {n: bench.mean(n_labeled=n) for n in (0, 5, 20)}
    spent = sum(bench.spent(n_labeled=n) for n in (0, 5, 20))
    ok = means[0] <= means[5] <= means[20] and spent < 60 * 60
    report(
        8,
        ok,
        "full-method 3-seed means "
        + " <= ".join(f"N_l={n}: {means[n]:.4f}" for n in (0, 5, 20))
        + f"; {spent / 60:.1f} min (budget 60)",
    )


def test_criterion_9_weak_annotation_retention(bench):
    m_quarter = bench.mean(n_labeled=20, fraction=0.25)
    m_fullann = bench.mean(n_labeled=20)
    m_none = bench.mean(n_labeled=0)
    ok = m_quarter >= m_none and abs(m_fullann - m_quarter) <= 0.02
    report(
        9,
        ok,
        f"N_l=20 at 25% blocks: {m_quarter:.4f} >= N_l=0: {m_none:.4f}; "
        f"|100% - 25%| = {abs(m_fullann - m_quarter):.4f} (<= 0.02)",
    )


def test_criterion_10_determinism(bench):
    identical = True
    for s in BENCH_SEEDS:
        _, first = bench.run(seed=s)
        _, second = bench.run(seed=s, tag="_rerun")
        for name in ("metrics_phase1.csv", "metrics_phase2.csv"):
            with open(os.path.join(first, name), "rb") as f:
                a = f.read()
            with open(os.path.join(second, name), "rb") as f:
                b = f.read()
            identical = identical and a == b
    report(
        10,
        identical,
        "full-run repeats with identical seeds: metrics CSVs byte-identical "
        f"across {len(BENCH_SEEDS)} seeds"
        if identical
        else "metrics CSVs differ between repeats",
    )
