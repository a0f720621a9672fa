"""Cross-domain patch pair mining and the patch contrastive loss.

Mining walks a query-by-key disparity matrix: a query row yields a pair set
when it has at least one candidate below `alpha` (the positive: smallest
disparity, ties to the lowest patch index) and at least `k` candidates
above `beta` (the negatives: a seeded uniform draw without replacement).
Disparities between the thresholds are ignored, so a row can be skipped
entirely.

The contrastive loss scores a query latent against its positive and k
negatives with sim(u, v) = exp(cos(u, v) / tau).  It is computed in the
numerically stable softmax-cross-entropy form

    L = logsumexp(cos/tau over positive and negatives) - cos(q, pos)/tau

which equals -log(sim_pos / (sim_pos + sum sim_neg)) exactly, without
exponential overflow at small tau.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad

GROUND_TRUTH = "GROUND_TRUTH"
PSEUDO = "PSEUDO"


@dataclasses.dataclass(frozen=True)
class PatchRef:
    image_id: str
    patch_index: int


@dataclasses.dataclass(frozen=True)
class PairSet:
    query: PatchRef
    positive: PatchRef
    negatives: tuple
    disparity: float  # query-positive disparity
    label_source: str  # GROUND_TRUTH or PSEUDO

    def __post_init__(self):
        if self.label_source not in (GROUND_TRUTH, PSEUDO):
            raise ValueError(f"bad label source {self.label_source!r}")


@dataclasses.dataclass(frozen=True)
class MinedPair:
    """Index-level mining result within one (query image, key image) pair."""

    query: int
    positive: int
    negatives: tuple
    disparity: float


def mine_pairs(disparities, alpha, beta, k, seed):
    """Mine positive/negative patch pairs from a disparity matrix.

    Rows are query patches, columns key patches.  Returns a list of
    MinedPair; rows lacking a positive candidate or k negative candidates
    are skipped (an empty list is a valid outcome).
    """
    d = np.asarray(disparities, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("disparity matrix must be 2-D")
    if not 0 <= alpha < beta:
        raise ValueError("thresholds must satisfy 0 <= alpha < beta")
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    out = []
    for q in range(d.shape[0]):
        row = d[q]
        pos_cands = np.flatnonzero(row < alpha)
        neg_cands = np.flatnonzero(row > beta)
        if pos_cands.size == 0 or neg_cands.size < k:
            continue
        pos = int(pos_cands[np.argmin(row[pos_cands])])  # argmin tie -> lowest index
        negs = rng.choice(neg_cands, size=k, replace=False)
        out.append(
            MinedPair(
                query=q,
                positive=pos,
                negatives=tuple(int(n) for n in negs),
                disparity=float(row[pos]),
            )
        )
    return out


def to_pair_sets(mined, query_image_id, key_image_id, label_source):
    """Attach image identities to index-level mining results."""
    return [
        PairSet(
            query=PatchRef(query_image_id, m.query),
            positive=PatchRef(key_image_id, m.positive),
            negatives=tuple(PatchRef(key_image_id, n) for n in m.negatives),
            disparity=m.disparity,
            label_source=label_source,
        )
        for m in mined
    ]


def format_pair_line(ps):
    """`query_img,query_patch,pos_img,pos_patch,neg_patches...,disparity,label_source`"""
    fields = [ps.query.image_id, str(ps.query.patch_index)]
    fields += [ps.positive.image_id, str(ps.positive.patch_index)]
    fields += [str(n.patch_index) for n in ps.negatives]
    fields += [f"{ps.disparity:.6f}", ps.label_source]
    return ",".join(fields)


def parse_pair_line(line):
    parts = line.strip().split(",")
    if len(parts) < 7:
        raise ValueError(f"malformed pair line: {line!r}")
    qimg, qpatch, pimg, ppatch = parts[:4]
    negs = parts[4:-2]
    disparity, label_source = parts[-2:]
    return PairSet(
        query=PatchRef(qimg, int(qpatch)),
        positive=PatchRef(pimg, int(ppatch)),
        negatives=tuple(PatchRef(pimg, int(n)) for n in negs),
        disparity=float(disparity),
        label_source=label_source,
    )


def contrastive_loss_batch(queries, keys, pos_idx, neg_idx, tau):
    """Mean contrastive loss node over a batch of mined pairs.

    queries: [m, d] node; keys: [n, d] node; pos_idx: [m] ints into keys;
    neg_idx: [m, k] ints into keys.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    pos = np.asarray(pos_idx, dtype=np.intp)
    negs = np.asarray(neg_idx, dtype=np.intp)
    if negs.ndim != 2 or pos.ndim != 1 or negs.shape[0] != pos.shape[0]:
        raise ValueError("pos_idx must be [m], neg_idx [m, k]")
    m, k = negs.shape
    logits = ad.scale(
        ad.matmul(ad.normalize_rows(queries), ad.transpose(ad.normalize_rows(keys), (1, 0))),
        1.0 / tau,
    )
    cols = np.concatenate([pos[:, None], negs], axis=1).ravel()
    rows = np.repeat(np.arange(m), k + 1)
    sel = ad.reshape(ad.take_pairs(logits, rows, cols), (m, k + 1))
    lse = ad.logsumexp(sel, axis=1)
    pos_logit = ad.take_pairs(logits, np.arange(m), pos)
    return ad.reduce_mean(ad.sub(lse, pos_logit))


def contrastive_loss_node(z_q, z_pos, z_negs, tau):
    """Contrastive loss node for one query vector against 1 + k key vectors."""
    keys = ad.stack([z_pos] + list(z_negs))
    q = ad.reshape(z_q, (1, -1))
    k = len(z_negs)
    return contrastive_loss_batch(q, keys, np.array([0]), np.arange(1, k + 1)[None, :], tau)


def contrastive_loss(z_q, z_pos, z_negs, tau):
    """Evaluate the loss on plain vectors; returns a float."""
    node = contrastive_loss_node(
        ad.const(np.asarray(z_q, dtype=np.float64)),
        ad.const(np.asarray(z_pos, dtype=np.float64)),
        [ad.const(np.asarray(z, dtype=np.float64)) for z in z_negs],
        tau,
    )
    g = ad.Graph(node)
    return float(ad.evaluate(g, {})[g.output.name])
