"""Contrastive losses, exact and sampled.

Population losses are computed as exact weighted sums over the finite
sample sets, never by Monte-Carlo. The batch sampler and the empirical
loss are the one intentionally stochastic pair: the sampler draws i.i.d.
positive pairs and splits a permutation of them into positive /
negative-caption / negative-image triples, and the empirical loss averages
the two quadratic negative sums so that its expectation over batches is
exactly the population loss.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.random import default_rng
from scipy.special import logsumexp

from .distributions import InducedDistribution, JointDistribution, NormalizedCooccurrence, _matrix_of
from .errors import InvalidBatchSize, InvalidSpec

ENCODER_SIDES = ("visual", "language", "augmented")


@dataclass(frozen=True)
class EncoderTable:
    """Per-sample feature rows: the tabular realization of an encoder.

    Row x holds f(x) in R^k. The factor-matrix form used by the
    factorization identities scales each row by sqrt of its marginal, see
    :meth:`factor`.
    """

    matrix: np.ndarray
    side: str = "visual"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] < 1:
            raise InvalidSpec("encoder table must be 2-d with k >= 1")
        if not np.all(np.isfinite(m)):
            raise InvalidSpec("encoder entries must be finite")
        if self.side not in ENCODER_SIDES:
            raise InvalidSpec(f"side must be one of {ENCODER_SIDES}")
        frozen = m.copy()
        frozen.setflags(write=False)
        object.__setattr__(self, "matrix", frozen)

    @property
    def num_samples(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def factor(self, marginal) -> np.ndarray:
        """Rows scaled by sqrt(marginal): F(x) = sqrt(p(x)) * f(x)."""
        p = np.asarray(marginal, dtype=float)
        if p.size != self.num_samples or np.any(p < 0.0):
            raise InvalidSpec("marginal must be a non-negative vector matching the table")
        return self.matrix * np.sqrt(p)[:, None]


def _features(f) -> np.ndarray:
    return f.matrix if isinstance(f, EncoderTable) else np.asarray(f, dtype=float)


def sce_loss(f_visual, f_language, joint: JointDistribution) -> float:
    """Symmetric cross entropy loss, exact population value.

    Both directional terms use expectations over the finite sets: the
    denominator of each softmax is a marginal-weighted expectation of
    exponentiated scores, evaluated with a stabilized logsumexp.
    """
    fv, fl = _features(f_visual), _features(f_language)
    p = joint.matrix
    pv, pl = joint.marginal_visual, joint.marginal_language
    scores = fv @ fl.T
    # log E_{l'~P_L} exp(s(v, l')) per visual row, and the transpose direction
    lse_rows = logsumexp(scores, axis=1, b=pl[None, :])
    lse_cols = logsumexp(scores, axis=0, b=pv[:, None])
    to_language = float(np.sum(p * (scores - lse_rows[:, None])))
    to_visual = float(np.sum(p * (scores - lse_cols[None, :])))
    return -(to_language + to_visual)


def scl_loss(f_visual, f_language, joint: JointDistribution) -> float:
    """Multi-modal spectral contrastive loss, exact population value:
    -2 E_pos[f_V.f_L] + E_{independent}[(f_V.f_L)^2]."""
    fv, fl = _features(f_visual), _features(f_language)
    p = joint.matrix
    pv, pl = joint.marginal_visual, joint.marginal_language
    scores = fv @ fl.T
    positive = float(np.sum(p * scores))
    negative = float(pv @ (scores**2) @ pl)
    return -2.0 * positive + negative


def amf_loss(factor_visual, factor_language, normalized) -> float:
    """Squared Frobenius residual of the asymmetric factorization:
    ``|| P_norm - F_V F_L^T ||_F^2``."""
    fv = _features(factor_visual)
    fl = _features(factor_language)
    target = normalized.matrix if isinstance(normalized, NormalizedCooccurrence) else np.asarray(normalized, dtype=float)
    resid = target - fv @ fl.T
    return float(np.sum(resid * resid))


def equivalence_constant(normalized) -> float:
    """Squared Frobenius norm of the normalized co-occurrence matrix: the
    constant separating the factorization residual from the contrastive
    loss. Equals the sum of squared singular values."""
    target = normalized.matrix if isinstance(normalized, NormalizedCooccurrence) else np.asarray(normalized, dtype=float)
    return float(np.sum(target * target))


def uni_scl_loss(f, induced, marginal_visual=None) -> float:
    """Uni-modal spectral contrastive loss against a symmetric joint over
    visual samples: -2 E_{(v,v')~P}[f.f'] + E_{v,v'~P_V x P_V}[(f.f')^2].

    ``marginal_visual`` defaults to the row sums of the induced matrix.
    """
    feats = _features(f)
    m = _matrix_of(induced)
    if isinstance(induced, InducedDistribution) and induced.normalized:
        raise InvalidSpec("uni-modal loss needs a mass-1 induced distribution, not a normalized one")
    if m.shape[0] != m.shape[1]:
        raise InvalidSpec("induced matrix must be square")
    pv = m.sum(axis=1) if marginal_visual is None else np.asarray(marginal_visual, dtype=float)
    scores = feats @ feats.T
    positive = float(np.sum(m * scores))
    negative = float(pv @ (scores**2) @ pv)
    return -2.0 * positive + negative


@dataclass(frozen=True)
class Batch:
    """One draw of the three-way batch sampler.

    ``n`` i.i.d. pairs are drawn from the joint and permuted; each
    consecutive permuted triple contributes one positive pair, one negative
    language sample, and one negative visual sample. Anchor arrays record
    which positive each negative is scored against, so resampling can drop
    entries without losing the pairing. ``extra_pos_*`` hold appended
    weighted positive pairs (empty until a resampling strategy adds some).

    ``n`` stays fixed under resampling; the loss always averages over the
    original n/3 triples, so dropped entries contribute zero instead of
    reweighting the survivors.
    """

    pos_visual: np.ndarray
    pos_language: np.ndarray
    neg_language: np.ndarray
    neg_language_anchor: np.ndarray
    neg_visual: np.ndarray
    neg_visual_anchor: np.ndarray
    permutation: np.ndarray
    n: int
    seed: int | None = None
    extra_pos_visual: np.ndarray = None
    extra_pos_language: np.ndarray = None
    extra_pos_weight: np.ndarray = None

    def __post_init__(self):
        def intarr(name, value):
            a = np.asarray(value if value is not None else [], dtype=int)
            if a.ndim != 1 or (a.size and a.min() < 0):
                raise InvalidSpec(f"{name} must be a 1-d array of non-negative indices")
            object.__setattr__(self, name, a)
            return a

        pv = intarr("pos_visual", self.pos_visual)
        pl = intarr("pos_language", self.pos_language)
        nl = intarr("neg_language", self.neg_language)
        nla = intarr("neg_language_anchor", self.neg_language_anchor)
        nv = intarr("neg_visual", self.neg_visual)
        nva = intarr("neg_visual_anchor", self.neg_visual_anchor)
        ev = intarr("extra_pos_visual", self.extra_pos_visual)
        el = intarr("extra_pos_language", self.extra_pos_language)
        ew = np.asarray(self.extra_pos_weight if self.extra_pos_weight is not None else [], dtype=float)
        if pv.size != pl.size or nl.size != nla.size or nv.size != nva.size:
            raise InvalidSpec("paired batch arrays must have equal lengths")
        if ev.size != el.size or ev.size != ew.size or (ew.size and ew.min() < 0.0):
            raise InvalidSpec("extra positives need matching indices and non-negative weights")
        if self.n <= 0 or self.n % 3 != 0:
            raise InvalidBatchSize(f"batch size must be a positive multiple of 3, got {self.n}")
        if max(pv.size, nl.size, nv.size) > self.n // 3:
            raise InvalidSpec("batch lists cannot exceed the n/3 sampled triples")
        object.__setattr__(self, "extra_pos_weight", ew)
        object.__setattr__(self, "permutation", np.asarray(self.permutation, dtype=int))

    @property
    def num_positives(self) -> int:
        return self.pos_visual.size

    @property
    def num_negatives(self) -> int:
        return self.neg_language.size + self.neg_visual.size


def sample_batch(joint: JointDistribution, n: int, seed=None, permutation=None) -> Batch:
    """Draw ``n`` i.i.d. pairs from the joint, permute, and slice into
    positives / negative-language / negative-visual triples.

    1-based draw i of triple j is: positive pair from permuted slot 3j-2,
    negative language from 3j-1, negative visual from 3j. ``permutation``
    can be forced for tests; by default it is drawn from the same seeded
    generator as the pairs.
    """
    if n <= 0 or n % 3 != 0:
        raise InvalidBatchSize(f"batch size must be a positive multiple of 3, got {n}")
    rng = default_rng(seed)
    nl = joint.num_language
    cells = rng.choice(joint.matrix.size, size=n, p=joint.matrix.ravel())
    v, l = cells // nl, cells % nl
    if permutation is None:
        perm = rng.permutation(n)
    else:
        perm = np.asarray(permutation, dtype=int)
        if not np.array_equal(np.sort(perm), np.arange(n)):
            raise InvalidSpec("permutation must be a rearrangement of range(n)")
    triples = perm.reshape(n // 3, 3)
    pos, negl, negv = triples[:, 0], triples[:, 1], triples[:, 2]
    return Batch(
        pos_visual=v[pos], pos_language=l[pos],
        neg_language=l[negl], neg_language_anchor=v[pos],
        neg_visual=v[negv], neg_visual_anchor=l[pos],
        permutation=perm, n=n,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
    )


def empirical_scl(f_visual, f_language, batch: Batch) -> float:
    """Sampled spectral contrastive loss on one batch.

    The positive term is -2 times the mean positive score; the two
    quadratic negative sums are averaged (weight 1/2 each) so that the
    expectation over batches equals ``scl_loss`` exactly. All three terms
    divide by the original triple count n/3, never by the current list
    sizes, so entries removed by a resampling strategy contribute zero.
    Appended extra positives contribute their own weighted
    -2 * mean(score) term.
    """
    loss, _, _ = empirical_scl_grad(f_visual, f_language, batch)
    return loss


def empirical_scl_grad(f_visual, f_language, batch: Batch):
    """Value and analytic gradients of :func:`empirical_scl` with respect
    to both feature tables. Returns (loss, grad_visual, grad_language)."""
    fv, fl = _features(f_visual), _features(f_language)
    gv, gl = np.zeros_like(fv), np.zeros_like(fl)
    loss = 0.0

    triples = batch.n // 3
    if batch.num_positives:
        s = np.sum(fv[batch.pos_visual] * fl[batch.pos_language], axis=1)
        loss += -2.0 * float(s.sum()) / triples
        np.add.at(gv, batch.pos_visual, (-2.0 / triples) * fl[batch.pos_language])
        np.add.at(gl, batch.pos_language, (-2.0 / triples) * fv[batch.pos_visual])

    for anchors, negs, grad_anchor, grad_neg, f_anchor, f_neg in (
        (batch.neg_language_anchor, batch.neg_language, gv, gl, fv, fl),
        (batch.neg_visual_anchor, batch.neg_visual, gl, gv, fl, fv),
    ):
        if not negs.size:
            continue
        s = np.sum(f_anchor[anchors] * f_neg[negs], axis=1)
        loss += 0.5 * float(np.sum(s**2)) / triples
        coef = (s / triples)[:, None]
        np.add.at(grad_anchor, anchors, coef * f_neg[negs])
        np.add.at(grad_neg, negs, coef * f_anchor[anchors])

    extra = batch.extra_pos_visual.size
    if extra:
        s = np.sum(fv[batch.extra_pos_visual] * fl[batch.extra_pos_language], axis=1)
        w = batch.extra_pos_weight
        loss += -2.0 * float(np.sum(w * s)) / extra
        coef = (-2.0 * w / extra)[:, None]
        np.add.at(gv, batch.extra_pos_visual, coef * fl[batch.extra_pos_language])
        np.add.at(gl, batch.extra_pos_language, coef * fv[batch.extra_pos_visual])

    return loss, gv, gl


def scl_grad(f_visual, f_language, joint: JointDistribution):
    """Analytic gradients of :func:`scl_loss` with respect to both feature
    tables. Returns (loss, grad_visual, grad_language)."""
    fv, fl = _features(f_visual), _features(f_language)
    p = joint.matrix
    pv, pl = joint.marginal_visual, joint.marginal_language
    scores = fv @ fl.T
    loss = -2.0 * float(np.sum(p * scores)) + float(pv @ (scores**2) @ pl)
    weighted = pv[:, None] * scores * pl[None, :]
    gv = -2.0 * (p @ fl) + 2.0 * (weighted @ fl)
    gl = -2.0 * (p.T @ fv) + 2.0 * (weighted.T @ fv)
    return loss, gv, gl


def uni_scl_grad(f, induced, marginal_visual=None):
    """Analytic gradient of :func:`uni_scl_loss` for a shared feature
    table. Returns (loss, grad)."""
    feats = _features(f)
    m = _matrix_of(induced)
    pv = m.sum(axis=1) if marginal_visual is None else np.asarray(marginal_visual, dtype=float)
    scores = feats @ feats.T
    loss = -2.0 * float(np.sum(m * scores)) + float(pv @ (scores**2) @ pv)
    weighted = pv[:, None] * scores * pv[None, :]
    grad = -4.0 * (m @ feats) + 4.0 * (weighted @ feats)
    return loss, grad


def append_loss_record(path, instance_id: str, loss_name: str, value: float, seed=None) -> None:
    """Append one loss evaluation to a CSV log, writing the header first if
    the file does not exist yet."""
    path = Path(path)
    fresh = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["instance_id", "loss_name", "value", "seed"])
        writer.writerow([instance_id, loss_name, repr(float(value)), "" if seed is None else seed])


__all__ = [
    "EncoderTable", "Batch", "sce_loss", "scl_loss", "amf_loss",
    "equivalence_constant", "uni_scl_loss", "sample_batch", "empirical_scl",
    "empirical_scl_grad", "scl_grad", "uni_scl_grad", "append_loss_record",
]
