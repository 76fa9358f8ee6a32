"""Evaluation tasks: semantic textual similarity over paragraph pairs, questionnaire
item classification with a linear SVM, psychological-measure correlation, and the
author-level benchmark against externally annotated attitudes. Also hosts the
synthetic-corpus generator used for desk-scale end-to-end tests."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .backends import AdapterParams, EmbeddingBackend, apply_adapter_batch, embed_batch
from .corpus import ParagraphRecord, assign_splits
from .errors import DataError
from .pairing import ThresholdConfig, compute_thresholds, iter_labeled_pairs, title_key
from .scoring import Dictionary, Questionnaire, pm_pseudo_ground_truth, score_corpus
from .stats import mean_and_stderr, pearson, sample_std, spearman
from .wordvec import WordVectorModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricRow:
    name: str
    mean: float
    std_err: float
    n: int


@dataclass
class EvalReport:
    task: str
    metric_rows: list[MetricRow] = field(default_factory=list)

    def row(self, name: str) -> MetricRow:
        for row in self.metric_rows:
            if row.name == name:
                return row
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric_rows": [
                {"name": r.name, "mean": r.mean, "std_err": r.std_err, "n": r.n}
                for r in self.metric_rows
            ],
        }

    def format_table(self) -> str:
        width = max([len(r.name) for r in self.metric_rows] + [6])
        lines = [f"task: {self.task}", f"{'metric'.ljust(width)}  {'mean':>10}  {'stderr':>10}  {'n':>6}"]
        for r in self.metric_rows:
            lines.append(f"{r.name.ljust(width)}  {r.mean:>10.4f}  {r.std_err:>10.4f}  {r.n:>6d}")
        return "\n".join(lines)


@dataclass(frozen=True)
class OfficialRecord:
    """One author with their writings and externally annotated attitude."""

    author_id: str
    writings: tuple[str, ...]
    attitude_ordinal: int | None = None
    support_continuous: float | None = None

    def __post_init__(self):
        if not self.writings:
            raise DataError(f"official {self.author_id!r}: no writings")
        if self.attitude_ordinal is None and self.support_continuous is None:
            raise DataError(f"official {self.author_id!r}: needs an attitude field")
        if self.attitude_ordinal is not None and self.attitude_ordinal not in (-1, 0, 1):
            raise DataError(f"official {self.author_id!r}: attitude_ordinal must be -1, 0, or 1")
        if self.support_continuous is not None and not (0.0 <= self.support_continuous <= 1.0):
            raise DataError(f"official {self.author_id!r}: support_continuous must be in [0, 1]")


def load_officials(path: str | Path) -> list[OfficialRecord]:
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "_meta" in obj:
                continue
            try:
                out.append(
                    OfficialRecord(
                        author_id=obj["author_id"],
                        writings=tuple(obj["writings"]),
                        attitude_ordinal=obj.get("attitude_ordinal"),
                        support_continuous=obj.get("support_continuous"),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed official record: {exc}") from exc
    return out


def _pair_ground_truth(rec_i, rec_j, title_sims) -> float | None:
    if rec_i.title == rec_j.title:
        return 1.0
    return title_sims.get(title_key(rec_i.title, rec_j.title))


def eval_sts(
    records: Sequence[ParagraphRecord],
    pair_source: str,
    rounds: int,
    pairs_per_round: int,
    title_sims: Mapping[tuple[str, str], float],
    backend: EmbeddingBackend,
    adapter: AdapterParams | None = None,
    seed: int = 42,
    thresholds: ThresholdConfig | None = None,
) -> EvalReport:
    """Correlate predicted paragraph similarities against title-similarity pseudo
    ground truth over repeated sampling rounds.

    pair_source "random" draws uniform paragraph pairs (the hard task);
    "threshold" draws from threshold-labeled positive/negative pairs (the easy
    task; sampled with replacement, achieved positive fraction reported). Round r
    uses seed + r, so rounds are independently reproducible.
    """
    if pair_source not in ("random", "threshold"):
        raise DataError(f"unknown pair source {pair_source!r}")
    if len(records) < 2:
        raise DataError("need at least 2 records for pair sampling")
    if rounds < 1 or pairs_per_round < 1:
        raise DataError("rounds and pairs_per_round must be >= 1")

    F = apply_adapter_batch(adapter, embed_batch(backend, [r.text for r in records]))
    norms = np.linalg.norm(F, axis=1)
    if np.any(norms == 0.0):
        raise DataError("zero-norm adapted embedding")
    unit = F / norms[:, None]
    index = {rec.id: k for k, rec in enumerate(records)}

    labeled = None
    if pair_source == "threshold":
        cfg = thresholds or ThresholdConfig()
        delta = compute_thresholds(list(title_sims.values()), cfg)
        labeled = list(iter_labeled_pairs(records, title_sims, delta))
        if not labeled:
            raise DataError("insufficient pairs: no labeled pairs under the thresholds")

    pearsons, spearmans, pos_fractions = [], [], []
    for rnd in range(rounds):
        rng = np.random.default_rng(seed + rnd)
        preds, gts = [], []
        positives = 0
        if pair_source == "random":
            drawn = 0
            attempts = 0
            while drawn < pairs_per_round:
                attempts += 1
                if attempts > pairs_per_round * 100:
                    raise DataError("insufficient pairs: too few with known title similarity")
                i = int(rng.integers(len(records)))
                j = int(rng.integers(len(records) - 1))
                if j >= i:
                    j += 1
                gt = _pair_ground_truth(records[i], records[j], title_sims)
                if gt is None:
                    continue
                preds.append(float(unit[i] @ unit[j]))
                gts.append(gt)
                drawn += 1
        else:
            picks = rng.integers(len(labeled), size=pairs_per_round)
            for p in picks:
                pair = labeled[int(p)]
                i, j = index[pair.id_i], index[pair.id_j]
                preds.append(float(unit[i] @ unit[j]))
                gts.append(pair.title_sim)
                positives += pair.label == "positive"
            pos_fractions.append(positives / pairs_per_round)
        pearsons.append(pearson(preds, gts))
        spearmans.append(spearman(preds, gts))

    task = "sts_easy" if pair_source == "threshold" else "sts_hard"
    rows = [
        MetricRow("pearson", *mean_and_stderr(pearsons), n=rounds),
        MetricRow("spearman", *mean_and_stderr(spearmans), n=rounds),
    ]
    if pos_fractions:
        rows.append(MetricRow("positive_fraction", *mean_and_stderr(pos_fractions), n=rounds))
    return EvalReport(task=task, metric_rows=rows)


def stratified_folds(labels: Sequence[int], k: int, seed: int = 42) -> list[list[int]]:
    """Deterministic stratified k-fold assignment: per class, shuffle then deal
    round-robin, with a rolling start offset that balances fold sizes."""
    if k < 2:
        raise DataError(f"need k >= 2 folds, got {k}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        by_class.setdefault(int(lab), []).append(idx)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for lab in sorted(by_class):
        indices = np.asarray(by_class[lab])
        indices = indices[rng.permutation(len(indices))]
        for pos, idx in enumerate(indices):
            folds[(offset + pos) % k].append(int(idx))
        offset += len(indices)
    return folds


def _train_linear_svm(X: np.ndarray, y: np.ndarray, C: float, epochs: int, seed: int) -> np.ndarray:
    """Binary linear SVM (hinge loss, L2 regularization) by seeded deterministic
    sub-gradient descent on the primal objective. Bias via an appended constant
    feature. Returns the augmented weight vector."""
    n = X.shape[0]
    lam = 1.0 / (C * n)
    w = np.zeros(X.shape[1])
    rng = np.random.default_rng(seed)
    t = 0
    for _epoch in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * float(w @ X[i])
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * y[i] * X[i]
    return w


def eval_qic(
    item_embs: Sequence[np.ndarray],
    labels: Sequence[int],
    k: int = 10,
    seed: int = 42,
    svm_c: float = 1.0,
    svm_epochs: int = 200,
) -> EvalReport:
    """Stratified k-fold questionnaire-item classification with a one-vs-rest
    linear SVM trained by deterministic sub-gradient descent.

    Reports the mean fold accuracy with the fold-accuracy standard deviation in
    the std_err column (matching how the accuracy spread is usually quoted).
    """
    X = np.asarray(item_embs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError(f"item embeddings {X.shape} do not match {y.shape[0]} labels")
    n = X.shape[0]
    classes = sorted(set(int(c) for c in y))
    if len(classes) < 2:
        raise DataError("need at least 2 classes")
    if k > n:
        raise DataError(f"k={k} folds exceed {n} items")
    if k == n:
        raise DataError("k == n leaves nothing to stratify; use k < n")

    folds = stratified_folds(y, k, seed=seed)
    Xa = np.hstack([X, np.ones((n, 1))])  # bias feature
    accuracies = []
    for fold_idx, test_idx in enumerate(folds):
        if not test_idx:
            raise DataError(f"fold {fold_idx} is empty; reduce k")
        test_mask = np.zeros(n, dtype=bool)
        test_mask[test_idx] = True
        X_train, y_train = Xa[~test_mask], y[~test_mask]
        weights = []
        for c, cls in enumerate(classes):
            y_bin = np.where(y_train == cls, 1.0, -1.0)
            weights.append(_train_linear_svm(X_train, y_bin, svm_c, svm_epochs, seed + 1000 * fold_idx + c))
        W = np.vstack(weights)
        preds = np.argmax(Xa[test_mask] @ W.T, axis=1)
        truth = np.asarray([classes.index(int(c)) for c in y[test_mask]])
        accuracies.append(float(np.mean(preds == truth)))
    return EvalReport(
        task="qic",
        metric_rows=[
            MetricRow("accuracy", float(np.mean(accuracies)), sample_std(accuracies), n=k)
        ],
    )


def eval_pm(
    records: Sequence[ParagraphRecord],
    questionnaires: Sequence[Questionnaire],
    dictionaries: Sequence[Dictionary],
    backend: EmbeddingBackend,
    adapter: AdapterParams | None,
    wordvec_model: WordVectorModel,
) -> EvalReport:
    """Per construct, correlate CCR loading scores of paragraphs against the
    dictionary-based pseudo ground truth of their titles. Reports per-construct
    rows, the across-construct mean with its standard error, and a pooled row
    over all (score, ground truth) pairs."""
    dict_by_construct = {d.construct: d for d in dictionaries}
    rows: list[MetricRow] = []
    per_construct_pearson, per_construct_spearman = [], []
    pooled_scores, pooled_gt = [], []
    for questionnaire in questionnaires:
        dictionary = dict_by_construct.get(questionnaire.construct)
        if dictionary is None:
            raise DataError(f"no dictionary for construct {questionnaire.construct!r}")
        scores = [s.score for s in score_corpus(records, questionnaire, backend, adapter)]
        gt_by_title: dict[str, float] = {}
        gt = []
        for rec in records:
            if rec.title not in gt_by_title:
                gt_by_title[rec.title] = pm_pseudo_ground_truth(rec.title, dictionary, wordvec_model)
            gt.append(gt_by_title[rec.title])
        r_p = pearson(scores, gt)
        r_s = spearman(scores, gt)
        per_construct_pearson.append(r_p)
        per_construct_spearman.append(r_s)
        pooled_scores.extend(scores)
        pooled_gt.extend(gt)
        rows.append(MetricRow(f"{questionnaire.construct}.pearson", r_p, 0.0, n=len(records)))
        rows.append(MetricRow(f"{questionnaire.construct}.spearman", r_s, 0.0, n=len(records)))
    rows.append(MetricRow("mean.pearson", *mean_and_stderr(per_construct_pearson), n=len(per_construct_pearson)))
    rows.append(MetricRow("mean.spearman", *mean_and_stderr(per_construct_spearman), n=len(per_construct_spearman)))
    rows.append(MetricRow("pooled.pearson", pearson(pooled_scores, pooled_gt), 0.0, n=len(pooled_scores)))
    rows.append(MetricRow("pooled.spearman", spearman(pooled_scores, pooled_gt), 0.0, n=len(pooled_scores)))
    return EvalReport(task="pm", metric_rows=rows)


def spearman_p_value(rho: float, n: int) -> float:
    """Two-sided p-value for a Spearman coefficient via the t approximation
    t = rho * sqrt((n-2) / (1-rho^2)) with n-2 degrees of freedom."""
    if n < 3:
        return float("nan")
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return float(2.0 * scipy_stats.t.sf(abs(t), df=n - 2))


def benchmark_officials(
    officials: Sequence[OfficialRecord], scores: Mapping[str, float]
) -> EvalReport:
    """Aggregate per-official mean scores over their writings and correlate them
    (Spearman) against the annotated ordinal attitude and continuous support."""
    if not officials:
        raise DataError("no officials")
    means = []
    for off in officials:
        vals = []
        for wid in off.writings:
            if wid not in scores:
                raise DataError(f"official {off.author_id!r}: writing {wid!r} has no score")
            vals.append(scores[wid])
        means.append(math.fsum(vals) / len(vals))

    rows = []
    for field_name in ("attitude_ordinal", "support_continuous"):
        xs, ys = [], []
        for off, mean in zip(officials, means):
            val = getattr(off, field_name)
            if val is not None:
                xs.append(mean)
                ys.append(float(val))
        if not xs:
            continue
        if len(xs) < 2:
            raise DataError(f"need at least 2 officials with {field_name} for correlation, got {len(xs)}")
        rho = spearman(xs, ys)
        rows.append(MetricRow(f"spearman_vs_{field_name}", rho, 0.0, n=len(xs)))
        rows.append(MetricRow(f"p_value_vs_{field_name}", spearman_p_value(rho, len(xs)), 0.0, n=len(xs)))
    if not rows:
        raise DataError("no official has an attitude field")
    return EvalReport(task="benchmark", metric_rows=rows)


def generate_synthetic_corpus(
    n_titles: int,
    paragraphs_per_title: int,
    dim: int,
    noise: float,
    seed: int = 42,
    tokens_per_paragraph: int = 12,
    cluster_spread: float = 0.35,
) -> tuple[list[ParagraphRecord], dict[str, np.ndarray]]:
    """Deterministic planted-structure corpus for desk-scale tests.

    Titles are single tokens whose planted unit vectors form two clusters.
    Paragraph texts share per-title core tokens plus per-paragraph noise tokens
    (fraction `noise`), so bag-of-token hash embeddings give higher intra-title
    than inter-title similarity. Returns the records (with stratified splits
    assigned) and the planted title vectors for oracle checks.
    """
    if n_titles < 2:
        raise DataError(f"need n_titles >= 2, got {n_titles}")
    if not (0.0 <= noise <= 1.0):
        raise DataError(f"noise must be in [0, 1], got {noise}")
    rng = np.random.default_rng(seed)
    c1 = rng.standard_normal(dim)
    c1 /= np.linalg.norm(c1)
    c2 = rng.standard_normal(dim)
    c2 -= (c2 @ c1) * c1
    c2 /= np.linalg.norm(c2)
    half = (n_titles + 1) // 2
    planted: dict[str, np.ndarray] = {}
    titles = []
    for i in range(n_titles):
        center = c1 if i < half else c2
        jitter = rng.standard_normal(dim)
        vec = center + cluster_spread * jitter / np.linalg.norm(jitter)
        planted_vec = vec / np.linalg.norm(vec)
        title = f"topic{i:02d}"
        planted[title] = planted_vec
        titles.append(title)

    n_noise = round(noise * tokens_per_paragraph)
    n_core = tokens_per_paragraph - n_noise
    records = []
    pid = 0
    for i, title in enumerate(titles):
        core = [f"w{i:02d}c{k:02d}" for k in range(n_core)]
        for _ in range(paragraphs_per_title):
            noise_tokens = [f"z{pid:04d}x{j}" for j in range(n_noise)]
            text = " ".join(core + noise_tokens)
            records.append(
                ParagraphRecord(id=f"p{pid:04d}", work_id=f"work{i:02d}", title=title, text=text)
            )
            pid += 1
    records = assign_splits(records, seed=seed, stratify_by_title=True)
    return records, planted


def planted_title_model(
    planted: Mapping[str, np.ndarray], extra_tokens: Mapping[str, np.ndarray] | None = None
) -> WordVectorModel:
    """Wrap planted title vectors (plus optional extra token vectors) as a
    word-vector model, so title embedding returns the planted vectors exactly."""
    tokens = dict(planted)
    if extra_tokens:
        tokens.update(extra_tokens)
    dim = next(iter(tokens.values())).shape[0]
    vocab = {tok: i for i, tok in enumerate(tokens)}
    vectors = np.asarray([tokens[tok] for tok in vocab], dtype=np.float64)
    return WordVectorModel(dim=dim, vocab=vocab, vectors=vectors, metadata={"framework": "loaded"})


def synthetic_core_token_vectors(
    records: Sequence[ParagraphRecord],
    planted: Mapping[str, np.ndarray],
    jitter: float = 0.3,
    seed: int = 42,
) -> dict[str, np.ndarray]:
    """Vectors for the synthetic corpus's core tokens, near their title's planted
    vector; lets dictionary scoring run on synthetic data (noise tokens stay OOV)."""
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    for rec in records:
        for tok in rec.text.split():
            if tok.startswith("w") and tok not in out:
                vec = planted[rec.title] + jitter * rng.standard_normal(planted[rec.title].shape[0])
                out[tok] = vec / np.linalg.norm(vec)
    return out


def write_report(report: EvalReport, path: str | Path, meta: dict | None = None) -> None:
    payload = report.to_dict()
    if meta is not None:
        payload["_meta"] = meta
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
