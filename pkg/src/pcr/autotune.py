"""Scan-group selection by gradient cosine similarity under a frozen model.

The desk-scale stand-in for a frozen network is multinomial logistic
regression over downsampled grayscale features: gradients are exact,
cheap, and checkable against finite differences. The tuning schedule
follows a warmup (no tuning, highest fidelity), then re-evaluates every
``tune_interval_epochs``: per group, the gradient over a reduced-fidelity
batch is compared to the full-fidelity gradient, and the smallest group
whose lower confidence bound clears the threshold wins.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import decode
from .errors import ShapeMismatch, ZeroGradient
from .reader import FidelityRequest, assemble, open_record, _record_paths

# Two-sided 95% Student-t quantiles by degrees of freedom (trials - 1).
_T95 = {1: 12.7062, 2: 4.3027, 3: 3.1824, 4: 2.7764, 5: 2.5706,
        6: 2.4469, 7: 2.3646, 8: 2.3060, 9: 2.2622}


@dataclass
class GradModel:
    """Frozen linear softmax classifier over fixed-grid grayscale features."""

    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray     # (n_classes,)
    feature_hw: tuple[int, int] = (32, 32)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, n_classes: int, feature_hw: tuple[int, int] = (32, 32)) -> "GradModel":
        f = feature_hw[0] * feature_hw[1]
        return cls(np.zeros((n_classes, f)), np.zeros(n_classes), feature_hw)

    def featurize(self, jpeg_bytes: bytes) -> np.ndarray:
        return decode.gray_features(jpeg_bytes, self.feature_hw)


def loss_and_grad(model: GradModel, features: np.ndarray,
                  labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy loss and its exact gradient, flattened to one vector."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ShapeMismatch(f"features {x.shape} vs {model.n_features} model features")
    if y.shape != (x.shape[0],) or x.shape[0] == 0:
        raise ShapeMismatch("labels must be a non-empty vector matching the batch")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ShapeMismatch("label out of range")

    logits = x @ model.weights.T + model.bias
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    b = x.shape[0]
    loss = float(-np.log(probs[np.arange(b), y]).mean())
    delta = probs
    delta[np.arange(b), y] -= 1.0
    delta /= b
    d_weights = delta.T @ x
    d_bias = delta.sum(axis=0)
    return loss, np.concatenate([d_weights.ravel(), d_bias])


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroGradient("gradient has zero norm")
    if u is v or np.array_equal(u, v):
        return 1.0  # identical data gives exact similarity, not 1 +/- ulp
    return float(np.dot(u, v) / (nu * nv))


def score(model: GradModel, full_batch: tuple[np.ndarray, np.ndarray],
          reduced_batch: tuple[np.ndarray, np.ndarray]) -> float:
    """Cosine similarity of frozen-model gradients on full vs reduced data."""
    x_full, y_full = full_batch
    x_red, y_red = reduced_batch
    if not np.array_equal(y_full, y_red):
        raise ValueError("batches must carry identical labels in identical order")
    _, g_full = loss_and_grad(model, x_full, y_full)
    _, g_red = loss_and_grad(model, x_red, y_red)
    return cosine(g_full, g_red)


def corpus_labels(path) -> np.ndarray:
    """All labels in a PCR corpus, from record metadata only."""
    labels: list[int] = []
    for p in _record_paths(path):
        prefix = open_record(p, FidelityRequest(0))
        labels.extend(m.label for m in prefix.metas)
    return np.asarray(labels)


@dataclass
class TunePolicy:
    threshold: float = 0.8
    warmup_epochs: int = 5
    tune_interval_epochs: int = 20
    start_group: int | None = None  # default: highest group in the corpus
    batch_budget: int = 2560
    n_trials: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.tune_interval_epochs < 1:
            raise ValueError("tune_interval_epochs must be >= 1")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")


@dataclass
class TuneDecision:
    epoch: int
    group: int
    evaluated: bool
    scores: dict[int, tuple[float, float]] = field(default_factory=dict)


class Tuner:
    """Stateful scan-group tuner over a PCR corpus with a frozen model."""

    def __init__(self, corpus_path, model: GradModel, policy: TunePolicy):
        self.model = model
        self.policy = policy
        self._paths = _record_paths(corpus_path)
        self._catalog: list[tuple[int, int, int]] = []  # (path idx, image idx, label)
        self._n_groups = 0
        for pi, p in enumerate(self._paths):
            prefix = open_record(p, FidelityRequest(0))
            self._n_groups = max(self._n_groups, prefix.index.n_groups)
            for i, meta in enumerate(prefix.metas):
                self._catalog.append((pi, i, meta.label))
        self._feature_cache: dict[tuple[int, int, int], np.ndarray] = {}
        self._prefix_cache: dict[int, object] = {}
        self.last_choice = policy.start_group or self._n_groups
        self.decisions: list[TuneDecision] = []

    @property
    def n_groups(self) -> int:
        return self._n_groups

    def _features(self, path_i: int, image_i: int, g: int) -> np.ndarray:
        key = (path_i, image_i, g)
        feat = self._feature_cache.get(key)
        if feat is None:
            prefix = self._prefix_cache.get(path_i)
            if prefix is None:
                prefix = open_record(self._paths[path_i],
                                     FidelityRequest(self._n_groups))
                self._prefix_cache[path_i] = prefix
            feat = self.model.featurize(assemble(prefix, image_i, g).jpeg_bytes)
            self._feature_cache[key] = feat
        return feat

    def _trial_batch(self, rng: np.random.Generator):
        n = len(self._catalog)
        take = min(self.policy.batch_budget, n)
        idx = rng.choice(n, size=take, replace=self.policy.batch_budget > n)
        labels = np.array([self._catalog[i][2] for i in idx])
        return idx, labels

    def evaluate_scores(self, rng: np.random.Generator) -> dict[int, tuple[float, float]]:
        """Per-group (mean, confidence halfwidth) over the trial budget."""
        per_group: dict[int, list[float]] = {g: [] for g in range(1, self._n_groups + 1)}
        for _ in range(self.policy.n_trials):
            idx, labels = self._trial_batch(rng)
            x_full = np.stack([
                self._features(*self._catalog[i][:2], self._n_groups) for i in idx])
            for g in range(1, self._n_groups + 1):
                if g == self._n_groups:
                    x_red = x_full
                else:
                    x_red = np.stack([
                        self._features(*self._catalog[i][:2], g) for i in idx])
                per_group[g].append(score(self.model, (x_full, labels),
                                          (x_red, labels)))
        out = {}
        t95 = _T95.get(self.policy.n_trials - 1, 1.96)
        for g, vals in per_group.items():
            arr = np.asarray(vals)
            half = 0.0
            if len(arr) > 1:
                half = float(t95 * arr.std(ddof=1) / np.sqrt(len(arr)))
            out[g] = (float(arr.mean()), half)
        return out

    def choose(self, epoch: int) -> int:
        """Scan group for this epoch under the warmup/interval schedule."""
        pol = self.policy
        start = pol.start_group or self._n_groups
        if epoch < pol.warmup_epochs:
            self.decisions.append(TuneDecision(epoch, start, evaluated=False))
            self.last_choice = start
            return start
        if (epoch - pol.warmup_epochs) % pol.tune_interval_epochs != 0:
            self.decisions.append(TuneDecision(epoch, self.last_choice, evaluated=False))
            return self.last_choice
        rng = np.random.default_rng((pol.seed, epoch))
        scores = self.evaluate_scores(rng)
        choice = start
        for g in sorted(scores):
            mean, half = scores[g]
            if mean - half >= pol.threshold:
                choice = g
                break
        self.last_choice = choice
        self.decisions.append(TuneDecision(epoch, choice, evaluated=True, scores=scores))
        return choice


def pretrain(model: GradModel, features: np.ndarray, labels: np.ndarray,
             steps: int = 5, lr: float = 0.01) -> GradModel:
    """A few full-batch gradient steps, to freeze the model 'mid-training'."""
    w = model.weights.copy()
    b = model.bias.copy()
    m = GradModel(w, b, model.feature_hw)
    n_w = w.size
    for _ in range(steps):
        _, g = loss_and_grad(m, features, labels)
        w -= lr * g[:n_w].reshape(w.shape)
        b -= lr * g[n_w:]
    return m


def decisions_to_csv(tuner: Tuner, f) -> None:
    groups = list(range(1, tuner.n_groups + 1))
    w = csv.writer(f)
    w.writerow(["epoch", "group", "evaluated"]
               + [f"score_g{g}" for g in groups])
    for d in tuner.decisions:
        row = [d.epoch, d.group, int(d.evaluated)]
        for g in groups:
            row.append(f"{d.scores[g][0]:.10g}" if g in d.scores else "")
        w.writerow(row)
