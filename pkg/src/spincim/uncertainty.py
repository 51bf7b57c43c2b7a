"""Monte Carlo prediction, uncertainty metrics, OOD thresholding and input corruptions."""

from dataclasses import dataclass

import numpy as np

from .dropout import mc_forward
from .errors import DomainError
from .rng import DOMAIN_MC, SeedTree, as_generator
from .tensor import softmax

PROB_FLOOR = 1e-12
CORRUPTIONS = ("gaussian_noise", "uniform_noise", "rotation")


@dataclass
class UncertaintyReport:
    mean_probs: np.ndarray      # (N, C)
    per_pass_probs: np.ndarray  # (T, N, C)
    entropy: np.ndarray         # (N,)
    nll: float = float("nan")
    accuracy: float = float("nan")

    @property
    def prediction(self):
        return self.mean_probs.argmax(axis=1)

    def agreement(self):
        """Fraction of passes whose argmax equals the MC-mean prediction, per sample."""
        votes = self.per_pass_probs.argmax(axis=2)
        return (votes == self.prediction[None, :]).mean(axis=0)

    def records(self, labels=None, ids=None):
        n = self.mean_probs.shape[0]
        ids = range(n) if ids is None else ids
        agree = self.agreement()
        out = []
        for k, i in enumerate(ids):
            rec = {"id": int(i), "label": None if labels is None else int(labels[k]),
                   "prediction": int(self.prediction[k]), "entropy": float(self.entropy[k]),
                   "agreement": float(agree[k])}
            out.append(rec)
        return out


def predictive_entropy(probs):
    """-sum p ln p over the last axis, with 0 ln 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError("probabilities must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def nll(mean_probs, labels):
    p = np.asarray(mean_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    picked = p[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def predict_bayes(model, x, T, rng=None, labels=None, backend="math", batch_size=None):
    """MC-averaged softmax over T stochastic passes.

    ``rng`` is a SeedTree (or an int seed); pass t uses substream (DOMAIN_MC, t).
    A single tree per call keeps every sample in a pass on the same mask draw.
    """
    if T < 1:
        raise DomainError(f"pass count must be at least 1, got {T}")
    tree = rng if isinstance(rng, SeedTree) else SeedTree(0 if rng is None else int(rng))
    tree = tree.child(DOMAIN_MC)
    x = np.asarray(x, dtype=np.float64)
    bs = batch_size or len(x)
    chunks = []
    for s in range(0, len(x), bs):
        xb = x[s:s + bs]
        if backend == "math":
            logits = mc_forward(model, xb, T, tree)
        else:
            logits = [model.forward_pass(xb, tree.child(t), backend=backend) for t in range(T)]
        chunks.append(np.stack([softmax(l) for l in logits]))
    per_pass = np.concatenate(chunks, axis=1)
    mean = per_pass.mean(axis=0)
    rep = UncertaintyReport(mean, per_pass, predictive_entropy(mean))
    if labels is not None:
        labels = np.asarray(labels)
        rep.nll = nll(mean, labels)
        rep.accuracy = float((mean.argmax(axis=1) == labels).mean())
    return rep


@dataclass
class OodResult:
    threshold: float
    detection_rate: float
    score_kind: str = "entropy"

    def __post_init__(self):
        if not 0.0 <= self.detection_rate <= 1.0:
            raise DomainError("detection rate must lie in [0, 1]")


def ood_scores(report, kind="entropy"):
    if kind == "entropy":
        return report.entropy
    if kind == "max_prob":
        # larger means more uncertain, like entropy
        return 1.0 - report.mean_probs.max(axis=1)
    raise DomainError(f"unknown score kind {kind!r}")


def ood_rate(scores_id, scores_ood, quantile=0.95, score_kind="entropy"):
    """Threshold at the in-distribution quantile; count OOD scores strictly above it."""
    a = np.asarray(scores_id, dtype=np.float64)
    b = np.asarray(scores_ood, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise DomainError("both score sets must be nonempty")
    if not 0.0 < quantile < 1.0:
        raise DomainError(f"quantile must lie in (0, 1), got {quantile}")
    thr = float(np.quantile(a, quantile))
    return OodResult(thr, float((b > thr).mean()), score_kind)


def corrupt(x, kind, severity, rng=None, value_range=None):
    """Apply a corruption of a given severity.

    gaussian_noise: additive N(0, severity^2).
    uniform_noise: each entry replaced by U(min, max) with probability severity.
    rotation: images (..., H, W) rotated by severity degrees, bilinear, zero fill.
    """
    if kind not in CORRUPTIONS:
        raise DomainError(f"unknown corruption {kind!r}")
    if severity < 0:
        raise DomainError(f"severity must be nonnegative, got {severity}")
    x = np.asarray(x, dtype=np.float64)
    if severity == 0:
        return x.copy()
    gen = as_generator(rng)
    if kind == "gaussian_noise":
        return x + severity * gen.standard_normal(x.shape)
    if kind == "uniform_noise":
        if severity > 1:
            raise DomainError("uniform_noise severity is a replacement rate in [0, 1]")
        lo, hi = value_range if value_range is not None else (float(x.min()), float(x.max()))
        hit = gen.random(x.shape) < severity
        return np.where(hit, gen.uniform(lo, hi, size=x.shape), x)
    from scipy.ndimage import rotate
    if x.ndim < 2:
        raise DomainError("rotation needs image input (..., H, W)")
    return rotate(x, severity, axes=(-1, -2), reshape=False, order=1, mode="constant", cval=0.0)
