"""Information-theoretic estimators.

Discrete Chernoff information and KL divergence, a classifier-based plug-in
KL estimator built on the optimal Donsker-Varadhan witness (the point-wise
log-likelihood ratio), mutual information and difference-based conditional
mutual information on top of it, the separability check for learned
features, and the informativeness score of a latent code.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .classifier import ClassifierConfig, train_binary_classifier
from .errors import ConfigurationError, DataError, InsufficientDataError
from .numkit import STREAM_PERMUTE, derive_seed, make_rng

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DiscreteDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ConfigurationError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def support_size(self) -> int:
        return self.probs.size

    @classmethod
    def bernoulli(cls, q: float) -> "DiscreteDistribution":
        return cls(np.array([1.0 - q, q]))


@dataclass(frozen=True)
class ChernoffResult:
    value: float  # nats; math.inf when the supports are disjoint
    u_star: float
    disjoint: bool = False


def _log_bhatt(logp0: np.ndarray, logp1: np.ndarray, u: float) -> float:
    """log sum_x p0^(1-u) p1^u over the shared support."""
    return float(logsumexp((1.0 - u) * logp0 + u * logp1))


def chernoff_information(p0: DiscreteDistribution, p1: DiscreteDistribution, tol: float = 1e-9) -> ChernoffResult:
    """C(P0, P1) = -min_u log sum_x P0(x)^(1-u) P1(x)^u by golden-section search.

    The objective is convex in u, so golden-section search on
    [1e-6, 1 - 1e-6] converges to the global minimizer.
    """
    if p0.support_size != p1.support_size:
        raise ConfigurationError("distributions must share a support size")
    a, b = p0.probs, p1.probs
    if np.array_equal(a, b):
        return ChernoffResult(0.0, 0.5)
    shared = (a > 0) & (b > 0)
    if not shared.any():
        return ChernoffResult(math.inf, math.nan, disjoint=True)
    la, lb = np.log(a[shared]), np.log(b[shared])

    lo, hi = 1e-6, 1.0 - 1e-6
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = _log_bhatt(la, lb, c), _log_bhatt(la, lb, d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = _log_bhatt(la, lb, c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = _log_bhatt(la, lb, d)
    u = 0.5 * (lo + hi)
    return ChernoffResult(max(0.0, -_log_bhatt(la, lb, u)), u)


def kl_discrete(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """KL(p || q) in nats; requires q > 0 wherever p > 0."""
    if p.support_size != q.support_size:
        raise ConfigurationError("distributions must share a support size")
    a, b = p.probs, q.probs
    mask = a > 0
    if np.any(b[mask] == 0):
        raise DataError("KL undefined: q(x) = 0 where p(x) > 0")
    return float(max(0.0, np.sum(a[mask] * (np.log(a[mask]) - np.log(b[mask])))))


# --------------------------------------------------------------------------
# classifier-based estimators


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings for the likelihood-ratio classifier behind every estimate."""

    classifier: ClassifierConfig = field(default_factory=lambda: ClassifierConfig(
        hidden=(64, 32), epochs=200, learning_rate=1e-3, batch_size=128, optimizer="adam"))
    train_fraction: float = 0.7
    clip: float = 1e-6

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("train_fraction must lie in (0, 1)")
        if not 0 < self.clip < 0.5:
            raise ConfigurationError("clip must lie in (0, 0.5)")

    def to_dict(self) -> dict:
        return {"classifier": self.classifier.to_dict(), "train_fraction": self.train_fraction, "clip": self.clip}

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        d = dict(d)
        clf = ClassifierConfig.from_dict(d.pop("classifier", {})) if "classifier" in d else None
        unknown = set(d) - {"train_fraction", "clip"}
        if unknown:
            raise ConfigurationError(f"unknown estimator config keys: {sorted(unknown)}")
        return cls(classifier=clf, **d) if clf is not None else cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class KLEstimate:
    value: float
    n_p: int
    n_q: int
    classifier_accuracy: float
    reliable: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


MIN_RELIABLE = 20


def _holdout(n: int, frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    k = min(max(1, int(round(frac * n))), n - 1) if n > 1 else n
    return np.sort(perm[:k]), np.sort(perm[k:])


def kl_estimate_classifier(samples_p: np.ndarray, samples_q: np.ndarray, cfg: EstimatorConfig | None = None,
                           seed: int = 0) -> KLEstimate:
    """Plug-in estimate of KL(p || q) from samples.

    A classifier is trained to tell p-samples (label 1) from q-samples
    (label 0) on a training share of each side; on the held-out share the
    odds L = gamma / (1 - gamma), with gamma clipped to [clip, 1 - clip],
    give ``mean_p log L - log mean_q L``. The estimate is invariant to the
    class prior, so unequal sample counts need no correction.
    """
    cfg = cfg or EstimatorConfig()
    sp = np.asarray(samples_p, dtype=np.float64)
    sq = np.asarray(samples_q, dtype=np.float64)
    sp = sp.reshape(-1, 1) if sp.ndim == 1 else sp
    sq = sq.reshape(-1, 1) if sq.ndim == 1 else sq
    if sp.shape[1] != sq.shape[1]:
        raise ConfigurationError("sample sets must have the same dimension")
    n, m = sp.shape[0], sq.shape[0]
    if n < 2 or m < 2:
        raise InsufficientDataError("need at least two samples per side")
    reliable = n >= MIN_RELIABLE and m >= MIN_RELIABLE
    if not reliable:
        log.warning("KL estimate from %d/%d samples is unreliable", n, m)

    rng = make_rng(seed, STREAM_PERMUTE)
    tr_p, te_p = _holdout(n, cfg.train_fraction, rng)
    tr_q, te_q = _holdout(m, cfg.train_fraction, rng)
    x_train = np.vstack([sp[tr_p], sq[tr_q]])
    y_train = np.concatenate([np.ones(tr_p.size, np.int64), np.zeros(tr_q.size, np.int64)])
    if np.ptp(x_train, axis=0).max(initial=0.0) == 0.0:
        # both sides constant and identical: nothing to separate
        return KLEstimate(0.0, n, m, 0.5, reliable)
    clf = train_binary_classifier(x_train, y_train, cfg.classifier, seed=derive_seed(seed, 1))

    bound = math.log((1.0 - cfg.clip) / cfg.clip)
    lp = np.clip(clf.logits(sp[te_p]), -bound, bound)
    lq = np.clip(clf.logits(sq[te_q]), -bound, bound)
    value = float(lp.mean() - (logsumexp(lq) - math.log(lq.size)))
    acc = float((np.sum(lp > 0) + np.sum(lq <= 0)) / (lp.size + lq.size))
    return KLEstimate(value, n, m, acc, reliable)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random permutation of range(n) with no fixed points (n >= 2)."""
    perm = rng.permutation(n)
    fixed = np.flatnonzero(perm == np.arange(n))
    if fixed.size > 1:
        perm[fixed] = perm[np.roll(fixed, 1)]
    elif fixed.size == 1 and n > 1:
        i = fixed[0]
        j = (i + 1) % n
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def _as2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def mi_estimate(a: np.ndarray, b: np.ndarray, cfg: EstimatorConfig | None = None, seed: int = 0,
                perm: np.ndarray | None = None) -> KLEstimate:
    """I(A; B) as KL between joint rows and rows with B shuffled."""
    a, b = _as2d(a), _as2d(b)
    if a.shape[0] != b.shape[0]:
        raise ConfigurationError("blocks must have equal row counts")
    if perm is None:
        perm = derangement(a.shape[0], make_rng(seed, STREAM_PERMUTE, 1))
    joint = np.hstack([a, b])
    product = np.hstack([a, b[perm]])
    return kl_estimate_classifier(joint, product, cfg, seed=derive_seed(seed, 2))


@dataclass(frozen=True)
class SampleTriple:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, _as2d(getattr(self, name)))
        if not (self.x.shape[0] == self.y.shape[0] == self.z.shape[0]):
            raise ConfigurationError("x, y and z must have equal row counts")

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class CMIEstimate:
    value: float
    i_x_yz: float
    i_x_z: float
    n: int
    seed: int

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return asdict(self)


MIN_CMI_ROWS = 100


def cmi_estimate_difference(samples: SampleTriple, cfg: EstimatorConfig | None = None, seed: int = 0) -> CMIEstimate:
    """I(X; Y | Z) = I(X; Y, Z) - I(X; Z), each term a classifier MI estimate.

    Both terms shuffle their second block with the same derangement so the
    product samples line up. Small negative values are reported as-is.
    """
    if samples.n < MIN_CMI_ROWS:
        raise InsufficientDataError(f"CMI estimation needs at least {MIN_CMI_ROWS} rows, got {samples.n}")
    perm = derangement(samples.n, make_rng(seed, STREAM_PERMUTE, 1))
    yz = np.hstack([samples.y, samples.z])
    i_xyz = mi_estimate(samples.x, yz, cfg, seed=derive_seed(seed, 3), perm=perm).value
    i_xz = mi_estimate(samples.x, samples.z, cfg, seed=derive_seed(seed, 4), perm=perm).value
    return CMIEstimate(i_xyz - i_xz, i_xyz, i_xz, samples.n, seed)


@dataclass
class SeparabilityResult:
    cmi: float
    tau: float
    improves: bool
    components: dict
    null: list
    n_rows: int
    seed: int
    config_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def separability_check(x: np.ndarray, xprime: np.ndarray, y, p, cfg: EstimatorConfig | None = None, seed: int = 0,
                       n_permutations: int = 20, margin: float = 0.02) -> SeparabilityResult:
    """Test whether new features carry label information beyond the old ones
    within the unprotected group (p = 0).

    Estimates I(X'; Y | X) on the p = 0 rows and compares it with a
    permutation null obtained by shuffling the rows of X'. The threshold is
    the larger of ``margin`` and the null's 95th percentile.
    """
    cfg = cfg or EstimatorConfig()
    x, xprime = _as2d(x), _as2d(xprime)
    y = _as2d(y)
    p = _as2d(p)
    if not (x.shape[0] == xprime.shape[0] == y.shape[0] == p.shape[0]):
        raise ConfigurationError("x, xprime, y and p must have equal row counts")
    rows = np.flatnonzero(np.all(p < 0.5, axis=1))
    if rows.size < MIN_CMI_ROWS:
        raise InsufficientDataError(f"group p=0 has {rows.size} rows; need at least {MIN_CMI_ROWS}")
    xs, xps, ys = x[rows], xprime[rows], y[rows]
    est = cmi_estimate_difference(SampleTriple(xps, ys, xs), cfg, seed)
    null = []
    rng = make_rng(seed, STREAM_PERMUTE, 2)
    for k in range(n_permutations):
        shuffled = xps[rng.permutation(rows.size)]
        null.append(cmi_estimate_difference(SampleTriple(shuffled, ys, xs), cfg, derive_seed(seed, 100 + k)).value)
    tau = max(margin, float(np.percentile(null, 95))) if null else margin
    return SeparabilityResult(est.value, tau, bool(est.value > tau),
                              {"i_xprime_yx": est.i_x_yz, "i_xprime_x": est.i_x_z}, null, int(rows.size), seed,
                              cfg.digest())


MIN_INFORMATIVENESS_ROWS = 500


def informativeness_from_codes(x: np.ndarray, z: np.ndarray, cfg: EstimatorConfig | None = None,
                               seed: int = 0) -> float:
    """``1 - exp(-I(x; z))`` with the MI from the classifier estimator."""
    x, z = _as2d(x), _as2d(z)
    if x.shape[0] < MIN_INFORMATIVENESS_ROWS:
        raise InsufficientDataError(
            f"informativeness needs at least {MIN_INFORMATIVENESS_ROWS} rows, got {x.shape[0]}")
    mi = mi_estimate(x, z, cfg, seed).value
    return float(1.0 - math.exp(-max(mi, 0.0)))


def informativeness_score(model, dataset, cfg: EstimatorConfig | None = None, seed: int = 0) -> float:
    """Informativeness of the model's latent code about the input features."""
    from .model import encode

    z = encode(model, dataset.x, dataset.p)
    return informativeness_from_codes(dataset.x, z, cfg, seed)
