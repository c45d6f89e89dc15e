"""Illumination-conditioned skin model.

Training images are grouped by k-means on their global HSV histograms; each
illumination cluster owns a random-forest regressor mapping per-pixel
descriptors to a skin probability. At test time a region is routed to the
forest(s) of its nearest histogram centroid(s).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .pixelfeat import (
    dense_pixel_descriptors,
    descriptor_length,
    global_hsv_histogram,
    nearest_grid_index,
    pixel_descriptors,
)

BANK_MAGIC = "DRIVEHANDS-SKINBANK"
BANK_VERSION = 1


# -- k-means ----------------------------------------------------------------

@dataclass
class KMeansModel:
    centroids: np.ndarray  # (K, D)
    seed: int

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def distances(self, x: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.centroids - np.asarray(x)[None, :], axis=1)

    def assign(self, points) -> np.ndarray:
        return _nearest(np.asarray(points, dtype=np.float64), self.centroids)[0]


@dataclass
class KMeansResult:
    model: KMeansModel
    assignments: np.ndarray
    # distortion (sum of squared distances) after every Lloyd update
    history: list[float]
    n_iter: int


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _nearest(points, centroids):
    d2 = _sq_dists(points, centroids)
    a = np.argmin(d2, axis=1)
    return a, d2[np.arange(len(points)), a]


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # every remaining point duplicates a chosen centre
            nxt = next(i for i in range(n) if i not in chosen)
        chosen.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _repair_empty(points, centroids, assign, d2):
    """Move the point farthest from its centroid into each empty cluster."""
    k = len(centroids)
    for c in range(k):
        counts = np.bincount(assign, minlength=k)
        if counts[c] > 0:
            continue
        donors = counts[assign] > 1
        cand = np.where(donors, d2, -1.0)
        p = int(np.argmax(cand))
        assign[p] = c
        centroids[c] = points[p]
        d2[p] = 0.0
    return assign


def kmeans_fit(points: Sequence, k: int, seed: int = 0, max_iters: int = 300) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations until assignments settle."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(X) < k:
        raise ValueError("too few points")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(X, k, rng)
    assign, d2 = _nearest(X, centroids)
    assign = _repair_empty(X, centroids, assign, d2)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        for c in range(k):
            centroids[c] = X[assign == c].mean(axis=0)
        history.append(float(((X - centroids[assign]) ** 2).sum()))
        new_assign, d2 = _nearest(X, centroids)
        # keep the current label on exact ties so convergence is detectable
        cur_d2 = ((X - centroids[assign]) ** 2).sum(axis=1)
        new_assign = np.where(cur_d2 <= d2, assign, new_assign)
        d2 = np.minimum(d2, cur_d2)
        new_assign = _repair_empty(X, centroids, new_assign, d2)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    for c in range(k):
        centroids[c] = X[assign == c].mean(axis=0)
    return KMeansResult(KMeansModel(centroids, seed), assign, history, n_iter)


# -- random forest ----------------------------------------------------------

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 30
    max_depth: int = 12
    min_leaf: int = 5
    # None -> ceil(sqrt(n_features))
    max_features: int | None = None
    # split thresholds are searched among this many per-feature quantiles
    n_bins: int = 64


@dataclass
class Tree:
    feature: np.ndarray  # int, -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_columns(np.ascontiguousarray(np.asarray(X, dtype=np.float64).T))

    def predict_columns(self, XT: np.ndarray) -> np.ndarray:
        """Predict from a feature-major ``(d, n)`` matrix (better gather locality)."""
        node = np.zeros(XT.shape[1], dtype=np.int64)
        # rows still sitting on an internal node
        rows = np.arange(XT.shape[1])
        cur = node
        while len(rows):
            f = self.feature[cur]
            inner = f >= 0
            node[rows] = cur
            rows, cur, f = rows[inner], cur[inner], f[inner]
            go_left = XT[f, rows] <= self.threshold[cur]
            cur = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


@dataclass
class RandomForestRegressor:
    trees: list[Tree]
    params: ForestParams
    n_features: int
    seed: int

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected descriptors of length {self.n_features}")
        XT = np.ascontiguousarray(X.T)
        out = np.zeros(len(X))
        for t in self.trees:
            out += t.predict_columns(XT)
        return out / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "n_features": self.n_features,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForestRegressor":
        return cls([Tree.from_dict(t) for t in d["trees"]], ForestParams(**d["params"]),
                   int(d["n_features"]), int(d["seed"]))


def _bin_edges(X: np.ndarray, n_bins: int) -> list[np.ndarray]:
    qs = np.arange(1, n_bins) / n_bins
    return [np.unique(np.quantile(X[:, f], qs)) for f in range(X.shape[1])]


def _grow_tree(Xb, edges, y, params: ForestParams, m: int, rng) -> Tree:
    n, d = Xb.shape
    n_bins = edges.shape[1] + 1
    samp = rng.integers(0, n, n)
    ys = y[samp]
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    frontier = np.array([0])
    assign = np.zeros(n, dtype=np.int64)
    for depth in range(params.max_depth + 1):
        nf = len(frontier)
        cnt = np.bincount(assign, minlength=nf).astype(np.float64)
        sm = np.bincount(assign, weights=ys, minlength=nf)
        sq = np.bincount(assign, weights=ys * ys, minlength=nf)
        for j, node in enumerate(frontier):
            value[node] = sm[j] / cnt[j]
        if depth == params.max_depth:
            break
        splittable = (cnt >= 2 * params.min_leaf) & (sq - sm * sm / np.maximum(cnt, 1) > 1e-12)
        if not splittable.any():
            break
        feats = np.argsort(rng.random((nf, d)), axis=1)[:, :m]
        sel = splittable[assign]
        a, s, yy = assign[sel], samp[sel], ys[sel]
        fb = Xb[s[:, None], feats[a]]
        key = ((a[:, None] * m + np.arange(m)) * n_bins + fb).ravel()
        size = nf * m * n_bins
        C = np.bincount(key, minlength=size).reshape(nf, m, n_bins).astype(np.float64)
        S = np.bincount(key, weights=np.repeat(yy, m), minlength=size).reshape(nf, m, n_bins)
        cl, sl = np.cumsum(C, axis=2), np.cumsum(S, axis=2)
        cr, sr = cnt[:, None, None] - cl, sm[:, None, None] - sl
        valid = (cl >= params.min_leaf) & (cr >= params.min_leaf)
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(valid, sl * sl / cl + sr * sr / cr, -np.inf)
        flat = score.reshape(nf, -1)
        best = np.argmax(flat, axis=1)
        best_score = flat[np.arange(nf), best]
        gain = best_score - sm * sm / np.maximum(cnt, 1)
        do_split = splittable & np.isfinite(best_score) & (gain > 1e-12)
        if not do_split.any():
            break
        slot, kbin = np.divmod(best, n_bins)
        split_feat = feats[np.arange(nf), slot]
        child_of = np.full((nf, 2), -1, dtype=np.int64)
        next_frontier = []
        for j in np.flatnonzero(do_split):
            node = frontier[j]
            f, k = int(split_feat[j]), int(kbin[j])
            feature[node] = f
            threshold[node] = float(edges[f, k])
            for side in (0, 1):
                child_of[j, side] = len(next_frontier)
                next_frontier.append(len(feature))
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            left[node], right[node] = next_frontier[-2], next_frontier[-1]
        keep = do_split[assign]
        samp, ys, assign = samp[keep], ys[keep], assign[keep]
        go_right = Xb[samp, split_feat[assign]] > kbin[assign]
        assign = child_of[assign, go_right.astype(np.int64)]
        frontier = np.array(next_frontier)
    return Tree(np.asarray(feature, dtype=np.int64), np.asarray(threshold),
                np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                np.asarray(value))


def forest_train(samples, targets, params: ForestParams = ForestParams(), seed: int = 0) -> RandomForestRegressor:
    """Bagged regression trees with variance-reduction splits.

    Tree ``i`` uses its own generator seeded ``seed + i``, so trees are
    independent and the forest is reproducible.
    """
    X = np.asarray(samples, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("samples must be a non-empty 2-D array")
    if len(X) != len(y):
        raise ValueError("samples and targets differ in length")
    d = X.shape[1]
    m = params.max_features or math.ceil(math.sqrt(d))
    m = min(m, d)
    edge_list = _bin_edges(X, params.n_bins)
    width = max(len(e) for e in edge_list)
    edges = np.full((d, max(width, 1)), np.inf)
    Xb = np.empty(X.shape, dtype=np.int64)
    for f, e in enumerate(edge_list):
        edges[f, :len(e)] = e
        Xb[:, f] = np.searchsorted(e, X[:, f], side="left")
    trees = [_grow_tree(Xb, edges, y, params, m, np.random.default_rng(seed + i))
             for i in range(params.n_trees)]
    return RandomForestRegressor(trees, params, d, seed)


# -- the bank ---------------------------------------------------------------

@dataclass(frozen=True)
class FeatureConfig:
    hist_bins: tuple[int, int, int] = (8, 8, 8)
    sift_stride: int = 2
    sift_patch: int = 16
    use_lab: bool = False

    @property
    def descriptor_length(self) -> int:
        return descriptor_length(self.use_lab)


@dataclass
class IlluminationModelBank:
    kmeans: KMeansModel
    forests: list[RandomForestRegressor]
    features: FeatureConfig
    training: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.kmeans.k


@dataclass
class SkinProbabilityMap:
    probs: np.ndarray  # (H, W) in [0, 1]
    clusters: tuple[int, ...] = ()
    sift_fallback: bool = False

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]


def sample_training_pixels(img: np.ndarray, mask: np.ndarray, features: FeatureConfig,
                           cap: int, rng: np.random.Generator):
    """Balanced positive/negative pixel sample (at most ``cap`` of each)."""
    flat = mask.ravel()
    picks = []
    for cls in (True, False):
        idx = np.flatnonzero(flat == cls)
        if len(idx) > cap:
            idx = np.sort(rng.choice(idx, cap, replace=False))
        picks.append(idx)
    idx = np.concatenate(picks)
    rows, cols = np.divmod(idx, mask.shape[1])
    X, _ = dense_pixel_descriptors(img, features.sift_stride, features.sift_patch,
                                   features.use_lab, rows, cols)
    return X, flat[idx].astype(np.float64)


def corpus_samples(corpus, features: FeatureConfig, cap: int, seed: int):
    """Per-image (descriptors, targets) lists; image ``i`` samples with seed ``[seed, i]``."""
    out = []
    for i, (img, mask) in enumerate(corpus):
        if img.shape[:2] != mask.shape:
            raise ValueError(f"image {i} and its mask differ in size")
        out.append(sample_training_pixels(img, mask, features, cap, np.random.default_rng([seed, i])))
    return out


def bank_train(corpus, k: int = 10, params: ForestParams = ForestParams(), seed: int = 0,
               features: FeatureConfig = FeatureConfig(), samples_per_image: int = 2000,
               max_iters: int = 300, jobs: int = 1, min_images: int = 1) -> IlluminationModelBank:
    """Cluster the corpus by global appearance and fit one forest per cluster.

    ``corpus`` is a sequence of ``(rgb image, ground-truth skin mask)`` pairs.
    Clusters that end up without images get a forest fit on the whole corpus.
    A cluster with fewer than ``min_images`` members also trains on the
    non-member images nearest its centroid until it reaches that count; the
    k-means partition itself is unchanged.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus is empty")
    if not any(np.any(m) for _, m in corpus):
        raise ValueError("no positive pixels")
    hists = np.stack([global_hsv_histogram(img, features.hist_bins) for img, _ in corpus])
    if min_images < 1:
        raise ValueError("min_images must be >= 1")
    km = kmeans_fit(hists, k, seed, max_iters)
    samples = corpus_samples(corpus, features, samples_per_image, seed)
    jobs_in = []
    trained_on = []
    for c in range(k):
        members = np.flatnonzero(km.assignments == c)
        if len(members) == 0:
            members = np.arange(len(corpus))
        elif len(members) < min_images:
            d = np.linalg.norm(hists - km.model.centroids[c], axis=1)
            d[members] = np.inf
            extra = np.argsort(d, kind="stable")[:min_images - len(members)]
            members = np.sort(np.concatenate([members, extra]))
        trained_on.append(len(members))
        X = np.concatenate([samples[i][0] for i in members])
        y = np.concatenate([samples[i][1] for i in members])
        jobs_in.append((X, y, params, seed + c * params.n_trees))
    if jobs > 1 and k > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            forests = list(pool.map(_train_job, jobs_in))
    else:
        forests = [_train_job(j) for j in jobs_in]
    sizes = np.bincount(km.assignments, minlength=k)
    training = {
        "cluster_sizes": sizes.tolist(),
        "cluster_samples": [int(len(j[1])) for j in jobs_in],
        "cluster_training_images": trained_on,
        "cluster_positives": [int(j[1].sum()) for j in jobs_in],
        "fallback_clusters": [c for c in range(k) if sizes[c] == 0],
        "kmeans_iterations": km.n_iter,
        "assignments": km.assignments.tolist(),
    }
    return IlluminationModelBank(km.model, forests, features, training)


def _train_job(job):
    X, y, params, seed = job
    return forest_train(X, y, params, seed)


def predict_skin(region: np.ndarray, bank: IlluminationModelBank, blend_n: int = 1,
                 dense: bool = True) -> SkinProbabilityMap:
    """Per-pixel skin probability for an RGB region.

    ``dense=True`` classifies every pixel with its own colour and the nearest
    grid SIFT; ``dense=False`` classifies only grid points and spreads each
    prediction to its nearest pixels.
    """
    h, w = region.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("degenerate region")
    if not 1 <= blend_n <= bank.k:
        raise ValueError("blend_n must lie in [1, K]")
    fc = bank.features
    hist = global_hsv_histogram(region, fc.hist_bins)
    dist = bank.kmeans.distances(hist)
    chosen = np.argsort(dist, kind="stable")[:blend_n]
    if blend_n == 1:
        weights = np.ones(1)
    else:
        inv = 1.0 / (dist[chosen] + 1e-12)
        weights = inv / inv.sum()
    small = fc.sift_patch > min(h, w)
    if dense or small:
        X, fallback = dense_pixel_descriptors(region, fc.sift_stride, fc.sift_patch, fc.use_lab)
        probs = _blend(bank, chosen, weights, X).reshape(h, w)
    else:
        grid = pixel_descriptors(region, fc.sift_stride, fc.sift_patch, fc.use_lab)
        gp = _blend(bank, chosen, weights, grid.descriptors).reshape(grid.grid_h, grid.grid_w)
        gy = nearest_grid_index(h, grid.offset, grid.stride, grid.grid_h)
        gx = nearest_grid_index(w, grid.offset, grid.stride, grid.grid_w)
        probs = gp[gy][:, gx]
        fallback = False
    return SkinProbabilityMap(np.clip(probs, 0.0, 1.0), tuple(int(c) for c in chosen), fallback)


def _blend(bank, chosen, weights, X):
    out = np.zeros(len(X))
    for c, wgt in zip(chosen, weights):
        out += wgt * bank.forests[c].predict(X)
    return out


def threshold_mask(prob_map, tau: float = 0.5) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    probs = prob_map.probs if isinstance(prob_map, SkinProbabilityMap) else np.asarray(prob_map)
    return probs >= tau


# -- serialization ----------------------------------------------------------

def bank_to_json(bank: IlluminationModelBank) -> str:
    fc = bank.features
    doc = {
        "magic": BANK_MAGIC,
        "version": BANK_VERSION,
        "features": {"hist_bins": list(fc.hist_bins), "sift_stride": fc.sift_stride,
                     "sift_patch": fc.sift_patch, "use_lab": fc.use_lab},
        "kmeans_seed": bank.kmeans.seed,
        "centroids": bank.kmeans.centroids.tolist(),
        "forests": [f.to_dict() for f in bank.forests],
        "training": bank.training,
        "config": bank.config,
    }
    return json.dumps(doc, separators=(",", ":"))


def bank_from_json(text: str) -> IlluminationModelBank:
    doc = json.loads(text)
    if doc.get("magic") != BANK_MAGIC:
        raise ValueError("not a skin model bank file")
    if doc.get("version") != BANK_VERSION:
        raise ValueError(f"unsupported bank version {doc.get('version')}")
    f = doc["features"]
    fc = FeatureConfig(tuple(f["hist_bins"]), f["sift_stride"], f["sift_patch"], f["use_lab"])
    km = KMeansModel(np.asarray(doc["centroids"], dtype=np.float64), doc["kmeans_seed"])
    forests = [RandomForestRegressor.from_dict(d) for d in doc["forests"]]
    if len(forests) != km.k:
        raise ValueError("forest count does not match cluster count")
    return IlluminationModelBank(km, forests, fc, doc.get("training", {}), doc.get("config", {}))


def save_bank(path, bank: IlluminationModelBank) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(bank_to_json(bank))


def load_bank(path) -> IlluminationModelBank:
    with open(path, encoding="utf-8") as fh:
        return bank_from_json(fh.read())
