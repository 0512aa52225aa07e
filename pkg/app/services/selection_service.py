"""
This module defines the view-curation service.

Candidate views are filtered in two steps. A linear quality classifier first
decides whether the back view is usable as a second query view. Every other
candidate is then keypoint-matched against the query views and kept when its
match count exceeds the pool mean minus a fraction of the standard deviation.
Matching uses Harris corners, normalized-cross-correlation patch descriptors
and a mutual nearest-neighbour search with a symmetric ratio test on faiss.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union
import faiss
import numpy as np
import torch
import torch.nn as nn
from scipy import ndimage
from app.core.cameras import PosedView
from app.models import ClassifierConfig, MatcherConfig, SelectionConfig, SelectionReport
from app.state_manager import load_tensors, save_tensors

logger = logging.getLogger(__name__)

ImageLike = Union[np.ndarray, torch.Tensor]
_GRADIENT_MAGNITUDE_RANGE = 4.0
_FLAT_PATCH_STD = 1e-6


def _to_numpy_rgb(image: ImageLike) -> np.ndarray:
    array = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    array = array.astype(np.float64)
    if array.ndim == 2:
        array = np.repeat(array[..., None], 3, axis=-1)
    return np.clip(array[..., :3], 0.0, 1.0)


def to_gray(image: ImageLike) -> np.ndarray:
    rgb = _to_numpy_rgb(image)
    return rgb @ np.array([0.299, 0.587, 0.114])


# --- Quality features ---

def _image_histograms(image: ImageLike, bins: int) -> np.ndarray:
    rgb = _to_numpy_rgb(image)
    pixels = rgb.shape[0] * rgb.shape[1]
    intensity = [np.histogram(rgb[..., c], bins=bins, range=(0.0, 1.0))[0] / pixels for c in range(3)]
    gray = rgb @ np.array([0.299, 0.587, 0.114])
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    magnitude = np.hypot(gx, gy)
    magnitude_hist = np.histogram(
        np.minimum(magnitude, _GRADIENT_MAGNITUDE_RANGE), bins=bins, range=(0.0, _GRADIENT_MAGNITUDE_RANGE)
    )[0] / pixels
    orientation = np.mod(np.arctan2(gy, gx), np.pi)
    orientation_hist = np.histogram(orientation, bins=bins, range=(0.0, np.pi), weights=magnitude)[0]
    orientation_hist = orientation_hist / (magnitude.sum() + 1e-12)
    return np.concatenate(intensity + [magnitude_hist, orientation_hist])


def histogram_features(front: ImageLike, back: ImageLike, bins: int = 16) -> np.ndarray:
    """Default extractor: intensity, gradient-magnitude and gradient-orientation histograms."""
    return np.concatenate([_image_histograms(front, bins), _image_histograms(back, bins)])


FeatureExtractor = Callable[[ImageLike, ImageLike, int], np.ndarray]
FEATURE_EXTRACTORS: Dict[str, FeatureExtractor] = {"histogram": histogram_features}


def extract_quality_features(front: ImageLike, back: ImageLike, bins: int = 16, extractor: str = "histogram") -> np.ndarray:
    """
    Builds the quality feature vector of a (front, back) pair.
    Args:
        front: Front view image (H, W, C) in [0, 1].
        back: Back view image of the same size.
        bins: Histogram bins per component.
        extractor: Registered extractor id.
    Returns:
        np.ndarray: Fixed-length feature vector; the first half describes the front view.
    Raises:
        ValueError: On mismatched image sizes or an unknown extractor.
    """
    if tuple(front.shape[:2]) != tuple(back.shape[:2]):
        raise ValueError(f"Front and back images differ in size: {tuple(front.shape[:2])} vs {tuple(back.shape[:2])}.")
    if extractor not in FEATURE_EXTRACTORS:
        raise ValueError(f"Unknown quality feature extractor '{extractor}'.")
    return FEATURE_EXTRACTORS[extractor](front, back, bins)


# --- Quality classifier ---

@dataclass
class QualityClassifier:
    """Linear decision rule w . x + b >= 0 means the back view is good."""
    weight: np.ndarray
    bias: float
    extractor: str = "histogram"
    histogram_bins: int = 16
    metadata: Dict[str, Any] = field(default_factory=dict)

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weight + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.decision_function(features) >= 0.0

    def features(self, front: ImageLike, back: ImageLike) -> np.ndarray:
        return extract_quality_features(front, back, self.histogram_bins, self.extractor)

    def save(self, path: Union[str, Path]) -> Path:
        tensors = {
            "weight": torch.from_numpy(self.weight.astype(np.float32)),
            "bias": torch.tensor([self.bias], dtype=torch.float32),
        }
        metadata = {"kind": "quality_classifier", "extractor": self.extractor, "histogram_bins": self.histogram_bins, **self.metadata}
        return save_tensors(path, tensors, metadata)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "QualityClassifier":
        tensors, metadata = load_tensors(path)
        if metadata.get("kind") != "quality_classifier":
            raise RuntimeError(f"Checkpoint '{path}' does not hold a quality classifier.")
        extra = {k: v for k, v in metadata.items() if k not in ("kind", "extractor", "histogram_bins")}
        return cls(
            weight=tensors["weight"].numpy().astype(np.float64),
            bias=float(tensors["bias"][0]),
            extractor=metadata["extractor"],
            histogram_bins=int(metadata["histogram_bins"]),
            metadata=extra,
        )


def train_quality_classifier(
    features: np.ndarray,
    labels: Sequence[bool],
    cfg: ClassifierConfig,
    seed: int = 0,
    extractor: str = "histogram",
) -> QualityClassifier:
    """
    Trains a linear SVM by minibatch subgradient descent on the regularized hinge loss.
    Args:
        features: (N, F) feature matrix.
        labels: True for good samples, False for bad ones.
        cfg: Regularization, iteration count, learning rate and batch size.
        seed: Seed of the minibatch order.
        extractor: Id of the extractor that produced the features.
    Returns:
        QualityClassifier: Weights expressed on raw (unstandardized) features.
    Raises:
        ValueError: If only one class is present or shapes disagree.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.where(np.asarray(labels, dtype=bool), 1.0, -1.0)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("Features must be (N, F) with one label per row.")
    if np.unique(y).size < 2:
        raise ValueError("Quality classifier training needs both good and bad samples.")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    x_std = torch.from_numpy((x - mean) / std)
    y_t = torch.from_numpy(y)

    linear = nn.Linear(x.shape[1], 1).double()
    nn.init.zeros_(linear.weight)
    nn.init.zeros_(linear.bias)
    optimizer = torch.optim.SGD(linear.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(seed)
    count = x.shape[0]
    for _ in range(cfg.iterations):
        batch = torch.from_numpy(rng.integers(0, count, size=min(cfg.batch_size, count)))
        optimizer.zero_grad()
        scores = linear(x_std[batch]).squeeze(-1)
        loss = torch.clamp(1.0 - y_t[batch] * scores, min=0.0).mean()
        loss = loss + 0.5 * cfg.reg * (linear.weight ** 2).sum()
        loss.backward()
        optimizer.step()

    w_std = linear.weight.detach().numpy()[0]
    weight = w_std / std
    bias = float(linear.bias.detach().numpy()[0] - np.dot(w_std, mean / std))
    classifier = QualityClassifier(weight=weight, bias=bias, extractor=extractor, histogram_bins=cfg.histogram_bins)
    accuracy = float((classifier.predict(x) == (y > 0)).mean())
    classifier.metadata = {"sample_count": int(count), "seed": int(seed), "train_accuracy": accuracy}
    logger.info(f"Trained quality classifier on {count} samples, training accuracy {accuracy:.3f}.")
    return classifier


# --- Keypoint matching ---

@dataclass(frozen=True)
class Keypoints:
    """Corner locations (K, 2) as (row, col) and unit-norm zero-mean descriptors (K, D)."""
    points: np.ndarray
    descriptors: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])


def harris_response(gray: np.ndarray, cfg: MatcherConfig) -> np.ndarray:
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(gx * gx, cfg.harris_sigma)
    syy = ndimage.gaussian_filter(gy * gy, cfg.harris_sigma)
    sxy = ndimage.gaussian_filter(gx * gy, cfg.harris_sigma)
    return sxx * syy - sxy * sxy - cfg.harris_k * (sxx + syy) ** 2


def detect_keypoints(image: ImageLike, cfg: MatcherConfig) -> Keypoints:
    """
    Harris corners with non-maximum suppression and NCC patch descriptors.
    Corners whose patch would leave the image and textureless patches are dropped.
    """
    gray = to_gray(image)
    response = harris_response(gray, cfg)
    peak = response.max() if response.size else 0.0
    radius = cfg.patch_radius
    if peak <= 0.0:
        return Keypoints(points=np.zeros((0, 2), dtype=np.int64), descriptors=np.zeros((0, (2 * radius + 1) ** 2), dtype=np.float32))
    local_max = response == ndimage.maximum_filter(response, size=cfg.nms_size, mode="nearest")
    candidates = local_max & (response > cfg.response_threshold * peak)
    candidates[:radius, :] = False
    candidates[-radius:, :] = False
    candidates[:, :radius] = False
    candidates[:, -radius:] = False
    rows, cols = np.nonzero(candidates)
    order = np.argsort(-response[rows, cols], kind="stable")
    points, descriptors = [], []
    for index in order:
        r, c = int(rows[index]), int(cols[index])
        patch = gray[r - radius:r + radius + 1, c - radius:c + radius + 1].reshape(-1)
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm / np.sqrt(patch.size) < _FLAT_PATCH_STD:
            continue
        points.append((r, c))
        descriptors.append(patch / norm)
        if len(points) == cfg.max_keypoints:
            break
    if not points:
        return Keypoints(points=np.zeros((0, 2), dtype=np.int64), descriptors=np.zeros((0, (2 * radius + 1) ** 2), dtype=np.float32))
    return Keypoints(points=np.asarray(points, dtype=np.int64), descriptors=np.asarray(descriptors, dtype=np.float32))


def _top2(database: np.ndarray, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    index = faiss.IndexFlatIP(database.shape[1])
    index.add(np.ascontiguousarray(database))
    k = min(2, database.shape[0])
    scores, neighbours = index.search(np.ascontiguousarray(queries), k)
    if k == 1:
        scores = np.concatenate([scores, np.full_like(scores, -np.inf)], axis=1)
        neighbours = np.concatenate([neighbours, np.full_like(neighbours, -1)], axis=1)
    return scores.astype(np.float64), neighbours


def _correlation_distance(score: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(0.0, 2.0 - 2.0 * np.nan_to_num(score, neginf=-1.0)))


def match_keypoints(a: Keypoints, b: Keypoints, cfg: MatcherConfig) -> List[Tuple[int, int]]:
    """Mutual nearest neighbours passing the ratio test in both directions and the correlation floor."""
    if len(a) == 0 or len(b) == 0:
        return []
    scores_ab, nn_ab = _top2(b.descriptors, a.descriptors)
    scores_ba, nn_ba = _top2(a.descriptors, b.descriptors)
    dist_ab = _correlation_distance(scores_ab)
    dist_ba = _correlation_distance(scores_ba)
    matches = []
    for i in range(len(a)):
        j = int(nn_ab[i, 0])
        if j < 0 or int(nn_ba[j, 0]) != i:
            continue
        if scores_ab[i, 0] < cfg.min_correlation or scores_ba[j, 0] < cfg.min_correlation:
            continue
        ratio_ok_ab = nn_ab[i, 1] < 0 or dist_ab[i, 0] < cfg.ratio * dist_ab[i, 1]
        ratio_ok_ba = nn_ba[j, 1] < 0 or dist_ba[j, 0] < cfg.ratio * dist_ba[j, 1]
        if ratio_ok_ab and ratio_ok_ba:
            matches.append((i, j))
    return matches


def match_views(a: ImageLike, b: ImageLike, cfg: MatcherConfig) -> int:
    """
    Counts consistent keypoint matches between two images; symmetric in (a, b).
    Raises:
        ValueError: If the images differ in size.
    """
    if tuple(a.shape[:2]) != tuple(b.shape[:2]):
        raise ValueError("Matched images must have equal sizes.")
    return len(match_keypoints(detect_keypoints(a, cfg), detect_keypoints(b, cfg), cfg))


# --- Selection ---

@dataclass
class CandidateSet:
    """A candidate pool with its front and back view and per-view provenance."""
    views: List[PosedView]
    front_index: int
    back_index: int
    tags: List[str] = field(default_factory=list)
    corrupted: List[bool] = field(default_factory=list)

    def __post_init__(self) -> None:
        size = len(self.views)
        if not (0 <= self.front_index < size and 0 <= self.back_index < size):
            raise ValueError("Front and back indices must address candidate views.")
        if self.front_index == self.back_index:
            raise ValueError("Front and back views must be distinct.")
        if not self.tags:
            self.tags = ["candidate"] * size
        if not self.corrupted:
            self.corrupted = [False] * size


def compute_selection(counts: Sequence[Optional[int]], queries: Sequence[int], std_factor: float = 0.6) -> SelectionReport:
    """
    Applies the consistency threshold mean - std_factor * std over non-query candidates.
    Args:
        counts: Match count per candidate; entries of query views are ignored.
        queries: Indices of the query views, always selected.
        std_factor: Multiple of the population standard deviation below the mean.
    Returns:
        SelectionReport: Statistics and the selected index set.
    """
    query_set = set(queries)
    candidates = [i for i in range(len(counts)) if i not in query_set]
    values = np.asarray([counts[i] for i in candidates], dtype=np.float64)
    mean = float(values.mean()) if values.size else 0.0
    std = float(values.std()) if values.size else 0.0
    threshold = mean - std_factor * std
    if std == 0.0:
        kept = [i for i in candidates if counts[i] >= threshold]
    else:
        kept = [i for i in candidates if counts[i] > threshold]
    return SelectionReport(
        counts=[None if i in query_set else int(counts[i]) for i in range(len(counts))],
        mean=mean,
        std=std,
        threshold=threshold,
        selected=sorted(set(kept) | query_set),
        queries=sorted(query_set),
    )


def assess_back_view(candidates: CandidateSet, classifier: QualityClassifier) -> bool:
    """True when the classifier judges the back view usable as a query view."""
    front = candidates.views[candidates.front_index].rgb
    back = candidates.views[candidates.back_index].rgb
    decision = bool(classifier.predict(classifier.features(front, back)[None, :])[0])
    logger.info(f"Back view {candidates.back_index} judged {'usable' if decision else 'defective'}.")
    return decision


def select_views(
    candidates: CandidateSet,
    classifier: Optional[QualityClassifier],
    matcher_cfg: MatcherConfig,
    selection_cfg: SelectionConfig,
) -> SelectionReport:
    """
    Curates a candidate pool.
    Args:
        candidates: At least two candidate views.
        classifier: Back-view quality classifier; None accepts the back view unconditionally.
        matcher_cfg: Keypoint matcher settings.
        selection_cfg: Threshold settings.
    Returns:
        SelectionReport: Per-candidate match counts summed over the query views, the threshold and the selection.
    Raises:
        ValueError: If fewer than two candidates are given.
    """
    if len(candidates.views) < 2:
        raise ValueError("View selection needs at least two candidate views.")
    back_ok = True if classifier is None else assess_back_view(candidates, classifier)
    queries = [candidates.front_index, candidates.back_index] if back_ok else [candidates.front_index]
    keypoints = [detect_keypoints(view.rgb, matcher_cfg) for view in candidates.views]
    counts: List[Optional[int]] = []
    for index in range(len(candidates.views)):
        if index in queries:
            counts.append(None)
            continue
        counts.append(sum(len(match_keypoints(keypoints[index], keypoints[q], matcher_cfg)) for q in queries))
    report = compute_selection(counts, queries, selection_cfg.std_factor)
    report.back_view_accepted = back_ok
    logger.info(
        f"Selected {len(report.selected)}/{len(candidates.views)} views "
        f"(mean {report.mean:.2f}, std {report.std:.2f}, threshold {report.threshold:.2f})."
    )
    return report


def random_selection(candidates: CandidateSet, rng: np.random.Generator, count: int) -> List[int]:
    """Ablation without consistency verification: the front view plus `count - 1` random others."""
    others = [i for i in range(len(candidates.views)) if i != candidates.front_index]
    picked = rng.choice(len(others), size=min(max(count - 1, 0), len(others)), replace=False)
    return sorted([candidates.front_index] + [others[int(i)] for i in picked])
