"""View sampling: elevation-weighted draws for training and the evaluation pick order."""
import math
from typing import List, Sequence
import numpy as np
from app.core.cameras import PosedView

MIN_ELEVATION_WEIGHT = 0.1
PREFERRED_ELEVATION = 10.0
AZIMUTH_PICK_ORDER = (0.0, 180.0, 90.0, 270.0, 45.0, 225.0, 135.0, 315.0)


def elevation_weights(views: Sequence[PosedView]) -> np.ndarray:
    """
    Normalized probabilities proportional to max(cos(elevation), 0.1).
    Raises:
        ValueError: If no views are given.
    """
    if not views:
        raise ValueError("Elevation-weighted sampling needs at least one view.")
    weights = np.array([max(math.cos(math.radians(view.elevation_deg)), MIN_ELEVATION_WEIGHT) for view in views])
    return weights / weights.sum()


def weighted_elevation_sampling(views: Sequence[PosedView], rng: np.random.Generator) -> int:
    """Index of one view drawn with elevation weights."""
    return int(rng.choice(len(views), p=elevation_weights(views)))


def sample_views_weighted(views: Sequence[PosedView], rng: np.random.Generator, count: int) -> List[int]:
    """`count` distinct indices drawn with elevation weights (capped at the number of views)."""
    size = min(count, len(views))
    return [int(i) for i in rng.choice(len(views), size=size, replace=False, p=elevation_weights(views))]


def _azimuth_rank(azimuth: float) -> tuple:
    wrapped = azimuth % 360.0
    for rank, preferred in enumerate(AZIMUTH_PICK_ORDER):
        if abs(wrapped - preferred) < 1e-6:
            return (rank, 0.0)
    return (len(AZIMUTH_PICK_ORDER), wrapped)


def view_pick_order(views: Sequence[PosedView], preferred_elevation: float = PREFERRED_ELEVATION) -> List[int]:
    """
    Deterministic input order for evaluation. Views at the elevation closest to
    `preferred_elevation` come first, at azimuths 0, 180, 90, 270, 45, 225, 135,
    315 and then the remaining azimuths ascending; other elevations follow by
    increasing distance to the preferred one, ordered the same way.
    """
    def key(index: int) -> tuple:
        view = views[index]
        return (round(abs(view.elevation_deg - preferred_elevation), 6), view.elevation_deg, _azimuth_rank(view.azimuth_deg), index)

    return sorted(range(len(views)), key=key)
