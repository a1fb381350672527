"""Visual place recognition from indoor views through windows.

Pipeline stages: panorama tiling, coverage subsampling, window-layout
augmentation, a reference embedder trained with mined triplets, top-K
retrieval and Recall@K evaluation.
"""
from .kernels import BACKEND
from .geo import GeoPoint, SpatialIndex, dbscan, haversine, radius_query, select_representatives
from .embed import EmbedderParams, extract_features, init_params, load_params, save_params
from .retrieval import GalleryIndex, Ranking, SearchMode
from .evaluation import EvalConfig, RecallReport, recall_at_k

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "GeoPoint", "SpatialIndex", "dbscan", "haversine", "radius_query", "select_representatives",
    "EmbedderParams", "extract_features", "init_params", "load_params", "save_params",
    "GalleryIndex", "Ranking", "SearchMode", "EvalConfig", "RecallReport", "recall_at_k",
]
