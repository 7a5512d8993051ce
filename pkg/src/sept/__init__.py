"""Retrieval-based selection of task-specific pre-training subsets from embedding pools."""

from .errors import BudgetError, FormatError, ParseError, SeptError, TrainingError, ValidationError
from .exact import RankedList, SearchHit, search_exact, search_exact_batch
from .ivf import IvfIndex, KMeansModel, SearchParams, Sq8Codec, build, eval_recall, fit_codec, search, train
from .selector import SelectionBudget, SelectionManifest, select, verify_manifest
from .vecstore import EmbeddingPool, normalize, read_pool, write_pool

__version__ = "0.1.0"
