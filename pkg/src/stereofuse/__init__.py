"""Dense stereo disparity fused with sparse range measurements.

Census + Hamming matching costs, semi-global aggregation, and three ways of
injecting sparse high-confidence disparities into the cost volume before
aggregation (naive, neighborhood promotion, diffusion-based update), plus a
monocular anisotropic-diffusion baseline and the evaluation tooling around
them.
"""

import os

# Must run before numba is first imported so the CLI can request more
# workers than there are cores.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")


def _sync_numba_threads() -> None:
    # Something (a test runner plugin, say) may have imported numba before us.
    # Until its thread pool starts, the limit can still follow the variable
    # above, but the parallel module caches it at import.
    import sys

    if "numba.core.config" not in sys.modules:
        return
    from numba.core import config

    parallel = sys.modules.get("numba.np.ufunc.parallel")
    if parallel is not None and parallel._is_initialized:
        return
    config.reload_config()
    if parallel is not None:
        parallel.NUM_THREADS = config.NUMBA_NUM_THREADS
        parallel.snt_check = parallel.gen_snt_check()


_sync_numba_threads()

from .core import (  # noqa: E402
    COST_CAP,
    INVALID,
    CostVolume,
    DisparityMap,
    FusionParams,
    GrayImage,
    ParamError,
    SeedSet,
    validate_params,
)
from .census import CensusImage, build_cost_volume, census_transform, hamming  # noqa: E402
from .sgm import PathDirection, aggregate_all, aggregate_path, select_disparity  # noqa: E402
from .fusion import (  # noqa: E402
    InterpolationField,
    anisotropic_baseline,
    diffusion_update,
    interpolate_seeds,
    naive_update,
    neighborhood_update,
)
from .pipeline import METHODS, Method, run_method  # noqa: E402

__all__ = [
    "COST_CAP",
    "INVALID",
    "METHODS",
    "CensusImage",
    "CostVolume",
    "DisparityMap",
    "FusionParams",
    "GrayImage",
    "InterpolationField",
    "Method",
    "ParamError",
    "PathDirection",
    "SeedSet",
    "aggregate_all",
    "aggregate_path",
    "anisotropic_baseline",
    "build_cost_volume",
    "census_transform",
    "diffusion_update",
    "hamming",
    "interpolate_seeds",
    "naive_update",
    "neighborhood_update",
    "run_method",
    "select_disparity",
    "validate_params",
]

__version__ = "0.1.0"
