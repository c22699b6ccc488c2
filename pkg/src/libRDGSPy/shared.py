# "shared.py" from libRDGSPy by NinjaCheetah & Contributors
#
# This file defines general functions that may be useful in other modules of libRDGSPy. Putting them here cuts down on
# clutter in other files.

import os

import numpy as np
from scipy.special import expit

# Environment variable that sets the default size of worker pools.
THREADS_ENV = "RDGS_THREADS"


def sigmoid(value):
    """
    Numerically stable logistic function.

    Parameters
    ----------
    value : float or np.ndarray
        The input.

    Returns
    -------
    float or np.ndarray
        1 / (1 + exp(-value)).
    """
    return expit(value)


def inverse_sigmoid(value):
    """
    Inverse of the logistic function, log(p / (1 - p)).

    Parameters
    ----------
    value : float or np.ndarray
        A probability in (0, 1).

    Returns
    -------
    float or np.ndarray
        The logit of the input.
    """
    value = np.asarray(value, dtype=np.float64)
    return np.log(value) - np.log1p(-value)


def default_threads() -> int:
    """
    Gets the default worker count from the RDGS_THREADS environment variable, falling back to 1.

    Returns
    -------
    int
        The number of worker threads to use.
    """
    raw = os.environ.get(THREADS_ENV, "")
    try:
        threads = int(raw)
    except ValueError:
        return 1
    return max(1, threads)


def chunk_rows(total: int, row_cost: int, budget: int = 1 << 22) -> int:
    """
    Picks how many rows of a (rows x row_cost) temporary fit in the element budget, so vectorized scans over large
    codebooks don't allocate gigabytes at once.

    Parameters
    ----------
    total : int
        Number of rows to process.
    row_cost : int
        Number of temporary elements needed per row.
    budget : int
        Maximum number of temporary elements per chunk.

    Returns
    -------
    int
        The chunk size, at least 1.
    """
    return max(1, min(total, budget // max(1, row_cost)))
