import logging
import math
from contextlib import contextmanager
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger("nbt_planner")

LOG_FORMAT = "%(filename)10s:%(lineno)4d:%(message)s"


def set_logging_config(
    log_level: Union[str, int], log_file: Optional[str] = None
) -> None:
    if log_file:
        logging.basicConfig(
            level=log_level,
            filename=log_file,
            filemode="w",
            format=LOG_FORMAT,
            force=True,
        )
    else:
        logging.basicConfig(
            level=log_level,
            format=LOG_FORMAT,
        )


@contextmanager
def log_to_file(log_file: str) -> Iterator[logging.Handler]:
    """copy package log records into log_file while the block runs"""
    handler = logging.FileHandler(log_file, mode="w")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    try:
        yield handler
    finally:
        logger.removeHandler(handler)
        handler.close()


class NBTPlannerException(Exception):
    pass


class ValidationError(NBTPlannerException):
    pass


class NoDistributionError(NBTPlannerException):
    pass


class UndefinedOrientationError(NBTPlannerException):
    pass


class InfeasibleStartError(NBTPlannerException):
    pass


class EmptyReferenceError(NBTPlannerException):
    pass


class MetricsError(NBTPlannerException):
    pass


def as_points(points: Union[Sequence, np.ndarray], name: str = "points") -> np.ndarray:
    """list of 3D points -> finite float array of shape (N, 3)"""
    array = np.asarray(points, dtype=float)
    if array.size == 0:
        return np.zeros((0, 3))
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2 or array.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (N, 3), got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} contain non-finite coordinates")
    return array


def as_vector(value: Union[Sequence, np.ndarray], size: int, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float).reshape(-1)
    if array.shape != (size,):
        raise ValidationError(f"{name} must have {size} elements, got {array.shape[0]}")
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} must be finite")
    return array


def per_joint(value: Union[float, Iterable[float]], n_dof: int, name: str) -> np.ndarray:
    """scalar or list setting -> vector with one entry per joint"""
    if isinstance(value, (int, float)):
        return np.full(n_dof, float(value))
    return as_vector(list(value), n_dof, name)


def unit(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm < 1e-12 or not math.isfinite(norm):
        raise ValidationError("cannot normalize a zero-length vector")
    return vector / norm


def probability_to_log_odds(p: float) -> float:
    return math.log(p / (1.0 - p))


def log_odds_to_probability(log_odds: Union[float, np.ndarray]):
    probability = 1.0 / (1.0 + np.exp(-np.asarray(log_odds, dtype=float)))
    if probability.ndim == 0:
        return float(probability)
    return probability
