import math
from typing import Tuple

import numpy as np


class Calc:
    """
    Shape and numeric helpers shared by ops, blocks and the cost analyzer
    """

    @staticmethod
    def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
        """
        floor((size + 2p - k) / s) + 1
        """
        assert size + 2 * padding >= k, f"kernel larger than padded input: {size=} {k=} {padding=}"
        return (size + 2 * padding - k) // stride + 1

    @staticmethod
    def same_padding(k: int) -> int:
        # 3x3 -> 1, 1x1 -> 0, 7x7 -> 3
        assert k % 2 == 1, f"odd kernel expected: {k=}"
        return k // 2

    @staticmethod
    def fan_in(shape: Tuple[int, ...]) -> int:
        # conv: Cin*k*k, fc: Cin
        return int(np.prod(shape[1:]))

    @staticmethod
    def kaiming_std(fan_in: int) -> float:
        # ReLU gain sqrt(2)
        return math.sqrt(2.0 / fan_in)

    @staticmethod
    def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
        """
        |a - n| / max(|a|, |n|, floor) elementwise
        """
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        return np.abs(analytic - numeric) / denom

    @staticmethod
    def round_to(value: float, unit: float, digits: int = 2) -> float:
        """
        value / unit rounded to `digits` decimals (0.01M / 0.01G display)
        """
        return round(value / unit, digits)
