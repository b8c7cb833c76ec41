from .taa import taa
from .tgospa import (
    InstanceTooLargeError,
    TgospaParams,
    TgospaResult,
    WindowError,
    all_miss_cost,
    tgospa,
    tgospa_bruteforce,
)

__all__ = [
    "InstanceTooLargeError",
    "TgospaParams",
    "TgospaResult",
    "WindowError",
    "all_miss_cost",
    "taa",
    "tgospa",
    "tgospa_bruteforce",
]
