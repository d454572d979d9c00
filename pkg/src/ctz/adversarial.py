"""Hard instances: N-blocks made of 2^(h*l) distinct l-vectors, repeated M times.

Every l-window of such a sequence is one of at most N patterns, so its
l-block entropy is at most log2(N)/l per letter, while the single-letter
statistics of a random segment set look close to uniform.
"""

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from .errors import ParameterError
from .stats import EmpiricalModel, default_depth
from .tree import model_tree

TOL = 1e-12


@dataclass(frozen=True)
class AdversarialParams:
    ell: int
    h: Fraction
    seed: int = 0
    M: int = 16
    A: int = 2

    def __post_init__(self):
        object.__setattr__(self, "h", Fraction(self.h))
        if self.ell < 1:
            raise ParameterError("segment length must be positive")
        if not 2 <= self.A <= 256:
            raise ParameterError(f"alphabet size must be in 2..256, got {self.A}")
        if self.M < 1:
            raise ParameterError("M must be positive")
        hl = self.h * self.ell
        if hl.denominator != 1 or hl <= 0:
            raise ParameterError(f"h*l = {hl} is not a positive integer")
        if self.ell * math.log2(self.A) > 62:
            raise ParameterError("A**l too large to enumerate")
        if self.T > self.A ** self.ell:
            raise ParameterError(f"only {self.A ** self.ell} distinct {self.ell}-vectors exist, need {self.T}")

    @property
    def T(self) -> int:
        """Number of distinct segments, 2^(h*l)."""
        return 1 << int(self.h * self.ell)

    @property
    def N(self) -> int:
        return self.ell * self.T

    @property
    def K_hat(self) -> Fraction:
        return Fraction(self.N * self.M, self.M - 1)


def segments(params: AdversarialParams) -> np.ndarray:
    """The T distinct segments in block order, one per row."""
    rng = np.random.default_rng(params.seed)
    idx = rng.choice(params.A ** params.ell, size=params.T, replace=False, shuffle=True)
    powers = params.A ** np.arange(params.ell - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] // powers) % params.A).astype(np.uint8)


def generate(params: AdversarialParams) -> np.ndarray:
    """M identical copies of one block of shuffled distinct segments."""
    block = segments(params).reshape(-1)
    return np.tile(block, params.M)


@dataclass
class EntropyReport:
    hu: float
    h_ell: float
    log_bound: float
    two_h: float
    h_one: float
    min_segment_probability: Fraction
    segment_floor: Fraction
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        return {"hu": self.hu, "h_ell": self.h_ell, "log_bound": self.log_bound,
                "two_h": self.two_h, "h_one": self.h_one,
                "min_segment_probability": str(self.min_segment_probability),
                "segment_floor": str(self.segment_floor), **self.checks,
                "passed": self.passed}


def verify_entropy_bounds(X, params: AdversarialParams) -> EntropyReport:
    """Evaluate hu <= H(l) <= log2(N)/l <= 2h and the segment probability floor."""
    if params.M < 2:
        raise ParameterError("need M >= 2")
    N, ell = params.N, params.ell
    t = min(N, max(default_depth(N), ell))
    model = EmpiricalModel(X, N, params.A, t)
    hu = float(model_tree(model, params.K_hat).hu)
    h_ell = model.block_entropy(ell)
    h_one = model.block_entropy(1)
    log_bound = math.log2(N) / ell
    two_h = float(2 * params.h)
    block = np.asarray(X[:N]).reshape(params.T, ell)
    pmin = min(model.probability(seg) for seg in block)
    floor = Fraction(params.M - 1, params.M * N)
    checks = {
        "hu_le_h_ell": hu <= h_ell + TOL,
        "h_ell_le_log_bound": h_ell <= log_bound + TOL,
        "log_bound_le_two_h": log_bound <= two_h + TOL,
        "segment_probability": pmin >= floor,
    }
    return EntropyReport(hu, h_ell, log_bound, two_h, h_one, pmin, floor, checks)
