"""Attack hyperparameters and the perturbation container with its file format."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Union

import numpy as np

from ..exceptions import FormatError, InvalidKError
from ..io import read_container, split_payload, write_container
from ..numerics import SparsityPattern, check_exponent, lp_norm

PERT_MAGIC = b"TPUPERT1"
FORMAT_VERSION = 1


def _exp_to_json(p: float):
    return "inf" if math.isinf(p) else p


def _exp_from_json(p) -> float:
    return math.inf if p in ("inf", "Infinity") else float(p)


@dataclass
class AttackConfig:
    """Hyperparameters of one attack run.

    ``top_k`` counts blocks (patches), not scalar entries.  ``layer`` is a
    cut-point name or index of the victim model.
    """

    layer: Union[str, int]
    top_k: int
    q: float = 1.0
    p: float = math.inf
    patch_size: int = 1
    n_steps: int = 100
    init_truncation: float = 1.0
    reduction_steps: int = 10
    seed: int = 0
    magnitude: float = 1.0

    def __post_init__(self):
        self.q = check_exponent(self.q, "q")
        self.p = check_exponent(self.p, "p")
        if math.isinf(self.q):
            raise ValueError("q must be finite")
        if int(self.top_k) < 1:
            raise InvalidKError(f"top_k must be positive, got {self.top_k}")
        if int(self.n_steps) < 1 or int(self.reduction_steps) < 1:
            raise ValueError("n_steps and reduction_steps must be positive")
        if int(self.reduction_steps) > int(self.n_steps):
            raise ValueError("reduction_steps must not exceed n_steps")
        if not 0 < self.init_truncation <= 1:
            raise ValueError("init_truncation must lie in (0, 1]")
        if not 0 < self.magnitude <= 1:
            raise ValueError("magnitude must lie in (0, 1]")
        if int(self.patch_size) < 1:
            raise ValueError("patch_size must be positive")
        self.top_k = int(self.top_k)
        self.n_steps = int(self.n_steps)
        self.reduction_steps = int(self.reduction_steps)
        self.patch_size = int(self.patch_size)
        self.seed = int(self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p"] = _exp_to_json(self.p)
        d["q"] = _exp_to_json(self.q)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        d["p"] = _exp_from_json(d.get("p", math.inf))
        d["q"] = _exp_from_json(d.get("q", 1.0))
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def top_k_for_damage(height: int, width: int, patch_size: int, damage: float = 0.05) -> int:
    """Number of patches that damages ``damage`` of the pixels, rounded up."""
    # subtract a hair so that exact products like 0.05 * 400 do not round up
    k = math.ceil(damage * height * width / patch_size**2 - 1e-9)
    n_blocks = -(-height // patch_size) * -(-width // patch_size)
    return int(min(max(k, 1), n_blocks))


@dataclass(eq=False)
class Perturbation:
    """A universal perturbation together with its provenance."""

    eps: np.ndarray
    pattern: SparsityPattern
    config: Optional[AttackConfig] = None
    source_model_id: str = ""
    objective_trace: List[float] = field(default_factory=list)
    method: str = field(default="", compare=False)

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=np.float64)
        if self.eps.size != self.pattern.total_len:
            raise FormatError(f"eps has {self.eps.size} entries, pattern covers {self.pattern.total_len}")

    @property
    def shape(self):
        return self.eps.shape

    @property
    def support(self) -> np.ndarray:
        """Sorted ids of blocks holding a nonzero entry."""
        return self.pattern.active_blocks(self.eps)

    def norm(self, p: Optional[float] = None) -> float:
        if p is None:
            p = self.config.p if self.config is not None else math.inf
        return lp_norm(self.eps, p)

    def header(self) -> dict:
        return {
            "format": "tpower-uap-perturbation",
            "version": FORMAT_VERSION,
            "shape": list(self.eps.shape),
            "pattern": self.pattern.to_dict(),
            "config": None if self.config is None else self.config.to_dict(),
            "source_model_id": self.source_model_id,
            "support": [int(b) for b in self.support],
            "objective_trace": [float(v) for v in self.objective_trace],
        }

    def save(self, path) -> None:
        write_container(path, PERT_MAGIC, self.header(), [self.eps])

    @classmethod
    def load(cls, path) -> "Perturbation":
        header, payload = read_container(path, PERT_MAGIC)
        if header.get("version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported perturbation format version {header.get('version')}")
        shape = tuple(header["shape"])
        (eps,) = split_payload(payload, [shape])
        cfg = header.get("config")
        pert = cls(
            eps=eps,
            pattern=SparsityPattern.from_dict(header["pattern"]),
            config=None if cfg is None else AttackConfig.from_dict(cfg),
            source_model_id=header.get("source_model_id", ""),
            objective_trace=list(header.get("objective_trace", [])),
        )
        if [int(b) for b in pert.support] != header["support"]:
            raise FormatError(f"{path}: stored support does not match the payload")
        return pert

    @classmethod
    def zeros(cls, shape, patch_size: int = 1) -> "Perturbation":
        return cls(np.zeros(shape), pattern_for_shape(shape, patch_size), method="zero")


def pattern_for_shape(shape, patch_size: int = 1) -> SparsityPattern:
    """Grid pattern for HWC images, singleton blocks for flat inputs."""
    shape = tuple(shape)
    if len(shape) == 3:
        return SparsityPattern.from_grid(shape[0], shape[1], shape[2], patch_size)
    if len(shape) == 2:
        return SparsityPattern.from_grid(shape[0], shape[1], 1, patch_size)
    if patch_size != 1:
        raise ValueError("patch sizes other than 1 need an image-shaped input")
    return SparsityPattern.singletons(int(np.prod(shape)))
