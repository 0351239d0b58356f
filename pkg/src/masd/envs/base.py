from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np


@dataclass
class StepResult:
    obs: List[np.ndarray]
    reward: np.ndarray  # extrinsic, one entry per agent
    done: bool
    info: Dict[str, float] = field(default_factory=dict)
