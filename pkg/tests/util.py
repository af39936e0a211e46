"""Tools for testing."""

from pathlib import Path
from typing import Any

import numpy as np
import yaml


def support_file(name: str) -> Path:
    return Path(__file__).parent / "support" / name


def write_scenario(root: Path, name: str, **sections: Any) -> Path:
    """Copy a support scenario into ``root`` with sections overridden.

    Each keyword names a top-level key; dict values are merged into the
    section, anything else replaces it, and ``None`` removes it.
    """
    doc = yaml.safe_load(support_file(name).read_text())
    for key, value in sections.items():
        if value is None:
            doc.pop(key, None)
        elif isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key].update(value)
        else:
            doc[key] = value
    path = root / name
    path.write_text(yaml.safe_dump(doc))
    return path


def random_hermitian(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (z + z.conj().T)


def random_density(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = z @ z.conj().T
    return rho / np.trace(rho)


def wrapped(angle: float) -> float:
    """Reduce an angle to (-pi, pi]."""
    return float(np.angle(np.exp(1j * angle)))
