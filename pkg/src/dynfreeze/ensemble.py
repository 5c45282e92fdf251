"""Dipolar spin ensembles, product initial states and static Hamiltonian terms.

The static Hamiltonian is

    H0 = sum_{i<j} J_ij (sx_i sx_j + sy_i sy_j - sz_i sz_j) + sum_i h_i sz_i

with spin-1/2 operators s = sigma / 2 and dipolar couplings
J_ij = J0 (3 cos^2 theta_ij - 1) / r_ij^3 measured against the z axis.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConstructionError
from .units import J0_NV

ENSEMBLE_SCHEMA = "dynfreeze.ensemble/1"
QUANTIZATION_AXIS = np.array([0.0, 0.0, 1.0])
MAGIC_ANGLE = math.acos(1.0 / math.sqrt(3.0))


def dipolar_coupling(r_i, r_j, J0=J0_NV):
    """Dipolar coupling between two spins at positions ``r_i``, ``r_j`` (nm).

    Returns ``J0 (3 cos^2 theta - 1) / r^3`` in rad/us, with theta the angle
    between ``r_j - r_i`` and the z axis.
    """
    d = np.asarray(r_j, dtype=float) - np.asarray(r_i, dtype=float)
    r = float(np.linalg.norm(d))
    if r == 0.0:
        raise ValueError("coincident spin positions have no dipolar coupling")
    cos_theta = d[2] / r
    return J0 * (3.0 * cos_theta**2 - 1.0) / r**3


def coupling_matrix(positions, J0=J0_NV):
    """Symmetric matrix of pairwise dipolar couplings with zero diagonal."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(pos)
    J = np.zeros((n, n))
    if n < 2:
        return J
    d = pos[None, :, :] - pos[:, None, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    iu = np.triu_indices(n, 1)
    if np.any(r2[iu] == 0.0):
        raise ValueError("coincident spin positions have no dipolar coupling")
    r = np.sqrt(r2[iu])
    cos2 = d[..., 2][iu] ** 2 / r2[iu]
    J[iu] = J0 * (3.0 * cos2 - 1.0) / r**3
    return J + J.T


@dataclass(frozen=True, eq=False)
class SpinEnsemble:
    """Positions, couplings and on-site fields of ``n`` spin-1/2 sensors.

    ``couplings`` and ``disorder`` are in rad/us; ``positions`` in nm. The
    arrays are made read-only so an ensemble can be shared between workers.
    """

    positions: np.ndarray
    couplings: np.ndarray
    disorder: np.ndarray
    J0: float = J0_NV
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("positions", "couplings", "disorder"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.disorder)
        if self.positions.shape != (n, 3) or self.couplings.shape != (n, n):
            raise ConstructionError(
                f"inconsistent shapes: positions {self.positions.shape}, "
                f"couplings {self.couplings.shape}, disorder {self.disorder.shape}"
            )
        if not np.array_equal(self.couplings, self.couplings.T):
            raise ConstructionError("coupling matrix is not symmetric")
        if np.any(np.diag(self.couplings) != 0.0):
            raise ConstructionError("coupling matrix has a nonzero diagonal")

    @property
    def n(self):
        return len(self.disorder)

    @classmethod
    def from_positions(cls, positions, disorder=None, J0=J0_NV, params=None):
        pos = np.asarray(positions, dtype=float).reshape(-1, 3)
        if disorder is None:
            disorder = np.zeros(len(pos))
        return cls(pos, coupling_matrix(pos, J0), np.asarray(disorder, float), J0, dict(params or {}))

    def pairs(self):
        """Iterate over ``(i, j, J_ij)`` for ``i < j``."""
        iu, ju = np.triu_indices(self.n, 1)
        for i, j in zip(iu, ju):
            yield int(i), int(j), float(self.couplings[i, j])

    def min_pair_distance(self):
        if self.n < 2:
            return math.inf
        d = self.positions[None] - self.positions[:, None]
        r = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
        return float(r[np.triu_indices(self.n, 1)].min())

    def coupling_mismatch(self):
        """Largest deviation between stored and recomputed couplings."""
        return float(np.max(np.abs(self.couplings - coupling_matrix(self.positions, self.J0)), initial=0.0))

    # -- serialization -----------------------------------------------------

    def to_dict(self, include_couplings=False):
        doc = {
            "schema": ENSEMBLE_SCHEMA,
            "n": self.n,
            "J0_rad_per_us_nm3": self.J0,
            "positions_nm": self.positions.tolist(),
            "disorder_rad_per_us": self.disorder.tolist(),
            "params": dict(self.params),
        }
        if include_couplings:
            doc["couplings_rad_per_us"] = self.couplings.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != ENSEMBLE_SCHEMA:
            raise ConstructionError(f"unsupported ensemble schema {doc.get('schema')!r}")
        ens = cls.from_positions(
            doc["positions_nm"], doc["disorder_rad_per_us"], doc["J0_rad_per_us_nm3"], doc.get("params")
        )
        if ens.n != doc["n"]:
            raise ConstructionError(f"document declares n={doc['n']} but lists {ens.n} spins")
        stored = doc.get("couplings_rad_per_us")
        if stored is not None and not np.allclose(stored, ens.couplings, rtol=1e-12, atol=0.0):
            raise ConstructionError("stored couplings disagree with positions")
        return ens

    def to_json(self, path=None, include_couplings=False):
        text = json.dumps(self.to_dict(include_couplings), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source):
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source))

    def fingerprint(self):
        """Short content hash used to tag simulation outputs."""
        h = hashlib.sha256()
        for arr in (self.positions, self.disorder):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(self.J0).encode())
        return h.hexdigest()[:16]


def sample_ensemble(n, density, min_distance=2.0, disorder_width=0.0, seed=0, J0=J0_NV, max_tries=10_000):
    """Random ensemble of ``n`` spins in a cube of volume ``n / density``.

    Positions are drawn uniformly and rejected if closer than
    ``min_distance`` (nm) to an accepted spin. On-site fields are Gaussian
    with standard deviation ``disorder_width`` (rad/us). Identical arguments
    give identical ensembles.
    """
    if n < 1:
        raise ConstructionError("n must be at least 1")
    if density <= 0:
        raise ConstructionError("density must be positive")
    if min_distance < 0 or disorder_width < 0:
        raise ConstructionError("min_distance and disorder_width must be non-negative")
    rng = np.random.default_rng(seed)
    side = (n / density) ** (1.0 / 3.0)
    positions = np.empty((n, 3))
    accepted = 0
    tries = 0
    while accepted < n:
        cand = rng.uniform(0.0, side, size=3)
        if accepted:
            d2 = np.sum((positions[:accepted] - cand) ** 2, axis=1)
            if d2.min() < min_distance**2:
                tries += 1
                if tries > max_tries:
                    raise ConstructionError(
                        f"min_distance={min_distance} nm cannot be met at density={density} nm^-3 "
                        f"after {max_tries} rejections (placed {accepted} of {n} spins)"
                    )
                continue
        positions[accepted] = cand
        accepted += 1
        tries = 0
    disorder = rng.normal(0.0, disorder_width, size=n) if disorder_width > 0 else np.zeros(n)
    params = {
        "density_per_nm3": density,
        "min_distance_nm": min_distance,
        "disorder_width_rad_per_us": disorder_width,
        "seed": seed,
    }
    return SpinEnsemble.from_positions(positions, disorder, J0, params)


@dataclass(frozen=True)
class ProductState:
    """Every spin in cos(theta/2)|up> + exp(i phi) sin(theta/2)|down>."""

    theta: float
    phi: float

    @property
    def bloch(self):
        """Per-spin Pauli expectations (<sigma_x>, <sigma_y>, <sigma_z>)."""
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])

    @property
    def spinor(self):
        return np.array(
            [math.cos(self.theta / 2), np.exp(1j * self.phi) * math.sin(self.theta / 2)], dtype=complex
        )

    def density_matrix(self):
        psi = self.spinor
        return np.outer(psi, psi.conj())


def initial_state(theta, phi):
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"theta={theta} outside [0, pi]")
    return ProductState(float(theta), float(phi) % (2.0 * math.pi))


@dataclass(frozen=True)
class StaticHamiltonianTerms:
    """Term lists of H0: couplings ``(i, j, J_ij)`` and on-site ``(i, h_i)``."""

    n: int
    coupling_terms: tuple
    onsite_terms: tuple


def static_terms(ensemble):
    couplings = tuple((i, j, J) for i, j, J in ensemble.pairs() if J != 0.0)
    onsite = tuple((i, float(h)) for i, h in enumerate(ensemble.disorder) if h != 0.0)
    return StaticHamiltonianTerms(ensemble.n, couplings, onsite)
