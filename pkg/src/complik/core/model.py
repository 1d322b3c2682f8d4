"""The contract every composite-likelihood model implements.

Parameters travel on their natural scale as plain float arrays. Each model also
declares a componentwise map to an unconstrained *internal* scale used by the
optimizers:

    identity   theta in R
    log        theta > 0
    logit      theta in (0, 1)
    logit2     theta in (0, 2)
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from scipy import special

from .linalg import symmetrize
from .rng import RngStream

_EPS = np.finfo(float).eps


def _to_internal(kind, x):
    if kind == "identity":
        return x
    if kind == "log":
        return np.log(x)
    if kind == "logit":
        return special.logit(x)
    if kind == "logit2":
        return special.logit(x / 2.0)
    raise ValueError(f"unknown transform {kind!r}")


def _from_internal(kind, z):
    if kind == "identity":
        return z
    if kind == "log":
        return np.exp(z)
    if kind == "logit":
        return special.expit(z)
    if kind == "logit2":
        return 2.0 * special.expit(z)
    raise ValueError(f"unknown transform {kind!r}")


def _derivative(kind, z):
    """d theta / d internal."""
    if kind == "identity":
        return 1.0
    if kind == "log":
        return np.exp(z)
    if kind == "logit":
        s = special.expit(z)
        return s * (1.0 - s)
    if kind == "logit2":
        s = special.expit(z)
        return 2.0 * s * (1.0 - s)
    raise ValueError(f"unknown transform {kind!r}")


def fd_step(theta, power=1.0 / 3.0):
    """Per-coordinate difference step ``eps**power * max(1, |theta_i|)``."""
    return _EPS**power * np.maximum(1.0, np.abs(theta))


class CompositeModel(ABC):
    """Abstract pairwise/composite likelihood model.

    Subclasses fix ``param_names`` and ``transforms`` and implement simulation,
    the composite log-likelihood and per-component scores. Data arrays have
    units on axis ``-2``; leading axes are treated as a batch of datasets by
    :meth:`component_scores` and everything derived from it.
    """

    param_names: tuple[str, ...] = ()
    transforms: tuple[str, ...] = ()
    has_analytic_score = False
    has_analytic_matrices = False

    @property
    def dim(self) -> int:
        return len(self.param_names)

    @property
    @abstractmethod
    def n_components(self) -> int:
        """Number K of likelihood components per unit."""

    def index(self, names) -> tuple[int, ...]:
        if isinstance(names, str):
            names = [names]
        out = []
        for name in names:
            if isinstance(name, (int, np.integer)):
                out.append(int(name))
            elif name in self.param_names:
                out.append(self.param_names.index(name))
            else:
                raise KeyError(f"unknown parameter {name!r}; expected one of {self.param_names}")
        return tuple(out)

    def check_params(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise ValueError(f"non-finite parameters {theta}")
        return theta

    def in_bounds(self, theta) -> bool:
        try:
            self.check_params(theta)
        except ValueError:
            return False
        return True

    # internal scale

    def to_internal(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.array([_to_internal(k, t) for k, t in zip(self.transforms, theta)])

    def from_internal(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        return np.array([_from_internal(k, z) for k, z in zip(self.transforms, phi)])

    def dtheta_dphi(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        return np.array([_derivative(k, z) for k, z in zip(self.transforms, phi)], dtype=float)

    # data

    def n_units(self, data) -> int:
        return np.shape(data)[-2]

    @abstractmethod
    def simulate(self, theta, n: int, stream) -> np.ndarray:
        """One dataset of ``n`` independent units drawn from the full model."""

    def simulate_many(self, theta, n: int, M: int, stream: RngStream, start: int = 0) -> np.ndarray:
        """Datasets ``start..start+M-1``; dataset ``m`` uses sub-stream ``stream.child(m)``."""
        return np.stack([self.simulate(theta, n, stream.child(m)) for m in range(start, start + M)])

    @abstractmethod
    def loglik(self, theta, data) -> float:
        """Composite log-likelihood of a single dataset."""

    @abstractmethod
    def component_scores(self, theta, data) -> np.ndarray:
        """Per-unit, per-component scores with shape ``(..., n, K, d)``."""

    def unit_scores(self, theta, data) -> np.ndarray:
        return self.component_scores(theta, data).sum(axis=-2)

    def score(self, theta, data) -> np.ndarray:
        return self.unit_scores(theta, data).sum(axis=-2)

    hessian_step_power = 1.0 / 3.0

    def hessian(self, theta, data) -> np.ndarray:
        """Hessian of the composite log-likelihood by central differences of the score.

        Batched data gives the Hessian of the summed log-likelihood.
        """
        theta = self.check_params(theta)
        h = fd_step(theta, self.hessian_step_power)
        cols = []
        for a in range(self.dim):
            up, dn = theta.copy(), theta.copy()
            up[a] += h[a]
            dn[a] -= h[a]
            su = self.score(up, data)
            sd = self.score(dn, data)
            g = (su - sd) / (2.0 * h[a])
            cols.append(g.reshape(-1, self.dim).sum(axis=0))
        return symmetrize(np.column_stack(cols))

    def default_init(self, data) -> np.ndarray:
        raise NotImplementedError

    def analytic_H(self, theta, n: int) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no analytic sensitivity matrix")

    def analytic_J(self, theta, n: int) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no analytic variability matrix")


class Reparameterized(CompositeModel):
    """Model ``base`` expressed in new coordinates ``phi_i = log(theta_i)``.

    Only componentwise log maps are supported; they are all the invariance
    checks need. Scores pick up the diagonal Jacobian ``D = d theta / d phi``
    and the expected matrices transform as ``D H D`` and ``D J D``.
    """

    def __init__(self, base: CompositeModel, log_params):
        self.base = base
        self.log_idx = base.index(log_params)
        for i in self.log_idx:
            if base.transforms[i] != "log":
                raise ValueError(f"parameter {base.param_names[i]!r} is not positive-valued")
        names, transforms = list(base.param_names), list(base.transforms)
        for i in self.log_idx:
            names[i] = f"log_{names[i]}"
            transforms[i] = "identity"
        self.param_names = tuple(names)
        self.transforms = tuple(transforms)
        self.has_analytic_score = base.has_analytic_score
        self.has_analytic_matrices = base.has_analytic_matrices
        self.hessian_step_power = base.hessian_step_power

    @property
    def n_components(self):
        return self.base.n_components

    def to_base(self, phi) -> np.ndarray:
        theta = np.array(phi, dtype=float).ravel()
        idx = list(self.log_idx)
        theta[idx] = np.exp(theta[idx])
        return theta

    def from_base(self, theta) -> np.ndarray:
        phi = np.array(theta, dtype=float).ravel()
        idx = list(self.log_idx)
        phi[idx] = np.log(phi[idx])
        return phi

    def jacobian(self, phi) -> np.ndarray:
        d = np.ones(self.dim)
        idx = list(self.log_idx)
        d[idx] = np.exp(np.asarray(phi, dtype=float)[idx])
        return d

    def check_params(self, phi):
        phi = super().check_params(phi)
        self.base.check_params(self.to_base(phi))
        return phi

    def n_units(self, data):
        return self.base.n_units(data)

    def simulate(self, phi, n, stream):
        return self.base.simulate(self.to_base(phi), n, stream)

    def loglik(self, phi, data):
        return self.base.loglik(self.to_base(phi), data)

    def component_scores(self, phi, data):
        return self.base.component_scores(self.to_base(phi), data) * self.jacobian(phi)

    def score(self, phi, data):
        return self.base.score(self.to_base(phi), data) * self.jacobian(phi)

    def default_init(self, data):
        return self.from_base(self.base.default_init(data))

    def analytic_H(self, phi, n):
        D = self.jacobian(phi)
        return self.base.analytic_H(self.to_base(phi), n) * np.outer(D, D)

    def analytic_J(self, phi, n):
        D = self.jacobian(phi)
        return self.base.analytic_J(self.to_base(phi), n) * np.outer(D, D)
