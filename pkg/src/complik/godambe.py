"""Sensitivity (H) and variability (J) matrices and the Godambe sandwich.

Three routes are available: closed-form matrices supplied by the model
(``analytic``), unit-level averages over the observed data (``empirical``),
and averages over datasets simulated from the full model (``simulated``).

Scale convention: every :class:`GodambeEstimate` holds *total* information
for a dataset of ``n`` units. The empirical estimators below return per-unit
averages and are multiplied by ``n`` in :func:`estimate_godambe`; the Monte
Carlo estimators simulate datasets of the observed size and are already on
the total scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core.linalg import repair_psd, sym_inverse, symmetrize
from .core.model import CompositeModel
from .core.params import PartitionedParams
from .core.rng import RngStream

METHODS = ("analytic", "empirical", "simulated")
H_FORMS = ("bartlett", "hessian")
DEFAULT_M = 1000


class SmallSampleWarning(UserWarning):
    """Empirical matrices from fewer than ``10 * d`` independent units."""


@dataclass(frozen=True)
class GodambeEstimate:
    H: np.ndarray
    J: np.ndarray
    Ginv: np.ndarray
    method: str
    meta: dict = field(default_factory=dict)

    @property
    def at(self) -> str | None:
        """Evaluation-point tag: ``"constrained"``, ``"global"`` or None."""
        return self.meta.get("at")

    @property
    def Hinv(self) -> np.ndarray:
        return sym_inverse(self.H)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "H": self.H.tolist(),
            "J": self.J.tolist(),
            "Ginv": self.Ginv.tolist(),
            "meta": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.meta.items()},
        }


def _values(theta):
    return theta.values if isinstance(theta, PartitionedParams) else np.asarray(theta, dtype=float)


def _warn_small(model, n):
    if n < 10 * model.dim:
        warnings.warn(
            f"empirical matrices from n={n} units (< 10 d = {10 * model.dim}) are unreliable",
            SmallSampleWarning,
            stacklevel=3,
        )


def default_h_form(model: CompositeModel) -> str:
    return "bartlett" if model.has_analytic_score else "hessian"


def empirical_J(model: CompositeModel, theta, data) -> np.ndarray:
    """``(1/n) sum_i cU(theta; y_i) cU(theta; y_i)^T`` (per-unit scale)."""
    n = model.n_units(data)
    if n < 2:
        raise ValueError("empirical variability needs at least 2 independent units")
    _warn_small(model, n)
    u = model.unit_scores(_values(theta), data)
    return symmetrize(u.T @ u / n)


def empirical_H_hessian(model: CompositeModel, theta, data) -> np.ndarray:
    """Minus the average per-unit Hessian (per-unit scale)."""
    n = model.n_units(data)
    if n < 1:
        raise ValueError("need at least one unit")
    h = -model.hessian(_values(theta), data) / n
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite Hessian entries")
    return symmetrize(h)


def empirical_H_bartlett(model: CompositeModel, theta, data) -> np.ndarray:
    """Average over units of the summed per-component score outer products."""
    n = model.n_units(data)
    if n < 1:
        raise ValueError("need at least one unit")
    c = model.component_scores(_values(theta), data).reshape(-1, model.dim)
    return symmetrize(c.T @ c / n)


def _chunk_size(model, n, budget=2_000_000):
    per_dataset = max(1, n * model.n_components * model.dim)
    return max(1, budget // per_dataset)


def mc_moments(model: CompositeModel, theta, n: int, M_values, stream: RngStream, h_form=None):
    """Monte Carlo ``(H, J)`` for each ``M`` in ``M_values`` from nested prefixes.

    Dataset ``m`` is always drawn from ``stream.child(m)``, so the estimate for
    a smaller ``M`` is exactly the one a standalone run with that ``M`` gives.
    """
    theta = model.check_params(_values(theta))
    h_form = h_form or default_h_form(model)
    if h_form not in H_FORMS:
        raise ValueError(f"h_form must be one of {H_FORMS}")
    M_values = sorted({int(m) for m in np.atleast_1d(M_values)})
    if M_values[0] < 2:
        raise ValueError("M must be at least 2")
    chunk = _chunk_size(model, n)
    d = model.dim
    j_acc = np.zeros((d, d))
    h_acc = np.zeros((d, d))
    out = {}
    start = 0
    for target in M_values:
        while start < target:
            size = min(chunk, target - start)
            data = model.simulate_many(theta, n, size, stream, start=start)
            if h_form == "bartlett":
                comp = model.component_scores(theta, data)
                s = comp.sum(axis=(-3, -2))
                flat = comp.reshape(-1, d)
                h_acc += flat.T @ flat
            else:
                s = model.unit_scores(theta, data).sum(axis=-2)
                h_acc -= model.hessian(theta, data)
            j_acc += s.T @ s
            start += size
        out[target] = (symmetrize(h_acc / target), symmetrize(j_acc / target))
    return out


def mc_J(model: CompositeModel, theta, M: int, stream: RngStream, n: int = 1) -> np.ndarray:
    """``(1/M) sum_m cU(theta; y^m) cU(theta; y^m)^T`` over simulated n-unit datasets."""
    return mc_moments(model, theta, n, [M], stream, h_form="bartlett")[M][1]


def mc_H(model: CompositeModel, theta, M: int, stream: RngStream, n: int = 1, h_form=None) -> np.ndarray:
    return mc_moments(model, theta, n, [M], stream, h_form=h_form)[M][0]


def assemble_godambe(H, J, method: str, meta: dict | None = None) -> GodambeEstimate:
    """``G^{-1} = H^{-1} J H^{-1}``; H must be positive definite, J is PSD-repaired."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    H = symmetrize(H)
    J = repair_psd(J)
    hinv = sym_inverse(H)
    ginv = symmetrize(hinv @ J @ hinv)
    return GodambeEstimate(H=H, J=J, Ginv=ginv, method=method, meta=dict(meta or {}))


def estimate_godambe(
    model: CompositeModel,
    theta,
    data,
    method: str,
    *,
    M: int = DEFAULT_M,
    stream: RngStream | None = None,
    h_form: str | None = None,
    at: str | None = None,
) -> GodambeEstimate:
    """Total-scale H, J and G^{-1} at ``theta`` for a dataset like ``data``."""
    theta = model.check_params(_values(theta))
    n = model.n_units(data)
    meta = {"n": n, "at": at, "scale": "total", "theta": theta.tolist()}
    if method == "analytic":
        if not model.has_analytic_matrices:
            raise NotImplementedError(f"{model!r} has no analytic H and J")
        H, J = model.analytic_H(theta, n), model.analytic_J(theta, n)
    elif method == "empirical":
        h_form = h_form or default_h_form(model)
        J = n * empirical_J(model, theta, data)
        if h_form == "bartlett":
            H = n * empirical_H_bartlett(model, theta, data)
        else:
            H = n * empirical_H_hessian(model, theta, data)
        meta["h_form"] = h_form
    elif method == "simulated":
        if stream is None:
            raise ValueError("simulated matrices need an RngStream")
        h_form = h_form or default_h_form(model)
        H, J = mc_moments(model, theta, n, [M], stream, h_form)[M]
        meta.update(M=int(M), h_form=h_form, seed=stream.master_seed,
                    stream=[stream.stream_id, *stream.path])
    else:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    return assemble_godambe(H, J, method, meta)
