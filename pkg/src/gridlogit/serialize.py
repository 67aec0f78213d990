"""JSON model files.

Model files hold only deterministic content (no timestamps or timings), so
rerunning an estimation with the same data, configuration and seed
reproduces the file byte for byte.  Floats are written with Python's
shortest round-trip representation.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .model import MixtureModel, ModelSpec
from .support import EQUAL, UNEQUAL, UNSTRUCTURED, MixtureSupport

FORMAT = "gridlogit-model/1"


def _bounds_json(bounds):
    return [[None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi] for lo, hi in bounds]


def _bounds_from(raw):
    return tuple((-np.inf if lo is None else float(lo), np.inf if hi is None else float(hi)) for lo, hi in raw)


def support_to_dict(sup: MixtureSupport) -> dict:
    out = {"variant": sup.variant, "random_dims": list(sup.random_dims), "bounds": _bounds_json(sup.bounds)}
    if sup.variant == UNSTRUCTURED:
        out["n_classes"] = sup.n_classes
        out["points"] = sup.points.tolist()
    elif sup.variant == EQUAL:
        out["counts"] = list(sup.counts)
        out["alpha"] = sup.alpha.tolist()
        out["delta"] = sup.delta.tolist()
    else:
        out["lambdas"] = [lam.tolist() for lam in sup.lambdas]
    return out


def support_from_dict(d: dict) -> MixtureSupport:
    dims = tuple(d["random_dims"])
    bounds = _bounds_from(d.get("bounds") or [[None, None]] * len(dims))
    v = d["variant"]
    if v == UNSTRUCTURED:
        pts = np.asarray(d["points"], dtype=float).reshape(len(dims), int(d.get("n_classes", 1)) if not dims else -1)
        return MixtureSupport.unstructured(dims, pts, bounds)
    if v == EQUAL:
        return MixtureSupport.equal_grid(dims, d["alpha"], d["delta"], d["counts"], bounds)
    if v == UNEQUAL:
        return MixtureSupport.unequal_grid(dims, d["lambdas"], bounds)
    raise ValueError(f"unknown support variant {v!r}")


def model_to_dict(model: MixtureModel) -> dict:
    return {
        "fixed": {n: float(v) for n, v in zip(model.fixed_names, model.fixed)},
        "support": support_to_dict(model.support),
        "gamma": model.gamma.tolist(),
    }


def model_from_dict(d: dict) -> MixtureModel:
    fixed = d.get("fixed") or {}
    return MixtureModel(tuple(fixed), np.array(list(fixed.values()), dtype=float), support_from_dict(d["support"]), np.asarray(d["gamma"], dtype=float))


def fit_to_dict(fit, seed=None, config_hash: str | None = None, extra: dict | None = None) -> dict:
    out = {
        "format": FORMAT,
        "version": __version__,
        "spec": fit.spec.to_dict(),
        "model": model_to_dict(fit.model),
        "log_likelihood": fit.log_likelihood,
        "n_params": fit.n_params,
        "n_persons": fit.n_persons,
        "bic": fit.bic,
        "aic": fit.aic,
        "iterations": fit.iterations,
        "converged": bool(fit.converged),
        "ll_trajectory": [float(x) for x in fit.ll_trajectory],
        "seed": seed if seed is not None else fit.seed,
        "config_hash": config_hash,
    }
    if fit.standard_errors is not None:
        out["standard_errors"] = fit.standard_errors.as_dict()
    if extra:
        out.update(extra)
    return out


def save_fit(path, fit, **kw) -> None:
    text = json.dumps(fit_to_dict(fit, **kw), indent=1, allow_nan=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model_file(path) -> tuple[MixtureModel, ModelSpec, dict]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    return model_from_dict(d["model"]), ModelSpec.from_dict(d["spec"]), d
