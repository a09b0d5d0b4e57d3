"""Finite-difference verification suite for every differentiable operator.

Shared by the CLI gradcheck command and the acceptance tests.  Each entry
checks one operator (or a composite) over several seeds and reports the worst
relative error against its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import EigengapTooSmall
from .grid import GridSpec
from .network import ModelConfig, init_params, predict_offsets_batch, plane_from_offsets

SMOOTH_TOL = 1e-6
EIGEN_TOL = 1e-4
MODEL_TOL = 1e-4


def micro_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(
        grid=GridSpec(H=8, D=8, W=8, N=2, K=1),
        enc_channels=(4, 4, 4, 4),
        gru_layers=2,
        gru_hidden=4,
        decoder_channels=(4, 4, 4, 4, 3),
        seed=seed,
    )


@dataclass
class CheckResult:
    op: str
    max_rel_err: float
    tol: float
    status: str  # pass / fail / skipped


def _rand(rng, *shape):
    return ag.Tensor(rng.normal(size=shape))


def _check(name, tol, fn, seeds) -> CheckResult:
    worst = 0.0
    for seed in seeds:
        worst = max(worst, fn(np.random.default_rng(seed), seed))
    return CheckResult(name, worst, tol, "pass" if worst < tol else "fail")


def run_suite(seeds=(0, 1, 2, 3, 4), include_model: bool = True) -> list[CheckResult]:
    results = []

    def chk_conv(rng, seed):
        x, w, b = _rand(rng, 2, 2, 5, 5), _rand(rng, 3, 2, 3, 3), _rand(rng, 3)
        wt = ag.Tensor(rng.normal(size=(2, 3, 5, 5)))
        return ag.gradcheck(
            lambda x, w, b: ag.sum_all(ag.mul(ag.conv2d(x, w, b, 1, 1), wt)), [x, w, b], seed=seed
        )

    results.append(_check("conv2d", SMOOTH_TOL, chk_conv, seeds))

    def chk_conv_stride(rng, seed):
        x, w, b = _rand(rng, 1, 2, 6, 6), _rand(rng, 2, 2, 3, 3), _rand(rng, 2)
        wt = ag.Tensor(rng.normal(size=(1, 2, 3, 3)))
        return ag.gradcheck(
            lambda x, w, b: ag.sum_all(ag.mul(ag.conv2d(x, w, b, 2, 1), wt)), [x, w, b], seed=seed
        )

    results.append(_check("conv2d_stride2", SMOOTH_TOL, chk_conv_stride, seeds))

    def chk_gn(rng, seed):
        x, g, b = _rand(rng, 2, 6, 4, 4), _rand(rng, 6), _rand(rng, 6)
        wt = ag.Tensor(rng.normal(size=(2, 6, 4, 4)))
        return ag.gradcheck(
            lambda x, g, b: ag.sum_all(ag.mul(ag.group_norm(x, 3, g, b), wt)), [x, g, b], seed=seed
        )

    results.append(_check("group_norm", SMOOTH_TOL, chk_gn, seeds))

    for name, f in (("relu", ag.relu), ("sigmoid", ag.sigmoid), ("tanh", ag.tanh)):

        def chk_pw(rng, seed, f=f):
            # keep relu inputs away from the kink
            x = ag.Tensor(rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.2)
            wt = ag.Tensor(rng.normal(size=(3, 4)))
            return ag.gradcheck(lambda x: ag.sum_all(ag.mul(f(x), wt)), [x], seed=seed)

        results.append(_check(name, SMOOTH_TOL, chk_pw, seeds))

    def chk_binary(rng, seed):
        a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
        wt = ag.Tensor(rng.normal(size=(3, 4)))
        worst = ag.gradcheck(lambda a, b: ag.sum_all(ag.mul(ag.add(a, b), wt)), [a, b], seed=seed)
        worst = max(worst, ag.gradcheck(lambda a, b: ag.sum_all(ag.mul(ag.sub(a, b), wt)), [a, b], seed=seed))
        worst = max(worst, ag.gradcheck(lambda a, b: ag.sum_all(ag.mul(ag.mul(a, b), wt)), [a, b], seed=seed))
        worst = max(
            worst, ag.gradcheck(lambda a: ag.sum_all(ag.scalar_mul(ag.mul(a, a), 1.7)), [a], seed=seed)
        )
        return worst

    results.append(_check("add_sub_mul_scalar", SMOOTH_TOL, chk_binary, seeds))

    def chk_concat(rng, seed):
        a, b = _rand(rng, 2, 3), _rand(rng, 2, 2)
        wt = ag.Tensor(rng.normal(size=(2, 5)))
        return ag.gradcheck(
            lambda a, b: ag.sum_all(ag.mul(ag.concat([a, b], axis=1), wt)), [a, b], seed=seed
        )

    results.append(_check("concat", SMOOTH_TOL, chk_concat, seeds))

    def chk_l1(rng, seed):
        a, b = _rand(rng, 4, 4), _rand(rng, 4, 4)
        return ag.gradcheck(lambda a, b: ag.l1_mean(a, b), [a, b], seed=seed)

    results.append(_check("l1_mean", SMOOTH_TOL, chk_l1, seeds))

    def chk_eig(rng, seed):
        a = _rand(rng, 12, 4)
        wt = ag.Tensor(rng.normal(size=4))
        return ag.gradcheck(
            lambda a: ag.sum_all(ag.mul(ag.smallest_eigenvector(ag.gram(a)), wt)), [a], seed=seed
        )

    results.append(_check("smallest_eigenvector", EIGEN_TOL, chk_eig, seeds))

    # policy: a forced-degenerate eigengap is reported as skipped, not a failure
    try:
        ag.smallest_eigenvector(ag.Tensor(np.diag([1.0, 1.0 + 1e-12, 2.0, 3.0])))
        results.append(CheckResult("smallest_eigenvector_degenerate", np.nan, EIGEN_TOL, "fail"))
    except EigengapTooSmall:
        results.append(CheckResult("smallest_eigenvector_degenerate", np.nan, EIGEN_TOL, "skipped"))

    if include_model:

        def chk_model(rng, seed):
            cfg = micro_config(seed)
            params = init_params(cfg)
            grid = (rng.uniform(size=(1, 8, 8, 8)) < 0.3).astype(np.float64)
            wt = ag.Tensor(rng.normal(size=4))
            leaves = [params[k] for k in sorted(params.tensors)]

            def f(*_):
                offsets = predict_offsets_batch(grid, params, cfg)
                beta, _, _, _ = plane_from_offsets(ag.select(offsets, 0), cfg)
                return ag.add(ag.sum_all(ag.mul(beta, wt)), ag.mean_all(offsets))

            return ag.gradcheck(f, leaves, max_coords=2, seed=seed)

        results.append(_check("micro_model_end_to_end", MODEL_TOL, chk_model, seeds))

    return results
