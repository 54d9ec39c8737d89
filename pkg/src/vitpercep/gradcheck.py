"""Central finite-difference verification of the analytic image gradients.

The check runs in float64 only; at step 1e-5 a float32 difference quotient
is pure rounding noise. Instances are screened deterministically so the
objective is smooth in the probed neighborhood: sorted feature rows must
have no near-ties (the transport term's permutation must not flip under the
probe), feature differences and pixel differences must sit clear of the
absolute-value kinks.
"""

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import losses, rng
from .autodiff import Tape, Tensor
from .errors import ContractError
from .losses import LossConfig

FD_STEP = 1e-5
REL_TOLERANCE = 1e-4
REL_FLOOR = 1e-6      # denominators below this count as "both negligible"
TIE_MARGIN = 1e-4     # min spacing demanded between values the probe could move


def central_difference(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """(f(x+h e_i) - f(x-h e_i)) / 2h for every component i."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.reshape(-1)[i] += step
        xm.reshape(-1)[i] -= step
        flat[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g


def max_relative_error(g_ref: np.ndarray, g_test: np.ndarray,
                       floor: float = REL_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(g_ref), np.abs(g_test)), floor)
    return float(np.max(np.abs(g_ref - g_test) / denom))


def make_objective(i_ref: np.ndarray, weights, cfg: LossConfig):
    """Scalar total-loss closure in i_recon with reference features cached.

    Caching is sound because the reference path never depends on i_recon;
    the recon path is identical to the one total_loss records.
    """
    cfg = cfg.resolved()
    ref = np.ascontiguousarray(i_ref, dtype=np.float64)
    ref_feats, _ = enc.extract(
        Tensor(ref), weights, cfg.layer, feature_kind=cfg.feature_kind,
        mask_ratio=cfg.mask_ratio, seed=cfg.seed,
        apply_final_norm=cfg.apply_final_norm,
    )
    ref_t = Tensor(ref)

    def objective(i_recon: np.ndarray) -> float:
        recon_t = Tensor(np.ascontiguousarray(i_recon, dtype=np.float64))
        deblur = losses._deblur_graph(recon_t, ref_t, cfg.deblur_metric,
                                      cfg.charbonnier_eps)
        percep = losses._percep_graph(recon_t, ref_feats, weights, cfg)
        return ad.add(deblur, ad.scale(percep, cfg.lam)).item()

    return objective


def _smoothness_margins(i_recon, i_ref, weights, cfg: LossConfig):
    """(min sorted-row gap, min |feature diff|, min |pixel diff|) at this pair."""
    fa, _ = enc.extract(Tensor(i_recon), weights, cfg.layer,
                        feature_kind=cfg.feature_kind,
                        mask_ratio=cfg.mask_ratio, seed=cfg.seed,
                        apply_final_norm=cfg.apply_final_norm)
    fb, _ = enc.extract(Tensor(i_ref), weights, cfg.layer,
                        feature_kind=cfg.feature_kind,
                        mask_ratio=cfg.mask_ratio, seed=cfg.seed,
                        apply_final_norm=cfg.apply_final_norm)
    gaps = [np.diff(np.sort(m, axis=1), axis=1).min() for m in (fa.data, fb.data)]
    feat_diff = float(np.abs(fa.data - fb.data).min())
    pix_diff = float(np.abs(np.asarray(i_recon) - np.asarray(i_ref)).min())
    return float(min(gaps)), feat_diff, pix_diff


def make_instances(weights, cfg: LossConfig, count: int, seed: int = 0,
                   margin: float = TIE_MARGIN, max_candidates: int = 400):
    """Deterministic screened (i_recon, i_ref) pairs, smooth under FD probes."""
    cfg = cfg.resolved()
    c = weights.config
    shape = (c.image_size, c.image_size, c.channels)
    size = int(np.prod(shape))
    out = []
    for cand in range(max_candidates):
        if len(out) == count:
            break
        recon = rng.uniforms(seed, f"fd-recon-{cand}", size).reshape(shape)
        ref = rng.uniforms(seed, f"fd-ref-{cand}", size).reshape(shape)
        gap, feat_diff, pix_diff = _smoothness_margins(recon, ref, weights, cfg)
        # the probe moves features by ~1e-7 and pixels by exactly the step;
        # demand clearance well above both
        if gap > margin and feat_diff > margin * 0.1 and pix_diff > margin:
            out.append((recon, ref))
    if len(out) < count:
        raise ContractError(
            f"only {len(out)} of {count} screened instances found; margins too strict"
        )
    return out


def check_instance(i_recon, i_ref, weights, cfg: LossConfig,
                   step: float = FD_STEP, corrupt: float = 0.0) -> float:
    """Max relative error between analytic and FD gradients for one pair."""
    analytic = losses.loss_gradient(i_recon, i_ref, weights, cfg)
    if corrupt:
        analytic = analytic + corrupt
    fd = central_difference(make_objective(i_ref, weights, cfg), i_recon, step)
    return max_relative_error(fd, analytic)


def check_percep_instance(i_recon, i_ref, weights, cfg: LossConfig,
                          step: float = FD_STEP) -> float:
    """Like check_instance but on the perceptual term alone.

    In the combined objective the pixel term dominates the gradient field;
    isolating the feature term checks its gradient at its own scale.
    """
    cfg = cfg.resolved()
    ref = np.ascontiguousarray(i_ref, dtype=np.float64)
    ref_feats, _ = enc.extract(
        Tensor(ref), weights, cfg.layer, feature_kind=cfg.feature_kind,
        mask_ratio=cfg.mask_ratio, seed=cfg.seed,
        apply_final_norm=cfg.apply_final_norm,
    )

    def objective(arr):
        t = Tensor(np.ascontiguousarray(arr, dtype=np.float64))
        return losses._percep_graph(t, ref_feats, weights, cfg).item()

    tape = Tape()
    recon_t = tape.watch(np.ascontiguousarray(i_recon, dtype=np.float64))
    percep = losses._percep_graph(recon_t, ref_feats, weights, cfg)
    analytic = tape.gradients(percep, [recon_t])[0]
    fd = central_difference(objective, np.asarray(i_recon, dtype=np.float64), step)
    return max_relative_error(fd, analytic)


def run_suite(weights, count: int = 5, seed: int = 0, step: float = FD_STEP,
              threshold: float = REL_TOLERANCE, corrupt: float = 0.0,
              configs: dict = None) -> list:
    """FD-check each loss kind on `count` screened instances.

    The balance factor is pinned to 1 for both kinds so the perceptual
    gradient stays material next to the pixel term; everything else keeps
    its per-kind defaults.
    """
    if weights.dtype != np.float64:
        weights = weights.astype(np.float64)
    if configs is None:
        # default tap layer clamped so any toy depth works out of the box
        layer = min(losses.DEFAULT_LAYER, weights.config.num_layers)
        configs = {
            "local": LossConfig(loss_kind="local", layer=layer, lam=1.0),
            "global": LossConfig(loss_kind="global", layer=layer, lam=1.0),
        }
    results = []
    for name, cfg in configs.items():
        cfg = cfg.resolved()
        worst = 0.0
        for i_recon, i_ref in make_instances(weights, cfg, count, seed=seed):
            err = check_instance(i_recon, i_ref, weights, cfg,
                                 step=step, corrupt=corrupt)
            worst = max(worst, err)
        results.append({
            "loss_kind": name,
            "instances": count,
            "max_rel_err": worst,
            "threshold": threshold,
            "passed": bool(worst < threshold),
        })
    return results
