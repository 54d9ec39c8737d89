"""Loss algebra over encoder features, differentiable to the input image.

Two perceptual terms are provided. The local term is an entry-wise absolute
difference between feature matrices of the two images (an l2 variant exists
behind a flag since both readings are defensible). The global term treats
each token row as an empirical 1D distribution and sums, over tokens, the
p-Wasserstein distance computed by sorting both rows ascending; the outer
1/p root is applied by default, with a no-root variant behind a flag.

The pixel-space term and the perceptual term combine as
    total = pixel_term + lam * percep_term
and every report satisfies that identity to float rounding. All public
functions accept plain arrays; gradient paths run the same graph with the
reconstruction image watched on a tape.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from .autodiff import Tape, Tensor
from .errors import ContractError, DimensionError, NonFiniteError

DEBLUR_METRICS = ("l1", "l2", "charbonnier", "psnr")
DEFAULT_LAYER = 5
DEFAULT_P = 2.0
DEFAULT_CHARBONNIER_EPS = 1e-3
# local and global defaults differ: the masking and the balance factor were
# tuned per loss kind
DEFAULT_LAM = {"local": 1.0, "global": 1e-5}
DEFAULT_MASK_RATIO = {"local": 0.5, "global": 0.0}


@dataclass(frozen=True)
class LossConfig:
    loss_kind: str = "local"
    layer: int = DEFAULT_LAYER
    feature_kind: str = "token"
    mask_ratio: float = None  # None -> per-kind default
    lam: float = None         # None -> per-kind default
    p: float = DEFAULT_P
    deblur_metric: str = "l1"
    charbonnier_eps: float = DEFAULT_CHARBONNIER_EPS
    seed: int = 0
    local_norm: str = "l1"          # printed formula; "l2" variant available
    local_reduction: str = "sum"    # "mean" variant available
    wasserstein_root: bool = True   # False -> true p-th power, no outer root
    apply_final_norm: bool = False

    def __post_init__(self):
        if self.loss_kind not in ("local", "global"):
            raise ContractError(f"loss_kind {self.loss_kind!r} not in ('local', 'global')")
        if self.feature_kind not in enc.FEATURE_KINDS:
            raise ContractError(f"feature_kind {self.feature_kind!r}")
        if self.deblur_metric not in DEBLUR_METRICS:
            raise ContractError(f"deblur_metric {self.deblur_metric!r} not in {DEBLUR_METRICS}")
        if self.layer < 1:
            raise ContractError(f"layer must be >= 1, got {self.layer}")
        if self.p < 1:
            raise ContractError(f"p must be >= 1, got {self.p}")
        if self.lam is not None and self.lam < 0:
            raise ContractError(f"lam must be >= 0, got {self.lam}")
        if self.mask_ratio is not None and not 0.0 <= self.mask_ratio < 1.0:
            raise ContractError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.charbonnier_eps <= 0:
            raise ContractError("charbonnier_eps must be positive")
        if self.local_norm not in ("l1", "l2"):
            raise ContractError(f"local_norm {self.local_norm!r} not in ('l1', 'l2')")
        if self.local_reduction not in ("sum", "mean"):
            raise ContractError(f"local_reduction {self.local_reduction!r}")

    def resolved(self) -> "LossConfig":
        """Materialize the per-kind defaults so nothing is left implicit."""
        lam = DEFAULT_LAM[self.loss_kind] if self.lam is None else self.lam
        ratio = DEFAULT_MASK_RATIO[self.loss_kind] if self.mask_ratio is None else self.mask_ratio
        return replace(self, lam=float(lam), mask_ratio=float(ratio))


@dataclass(frozen=True)
class LossReport:
    deblur_term: float
    percep_term: float
    total: float
    gradient: np.ndarray = None


# ---------------------------------------------------------------------------
# graph builders (Tensor in, scalar Tensor out); public wrappers below


def _deblur_graph(a: Tensor, b: Tensor, metric: str, eps: float) -> Tensor:
    diff = ad.sub(a, b)
    n = diff.size
    if metric == "l1":
        return ad.scale(ad.sum_all(ad.absolute(diff)), 1.0 / n)
    if metric == "l2":
        return ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / n)
    if metric == "charbonnier":
        sq = ad.add_const(ad.mul(diff, diff), eps * eps)
        return ad.scale(ad.sum_all(ad.sqrt(sq)), 1.0 / n)
    # psnr: -10*log10(peak^2/mse) with peak 1 is 10*log10(mse)
    mse = ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / n)
    if mse.item() == 0.0:
        raise NonFiniteError("psnr metric undefined for identical images (MSE = 0)")
    return ad.scale(ad.log(mse), 10.0 / math.log(10.0))


def _local_graph(fa: Tensor, fb: Tensor, norm: str, reduction: str) -> Tensor:
    if tuple(fa.shape) != tuple(fb.shape):
        raise DimensionError(f"feature shapes differ: {tuple(fa.shape)} vs {tuple(fb.shape)}")
    diff = ad.sub(fa, fb)
    if norm == "l1":
        out = ad.sum_all(ad.absolute(diff))
    else:
        out = ad.sqrt(ad.sum_all(ad.mul(diff, diff)))
    if reduction == "mean":
        out = ad.scale(out, 1.0 / diff.size)
    return out


def _wasserstein_graph(fa: Tensor, fb: Tensor, p: float, root: bool) -> Tensor:
    """Sum over rows of the sorted 1D transport distance; fa, fb are k x d."""
    if tuple(fa.shape) != tuple(fb.shape):
        raise DimensionError(f"feature shapes differ: {tuple(fa.shape)} vs {tuple(fb.shape)}")
    sa = ad.sort_rows(fa)
    sb = ad.sort_rows(fb)
    powered = ad.powc(ad.absolute(ad.sub(sa, sb)), p)
    per_row = ad.sum_rows(powered)
    if root:
        per_row = ad.powc(per_row, 1.0 / p)
    return ad.sum_all(per_row)


def _as_matrix(x, name: str) -> Tensor:
    t = ad.as_tensor(x)
    if t.data.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {tuple(t.shape)}")
    return t


# ---------------------------------------------------------------------------
# public scalar API


def deblur_loss(i_recon, i_ref, metric: str = "l1",
                charbonnier_eps: float = DEFAULT_CHARBONNIER_EPS) -> float:
    """Pixel-space reconstruction metric: mean-reduced l1/l2/charbonnier,
    or negated PSNR (peak 1)."""
    if metric not in DEBLUR_METRICS:
        raise ContractError(f"metric {metric!r} not in {DEBLUR_METRICS}")
    a, b = ad.as_tensor(i_recon), ad.as_tensor(i_ref)
    if tuple(a.shape) != tuple(b.shape):
        raise DimensionError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return _deblur_graph(a, b, metric, charbonnier_eps).item()


def local_loss(f_recon, f_ref, norm: str = "l1", reduction: str = "sum") -> float:
    """Entry-wise feature difference; callers must pass positionally aligned
    matrices (same mask)."""
    a = _as_matrix(f_recon, "f_recon")
    b = _as_matrix(f_ref, "f_ref")
    return _local_graph(a, b, norm, reduction).item()


def wasserstein_1d(u, v, p: float = DEFAULT_P, root: bool = True) -> float:
    """Order-matching transport cost between two equal-size 1D samples."""
    if p < 1:
        raise ContractError(f"p must be >= 1, got {p}")
    tu, tv = ad.as_tensor(u), ad.as_tensor(v)
    if tu.data.ndim != 1 or tv.data.ndim != 1:
        raise DimensionError(
            f"expected vectors, got shapes {tuple(tu.shape)} and {tuple(tv.shape)}"
        )
    if tu.size != tv.size:
        raise DimensionError(f"length mismatch: {tu.size} vs {tv.size}")
    if tu.size == 0:
        raise DimensionError("empty samples")
    ru = ad.reshape(tu, (1, tu.size))
    rv = ad.reshape(tv, (1, tv.size))
    return _wasserstein_graph(ru, rv, p, root).item()


def global_loss(f_recon, f_ref, p: float = DEFAULT_P, root: bool = True) -> float:
    """Sum over token rows of the sorted 1D transport distance."""
    if p < 1:
        raise ContractError(f"p must be >= 1, got {p}")
    a = _as_matrix(f_recon, "f_recon")
    b = _as_matrix(f_ref, "f_ref")
    return _wasserstein_graph(a, b, p, root).item()


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2/MSE); math.inf marks identical images."""
    if peak <= 0:
        raise ContractError(f"peak must be positive, got {peak}")
    aa = np.asarray(a, dtype=np.float64)
    bb = np.asarray(b, dtype=np.float64)
    if aa.shape != bb.shape:
        raise DimensionError(f"image shapes differ: {aa.shape} vs {bb.shape}")
    mse = float(np.mean((aa - bb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# composed objective


def _check_images(i_recon, i_ref, config: enc.ViTConfig):
    a = np.asarray(i_recon)
    b = np.asarray(i_ref)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    want = (config.image_size, config.image_size, config.channels)
    if a.shape != want:
        raise DimensionError(f"image shape {a.shape}, encoder config wants {want}")


def _percep_graph(recon_t: Tensor, ref_feats: Tensor, weights, cfg: LossConfig) -> Tensor:
    feats, _ = enc.extract(
        recon_t, weights, cfg.layer, feature_kind=cfg.feature_kind,
        mask_ratio=cfg.mask_ratio, seed=cfg.seed,
        apply_final_norm=cfg.apply_final_norm,
    )
    if cfg.loss_kind == "local":
        return _local_graph(feats, ref_feats, cfg.local_norm, cfg.local_reduction)
    return _wasserstein_graph(feats, ref_feats, cfg.p, cfg.wasserstein_root)


def total_loss(i_recon, i_ref, weights, config: LossConfig,
               want_gradient: bool = False) -> LossReport:
    """Composite objective of one reconstruction against its reference.

    Both images go through the encoder with the same mask seed, so the
    perceptual term always compares positionally aligned tokens. When
    want_gradient is set, the returned gradient is d(total)/d(i_recon) with
    the reference treated as constant.
    """
    cfg = config.resolved()
    if cfg.layer > weights.config.num_layers:
        raise ContractError(
            f"layer {cfg.layer} exceeds encoder depth {weights.config.num_layers}"
        )
    _check_images(i_recon, i_ref, weights.config)
    dtype = weights.dtype
    recon = np.ascontiguousarray(i_recon, dtype=dtype)
    ref = np.ascontiguousarray(i_ref, dtype=dtype)

    ref_feats, _ = enc.extract(
        Tensor(ref), weights, cfg.layer, feature_kind=cfg.feature_kind,
        mask_ratio=cfg.mask_ratio, seed=cfg.seed,
        apply_final_norm=cfg.apply_final_norm,
    )
    tape = Tape() if want_gradient else None
    recon_t = tape.watch(recon) if want_gradient else Tensor(recon)
    ref_t = Tensor(ref)

    deblur = _deblur_graph(recon_t, ref_t, cfg.deblur_metric, cfg.charbonnier_eps)
    percep = _percep_graph(recon_t, ref_feats, weights, cfg)
    total = ad.add(deblur, ad.scale(percep, cfg.lam))

    gradient = None
    if want_gradient:
        gradient = tape.gradients(total, [recon_t])[0]
    return LossReport(
        deblur_term=deblur.item(),
        percep_term=percep.item(),
        total=total.item(),
        gradient=gradient,
    )


def loss_gradient(i_recon, i_ref, weights, config: LossConfig) -> np.ndarray:
    """d(total)/d(i_recon) as an image-shaped array."""
    return total_loss(i_recon, i_ref, weights, config, want_gradient=True).gradient
