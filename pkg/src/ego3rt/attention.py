"""Back-tracing attention operators.

The cross-attention core projects each eye's fixed 3D position into every
visible camera, samples the 2D feature pyramids at learned offset locations
and fuses the samples with jointly normalized adaptive weights.  Two
self-attention operators (deformable over the polar map, dot-product within
each polar ray) and a depthwise-conv FFN complete a decoder layer.

Parameter tensors carry a full view axis; cameras address their slice by
view index, so rig ordering never matters.  Offsets live in normalized
image units: ``(u, v)`` in ``[0, 1]^2`` at every pyramid scale.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError, ShapeError
from .geometry import scene_geometry
from .ops import FLOAT, Block, Param, linear, masked_softmax_last, softmax_last, gelu, depthwise_conv3x3


@dataclass
class EyeState:
    """Eye query embeddings plus their fixed ego-frame positions."""

    embeddings: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        if len(self.embeddings) != len(self.positions):
            raise ShapeError("embeddings and positions disagree on eye count")


class FeaturePyramid:
    """Per-view, per-scale 2D feature maps, keyed by ascending view index.

    ``maps[t][l]`` is the ``(H_l, W_l, C)`` map of the view with index
    ``views[t]`` at scale ``l``; extents strictly decrease with ``l``.
    """

    def __init__(self, maps, views=None):
        self.maps = [[np.asarray(m, dtype=FLOAT) for m in per_view] for per_view in maps]
        self.views = tuple(views) if views is not None else tuple(
            range(1, len(self.maps) + 1)
        )
        if len(self.views) != len(self.maps):
            raise ShapeError("one view index per view required")
        n_scales = {len(per_view) for per_view in self.maps}
        if len(n_scales) != 1:
            raise ShapeError("all views need the same number of scales")
        for per_view in self.maps:
            for l in range(1, len(per_view)):
                if not (
                    per_view[l].shape[0] < per_view[l - 1].shape[0]
                    and per_view[l].shape[1] < per_view[l - 1].shape[1]
                ):
                    raise ShapeError("scale extents must strictly decrease")
        for l in range(self.n_scales):
            channels = {per_view[l].shape[2] for per_view in self.maps}
            if len(channels) != 1:
                raise ShapeError(f"channel counts differ across views at scale {l}")

    @property
    def n_views(self):
        return len(self.maps)

    @property
    def n_scales(self):
        return len(self.maps[0])

    @property
    def channels(self):
        return self.maps[0][0].shape[2]

    def zeros_like_maps(self):
        return [[np.zeros_like(m) for m in per_view] for per_view in self.maps]


def init_offset_bias(n_heads, n_scales, n_views, n_points):
    """Fixed sampling-offset bias: the k-th point's bias has norm exactly k.

    Directions are spread evenly on the circle by (head, point) so no two
    points of one (head, scale, view) triple coincide; k counts from 1.
    """
    if min(n_heads, n_scales, n_views, n_points) < 1:
        raise DomainError("offset bias needs positive counts")
    bias = np.zeros((n_heads, n_scales, n_views, n_points, 2), dtype=FLOAT)
    total = n_heads * n_points
    for h in range(n_heads):
        for k in range(1, n_points + 1):
            angle = 2.0 * np.pi * (h * n_points + k) / total
            bias[h, :, :, k - 1, 0] = k * np.cos(angle)
            bias[h, :, :, k - 1, 1] = k * np.sin(angle)
    return bias


class MvaaParams(Block):
    """Learnable tensors of the multi-view multi-scale adaptive attention."""

    def __init__(self, c_embed, c_feat, n_heads, n_scales, n_views, n_points, rng):
        if c_embed % n_heads:
            raise ConfigError(f"embedding width {c_embed} not divisible by {n_heads} heads")
        c_head = c_embed // n_heads
        self.n_heads, self.n_scales = n_heads, n_scales
        self.n_views, self.n_points = n_views, n_points
        self.c_feat = c_feat
        self.w_out = Param(
            rng.normal(0.0, c_head**-0.5, (n_heads, c_head, c_head)), "mvaa.w_out"
        )
        self.w_val = Param(
            rng.normal(0.0, c_feat**-0.5, (n_heads, c_head, c_feat)), "mvaa.w_val"
        )
        self.w_attn = Param(
            np.zeros((n_heads, n_scales, n_views, n_points, c_embed)), "mvaa.w_attn"
        )
        self.w_off = Param(
            np.zeros((n_heads, n_scales, n_views, n_points, 2, c_embed)), "mvaa.w_off"
        )
        self.b_off = Param(
            init_offset_bias(n_heads, n_scales, n_views, n_points),
            "mvaa.b_off",
            trainable=False,
        )


def attention_weights(params, y_q, visible):
    """Adaptive weights for one eye, normalized jointly over (scale, view, point).

    ``visible`` is a set of 1-based view indices; invisible views are masked
    before the softmax and come out exactly zero.  Returns ``(A, blind)``
    where ``blind`` flags an empty visible set (all-zero weights).
    """
    y_q = np.asarray(y_q, dtype=FLOAT)
    logits = np.einsum("hltkc,c->hltk", params.w_attn.value, y_q)
    vis = np.zeros(params.n_views, dtype=bool)
    for t in visible:
        vis[t - 1] = True
    mask = np.broadcast_to(vis[None, None, :, None], logits.shape)
    nh = params.n_heads
    probs, empty, _ = masked_softmax_last(
        logits.reshape(nh, -1), mask.reshape(nh, -1)
    )
    return probs.reshape(logits.shape), bool(empty.all())


def sampling_offsets(params, y_q):
    """Per-(head, scale, view, point) sampling offsets for one eye."""
    y_q = np.asarray(y_q, dtype=FLOAT)
    return np.einsum("hltkpc,c->hltkp", params.w_off.value, y_q) + params.b_off.value


def _check_pyramid(params, pyramid):
    if pyramid.n_views != params.n_views or pyramid.n_scales != params.n_scales:
        raise ConfigError(
            f"pyramid ({pyramid.n_views} views, {pyramid.n_scales} scales) does not "
            f"match attention parameters ({params.n_views}, {params.n_scales})"
        )
    if pyramid.channels != params.c_feat:
        raise ConfigError(
            f"pyramid channels {pyramid.channels} != value projection input {params.c_feat}"
        )


def mvaa_core(y, geom, pyramid, params):
    """Batched cross-attention update of all eye embeddings.

    ``geom`` caches the per-view projected eye locations and visibility;
    blind eyes (no visible view) pass through unchanged.  Returns
    ``(out, backward)`` with ``backward(d_out) -> (d_y, d_maps)``;
    parameter gradients accumulate in place and the frozen offset bias
    receives none by construction.
    """
    _check_pyramid(params, pyramid)
    y = np.asarray(y, dtype=FLOAT)
    n, c = y.shape
    nh, nl, nt, nk = params.n_heads, params.n_scales, params.n_views, params.n_points
    cf = params.c_feat

    wa = params.w_attn.value
    logits = np.einsum("hltkc,nc->nhltk", wa, y)
    mask = np.broadcast_to(geom.vis[:, None, None, :, None], logits.shape)
    probs_flat, _, smax_bwd = masked_softmax_last(
        logits.reshape(n, nh, -1), mask.reshape(n, nh, -1)
    )
    attn = probs_flat.reshape(n, nh, nl, nt, nk)

    wo = params.w_off.value
    offs = np.einsum("hltkpc,nc->nhltkp", wo, y) + params.b_off.value
    locs = geom.base_uv[:, None, None, :, None, :] + offs

    vals = np.empty((n, nh, nl, nt, nk, cf), dtype=FLOAT)
    grids = {}
    for t in range(nt):
        for l in range(nl):
            fmap = pyramid.maps[t][l]
            hl, wl = fmap.shape[:2]
            rows = np.ascontiguousarray(locs[:, :, l, t, :, 1].reshape(-1) * (hl - 1))
            cols = np.ascontiguousarray(locs[:, :, l, t, :, 0].reshape(-1) * (wl - 1))
            grids[t, l] = (rows, cols)
            vals[:, :, l, t] = kernels.sample_bilinear_fwd(
                fmap, rows, cols, wrap_cols=False
            ).reshape(n, nh, nk, cf)

    wv = params.w_val.value
    vproj = np.einsum("hvf,nhltkf->nhltkv", wv, vals)
    agg = np.einsum("nhltk,nhltkv->nhv", attn, vproj)
    head_out = np.einsum("hov,nhv->nho", params.w_out.value, agg).reshape(n, c)
    blind = geom.blind
    out = np.where(blind[:, None], y, head_out)

    def backward(d_out):
        d_out = np.asarray(d_out, dtype=FLOAT)
        d_head = np.where(blind[:, None], 0.0, d_out).reshape(n, nh, -1)
        d_y = np.where(blind[:, None], d_out, 0.0)

        params.w_out.grad += np.einsum("nho,nhv->hov", d_head, agg)
        d_agg = np.einsum("hov,nho->nhv", params.w_out.value, d_head)
        d_attn = np.einsum("nhltkv,nhv->nhltk", vproj, d_agg)
        d_vproj = np.einsum("nhltk,nhv->nhltkv", attn, d_agg)
        params.w_val.grad += np.einsum("nhltkv,nhltkf->hvf", d_vproj, vals)
        d_vals = np.einsum("hvf,nhltkv->nhltkf", wv, d_vproj)

        d_maps = pyramid.zeros_like_maps()
        d_offs = np.empty_like(offs)
        for t in range(nt):
            for l in range(nl):
                fmap = pyramid.maps[t][l]
                hl, wl = fmap.shape[:2]
                rows, cols = grids[t, l]
                d_slice = np.ascontiguousarray(d_vals[:, :, l, t].reshape(-1, cf))
                d_map, d_rows, d_cols = kernels.sample_bilinear_bwd(
                    fmap, rows, cols, d_slice, wrap_cols=False
                )
                d_maps[t][l] = d_map
                d_offs[:, :, l, t, :, 0] = (d_cols * (wl - 1)).reshape(n, nh, nk)
                d_offs[:, :, l, t, :, 1] = (d_rows * (hl - 1)).reshape(n, nh, nk)

        params.w_off.grad += np.einsum("nhltkp,nc->hltkpc", d_offs, y)
        d_y = d_y + np.einsum("hltkpc,nhltkp->nc", wo, d_offs)

        (d_logits_flat,) = smax_bwd(d_attn.reshape(n, nh, -1))
        d_logits = d_logits_flat.reshape(n, nh, nl, nt, nk)
        params.w_attn.grad += np.einsum("nhltk,nc->hltkc", d_logits, y)
        d_y = d_y + np.einsum("hltkc,nhltk->nc", wa, d_logits)
        return d_y, d_maps

    return out, backward


def mvaa(state, pyramid, rig, params, geom=None):
    """Spec surface: cross-attend ``state`` into ``pyramid`` through ``rig``."""
    if geom is None:
        geom = scene_geometry(rig, state.positions)
    return mvaa_core(state.embeddings, geom, pyramid, params)


# ---------------------------------------------------------------------------
# polar attention

class PolarAttnParams(Block):
    """Projections of the within-ray multi-head dot-product attention."""

    def __init__(self, c_embed, n_heads, rng):
        if c_embed % n_heads:
            raise ConfigError(f"width {c_embed} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        scale = c_embed**-0.5
        for name in ("w_q", "w_k", "w_v", "w_o"):
            setattr(self, name, Param(rng.normal(0.0, scale, (c_embed, c_embed)), f"polar.{name}"))
            bias = name.replace("w", "b")
            setattr(self, bias, Param(np.zeros(c_embed), f"polar.{bias}"))


def polar_attention(y, r_count, s_count, params):
    """Scaled dot-product attention within each polar ray independently.

    Eyes are grouped by ray (fixed azimuth, varying radius); the softmax
    runs over the ray's ``r_count`` positions only, so rays never exchange
    information.  Returns ``(out, backward)``; ``backward -> (d_y,)``.
    """
    y = np.asarray(y, dtype=FLOAT)
    n, c = y.shape
    if n != r_count * s_count:
        raise ShapeError(f"{n} eyes incompatible with {r_count} x {s_count} grid")
    nh = params.n_heads
    dh = c // nh
    rays = y.reshape(r_count, s_count, c).transpose(1, 0, 2)

    q, q_bwd = linear(params.w_q.value, params.b_q.value, rays)
    k, k_bwd = linear(params.w_k.value, params.b_k.value, rays)
    v, v_bwd = linear(params.w_v.value, params.b_v.value, rays)
    qh = q.reshape(s_count, r_count, nh, dh)
    kh = k.reshape(s_count, r_count, nh, dh)
    vh = v.reshape(s_count, r_count, nh, dh)
    logits = np.einsum("srhd,sphd->shrp", qh, kh) / np.sqrt(dh)
    probs, smax_bwd = softmax_last(logits)
    ctx = np.einsum("shrp,sphd->srhd", probs, vh).reshape(s_count, r_count, c)
    out_rays, o_bwd = linear(params.w_o.value, params.b_o.value, ctx)
    out = out_rays.transpose(1, 0, 2).reshape(n, c)

    def backward(d_out):
        d_rays = np.asarray(d_out, dtype=FLOAT).reshape(r_count, s_count, c).transpose(1, 0, 2)
        d_wo, d_bo, d_ctx = o_bwd(d_rays)
        params.w_o.grad += d_wo
        params.b_o.grad += d_bo
        d_ctx = d_ctx.reshape(s_count, r_count, nh, dh)
        d_probs = np.einsum("srhd,sphd->shrp", d_ctx, vh)
        d_vh = np.einsum("shrp,srhd->sphd", probs, d_ctx)
        (d_logits,) = smax_bwd(d_probs)
        d_logits /= np.sqrt(dh)
        d_qh = np.einsum("shrp,sphd->srhd", d_logits, kh)
        d_kh = np.einsum("shrp,srhd->sphd", d_logits, qh)
        d_y_rays = np.zeros_like(rays)
        for proj_bwd, grad, wp, bp in (
            (q_bwd, d_qh, params.w_q, params.b_q),
            (k_bwd, d_kh, params.w_k, params.b_k),
            (v_bwd, d_vh, params.w_v, params.b_v),
        ):
            d_w, d_b, d_in = proj_bwd(grad.reshape(s_count, r_count, c))
            wp.grad += d_w
            bp.grad += d_b
            d_y_rays += d_in
        return (d_y_rays.transpose(1, 0, 2).reshape(n, c),)

    return out, backward


# ---------------------------------------------------------------------------
# deformable self-attention over the polar map

class DeformableSelfAttnParams(Block):
    """Single-map deformable attention: offsets and weights over R x S eyes."""

    def __init__(self, c_embed, n_heads, n_points, map_shape, rng):
        if c_embed % n_heads:
            raise ConfigError(f"width {c_embed} not divisible by {n_heads} heads")
        c_head = c_embed // n_heads
        self.n_heads, self.n_points = n_heads, n_points
        self.w_attn = Param(np.zeros((n_heads, n_points, c_embed)), "dsa.w_attn")
        self.b_attn = Param(np.zeros((n_heads, n_points)), "dsa.b_attn")
        self.w_off = Param(np.zeros((n_heads, n_points, 2, c_embed)), "dsa.w_off")
        spread = init_offset_bias(n_heads, 1, 1, n_points)[:, 0, 0]
        self.b_off = Param(spread / max(map_shape), "dsa.b_off")
        self.w_val = Param(
            rng.normal(0.0, c_embed**-0.5, (n_heads, c_head, c_embed)), "dsa.w_val"
        )
        self.w_out = Param(
            rng.normal(0.0, c_head**-0.5, (n_heads, c_head, c_head)), "dsa.w_out"
        )


def deformable_self_attention(y, r_count, s_count, params):
    """Each eye samples learned offset points of the R x S eye map itself.

    Reference points are the eye's own (radial, angular) indices normalized
    to ``[0, 1]^2``; the angular axis is periodic with period 1.  Offsets
    and per-point weights are generated from the eye embedding; weights are
    softmax-normalized over the points of each head.

    Returns ``(out, backward)``; ``backward -> (d_y,)``.
    """
    y = np.asarray(y, dtype=FLOAT)
    n, c = y.shape
    if n != r_count * s_count:
        raise ShapeError(f"{n} eyes incompatible with {r_count} x {s_count} grid")
    nh, nk = params.n_heads, params.n_points
    value_map = np.ascontiguousarray(y.reshape(r_count, s_count, c))

    idx = np.arange(n)
    ref_r = (idx // s_count) / max(r_count - 1, 1)
    ref_a = (idx % s_count) / s_count

    logits = np.einsum("hkc,nc->nhk", params.w_attn.value, y) + params.b_attn.value
    probs, smax_bwd = softmax_last(logits)
    offs = np.einsum("hkpc,nc->nhkp", params.w_off.value, y) + params.b_off.value
    rows = np.ascontiguousarray(
        (ref_r[:, None, None] + offs[..., 0]).reshape(-1) * (r_count - 1)
    )
    cols = np.ascontiguousarray(
        (ref_a[:, None, None] + offs[..., 1]).reshape(-1) * s_count
    )
    sampled = kernels.sample_bilinear_fwd(value_map, rows, cols, wrap_cols=True)
    sampled = sampled.reshape(n, nh, nk, c)
    vproj = np.einsum("hvc,nhkc->nhkv", params.w_val.value, sampled)
    agg = np.einsum("nhk,nhkv->nhv", probs, vproj)
    out = np.einsum("hov,nhv->nho", params.w_out.value, agg).reshape(n, c)

    def backward(d_out):
        d_head = np.asarray(d_out, dtype=FLOAT).reshape(n, nh, -1)
        params.w_out.grad += np.einsum("nho,nhv->hov", d_head, agg)
        d_agg = np.einsum("hov,nho->nhv", params.w_out.value, d_head)
        d_probs = np.einsum("nhkv,nhv->nhk", vproj, d_agg)
        d_vproj = np.einsum("nhk,nhv->nhkv", probs, d_agg)
        params.w_val.grad += np.einsum("nhkv,nhkc->hvc", d_vproj, sampled)
        d_sampled = np.einsum("hvc,nhkv->nhkc", params.w_val.value, d_vproj)

        d_map, d_rows, d_cols = kernels.sample_bilinear_bwd(
            value_map, rows, cols,
            np.ascontiguousarray(d_sampled.reshape(-1, c)), wrap_cols=True,
        )
        d_offs = np.stack(
            [
                (d_rows * (r_count - 1)).reshape(n, nh, nk),
                (d_cols * s_count).reshape(n, nh, nk),
            ],
            axis=-1,
        )
        params.w_off.grad += np.einsum("nhkp,nc->hkpc", d_offs, y)
        params.b_off.grad += d_offs.sum(axis=0)
        d_y = np.einsum("hkpc,nhkp->nc", params.w_off.value, d_offs)

        (d_logits,) = smax_bwd(d_probs)
        params.w_attn.grad += np.einsum("nhk,nc->hkc", d_logits, y)
        params.b_attn.grad += d_logits.sum(axis=0)
        d_y = d_y + np.einsum("hkc,nhk->nc", params.w_attn.value, d_logits)
        d_y = d_y + d_map.reshape(n, c)
        return (d_y,)

    return out, backward


# ---------------------------------------------------------------------------
# feed-forward block with depthwise convolution

class FfnParams(Block):
    """Two pointwise linears around a 3x3 depthwise conv on the eye map."""

    def __init__(self, c_embed, c_hidden, rng):
        self.w_in = Param(rng.normal(0.0, c_embed**-0.5, (c_hidden, c_embed)), "ffn.w_in")
        self.b_in = Param(np.zeros(c_hidden), "ffn.b_in")
        dw = np.zeros((3, 3, c_hidden))
        dw[1, 1] = 1.0
        self.dw_kernel = Param(dw, "ffn.dw_kernel")
        self.dw_bias = Param(np.zeros(c_hidden), "ffn.dw_bias")
        self.w_out = Param(rng.normal(0.0, c_hidden**-0.5, (c_embed, c_hidden)), "ffn.w_out")
        self.b_out = Param(np.zeros(c_embed), "ffn.b_out")


def ffn_core(y, r_count, s_count, params):
    """Expansion -> depthwise 3x3 over the polar map -> GELU -> contraction.

    The depthwise conv wraps on the angular axis and zero-pads radially.
    Returns ``(out, backward)``; ``backward -> (d_y,)``.
    """
    y = np.asarray(y, dtype=FLOAT)
    n, c = y.shape
    if n != r_count * s_count:
        raise ShapeError(f"{n} eyes incompatible with {r_count} x {s_count} grid")
    h1, in_bwd = linear(params.w_in.value, params.b_in.value, y)
    hmap = h1.reshape(r_count, s_count, -1)
    h2, dw_bwd = depthwise_conv3x3(hmap, params.dw_kernel.value, wrap_cols=True)
    h2 = h2 + params.dw_bias.value
    h3, act_bwd = gelu(h2)
    out, out_bwd = linear(params.w_out.value, params.b_out.value, h3.reshape(n, -1))

    def backward(d_out):
        d_w2, d_b2, d_h3 = out_bwd(np.asarray(d_out, dtype=FLOAT))
        params.w_out.grad += d_w2
        params.b_out.grad += d_b2
        (d_h2,) = act_bwd(d_h3.reshape(h2.shape))
        params.dw_bias.grad += d_h2.sum(axis=(0, 1))
        d_k, d_hmap = dw_bwd(d_h2)
        params.dw_kernel.grad += d_k
        d_w1, d_b1, d_y = in_bwd(d_hmap.reshape(n, -1))
        params.w_in.grad += d_w1
        params.b_in.grad += d_b1
        return (d_y,)

    return out, backward


def ffn_dwconv(y, r_count, s_count, params):
    """Spec surface: the FFN core with its residual connection."""
    core_out, core_bwd = ffn_core(y, r_count, s_count, params)
    out = np.asarray(y, dtype=FLOAT) + core_out

    def backward(d_out):
        (d_y,) = core_bwd(d_out)
        return (d_y + np.asarray(d_out, dtype=FLOAT),)

    return out, backward


def sinusoidal_encoding(grid, c_embed):
    """Optional positional code from each eye's (radial, angular) indices."""
    n = grid.n_eyes
    idx = np.arange(n)
    coords = np.stack(
        [
            (idx // grid.s) / max(grid.r - 1, 1),
            (idx % grid.s) / grid.s,
        ],
        axis=1,
    )
    enc = np.zeros((n, c_embed), dtype=FLOAT)
    quarters = max(c_embed // 4, 1)
    freqs = 2.0 ** np.arange(quarters)
    for axis in range(2):
        phase = 2.0 * np.pi * coords[:, axis : axis + 1] * freqs
        enc[:, 2 * axis * quarters : (2 * axis + 1) * quarters] = np.sin(phase)
        half = enc[:, (2 * axis + 1) * quarters : (2 * axis + 2) * quarters]
        half[:] = np.cos(phase)[:, : half.shape[1]]
    return enc
