"""Hierarchical window / frame / global attention network for multi-view ERP depth.

Layout of a forward pass over ``S`` ERP frames of ``H x W`` pixels:

* convolutional stem down to ``H/32 x W/32`` feature maps with ``C`` channels,
* ``L`` blocks that run window attention on local tokens, attention over
  each frame's window summaries, attention over the summaries of all frames,
  then blend the fused summaries back into their windows,
* ``N4`` pre-norm window-attention refinement layers,
* a 1x1 head producing positive depth and a confidence in (0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numeric import (
    MhsaParams,
    gelu,
    init_linear,
    layernorm,
    layernorm_backward,
    mhsa_backward,
    mhsa_forward,
    mlp1,
    mlp1_backward,
)

__all__ = [
    "AhaConfig",
    "AhaNetwork",
    "complexity_report",
    "depth_head",
    "frame_attention",
    "frame_tok",
    "global_attention",
    "local_refinement",
    "pad_to_windows",
    "refinement_layer",
    "refinement_layer_backward",
    "relative_position_index",
    "untok",
    "win_tok",
    "window_attention",
    "window_attention_backward",
]

STEM_STRIDE = 32
_MHSA_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


@dataclass(frozen=True)
class AhaConfig:
    frames: int = 4
    channels: int = 128
    window: tuple[int, int] = (7, 7)
    blocks: int = 2
    refine_layers: int = 2
    num_heads: int = 4
    input_size: tuple[int, int] = (640, 320)  # (width, height)
    seed: int = 0
    stem_width: int = 32
    mlp_ratio: int = 2
    use_global: bool = True
    deterministic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(v) for v in self.window))
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        if min(self.window) < 1:
            raise ValueError("window extents must be >= 1")
        if self.frames < 1 or self.blocks < 1 or self.refine_layers < 1:
            raise ValueError("frames, blocks and refine_layers must be >= 1")
        if self.channels % self.num_heads:
            raise ValueError("channels must be divisible by num_heads")
        if min(self.input_size) < 1:
            raise ValueError("input size must be positive")

    @property
    def window_tokens(self) -> int:
        return self.window[0] * self.window[1]

    @property
    def token_grid(self) -> tuple[int, int]:
        """Stage-3 token grid ``(rows, cols)`` for the configured input."""
        w, h = self.input_size
        return (math.ceil(h / STEM_STRIDE), math.ceil(w / STEM_STRIDE))

    @classmethod
    def from_dict(cls, cfg: dict[str, Any]) -> "AhaConfig":
        """Build from the JSON layout ``{S, C, window, L, N4, heads, input, seed}``."""
        known = {"S", "C", "window", "L", "N4", "heads", "input", "seed", "use_global", "deterministic"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        mapping = {
            "S": "frames",
            "C": "channels",
            "window": "window",
            "L": "blocks",
            "N4": "refine_layers",
            "heads": "num_heads",
            "input": "input_size",
            "seed": "seed",
            "use_global": "use_global",
            "deterministic": "deterministic",
        }
        return cls(**{mapping[k]: v for k, v in cfg.items()})

    def to_dict(self) -> dict[str, Any]:
        return {
            "S": self.frames,
            "C": self.channels,
            "window": list(self.window),
            "L": self.blocks,
            "N4": self.refine_layers,
            "heads": self.num_heads,
            "input": list(self.input_size),
            "seed": self.seed,
            "use_global": self.use_global,
            "deterministic": self.deterministic,
        }


# -- tokenizers -------------------------------------------------------------


def pad_to_windows(f: np.ndarray, ph: int, pw: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad ``(C, H, W)`` on the bottom/right to multiples of the window.

    Returns ``(padded, valid)`` where ``valid`` is an ``(H', W')`` mask of
    real (non-pad) cells.
    """
    c, h, w = f.shape
    hp = math.ceil(h / ph) * ph
    wp = math.ceil(w / pw) * pw
    out = np.zeros((c, hp, wp), dtype=f.dtype)
    out[:, :h, :w] = f
    valid = np.zeros((hp, wp), dtype=bool)
    valid[:h, :w] = True
    return out, valid


def win_tok(f: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Partition a padded ``(C, H', W')`` map into ``(M, ph*pw, C)`` local tokens.

    Windows are enumerated row-major over the window grid and cells
    row-major inside each window.
    """
    c, hp, wp = f.shape
    if hp % ph or wp % pw:
        raise ValueError(f"feature map {hp}x{wp} is not padded to a multiple of {ph}x{pw}")
    nh, nw = hp // ph, wp // pw
    t = f.reshape(c, nh, ph, nw, pw).transpose(1, 3, 2, 4, 0)
    return t.reshape(nh * nw, ph * pw, c)


def untok(tokens: np.ndarray, hp: int, wp: int, ph: int, pw: int) -> np.ndarray:
    """Exact inverse of :func:`win_tok`."""
    m, p, c = tokens.shape
    nh, nw = hp // ph, wp // pw
    if m != nh * nw or p != ph * pw:
        raise ValueError("token layout does not match the requested map size")
    t = tokens.reshape(nh, nw, ph, pw, c).transpose(4, 0, 2, 1, 3)
    return t.reshape(c, hp, wp)


def frame_tok(tokens: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Per-window mean of local tokens, ``(M, P, C) -> (M, C)``.

    ``valid`` (``(M, P)``) excludes padding cells from the mean.
    """
    if valid is None:
        return tokens.mean(axis=1)
    w = valid.astype(tokens.dtype)[..., None]
    return (tokens * w).sum(axis=1) / w.sum(axis=1)


def relative_position_index(ph: int, pw: int) -> np.ndarray:
    """``(P, P)`` index into a ``(2ph-1)(2pw-1)`` relative-offset table."""
    rows, cols = np.meshgrid(np.arange(ph), np.arange(pw), indexing="ij")
    rows = rows.reshape(-1)
    cols = cols.reshape(-1)
    dr = rows[:, None] - rows[None, :] + ph - 1
    dc = cols[:, None] - cols[None, :] + pw - 1
    return dr * (2 * pw - 1) + dc


# -- attentions ---------------------------------------------------------------


def window_attention(
    tokens: np.ndarray,
    p: MhsaParams,
    table: np.ndarray,
    window: tuple[int, int],
    valid: np.ndarray | None = None,
):
    """Independent MHSA inside each window with a shared relative-bias table.

    ``tokens`` is ``(M, P, C)``; ``table`` is ``(heads, (2ph-1)(2pw-1))``.
    Padding cells (``valid == False``) are excluded as keys. Returns
    ``(out, cache)``.
    """
    idx = relative_position_index(*window)
    bias = table[:, idx]
    out, cache = mhsa_forward(tokens, p, bias=bias, key_mask=valid)
    return out, (cache, idx, table.shape)


def window_attention_backward(cache, gy):
    """Gradients of :func:`window_attention`; ``table`` replaces ``bias``."""
    inner, idx, table_shape = cache
    grads = mhsa_backward(inner, gy)
    gbias = grads.pop("bias")
    gtable = np.zeros(table_shape, dtype=gbias.dtype)
    for hh in range(table_shape[0]):
        np.add.at(gtable[hh], idx, gbias[hh])
    grads["table"] = gtable
    return grads


def frame_attention(summaries: np.ndarray, embedding: np.ndarray, p: MhsaParams, exact: bool = False):
    """MHSA over one frame's ``(M, C)`` summaries after adding its embedding."""
    out, _ = mhsa_forward(summaries + embedding, p, exact=exact)
    return out


def global_attention(summaries: np.ndarray, p: MhsaParams, exact: bool = False) -> np.ndarray:
    """MHSA over the ``S * M`` summaries of all frames; ``(S, M, C) -> (S, M, C)``."""
    s, m, c = summaries.shape
    out, _ = mhsa_forward(summaries.reshape(s * m, c), p, exact=exact)
    return out.reshape(s, m, c)


# -- refinement layer ----------------------------------------------------------


def refinement_layer(x: np.ndarray, lw: dict[str, Any], window, valid=None):
    """One pre-norm residual layer: ``x + MHSA_win(LN(x))`` then ``+ MLP(LN(x))``.

    ``lw`` holds ``ln1``/``ln2`` (gamma, beta) pairs, ``attn`` (MhsaParams),
    ``table`` and ``mlp`` (w1, b1, w2, b2).
    """
    n1, c_ln1 = layernorm(x, *lw["ln1"])
    a, c_att = window_attention(n1, lw["attn"], lw["table"], window, valid)
    x1 = x + a
    n2, c_ln2 = layernorm(x1, *lw["ln2"])
    m, c_mlp = mlp1(n2, *lw["mlp"])
    return x1 + m, (c_ln1, c_att, c_ln2, c_mlp)


def refinement_layer_backward(cache, gy):
    c_ln1, c_att, c_ln2, c_mlp = cache
    gn2, gmlp = mlp1_backward(c_mlp, gy)
    gx1_ln, gg2, gb2 = layernorm_backward(c_ln2, gn2)
    gx1 = gy + gx1_ln
    ga = window_attention_backward(c_att, gx1)
    gn1 = ga.pop("x")
    gx_ln, gg1, gb1 = layernorm_backward(c_ln1, gn1)
    return {
        "x": gx1 + gx_ln,
        "ln1": (gg1, gb1),
        "ln2": (gg2, gb2),
        "attn": {k: ga[k] for k in _MHSA_KEYS},
        "table": ga["table"],
        "mlp": (gmlp["w1"], gmlp["b1"], gmlp["w2"], gmlp["b2"]),
    }


def local_refinement(tokens: np.ndarray, layers: list[dict[str, Any]], window, valid=None):
    """Stack of :func:`refinement_layer`; zero layers is the identity."""
    x = tokens
    for lw in layers:
        x, _ = refinement_layer(x, lw, window, valid)
    return x


# -- head -----------------------------------------------------------------------


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Half-pixel-aligned linear interpolation weights ``(n_out, n_in)``."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    a = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - frac)
    np.add.at(a, (rows, i1), frac)
    return a


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def depth_head(features: np.ndarray, w: np.ndarray, b: np.ndarray, out_hw: tuple[int, int]):
    """Project ``(C, h, w)`` features to depth and confidence at ``out_hw``.

    The two logits are bilinearly upsampled by the stem stride, cropped to
    ``out_hw`` and squashed: softplus for depth, logistic for confidence.
    """
    c, h, wd = features.shape
    logits = np.einsum("chw,ck->khw", features, w) + b[:, None, None]
    ah = _interp_matrix(h * STEM_STRIDE, h)
    aw = _interp_matrix(wd * STEM_STRIDE, wd)
    up = ah @ logits @ aw.T
    up = up[:, : out_hw[0], : out_hw[1]]
    depth = np.maximum(_softplus(up[0]), np.finfo(np.float64).tiny)
    return depth, _sigmoid(up[1])


# -- complexity -----------------------------------------------------------------


def complexity_report(S: int, N: int, P: int) -> dict[str, Any]:
    """Leading-order per-head attention costs, full versus hierarchical.

    ``ratio`` is the closed form ``P/(S N) + 1/P^2``, which treats the
    window count as ``N / P``. The itemised costs use ``M = ceil(N / P)``
    windows (padding), so ``ratio_itemized`` can differ slightly.
    """
    if min(S, N, P) < 1:
        raise ValueError("S, N and P must be >= 1")
    m = math.ceil(N / P)
    cost_full = float(S * N) ** 2
    cost_window = float(S * m * P * P)
    cost_frame = float(S * m * m)
    cost_global = float(S * m) ** 2
    cost_aha = cost_window + cost_frame + cost_global
    ratio = P / (S * N) + 1.0 / P**2
    return {
        "S": S,
        "N": N,
        "P": P,
        "M": m,
        "cost_full": cost_full,
        "cost_aha_window": cost_window,
        "cost_aha_frame": cost_frame,
        "cost_aha_global": cost_global,
        "cost_aha": cost_aha,
        "ratio": ratio,
        "ratio_itemized": cost_aha / cost_full,
        "speedup": 1.0 / ratio,
        "limit_ratio": 1.0 / P**2,
        "max_speedup": float(P**2),
        "notes": [
            f"ratio = P/(S*N) + 1/P^2 = {P}/{S * N} + 1/{P * P} = {ratio:.6f} (exact closed form)",
            "the frequently quoted value 0.0604 for S=4, N=200, P=49 does not follow from this "
            f"closed form, which gives {49 / 800 + 1 / 2401:.6f} there",
        ],
    }


# -- the network --------------------------------------------------------------


def _conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """``(Cin, H, W) -> (Cout, H', W')`` cross-correlation via im2col."""
    cout, cin, k, _ = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1:3]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * k * k)
    out = cols @ w.reshape(cout, -1).T + b
    return out.T.reshape(cout, ho, wo)


def _stem_layout(cfg: AhaConfig) -> list[tuple[int, int, int, int, int]]:
    """``(cin, cout, kernel, stride, pad)`` per conv block; total stride 32."""
    c0 = cfg.stem_width
    return [
        (3, c0, 4, 4, 0),  # stage 1
        (c0, 2 * c0, 3, 2, 1),  # stage 1 -> H/8
        (2 * c0, 4 * c0, 3, 2, 1),  # stage 2 -> H/16
        (4 * c0, 4 * c0, 3, 1, 1),  # stage 2
        (4 * c0, cfg.channels, 3, 2, 1),  # stage-3 entry -> H/32
    ]


def init_weights(cfg: AhaConfig, dtype=np.float64) -> dict[str, np.ndarray]:
    """Seeded parameters: fan-in uniform linears/convs, zero biases, tables and embeddings."""
    rng = np.random.default_rng(cfg.seed)
    c = cfg.channels
    hidden = cfg.mlp_ratio * c
    ph, pw = cfg.window
    n_table = (2 * ph - 1) * (2 * pw - 1)
    wts: dict[str, np.ndarray] = {}

    for i, (cin, cout, k, _, _) in enumerate(_stem_layout(cfg)):
        bound = 1.0 / math.sqrt(cin * k * k)
        wts[f"stem.{i}.w"] = rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)
        wts[f"stem.{i}.b"] = np.zeros(cout, dtype=dtype)
        wts[f"stem.{i}.gamma"] = np.ones(cout, dtype=dtype)
        wts[f"stem.{i}.beta"] = np.zeros(cout, dtype=dtype)

    def add_ln(prefix):
        wts[f"{prefix}.gamma"] = np.ones(c, dtype=dtype)
        wts[f"{prefix}.beta"] = np.zeros(c, dtype=dtype)

    def add_mhsa(prefix):
        for name in ("q", "k", "v", "o"):
            wts[f"{prefix}.w{name}"], wts[f"{prefix}.b{name}"] = init_linear(rng, c, c, dtype)

    def add_mlp(prefix, fan_in):
        wts[f"{prefix}.w1"], wts[f"{prefix}.b1"] = init_linear(rng, fan_in, hidden, dtype)
        wts[f"{prefix}.w2"], wts[f"{prefix}.b2"] = init_linear(rng, hidden, c, dtype)

    for l in range(cfg.blocks):
        pre = f"blocks.{l}"
        add_ln(f"{pre}.win_ln")
        add_mhsa(f"{pre}.win")
        wts[f"{pre}.win.table"] = np.zeros((cfg.num_heads, n_table), dtype=dtype)
        add_ln(f"{pre}.frame_ln")
        add_mhsa(f"{pre}.frame")
        add_ln(f"{pre}.global_ln")
        add_mhsa(f"{pre}.global")
        add_ln(f"{pre}.blend_ln")
        add_mlp(f"{pre}.blend", 2 * c)
    wts["frame_embed"] = np.zeros((cfg.frames, c), dtype=dtype)
    for r in range(cfg.refine_layers):
        pre = f"refine.{r}"
        add_ln(f"{pre}.ln1")
        add_mhsa(f"{pre}.attn")
        wts[f"{pre}.attn.table"] = np.zeros((cfg.num_heads, n_table), dtype=dtype)
        add_ln(f"{pre}.ln2")
        add_mlp(f"{pre}.mlp", c)
    wts["head.w"], wts["head.b"] = init_linear(rng, c, 2, dtype)
    return wts


def zero_output_projections(weights: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Copy of ``weights`` with every residual branch's last projection zeroed."""
    out = dict(weights)
    for name, arr in weights.items():
        if name.startswith(("blocks.", "refine.")) and name.endswith((".wo", ".bo", ".w2", ".b2")):
            out[name] = np.zeros_like(arr)
    return out


class AhaNetwork:
    """Forward-only multi-view depth network over ERP frames.

    ``weights`` defaults to :func:`init_weights` for ``cfg``. Parameters are
    never mutated by a forward pass.
    """

    def __init__(self, cfg: AhaConfig, weights: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.weights = init_weights(cfg) if weights is None else dict(weights)
        expected = set(init_weights(cfg, dtype=np.float32)) if weights is not None else None
        if expected is not None and expected != set(self.weights):
            missing = sorted(expected - set(self.weights))
            extra = sorted(set(self.weights) - expected)
            raise ValueError(f"weights do not match config (missing={missing[:3]}, extra={extra[:3]})")

    # parameter views

    def _ln(self, prefix):
        return self.weights[f"{prefix}.gamma"], self.weights[f"{prefix}.beta"]

    def _mhsa(self, prefix) -> MhsaParams:
        return MhsaParams(self.cfg.num_heads, **{k: self.weights[f"{prefix}.{k}"] for k in _MHSA_KEYS})

    def _mlp(self, prefix):
        w = self.weights
        return w[f"{prefix}.w1"], w[f"{prefix}.b1"], w[f"{prefix}.w2"], w[f"{prefix}.b2"]

    def refine_layer_weights(self, r: int) -> dict[str, Any]:
        pre = f"refine.{r}"
        return {
            "ln1": self._ln(f"{pre}.ln1"),
            "attn": self._mhsa(f"{pre}.attn"),
            "table": self.weights[f"{pre}.attn.table"],
            "ln2": self._ln(f"{pre}.ln2"),
            "mlp": self._mlp(f"{pre}.mlp"),
        }

    # stages

    def stem(self, frame: np.ndarray) -> np.ndarray:
        """One ``(3, H, W)`` frame to ``(C, ceil(H/32), ceil(W/32))`` features."""
        _, h, w = frame.shape
        hp = math.ceil(h / STEM_STRIDE) * STEM_STRIDE
        wp = math.ceil(w / STEM_STRIDE) * STEM_STRIDE
        x = np.zeros((3, hp, wp), dtype=np.float64)
        x[:, :h, :w] = frame
        for i, (_, _, _, stride, pad) in enumerate(_stem_layout(self.cfg)):
            x = _conv2d(x, self.weights[f"stem.{i}.w"], self.weights[f"stem.{i}.b"], stride, pad)
            g, b = self.weights[f"stem.{i}.gamma"], self.weights[f"stem.{i}.beta"]
            x, _ = gelu(x * g[:, None, None] + b[:, None, None])
        return x

    def aha_block(self, feats: np.ndarray, l: int, use_global: bool | None = None) -> np.ndarray:
        """One hierarchical block on ``(S, C, h, w)`` features (same shape out)."""
        cfg = self.cfg
        use_global = cfg.use_global if use_global is None else use_global
        ph, pw = cfg.window
        pre = f"blocks.{l}"
        s_count, c, h, w = feats.shape
        if s_count > self.weights["frame_embed"].shape[0]:
            raise ValueError(f"{s_count} frames exceed the {self.weights['frame_embed'].shape[0]} embeddings")
        win_p = self._mhsa(f"{pre}.win")
        table = self.weights[f"{pre}.win.table"]

        locals_, valids, summaries = [], [], []
        for s in range(s_count):
            fp, valid_map = pad_to_windows(feats[s], ph, pw)
            tok = win_tok(fp, ph, pw)
            valid = win_tok(valid_map[None].astype(np.float64), ph, pw)[..., 0] > 0
            a, _ = window_attention(layernorm(tok, *self._ln(f"{pre}.win_ln"))[0], win_p, table, cfg.window, valid)
            tok = tok + a
            locals_.append(tok)
            valids.append(valid)
            summaries.append(frame_tok(tok, valid))

        frame_p = self._mhsa(f"{pre}.frame")
        emb = self.weights["frame_embed"]
        s_hat = np.stack(
            [
                summaries[s] + frame_attention(layernorm(summaries[s], *self._ln(f"{pre}.frame_ln"))[0], emb[s], frame_p)
                for s in range(s_count)
            ]
        )
        if use_global:
            g = global_attention(
                layernorm(s_hat, *self._ln(f"{pre}.global_ln"))[0], self._mhsa(f"{pre}.global"), exact=cfg.deterministic
            )
            s_bar = s_hat + g
        else:
            s_bar = s_hat

        out = np.empty_like(feats)
        blend = self._mlp(f"{pre}.blend")
        for s in range(s_count):
            tok = locals_[s]
            ctx = np.broadcast_to(s_bar[s][:, None, :], tok.shape)
            z = np.concatenate([layernorm(tok, *self._ln(f"{pre}.blend_ln"))[0], ctx], axis=-1)
            tok = tok + mlp1(z, *blend)[0]
            hp = math.ceil(h / ph) * ph
            wp = math.ceil(w / pw) * pw
            out[s] = untok(tok, hp, wp, ph, pw)[:, :h, :w]
        return out

    def refine(self, feats: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        ph, pw = cfg.window
        layers = [self.refine_layer_weights(r) for r in range(cfg.refine_layers)]
        out = np.empty_like(feats)
        _, _, h, w = feats.shape
        for s in range(feats.shape[0]):
            fp, valid_map = pad_to_windows(feats[s], ph, pw)
            tok = win_tok(fp, ph, pw)
            valid = win_tok(valid_map[None].astype(np.float64), ph, pw)[..., 0] > 0
            tok = local_refinement(tok, layers, cfg.window, valid)
            out[s] = untok(tok, *fp.shape[1:], ph, pw)[:, :h, :w]
        return out

    def stages_3_4(self, feats: np.ndarray, use_global: bool | None = None) -> np.ndarray:
        for l in range(self.cfg.blocks):
            feats = self.aha_block(feats, l, use_global)
        return self.refine(feats)

    def forward(self, images: np.ndarray, use_global: bool | None = None, taps: dict | None = None):
        """``(S, 3, H, W)`` or ``(B, S, 3, H, W)`` images to ``(depth, confidence)``.

        Outputs have shape ``(S, H, W)`` or ``(B, S, H, W)`` respectively.
        If ``taps`` is a dict, stem and refined features are stored in it.
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 5:
            outs = [self.forward(x, use_global) for x in images]
            return np.stack([o[0] for o in outs]), np.stack([o[1] for o in outs])
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (S, 3, H, W) images, got {images.shape}")
        h, w = images.shape[2:]
        feats = np.stack([self.stem(frame) for frame in images])
        if taps is not None:
            taps["stem"] = feats
        feats = self.stages_3_4(feats, use_global)
        if taps is not None:
            taps["refined"] = feats
        depth, conf = zip(
            *(depth_head(f, self.weights["head.w"], self.weights["head.b"], (h, w)) for f in feats)
        )
        return np.stack(depth), np.stack(conf)

