"""Two-tower gated embedding model and its max-margin ranking loss.

Clip tower::

    o = W_ocr ocr + b_ocr
    c = [o, v2d, v3d]            (masked modalities replaced by zeros)
    h = W1c c + b1c
    f = h * sigmoid(W2c h + b2c)

Text tower is the same gating applied to ``t = W_txt text + b_txt``.
Scores are cosine similarities; the loss sums, over every in-batch pair
``i != j``, the hinges ``max(0, m + s_ij - s_ii) + max(0, m + s_ji - s_ii)``.
All arithmetic is float64 and gradients are derived by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..datamodel.synth import philox_rng
from ..exceptions import NumericalError, ValidationError

VISUAL = ("v2d", "v3d", "ocr")
PARAM_ORDER = (
    "W_ocr", "b_ocr", "W1c", "b1c", "W2c", "b2c",
    "W_txt", "b_txt", "W1t", "b1t", "W2t", "b2t",
)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(eq=False)
class JointEmbeddingParams:
    W_ocr: np.ndarray
    b_ocr: np.ndarray
    W1c: np.ndarray
    b1c: np.ndarray
    W2c: np.ndarray
    b2c: np.ndarray
    W_txt: np.ndarray
    b_txt: np.ndarray
    W1t: np.ndarray
    b1t: np.ndarray
    W2t: np.ndarray
    b2t: np.ndarray
    d2d: int = -1

    def __post_init__(self):
        for name in PARAM_ORDER:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
        ocr_proj, d_ocr = self.W_ocr.shape
        E, c_dim = self.W1c.shape
        expected = {
            "b_ocr": (ocr_proj,), "b1c": (E,), "W2c": (E, E), "b2c": (E,),
            "b_txt": (E,), "W1t": (E, E), "b1t": (E,), "W2t": (E, E), "b2t": (E,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.W_txt.shape[0] != E:
            raise ValidationError("W_txt must project to the embedding dimension")
        if c_dim <= ocr_proj:
            raise ValidationError("W1c input must cover the OCR projection plus visual features")
        d_vis = c_dim - ocr_proj
        if self.d2d < 0:
            self.d2d = d_vis - d_vis // 2
        if not 0 <= self.d2d <= d_vis:
            raise ValidationError(f"d2d={self.d2d} outside [0, {d_vis}]")
        for name in PARAM_ORDER:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} has non-finite entries")

    @property
    def embed_dim(self) -> int:
        return self.W1c.shape[0]

    @property
    def ocr_proj_dim(self) -> int:
        return self.W_ocr.shape[0]

    @property
    def d_ocr(self) -> int:
        return self.W_ocr.shape[1]

    @property
    def d_text(self) -> int:
        return self.W_txt.shape[1]

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    @property
    def d3d(self) -> int:
        return self.W1c.shape[1] - self.ocr_proj_dim - self.d2d

    def copy(self) -> "JointEmbeddingParams":
        return JointEmbeddingParams(**{k: v.copy() for k, v in self.as_dict().items()}, d2d=self.d2d)

    def zeros_like(self) -> "JointEmbeddingParams":
        return JointEmbeddingParams(**{k: np.zeros_like(v) for k, v in self.as_dict().items()}, d2d=self.d2d)

    def equals(self, other) -> bool:
        return self.d2d == other.d2d and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_ORDER
        )


assert tuple(f.name for f in fields(JointEmbeddingParams))[: len(PARAM_ORDER)] == PARAM_ORDER


def init_params(d2d, d3d, d_ocr, d_text, embed_dim=4096, ocr_proj_dim=2048, seed=0) -> JointEmbeddingParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = philox_rng(seed, 0x1417)
    c_dim = ocr_proj_dim + d2d + d3d

    def w(out, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(out, fan_in))

    E = embed_dim
    return JointEmbeddingParams(
        W_ocr=w(ocr_proj_dim, d_ocr), b_ocr=np.zeros(ocr_proj_dim),
        W1c=w(E, c_dim), b1c=np.zeros(E),
        W2c=w(E, E), b2c=np.zeros(E),
        W_txt=w(E, d_text), b_txt=np.zeros(E),
        W1t=w(E, E), b1t=np.zeros(E),
        W2t=w(E, E), b2t=np.zeros(E),
        d2d=d2d,
    )


def normalize_mask(mask) -> frozenset:
    """Accepts names from ``{"v2d", "v3d", "ocr"}`` (``"2d"``/``"3d"`` also allowed)."""
    if mask is None:
        return frozenset(VISUAL)
    alias = {"2d": "v2d", "3d": "v3d"}
    out = frozenset(alias.get(m, m) for m in mask)
    if not out:
        raise ValidationError("modality mask must enable at least one visual modality")
    bad = out - set(VISUAL)
    if bad:
        raise ValidationError(f"unknown visual modalities {sorted(bad)}")
    return out


def _as_batch(x, dim, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValidationError(f"{name} has dimension {x.shape[-1]}, expected {dim}")
    return x


def _clip_input(params, v2d, v3d, ocr, mask):
    v2d = _as_batch(v2d, params.d2d, "v2d")
    v3d = _as_batch(v3d, params.d3d, "v3d")
    ocr = _as_batch(ocr, params.d_ocr, "ocr")
    o = ocr @ params.W_ocr.T + params.b_ocr
    keep = {m: float(m in mask) for m in VISUAL}
    c = np.hstack([o * keep["ocr"], v2d * keep["v2d"], v3d * keep["v3d"]])
    return c, ocr, keep


def _gate(h, W2, b2):
    s = sigmoid(h @ W2.T + b2)
    return h * s, s


def embed_clips(params: JointEmbeddingParams, v2d, v3d, ocr, mask=None) -> np.ndarray:
    """Clip embeddings ``f(c)``, one row per clip."""
    c, _, _ = _clip_input(params, v2d, v3d, ocr, normalize_mask(mask))
    h = c @ params.W1c.T + params.b1c
    return _gate(h, params.W2c, params.b2c)[0]


def embed_texts(params: JointEmbeddingParams, text) -> np.ndarray:
    """Text embeddings ``g(t)``, one row per transcript."""
    text = _as_batch(text, params.d_text, "text")
    t = text @ params.W_txt.T + params.b_txt
    h = t @ params.W1t.T + params.b1t
    return _gate(h, params.W2t, params.b2t)[0]


def embed_clip(params, record, mask=None) -> np.ndarray:
    return embed_clips(params, record.v2d, record.v3d, record.ocr, mask)[0]


def embed_text(params, record) -> np.ndarray:
    return embed_texts(params, record.text)[0]


def similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0 or not (np.isfinite(na) and np.isfinite(nb)):
        raise ValidationError("degenerate embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_rows(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n == 0):
        raise ValidationError("degenerate embedding")
    return x / n, n


def hinge_arguments(S: np.ndarray, margin: float):
    """Off-diagonal hinge arguments ``(m + s_ij - s_ii, m + s_ji - s_ii)`` for row ``i``."""
    diag = np.diag(S)[:, None]
    return margin + S - diag, margin + S.T - diag


def ranking_loss_from_scores(S: np.ndarray, margin: float) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the score matrix."""
    B = S.shape[0]
    a, b = hinge_arguments(S, margin)
    off = ~np.eye(B, dtype=bool)
    act_a = (a > 0) & off
    act_b = (b > 0) & off
    loss = float(a[act_a].sum() + b[act_b].sum())
    dS = act_a.astype(np.float64) + act_b.T.astype(np.float64)
    np.fill_diagonal(dS, -(act_a.sum(axis=1) + act_b.sum(axis=1)))
    return loss, dS


def batch_loss(params: JointEmbeddingParams, v2d, v3d, ocr, text, margin=0.1, mask=None, with_grad=True):
    """Ranking loss over a batch of aligned clip/text rows.

    Returns ``(loss, grads)``; ``grads`` is a params-shaped object or None.
    """
    mask = normalize_mask(mask)
    text = _as_batch(text, params.d_text, "text")
    c, ocr_in, keep = _clip_input(params, v2d, v3d, ocr, mask)
    B = c.shape[0]
    if B < 2:
        raise ValidationError("batch needs at least 2 pairs (no negatives otherwise)")
    if text.shape[0] != B:
        raise ValidationError("clip and text batches differ in size")

    hc = c @ params.W1c.T + params.b1c
    f, sc = _gate(hc, params.W2c, params.b2c)
    t = text @ params.W_txt.T + params.b_txt
    ht = t @ params.W1t.T + params.b1t
    g, st = _gate(ht, params.W2t, params.b2t)

    fu, fn = _unit_rows(f)
    gu, gn = _unit_rows(g)
    S = fu @ gu.T
    loss, dS = ranking_loss_from_scores(S, margin)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    if not with_grad:
        return loss, None

    d_fu = dS @ gu
    d_gu = dS.T @ fu
    df = (d_fu - fu * np.sum(fu * d_fu, axis=1, keepdims=True)) / fn
    dg = (d_gu - gu * np.sum(gu * d_gu, axis=1, keepdims=True)) / gn

    grads = {}

    def gate_back(d_out, h, s, W2, inp, W1, prefix):
        da = d_out * h * s * (1.0 - s)
        dh = d_out * s + da @ W2
        grads["W2" + prefix] = da.T @ h
        grads["b2" + prefix] = da.sum(axis=0)
        grads["W1" + prefix] = dh.T @ inp
        grads["b1" + prefix] = dh.sum(axis=0)
        return dh @ W1

    dc = gate_back(df, hc, sc, params.W2c, c, params.W1c, "c")
    do = dc[:, :params.ocr_proj_dim] * keep["ocr"]
    grads["W_ocr"] = do.T @ ocr_in
    grads["b_ocr"] = do.sum(axis=0)

    dt = gate_back(dg, ht, st, params.W2t, t, params.W1t, "t")
    grads["W_txt"] = dt.T @ text
    grads["b_txt"] = dt.sum(axis=0)
    return loss, JointEmbeddingParams(**grads, d2d=params.d2d)
