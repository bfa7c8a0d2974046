"""Self-attention kernels over multi-view frame tensors.

A frame tensor holds ``N`` views of ``h*w`` tokens with ``c`` channels,
stored as an ``(N, h*w, c)`` array. Rewired attention lets each view ``k`` of
the articulation frame attend to the source frame's view ``k`` together with
every other view of the articulation frame itself.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

SOURCE = "source"
ARTICULATION = "articulation"


@dataclass(frozen=True, eq=False)
class FrameTensor:
    frame_tag: str
    data: np.ndarray

    def __post_init__(self):
        if self.frame_tag not in (SOURCE, ARTICULATION):
            raise InvalidInputError(f"unknown frame tag {self.frame_tag!r}", "frame_tag")
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 3 or min(d.shape) < 1:
            raise InvalidInputError(f"frame data must be (views, tokens, channels), got {d.shape}",
                                    "data")
        if not np.all(np.isfinite(d)):
            raise InvalidInputError("frame data must be finite", "data")
        object.__setattr__(self, "data", d)

    @property
    def views(self):
        return self.data.shape[0]

    @property
    def tokens(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class QKV:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if not (np.shape(self.q) == np.shape(self.k) == np.shape(self.v)):
            raise InvalidInputError("Q, K and V must share one shape", "qkv")
        if np.ndim(self.q) != 3:
            raise InvalidInputError("Q, K and V must be (views, tokens, channels)", "qkv")

    @property
    def shape(self):
        return np.shape(self.q)


def attention_weights(q, k, scale=None):
    """Row-stochastic matrix ``softmax(q @ k.T * scale)``."""
    q = np.asarray(q, dtype=float)
    k = np.asarray(k, dtype=float)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise InvalidInputError(f"incompatible query/key shapes {q.shape} and {k.shape}", "qk")
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[1])
    logits = (q @ k.T) * scale
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def self_attention(q, k, v, scale=None):
    """``softmax(q k^T / sqrt(c)) v`` for token matrices."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or len(v) != np.shape(k)[0]:
        raise InvalidInputError(f"value shape {v.shape} does not match keys {np.shape(k)}", "v")
    return attention_weights(q, k, scale) @ v


def multihead_attention(q, k, v, n_heads):
    """Apply :func:`self_attention` on channel slices and concatenate the heads."""
    c = np.shape(q)[1]
    if c % n_heads:
        raise InvalidInputError(f"{c} channels do not split into {n_heads} heads", "n_heads")
    d = c // n_heads
    return np.concatenate(
        [self_attention(q[:, h * d:(h + 1) * d], k[:, h * d:(h + 1) * d], v[:, h * d:(h + 1) * d])
         for h in range(n_heads)], axis=1)


def build_attention_set(k, n_views):
    """Ordered (frame, view) pairs view ``k`` of the articulation frame attends to.

    The source entry sits at position ``k``; all other positions are the
    articulation frame's remaining views.
    """
    if n_views < 1 or not 0 <= k < n_views:
        raise InvalidInputError(f"view {k} out of range for {n_views} views", "k")
    return [(SOURCE if i == k else ARTICULATION, i) for i in range(n_views)]


def _gather(entries, source, articulation):
    frames = {SOURCE: source, ARTICULATION: articulation}
    return np.concatenate([frames[f][i] for f, i in entries], axis=0)


def joint_attention(qkv, n_heads=1):
    """Attention of every view over all views' tokens (the unmodified multi-view layer)."""
    q, k, v = (np.asarray(x, dtype=float) for x in (qkv.q, qkv.k, qkv.v))
    n = q.shape[0]
    entries = [(ARTICULATION, i) for i in range(n)]
    K = _gather(entries, None, k)
    V = _gather(entries, None, v)
    return np.stack([_attend(q[i], K, V, n_heads) for i in range(n)])


def rewired_attention(articulation, source, n_heads=1):
    """Rewired cross-frame attention for every articulation view.

    ``articulation`` and ``source`` are :class:`QKV` triples of identical shape;
    the source query is unused. Returns an array with the articulation shape.
    """
    if articulation.shape != source.shape:
        raise InvalidInputError(
            f"articulation shape {articulation.shape} != source shape {source.shape}", "qkv")
    q = np.asarray(articulation.q, dtype=float)
    n = q.shape[0]
    out = []
    for i in range(n):
        entries = build_attention_set(i, n)
        K = _gather(entries, np.asarray(source.k, dtype=float), np.asarray(articulation.k, dtype=float))
        V = _gather(entries, np.asarray(source.v, dtype=float), np.asarray(articulation.v, dtype=float))
        out.append(_attend(q[i], K, V, n_heads))
    return np.stack(out)


def _attend(q, K, V, n_heads):
    if n_heads == 1:
        return self_attention(q, K, V)
    return multihead_attention(q, K, V, n_heads)
