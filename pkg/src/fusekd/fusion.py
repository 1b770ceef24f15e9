"""Teacher fusion, the student adapter, and the distillation losses.

Targets built from frozen teachers travel as plain arrays; the student side
stays on the gradient tape. Fusion is an elementwise SUM over teachers (not
a mean), so with M teachers the summed logits act like a 1/M temperature.
The summation order is fixed by array content, which makes fused targets
bit-exact invariant to the ordering of the teacher list.

Loss structure, per sample:
  token loss   = mean over all N+1 tokens (class token included) of
                 KL(softmax(student_token) || softmax(fused_token)),
                 softmax over the D channels;
  spatial loss = mean over D channels (class token excluded) of
                 KL(softmax(student_channel) || softmax(fused_channel)),
                 softmax over the N grid cells.
The combined loss is their unweighted sum. The MSE variant keeps the same
averaging denominators but compares raw embeddings with squared error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _canonical_sum(mats: list[np.ndarray]) -> np.ndarray:
    """Elementwise sum accumulated in a content-defined order."""
    if not mats:
        raise ValueError("need at least one input to fuse")
    first = np.asarray(mats[0], dtype=np.float64)
    arrs = [first]
    for m in mats[1:]:
        a = np.asarray(m, dtype=np.float64)
        if a.shape != first.shape:
            raise ValueError(f"shape mismatch in fusion: {a.shape} vs {first.shape}")
        arrs.append(a)
    order = sorted(range(len(arrs)), key=lambda i: arrs[i].tobytes())
    out = arrs[order[0]].copy()
    for i in order[1:]:
        out += arrs[i]
    return out


def fuse_tokens(teacher_tokens: list[np.ndarray]) -> np.ndarray:
    """Sum of M token matrices (..., N+1, D); order-independent bit-exact."""
    return _canonical_sum(teacher_tokens)


def fuse_features(teacher_maps: list[np.ndarray]) -> np.ndarray:
    """Sum of M feature maps (..., D, H', W'); order-independent bit-exact."""
    return _canonical_sum(teacher_maps)


def tokens_to_feature_map(tokens: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """(..., N+1, D) -> (..., D, H', W'), class token dropped.

    Cell (c, r, w) of the map reads token 1 + r*W' + w, channel c, matching
    the row-major grid order of ``patchify``.
    """
    arr = np.asarray(tokens, dtype=np.float64)
    n = arr.shape[-2] - 1
    if grid_h * grid_w != n:
        raise ValueError(f"grid {grid_h}x{grid_w} != {n} patch tokens")
    d = arr.shape[-1]
    lead = arr.shape[:-2]
    x = arr[..., 1:, :].reshape(lead + (grid_h, grid_w, d))
    return np.ascontiguousarray(np.moveaxis(x, -1, -3))


def feature_map_to_tokens(fmap: np.ndarray) -> np.ndarray:
    """Inverse of ``tokens_to_feature_map`` minus the class token row."""
    arr = np.asarray(fmap, dtype=np.float64)
    d = arr.shape[-3]
    lead = arr.shape[:-3]
    x = np.moveaxis(arr, -3, -1)  # (..., H', W', D)
    return np.ascontiguousarray(x.reshape(lead + (-1, d)))


def student_feature_map(tokens: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """Tape-aware version of ``tokens_to_feature_map`` for the student."""
    n = tokens.shape[-2] - 1
    if grid_h * grid_w != n:
        raise ValueError(f"grid {grid_h}x{grid_w} != {n} patch tokens")
    d = tokens.shape[-1]
    if tokens.array.ndim == 2:
        x = T.slice_axis(tokens, 0, 1, n + 1)
        x = T.reshape(x, (grid_h, grid_w, d))
        return T.transpose(x, (2, 0, 1))
    b = tokens.shape[0]
    x = T.slice_axis(tokens, 1, 1, n + 1)
    x = T.reshape(x, (b, grid_h, grid_w, d))
    return T.transpose(x, (0, 3, 1, 2))


@dataclass
class Adapter:
    """Affine map from student width D' to the shared teacher width D."""

    weight: Tensor  # (D', D)
    bias: Tensor  # (D,)

    @classmethod
    def create(cls, in_dim: int, out_dim: int, seed: int = 0) -> "Adapter":
        rng = np.random.default_rng(seed)
        return cls(
            weight=Tensor(rng.normal(0.0, 0.02, (in_dim, out_dim)), parameter=True, name="adapter_w"),
            bias=Tensor(np.zeros(out_dim), parameter=True, name="adapter_b"),
        )

    @classmethod
    def identity(cls, dim: int) -> "Adapter":
        return cls(
            weight=Tensor(np.eye(dim), parameter=True, name="adapter_w"),
            bias=Tensor(np.zeros(dim), parameter=True, name="adapter_b"),
        )

    def project(self, tokens: Tensor) -> Tensor:
        if tokens.shape[-1] != self.weight.shape[0]:
            raise ValueError(
                f"adapter expects width {self.weight.shape[0]}, got {tokens.shape[-1]}"
            )
        return T.add(T.matmul(tokens, self.weight), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def adapter_project(student_tokens: Tensor, adapter: Adapter) -> Tensor:
    return adapter.project(student_tokens)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a, b, what: str) -> None:
    sa = a.shape if hasattr(a, "shape") else np.shape(a)
    sb = b.shape if hasattr(b, "shape") else np.shape(b)
    if tuple(sa) != tuple(sb):
        raise ValueError(f"{what} shape mismatch: {tuple(sa)} vs {tuple(sb)}")


def _mean_row_kl(student: Tensor, target: np.ndarray, rows: int) -> Tensor:
    """Mean over leading rows of KL(softmax(student_row) || softmax(target_row))."""
    return T.scale(T.kl_vs_constant(student, target), 1.0 / rows)


def token_fusion_loss(student_tokens, fused_tokens) -> Tensor:
    """Per-token channel KL against the fused target; all N+1 tokens included."""
    s = _as_tensor(student_tokens)
    t = np.asarray(fused_tokens, dtype=np.float64)
    _check_same_shape(s, t, "token")
    rows = int(np.prod(s.shape[:-1]))  # B * (N+1) tokens, each a KL over D
    return _mean_row_kl(s, t, rows)


def spatial_fusion_loss(student_map, fused_map) -> Tensor:
    """Per-channel spatial KL; each channel flattened to its N grid cells."""
    s = _as_tensor(student_map)
    t = np.asarray(fused_map, dtype=np.float64)
    _check_same_shape(s, t, "feature map")
    if s.array.ndim < 3:
        raise ValueError("feature maps must be (..., D, H', W')")
    lead = s.shape[:-2]
    n = s.shape[-2] * s.shape[-1]
    rows = int(np.prod(lead))  # B * D channels, each a KL over N cells
    s_flat = T.reshape(s, lead + (n,))
    t_flat = t.reshape(lead + (n,))
    return _mean_row_kl(s_flat, t_flat, rows)


def total_loss(student_tokens, fused_tokens, student_map, fused_map) -> Tensor:
    """Unweighted sum of the token and spatial losses."""
    return T.add(
        token_fusion_loss(student_tokens, fused_tokens),
        spatial_fusion_loss(student_map, fused_map),
    )


def _mean_row_sq(student: Tensor, target: np.ndarray, rows: int) -> Tensor:
    d = T.sub(student, Tensor(np.asarray(target, dtype=np.float64)))
    return T.scale(T.sum_all(T.mul(d, d)), 1.0 / rows)


def mse_token_term(student_tokens, fused_tokens) -> Tensor:
    s = _as_tensor(student_tokens)
    t = np.asarray(fused_tokens, dtype=np.float64)
    _check_same_shape(s, t, "token")
    rows = int(np.prod(s.shape[:-1]))
    return _mean_row_sq(s, t, rows)


def mse_spatial_term(student_map, fused_map) -> Tensor:
    s = _as_tensor(student_map)
    t = np.asarray(fused_map, dtype=np.float64)
    _check_same_shape(s, t, "feature map")
    lead = s.shape[:-2]
    n = s.shape[-2] * s.shape[-1]
    rows = int(np.prod(lead))
    return _mean_row_sq(T.reshape(s, lead + (n,)), t.reshape(lead + (n,)), rows)


def mse_loss_variant(student_tokens, fused_tokens, student_map, fused_map) -> Tensor:
    """Ablation: same two-term structure on raw embeddings with squared error."""
    return T.add(
        mse_token_term(student_tokens, fused_tokens),
        mse_spatial_term(student_map, fused_map),
    )
