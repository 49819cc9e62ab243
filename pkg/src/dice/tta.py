"""Test-time adaptation of patch tokens with a linear adapter.

A single linear map G adapts patch tokens as q' = (G(q) + q) / 2, after
which tokens are renormalized and scored against the text tokens. The
adapter is fit per image with AdamW on two terms: a pseudo-anomaly contrast
that pushes corrupted-patch scores above their clean counterparts, and a
consistency term tying the adapted score map to the joint visual-language
map. Gradients are computed analytically; the finite-difference check lives
in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np
from scipy.special import expit

from .dtf import write_dtf
from .encoder import PatchTokenGrid
from .prompts import TextTokenPair
from .scoring import AnomalyMap


@dataclass
class TTAHyper:
    """Optimizer and loss settings for the adapter fit."""

    learning_rate: float = 0.001
    beta_sim: float = 0.5
    steps: int = 2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    # consistency loss is 1 - cosine by default; the literal form maximizes
    # agreement by *minimizing* raw cosine instead
    literal_sim_loss: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.steps < 0 or self.beta_sim < 0:
            raise ValueError("bad TTA hyperparameters")


@dataclass
class AdapterState:
    """Linear adapter weights plus AdamW moment estimates."""

    W: np.ndarray
    b: np.ndarray
    m_w: np.ndarray
    v_w: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    step_count: int = 0

    @classmethod
    def identity(cls, dim: int) -> "AdapterState":
        return cls(
            W=np.eye(dim),
            b=np.zeros(dim),
            m_w=np.zeros((dim, dim)),
            v_w=np.zeros((dim, dim)),
            m_b=np.zeros(dim),
            v_b=np.zeros(dim),
        )

    def is_identity(self) -> bool:
        d = self.b.shape[0]
        return (
            self.step_count == 0
            and np.array_equal(self.W, np.eye(d))
            and not self.b.any()
        )


def adapt_tokens(adapter: AdapterState, grid: PatchTokenGrid) -> PatchTokenGrid:
    """Apply q' = (W q + b + q) / 2 per token and renormalize.

    An untouched identity adapter passes the grid through unchanged, so a
    zero-step fit reproduces the plain language scores bit-for-bit.
    """
    if adapter.is_identity():
        return grid
    q = grid.flat()
    u = 0.5 * (q @ adapter.W.T + adapter.b + q)
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms < 1e-12) or not np.all(np.isfinite(norms)):
        raise ValueError("degenerate adaptation")
    return PatchTokenGrid((u / norms[:, None]).reshape(grid.tokens.shape))


def tta_score_map(adapted: PatchTokenGrid, text: TextTokenPair) -> AnomalyMap:
    """Language score map of adapted tokens."""
    sims_a = adapted.tokens @ text.t_a
    sims_n = adapted.tokens @ text.t_n
    return AnomalyMap(expit((sims_a - sims_n) / text.tau), "patch")


def loss_pseudo(score_map, pseudo_score_map, mask_patch) -> float:
    """Contrast clean vs corrupted scores on corrupted patches.

    Per masked cell the term is softplus(A - A'), i.e. the negative log
    probability that the corrupted twin scores higher; the mean over masked
    cells is returned. Computed via logaddexp so large gaps cannot overflow.
    """
    a = _map_values(score_map)
    a_pseudo = _map_values(pseudo_score_map)
    m = np.asarray(mask_patch, dtype=np.float64)
    if a.shape != a_pseudo.shape or a.shape != m.shape:
        raise ValueError("shape mismatch in pseudo loss")
    sel = m > 0.5
    if not sel.any():
        raise ValueError("empty pseudo mask")
    return float(np.logaddexp(0.0, a[sel] - a_pseudo[sel]).mean())


def loss_sim(joint: AnomalyMap | np.ndarray, adapted: AnomalyMap | np.ndarray, literal: bool = False) -> float:
    """Consistency between the joint map and the adapted score map.

    Default is 1 - cosine(flattened maps), which vanishes when the maps
    agree up to positive scale. With literal=True the raw cosine is returned
    as the loss term instead.
    """
    a = _map_values(joint).ravel()
    b = _map_values(adapted).ravel()
    if a.shape != b.shape:
        raise ValueError("shape mismatch in similarity loss")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("degenerate similarity")
    cos = float(a @ b / (na * nb))
    return cos if literal else 1.0 - cos


def loss_total(
    adapter: AdapterState,
    grid: PatchTokenGrid,
    pseudo_grid: PatchTokenGrid,
    mask_patch: np.ndarray,
    text: TextTokenPair,
    joint: AnomalyMap | np.ndarray,
    hyper: TTAHyper,
) -> float:
    """Pseudo-anomaly loss plus beta_sim times the consistency loss."""
    a, _ = _branch_forward(adapter, grid.flat(), text)
    a_pseudo, _ = _branch_forward(adapter, pseudo_grid.flat(), text)
    shape = (grid.h, grid.w)
    total = loss_pseudo(a.reshape(shape), a_pseudo.reshape(shape), mask_patch)
    if hyper.beta_sim > 0:
        total += hyper.beta_sim * loss_sim(joint, a.reshape(shape), hyper.literal_sim_loss)
    return float(total)


def loss_gradients(
    adapter: AdapterState,
    grid: PatchTokenGrid,
    pseudo_grid: PatchTokenGrid,
    mask_patch: np.ndarray,
    text: TextTokenPair,
    joint: AnomalyMap | np.ndarray,
    hyper: TTAHyper,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Analytic gradient of loss_total with respect to W and b.

    Returns (loss, dW, db). The backward pass runs the chain
    score <- renormalize <- affine adapter for both the clean and the
    corrupted branch; the consistency term only touches the clean branch.
    """
    q = grid.flat()
    q_pseudo = pseudo_grid.flat()
    a, cache = _branch_forward(adapter, q, text)
    a_pseudo, cache_pseudo = _branch_forward(adapter, q_pseudo, text)

    m = np.asarray(mask_patch, dtype=np.float64).ravel()
    if m.shape != (a.shape[0],):
        raise ValueError("shape mismatch in pseudo loss")
    sel = m > 0.5
    if not sel.any():
        raise ValueError("empty pseudo mask")
    n_masked = int(sel.sum())

    gap = a[sel] - a_pseudo[sel]
    loss = float(np.logaddexp(0.0, gap).mean())
    g_a = np.zeros_like(a)
    g_a_pseudo = np.zeros_like(a_pseudo)
    g_a[sel] = expit(gap) / n_masked
    g_a_pseudo[sel] = -expit(gap) / n_masked

    if hyper.beta_sim > 0:
        v = _map_values(joint).ravel()
        if v.shape != a.shape:
            raise ValueError("shape mismatch in similarity loss")
        na, nv = np.linalg.norm(a), np.linalg.norm(v)
        if na < 1e-12 or nv < 1e-12:
            raise ValueError("degenerate similarity")
        cos = float(a @ v / (na * nv))
        loss += hyper.beta_sim * (cos if hyper.literal_sim_loss else 1.0 - cos)
        dcos_da = v / (na * nv) - a * (cos / (na * na))
        sign = 1.0 if hyper.literal_sim_loss else -1.0
        g_a += hyper.beta_sim * sign * dcos_da

    g_w, g_b = _branch_backward(g_a, cache, q, text)
    g_w2, g_b2 = _branch_backward(g_a_pseudo, cache_pseudo, q_pseudo, text)
    return loss, g_w + g_w2, g_b + g_b2


def tta_fit(
    grid: PatchTokenGrid,
    pseudo_grid: PatchTokenGrid,
    mask_patch: np.ndarray,
    text: TextTokenPair,
    joint: AnomalyMap | np.ndarray,
    hyper: TTAHyper,
) -> tuple[AdapterState, list[float]]:
    """Fit the adapter from identity with AdamW; decay applies to W only.

    Returns the final state and the loss trace (initial loss first, then the
    loss after each step).
    """
    state = AdapterState.identity(grid.d)
    losses = []
    lr = hyper.learning_rate
    b1, b2 = hyper.adam_beta1, hyper.adam_beta2
    for _ in range(hyper.steps):
        loss, g_w, g_b = loss_gradients(state, grid, pseudo_grid, mask_patch, text, joint, hyper)
        if not np.isfinite(loss):
            raise RuntimeError("TTA diverged")
        losses.append(loss)
        t = state.step_count + 1
        state.m_w = b1 * state.m_w + (1 - b1) * g_w
        state.v_w = b2 * state.v_w + (1 - b2) * g_w**2
        state.m_b = b1 * state.m_b + (1 - b1) * g_b
        state.v_b = b2 * state.v_b + (1 - b2) * g_b**2
        mhat_w = state.m_w / (1 - b1**t)
        vhat_w = state.v_w / (1 - b2**t)
        mhat_b = state.m_b / (1 - b1**t)
        vhat_b = state.v_b / (1 - b2**t)
        state.W = state.W * (1 - lr * hyper.weight_decay) - lr * mhat_w / (np.sqrt(vhat_w) + hyper.adam_eps)
        state.b = state.b - lr * mhat_b / (np.sqrt(vhat_b) + hyper.adam_eps)
        state.step_count = t
    final = loss_total(state, grid, pseudo_grid, mask_patch, text, joint, hyper)
    if not np.isfinite(final):
        raise RuntimeError("TTA diverged")
    losses.append(final)
    return state, losses


def dump_adapter(state: AdapterState, losses: list[float], directory: str | Path) -> None:
    """Debug dump: adapter weights as DTF plus the loss trace as JSON."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_dtf(out / "adapter_w.dtf", state.W)
    write_dtf(out / "adapter_b.dtf", state.b)
    payload = {"losses": [float(x) for x in losses], "steps": state.step_count}
    (out / "adapter.json").write_text(json.dumps(payload, sort_keys=True) + "\n")


def _map_values(m) -> np.ndarray:
    values = m.values if isinstance(m, AnomalyMap) else np.asarray(m, dtype=np.float64)
    return np.asarray(values, dtype=np.float64)


def _branch_forward(adapter: AdapterState, q: np.ndarray, text: TextTokenPair):
    """Adapter forward for one token matrix; returns scores and cache."""
    z = q @ adapter.W.T + adapter.b
    u = 0.5 * (z + q)
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms < 1e-12) or not np.all(np.isfinite(norms)):
        raise ValueError("degenerate adaptation")
    y = u / norms[:, None]
    x = (y @ text.t_a - y @ text.t_n) / text.tau
    a = expit(x)
    return a, (y, norms, a)


def _branch_backward(g_a: np.ndarray, cache, q: np.ndarray, text: TextTokenPair):
    y, norms, a = cache
    g_x = g_a * a * (1.0 - a) / text.tau
    g_y = g_x[:, None] * (text.t_a - text.t_n)[None, :]
    g_u = (g_y - (g_y * y).sum(axis=1, keepdims=True) * y) / norms[:, None]
    g_z = 0.5 * g_u
    return g_z.T @ q, g_z.sum(axis=0)
