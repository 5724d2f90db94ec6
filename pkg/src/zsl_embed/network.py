"""Fusion embedding networks with hand-derived gradients.

The semantic branch runs one two-layer ReLU head per modality, sums the
head outputs elementwise, and projects the sum through a shared third
ReLU layer into the visual feature space. Training minimizes mean squared
error between embedded semantics and visual features plus an L2 penalty
on weight matrices.

Two directions are supported:

* ``s2v`` — semantic vectors are embedded into the visual space and
  compared with visual features there;
* ``v2s`` — an additional three-layer branch maps visual features into
  the fused-semantic space, trained jointly with the heads against the
  fused vectors.

Gradients are computed analytically (no autodiff); the ReLU subgradient
at exactly 0 is taken as 0.
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Mapping

import numpy as np

S_TO_V = "s2v"
V_TO_S = "v2s"
DIRECTIONS = (S_TO_V, V_TO_S)

# gradients are plain name -> array mappings, shape-matched to the params
GradientBundle = dict[str, np.ndarray]


@dataclasses.dataclass(frozen=True)
class NetConfig:
    """Architecture and loss settings for the embedding model.

    ``modality_dims`` maps modality tag to its input dimension. The three
    layer widths default to 512/1024/2048; ``embed_dim`` must match the
    visual feature dimension of the data the model is trained on.
    """

    modality_dims: dict[str, int]
    head_hidden: int = 512
    head_out: int = 1024
    embed_dim: int = 2048
    direction: str = S_TO_V
    l2_lambda: float = 5e-4

    def __post_init__(self) -> None:
        dims = {str(tag): int(dim) for tag, dim in sorted(self.modality_dims.items())}
        object.__setattr__(self, "modality_dims", dims)
        if not dims:
            raise ValueError("at least one modality is required")
        for tag, dim in dims.items():
            if dim < 1:
                raise ValueError(f"modality {tag}: input dim must be positive, got {dim}")
        for name in ("head_hidden", "head_out", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(self.modality_dims)


def _glorot(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    scale = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-scale, scale, size=(out_dim, in_dim))


def _is_weight(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("W")


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"expected a vector or a batch matrix, got shape {x.shape}")


class FusionNet:
    """Per-modality two-layer heads, elementwise sum, shared output layer."""

    def __init__(self, config: NetConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: NetConfig, rng: np.random.Generator) -> "FusionNet":
        """Uniform Glorot-style weights, zero biases; draw order is fixed."""
        p: dict[str, np.ndarray] = {}
        for tag in config.tags:
            in_dim = config.modality_dims[tag]
            p[f"head.{tag}.W1"] = _glorot(rng, config.head_hidden, in_dim)
            p[f"head.{tag}.b1"] = np.zeros(config.head_hidden)
            p[f"head.{tag}.W2"] = _glorot(rng, config.head_out, config.head_hidden)
            p[f"head.{tag}.b2"] = np.zeros(config.head_out)
        p["out.W3"] = _glorot(rng, config.embed_dim, config.head_out)
        p["out.b3"] = np.zeros(config.embed_dim)
        return cls(config, p)

    def check_active(self, active: Iterable[str]) -> tuple[str, ...]:
        """Canonical (sorted, deduplicated) active tags; must be configured."""
        tags = tuple(sorted(set(active)))
        if not tags:
            raise ValueError("active modality set is empty")
        unknown = [t for t in tags if t not in self.config.modality_dims]
        if unknown:
            raise ValueError(f"unknown modalities: {unknown}")
        return tags

    def _forward_cached(self, inputs: Mapping[str, np.ndarray], tags: tuple[str, ...]) -> dict:
        cfg = self.config
        head_caches = {}
        fused = None
        for tag in tags:
            if tag not in inputs:
                raise ValueError(f"no input provided for modality {tag}")
            y, _ = _as_batch(inputs[tag])
            if y.shape[1] != cfg.modality_dims[tag]:
                raise ValueError(
                    f"modality {tag}: expected dim {cfg.modality_dims[tag]}, got {y.shape[1]}"
                )
            w1, b1 = self.params[f"head.{tag}.W1"], self.params[f"head.{tag}.b1"]
            w2, b2 = self.params[f"head.{tag}.W2"], self.params[f"head.{tag}.b2"]
            z1 = y @ w1.T + b1
            a1 = np.maximum(z1, 0.0)
            z2 = a1 @ w2.T + b2
            a2 = np.maximum(z2, 0.0)
            head_caches[tag] = (y, z1, a1, z2, a2)
            fused = a2 if fused is None else fused + a2
        w3, b3 = self.params["out.W3"], self.params["out.b3"]
        z3 = fused @ w3.T + b3
        embedded = np.maximum(z3, 0.0)
        return {"tags": tags, "heads": head_caches, "fused": fused, "z3": z3, "embedded": embedded}

    def forward(self, inputs: Mapping[str, np.ndarray], active: Iterable[str]):
        """Embedded and fused outputs for the active modalities.

        Inputs may be single vectors or batch matrices (one row per
        sample); the outputs match. Modalities are summed in sorted tag
        order, so permuting ``active`` cannot change the result.
        """
        tags = self.check_active(active)
        single = all(np.asarray(inputs[t]).ndim == 1 for t in tags)
        cache = self._forward_cached(inputs, tags)
        if single:
            return cache["embedded"][0], cache["fused"][0]
        return cache["embedded"], cache["fused"]

    def backprop(self, cache: dict, d_embedded=None, d_fused=None) -> GradientBundle:
        """Data-term gradients from d(loss)/d(embedded) or d(loss)/d(fused)."""
        grads: GradientBundle = {}
        if d_embedded is not None:
            w3 = self.params["out.W3"]
            dz3 = d_embedded * (cache["z3"] > 0)
            grads["out.W3"] = dz3.T @ cache["fused"]
            grads["out.b3"] = dz3.sum(axis=0)
            d_fused = dz3 @ w3
        for tag in cache["tags"]:
            y, z1, a1, z2, _ = cache["heads"][tag]
            w2 = self.params[f"head.{tag}.W2"]
            dz2 = d_fused * (z2 > 0)
            grads[f"head.{tag}.W2"] = dz2.T @ a1
            grads[f"head.{tag}.b2"] = dz2.sum(axis=0)
            dz1 = (dz2 @ w2) * (z1 > 0)
            grads[f"head.{tag}.W1"] = dz1.T @ y
            grads[f"head.{tag}.b1"] = dz1.sum(axis=0)
        return grads


class VisualMapNet:
    """Three ReLU layers mapping visual features into the fused space.

    Mirrors the fusion branch widths in reverse: embed_dim -> head_out ->
    head_hidden -> head_out.
    """

    def __init__(self, config: NetConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: NetConfig, rng: np.random.Generator) -> "VisualMapNet":
        p = {
            "vmap.W1": _glorot(rng, config.head_out, config.embed_dim),
            "vmap.b1": np.zeros(config.head_out),
            "vmap.W2": _glorot(rng, config.head_hidden, config.head_out),
            "vmap.b2": np.zeros(config.head_hidden),
            "vmap.W3": _glorot(rng, config.head_out, config.head_hidden),
            "vmap.b3": np.zeros(config.head_out),
        }
        return cls(config, p)

    def _forward_cached(self, x: np.ndarray) -> dict:
        if x.shape[1] != self.config.embed_dim:
            raise ValueError(
                f"expected visual dim {self.config.embed_dim}, got {x.shape[1]}"
            )
        p = self.params
        z1 = x @ p["vmap.W1"].T + p["vmap.b1"]
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ p["vmap.W2"].T + p["vmap.b2"]
        h2 = np.maximum(z2, 0.0)
        z3 = h2 @ p["vmap.W3"].T + p["vmap.b3"]
        out = np.maximum(z3, 0.0)
        return {"x": x, "z1": z1, "h1": h1, "z2": z2, "h2": h2, "z3": z3, "out": out}

    def forward(self, x) -> np.ndarray:
        batch, single = _as_batch(x)
        out = self._forward_cached(batch)["out"]
        return out[0] if single else out

    def backprop(self, cache: dict, d_out: np.ndarray) -> GradientBundle:
        p = self.params
        dz3 = d_out * (cache["z3"] > 0)
        dz2 = (dz3 @ p["vmap.W3"]) * (cache["z2"] > 0)
        dz1 = (dz2 @ p["vmap.W2"]) * (cache["z1"] > 0)
        return {
            "vmap.W3": dz3.T @ cache["h2"],
            "vmap.b3": dz3.sum(axis=0),
            "vmap.W2": dz2.T @ cache["h1"],
            "vmap.b2": dz2.sum(axis=0),
            "vmap.W1": dz1.T @ cache["x"],
            "vmap.b1": dz1.sum(axis=0),
        }


class EmbeddingModel:
    """Fusion branch plus, for direction ``v2s``, the visual mapping branch."""

    def __init__(self, config: NetConfig, fusion: FusionNet, visual_map: VisualMapNet | None = None):
        if config.direction == V_TO_S and visual_map is None:
            raise ValueError("direction v2s requires a visual mapping branch")
        self.config = config
        self.fusion = fusion
        self.visual_map = visual_map

    @property
    def direction(self) -> str:
        return self.config.direction

    @property
    def prototype_dim(self) -> int:
        """Dimension of the space where prototypes and queries are compared."""
        return self.config.embed_dim if self.direction == S_TO_V else self.config.head_out

    def all_params(self) -> dict[str, np.ndarray]:
        params = dict(self.fusion.params)
        if self.visual_map is not None:
            params.update(self.visual_map.params)
        return params

    def trainable_params(self, active: Iterable[str]) -> dict[str, np.ndarray]:
        """Live references to the parameters updated when training on ``active``.

        Inactive heads take no part in the forward pass, the loss, or the
        gradients. The shared output layer is trained only in ``s2v``; the
        visual map only in ``v2s``.
        """
        tags = self.fusion.check_active(active)
        params: dict[str, np.ndarray] = {}
        for tag in tags:
            for suffix in ("W1", "b1", "W2", "b2"):
                name = f"head.{tag}.{suffix}"
                params[name] = self.fusion.params[name]
        if self.direction == S_TO_V:
            params["out.W3"] = self.fusion.params["out.W3"]
            params["out.b3"] = self.fusion.params["out.b3"]
        else:
            params.update(self.visual_map.params)
        return params

    def embed(self, inputs: Mapping[str, np.ndarray], active: Iterable[str]) -> np.ndarray:
        """Class-prototype coordinates: embedded for s2v, fused for v2s."""
        embedded, fused = self.fusion.forward(inputs, active)
        return embedded if self.direction == S_TO_V else fused

    def map_visual(self, x) -> np.ndarray:
        if self.visual_map is None:
            raise ValueError("model has no visual mapping branch (direction s2v)")
        return self.visual_map.forward(x)

    def loss(self, inputs: Mapping[str, np.ndarray], targets, active: Iterable[str]) -> float:
        return self.loss_and_grad(inputs, targets, active)[0]

    def loss_and_grad(
        self, inputs: Mapping[str, np.ndarray], targets, active: Iterable[str]
    ) -> tuple[float, GradientBundle]:
        """Mean squared error plus L2 weight penalty, with analytic gradients.

        ``targets`` holds one visual feature row per sample. The L2 term
        covers the weight matrices (not biases) of the parameters being
        trained, so the returned gradients are exact partials of the
        returned loss.
        """
        tags = self.fusion.check_active(active)
        x = np.asarray(targets, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"targets must be a batch matrix, got shape {x.shape}")
        m = x.shape[0]
        if m == 0:
            raise ValueError("empty batch")
        if x.shape[1] != self.config.embed_dim:
            raise ValueError(
                f"target dim {x.shape[1]} does not match embed_dim {self.config.embed_dim}"
            )
        batch_inputs = {t: _as_batch(inputs[t])[0] for t in tags}
        for t in tags:
            if batch_inputs[t].shape[0] != m:
                raise ValueError(
                    f"modality {t}: {batch_inputs[t].shape[0]} rows for {m} targets"
                )

        cache = self.fusion._forward_cached(batch_inputs, tags)
        if self.direction == S_TO_V:
            residual = cache["embedded"] - x
            grads = self.fusion.backprop(cache, d_embedded=(2.0 / m) * residual)
        else:
            vcache = self.visual_map._forward_cached(x)
            residual = vcache["out"] - cache["fused"]
            grads = self.visual_map.backprop(vcache, (2.0 / m) * residual)
            grads.update(self.fusion.backprop(cache, d_fused=(-2.0 / m) * residual))
        data_term = float(np.sum(residual * residual)) / m

        lam = self.config.l2_lambda
        reg = 0.0
        all_params = self.all_params()
        for name in grads:
            if _is_weight(name):
                w = all_params[name]
                reg += float(np.sum(w * w))
                if lam != 0.0:
                    grads[name] = grads[name] + 2.0 * lam * w
        return data_term + lam * reg, grads


def init_model(config: NetConfig, seed: int) -> EmbeddingModel:
    """Deterministically initialized model; same (config, seed) -> same weights."""
    rng = np.random.default_rng(seed)
    fusion = FusionNet.init(config, rng)
    visual_map = VisualMapNet.init(config, rng) if config.direction == V_TO_S else None
    return EmbeddingModel(config, fusion, visual_map)


def init_net(config: NetConfig, seed: int) -> FusionNet:
    """Deterministically initialized fusion branch only."""
    return FusionNet.init(config, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# finite-difference verification


def numerical_gradients(
    model: EmbeddingModel,
    inputs: Mapping[str, np.ndarray],
    targets,
    active: Iterable[str],
    step: float = 1e-5,
) -> GradientBundle:
    """Central finite differences of the training loss, for verification."""
    grads: GradientBundle = {}
    for name, param in model.trainable_params(active).items():
        g = np.zeros_like(param)
        flat_p = param.ravel()
        flat_g = g.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + step
            hi = model.loss(inputs, targets, active)
            flat_p[i] = orig - step
            lo = model.loss(inputs, targets, active)
            flat_p[i] = orig
            flat_g[i] = (hi - lo) / (2.0 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic: GradientBundle, numeric: GradientBundle) -> float:
    """Largest entrywise deviation, scaled by the largest gradient magnitude."""
    if set(analytic) != set(numeric):
        raise ValueError("gradient bundles cover different parameters")
    diff = 0.0
    scale = 0.0
    for name in analytic:
        diff = max(diff, float(np.max(np.abs(analytic[name] - numeric[name]), initial=0.0)))
        scale = max(
            scale,
            float(np.max(np.abs(analytic[name]), initial=0.0)),
            float(np.max(np.abs(numeric[name]), initial=0.0)),
        )
    return diff / max(scale, 1e-12)


def gradient_check(seed: int = 0, step: float = 1e-5) -> float:
    """Worst finite-difference error over small random instances.

    Covers every non-empty subset of four modalities in both directions
    with random dims <= 8 and batches <= 4; returns the max relative
    error. All parameters (biases included) are jittered to generic
    values so no ReLU preactivation sits exactly at its kink, where the
    one-sided subgradient convention and central differences disagree.
    """
    rng = np.random.default_rng(seed)
    all_tags = ("C", "I", "T", "W")
    subsets = []
    for mask in range(1, 2 ** len(all_tags)):
        subsets.append(tuple(t for i, t in enumerate(all_tags) if mask >> i & 1))
    worst = 0.0
    for direction in DIRECTIONS:
        for subset in subsets:
            dims = {t: int(rng.integers(2, 9)) for t in subset}
            config = NetConfig(
                modality_dims=dims,
                head_hidden=int(rng.integers(2, 9)),
                head_out=int(rng.integers(2, 9)),
                embed_dim=int(rng.integers(2, 9)),
                direction=direction,
                l2_lambda=float(rng.uniform(0.0, 1e-3)),
            )
            model = init_model(config, seed=int(rng.integers(0, 2**31)))
            for param in model.all_params().values():
                param += rng.uniform(-0.3, 0.3, size=param.shape)
            m = int(rng.integers(1, 5))
            inputs = {t: rng.normal(size=(m, dims[t])) for t in subset}
            targets = rng.uniform(0.0, 1.0, size=(m, config.embed_dim))
            _, analytic = model.loss_and_grad(inputs, targets, subset)
            numeric = numerical_gradients(model, inputs, targets, subset, step=step)
            worst = max(worst, max_relative_error(analytic, numeric))
    return worst
