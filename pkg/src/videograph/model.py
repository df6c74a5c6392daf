"""The video-graph network and its orderless mean-pool counterpart.

A video is T segment features of shape (H, W, C). A node attention block
scores every spatial position against N learned latent nodes and re-expresses
each segment in node space; stacked over time this gives the 5-D video tensor
with axis order [timesteps, nodes, height, width, channels]. Graph embedding
layers then run a per-channel convolution along time, another along the node
axis, a 1x1 channel-mixing convolution, batch norm, relu, and a 3x3
non-overlapping max pool over the time and node axes. A two-layer classifier
head maps the spatially averaged, flattened result to class scores.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as tz
from .kmeans import kmeans
from .sobol import SobolSequence
from .tensor import BatchNormState, ShapeError, Tensor

POOL_KERNEL = 3

SIGMA_KINDS = ("sigmoid", "softmax_over_nodes", "tanh")
INIT_STRATEGIES = ("random", "sobol", "kmeans")
LABEL_MODES = ("single", "multi")


@dataclass
class VideoGraphConfig:
    T: int
    N: int
    H: int
    W: int
    C: int
    num_classes: int
    t: int = 7
    n: int = 7
    num_embedding_layers: int = 2
    classifier_hidden: int = 512
    label_mode: str = "single"
    sigma_kind: str = "sigmoid"
    init_strategy: str = "random"
    seed: int = 0

    def validate(self) -> None:
        for name in ("T", "N", "H", "W", "C", "num_classes", "classifier_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"config field {name} must be positive")
        if self.t % 2 == 0 or self.n % 2 == 0:
            raise ValueError(f"kernel sizes must be odd; got t={self.t}, n={self.n}")
        if self.num_embedding_layers < 1:
            raise ValueError("need at least one graph embedding layer")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        if self.sigma_kind not in SIGMA_KINDS:
            raise ValueError(f"sigma_kind must be one of {SIGMA_KINDS}")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init_strategy must be one of {INIT_STRATEGIES}")

    def to_dict(self) -> dict:
        return asdict(self)


def full_scale_config(num_classes: int = 12) -> VideoGraphConfig:
    """Full-scale configuration (for shape inference; do not allocate)."""
    return VideoGraphConfig(T=64, N=128, H=7, W=7, C=1024, num_classes=num_classes,
                            classifier_hidden=512)


def desk_config(num_classes: int = 4, seed: int = 0) -> VideoGraphConfig:
    """Small configuration that trains in seconds on a laptop core.

    N=8 only survives one round of /3 pooling, so the desk preset uses a
    single graph embedding layer.
    """
    return VideoGraphConfig(T=16, N=8, H=1, W=1, C=16, num_classes=num_classes,
                            num_embedding_layers=1, classifier_hidden=64, seed=seed)


# ---------------------------------------------------------------------------
# Shape inference


def shape_inference(config: VideoGraphConfig) -> list[tuple[str, object]]:
    """Symbolic per-stage shapes for a config, without allocating anything.

    Raises ShapeError where the real forward would: a pooled axis shorter
    than the pooling kernel, or any axis reaching zero.
    """
    config.validate()
    stages: list[tuple[str, object]] = [
        ("input", (config.T, config.H, config.W, config.C)),
        ("node_attention", (config.H, config.W, config.N)),
        ("video_tensor", (config.T, config.N, config.H, config.W, config.C)),
    ]
    t_len, n_len = config.T, config.N
    for layer in range(1, config.num_embedding_layers + 1):
        if t_len < POOL_KERNEL:
            raise ShapeError(f"graph embedding layer {layer}: time axis length {t_len} "
                             f"is below the pooling kernel {POOL_KERNEL}")
        if n_len < POOL_KERNEL:
            raise ShapeError(f"graph embedding layer {layer}: node axis length {n_len} "
                             f"is below the pooling kernel {POOL_KERNEL}")
        t_len //= POOL_KERNEL
        n_len //= POOL_KERNEL
        stages.append((f"graph_embedding_{layer}", (t_len, n_len, config.H, config.W, config.C)))
    stages.append(("classifier_input", t_len * n_len * config.C))
    stages.append(("scores", config.num_classes))
    return stages


# ---------------------------------------------------------------------------
# Initialization


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_latent_nodes(strategy: str, n_nodes: int, channels: int, seed: int,
                      feature_sample: np.ndarray | None = None) -> np.ndarray:
    """Initial latent node matrix (n_nodes, channels) for a given strategy.

    random: i.i.d. normal with std 1/sqrt(channels).
    sobol: first n_nodes points of a channels-dimensional Sobol sequence,
        mapped affinely from [0,1) to [-1,1).
    kmeans: centroids of the supplied feature sample (one row per vector).
    """
    if n_nodes < 2:
        raise ValueError(f"need at least 2 nodes, got {n_nodes}")
    if strategy == "random":
        rng = np.random.default_rng(seed)
        return rng.normal(0.0, 1.0 / np.sqrt(channels), size=(n_nodes, channels))
    if strategy == "sobol":
        return SobolSequence(channels).take(n_nodes) * 2.0 - 1.0
    if strategy == "kmeans":
        if feature_sample is None:
            raise ValueError("kmeans initialization requires a feature_sample")
        sample = np.asarray(feature_sample, dtype=np.float64)
        if sample.ndim != 2 or sample.shape[1] != channels:
            raise ValueError(f"feature_sample must be (M, {channels}); got {sample.shape}")
        if sample.shape[0] < n_nodes:
            raise ValueError(f"feature_sample has {sample.shape[0]} vectors, "
                             f"need at least {n_nodes}")
        return kmeans(sample, n_nodes, seed=seed)
    raise ValueError(f"unknown init strategy {strategy!r}")


# ---------------------------------------------------------------------------
# Parameter groups


ATTENTION_ANCHOR_SCALE = 3.0


class NodeAttentionParams:
    """Affine node transform (weight, bias) plus the similarity nonlinearity.

    The bias starts as a shared anchor (a constant vector dominating the
    transformed rows), so all nodes begin nearly aligned and are pulled apart
    by training as they specialize.
    """

    def __init__(self, channels: int, sigma_kind: str, rng: np.random.Generator):
        self.weight = Tensor(fan_in_uniform(rng, (channels, channels), channels), requires_grad=True)
        self.bias = Tensor(np.full((1, channels), ATTENTION_ANCHOR_SCALE / np.sqrt(channels)),
                           requires_grad=True)
        self.sigma_kind = sigma_kind


class GraphEmbeddingParams:
    """Kernel banks for one graph embedding layer."""

    def __init__(self, channels: int, t: int, n: int, rng: np.random.Generator):
        self.time_kernels = Tensor(fan_in_uniform(rng, (channels, t), t), requires_grad=True)
        self.node_kernels = Tensor(fan_in_uniform(rng, (channels, n), n), requires_grad=True)
        self.channel_mixer = Tensor(fan_in_uniform(rng, (channels, channels), channels), requires_grad=True)
        self.channel_bias = Tensor(np.zeros((1, channels)), requires_grad=True)
        self.bn = BatchNormState(channels)


class ClassifierHead:
    """Two fully connected layers with batch norm and relu in between.

    The first layer carries no bias: batch norm directly after it would
    cancel any per-feature shift anyway.
    """

    def __init__(self, input_dim: int, hidden: int, num_classes: int, rng: np.random.Generator):
        self.fc1_weight = Tensor(fan_in_uniform(rng, (input_dim, hidden), input_dim), requires_grad=True)
        self.bn = BatchNormState(hidden)
        self.fc2_weight = Tensor(fan_in_uniform(rng, (hidden, num_classes), hidden), requires_grad=True)
        self.fc2_bias = Tensor(np.zeros((1, num_classes)), requires_grad=True)

    def forward(self, x: Tensor, mode: str, label_mode: str, capture: dict | None = None) -> Tensor:
        h = tz.matmul(x, self.fc1_weight)
        h = tz.batch_norm(h, 1, self.bn, mode)
        if capture is not None:
            capture["classifier.pre_relu"] = h
        h = tz.relu(h)
        logits = tz.add(tz.matmul(h, self.fc2_weight), self.fc2_bias)
        if label_mode == "single":
            return tz.softmax(logits, axis=1)
        return tz.sigmoid(logits)

    def named_parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.fc1.weight": self.fc1_weight,
            f"{prefix}.bn.gamma": self.bn.gamma,
            f"{prefix}.bn.beta": self.bn.beta,
            f"{prefix}.fc2.weight": self.fc2_weight,
            f"{prefix}.fc2.bias": self.fc2_bias,
        }


# ---------------------------------------------------------------------------
# Functional blocks


def transformed_nodes(nodes: Tensor, params: NodeAttentionParams) -> Tensor:
    """Row-wise affine transform of the latent node matrix."""
    return tz.add(tz.matmul(nodes, tz.transpose(params.weight, (1, 0))), params.bias)


def _apply_sigma(similarities: Tensor, sigma_kind: str, node_axis: int) -> Tensor:
    if sigma_kind == "softmax_over_nodes":
        return tz.softmax(similarities, axis=node_axis)
    return tz.activation(similarities, sigma_kind)


def node_attention_forward(x: Tensor, nodes: Tensor, params: NodeAttentionParams) -> Tensor:
    """Attend one segment feature (H, W, C) to every latent node.

    Returns the node-attentive feature (N, H, W, C) where slice j is the
    transformed node j weighted by its similarity to each spatial position.
    """
    x = tz.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"segment feature must be (H, W, C); got {x.shape}")
    h, w, c = x.shape
    if nodes.shape[1] != c:
        raise ShapeError(f"channel mismatch: feature has {c} channels, nodes have {nodes.shape[1]}")
    n = nodes.shape[0]
    y_hat = transformed_nodes(nodes, params)
    flat = tz.reshape(x, (h * w, c))
    sims = tz.matmul(flat, tz.transpose(y_hat, (1, 0)))          # (H*W, N)
    alpha = _apply_sigma(sims, params.sigma_kind, node_axis=1)
    alpha_n = tz.transpose(tz.reshape(alpha, (h, w, n)), (2, 0, 1))  # (N, H, W)
    return tz.mul(tz.reshape(alpha_n, (n, h, w, 1)), tz.reshape(y_hat, (n, 1, 1, c)))


def graph_embedding_pipeline(h: Tensor, params: GraphEmbeddingParams, mode: str,
                             time_axis: int, node_axis: int,
                             capture: dict | None = None, tag: str = "") -> Tensor:
    """Conv along time, conv along nodes, channel mix, BN, relu, 3x3 pool."""
    channels = h.shape[-1]
    h = tz.depthwise_conv1d(h, time_axis, params.time_kernels)
    h = tz.depthwise_conv1d(h, node_axis, params.node_kernels)
    shape = h.shape
    flat = tz.reshape(h, (-1, channels))
    flat = tz.add(tz.matmul(flat, params.channel_mixer), params.channel_bias)
    h = tz.reshape(flat, shape)
    h = tz.batch_norm(h, h.ndim - 1, params.bn, mode)
    if capture is not None:
        capture[f"{tag}pre_relu"] = h
    h = tz.relu(h)
    if capture is not None:
        capture[f"{tag}pre_pool"] = (h, (time_axis, node_axis))
    return tz.max_pool(h, (time_axis, node_axis), kernel=POOL_KERNEL)


def graph_embedding_forward(z: Tensor, params: GraphEmbeddingParams, mode: str = "train") -> Tensor:
    """One graph embedding layer over a single video tensor (T, N, H, W, C)."""
    z = tz.as_tensor(z)
    if z.ndim != 5:
        raise ShapeError(f"video tensor must be (T, N, H, W, C); got {z.shape}")
    return graph_embedding_pipeline(z, params, mode, time_axis=0, node_axis=1)


def videograph_forward(segments: Tensor, model: "VideoGraphModel", mode: str = "eval") -> Tensor:
    """Class scores for one video's segment features (T, H, W, C)."""
    return model.forward_video(segments, mode=mode)


# ---------------------------------------------------------------------------
# Models


class VideoGraphModel:
    def __init__(self, config: VideoGraphConfig, feature_sample: np.ndarray | None = None):
        config.validate()
        stages = shape_inference(config)
        self.config = config
        self.classifier_input_dim = next(v for k, v in stages if k == "classifier_input")

        rng = np.random.default_rng(config.seed)
        self.nodes = Tensor(
            init_latent_nodes(config.init_strategy, config.N, config.C, config.seed,
                              feature_sample=feature_sample),
            requires_grad=True)
        self.attention = NodeAttentionParams(config.C, config.sigma_kind, rng)
        self.embeddings = [GraphEmbeddingParams(config.C, config.t, config.n, rng)
                           for _ in range(config.num_embedding_layers)]
        self.classifier = ClassifierHead(self.classifier_input_dim, config.classifier_hidden,
                                         config.num_classes, rng)

    # -- parameter bookkeeping ------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        params = {"nodes": self.nodes,
                  "attention.weight": self.attention.weight,
                  "attention.bias": self.attention.bias}
        for i, emb in enumerate(self.embeddings):
            params[f"embed{i}.time_kernels"] = emb.time_kernels
            params[f"embed{i}.node_kernels"] = emb.node_kernels
            params[f"embed{i}.channel_mixer"] = emb.channel_mixer
            params[f"embed{i}.channel_bias"] = emb.channel_bias
            params[f"embed{i}.bn.gamma"] = emb.bn.gamma
            params[f"embed{i}.bn.beta"] = emb.bn.beta
        params.update(self.classifier.named_parameters("classifier"))
        return params

    def bn_states(self) -> dict[str, BatchNormState]:
        states = {f"embed{i}.bn": emb.bn for i, emb in enumerate(self.embeddings)}
        states["classifier.bn"] = self.classifier.bn
        return states

    def transformed_nodes_array(self) -> np.ndarray:
        with tz.stop_recording():
            return transformed_nodes(self.nodes, self.attention).data

    # -- forward passes -------------------------------------------------------

    def forward_batch(self, x: Tensor, mode: str = "train", capture: dict | None = None) -> Tensor:
        """Scores for a batch of videos (B, T, H, W, C) -> (B, num_classes)."""
        x = tz.as_tensor(x)
        cfg = self.config
        if x.ndim != 5 or x.shape[1:] != (cfg.T, cfg.H, cfg.W, cfg.C):
            raise ShapeError(f"expected batch shaped (B, {cfg.T}, {cfg.H}, {cfg.W}, {cfg.C}); "
                             f"got {x.shape}")
        b = x.shape[0]
        rows = b * cfg.T * cfg.H * cfg.W

        y_hat = transformed_nodes(self.nodes, self.attention)
        flat = tz.reshape(x, (rows, cfg.C))
        sims = tz.matmul(flat, tz.transpose(y_hat, (1, 0)))        # (rows, N)
        alpha = _apply_sigma(sims, cfg.sigma_kind, node_axis=1)
        alpha = tz.reshape(alpha, (b, cfg.T, cfg.H, cfg.W, cfg.N))
        alpha = tz.transpose(alpha, (0, 1, 4, 2, 3))               # (B, T, N, H, W)
        z = tz.mul(tz.reshape(alpha, (b, cfg.T, cfg.N, cfg.H, cfg.W, 1)),
                   tz.reshape(y_hat, (1, 1, cfg.N, 1, 1, cfg.C)))

        h = z
        for i, emb in enumerate(self.embeddings):
            h = graph_embedding_pipeline(h, emb, mode, time_axis=1, node_axis=2,
                                         capture=capture, tag=f"embed{i}.")
        if capture is not None:
            capture["embedding_output"] = h

        pooled = tz.mean(h, axes=(3, 4))                           # (B, T', N', C)
        flat2 = tz.reshape(pooled, (b, self.classifier_input_dim))
        return self.classifier.forward(flat2, mode, cfg.label_mode, capture=capture)

    def forward_video(self, segments: Tensor, mode: str = "eval") -> Tensor:
        """Scores for one video (T, H, W, C) -> (num_classes,)."""
        segments = tz.as_tensor(segments)
        if segments.ndim != 4:
            raise ShapeError(f"segments must be (T, H, W, C); got {segments.shape}")
        batched = tz.reshape(segments, (1,) + segments.shape)
        return tz.reshape(self.forward_batch(batched, mode), (self.config.num_classes,))

    def eval_scores(self, features: np.ndarray) -> np.ndarray:
        """Eval-mode scores for one video as a plain array (deterministic)."""
        with tz.stop_recording():
            return self.forward_video(Tensor(features), mode="eval").data.copy()

    @property
    def label_mode(self) -> str:
        return self.config.label_mode


class MeanPoolBaseline:
    """Orderless control model: average features over time and space, classify.

    The average uses correctly-rounded summation, so any permutation of the
    time axis produces bit-identical scores.
    """

    def __init__(self, config: VideoGraphConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.classifier = ClassifierHead(config.C, config.classifier_hidden,
                                         config.num_classes, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.classifier.named_parameters("classifier")

    def bn_states(self) -> dict[str, BatchNormState]:
        return {"classifier.bn": self.classifier.bn}

    def forward_batch(self, x: Tensor, mode: str = "train", capture: dict | None = None) -> Tensor:
        x = tz.as_tensor(x)
        if x.ndim != 5:
            raise ShapeError(f"expected batch shaped (B, T, H, W, C); got {x.shape}")
        pooled = tz.mean_exact(x, axes=(1, 2, 3))                  # (B, C)
        return self.classifier.forward(pooled, mode, self.config.label_mode)

    def forward_video(self, segments: Tensor, mode: str = "eval") -> Tensor:
        segments = tz.as_tensor(segments)
        batched = tz.reshape(segments, (1,) + segments.shape)
        return tz.reshape(self.forward_batch(batched, mode), (self.config.num_classes,))

    def eval_scores(self, features: np.ndarray) -> np.ndarray:
        with tz.stop_recording():
            return self.forward_video(Tensor(features), mode="eval").data.copy()

    @property
    def label_mode(self) -> str:
        return self.config.label_mode


MODEL_TYPES = {"videograph": VideoGraphModel, "mean_pool": MeanPoolBaseline}


def model_type_name(model) -> str:
    for name, cls in MODEL_TYPES.items():
        if isinstance(model, cls):
            return name
    raise TypeError(f"unknown model type {type(model)!r}")
