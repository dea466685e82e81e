"""The three networks: denoiser (teacher/student), frozen feature encoder,
and per-layer discriminator heads with projection conditioning.

All networks are MLPs over flat parameter dicts. Each exposes a graph builder
(for differentiable training paths) and a plain numpy forward (for samplers);
both share the same arithmetic, and tests pin them equal.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Graph, Ref, _sigmoid
from . import serialize

__all__ = [
    "DenoiserSpec",
    "DenoiserNetwork",
    "FeatureSpec",
    "FeatureNetwork",
    "DiscriminatorSpec",
    "DiscriminatorBundle",
    "Conditioning",
    "make_conditioning",
    "denoiser_forward",
    "discriminator_score",
    "pretrain_feature_network",
    "time_embedding",
    "one_hot",
    "save_net",
    "load_denoiser",
    "load_feature_network",
    "load_bundle",
]


def time_embedding(s, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (len(s), dim)."""
    if dim % 2 != 0:
        raise ValueError("time embedding dimension must be even")
    s = np.asarray(s, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = s * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def one_hot(labels, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / fan_in)


def _mlp_params(rng, dims: list[int], zero_last: bool = False) -> dict:
    params = {}
    for i, (din, dout) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        if last and zero_last:
            params[f"w{i}"] = np.zeros((din, dout))
        else:
            params[f"w{i}"] = _he_init(rng, din, dout)
        params[f"b{i}"] = np.zeros(dout)
    return params


def _bind_params(g: Graph, params: dict, prefix: str, trainable: bool) -> dict:
    """Add every array in params to the graph, as params or consts."""
    refs = {}
    for name, arr in params.items():
        full = f"{prefix}/{name}"
        refs[name] = g.param(full, arr) if trainable else g.const(arr, name=full)
    return refs


def _mlp_forward_refs(g: Graph, x: Ref, refs: dict, n_layers: int) -> list[Ref]:
    """Hidden activations (post-silu) plus the linear output, in order."""
    outs = []
    h = x
    for i in range(n_layers):
        z = g.add(g.matmul(h, refs[f"w{i}"]), refs[f"b{i}"])
        h = g.silu(z) if i < n_layers - 1 else z
        outs.append(h)
    return outs


def _mlp_forward_np(x: np.ndarray, params: dict, n_layers: int) -> list[np.ndarray]:
    outs = []
    h = x
    for i in range(n_layers):
        z = h @ params[f"w{i}"] + params[f"b{i}"]
        h = z * _sigmoid(z) if i < n_layers - 1 else z
        outs.append(h)
    return outs


# -- denoiser -----------------------------------------------------------------


@dataclass(frozen=True)
class DenoiserSpec:
    data_dim: int
    hidden_dim: int = 256
    n_hidden: int = 4
    time_dim: int = 64
    n_classes: int | None = None
    label_dim: int = 8
    mode: str = "eps"  # prediction target: "eps" or "x0"

    def __post_init__(self):
        if self.mode not in ("eps", "x0"):
            raise ValueError(f"unknown prediction mode {self.mode!r}")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")


class DenoiserNetwork:
    """MLP mapping (noisy sample, timestep, condition) to a prediction with
    the same shape as the sample."""

    def __init__(self, spec: DenoiserSpec, params: dict, frozen: bool = False):
        self.spec = spec
        self.params = params
        self.frozen = frozen
        self.eval_count = 0

    @classmethod
    def init(cls, spec: DenoiserSpec, rng: np.random.Generator) -> "DenoiserNetwork":
        in_dim = spec.data_dim + spec.time_dim + (spec.label_dim if spec.n_classes else 0)
        dims = [in_dim] + [spec.hidden_dim] * spec.n_hidden + [spec.data_dim]
        params = _mlp_params(rng, dims, zero_last=True)
        if spec.n_classes:
            params["label_emb"] = rng.normal(size=(spec.n_classes, spec.label_dim)) * 0.5
        return cls(spec, params)

    def clone(self, mode: str | None = None) -> "DenoiserNetwork":
        """Deep copy, optionally reinterpreting the prediction mode."""
        spec = self.spec if mode is None else DenoiserSpec(**{**asdict(self.spec), "mode": mode})
        return DenoiserNetwork(spec, {k: v.copy() for k, v in self.params.items()})

    def _check_cond(self, labels):
        if self.spec.n_classes and labels is None:
            raise ValueError("conditional denoiser called without labels")

    def build(self, g: Graph, x: Ref, s: np.ndarray, labels, prefix: str, trainable: bool) -> Ref:
        """Append the forward computation to g and return the prediction ref."""
        if trainable and self.frozen:
            raise ValueError("cannot build a frozen denoiser with trainable parameters")
        self._check_cond(labels)
        self.eval_count += 1
        refs = _bind_params(g, self.params, prefix, trainable)
        pieces = [x, g.const(time_embedding(s, self.spec.time_dim))]
        if self.spec.n_classes:
            oh = g.const(one_hot(labels, self.spec.n_classes))
            pieces.append(g.matmul(oh, refs["label_emb"]))
        h = g.concat(pieces, axis=1)
        return _mlp_forward_refs(g, h, refs, self.spec.n_hidden + 1)[-1]

    def predict(self, x: np.ndarray, s: np.ndarray, labels=None) -> np.ndarray:
        """Plain numpy forward pass (identical arithmetic to build)."""
        self._check_cond(labels)
        self.eval_count += 1
        pieces = [x, time_embedding(s, self.spec.time_dim)]
        if self.spec.n_classes:
            pieces.append(one_hot(labels, self.spec.n_classes) @ self.params["label_emb"])
        h = np.concatenate(pieces, axis=1)
        return _mlp_forward_np(h, self.params, self.spec.n_hidden + 1)[-1]


def denoiser_forward(net: DenoiserNetwork, x_s: np.ndarray, s, labels=None) -> np.ndarray:
    """Prediction for a batch; x0-mode nets return clean-sample estimates,
    eps-mode nets return noise estimates."""
    s = np.asarray(s)
    if s.ndim == 0:
        s = np.full(len(x_s), int(s))
    return net.predict(x_s, s, labels)


# -- feature network ------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSpec:
    data_dim: int
    n_classes: int
    hidden_dim: int = 64
    n_hidden: int = 3  # one discriminator head per hidden layer
    embed_dim: int = 32


class FeatureNetwork:
    """Small encoder exposing per-layer features, a final embedding, and a
    classification readout. Frozen after pretraining."""

    def __init__(self, spec: FeatureSpec, params: dict, frozen: bool = False):
        self.spec = spec
        self.params = params
        self.frozen = frozen
        self.eval_count = 0

    @classmethod
    def init(cls, spec: FeatureSpec, rng: np.random.Generator) -> "FeatureNetwork":
        dims = [spec.data_dim] + [spec.hidden_dim] * spec.n_hidden
        params = {}
        for i, (din, dout) in enumerate(zip(dims, dims[1:])):
            params[f"w{i}"] = _he_init(rng, din, dout)
            params[f"b{i}"] = np.zeros(dout)
        params["embed_w"] = _he_init(rng, spec.hidden_dim, spec.embed_dim)
        params["embed_b"] = np.zeros(spec.embed_dim)
        params["readout_w"] = _he_init(rng, spec.embed_dim, spec.n_classes)
        params["readout_b"] = np.zeros(spec.n_classes)
        return cls(spec, params)

    def build(self, g: Graph, x: Ref, prefix: str = "featnet", trainable: bool = False):
        """Returns ([F_1..F_K refs], embedding ref)."""
        self.eval_count += 1
        refs = _bind_params(g, self.params, prefix, trainable)
        feats = []
        h = x
        for i in range(self.spec.n_hidden):
            h = g.silu(g.add(g.matmul(h, refs[f"w{i}"]), refs[f"b{i}"]))
            feats.append(h)
        embed = g.add(g.matmul(h, refs["embed_w"]), refs["embed_b"])
        return feats, embed

    def features(self, x: np.ndarray):
        """Numpy path: ([F_1..F_K], embedding)."""
        self.eval_count += 1
        feats = []
        h = x
        for i in range(self.spec.n_hidden):
            z = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            h = z * _sigmoid(z)
            feats.append(h)
        embed = h @ self.params["embed_w"] + self.params["embed_b"]
        return feats, embed

    def logits(self, x: np.ndarray) -> np.ndarray:
        _, embed = self.features(x)
        return embed @ self.params["readout_w"] + self.params["readout_b"]

    def classify(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x: np.ndarray, labels) -> float:
        return float(np.mean(self.classify(x) == np.asarray(labels)))


def pretrain_feature_network(
    points: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    epochs: int = 40,
    batch_size: int = 256,
    lr: float = 3e-3,
    seed: int = 0,
    spec: FeatureSpec | None = None,
) -> FeatureNetwork:
    """Train the encoder as a classifier on mode labels, then freeze it.

    Uses a squared-error objective on one-hot targets; plenty for the
    well-separated synthetic mixtures this runs on.
    """
    from .optim import Adam

    labels = np.asarray(labels, dtype=int)
    if len(np.unique(labels)) < 2:
        raise ValueError("feature network pretraining needs at least 2 classes")
    rng = np.random.default_rng(seed)
    if spec is None:
        spec = FeatureSpec(data_dim=points.shape[1], n_classes=n_classes)
    net = FeatureNetwork.init(spec, rng)
    opt = Adam(net.params, lr=lr)
    targets = one_hot(labels, n_classes)
    n = len(points)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            g = Graph()
            x = g.input(points[idx])
            refs = _bind_params(g, net.params, "featnet", trainable=True)
            h = x
            for i in range(spec.n_hidden):
                h = g.silu(g.add(g.matmul(h, refs[f"w{i}"]), refs[f"b{i}"]))
            embed = g.add(g.matmul(h, refs["embed_w"]), refs["embed_b"])
            logits = g.add(g.matmul(embed, refs["readout_w"]), refs["readout_b"])
            loss = g.scale(g.sqnorm(g.sub(logits, g.const(targets[idx]))), 1.0 / len(idx))
            grads = g.backward(np.ones(()), output=loss)["params"]
            opt.step({k.split("/", 1)[1]: v for k, v in grads.items()})
    net.frozen = True
    return net


# -- discriminator ---------------------------------------------------------------


@dataclass(frozen=True)
class DiscriminatorSpec:
    n_heads: int
    feat_dim: int
    label_dim: int
    img_dim: int
    head_hidden: int = 64
    proj_dim: int = 16


@dataclass(frozen=True)
class Conditioning:
    """Discriminator-side conditioning; c_img is computed from x_0 only."""

    c_label: np.ndarray | None  # (B, label_dim)
    c_img: np.ndarray | None  # (B, img_dim)


def make_conditioning(labels, x0: np.ndarray, featnet: FeatureNetwork, n_classes: int) -> Conditioning:
    c_label = one_hot(labels, n_classes) if labels is not None else None
    _, c_img = featnet.features(x0)
    if not np.all(np.isfinite(c_img)):
        raise ValueError("non-finite conditioning embedding")
    return Conditioning(c_label=c_label, c_img=c_img)


class DiscriminatorBundle:
    """Frozen feature network plus K trainable heads.

    Head k scores features F_k as psi_k(F_k) + <P_text c_label + P_img c_img,
    phi_k(F_k)>, with the projection term gated by cond_mode.
    """

    def __init__(self, spec: DiscriminatorSpec, params: dict, featnet: FeatureNetwork):
        self.spec = spec
        self.params = params
        self.featnet = featnet
        self.eval_count = 0

    @classmethod
    def init(cls, spec: DiscriminatorSpec, featnet: FeatureNetwork, rng: np.random.Generator):
        if spec.n_heads != featnet.spec.n_hidden:
            raise ValueError("head count must equal feature-network layer count")
        params = {}
        for k in range(spec.n_heads):
            params[f"head{k}_w1"] = _he_init(rng, spec.feat_dim, spec.head_hidden)
            params[f"head{k}_b1"] = np.zeros(spec.head_hidden)
            params[f"head{k}_w2"] = _he_init(rng, spec.head_hidden, 1)
            params[f"head{k}_b2"] = np.zeros(1)
            params[f"head{k}_phi"] = _he_init(rng, spec.feat_dim, spec.proj_dim) * 0.1
            params[f"head{k}_ptext"] = rng.normal(size=(spec.label_dim, spec.proj_dim)) * 0.1
            params[f"head{k}_pimg"] = rng.normal(size=(spec.img_dim, spec.proj_dim)) * 0.1
        return cls(spec, params, featnet)

    def bind(self, g: Graph, trainable: bool = True, prefix: str = "disc") -> dict:
        """Add head parameters to a graph once; reuse across score calls."""
        return _bind_params(g, self.params, prefix, trainable)

    def score_with_refs(
        self,
        g: Graph,
        refs: dict,
        feat_refs: list[Ref],
        cond: Conditioning | None,
        cond_mode: str = "label+image",
    ) -> list[Ref]:
        """Per-head (B, 1) score refs using already-bound parameters."""
        if len(feat_refs) != self.spec.n_heads:
            raise ValueError(
                f"expected {self.spec.n_heads} feature tensors, got {len(feat_refs)}"
            )
        self.eval_count += 1
        use_label = cond_mode in ("label", "label+image")
        use_image = cond_mode in ("image", "label+image")
        if (use_label and (cond is None or cond.c_label is None)) or (
            use_image and (cond is None or cond.c_img is None)
        ):
            raise ValueError(f"cond_mode {cond_mode!r} needs conditioning embeddings")
        scores = []
        ones_col = g.const(np.ones((self.spec.proj_dim, 1)))
        for k, f in enumerate(feat_refs):
            h = g.silu(g.add(g.matmul(f, refs[f"head{k}_w1"]), refs[f"head{k}_b1"]))
            psi = g.add(g.matmul(h, refs[f"head{k}_w2"]), refs[f"head{k}_b2"])
            proj_c = None
            if use_label:
                proj_c = g.matmul(g.const(cond.c_label), refs[f"head{k}_ptext"])
            if use_image:
                img_term = g.matmul(g.const(cond.c_img), refs[f"head{k}_pimg"])
                proj_c = img_term if proj_c is None else g.add(proj_c, img_term)
            if proj_c is not None:
                phi = g.matmul(f, refs[f"head{k}_phi"])
                psi = g.add(psi, g.matmul(g.mul(proj_c, phi), ones_col))
            scores.append(psi)
        return scores

    def score_refs(
        self,
        g: Graph,
        feat_refs: list[Ref],
        cond: Conditioning | None,
        cond_mode: str = "label+image",
        trainable: bool = True,
        prefix: str = "disc",
    ) -> list[Ref]:
        refs = self.bind(g, trainable, prefix)
        return self.score_with_refs(g, refs, feat_refs, cond, cond_mode)


def discriminator_score(
    bundle: DiscriminatorBundle,
    feats: list[np.ndarray],
    cond: Conditioning | None,
    cond_mode: str = "label+image",
) -> np.ndarray:
    """Per-head scores for a batch of feature vectors, shape (B, K)."""
    g = Graph()
    feat_refs = [g.input(f) for f in feats]
    refs = bundle.score_refs(g, feat_refs, cond, cond_mode, trainable=False)
    return np.concatenate([g.value(r) for r in refs], axis=1)


# -- checkpoints -----------------------------------------------------------------


def save_net(path, net, manifest_extra: dict | None = None) -> None:
    """Write parameters in the flat binary format plus a JSON manifest."""
    serialize.save_tensors(path, net.params)
    manifest = {
        "class": type(net).__name__,
        "spec": asdict(net.spec),
        "param_hash": serialize.file_hash(path),
    }
    if isinstance(net, FeatureNetwork):
        manifest["frozen"] = net.frozen
    if manifest_extra:
        manifest.update(manifest_extra)
    serialize.write_manifest(str(path) + ".json", manifest)


def load_denoiser(path) -> DenoiserNetwork:
    manifest = serialize.read_manifest(str(path) + ".json")
    spec = DenoiserSpec(**manifest["spec"])
    return DenoiserNetwork(spec, serialize.load_tensors(path))


def load_feature_network(path) -> FeatureNetwork:
    manifest = serialize.read_manifest(str(path) + ".json")
    spec = FeatureSpec(**manifest["spec"])
    return FeatureNetwork(spec, serialize.load_tensors(path), frozen=manifest.get("frozen", True))


def load_bundle(path, featnet: FeatureNetwork) -> DiscriminatorBundle:
    manifest = serialize.read_manifest(str(path) + ".json")
    spec = DiscriminatorSpec(**manifest["spec"])
    return DiscriminatorBundle(spec, serialize.load_tensors(path), featnet)
