"""Predictor architectures: recurrent encoders, attention, fusion, heads.

A ModelVariant bundles an encoder (GRU or LSTM stack), optional scaled
dot-product attention with the final hidden state as query, an optional
fusion stage that folds the attention context back into every step (either a
learned bottleneck gate or a fixed linear map of [h; c]), and an output head
(factorized time/channel projections, or one dense map from the flattened
sequence). Parameter and multiply-accumulate counts come both from closed
forms and from enumerating the named tensors, and the two must agree.

Weight orientation is row-vector convention throughout: x [B, in] @ W [in, out].
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, ShapeMismatchError

__all__ = [
    "ModelDims",
    "ModelVariant",
    "VARIANTS",
    "attention",
    "build_variant",
    "closed_form_param_count",
    "dense_head",
    "dslh",
    "flops_breakdown",
    "flops_estimate",
    "forward",
    "gated_fusion",
    "gru_forward",
    "linear_fusion",
    "load_checkpoint",
    "lstm_forward",
    "param_count",
    "save_checkpoint",
    "variant_from_name",
]


@dataclass(frozen=True)
class ModelDims:
    d: int            # hidden width
    layers: int
    n_p: int          # past window
    n_l: int          # prediction horizon
    input_dim: int    # per-step features incl. the speed column
    output_dim: int   # real channel dims (2*R*T)
    r: int = 4        # fusion bottleneck reduction
    dropout: float = 0.0

    def __post_init__(self):
        if min(self.d, self.layers, self.n_p, self.n_l, self.input_dim,
               self.output_dim, self.r) < 1:
            raise ConfigError("all model dimensions must be positive")
        if self.d % self.r:
            raise ConfigError(f"hidden dim {self.d} not divisible by reduction ratio {self.r}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


_GRU_GATES = ("z", "r", "h")
_LSTM_GATES = ("i", "f", "g", "o")


@dataclass
class ModelVariant:
    encoder: str                  # gru | lstm
    attention: bool
    fusion: str                   # none | linear | gated
    head: str                     # dense | dslh
    use_speed: bool
    dims: ModelDims
    params: dict[str, Tensor] = field(default_factory=dict)

    def encoder_input_dim(self) -> int:
        return self.dims.input_dim if self.use_speed else self.dims.input_dim - 1

    def descriptor(self) -> str:
        return (f"{self.encoder} attn={int(self.attention)} fusion={self.fusion} "
                f"head={self.head} speed={int(self.use_speed)}")

    def cast(self, dtype, requires_grad: bool = False) -> "ModelVariant":
        """Copy with converted parameter precision (e.g. float32 inference)."""
        params = {k: Tensor(v.data.astype(dtype), requires_grad=requires_grad)
                  for k, v in self.params.items()}
        return replace(self, params=params)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            v.data[...] = state[k]


def _expected_shapes(variant: ModelVariant) -> dict[str, tuple]:
    d = variant.dims
    shapes: dict[str, tuple] = {}
    gates = _GRU_GATES if variant.encoder == "gru" else _LSTM_GATES
    for layer in range(d.layers):
        in_dim = variant.encoder_input_dim() if layer == 0 else d.d
        for g in gates:
            shapes[f"enc{layer}.W{g}"] = (in_dim, d.d)
            shapes[f"enc{layer}.U{g}"] = (d.d, d.d)
            shapes[f"enc{layer}.b{g}"] = (d.d,)
    if variant.fusion == "gated":
        shapes["fuse.W1"] = (2 * d.d, d.d // d.r)
        shapes["fuse.b1"] = (d.d // d.r,)
        shapes["fuse.W2"] = (d.d // d.r, d.d)
        shapes["fuse.b2"] = (d.d,)
    elif variant.fusion == "linear":
        shapes["fuse.W"] = (2 * d.d, d.d)
        shapes["fuse.b"] = (d.d,)
    if variant.head == "dslh":
        shapes["head.Wtime"] = (d.n_p, d.n_l)
        shapes["head.btime"] = (d.n_l,)
        shapes["head.Wch"] = (d.d, d.output_dim)
        shapes["head.bch"] = (d.output_dim,)
    else:
        shapes["head.W"] = (d.n_p * d.d, d.n_l * d.output_dim)
        shapes["head.b"] = (d.n_l * d.output_dim,)
    return shapes


def build_variant(encoder: str = "gru", attention: bool = True,
                  fusion: str = "gated", head: str = "dslh",
                  use_speed: bool = True, dims: ModelDims | None = None,
                  seed: int = 0, dtype=np.float64) -> ModelVariant:
    """Construct a variant with freshly initialized parameters.

    Matrices are uniform in +-1/sqrt(fan_in); biases start at zero.
    """
    if encoder not in ("gru", "lstm"):
        raise ConfigError(f"unknown encoder {encoder!r}")
    if fusion not in ("none", "linear", "gated"):
        raise ConfigError(f"unknown fusion {fusion!r}")
    if head not in ("dense", "dslh"):
        raise ConfigError(f"unknown head {head!r}")
    if fusion != "none" and not attention:
        raise ConfigError("fusion requires attention")
    if dims is None:
        raise ConfigError("dims are required")
    variant = ModelVariant(encoder=encoder, attention=attention, fusion=fusion,
                           head=head, use_speed=use_speed, dims=dims)
    rng = np.random.default_rng(seed)
    for name, shape in _expected_shapes(variant).items():
        if len(shape) == 1:
            data = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        variant.params[name] = Tensor(data, requires_grad=True)
    return variant


# -- encoder ---------------------------------------------------------------


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return ad.mul(x, mask)


def _recurrent_layer(x: Tensor, p: dict[str, Tensor], gates, kind: str) -> Tensor:
    """One full-sequence encoder layer as a single fused tape op."""
    weights = [p[f"W{g}"] for g in gates]
    recur = [p[f"U{g}"] for g in gates]
    biases = [p[f"b{g}"] for g in gates]
    flat = [t for trio in zip(weights, recur, biases) for t in trio]
    args = [x.data] + [t.data for t in flat]
    if kind == "gru":
        h, cache = kernels.gru_layer_forward(*args)

        def bwd(g, x=x, p=p, h=h, cache=cache):
            grads = kernels.gru_layer_backward(
                g, x.data, p["Wz"].data, p["Uz"].data, p["Wr"].data, p["Ur"].data,
                p["Wh"].data, p["Uh"].data, h, cache)
            _scatter(grads, x, p, _GRU_GATES)
    else:
        h, cache = kernels.lstm_layer_forward(*args)

        def bwd(g, x=x, p=p, cache=cache):
            grads = kernels.lstm_layer_backward(
                g, x.data, p["Wi"].data, p["Ui"].data, p["Wf"].data, p["Uf"].data,
                p["Wg"].data, p["Ug"].data, p["Wo"].data, p["Uo"].data, cache)
            _scatter(grads, x, p, _LSTM_GATES)

    return ad.custom_op(h, [x] + flat, bwd)


def _scatter(grads, x: Tensor, p: dict[str, Tensor], gates) -> None:
    dx = grads[0]
    if x.requires_grad:
        x._accumulate(dx)
    idx = 1
    for g in gates:
        for key in (f"W{g}", f"U{g}", f"b{g}"):
            t = p[key]
            if t.requires_grad:
                t._accumulate(grads[idx])
            idx += 1


def _layer_params(variant: ModelVariant, layer: int) -> dict[str, Tensor]:
    prefix = f"enc{layer}."
    return {k[len(prefix):]: v for k, v in variant.params.items() if k.startswith(prefix)}


def _encode(variant: ModelVariant, x: Tensor, training: bool, rng) -> Tensor:
    gates = _GRU_GATES if variant.encoder == "gru" else _LSTM_GATES
    out = x
    for layer in range(variant.dims.layers):
        if layer > 0 and training:
            out = _dropout(out, variant.dims.dropout, rng)
        out = _recurrent_layer(out, _layer_params(variant, layer), gates, variant.encoder)
    return out


def gru_forward(x: Tensor, variant: ModelVariant, training: bool = False,
                rng=None) -> Tensor:
    """Encoder output sequence E [B, n_p, d] for a GRU variant."""
    if variant.encoder != "gru":
        raise ConfigError("variant does not use a GRU encoder")
    return _encode(variant, x, training, rng)


def lstm_forward(x: Tensor, variant: ModelVariant, training: bool = False,
                 rng=None) -> Tensor:
    if variant.encoder != "lstm":
        raise ConfigError("variant does not use an LSTM encoder")
    return _encode(variant, x, training, rng)


# -- attention and fusion ----------------------------------------------------


def attention(e: Tensor) -> tuple[Tensor, Tensor]:
    """Dot-product attention against the final hidden state.

    Scores are h_tau . q / sqrt(d); returns (weights [B, n_p], context [B, d]).
    """
    b, t, d = e.shape
    q = ad.take_step(e, -1)                                  # [B, d]
    scores = ad.sum_axis(ad.mul(e, ad.expand(q, 1, t)), 2)    # [B, T]
    scores = ad.mul(scores, 1.0 / np.sqrt(d))
    w = ad.softmax_lastaxis(scores)
    c = ad.sum_axis(ad.mul(e, ad.expand(w, 2, d)), 1)         # [B, d]
    return w, c


def gated_fusion(e: Tensor, c: Tensor, variant: ModelVariant) -> Tensor:
    """Per-step learned gate mixing each hidden state with the shared context."""
    p = variant.params
    t = e.shape[1]
    cexp = ad.expand(c, 1, t)
    u = ad.concat_last([e, cexp])                             # [B, T, 2d]
    hidden = ad.relu(ad.add(ad.matmul(u, p["fuse.W1"]), p["fuse.b1"]))
    g = ad.sigmoid(ad.add(ad.matmul(hidden, p["fuse.W2"]), p["fuse.b2"]))
    one_minus = ad.add(ad.neg(g), 1.0)
    return ad.add(ad.mul(g, e), ad.mul(one_minus, cexp))


def linear_fusion(e: Tensor, c: Tensor, variant: ModelVariant) -> Tensor:
    """Fixed per-step linear map of the concatenated [h; c]."""
    p = variant.params
    u = ad.concat_last([e, ad.expand(c, 1, e.shape[1])])
    return ad.add(ad.matmul(u, p["fuse.W"]), p["fuse.b"])


# -- output heads -------------------------------------------------------------


def dslh(e: Tensor, variant: ModelVariant) -> Tensor:
    """Factorized head: mix the n_p positions into n_l, then map d to C."""
    p = variant.params
    et = ad.swap_last2(e)                                     # [B, d, T]
    g = ad.add(ad.matmul(et, p["head.Wtime"]), p["head.btime"])   # [B, d, n_l]
    g = ad.swap_last2(g)                                      # [B, n_l, d]
    return ad.add(ad.matmul(g, p["head.Wch"]), p["head.bch"])


def dense_head(e: Tensor, variant: ModelVariant) -> Tensor:
    """Direct map from the flattened (step-major) sequence to all outputs."""
    p = variant.params
    b = e.shape[0]
    d = variant.dims
    flat = ad.reshape(e, (b, d.n_p * d.d))
    y = ad.add(ad.matmul(flat, p["head.W"]), p["head.b"])
    return ad.reshape(y, (b, d.n_l, d.output_dim))


# -- full forward --------------------------------------------------------------


def forward(variant: ModelVariant, x, training: bool = False, rng=None) -> Tensor:
    """Predict increment windows [B, n_l, C] from inputs [B, n_p, D_in].

    When use_speed is false the input must already have the speed column
    dropped (D_in = D - 1). Deterministic when training is false.
    """
    if training and variant.dims.dropout > 0.0 and rng is None:
        raise ConfigError("training-mode forward with dropout needs an rng")
    xt = x if isinstance(x, Tensor) else Tensor(x)
    expected = variant.encoder_input_dim()
    if xt.shape[-1] != expected or xt.shape[-2] != variant.dims.n_p:
        raise ShapeMismatchError(
            f"input {xt.shape} does not match [B, {variant.dims.n_p}, {expected}]")
    e = _encode(variant, xt, training, rng)
    if variant.attention:
        _, c = attention(e)
        if variant.fusion == "gated":
            e = gated_fusion(e, c, variant)
        elif variant.fusion == "linear":
            e = linear_fusion(e, c, variant)
    if training:
        e = _dropout(e, variant.dims.dropout, rng)
    if variant.head == "dslh":
        return dslh(e, variant)
    return dense_head(e, variant)


# -- parameter and MAC counting --------------------------------------------------


def param_count(variant: ModelVariant) -> int:
    """Exact parameter count by enumerating the named tensors."""
    return int(sum(t.size for t in variant.params.values()))


def closed_form_param_count(variant: ModelVariant) -> int:
    """Documented closed forms; must equal the enumeration exactly.

    Per encoder layer with input width `in`: gru 3*(in*d + d^2 + d),
    lstm 4*(in*d + d^2 + d) (one bias per gate). Gated fusion
    (d/r)*2d + d*(d/r) + d/r + d; linear fusion 2d^2 + d.
    DSLH n_p*n_l + d*C + n_l + C; dense head n_p*d*n_l*C + n_l*C.
    """
    d = variant.dims
    gates = 3 if variant.encoder == "gru" else 4
    total = 0
    for layer in range(d.layers):
        in_dim = variant.encoder_input_dim() if layer == 0 else d.d
        total += gates * (in_dim * d.d + d.d * d.d + d.d)
    if variant.fusion == "gated":
        total += (d.d // d.r) * 2 * d.d + d.d * (d.d // d.r) + d.d // d.r + d.d
    elif variant.fusion == "linear":
        total += 2 * d.d * d.d + d.d
    if variant.head == "dslh":
        total += d.n_p * d.n_l + d.d * d.output_dim + d.n_l + d.output_dim
    else:
        total += d.n_p * d.d * d.n_l * d.output_dim + d.n_l * d.output_dim
    return total


def head_weight_count(variant: ModelVariant) -> int:
    """Head weights excluding biases (matrix elements only)."""
    names = ("head.Wtime", "head.Wch") if variant.head == "dslh" else ("head.W",)
    return int(sum(variant.params[n].size for n in names))


def flops_breakdown(variant: ModelVariant) -> dict[str, int]:
    """Per-sample multiply-accumulates of every matrix product; activations
    and elementwise work excluded."""
    d = variant.dims
    enc_in = 0
    enc_rec = 0
    gates = 3 if variant.encoder == "gru" else 4
    for layer in range(d.layers):
        in_dim = variant.encoder_input_dim() if layer == 0 else d.d
        enc_in += d.n_p * gates * in_dim * d.d
        enc_rec += d.n_p * gates * d.d * d.d
    out = {"encoder_input": enc_in, "encoder_recurrent": enc_rec}
    out["attention"] = 2 * d.n_p * d.d if variant.attention else 0
    if variant.fusion == "gated":
        out["fusion"] = d.n_p * (2 * d.d * (d.d // d.r) + (d.d // d.r) * d.d)
    elif variant.fusion == "linear":
        out["fusion"] = d.n_p * 2 * d.d * d.d
    else:
        out["fusion"] = 0
    if variant.head == "dslh":
        out["head"] = d.n_p * d.n_l * d.d + d.n_l * d.d * d.output_dim
    else:
        out["head"] = d.n_p * d.d * d.n_l * d.output_dim
    return out


def flops_estimate(variant: ModelVariant) -> int:
    """Total per-sample MACs."""
    return int(sum(flops_breakdown(variant).values()))


# -- named variants ---------------------------------------------------------------

# ablation families: encoder, attention, fusion, head, use_speed
VARIANTS = {
    "gru-dense": ("gru", False, "none", "dense", True),
    "gru-dslh": ("gru", False, "none", "dslh", True),
    "gru-attn-dense": ("gru", True, "linear", "dense", True),
    "gru-attn-gated-dense": ("gru", True, "gated", "dense", True),
    "gru-attn-dslh": ("gru", True, "linear", "dslh", True),
    "proposed": ("gru", True, "gated", "dslh", True),
    "proposed-nospeed": ("gru", True, "gated", "dslh", False),
    "lstm-dslh": ("lstm", False, "none", "dslh", True),
}

ABLATION_VARIANTS = [
    "gru-dense", "gru-dslh", "gru-attn-dense", "gru-attn-gated-dense",
    "gru-attn-dslh", "proposed", "proposed-nospeed",
]


def variant_from_name(name: str, dims: ModelDims, seed: int = 0,
                      dtype=np.float64) -> ModelVariant:
    try:
        encoder, attn, fusion, head, speed = VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; known: {sorted(VARIANTS)}") from None
    return build_variant(encoder, attn, fusion, head, speed, dims, seed, dtype)


# -- checkpoint format (CSIM1) -------------------------------------------------------
#
# ASCII header:
#   CSIM1 encoder attention fusion head use_speed d layers n_p n_l D C r dropout
# then per tensor: an ASCII line "name dim0 dim1 ...", then little-endian
# float32 data. Loading rejects any shape or name mismatch.


def save_checkpoint(variant: ModelVariant, path) -> None:
    d = variant.dims
    header = (f"CSIM1 {variant.encoder} {int(variant.attention)} {variant.fusion} "
              f"{variant.head} {int(variant.use_speed)} {d.d} {d.layers} {d.n_p} "
              f"{d.n_l} {d.input_dim} {d.output_dim} {d.r} {d.dropout!r}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for name, tensor in variant.params.items():
            dims_txt = " ".join(str(s) for s in tensor.shape)
            fh.write(f"{name} {dims_txt}\n".encode("ascii"))
            fh.write(tensor.data.astype("<f4").tobytes())


def load_checkpoint(path, dtype=np.float64) -> ModelVariant:
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii").split()
        if len(head) != 14 or head[0] != "CSIM1":
            raise CheckpointError(f"{path}: not a CSIM1 checkpoint")
        encoder, fusion, headkind = head[1], head[3], head[4]
        attn, speed = bool(int(head[2])), bool(int(head[5]))
        d, layers, n_p, n_l, din, dout, r = (int(v) for v in head[6:13])
        dims = ModelDims(d=d, layers=layers, n_p=n_p, n_l=n_l, input_dim=din,
                         output_dim=dout, r=r, dropout=float(head[13]))
        variant = ModelVariant(encoder=encoder, attention=attn, fusion=fusion,
                               head=headkind, use_speed=speed, dims=dims)
        expected = _expected_shapes(variant)
        for name, shape in expected.items():
            line = fh.readline().decode("ascii").split()
            if not line or line[0] != name:
                raise CheckpointError(
                    f"{path}: expected tensor {name!r}, found {line[:1] or 'EOF'}")
            file_shape = tuple(int(v) for v in line[1:])
            if file_shape != shape:
                raise CheckpointError(
                    f"{path}: tensor {name} has shape {file_shape}, model needs {shape}")
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(count * 4), dtype="<f4").astype(dtype)
            variant.params[name] = Tensor(data.reshape(shape), requires_grad=True)
        if fh.readline():
            raise CheckpointError(f"{path}: trailing data after expected tensors")
    return variant
