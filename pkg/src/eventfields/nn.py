"""Double-precision tensor core: parameter sets, MLPs, masked attention, gradients.

All learned functions in the package run on CPU ``torch`` tensors in float64.
Reverse-mode gradients come from the autograd tape; ``finite_diff_gradient``
provides the independent central-difference oracle used by the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ContractError, DimensionError, EvaluationError

DTYPE = torch.float64

Tensor = torch.Tensor


def as_tensor(x) -> Tensor:
    """Coerce array-like input to a float64 tensor."""
    return torch.as_tensor(np.asarray(x), dtype=DTYPE)


def gelu(x: Tensor) -> Tensor:
    # exact erf form, not the tanh approximation
    return F.gelu(x, approximate="none")


class ParamSet:
    """Ordered map from parameter path (e.g. "dynamics.layer0.weight") to tensor.

    Iteration order is insertion order, which is stable across runs given the
    same construction sequence. The same container holds trainable parameters
    (leaf tensors with ``requires_grad``) and gradient/moment sets (plain
    tensors).
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name: {name!r}")
        self._params[name] = value
        return value

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def n_values(self) -> int:
        return sum(t.numel() for t in self._params.values())

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._params.items():
            c = t.detach().clone()
            if t.requires_grad:
                c.requires_grad_(True)
            out.add(name, c)
        return out

    def zeros_like(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._params.items():
            out.add(name, torch.zeros_like(t.detach()))
        return out

    def to_json(self) -> str:
        doc = {
            name: {"shape": list(t.shape), "values": t.detach().reshape(-1).tolist()}
            for name, t in self._params.items()
        }
        # json emits shortest round-trip float literals, so read(write(p)) == p
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str, requires_grad: bool = True) -> "ParamSet":
        doc = json.loads(text)
        out = cls()
        for name, entry in doc.items():
            t = torch.tensor(entry["values"], dtype=DTYPE).reshape(entry["shape"])
            if requires_grad:
                t.requires_grad_(True)
            out.add(name, t)
        return out

    def allclose(self, other: "ParamSet", rtol=0.0, atol=0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(
            torch.allclose(self[n], other[n], rtol=rtol, atol=atol) for n in self.names()
        )


@dataclass(frozen=True)
class MlpSpec:
    """Shape of a GeLU MLP: input -> n_hidden_layers x hidden_width -> output."""

    input_dim: int
    hidden_width: int
    n_hidden_layers: int
    output_dim: int

    def __post_init__(self):
        if self.n_hidden_layers < 1:
            raise ConfigurationError("MlpSpec needs at least one hidden layer")
        for field in ("input_dim", "hidden_width", "output_dim"):
            if getattr(self, field) < 1:
                raise ConfigurationError(f"MlpSpec.{field} must be >= 1")

    @property
    def n_linear(self) -> int:
        return self.n_hidden_layers + 1


def init_linear(params: ParamSet, prefix: str, fan_in: int, fan_out: int, rng) -> None:
    """Weight ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)), bias zero."""
    bound = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    params.add(f"{prefix}.weight", as_tensor(w).requires_grad_(True))
    params.add(f"{prefix}.bias", torch.zeros(fan_out, dtype=DTYPE, requires_grad=True))


def linear_apply(params: ParamSet, prefix: str, x: Tensor) -> Tensor:
    w = params[f"{prefix}.weight"]
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(
            f"layer {prefix!r} expects input dim {w.shape[0]}, got {x.shape[-1]}"
        )
    return x @ w + params[f"{prefix}.bias"]


def init_mlp(params: ParamSet, prefix: str, spec: MlpSpec, rng) -> None:
    dims = [spec.input_dim] + [spec.hidden_width] * spec.n_hidden_layers + [spec.output_dim]
    for i in range(spec.n_linear):
        init_linear(params, f"{prefix}.layer{i}", dims[i], dims[i + 1], rng)


def mlp_apply(spec: MlpSpec, params: ParamSet, x: Tensor, prefix: str = "mlp") -> Tensor:
    """Apply the GeLU MLP described by ``spec``; final layer is affine."""
    if x.shape[-1] != spec.input_dim:
        raise DimensionError(
            f"MLP {prefix!r} expects input dim {spec.input_dim}, got {x.shape[-1]}"
        )
    for i in range(spec.n_hidden_layers):
        x = gelu(linear_apply(params, f"{prefix}.layer{i}", x))
    return linear_apply(params, f"{prefix}.layer{spec.n_linear - 1}", x)


# ---------------------------------------------------------------------------
# Transformer encoder stack (pre-LN, no positional encodings)
# ---------------------------------------------------------------------------

FFN_MULT = 4  # feed-forward hidden width as a multiple of d_model


def init_attention_encoder(
    params: ParamSet, prefix: str, n_layers: int, n_heads: int, d_model: int, rng
) -> None:
    if d_model % n_heads != 0:
        raise ConfigurationError(
            f"d_model={d_model} is not divisible by n_heads={n_heads}"
        )
    for i in range(n_layers):
        base = f"{prefix}.layer{i}"
        _init_layer_norm(params, f"{base}.ln1", d_model)
        for name in ("q", "k", "v", "o"):
            if name == "k":
                # no key bias: it shifts every logit in a softmax row equally,
                # so it can never receive gradient
                bound = 1.0 / math.sqrt(d_model)
                w = rng.uniform(-bound, bound, size=(d_model, d_model))
                params.add(f"{base}.attn.k.weight", as_tensor(w).requires_grad_(True))
            else:
                init_linear(params, f"{base}.attn.{name}", d_model, d_model, rng)
        _init_layer_norm(params, f"{base}.ln2", d_model)
        init_linear(params, f"{base}.ffn.layer0", d_model, FFN_MULT * d_model, rng)
        init_linear(params, f"{base}.ffn.layer1", FFN_MULT * d_model, d_model, rng)
    _init_layer_norm(params, f"{prefix}.ln_out", d_model)


def _init_layer_norm(params: ParamSet, prefix: str, dim: int) -> None:
    params.add(f"{prefix}.weight", torch.ones(dim, dtype=DTYPE, requires_grad=True))
    params.add(f"{prefix}.bias", torch.zeros(dim, dtype=DTYPE, requires_grad=True))


def _layer_norm(params: ParamSet, prefix: str, x: Tensor) -> Tensor:
    return F.layer_norm(
        x, (x.shape[-1],), params[f"{prefix}.weight"], params[f"{prefix}.bias"], eps=1e-5
    )


def _self_attention(params: ParamSet, prefix: str, x: Tensor, n_heads: int) -> Tensor:
    length, d_model = x.shape
    d_head = d_model // n_heads
    q = linear_apply(params, f"{prefix}.q", x).reshape(length, n_heads, d_head).transpose(0, 1)
    k = (x @ params[f"{prefix}.k.weight"]).reshape(length, n_heads, d_head).transpose(0, 1)
    v = linear_apply(params, f"{prefix}.v", x).reshape(length, n_heads, d_head).transpose(0, 1)
    scores = q @ k.transpose(-1, -2) / math.sqrt(d_head)
    attn = torch.softmax(scores, dim=-1)
    out = (attn @ v).transpose(0, 1).reshape(length, d_model)
    return linear_apply(params, f"{prefix}.o", out)


def attention_encoder_apply(
    n_layers: int,
    n_heads: int,
    d_model: int,
    params: ParamSet,
    seq: Tensor,
    pad_mask=None,
    prefix: str = "encoder",
) -> Tensor:
    """Run the pre-LN encoder stack over ``seq`` of shape (L, d_model).

    ``pad_mask`` marks padded positions with True. Padded positions are
    dropped before attention, so they neither attend nor are attended to, and
    the outputs at real positions are bit-identical to running the compacted
    sequence on its own. Padded output rows are zero.
    """
    if d_model % n_heads != 0:
        raise ConfigurationError(
            f"d_model={d_model} is not divisible by n_heads={n_heads}"
        )
    if seq.ndim != 2 or seq.shape[1] != d_model:
        raise DimensionError(f"expected sequence of shape (L, {d_model}), got {tuple(seq.shape)}")

    keep = None
    x = seq
    if pad_mask is not None:
        mask = torch.as_tensor(np.asarray(pad_mask, dtype=bool))
        if mask.shape != (seq.shape[0],):
            raise DimensionError("pad_mask length must match sequence length")
        keep = ~mask
        x = seq[keep]

    for i in range(n_layers):
        base = f"{prefix}.layer{i}"
        x = x + _self_attention(params, f"{base}.attn", _layer_norm(params, f"{base}.ln1", x), n_heads)
        h = _layer_norm(params, f"{base}.ln2", x)
        h = linear_apply(params, f"{base}.ffn.layer1", gelu(linear_apply(params, f"{base}.ffn.layer0", h)))
        x = x + h
    x = _layer_norm(params, f"{prefix}.ln_out", x)

    if keep is None:
        return x
    out = torch.zeros_like(seq)
    out[keep] = x
    return out


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def backward(loss: Tensor, params: ParamSet) -> ParamSet:
    """Reverse-mode gradient of a scalar loss for every entry of ``params``.

    Parameters the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ContractError("backward() expects a scalar tensor loss")
    names = params.names()
    tensors = [params[n] for n in names]
    out = ParamSet()
    if not loss.requires_grad:
        return params.zeros_like()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    for name, t, g in zip(names, tensors, grads):
        out.add(name, torch.zeros_like(t.detach()) if g is None else g.detach())
    return out


def finite_diff_gradient(f, params: ParamSet, eps: float) -> ParamSet:
    """Central-difference gradient of ``f(params)`` for every parameter entry.

    ``f`` must be deterministic (any randomness frozen inside the closure).
    """
    if eps <= 0:
        raise ConfigurationError("finite-difference eps must be positive")
    out = ParamSet()
    with torch.no_grad():
        for name, t in params.items():
            flat = t.reshape(-1)
            g = torch.zeros_like(flat)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + eps
                f_hi = float(f(params))
                flat[j] = orig - eps
                f_lo = float(f(params))
                flat[j] = orig
                if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
                    raise EvaluationError(
                        f"non-finite objective while perturbing {name!r}[{j}]"
                    )
                g[j] = (f_hi - f_lo) / (2.0 * eps)
            out.add(name, g.reshape(t.shape))
    return out


def grad_relative_error(a: ParamSet, b: ParamSet) -> dict[str, float]:
    """Per-entry-group L2 relative error between two gradient sets."""
    errs = {}
    for name in a.names():
        ga = a[name].reshape(-1)
        gb = b[name].reshape(-1)
        denom = max(float(ga.norm()), float(gb.norm()), 1e-12)
        errs[name] = float((ga - gb).norm()) / denom
    return errs
