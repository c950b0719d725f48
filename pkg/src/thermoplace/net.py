"""Tanh MLP with exact nested differentiation.

The network maps a standardized input vector to one scalar.  Two derivative
services are provided, both analytic (no finite differencing anywhere):

* input jets: value, first and pure second derivatives of the output with
  respect to selected input slots, obtained by forward-propagating a
  (value, d1, d2) triple per requested direction through the layers;
* parameter gradients of any scalar objective built from those jet
  quantities, obtained by reverse accumulation through the extended forward
  pass (the adjoints of the d1/d2 streams flow back into the weights, which
  is what makes losses on second derivatives trainable).

Only pure second derivatives are propagated; the heat equation needs no
mixed partials.  All math is float64 and reductions run in a fixed order, so
identical inputs give bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, TrainingNumericError


@dataclass(frozen=True)
class NetSpec:
    """Architecture: input_dim inputs, tanh hidden layers, one linear output."""

    input_dim: int
    hidden_layers: int
    hidden_width: int

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise DomainError(f"invalid network spec {self}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) shape of each affine layer, input to output."""
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [1]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def param_count(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())


class NetworkParams:
    """Weights and biases backed by one flat float64 vector.

    ``weights[l]`` and ``biases[l]`` are views into ``flat``, so updates
    through either representation stay in sync.
    """

    __slots__ = ("spec", "flat", "weights", "biases")

    def __init__(self, spec: NetSpec, flat: np.ndarray | None = None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.param_count)
        else:
            flat = np.ascontiguousarray(flat, dtype=float)
            if flat.shape != (spec.param_count,):
                raise DomainError(
                    f"flat vector length {flat.shape} != {spec.param_count}"
                )
        self.flat = flat
        self.weights = []
        self.biases = []
        off = 0
        for out, inp in spec.layer_shapes():
            self.weights.append(flat[off:off + out * inp].reshape(out, inp))
            off += out * inp
            self.biases.append(flat[off:off + out])
            off += out

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, self.flat.copy())

    def with_flat(self, flat: np.ndarray) -> "NetworkParams":
        return NetworkParams(self.spec, flat)


def init_xavier(spec: NetSpec, seed: int) -> NetworkParams:
    """Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    params = NetworkParams(spec)
    for W in params.weights:
        out, inp = W.shape
        bound = np.sqrt(6.0 / (inp + out))
        W[...] = rng.uniform(-bound, bound, size=(out, inp))
    return params


@dataclass(frozen=True)
class Jet:
    """Scalar output with its time derivative, spatial gradient, and Laplacian."""

    u: float
    du_dt: float
    grad_x: np.ndarray
    lap_x: float


class _Tape:
    """Forward-pass cache consumed by the reverse pass."""

    __slots__ = ("affine_inputs", "tanh_caches", "batch", "ndir")

    def __init__(self, batch, ndir):
        self.affine_inputs = []   # (a, d1, d2) per affine layer
        self.tanh_caches = []     # (th, g, gp, gp_s1, s1, s2) per hidden layer
        self.batch = batch
        self.ndir = ndir


def _flat2(x: np.ndarray) -> np.ndarray:
    """(nd, B, w) -> (nd*B, w) view for GEMMs."""
    return x.reshape(-1, x.shape[-1])


def _extended_forward(params: NetworkParams, Z: np.ndarray,
                      dirs: Sequence[int], need_tape: bool):
    """Propagate value plus per-direction first/second derivative streams.

    Returns (u, D1, D2, tape) with u shape (B,), D1/D2 shape (ndir, B).
    """
    spec = params.spec
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != spec.input_dim:
        raise DomainError(f"batch shape {Z.shape} != (B, {spec.input_dim})")
    B = Z.shape[0]
    nd = len(dirs)
    for d in dirs:
        if not 0 <= d < spec.input_dim:
            raise DomainError(f"direction index {d} out of range")

    a = Z
    d1 = np.zeros((nd, B, spec.input_dim))
    for k, d in enumerate(dirs):
        d1[k, :, d] = 1.0
    d2 = np.zeros((nd, B, spec.input_dim))

    tape = _Tape(B, nd) if need_tape else None
    n_layers = len(params.weights)
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        if need_tape:
            tape.affine_inputs.append((a, d1, d2))
        out = W.shape[0]
        s = a @ W.T + b
        s1 = (_flat2(d1) @ W.T).reshape(nd, B, out)
        s2 = (_flat2(d2) @ W.T).reshape(nd, B, out)
        if l < n_layers - 1:
            th = np.tanh(s)
            g = 1.0 - th * th          # tanh'
            gp = -2.0 * th * g         # tanh''
            gp_s1 = gp * s1
            t1 = g * s1
            t2 = gp_s1 * s1
            t2 += g * s2
            if need_tape:
                tape.tanh_caches.append((th, g, gp, gp_s1, s1, s2))
            a, d1, d2 = th, t1, t2
        else:
            a, d1, d2 = s, s1, s2
    return a[:, 0], d1[:, :, 0], d2[:, :, 0], tape


def _backward(params: NetworkParams, tape: _Tape,
              u_bar: np.ndarray, d1_bar: np.ndarray, d2_bar: np.ndarray) -> np.ndarray:
    """Reverse accumulation through the extended forward pass.

    Seeds are the objective's partials with respect to the output value and
    its per-direction first/second derivative streams.  Returns the flat
    parameter gradient.
    """
    spec = params.spec
    grad = NetworkParams(spec)
    B = tape.batch
    nd = tape.ndir
    sb = np.ascontiguousarray(u_bar, dtype=float)[:, None]        # (B, 1)
    s1b = np.ascontiguousarray(d1_bar, dtype=float)[:, :, None]   # (nd, B, 1)
    s2b = np.ascontiguousarray(d2_bar, dtype=float)[:, :, None]
    for l in range(len(params.weights) - 1, -1, -1):
        a, d1, d2 = tape.affine_inputs[l]
        gW = grad.weights[l]
        gW += sb.T @ a
        if nd:
            gW += _flat2(s1b).T @ _flat2(d1)
            gW += _flat2(s2b).T @ _flat2(d2)
        grad.biases[l][...] = sb.sum(axis=0)
        if l == 0:
            break
        W = params.weights[l]
        w = W.shape[1]
        tb = sb @ W                    # adjoint of tanh output value
        t1b = (_flat2(s1b) @ W).reshape(nd, B, w)
        t2b = (_flat2(s2b) @ W).reshape(nd, B, w)
        th, g, gp, gp_s1, s1, s2 = tape.tanh_caches[l - 1]
        sb = tb * g
        if nd:
            gpp = (4.0 * (th * th) - 2.0 * g) * g    # tanh'''
            sb += np.einsum("nbw,nbw->bw", t1b, gp_s1)
            mix = gpp * s1
            mix *= s1
            mix += gp * s2
            sb += np.einsum("nbw,nbw->bw", t2b, mix)
        s1b = t1b * g
        s1b += t2b * (2.0 * gp_s1)
        s2b = t2b * g
    return grad.flat


def forward(params: NetworkParams, z) -> float:
    """Network output for one input vector."""
    z = np.asarray(z, dtype=float)
    if z.shape != (params.spec.input_dim,):
        raise DomainError(f"input length {z.shape} != {params.spec.input_dim}")
    u, _, _, _ = _extended_forward(params, z[None, :], (), False)
    return float(u[0])


def forward_many(params: NetworkParams, Z: np.ndarray) -> np.ndarray:
    """Network output for a (B, input_dim) batch."""
    u, _, _, _ = _extended_forward(params, Z, (), False)
    return u


def batch_jets(params: NetworkParams, Z: np.ndarray, dirs: Sequence[int]):
    """Values plus first/second derivatives along ``dirs`` for a batch.

    Returns (u, D1, D2) with D1/D2 of shape (len(dirs), B).
    """
    u, D1, D2, _ = _extended_forward(params, Z, dirs, False)
    return u, D1, D2


def input_jet(params: NetworkParams, z, *, time_slot: int,
              space_slots: Sequence[int]) -> Jet:
    """Jet of the scalar output at one input point.

    ``time_slot`` and ``space_slots`` name the input positions holding t and
    the spatial coordinates; first derivatives are returned for all of them
    and the Laplacian sums the pure second spatial derivatives.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (params.spec.input_dim,):
        raise DomainError(f"input length {z.shape} != {params.spec.input_dim}")
    slots = [time_slot, *space_slots]
    if len(set(slots)) != len(slots):
        raise DomainError(f"derivative slots must be distinct, got {slots}")
    u, D1, D2, _ = _extended_forward(params, z[None, :], slots, False)
    return Jet(
        u=float(u[0]),
        du_dt=float(D1[0, 0]),
        grad_x=D1[1:, 0].copy(),
        lap_x=float(D2[1:, 0].sum()),
    )


#: objective over a jet batch: (u, D1, D2) -> (value, (u_bar, d1_bar, d2_bar))
JetLoss = Callable[[np.ndarray, np.ndarray, np.ndarray],
                   tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]]


def param_gradient(params: NetworkParams, Z: np.ndarray, dirs: Sequence[int],
                   loss: JetLoss) -> tuple[float, np.ndarray]:
    """Value and exact flat parameter gradient of a jet-based objective.

    ``loss`` receives the batch jet arrays and must return the scalar value
    together with its partials with respect to each array entry; the engine
    chains those seeds back through the extended forward pass, including the
    contributions that flow through second input derivatives.
    """
    u, D1, D2, tape = _extended_forward(params, Z, dirs, True)
    for arr in (u, D1, D2):
        if not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr))[0][-1])
            raise TrainingNumericError(
                f"non-finite network output at batch index {bad}", index=bad
            )
    value, (u_bar, d1_bar, d2_bar) = loss(u, D1, D2)
    if not np.isfinite(value):
        raise TrainingNumericError("non-finite loss value", index=None)
    grad = _backward(params, tape, u_bar, d1_bar, d2_bar)
    return float(value), grad
