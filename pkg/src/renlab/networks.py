"""Small MLPs (feature extractor, classifier, discriminator) and the
student/teacher pair coupled by exponential-moving-average weight updates.

Parameters live as plain numpy arrays inside ParamSet objects and are bound
into a fresh Graph for each training step.  The teacher is never bound to a
graph: it moves only through ``ema_update``, so its gradient is structurally
zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, ContractError, ShapeError

DISC_EPS = 1e-7  # discriminator outputs are clamped to [eps, 1-eps] before log


@dataclass(frozen=True)
class NetSpec:
    """Architecture descriptor: layer widths plus optional final activation.

    Hidden layers always use ReLU; ``final`` is None (linear output),
    "relu" (rectified feature output), or "sigmoid" (discriminator head).
    """

    widths: tuple[int, ...]
    final: str | None = None

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ConfigError(f"need at least two widths, got {self.widths}")
        for w in self.widths:
            if int(w) < 1:
                raise ConfigError(f"layer widths must be positive, got {self.widths}")
        if self.final not in (None, "relu", "sigmoid"):
            raise ConfigError(f"unknown final activation {self.final!r}")

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]


class ParamSet:
    """Ordered named weight/bias arrays for one MLP.

    Keys are w0, b0, w1, b1, ... in layer order; weight i has shape
    (widths[i], widths[i+1]) and bias i has shape (1, widths[i+1]).
    """

    def __init__(self, spec: NetSpec, params: dict[str, np.ndarray]):
        self.spec = spec
        self.params = params
        for i in range(len(spec.widths) - 1):
            w = params[f"w{i}"]
            b = params[f"b{i}"]
            want = (spec.widths[i], spec.widths[i + 1])
            if w.shape != want or b.shape != (1, want[1]):
                raise ShapeError(f"layer {i} arrays {w.shape}/{b.shape} do not match widths {want}")

    @property
    def n_layers(self) -> int:
        return len(self.spec.widths) - 1

    def param_count(self) -> int:
        return sum(a.size for a in self.params.values())

    def copy(self) -> "ParamSet":
        return ParamSet(self.spec, {k: v.copy() for k, v in self.params.items()})

    def items(self):
        return self.params.items()

    def forward_plain(self, x: np.ndarray) -> np.ndarray:
        """Numpy-only forward pass (no graph, no gradients)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.in_width:
            raise ShapeError(f"input shape {x.shape} does not match width {self.spec.in_width}")
        h = x
        for i in range(self.n_layers):
            h = h @ self.params[f"w{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
        if self.spec.final == "relu":
            h = np.maximum(h, 0.0)
        elif self.spec.final == "sigmoid":
            out = np.empty_like(h)
            pos = h >= 0
            out[pos] = 1.0 / (1.0 + np.exp(-h[pos]))
            e = np.exp(h[~pos])
            out[~pos] = e / (1.0 + e)
            h = out
        return h


def init_params(spec: NetSpec, seed: int) -> ParamSet:
    """Xavier-uniform weights, |w| <= sqrt(6/(fan_in+fan_out)); zero biases.

    Fully determined by the seed.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for i in range(len(spec.widths) - 1):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"w{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros((1, fan_out))
    return ParamSet(spec, params)


class BoundNet:
    """A ParamSet registered on a graph, reusable across several inputs."""

    def __init__(self, graph: T.Graph, ps: ParamSet, prefix: str):
        self.graph = graph
        self.spec = ps.spec
        self.prefix = prefix
        self.tensors = {k: graph.parameter(v, f"{prefix}.{k}") for k, v in ps.items()}

    def __call__(self, x: T.Tensor) -> T.Tensor:
        if x.shape[1] != self.spec.in_width:
            raise ShapeError(f"input width {x.shape[1]} does not match {self.spec.in_width}")
        h = x
        n = len(self.spec.widths) - 1
        for i in range(n):
            h = T.add(T.matmul(h, self.tensors[f"w{i}"]), self.tensors[f"b{i}"])
            if i < n - 1:
                h = T.relu(h)
        if self.spec.final == "relu":
            h = T.relu(h)
        elif self.spec.final == "sigmoid":
            h = T.sigmoid(h)
        return h

    def grads(self) -> dict[str, np.ndarray]:
        """Per-array gradients populated by the last backward pass."""
        out = {}
        for k, t in self.tensors.items():
            g = t.grad
            out[k] = np.zeros_like(t.values) if g is None else g
        return out


def forward_fc(bound_F: BoundNet, bound_C: BoundNet, x: T.Tensor):
    """Feature extractor then classifier: returns (features, logits, probs)."""
    f = bound_F(x)
    logits = bound_C(f)
    p = T.softmax_rows(logits)
    return f, logits, p


def forward_fc_plain(ps_F: ParamSet, ps_C: ParamSet, x: np.ndarray):
    """Graph-free twin of forward_fc for evaluation and the teacher pass."""
    f = ps_F.forward_plain(x)
    logits = f @ ps_C.params["w0"] + ps_C.params["b0"]
    for i in range(1, ps_C.n_layers):
        logits = np.maximum(logits, 0.0) @ ps_C.params[f"w{i}"] + ps_C.params[f"b{i}"]
    p = T.stable_softmax(logits)
    return f, logits, p


def discriminate(bound_D: BoundNet, h: T.Tensor) -> T.Tensor:
    """Domain probability in [eps, 1-eps] for each row of h."""
    if bound_D.spec.out_width != 1 or bound_D.spec.final != "sigmoid":
        raise ContractError("discriminator must end in a 1-wide sigmoid layer")
    return T.clamp(bound_D(h), DISC_EPS, 1.0 - DISC_EPS)


class DualNet:
    """Student (F, C) plus a teacher copy updated only by EMA.

    The teacher starts as an exact copy of the student and never receives
    gradients; ``ema_update`` is the only thing that moves it.
    """

    def __init__(self, student_F: ParamSet, student_C: ParamSet, alpha_theta: float = 0.99):
        self.student_F = student_F
        self.student_C = student_C
        self.teacher_F = student_F.copy()
        self.teacher_C = student_C.copy()
        self.alpha_theta = float(alpha_theta)
        self.step_count = 0

    def param_count(self) -> int:
        return (
            self.student_F.param_count()
            + self.student_C.param_count()
            + self.teacher_F.param_count()
            + self.teacher_C.param_count()
        )


def alpha_theta_ramp(step: int, cap: float = 0.99) -> float:
    """Warm-up schedule min(cap, 1 - 1/(step+1)); the teacher tracks the
    student closely at the start and smooths more later."""
    if step < 0:
        raise ContractError(f"step must be non-negative, got {step}")
    return min(cap, 1.0 - 1.0 / (step + 1))


def ema_update(net: DualNet) -> None:
    """teacher <- alpha * teacher + (1 - alpha) * student, entrywise.

    Applies net.alpha_theta exactly as stored; callers that want the warm-up
    ramp set alpha_theta from alpha_theta_ramp before each call.
    """
    a = net.alpha_theta
    if not (0.0 <= a <= 1.0):
        raise ConfigError(f"alpha_theta must lie in [0, 1], got {a}")
    for t_ps, s_ps in ((net.teacher_F, net.student_F), (net.teacher_C, net.student_C)):
        for k, t_arr in t_ps.items():
            t_arr *= a
            t_arr += (1.0 - a) * s_ps.params[k]
    net.step_count += 1


# ---------------------------------------------------------------------------
# checkpoint i/o: versioned text format, exact float round trip via repr


def save_paramsets(path, named: dict[str, ParamSet]) -> None:
    lines = ["renlab-params 1"]
    for set_name, ps in named.items():
        lines.append(f"set {set_name} {len(ps.params)} {' '.join(str(w) for w in ps.spec.widths)} "
                     f"{ps.spec.final or '-'}")
        for k, arr in ps.items():
            flat = " ".join(repr(float(v)) for v in arr.ravel())
            lines.append(f"tensor {k} {arr.shape[0]} {arr.shape[1]} {flat}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_paramsets(path) -> dict[str, ParamSet]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != "renlab-params 1":
        raise ContractError(f"unrecognized checkpoint header in {path}")
    out: dict[str, ParamSet] = {}
    i = 1
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "set":
            raise ContractError(f"expected 'set' line, got {lines[i][:40]!r}")
        set_name, n_tensors = head[1], int(head[2])
        final = None if head[-1] == "-" else head[-1]
        widths = tuple(int(w) for w in head[3:-1])
        params: dict[str, np.ndarray] = {}
        for j in range(n_tensors):
            parts = lines[i + 1 + j].split()
            if parts[0] != "tensor":
                raise ContractError(f"expected 'tensor' line, got {lines[i + 1 + j][:40]!r}")
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            vals = np.array([float(v) for v in parts[4:]], dtype=np.float64)
            if vals.size != rows * cols:
                raise ContractError(f"tensor {name}: {vals.size} values for shape ({rows}, {cols})")
            params[name] = vals.reshape(rows, cols)
        out[set_name] = ParamSet(NetSpec(widths, final), params)
        i += 1 + n_tensors
    return out
