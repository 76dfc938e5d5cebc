"""Semantic-loss training of the perception model and the rule posterior.

The loss for an example is the negative log probability mass, under
independent atom probabilities, of the answer sets that prove the label.
Answer sets are enumerated once per example and cached as a circuit of
X-atom index rows; evaluation and gradients never re-run the solver.

The probability vector is the rule posterior softmax(theta_R) concatenated
with the per-input latent posteriors, indexed by AtomIndex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .asp import NN, Aggregate, Atom, Program, Rule
from .errors import DivergenceError, TaskValidationError, UncoverableExampleError
from .synthesis import OptSufficientSpace
from .task import Dataset, NeuralTask


# ---------------------------------------------------------------------------
# Atom indexing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AtomIndex:
    """Bijection between X-atom indices and use/nn atoms.

    The first `n_rules` indices are use(i); the remainder enumerates
    nn(j+1, value) blocks with per-input offsets, j zero-based and k
    indexing the input's declared value order."""

    n_rules: int
    widths: tuple          # per-input latent value counts
    values: tuple          # per-input value tuples

    @property
    def size(self) -> int:
        return self.n_rules + sum(self.widths)

    def offset(self, j: int) -> int:
        return self.n_rules + sum(self.widths[:j])

    def use_index(self, i: int) -> int:
        if not 0 <= i < self.n_rules:
            raise IndexError(f"use index {i} out of range")
        return i

    def nn_index(self, j: int, k: int) -> int:
        if not 0 <= k < self.widths[j]:
            raise IndexError(f"value index {k} out of range for input {j}")
        return self.offset(j) + k

    def atom_for(self, i: int):
        if i < 0 or i >= self.size:
            raise IndexError(f"X index {i} out of range")
        if i < self.n_rules:
            return Atom("use", (i,))
        rest = i - self.n_rules
        for j, w in enumerate(self.widths):
            if rest < w:
                return Atom(NN, (j + 1, self.values[j][rest]))
            rest -= w
        raise AssertionError

    def index_for(self, atom: Atom) -> int:
        if atom.predicate == "use":
            return self.use_index(atom.args[0])
        if atom.predicate == NN:
            j = atom.args[0] - 1
            return self.nn_index(j, self.values[j].index(atom.args[1]))
        raise KeyError(atom)


def atom_index_for(task: NeuralTask, space: OptSufficientSpace) -> AtomIndex:
    return AtomIndex(len(space.rules),
                     tuple(len(vs) for vs in task.latent.arities),
                     tuple(task.latent.arities))


# ---------------------------------------------------------------------------
# The per-example program and circuit
# ---------------------------------------------------------------------------

def build_py(task: NeuralTask, example, space: OptSufficientSpace) -> Program:
    """The label-proving program: background + context + latent choices +
    use-guarded space rules + exclusive use choice + the label constraint."""
    from .abduction import build_pz
    from .bias import expand_untyped_safe

    if len(example.inclusions) != 1:
        raise TaskValidationError(
            f"example {example.id}: semantic-loss training needs exactly one "
            f"inclusion atom, got {len(example.inclusions)}")
    (label,) = example.inclusions
    guarded = []
    for i, hyp in enumerate(space.rules):
        for rule in expand_untyped_safe(hyp, task.mode_bias):
            guarded.append(Rule(rule.head,
                                rule.body_pos | {Atom("use", (i,))},
                                rule.body_neg))
    use_choice = Rule(Aggregate(1, 1, tuple(
        Atom("use", (i,)) for i in range(len(space.rules)))))
    label_constraint = Rule(None, frozenset(), frozenset({label}))
    return (task.background + example.ctx + build_pz(task.latent)
            + Program(tuple(guarded) + (label_constraint,), (use_choice,)))


@dataclass
class LossCircuit:
    """Enumerated answer sets of the label-proving program, each reduced to
    its X-atom membership pattern.  `member[a, i]` says whether X_i occurs
    in answer set a; pipeline circuits additionally carry the (use, nn...)
    index rows they were built from."""

    example_id: str
    label: Atom
    member: np.ndarray    # (n_answer_sets, |X|) bool
    index: AtomIndex
    rows: Optional[np.ndarray] = None  # (n_answer_sets, 1 + n_inputs) int32

    def __post_init__(self):
        self._member_f = self.member.astype(np.float64)

    @property
    def n_answer_sets(self) -> int:
        return len(self.member)


def circuit_from_rows(example_id, label, rows, index: AtomIndex) -> LossCircuit:
    rows = np.asarray(rows, dtype=np.int32)
    member = np.zeros((len(rows), index.size), dtype=bool)
    for a, row in enumerate(rows):
        member[a, row] = True
    return LossCircuit(example_id, label, member, index, rows)


def circuit_from_sets(example_id, label, index_sets, index: AtomIndex) -> LossCircuit:
    member = np.zeros((len(index_sets), index.size), dtype=bool)
    for a, s in enumerate(index_sets):
        for i in s:
            member[a, i] = True
    return LossCircuit(example_id, label, member, index)


def build_circuit(task: NeuralTask, example, space: OptSufficientSpace,
                  index: Optional[AtomIndex] = None) -> LossCircuit:
    """Fast path: a (rule, latent tuple) pair is an answer set exactly when
    the label is in the possibility's base atoms or in the rule's cached
    consequences, both precomputed during synthesis."""
    if index is None:
        index = atom_index_for(task, space)
    if len(example.inclusions) != 1:
        raise TaskValidationError(
            f"example {example.id}: semantic-loss training needs exactly one "
            f"inclusion atom, got {len(example.inclusions)}")
    (label,) = example.inclusions
    rows = []
    for z, _z_id, _p_id, as_id in space.example_possibilities[example.id]:
        nn_idx = [index.nn_index(j, task.latent.value_index(j, v))
                  for j, v in enumerate(z)]
        base_proves = label in space.base_true[as_id]
        for i in range(len(space.rules)):
            if base_proves or label in space.derived[(i, as_id)]:
                rows.append([index.use_index(i)] + nn_idx)
    if not rows:
        raise UncoverableExampleError(
            f"example {example.id}: label {label!r} is unprovable under the "
            f"rule space (empty answer-set enumeration)")
    rows.sort()
    return circuit_from_rows(example.id, label, rows, index)


def build_circuit_generic(task: NeuralTask, example, space: OptSufficientSpace,
                          index: Optional[AtomIndex] = None) -> LossCircuit:
    """Reference path: enumerate the answer sets of the full label-proving
    program with the generic engine.  Small tasks only."""
    from .asp import answer_sets, ground
    if index is None:
        index = atom_index_for(task, space)
    (label,) = example.inclusions
    prog = ground(build_py(task, example, space))
    rows = []
    for s in answer_sets(prog):
        use_atoms = [a for a in s if a.predicate == "use"]
        nn_atoms = sorted((a for a in s if a.predicate == NN),
                          key=lambda a: a.args[0])
        assert len(use_atoms) == 1 and len(nn_atoms) == task.latent.n
        assert label in s
        rows.append([index.index_for(use_atoms[0])]
                    + [index.index_for(a) for a in nn_atoms])
    if not rows:
        raise UncoverableExampleError(
            f"example {example.id}: label {label!r} is unprovable under the "
            f"rule space (empty answer-set enumeration)")
    rows.sort()
    return circuit_from_rows(example.id, label, rows, index)


# ---------------------------------------------------------------------------
# Exact loss and gradient
# ---------------------------------------------------------------------------

def _row_terms(circuit: LossCircuit, p: np.ndarray, complement_mode: str):
    member = circuit.member
    mf = circuit._member_f
    x = circuit.index.size
    if p.shape != (x,):
        raise ValueError(f"probability vector has shape {p.shape}, expected ({x},)")
    zero = p <= 0.0
    one = p >= 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.where(zero, 0.0, np.log(np.where(zero, 1.0, p)))
        l1p = np.where(one, 0.0, np.log1p(-np.where(one, 0.0, p)))
    valid = ~(member & zero).any(axis=1)
    if complement_mode == "full":
        valid &= ~(~member & one).any(axis=1)
        row_logs = mf @ lp + (1.0 - mf) @ l1p
    elif complement_mode == "categorical":
        row_logs = mf @ lp
    else:
        raise ValueError(f"unknown complement mode {complement_mode!r}")
    return row_logs, valid


def semantic_loss(circuit: LossCircuit, p: np.ndarray,
                  complement_mode: str = "full") -> float:
    """Exact negative log of the summed answer-set probabilities, computed
    in log space.  Empty circuits or zeroed-out rows give +inf."""
    p = np.asarray(p, dtype=np.float64)
    row_logs, valid = _row_terms(circuit, p, complement_mode)
    if not valid.any():
        return math.inf
    logs = row_logs[valid]
    m = logs.max()
    return float(-(m + np.log(np.exp(logs - m).sum())))


def semantic_loss_grad(circuit: LossCircuit, p: np.ndarray,
                       complement_mode: str = "full"):
    """(loss, dL/dp).  At interior probabilities the gradient is
    -q_i/p_i + (1-q_i)/(1-p_i) with q_i the posterior mass of answer sets
    containing X_i."""
    p = np.asarray(p, dtype=np.float64)
    row_logs, valid = _row_terms(circuit, p, complement_mode)
    x = circuit.index.size
    if not valid.any():
        return math.inf, np.zeros(x)
    logs = row_logs[valid]
    m = logs.max()
    w = np.exp(logs - m)
    total = w.sum()
    loss = float(-(m + np.log(total)))
    w /= total
    q = circuit._member_f[valid].T @ w
    pc = np.clip(p, 1e-300, None)
    cc = np.clip(1.0 - p, 1e-300, None)
    if complement_mode == "full":
        grad = -q / pc + (1.0 - q) / cc
    else:
        grad = -q / pc
    return loss, grad


# ---------------------------------------------------------------------------
# Perception model
# ---------------------------------------------------------------------------

def softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(s: np.ndarray, grad_s: np.ndarray) -> np.ndarray:
    return s * (grad_s - (grad_s * s).sum(axis=-1, keepdims=True))


@dataclass
class MLPConfig:
    input_dim: int
    head_widths: tuple
    hidden: tuple = (32,)
    share_heads: bool = False

    @classmethod
    def from_task(cls, task: NeuralTask, dataset: Dataset) -> "MLPConfig":
        hidden = tuple(task.model_config.get("hidden", (32,)))
        widths = tuple(len(vs) for vs in task.latent.arities)
        # one classifier for every input position unless value sets differ
        # or the task opts out; sharing removes spurious relabelling optima
        share = task.model_config.get("share_heads",
                                      len(set(task.latent.arities)) == 1)
        return cls(dataset.dim, widths, hidden, bool(share))


class PerceptionModel:
    """Tanh multilayer perceptron with a shared trunk and softmax heads.

    With `share_heads` one head classifies every raw input position (the
    usual choice when all inputs carry the same concept); otherwise each
    input index owns a head of its latent width.  Parameters expose a flat
    vector view so gradient checks can perturb single coordinates."""

    def __init__(self, config: MLPConfig, rng: np.random.Generator):
        self.config = config
        self.trunk = []
        prev = config.input_dim
        for width in config.hidden:
            self.trunk.append([rng.uniform(-0.1, 0.1, (width, prev)),
                               rng.uniform(-0.1, 0.1, width)])
            prev = width
        if config.share_heads:
            if len(set(config.head_widths)) != 1:
                raise TaskValidationError(
                    "shared heads require equal latent widths across inputs")
            shared = [rng.uniform(-0.1, 0.1, (config.head_widths[0], prev)),
                      rng.uniform(-0.1, 0.1, config.head_widths[0])]
            self.heads = [shared for _ in config.head_widths]
        else:
            self.heads = [[rng.uniform(-0.1, 0.1, (w, prev)),
                           rng.uniform(-0.1, 0.1, w)] for w in config.head_widths]

    def _arrays(self):
        for layer in self.trunk:
            yield from layer
        if self.config.share_heads:
            yield from self.heads[0]
        else:
            for head in self.heads:
                yield from head

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays()])

    def set_theta(self, vec: np.ndarray) -> None:
        pos = 0
        for a in self._arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        assert pos == len(vec)

    def forward(self, xs: np.ndarray):
        """xs: (n_inputs, input_dim).  Returns (probs per input, cache)."""
        h = xs
        acts = [h]
        for W, b in self.trunk:
            h = np.tanh(h @ W.T + b)
            acts.append(h)
        probs = []
        for j, (W, b) in enumerate(self.heads):
            probs.append(softmax(h[j] @ W.T + b))
        return probs, (acts, probs)

    def backward(self, cache, grad_probs):
        """Gradient of the flat parameter vector given dL/dprobs per input."""
        acts, probs = cache
        h = acts[-1]
        grads = {id(a): np.zeros_like(a) for a in self._arrays()}
        dh = np.zeros_like(h)
        for j, (W, b) in enumerate(self.heads):
            gv = softmax_backward(probs[j], grad_probs[j])
            grads[id(W)] += np.outer(gv, h[j])
            grads[id(b)] += gv
            dh[j] += W.T @ gv
        for li in range(len(self.trunk) - 1, -1, -1):
            W, b = self.trunk[li]
            da = dh * (1.0 - acts[li + 1] ** 2)
            grads[id(W)] += da.T @ acts[li]
            grads[id(b)] += da.sum(axis=0)
            dh = da @ W
        return np.concatenate([grads[id(a)].ravel() for a in self._arrays()])

    def probs_for(self, xs: np.ndarray):
        probs, _ = self.forward(xs)
        return probs


@dataclass
class RulePosterior:
    theta_r: np.ndarray

    def posterior(self) -> np.ndarray:
        return softmax(self.theta_r)


class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return -self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 32
    seed: int = 0
    complement_mode: str = "full"


@dataclass
class TrainResult:
    model: PerceptionModel
    posterior: RulePosterior
    trajectory: list            # per epoch dicts
    circuits: dict              # example id -> LossCircuit
    index: AtomIndex

    @property
    def theta(self) -> np.ndarray:
        return self.model.theta

    @property
    def theta_r(self) -> np.ndarray:
        return self.posterior.theta_r


def example_probability_vector(model: PerceptionModel, theta_r: np.ndarray,
                               xs: np.ndarray):
    probs, cache = model.forward(xs)
    p = np.concatenate([softmax(theta_r)] + probs)
    return p, probs, cache


def _example_grad(model, theta_r, circuit, xs, complement_mode):
    p, probs, cache = example_probability_vector(model, theta_r, xs)
    loss, gp = semantic_loss_grad(circuit, p, complement_mode)
    if math.isinf(loss):
        return loss, None, None
    n_rules = len(theta_r)
    g_post = softmax_backward(softmax(theta_r), gp[:n_rules])
    grad_probs = []
    pos = n_rules
    for s in probs:
        grad_probs.append(gp[pos:pos + len(s)])
        pos += len(s)
    g_theta = model.backward(cache, grad_probs)
    return loss, g_theta, g_post


def latent_accuracy(model: PerceptionModel, task: NeuralTask,
                    dataset: Dataset) -> Optional[float]:
    if not dataset.gold_latents:
        return None
    hits = total = 0
    for e in task.examples:
        gold = dataset.gold_latents.get(e.id)
        if gold is None:
            continue
        xs = np.stack([dataset.inputs[r] for r in e.raw])
        probs = model.probs_for(xs)
        for j, v in enumerate(gold):
            pred = int(np.argmax(probs[j]))
            hits += int(task.latent.arities[j][pred] == v)
            total += 1
    return hits / total if total else None


def train(task: NeuralTask, space: OptSufficientSpace, dataset: Dataset,
          config: TrainConfig) -> TrainResult:
    """Minibatch Adam on the mean semantic loss; deterministic given the
    seed.  The trajectory records per-epoch mean loss, the rule posterior,
    and latent accuracy when gold latents are present."""
    rng = np.random.default_rng(config.seed)
    index = atom_index_for(task, space)
    circuits = {e.id: build_circuit(task, e, space, index) for e in task.examples}
    model = PerceptionModel(MLPConfig.from_task(task, dataset), rng)
    theta_r = np.zeros(len(space.rules))
    xs_of = {e.id: np.stack([dataset.inputs[r] for r in e.raw])
             for e in task.examples}

    opt_theta = Adam(len(model.theta), config.lr)
    opt_rules = Adam(len(theta_r), config.lr)
    trajectory = []
    order = np.arange(len(task.examples))
    for epoch in range(config.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            g_theta = np.zeros(len(model.theta))
            g_rules = np.zeros(len(theta_r))
            batch_loss = 0.0
            for ei in batch:
                e = task.examples[ei]
                loss, gt, gr = _example_grad(model, theta_r, circuits[e.id],
                                             xs_of[e.id], config.complement_mode)
                if math.isnan(loss):
                    raise DivergenceError(
                        f"loss diverged (nan) at epoch {epoch}, example {e.id}")
                if math.isinf(loss):
                    raise UncoverableExampleError(
                        f"example {e.id}: semantic loss is infinite (label "
                        f"unprovable at current parameters)")
                batch_loss += loss
                g_theta += gt
                g_rules += gr
            k = len(batch)
            epoch_loss += batch_loss
            if config.lr > 0:
                model.set_theta(model.theta + opt_theta.step(g_theta / k))
                theta_r = theta_r + opt_rules.step(g_rules / k)
        entry = {
            "epoch": epoch,
            "loss": epoch_loss / max(len(order), 1),
            "posterior": softmax(theta_r).tolist(),
        }
        acc = latent_accuracy(model, task, dataset)
        if acc is not None:
            entry["latent_accuracy"] = acc
        trajectory.append(entry)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"loss diverged at epoch {epoch}")
    return TrainResult(model, RulePosterior(theta_r), trajectory, circuits, index)
