"""A small CTR model: per-field embeddings, pairwise dot products, logistic head.

For each sample the model fetches one embedding per sparse field and a
d-dimensional projection of the dense features, takes dot products between
those vectors and feeds them through a linear layer plus bias into a
sigmoid. Gradients are written out by hand. Embedding gradients come back
as :class:`~mlet.gradflow.SparseGradient` objects, the same structure the
theory code analyses.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .embedding import (
    EmbeddingBundle,
    InitSpec,
    collapse,
    dump_bundle,
    init_mlet,
    init_single,
    load_bundle,
    xavier_uniform,
)
from .gradflow import SparseGradient, sparse_gradient_from_arrays
from .linalg import dump_matrix, load_matrix
from .compress import QuantizedTable

CHECKPOINT_MAGIC = b"MLETCKP1"

SGD = "sgd"
ADAGRAD = "adagrad"


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, batch_start: int, max_abs_param: float, loss: float):
        super().__init__(
            f"non-finite loss {loss} at iteration {iteration} "
            f"(batch starting at sample {batch_start}, max |param| = {max_abs_param:.3e})"
        )
        self.iteration = iteration
        self.batch_start = batch_start
        self.max_abs_param = max_abs_param
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.2
    optimizer: str = SGD
    adagrad_eps: float = 1e-10
    batch_size: int = 128
    epochs: int = 1
    seed: int = 0
    init: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in (SGD, ADAGRAD):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossReport:
    logloss: float
    sample_count: int


def _field_seed(seed: int, f: int) -> int:
    return int(np.random.SeedSequence([seed, 1, f]).generate_state(1)[0])


def interaction_pairs(n_fields: int, has_dense: bool) -> list[tuple[int, int]]:
    """Index pairs of the vectors whose dot products feed the head.

    With a dense projection there are n_fields + 1 vectors and every distinct
    pair is used. Without one, self-products are included so a single field
    still has an interaction term. Both give n_fields*(n_fields+1)/2 pairs.
    """
    if has_dense:
        m = n_fields + 1
        return [(a, b) for a in range(m) for b in range(a + 1, m)]
    return [(a, b) for a in range(n_fields) for b in range(a, n_fields)]


@dataclass
class Gradients:
    embeddings: list[SparseGradient]
    dense: np.ndarray
    top: np.ndarray
    loss: float


class CtrModel:
    def __init__(self, bundles: list[EmbeddingBundle], dense_weights: np.ndarray,
                 top_weights: np.ndarray):
        if not bundles:
            raise ValueError("need at least one sparse field")
        d = bundles[0].d
        if any(b.d != d for b in bundles):
            raise ValueError("all embedding tables must share d")
        kinds = {b.kind for b in bundles}
        if len(kinds) != 1:
            raise ValueError("tables must be all single-layer or all factorized")
        if dense_weights.shape[0] != d:
            raise ValueError(f"dense projection must have {d} rows, got {dense_weights.shape}")
        self.bundles = bundles
        self.dense_weights = np.asarray(dense_weights, dtype=np.float64)
        self.top_weights = np.asarray(top_weights, dtype=np.float64)
        self.pairs = interaction_pairs(len(bundles), self.dense_dim > 0)
        if self.top_weights.shape != (len(self.pairs) + 1,):
            raise ValueError(
                f"top weights must have {len(self.pairs) + 1} entries, got {self.top_weights.shape}"
            )

    @classmethod
    def create(cls, field_sizes, dense_dim: int, d: int, k: int | None = None,
               init: InitSpec | None = None) -> CtrModel:
        """Fresh model; ``k=None`` gives single-layer tables, otherwise factorized ones."""
        init = init or InitSpec()
        bundles = []
        for f, n in enumerate(field_sizes):
            spec = InitSpec(factor_std=init.factor_std, seed=_field_seed(init.seed, f))
            bundles.append(init_single(d, n, spec) if k is None else init_mlet(d, n, k, spec))
        rng = np.random.default_rng([init.seed, 3])
        dense_w = xavier_uniform(rng, d, dense_dim) if dense_dim else np.zeros((d, 0))
        n_pairs = len(interaction_pairs(len(bundles), dense_dim > 0))
        top = np.zeros(n_pairs + 1)
        top[:-1] = 1.0
        return cls(bundles, dense_w, top)

    @property
    def d(self) -> int:
        return self.bundles[0].d

    @property
    def dense_dim(self) -> int:
        return self.dense_weights.shape[1]

    @property
    def field_sizes(self) -> tuple[int, ...]:
        return tuple(b.n for b in self.bundles)

    @property
    def mode(self) -> str:
        return self.bundles[0].kind

    @property
    def k(self) -> int | None:
        return self.bundles[0].k

    def train_param_count(self) -> int:
        return sum(b.param_count() for b in self.bundles) + self.dense_weights.size + self.top_weights.size

    def inference_param_count(self) -> int:
        """Embedding parameters after collapsing: sum of d * n_f."""
        return sum(b.d * b.n for b in self.bundles)

    def copy(self) -> CtrModel:
        return CtrModel([b.copy() for b in self.bundles], self.dense_weights.copy(),
                        self.top_weights.copy())

    def collapsed(self) -> CtrModel:
        return CtrModel([collapse(b) for b in self.bundles], self.dense_weights.copy(),
                        self.top_weights.copy())

    def parameters(self) -> list[np.ndarray]:
        out = []
        for b in self.bundles:
            out.extend([b.w] if b.kind == "single" else [b.w1, b.w2])
        out.extend([self.dense_weights, self.top_weights])
        return out

    # -- forward / backward -------------------------------------------------

    def _vectors(self, sparse: np.ndarray, dense: np.ndarray) -> list[np.ndarray]:
        sparse = np.asarray(sparse)
        if sparse.ndim != 2 or sparse.shape[1] != len(self.bundles):
            raise ValueError(f"sparse block must be (batch, {len(self.bundles)})")
        vecs = []
        for f, b in enumerate(self.bundles):
            idx = sparse[:, f]
            if idx.size and (idx.min() < 0 or idx.max() >= b.n):
                raise IndexError(f"field {f}: category index out of range [0, {b.n})")
            if b.kind == "single":
                vecs.append(b.w[:, idx].T)
            else:
                vecs.append((b.w1 @ b.w2[:, idx]).T)
        if self.dense_dim:
            dense = np.asarray(dense, dtype=np.float64)
            if dense.shape != (sparse.shape[0], self.dense_dim):
                raise ValueError(f"dense block must be (batch, {self.dense_dim})")
            vecs.append(dense @ self.dense_weights.T)
        return vecs

    def _interactions(self, vecs: list[np.ndarray]) -> np.ndarray:
        return np.column_stack([np.einsum("ij,ij->i", vecs[a], vecs[b]) for a, b in self.pairs])

    def logits(self, sparse, dense) -> np.ndarray:
        inter = self._interactions(self._vectors(sparse, dense))
        return inter @ self.top_weights[:-1] + self.top_weights[-1]

    def forward(self, sparse, dense) -> np.ndarray:
        """Click probabilities for a batch."""
        return _sigmoid(self.logits(sparse, dense))

    def predict(self, sparse, dense, chunk: int = 8192) -> np.ndarray:
        out = [self.forward(sparse[i:i + chunk], dense[i:i + chunk])
               for i in range(0, len(sparse), chunk)]
        return np.concatenate(out) if out else np.zeros(0)

    def loss(self, sparse, dense, labels) -> float:
        z = self.logits(sparse, dense)
        return float(np.mean(_bce_with_logits(z, np.asarray(labels, dtype=np.float64))))

    def backward(self, sparse, dense, labels) -> Gradients:
        """Exact gradients of the mean LogLoss over the batch."""
        y = np.asarray(labels, dtype=np.float64)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        vecs = self._vectors(sparse, dense)
        inter = self._interactions(vecs)
        z = inter @ self.top_weights[:-1] + self.top_weights[-1]
        batch = y.size
        dz = (_sigmoid(z) - y) / batch

        top = np.empty_like(self.top_weights)
        top[:-1] = inter.T @ dz
        top[-1] = dz.sum()

        dvecs = [np.zeros_like(v) for v in vecs]
        for p, (a, b) in enumerate(self.pairs):
            coef = (dz * self.top_weights[p])[:, None]
            dvecs[a] += coef * vecs[b]
            dvecs[b] += coef * vecs[a]

        n_fields = len(self.bundles)
        dense_grad = np.zeros_like(self.dense_weights)
        if self.dense_dim:
            dense_grad = dvecs[n_fields].T @ np.asarray(dense, dtype=np.float64)
        emb = [
            sparse_gradient_from_arrays(np.asarray(sparse)[:, f], dvecs[f].T, b.d, b.n)
            for f, b in enumerate(self.bundles)
        ]
        return Gradients(emb, dense_grad, top, float(np.mean(_bce_with_logits(z, y))))


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _bce_with_logits(z, y):
    return np.logaddexp(0.0, z) - y * z


# -- optimizers --------------------------------------------------------------


class Optimizer:
    """SGD or Adagrad over a model's parameters, with sparse column updates for tables.

    Adagrad scales each step by ``eta / sqrt(acc + eps)`` where ``acc`` is the
    per-parameter running sum of squared gradients, starting at zero.
    """

    def __init__(self, model: CtrModel, config: TrainConfig):
        self.eta = config.eta
        self.adagrad = config.optimizer == ADAGRAD
        self.eps = config.adagrad_eps
        self.state: dict[int, np.ndarray] = {}
        if self.adagrad:
            for p in model.parameters():
                self.state[id(p)] = np.zeros_like(p)

    def _apply(self, param: np.ndarray, grad: np.ndarray, cols=None) -> None:
        if cols is None:
            if self.adagrad:
                acc = self.state[id(param)]
                acc += grad * grad
                param -= self.eta * grad / np.sqrt(acc + self.eps)
            else:
                param -= self.eta * grad
            return
        if self.adagrad:
            acc = self.state[id(param)]
            acc[:, cols] += grad * grad
            param[:, cols] -= self.eta * grad / np.sqrt(acc[:, cols] + self.eps)
        else:
            param[:, cols] -= self.eta * grad

    def step(self, model: CtrModel, grads: Gradients) -> None:
        for b, g in zip(model.bundles, grads.embeddings):
            if b.kind == "single":
                self._apply(b.w, g.values, g.indices)
            else:
                # both factor gradients come from the pre-step weights
                g1 = g.values @ b.w2[:, g.indices].T
                g2 = b.w1.T @ g.values
                self._apply(b.w1, g1)
                self._apply(b.w2, g2, g.indices)
        if model.dense_dim:
            self._apply(model.dense_weights, grads.dense)
        self._apply(model.top_weights, grads.top)


def train_epoch(model: CtrModel, sparse, dense, labels, config: TrainConfig,
                optimizer: Optimizer | None = None, epoch: int = 0) -> LossReport:
    """One pass over the data in a seed-determined shuffled order.

    The reported loss is the sample-weighted mean of each batch's loss
    measured before that batch's update.
    """
    n = len(labels)
    if n == 0:
        raise ValueError("cannot train on an empty split")
    optimizer = optimizer or Optimizer(model, config)
    order = np.random.default_rng([config.seed, 2, epoch]).permutation(n)
    total = 0.0
    for it, start in enumerate(range(0, n, config.batch_size)):
        sel = order[start:start + config.batch_size]
        grads = model.backward(sparse[sel], dense[sel], labels[sel])
        if not np.isfinite(grads.loss):
            peak = max(float(np.max(np.abs(p))) if p.size else 0.0 for p in model.parameters())
            raise TrainingDivergedError(it, start, peak, grads.loss)
        total += grads.loss * sel.size
        if config.eta > 0:
            optimizer.step(model, grads)
    return LossReport(logloss=total / n, sample_count=n)


def train(model: CtrModel, sparse, dense, labels, config: TrainConfig) -> list[LossReport]:
    optimizer = Optimizer(model, config)
    return [train_epoch(model, sparse, dense, labels, config, optimizer, epoch=e)
            for e in range(config.epochs)]


# -- checkpoints ---------------------------------------------------------------

_BUNDLE_ENTRY = 0
_QUANT_ENTRY = 1


def dump_checkpoint(model: CtrModel, info: dict | None = None,
                    quantized: list[QuantizedTable] | None = None) -> bytes:
    """Serialize a model.

    Layout: ``MLETCKP1``, u64 JSON length, JSON header, one entry per field
    (a byte 0 + bundle, or a byte 1 + ``MLETQ8`` table), then the dense
    projection (if any) and the head weights as ``MLETMAT1`` matrices.
    """
    header = {"fields": len(model.bundles), "d": model.d, "dense_dim": model.dense_dim}
    header.update(info or {})
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<Q", len(blob)), blob]
    for f, b in enumerate(model.bundles):
        if quantized is not None:
            parts += [bytes([_QUANT_ENTRY]), quantized[f].to_bytes()]
        else:
            parts += [bytes([_BUNDLE_ENTRY]), dump_bundle(b)]
    if model.dense_dim:
        parts.append(dump_matrix(model.dense_weights))
    parts.append(dump_matrix(model.top_weights[None, :]))
    return b"".join(parts)


def load_checkpoint(buf: bytes) -> tuple[CtrModel, dict]:
    """Inverse of :func:`dump_checkpoint`; quantized tables are dequantized."""
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not an MLET checkpoint")
    (length,) = struct.unpack_from("<Q", buf, 8)
    header = json.loads(buf[16:16 + length])
    off = 16 + length
    bundles = []
    for _ in range(header["fields"]):
        tag = buf[off]
        off += 1
        if tag == _BUNDLE_ENTRY:
            b, off = load_bundle(buf, off)
        elif tag == _QUANT_ENTRY:
            q, off = QuantizedTable.from_bytes(buf, off)
            d, n = q.shape
            b = EmbeddingBundle("single", d, n, w=q.dequantize())
        else:
            raise ValueError(f"bad checkpoint entry tag {tag}")
        bundles.append(b)
    if header["dense_dim"]:
        dense_w, off = load_matrix(buf, off)
    else:
        dense_w = np.zeros((header["d"], 0))
    top, off = load_matrix(buf, off)
    return CtrModel(bundles, dense_w, top[0]), header
