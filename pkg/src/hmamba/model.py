"""Hyperbolic Mamba recommenders (Full / Half) and the Euclidean Mamba reference.

Parameters are kept as a flat ``name -> ndarray`` mapping so they serialize
directly into checkpoints; forward passes wrap them in :class:`~hmamba.autodiff.Var`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import lorentz, nn
from .autodiff import Var
from .errors import ShapeError, VocabularyError
from .lorentz import DEFAULT_TOL, Tolerance

VARIANTS = ("full", "half", "euclidean")
SCORE_CLAMP = 30.0
LAYER_KEYS = (
    "ln_gamma", "ln_beta", "W_in", "conv_w", "conv_b", "w_delta", "delta_bias",
    "W_B", "W_C", "A_log", "D", "W_out",
)


@dataclass
class ModelConfig:
    variant: str = "full"
    d: int = 32
    d_state: int = 32
    expand: int = 2
    conv_width: int = 2
    n_layers: int = 1
    k: float = 1.0
    dropout: float = 0.1
    max_seq_len: int = 50
    vocab_size: int = 2  # includes the padding id 0
    init_std: float = 0.1
    delta_init: float = 0.01
    eps_arcosh: float = DEFAULT_TOL.eps_arcosh
    eps_norm: float = DEFAULT_TOL.eps_norm

    def __post_init__(self):
        self.variant = str(self.variant).lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("d", "d_state", "expand", "conv_width", "n_layers", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
            setattr(self, name, int(getattr(self, name)))
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must include padding plus at least one item")
        self.k = float(lorentz.check_curvature(self.k))
        self.vocab_size = int(self.vocab_size)

    @property
    def n_items(self) -> int:
        return self.vocab_size - 1

    @property
    def d_inner(self) -> int:
        return self.expand * self.d

    @property
    def tol(self) -> Tolerance:
        return Tolerance(self.eps_arcosh, self.eps_norm)

    @property
    def hyperbolic(self) -> bool:
        return self.variant != "euclidean"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class ModelState:
    """Model configuration plus every learnable tensor, by name."""

    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ModelState":
        rng = np.random.default_rng(seed)
        d, C, N, w = config.d, config.d_inner, config.d_state, config.conv_width
        params = {}
        emb = rng.normal(0.0, config.init_std, size=(config.vocab_size, d))
        emb[0] = 0.0
        params["embedding"] = emb
        for layer in range(config.n_layers):
            pre = f"layers.{layer}."
            params[pre + "ln_gamma"] = np.ones(d)
            params[pre + "ln_beta"] = np.zeros(d)
            params[pre + "W_in"] = rng.normal(0.0, d**-0.5, size=(d, 2 * C))
            params[pre + "conv_w"] = rng.normal(0.0, w**-0.5, size=(w, C))
            params[pre + "conv_b"] = np.zeros(C)
            params[pre + "w_delta"] = rng.normal(0.0, 0.1 * C**-0.5, size=C)
            params[pre + "delta_bias"] = np.array(np.log(np.expm1(config.delta_init)))
            params[pre + "W_B"] = rng.normal(0.0, C**-0.5, size=(C, N))
            params[pre + "W_C"] = rng.normal(0.0, C**-0.5, size=(C, N))
            params[pre + "A_log"] = np.log(np.arange(N) + 1.0)
            params[pre + "D"] = np.ones(C)
            params[pre + "W_out"] = rng.normal(0.0, C**-0.5, size=(C, d))
        return cls(config, params)

    def copy(self) -> "ModelState":
        return ModelState(ModelConfig.from_dict(self.config.to_dict()),
                          {k: v.copy() for k, v in self.params.items()})

    def variables(self, requires_grad: bool = True) -> dict[str, Var]:
        return {k: Var(v, requires_grad=requires_grad, name=k) for k, v in self.params.items()}


def _layer(vars_: dict[str, Var], layer: int) -> dict[str, Var]:
    pre = f"layers.{layer}."
    return {key: vars_[pre + key] for key in LAYER_KEYS}


def embed_sequence(items, table: np.ndarray) -> np.ndarray:
    """Rows of the embedding table for an id sequence; id 0 (padding) maps to the zero row."""
    ids = np.asarray(items, dtype=np.int64)
    if np.any(ids < 0) or np.any(ids >= table.shape[0]):
        raise VocabularyError(f"item id outside [0, {table.shape[0]})")
    out = table[ids].copy()
    out[ids == 0] = 0.0
    return out


def to_hyperbolic(E, k: float, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Lift each row to the origin tangent space and map it onto the hyperboloid."""
    return lorentz.exp_map_origin(lorentz.lift(E), k, tol)


def check_ids(ids: np.ndarray, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ShapeError("expected a (batch, length) id array")
    if np.any(ids < 0) or np.any(ids >= vocab_size):
        raise VocabularyError(f"item id outside [0, {vocab_size})")
    return ids


def encode(state: ModelState, ids, vars_: dict[str, Var] | None = None, rng=None,
           backend: str | None = None, trace: list | None = None) -> Var:
    """Run embedding + encoder layers on left-padded ids ``(B, L)``.

    Returns hyperboloid points ``(B, L, d + 1)`` for the hyperbolic variants and
    Euclidean states ``(B, L, d)`` for the reference. ``rng`` enables dropout.
    ``trace`` (a list) collects every intermediate hyperbolic tensor.
    """
    cfg = state.config
    ids = check_ids(ids, cfg.vocab_size)
    vars_ = vars_ if vars_ is not None else state.variables(requires_grad=False)
    mask = (ids != 0).astype(np.float64)
    E = ad.take_rows(vars_["embedding"], ids) * mask[..., None]
    E = nn.dropout(E, cfg.dropout, rng)
    rate = cfg.dropout if rng is not None else 0.0
    if not cfg.hyperbolic:
        X = E
        for layer in range(cfg.n_layers):
            X = nn.euclidean_layer(X, _layer(vars_, layer), mask, rate, rng, backend)
        return X
    H = nn.exp_map_origin(E, cfg.k, cfg.tol)
    if trace is not None:
        trace.append(H.value)
    for layer in range(cfg.n_layers):
        H = nn.hyperbolic_layer(H, _layer(vars_, layer), cfg.k, mask, rate, rng, backend)
        if trace is not None:
            trace.append(H.value)
    return H


def item_table(state: ModelState, vars_: dict[str, Var]) -> Var:
    """Candidate representations for items 1..|V|-1 (hyperboloid points for Full)."""
    table = vars_["embedding"][1:]
    if state.config.variant == "full":
        return nn.exp_map_origin(table, state.config.k, state.config.tol)
    return table


def representation(state: ModelState, out: Var) -> Var:
    """Encoder output -> the vector used for scoring (log-mapped for Half)."""
    if state.config.variant == "half":
        return nn.log_map_origin(out, state.config.k, state.config.tol)
    return out


def all_scores(state: ModelState, rep: Var, table: Var) -> Var:
    """Scores of every candidate item: dot products, or negative distances for Full."""
    if state.config.variant == "full":
        return -nn.distance_to_table(rep, table, state.config.k, state.config.tol)
    return rep @ ad.transpose(table)


def pair_scores(state: ModelState, rep: Var, vars_: dict[str, Var], item_ids) -> Var:
    """Scores of specific items per position (``item_ids`` broadcast against ``rep[..., 0]``)."""
    rows = ad.take_rows(vars_["embedding"], item_ids)
    if state.config.variant == "full":
        pts = nn.exp_map_origin(rows, state.config.k, state.config.tol)
        return -nn.hyperbolic_distance(rep, pts, state.config.k, state.config.tol)[..., 0]
    return ad.sum_(rep * rows, axis=-1)


# -- numpy-level scoring and loss surfaces ------------------------------------


def score_half(e_hat, table: np.ndarray) -> np.ndarray:
    """Dot-product scores ``table[1:] @ e_hat`` over the non-padding items."""
    return np.asarray(table, dtype=np.float64)[1:] @ np.asarray(e_hat, dtype=np.float64)


def score_full(h_hat, hyper_table: np.ndarray, k: float, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Negative hyperbolic distances from ``h_hat`` to each lifted item (rows of ``hyper_table``)."""
    return -lorentz.hyperbolic_distance(np.asarray(h_hat)[None, :], hyper_table, k, tol)


def bce_terms(scores, labels) -> np.ndarray:
    """Per-term binary cross-entropy with scores clamped to [-30, 30]."""
    s = np.clip(np.asarray(scores, dtype=np.float64), -SCORE_CLAMP, SCORE_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return y * np.logaddexp(0.0, -s) + (1.0 - y) * np.logaddexp(0.0, s)


def loss_half(pos: Var, neg: Var, mask: np.ndarray) -> Var:
    """Binary cross-entropy with one sampled negative per positive, averaged over valid positions."""
    pos = ad.clamp(pos, -SCORE_CLAMP, SCORE_CLAMP)
    neg = ad.clamp(neg, -SCORE_CLAMP, SCORE_CLAMP)
    terms = -ad.log_sigmoid(pos) - ad.log_sigmoid(-neg)
    return ad.sum_(terms * mask) / max(float(mask.sum()), 1.0)


def loss_full(scores: Var, targets, mask: np.ndarray | None = None) -> Var:
    """Softmax cross-entropy over negative-distance scores.

    ``scores``: (..., n_items) for items 1..n_items; ``targets``: (...) item ids.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    if np.any((targets < 1) & (mask > 0)):
        raise VocabularyError("the padding id cannot be a training target")
    idx = np.clip(targets - 1, 0, scores.shape[-1] - 1)
    picked = ad.getitem(scores, tuple(np.indices(targets.shape)) + (idx,))
    nll = ad.logsumexp(scores, axis=-1) - picked
    return ad.sum_(nll * mask) / max(float(mask.sum()), 1.0)


def literal_distance_objective(h_hat, target_point, k: float) -> np.ndarray:
    """Diagnostic ``-2k + 2 sqrt(k) arcosh(-<h, e>_L / k)`` (negated-distance form); not trained on."""
    return -2.0 * k + 2.0 * lorentz.hyperbolic_distance(h_hat, target_point, k)


def training_loss(state: ModelState, vars_: dict[str, Var], inputs, targets, negatives=None,
                  rng=None, backend: str | None = None) -> Var:
    """Variant-dependent loss over every non-padding position of a batch."""
    inputs = np.asarray(inputs, dtype=np.int64)
    mask = (np.asarray(targets) > 0).astype(np.float64)
    out = encode(state, inputs, vars_, rng=rng, backend=backend)
    rep = representation(state, out)
    if state.config.variant == "full":
        scores = all_scores(state, rep, item_table(state, vars_))
        return loss_full(scores, targets, mask)
    if negatives is None:
        raise ValueError("the dot-product variants need sampled negatives")
    pos = pair_scores(state, rep, vars_, np.asarray(targets))
    neg = pair_scores(state, rep, vars_, np.asarray(negatives))
    return loss_half(pos, neg, mask)


def left_pad(seq, length: int) -> np.ndarray:
    seq = list(seq)[-length:]
    return np.array([0] * (length - len(seq)) + seq, dtype=np.int64)


def score_sequences(state: ModelState, ids, backend: str | None = None) -> np.ndarray:
    """Scores of all items at the final position of each left-padded row -> (B, n_items)."""
    with ad.no_grad():
        vars_ = state.variables(requires_grad=False)
        out = encode(state, ids, vars_, backend=backend)
        rep = representation(state, out)[:, -1]
        return all_scores(state, rep, item_table(state, vars_)).value


def rank_items(scores: np.ndarray) -> np.ndarray:
    """Item ids (1-based) by descending score, ties broken by ascending id."""
    scores = np.asarray(scores)
    ids = np.arange(1, scores.shape[-1] + 1)
    return ids[np.lexsort((ids, -scores))]


def predict_next(state: ModelState, sequence, backend: str | None = None) -> np.ndarray:
    """Full ranking of candidate next items for one interaction sequence."""
    sequence = [int(i) for i in sequence]
    if not sequence:
        raise ValueError("empty sequence")
    ids = left_pad(sequence, state.config.max_seq_len)[None, :]
    return rank_items(score_sequences(state, ids, backend)[0])
