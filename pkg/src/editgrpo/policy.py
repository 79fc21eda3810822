"""Linear autoregressive sentence-level policy with exact log-probabilities.

A token is a sentence-template id (or END).  The logits at each step are a
linear map of ``[case features ; bag-of-emitted-templates]``, so the policy can
learn both what to say and when to stop without recurrent state.

``params`` is a plain float64 array of shape (vocab_size + 1, feature_dim + vocab_size).
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .extractor import segment_report
from .ontology import Ontology

DEFAULT_MAX_LEN = 6


class NumericalError(FloatingPointError):
    """Non-finite values met during a forward pass; ``dump`` holds the offending state."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


class UnknownSentence(ValueError):
    pass


class Origin(str, enum.Enum):
    SAMPLED = "sampled"
    EDITED = "edited"
    REFERENCE = "reference"


@dataclass(frozen=True)
class Trajectory:
    case_id: int
    tokens: tuple[int, ...]
    token_logprobs: tuple[float, ...]
    text: str
    origin: Origin = Origin.SAMPLED

    def __len__(self) -> int:
        return len(self.tokens)


def init_params(ontology: Ontology, feature_dim: int) -> np.ndarray:
    v = ontology.vocab_size
    return np.zeros((v + 1, feature_dim + v))


def _check_shapes(params: np.ndarray, features: np.ndarray) -> tuple[int, int]:
    n_out, n_in = params.shape
    vocab = n_out - 1
    if features.shape[-1] + vocab != n_in:
        raise ValueError(f"params {params.shape} do not fit features of dim {features.shape[-1]}")
    return vocab, features.shape[-1]


def _finite(logits: np.ndarray, **context) -> None:
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits", {"logits": logits, **context})


def logits(params: np.ndarray, features: np.ndarray, emitted: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    emitted = np.asarray(emitted, dtype=float)
    vocab, _ = _check_shapes(params, features)
    if emitted.shape[-1] != vocab:
        raise ValueError(f"emitted indicator must have length {vocab}")
    return params @ np.concatenate([features, emitted])


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def render_tokens(tokens, ontology: Ontology) -> str:
    return ontology.render(t for t in tokens if t != ontology.end_token)


def encode_report(text: str, ontology: Ontology) -> list[int]:
    ids = []
    for sent in segment_report(text):
        tid = ontology.text_to_id.get(sent)
        if tid is None:
            raise UnknownSentence(f"not a template sentence: {sent!r}")
        ids.append(tid)
    return ids + [ontology.end_token]


def sample_batch(
    params: np.ndarray,
    features: np.ndarray,
    uniforms: np.ndarray,
    temperature: float = 1.0,
    max_len: int = DEFAULT_MAX_LEN,
    greedy: bool = False,
) -> tuple[list[list[int]], list[list[float]]]:
    """Sample one trajectory per feature row, driven by pre-drawn uniforms of shape (n, max_len + 1).

    Log-probabilities are recorded at temperature 1.  The step after ``max_len``
    templates is forced to END.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    features = np.atleast_2d(np.asarray(features, dtype=float))
    vocab, _ = _check_shapes(params, features)
    n = features.shape[0]
    end = vocab
    bag = np.zeros((n, vocab))
    alive = np.ones(n, dtype=bool)
    tokens = [[] for _ in range(n)]
    lps = [[] for _ in range(n)]
    rows = np.arange(n)
    for t in range(max_len + 1):
        idx = rows[alive]
        if idx.size == 0:
            break
        z = np.concatenate([features[idx], bag[idx]], axis=1) @ params.T
        _finite(z, step=t)
        logp = log_softmax(z)
        if t == max_len:
            tok = np.full(idx.size, end)
        elif greedy:
            tok = np.argmax(z, axis=1)
        else:
            p = np.exp(log_softmax(z / temperature))
            cdf = np.cumsum(p, axis=1)
            tok = np.minimum((cdf < uniforms[idx, t : t + 1] * cdf[:, -1:]).sum(axis=1), end)
        for k, r in enumerate(idx):
            tokens[r].append(int(tok[k]))
            lps[r].append(float(logp[k, tok[k]]))
        emitted = tok != end
        bag[idx[emitted], tok[emitted]] = 1.0
        alive[idx[~emitted]] = False
    return tokens, lps


def sample_trajectory(
    params: np.ndarray,
    case,
    ontology: Ontology,
    temperature: float = 1.0,
    max_len: int = DEFAULT_MAX_LEN,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    rng = rng if rng is not None else np.random.default_rng()
    u = rng.random((1, max_len + 1))
    toks, lps = sample_batch(params, case.features[None, :], u, temperature, max_len)
    return Trajectory(case.case_id, tuple(toks[0]), tuple(lps[0]), render_tokens(toks[0], ontology))


def greedy_decode(params: np.ndarray, features: np.ndarray, max_len: int = DEFAULT_MAX_LEN) -> list[list[int]]:
    features = np.atleast_2d(features)
    toks, _ = sample_batch(params, features, np.zeros((features.shape[0], max_len + 1)), 1.0, max_len, greedy=True)
    return toks


def _pad(token_lists, fill: int = -1) -> np.ndarray:
    width = max(len(t) for t in token_lists)
    out = np.full((len(token_lists), width), fill, dtype=np.int64)
    for i, t in enumerate(token_lists):
        out[i, : len(t)] = t
    return out


@dataclass
class Forward:
    """Teacher-forced pass over a padded batch of token sequences."""

    inputs: np.ndarray  # (n, L, D)
    probs: np.ndarray  # (n, L, V+1)
    token_logprobs: np.ndarray  # (n, L), 0 on padding
    mask: np.ndarray  # (n, L) bool
    onehot: np.ndarray  # (n, L, V+1)


def forward(params: np.ndarray, features: np.ndarray, token_lists) -> Forward:
    features = np.atleast_2d(np.asarray(features, dtype=float))
    vocab, fdim = _check_shapes(params, features)
    toks = _pad(token_lists)
    n, L = toks.shape
    mask = toks >= 0
    onehot = np.zeros((n, L, vocab + 1))
    ii, tt = np.nonzero(mask)
    onehot[ii, tt, toks[ii, tt]] = 1.0
    emitted = onehot[:, :, :vocab]
    bag = np.minimum(np.cumsum(emitted, axis=1) - emitted, 1.0)
    inputs = np.concatenate([np.broadcast_to(features[:, None, :], (n, L, fdim)), bag], axis=2)
    z = inputs @ params.T
    _finite(z)
    logp = log_softmax(z)
    tok_lp = np.where(mask, (logp * onehot).sum(axis=2), 0.0)
    return Forward(inputs, np.exp(logp), tok_lp, mask, onehot)


def weighted_grad(fw: Forward, coef: np.ndarray) -> np.ndarray:
    """sum_{i,t} coef[i,t] * d log pi(o_it) / d params."""
    r = (fw.onehot - fw.probs) * (coef * fw.mask)[:, :, None]
    return r.reshape(-1, r.shape[-1]).T @ fw.inputs.reshape(-1, fw.inputs.shape[-1])


def _check_end(tokens, params) -> None:
    if not tokens or tokens[-1] != params.shape[0] - 1:
        raise ValueError("token sequence must be END-terminated")


def sequence_logprob(params: np.ndarray, features: np.ndarray, tokens) -> dict:
    _check_end(tokens, params)
    fw = forward(params, features, [list(tokens)])
    per = [float(v) for v in fw.token_logprobs[0, : len(tokens)]]
    return {"total": float(sum(per)), "per_token": per}


def grad_logprob(params: np.ndarray, features: np.ndarray, tokens) -> np.ndarray:
    _check_end(tokens, params)
    fw = forward(params, features, [list(tokens)])
    return weighted_grad(fw, np.ones_like(fw.token_logprobs))


def params_to_json(params: np.ndarray) -> str:
    return json.dumps({"shape": list(params.shape), "data": [float(v) for v in params.ravel()]})


def params_from_json(text: str) -> np.ndarray:
    d = json.loads(text)
    return np.asarray(d["data"], dtype=float).reshape(d["shape"])
