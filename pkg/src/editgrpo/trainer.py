"""SFT and GRPO-family training: group construction, advantages, clipped surrogate, updates."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .edit import EditConfig, EditTrace, RULE_KEYS, edit, paragraph_edit
from .extractor import ExtractionMode, text_labels
from .ontology import NO_FINDING, Ontology
from .policy import (
    DEFAULT_MAX_LEN,
    NumericalError,
    Origin,
    Trajectory,
    encode_report,
    forward,
    greedy_decode,
    init_params,
    params_to_json,
    render_tokens,
    sample_batch,
    weighted_grad,
)
from .rewards import DEFAULT_COMPONENTS, RewardBreakdown, RewardParams, composite_reward, label_f1, scope_labels
from .world import FEATURE_DIM, Case, WorldConfig, label_prevalence, make_corpus, split_corpus

log = logging.getLogger(__name__)

VARIANTS = ("sft", "grpo", "drgrpo", "editgrpo", "editgrpo_norm", "editgrpo_para")
EDIT_VARIANTS = ("editgrpo", "editgrpo_norm", "editgrpo_para")

# (advantage_norm, length_norm) per variant when not set explicitly.
_VARIANT_DEFAULTS = {
    "sft": ("mean_std", "per_token"),
    "grpo": ("mean_std", "per_token"),
    "drgrpo": ("mean_only", "constant"),
    "editgrpo": ("mean_only", "constant"),
    "editgrpo_norm": ("mean_std", "constant"),
    "editgrpo_para": ("mean_only", "constant"),
}

METRIC_COLUMNS = (
    "step",
    "variant",
    "mean_reward",
    "radgraph_like",
    "chexbert_micro14",
    "rate_like",
    "no_finding_frac",
    "clip_frac",
    "kl",
    "edits_a",
    "edits_b",
    "edits_c",
    "edits_d",
    "edits_e",
    "mean_len",
)

STD_GUARD = 1e-8


@dataclass(frozen=True)
class TrainerConfig:
    variant: str = "editgrpo"
    group_size: int = 10
    epsilon: float = 0.2
    beta: float = 0.0
    tau: float = 0.6
    temperature: float = 1.0
    learning_rate: float = 200.0  # per-token weights are ~A/(G*L*B); see README
    batch_cases: int = 32
    steps: int = 300
    inner_steps: int = 1
    advantage_norm: str | None = None  # mean_only | mean_std; None = variant default
    length_norm: str | None = None  # per_token | constant; None = variant default
    max_len: int = DEFAULT_MAX_LEN
    max_edits: int | None = None
    edit_mode: str = "embedding"
    reward_components: tuple[str, ...] = DEFAULT_COMPONENTS
    tau_match: float = 0.5
    sft_epochs: int = 0
    sft_learning_rate: float = 0.5
    sft_batch_size: int = 32
    n_cases: int = 2000
    seed: int = 0
    checkpoint_every: int = 100
    trace_every: int = 50
    threads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.group_size < 2 or self.group_size % 2:
            raise ValueError("group_size must be an even integer >= 2")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.learning_rate < 0 or self.sft_learning_rate < 0:
            raise ValueError("learning rates must be non-negative")
        if self.advantage_norm not in (None, "mean_only", "mean_std"):
            raise ValueError(f"bad advantage_norm {self.advantage_norm!r}")
        if self.length_norm not in (None, "per_token", "constant"):
            raise ValueError(f"bad length_norm {self.length_norm!r}")
        if self.batch_cases < 1 or self.steps < 0 or self.inner_steps < 1:
            raise ValueError("batch_cases >= 1, steps >= 0, inner_steps >= 1 required")
        ExtractionMode(self.edit_mode)

    @property
    def adv_mode(self) -> str:
        return self.advantage_norm or _VARIANT_DEFAULTS[self.variant][0]

    @property
    def len_mode(self) -> str:
        return self.length_norm or _VARIANT_DEFAULTS[self.variant][1]

    @property
    def length_constant(self) -> int:
        return self.max_len + 1

    @property
    def edit_config(self) -> EditConfig:
        return EditConfig(tau=self.tau, max_edits=self.max_edits, mode=ExtractionMode(self.edit_mode))

    def reward_params(self, prevalence=None) -> RewardParams:
        prev = tuple(float(p) for p in prevalence) if prevalence is not None else None
        return RewardParams(tuple(self.reward_components), self.tau_match, prev)


@dataclass
class RolloutGroup:
    case: Case
    trajectories: list[Trajectory]
    rewards: list[RewardBreakdown]
    advantages: list[float]
    edit_traces: list[EditTrace | None]


def grpo_advantages(rewards, mode: str = "mean_only") -> list[float]:
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise ValueError("need at least two rewards per group")
    if np.all(r == r[0]):  # the float mean of equal values can be off by an ulp
        return [0.0] * r.size
    centered = r - r.mean()
    if mode == "mean_only":
        return centered.tolist()
    if mode != "mean_std":
        raise ValueError(f"unknown advantage mode {mode!r}")
    std = r.std()
    if std < STD_GUARD:
        return centered.tolist()
    return (centered / std).tolist()


# -- rollouts ---------------------------------------------------------------


def _rollout_uniforms(seed: int, step: int, case_id: int, n: int, width: int) -> np.ndarray:
    return np.stack([np.random.default_rng([seed, step, case_id, g]).random(width) for g in range(n)])


def _edit_rng(seed: int, step: int, case_id: int, g: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, case_id, g, 1])


def _finish_group(args) -> tuple[list, list, list]:
    """Edit (where applicable) and score one group's sampled trajectories. Pure given its inputs."""
    case, sampled, cfg, ontology, rparams, step = args
    edited, traces = [], []
    if cfg.variant in EDIT_VARIANTS:
        for g, tr in enumerate(sampled):
            if cfg.variant == "editgrpo_para":
                text, trace = paragraph_edit(tr.text, case.reference_text), EditTrace()
            else:
                res = edit(tr.text, case.reference_text, cfg.edit_config, ontology, _edit_rng(cfg.seed, step, case.case_id, g))
                text, trace = res.edited_text, res.trace
            edited.append(text)
            traces.append(trace)
    texts = [tr.text for tr in sampled] + edited
    rewards = [composite_reward(t, case.reference_text, ontology, rparams) for t in texts]
    return edited, traces, rewards


def build_groups(params_old, cases, cfg: TrainerConfig, ontology: Ontology, step: int = 0, rparams=None):
    """Rollout groups for a batch of cases against one parameter snapshot.

    Each rollout draws from its own stream derived from (seed, step, case_id, slot),
    so the result does not depend on batch composition or on ``cfg.threads``.
    """
    rparams = rparams or cfg.reward_params()
    n_sample = cfg.group_size // 2 if cfg.variant in EDIT_VARIANTS else cfg.group_size
    feats = np.concatenate([np.repeat(c.features[None, :], n_sample, axis=0) for c in cases])
    u = np.concatenate([_rollout_uniforms(cfg.seed, step, c.case_id, n_sample, cfg.max_len + 1) for c in cases])
    toks, lps = sample_batch(params_old, feats, u, cfg.temperature, cfg.max_len)

    sampled_per_case = []
    for ci, c in enumerate(cases):
        sl = slice(ci * n_sample, (ci + 1) * n_sample)
        sampled_per_case.append(
            [
                Trajectory(c.case_id, tuple(t), tuple(lp), render_tokens(t, ontology), Origin.SAMPLED)
                for t, lp in zip(toks[sl], lps[sl])
            ]
        )

    jobs = [(c, s, cfg, ontology, rparams, step) for c, s in zip(cases, sampled_per_case)]
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            finished = list(ex.map(_finish_group, jobs))
    else:
        finished = [_finish_group(j) for j in jobs]

    # Edited twins are scored under the snapshot, as if drawn from it.
    edited_tokens, edited_feats, owners = [], [], []
    for ci, (edited, _, _) in enumerate(finished):
        for text in edited:
            edited_tokens.append(encode_report(text, ontology))
            edited_feats.append(cases[ci].features)
            owners.append(ci)
    edited_lps = []
    if edited_tokens:
        fw = forward(params_old, np.array(edited_feats), edited_tokens)
        edited_lps = [tuple(float(v) for v in fw.token_logprobs[k, : len(t)]) for k, t in enumerate(edited_tokens)]

    groups, k = [], 0
    for ci, c in enumerate(cases):
        edited, traces, rewards = finished[ci]
        trajs = list(sampled_per_case[ci])
        for text in edited:
            trajs.append(Trajectory(c.case_id, tuple(edited_tokens[k]), edited_lps[k], text, Origin.EDITED))
            k += 1
        adv = grpo_advantages([r.composite for r in rewards], cfg.adv_mode)
        groups.append(RolloutGroup(c, trajs, rewards, adv, [None] * len(sampled_per_case[ci]) + traces))
    return groups


def build_group(params_old, case: Case, cfg: TrainerConfig, ontology: Ontology, step: int = 0, rparams=None):
    return build_groups(params_old, [case], cfg, ontology, step, rparams)[0]


# -- objective ----------------------------------------------------------------


def _flatten(groups):
    trajs = [t for g in groups for t in g.trajectories]
    feats = np.array([g.case.features for g in groups for _ in g.trajectories])
    adv = np.array([a for g in groups for a in g.advantages])
    gidx = np.array([gi for gi, g in enumerate(groups) for _ in g.trajectories])
    return trajs, feats, adv, gidx


def clipped_objective_grad(params_new, groups, cfg: TrainerConfig, params_ref=None):
    """Gradient of the clipped group surrogate (mean over groups) w.r.t. ``params_new``.

    Old-policy log-probabilities are the ones recorded on each trajectory.
    Returns (gradient, diagnostics).
    """
    trajs, feats, adv, gidx = _flatten(groups)
    tokens = [list(t.tokens) for t in trajs]
    fw = forward(params_new, feats, tokens)
    mask = fw.mask
    old = np.zeros_like(fw.token_logprobs)
    for i, t in enumerate(trajs):
        old[i, : len(t.token_logprobs)] = t.token_logprobs
    lengths = mask.sum(axis=1)
    group_sizes = np.array([len(g.trajectories) for g in groups])
    if cfg.len_mode == "per_token":
        norm = 1.0 / lengths
    else:
        norm = np.full(len(trajs), 1.0 / cfg.length_constant)
    # 1/G inside each group, then mean over groups.
    weight = norm / group_sizes[gidx] / len(groups)

    with np.errstate(over="ignore"):
        ratio = np.where(mask, np.exp(fw.token_logprobs - old), 1.0)
    a = adv[:, None]
    clipped = np.clip(ratio, 1 - cfg.epsilon, 1 + cfg.epsilon)
    with np.errstate(invalid="ignore"):  # inf * 0 where the advantage is zero
        ra = np.where(a == 0, 0.0, ratio * a)
    surr = np.minimum(ra, clipped * a)
    # The min picks the clipped branch (zero gradient) exactly in these two cases.
    clip_active = ((ratio > 1 + cfg.epsilon) & (a > 0)) | ((ratio < 1 - cfg.epsilon) & (a < 0))
    d_surr = np.where(clip_active, 0.0, ra)

    if params_ref is not None:
        ref_lp = forward(params_ref, feats, tokens).token_logprobs
        delta = np.where(mask, ref_lp - fw.token_logprobs, 0.0)
        with np.errstate(over="ignore"):  # far from the reference the estimate may be inf
            e = np.exp(delta)
        kl_tok = np.where(mask, e - delta - 1.0, 0.0)
        # with beta = 0 the KL term must not touch the gradient, even when inf
        d_kl = np.where(mask, 1.0 - e, 0.0) if cfg.beta > 0 else np.zeros_like(ratio)
    else:
        kl_tok = np.zeros_like(ratio)
        d_kl = np.zeros_like(ratio)

    coef = weight[:, None] * (d_surr - cfg.beta * d_kl)
    with np.errstate(invalid="ignore", over="ignore"):
        grad = weighted_grad(fw, coef)
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite surrogate gradient", {"max_ratio": float(ratio[mask].max()), "coef": coef})
    n_tok = mask.sum()
    diagnostics = {
        "mean_ratio": float(ratio[mask].sum() / n_tok),
        "clip_fraction": float(clip_active[mask].sum() / n_tok),
        "kl_estimate": float((weight[:, None] * kl_tok).sum()),
        "surrogate_value": float((weight[:, None] * np.where(mask, surr, 0.0)).sum()),
    }
    return grad, diagnostics


# -- supervised stage -----------------------------------------------------------


def reference_tokens(case: Case, ontology: Ontology) -> list[int]:
    return list(case.reference_ids) + [ontology.end_token]


def sft_nll(params, cases, ontology: Ontology) -> np.ndarray:
    fw = forward(params, np.array([c.features for c in cases]), [reference_tokens(c, ontology) for c in cases])
    return -fw.token_logprobs.sum(axis=1)


def sft_epoch(params, corpus, ontology: Ontology, learning_rate: float, rng=None, batch_size: int = 32):
    """One shuffled minibatch pass maximizing reference likelihood. Returns (params, mean NLL)."""
    if not corpus:
        raise ValueError("empty corpus")
    rng = rng if rng is not None else np.random.default_rng(0)
    params = params.copy()
    order = rng.permutation(len(corpus))
    losses = []
    for start in range(0, len(order), batch_size):
        batch = [corpus[i] for i in order[start : start + batch_size]]
        fw = forward(params, np.array([c.features for c in batch]), [reference_tokens(c, ontology) for c in batch])
        losses.extend(-fw.token_logprobs.sum(axis=1))
        params += learning_rate * weighted_grad(fw, np.full(fw.mask.shape, 1.0 / len(batch)))
    return params, float(np.mean(losses))


# -- evaluation -------------------------------------------------------------------


def no_finding_fraction(texts, cases, ontology: Ontology) -> float:
    """Share of abnormal cases whose report asserts No Finding (nan without abnormal cases)."""
    flags = [text_labels(t, ontology)[NO_FINDING] for t, c in zip(texts, cases) if not c.is_normal]
    return float(np.mean(flags)) if flags else float("nan")


def evaluate(params, eval_corpus, ontology: Ontology, reward_params=None, max_len: int = DEFAULT_MAX_LEN):
    """Greedy-decode every case and score it. Returns (summary dict, per-case rows)."""
    if not eval_corpus:
        raise ValueError("empty evaluation set")
    rp = reward_params or RewardParams()
    toks = greedy_decode(params, np.array([c.features for c in eval_corpus]), max_len)
    texts = [render_tokens(t, ontology) for t in toks]
    rows = []
    for c, t, tk in zip(eval_corpus, texts, toks):
        rb = composite_reward(t, c.reference_text, ontology, rp)
        rows.append({"case_id": c.case_id, "text": t, "n_sentences": len(tk) - 1, **rb.to_dict()})
    pred = np.array([text_labels(t, ontology) for t in texts])
    ref = np.array([text_labels(c.reference_text, ontology) for c in eval_corpus])
    all14, sub5 = scope_labels(ontology, "all14"), scope_labels(ontology, "subset5")
    summary = {
        "composite": float(np.mean([r["composite"] for r in rows])),
        "radgraph_like": float(np.mean([r["radgraph_like"] for r in rows])),
        "chexbert_micro_14": float(np.mean([r["chexbert_micro_14"] for r in rows])),
        "rate_like": float(np.mean([r["rate_like"] for r in rows])),
        "micro_f1_14": label_f1(pred, ref, all14, "micro"),
        "macro_f1_14": label_f1(pred, ref, all14, "macro"),
        "micro_f1_5": label_f1(pred, ref, sub5, "micro"),
        "macro_f1_5": label_f1(pred, ref, sub5, "macro"),
        "no_finding_frac": no_finding_fraction(texts, eval_corpus, ontology),
        "mean_len": float(np.mean([r["n_sentences"] for r in rows])),
    }
    if rp.prevalence is not None:
        summary["inverse_freq"] = float(np.mean([r["inverse_freq"] for r in rows]))
    return summary, rows


# -- driver -------------------------------------------------------------------------


@dataclass
class RunResult:
    params: np.ndarray
    metrics: list[dict]
    eval_summary: dict | None = None
    eval_rows: list[dict] = field(default_factory=list)
    sft_losses: list[float] = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _step_metrics(step: int, cfg: TrainerConfig, groups, diag, ontology: Ontology) -> dict:
    sampled = [(g, k) for g in groups for k, t in enumerate(g.trajectories) if t.origin is Origin.SAMPLED]
    rewards = [g.rewards[k] for g, k in sampled]
    hist = dict.fromkeys(RULE_KEYS.values(), 0)
    for g in groups:
        for tr in g.edit_traces:
            if tr is not None:
                for key, n in tr.histogram().items():
                    hist[key] += n
    texts = [g.trajectories[k].text for g, k in sampled]
    return {
        "step": step,
        "variant": cfg.variant,
        "mean_reward": float(np.mean([r.composite for r in rewards])),
        "radgraph_like": float(np.mean([r.radgraph_like for r in rewards])),
        "chexbert_micro14": float(np.mean([r.chexbert_micro_14 for r in rewards])),
        "rate_like": float(np.mean([r.rate_like for r in rewards])),
        "no_finding_frac": no_finding_fraction(texts, [g.case for g, _ in sampled], ontology),
        "clip_frac": diag["clip_fraction"],
        "kl": diag["kl_estimate"],
        **{f"edits_{k}": v for k, v in hist.items()},
        "mean_len": float(np.mean([len(g.trajectories[k].tokens) - 1 for g, k in sampled])),
    }


def _trace_rows(step: int, groups) -> list[dict]:
    rows = []
    for g in groups:
        for t, r, a, tr in zip(g.trajectories, g.rewards, g.advantages, g.edit_traces):
            rows.append(
                {
                    "step": step,
                    "case_id": g.case.case_id,
                    "origin": t.origin.value,
                    "text": t.text,
                    "reward": r.to_dict(),
                    "advantage": a,
                    "edit_trace": tr.to_list() if tr is not None else None,
                }
            )
    return rows


def train(
    cfg: TrainerConfig,
    world_cfg: WorldConfig,
    ontology: Ontology,
    params_in: np.ndarray | None = None,
    out_dir: str | os.PathLike | None = None,
    corpus: list[Case] | None = None,
    run_eval: bool = True,
) -> RunResult:
    """SFT stage (``sft_epochs``) then RL stage (``steps``) for the configured variant."""
    corpus = corpus if corpus is not None else make_corpus(world_cfg, ontology, cfg.n_cases)
    train_cases, eval_cases = split_corpus(corpus)
    prevalence = label_prevalence(train_cases) if "inverse_freq" in cfg.reward_components else None
    rparams = cfg.reward_params(prevalence)
    params = params_in.copy() if params_in is not None else init_params(ontology, FEATURE_DIM)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    result = RunResult(params, [])
    for epoch in range(cfg.sft_epochs):
        params, loss = sft_epoch(
            params, train_cases, ontology, cfg.sft_learning_rate, np.random.default_rng([cfg.seed, epoch, 99]), cfg.sft_batch_size
        )
        result.sft_losses.append(loss)
        log.info("sft epoch %d loss %.4f", epoch, loss)

    rl_steps = 0 if cfg.variant == "sft" else cfg.steps
    params_ref = params.copy()
    traces_fh = open(out / "traces.jsonl", "w") if out is not None else None
    try:
        for step in range(rl_steps):
            pick = np.random.default_rng([cfg.seed, step, 7]).choice(
                len(train_cases), size=min(cfg.batch_cases, len(train_cases)), replace=False
            )
            batch = [train_cases[i] for i in pick]
            groups = build_groups(params, batch, cfg, ontology, step, rparams)
            diag0 = None
            for _ in range(cfg.inner_steps):
                grad, diag = clipped_objective_grad(params, groups, cfg, params_ref)
                diag0 = diag0 or diag
                params = params + cfg.learning_rate * grad
            result.metrics.append(_step_metrics(step, cfg, groups, diag0, ontology))
            if traces_fh is not None and (step % cfg.trace_every == 0 or step == rl_steps - 1):
                for row in _trace_rows(step, groups):
                    traces_fh.write(json.dumps(row, sort_keys=True) + "\n")
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                (out / f"ckpt_step{step + 1}.json").write_text(params_to_json(params))
    finally:
        if traces_fh is not None:
            traces_fh.close()

    result.params = params
    if out is not None:
        (out / f"ckpt_step{rl_steps}.json").write_text(params_to_json(params))
        write_metrics_csv(result.metrics, out / "metrics.csv")
    if run_eval:
        result.eval_summary, result.eval_rows = evaluate(params, eval_cases, ontology, rparams, cfg.max_len)
        if out is not None:
            with open(out / "eval.jsonl", "w") as fh:
                for row in result.eval_rows:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
            (out / "eval_summary.json").write_text(json.dumps(result.eval_summary, indent=2, sort_keys=True))
    return result


def write_metrics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def config_dict(cfg: TrainerConfig) -> dict:
    d = asdict(cfg)
    d["reward_components"] = list(d["reward_components"])
    return d
