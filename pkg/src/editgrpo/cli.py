"""Command-line runner: ``editgrpo {train,eval,edit,sweep-tau,compare,plot,gen-world}``.

A run is described by one JSON document (see ``RunConfig``) with sections
``world``, ``trainer``, ``edit`` and ``reward`` plus ``seed``, ``n_cases``,
``ontology_seed`` and ``output_dir``.  Unknown keys are rejected.  ``--set``
overrides accept dot paths (``trainer.steps=0``) or bare keys that are unique
across sections (``steps=0``); values are parsed as JSON when possible.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .edit import EditConfig, edit
from .extractor import ExtractionMode
from .ontology import Ontology, build_default_ontology
from .policy import params_from_json, params_to_json
from .stats import read_metrics_csv, summarize_runs, wilcoxon_signed_rank
from .trainer import TrainerConfig, evaluate, train
from .world import WorldConfig, make_corpus, read_jsonl, split_corpus, write_jsonl

log = logging.getLogger("editgrpo")

EXIT_CONFIG = 2

# Trainer fields owned by other sections of the run document.
_TRAINER_EXCLUDED = {"seed", "threads", "n_cases", "tau", "max_edits", "edit_mode", "reward_components", "tau_match"}
_TRAINER_KEYS = [f.name for f in fields(TrainerConfig) if f.name not in _TRAINER_EXCLUDED]
_WORLD_KEYS = [f.name for f in fields(WorldConfig) if f.name != "seed"]
_EDIT_KEYS = ["tau", "max_edits", "mode"]
_REWARD_KEYS = ["components", "tau_match"]
_TOP_KEYS = ["seed", "n_cases", "ontology_seed", "output_dir"]
SECTIONS = {"world": _WORLD_KEYS, "trainer": _TRAINER_KEYS, "edit": _EDIT_KEYS, "reward": _REWARD_KEYS}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seed: int = 0
    ontology_seed: int = 7
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        w = asdict(self.world)
        w.pop("seed")
        w["prevalence"] = list(w["prevalence"])
        t = asdict(self.trainer)
        return {
            "seed": self.seed,
            "n_cases": self.trainer.n_cases,
            "ontology_seed": self.ontology_seed,
            "output_dir": self.output_dir,
            "world": w,
            "trainer": {k: t[k] for k in _TRAINER_KEYS},
            "edit": {"tau": t["tau"], "max_edits": t["max_edits"], "mode": t["edit_mode"]},
            "reward": {"components": list(t["reward_components"]), "tau_match": t["tau_match"]},
        }


def _env_seed() -> int:
    raw = os.environ.get("EDITGRPO_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"EDITGRPO_SEED must be an integer, got {raw!r}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    value = _parse_value(raw)
    parts = key.strip().split(".")
    if len(parts) == 1:
        name = parts[0]
        if name in _TOP_KEYS:
            doc[name] = value
            return
        owners = [s for s, keys in SECTIONS.items() if name in keys]
        if len(owners) != 1:
            raise ConfigError(f"unknown or ambiguous key {name!r}; use section.key")
        parts = [owners[0], name]
    if len(parts) != 2 or parts[0] not in SECTIONS or parts[1] not in SECTIONS[parts[0]]:
        raise ConfigError(f"unknown config key {key!r}")
    doc.setdefault(parts[0], {})[parts[1]] = value


def _check_keys(where: str, d, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown keys in {where}: {extra}")


def build_run_config(doc: dict) -> RunConfig:
    """Validate a run document and bind it to typed configs; raises ConfigError."""
    _check_keys("config", doc, _TOP_KEYS + list(SECTIONS))
    for name, keys in SECTIONS.items():
        _check_keys(name, doc.get(name, {}), keys)
    seed = doc.get("seed")
    seed = _env_seed() if seed is None else seed
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    try:
        w = dict(doc.get("world", {}))
        if "prevalence" in w:
            w["prevalence"] = tuple(float(p) for p in w["prevalence"])
        world = WorldConfig(seed=seed, **w)
        t = dict(doc.get("trainer", {}))
        e = doc.get("edit", {})
        r = doc.get("reward", {})
        if "tau" in e:
            t["tau"] = e["tau"]
        if "max_edits" in e:
            t["max_edits"] = e["max_edits"]
        if "mode" in e:
            t["edit_mode"] = e["mode"]
        if "components" in r:
            t["reward_components"] = tuple(r["components"])
        if "tau_match" in r:
            t["tau_match"] = r["tau_match"]
        if "n_cases" in doc:
            t["n_cases"] = doc["n_cases"]
        trainer = TrainerConfig(seed=seed, **t)
        trainer.edit_config  # validates tau / max_edits
        trainer.reward_params()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        world, trainer, seed, int(doc.get("ontology_seed", 7)), str(doc.get("output_dir", "runs/default"))
    )


def load_run_config(path, overrides=(), threads: int | None = None) -> RunConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for a in overrides:
        apply_override(doc, a)
    rc = build_run_config(doc)
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        rc.trainer = replace(rc.trainer, threads=threads)
    return rc


def _write_resolved(rc: RunConfig, out: Path, onto: Ontology) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(rc.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "ontology.json").write_text(onto.to_json() + "\n")


def _header(rc: RunConfig) -> str:
    doc = rc.to_dict()
    # variant-dependent defaults, spelled out
    doc["resolved"] = {"advantage_norm": rc.trainer.adv_mode, "length_norm": rc.trainer.len_mode}
    return "# editgrpo " + __version__ + " " + json.dumps(doc, sort_keys=True)


def _ontology(rc: RunConfig) -> Ontology:
    return build_default_ontology(rc.ontology_seed)


def _ontology_arg(args) -> Ontology:
    """``--ontology FILE`` (a run's ontology.json) wins over ``--ontology-seed``."""
    if args.ontology:
        return Ontology.from_json(Path(args.ontology).read_text())
    return build_default_ontology(args.ontology_seed)


# -- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    rc = load_run_config(args.config, args.set, args.threads)
    out = Path(args.out or rc.output_dir)
    onto = _ontology(rc)
    _write_resolved(rc, out, onto)
    print(_header(rc))
    params_in = params_from_json(Path(args.checkpoint).read_text()) if args.checkpoint else None
    res = train(rc.trainer, rc.world, onto, params_in=params_in, out_dir=out, run_eval=not args.no_eval)
    if res.eval_summary is not None:
        print(json.dumps(res.eval_summary, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    onto = _ontology_arg(args)
    params = params_from_json(Path(args.checkpoint).read_text())
    cases = read_jsonl(args.corpus)
    if args.split != "all":
        train_cases, eval_cases = split_corpus(cases)
        cases = eval_cases if args.split == "eval" else train_cases
    summary, rows = evaluate(params, cases, onto, max_len=args.max_len)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.jsonl", "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        (out / "eval_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, sort_keys=True))
    return 0


def _text_arg(value: str) -> str:
    """A report given inline or as a path to a text file."""
    p = Path(value)
    if p.suffix in (".txt", ".md") or p.is_file():
        return p.read_text().strip()
    return value


def cmd_edit(args) -> int:
    onto = _ontology_arg(args)
    cfg = EditConfig(tau=args.tau, max_edits=args.max_edits, mode=ExtractionMode(args.mode))
    res = edit(_text_arg(args.x), _text_arg(args.y), cfg, onto, np.random.default_rng(args.seed))
    print(res.edited_text)
    for st in res.trace.steps:
        print(json.dumps(st.to_dict(), sort_keys=True))
    return 0


def _parse_taus(text: str) -> list[float]:
    try:
        taus = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"bad tau list {text!r}") from None
    if not taus or any(not 0.0 <= t <= 1.0 for t in taus):
        raise ConfigError("taus must be a non-empty list within [0, 1]")
    return taus


SWEEP_COLUMNS = (
    "tau",
    "seed",
    "composite",
    "macro_f1_14",
    "micro_f1_14",
    "macro_f1_5",
    "micro_f1_5",
    "no_finding_frac",
    "edits_a",
    "edits_b",
    "edits_c",
    "edits_d",
    "edits_e",
)


def cmd_sweep_tau(args) -> int:
    taus = _parse_taus(args.taus)
    base = load_run_config(args.config, args.set, args.threads)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [base.seed]
    out = Path(args.out or base.output_dir)
    onto = _ontology(base)
    _write_resolved(base, out, onto)
    print(_header(base))
    rows = []
    for tau in taus:
        hist_total = dict.fromkeys("abcde", 0)
        for seed in seeds:
            tcfg = replace(base.trainer, tau=tau, seed=seed)
            wcfg = replace(base.world, seed=seed)
            run_dir = out / f"tau{tau:g}" / f"seed{seed}"
            res = train(tcfg, wcfg, onto, out_dir=run_dir)
            hist = {k: int(sum(m[f"edits_{k}"] for m in res.metrics)) for k in "abcde"}
            for k in hist:
                hist_total[k] += hist[k]
            rows.append({"tau": tau, "seed": seed, **{k: res.eval_summary[k] for k in SWEEP_COLUMNS[2:8]}, **{f"edits_{k}": v for k, v in hist.items()}})
            print(f"tau={tau:g} seed={seed} composite={res.eval_summary['composite']:.4f} macro_f1_14={res.eval_summary['macro_f1_14']:.4f}")
        (out / f"tau{tau:g}" / "edit_histogram.json").write_text(json.dumps(hist_total, sort_keys=True))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in SWEEP_COLUMNS])
    return 0


def _metric_of(row: dict, metric: str) -> float:
    if "reward" in row and isinstance(row["reward"], dict):
        return float(row["reward"][metric])
    return float(row[metric])


def _keyed_values(path, metric: str) -> dict:
    out, seen = {}, {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            base = (row.get("step"), row["case_id"], row.get("origin"))
            n = seen.get(base, 0)
            seen[base] = n + 1
            out[base + (n,)] = _metric_of(row, metric)
    return out


def cmd_compare(args) -> int:
    a = _keyed_values(args.a, args.metric)
    b = _keyed_values(args.b, args.metric)
    keys = sorted(set(a) & set(b), key=repr)
    if not keys:
        print("error: no aligned samples between the two files", file=sys.stderr)
        return 1
    xa = [a[k] for k in keys]
    xb = [b[k] for k in keys]
    res = wilcoxon_signed_rank(xa, xb)
    print("metric,n_pairs,n_effective,mean_a,mean_b,W,p_two_sided")
    print(f"{args.metric},{len(keys)},{res.n_effective},{float(np.mean(xa))!r},{float(np.mean(xb))!r},{res.W!r},{res.p_two_sided!r}")
    return 0


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def render_svg(series: dict[str, list[tuple[float, float]]], title: str, width: int = 640, height: int = 400) -> str:
    """Minimal line chart; one polyline plus point markers per series."""
    pad = 50
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValueError("nothing to plot")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{x0:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">{x1:g}</text>',
        f'<text x="{pad - 5}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 5}" y="{pad}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    for k, (name, s) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<g class="series" data-name="{name}">')
        out.append(f'<polyline fill="none" stroke="{color}" points="{coords}"/>')
        for x, y in s:
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2" fill="{color}"/>')
        out.append("</g>")
        out.append(f'<text x="{width - pad + 5}" y="{pad + 14 * k}" font-size="10" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args) -> int:
    series: dict[str, list[tuple[float, float]]] = {}
    if args.aggregate:
        summary = summarize_runs(args.csv, metrics=(args.metric,))
        for row in summary["rows"]:
            series.setdefault(row["variant"], []).append((row["step"], row[f"{args.metric}_median"]))
    else:
        for path in args.csv:
            header, rows = read_metrics_csv(path)
            if args.metric not in header:
                print(f"error: {path} has no column {args.metric!r}", file=sys.stderr)
                return 1
            name = rows[0]["variant"] if rows and len(args.csv) == 1 else Path(path).parent.name or Path(path).stem
            series[name] = [(float(r["step"]), float(r[args.metric])) for r in rows]
    Path(args.out).write_text(render_svg(series, args.metric))
    return 0


def cmd_gen_world(args) -> int:
    if args.config:
        rc = load_run_config(args.config, args.set)
    else:
        doc: dict = {}
        for a in args.set:
            apply_override(doc, a)
        rc = build_run_config(doc)
    n = args.n if args.n is not None else rc.trainer.n_cases
    corpus = make_corpus(rc.world, _ontology(rc), n)
    write_jsonl(corpus, args.out)
    n_train = sum(c.is_train for c in corpus)
    print(f"wrote {n} cases ({n_train} train, {n - n_train} eval) to {args.out}")
    return 0


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="editgrpo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(sp, config_required=True):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--threads", type=int, default=None)

    sp = sub.add_parser("train", help="SFT and/or RL run")
    run_opts(sp)
    sp.add_argument("--out", help="output directory (overrides output_dir)")
    sp.add_argument("--checkpoint", help="initial parameter JSON")
    sp.add_argument("--no-eval", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="greedy evaluation of a checkpoint on a corpus")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--corpus", required=True, help="JSONL corpus from gen-world")
    sp.add_argument("--split", choices=("eval", "train", "all"), default="eval")
    sp.add_argument("--max-len", type=int, default=6)
    sp.add_argument("--ontology-seed", type=int, default=7)
    sp.add_argument("--ontology", help="ontology JSON (e.g. a run's ontology.json)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("edit", help="edit one report toward a reference and print the trace")
    sp.add_argument("--x", required=True, help="generated report (text or file)")
    sp.add_argument("--y", required=True, help="reference report (text or file)")
    sp.add_argument("--tau", type=float, default=0.6)
    sp.add_argument("--max-edits", type=int, default=None)
    sp.add_argument("--mode", choices=[m.value for m in ExtractionMode], default="embedding")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ontology-seed", type=int, default=7)
    sp.add_argument("--ontology", help="ontology JSON (e.g. a run's ontology.json)")
    sp.set_defaults(func=cmd_edit)

    sp = sub.add_parser("sweep-tau", help="one EditGRPO run per tau")
    run_opts(sp)
    sp.add_argument("--taus", default="0,0.3,0.6,0.9")
    sp.add_argument("--seeds", default=None, help="comma list; default: the config seed")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep_tau)

    sp = sub.add_parser("compare", help="paired Wilcoxon test over two per-sample JSONL files")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--metric", default="composite")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("plot", help="SVG line chart of a metric column against step")
    sp.add_argument("--csv", action="append", required=True)
    sp.add_argument("--metric", default="mean_reward")
    sp.add_argument("--aggregate", action="store_true", help="plot per-variant medians across the CSVs")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("gen-world", help="write a synthetic corpus as JSONL")
    run_opts(sp, config_required=False)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_world)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
