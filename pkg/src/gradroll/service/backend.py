"""Service-layer operations shared by the HTTP handlers and the CLI's
in-process mode. Everything here speaks plain dicts and paths; pydantic
validation happens at the edges.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional

from .. import evaluation, explain as explain_mod, ledger as ledger_mod, model
from ..errors import (ArtifactMismatchError, ConfigError, ParseError,
                      VocabError)
from ..movielens import convert_movielens
from ..runconfig import RunConfig, apply_overrides, config_from_dict
from ..runs import RunArtifacts, load_run, run_dir_for, run_train
from ..triples import Triple


def classify_error(exc: Exception) -> tuple[str, int]:
    """(error kind, HTTP status). Kinds map onto the CLI's exit codes."""
    if isinstance(exc, (ParseError, ConfigError, FileNotFoundError)):
        return "config", 400
    if isinstance(exc, VocabError):
        return "vocab", 404
    if isinstance(exc, ArtifactMismatchError):
        return "artifact", 409
    return "runtime", 500


def resolve_config(config_doc: Optional[dict], overrides: Optional[dict[str, str]]
                   ) -> RunConfig:
    if config_doc is None:
        raise ConfigError("a run config is required")
    config = config_from_dict(config_doc)
    if overrides:
        config = apply_overrides(config, overrides)
    return config


def _artifacts_for(config_doc: Optional[dict], overrides: Optional[dict],
                   run_dir: Optional[str]) -> RunArtifacts:
    if run_dir:
        return load_run(run_dir)
    config = resolve_config(config_doc, overrides)
    target = run_dir_for(config)
    if not target.exists():
        raise ArtifactMismatchError(
            f"no trained artifacts at {target}; run train first")
    return load_run(target)


def do_train(config_doc: dict, overrides: Optional[dict[str, str]] = None) -> dict:
    config = resolve_config(config_doc, overrides)
    return run_train(config)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name) or "x"


def do_explain(run_dir: Optional[str] = None, config_doc: Optional[dict] = None,
               overrides: Optional[dict] = None, subject: str = "",
               relation: str = "", obj: Optional[str] = None,
               mode: str = "gr-all", include_self: bool = False,
               write_dot: bool = False, out_dir: Optional[str] = None,
               checkpoint: Optional[str] = None,
               ledger_path: Optional[str] = None) -> dict:
    """Explain the top prediction (or an explicit object) for one query.

    `checkpoint`/`ledger_path` override the run directory's artifact pair;
    the pairing is still validated by config hash.
    """
    art = _artifacts_for(config_doc, overrides, run_dir)
    params, ledger = art.params, art.ledger
    if checkpoint:
        params, ckpt_hash = model.load_checkpoint(checkpoint)
    else:
        ckpt_hash = art.config.config_hash()
    if ledger_path:
        ledger = ledger_mod.load_ledger(ledger_path, art.train_store,
                                        expected_hash=ckpt_hash)
    elif checkpoint:
        if ledger.config_hash != ckpt_hash:
            raise ArtifactMismatchError(
                "checkpoint hash does not match the run's ledger")

    s = art.vocab.entity_id(subject)
    r = art.vocab.relation_id(relation)
    if obj is None or obj == "?":
        o = model.predict_top(params, s, r, art.exclude_ids())
    else:
        o = art.vocab.entity_id(obj)
    d = Triple(s, r, o)
    expl = explain_mod.explain(params, ledger, art.train_store, art.index, d,
                               mode, include_self=include_self)
    doc = explain_mod.explanation_to_dict(expl, art.train_store, art.vocab)
    doc["prob_evaluations"] = expl.prob_evaluations

    out = Path(out_dir) if out_dir else art.run_dir / "explanations"
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{_slug(subject)}__{_slug(relation)}__{_slug(art.vocab.entities[o])}"
    json_path = out / f"{stem}.json"
    explain_mod.write_explanation(expl, art.train_store, art.vocab, json_path,
                                  "json")
    files = {"json": str(json_path)}
    if write_dot:
        dot_path = out / f"{stem}.dot"
        explain_mod.write_explanation(expl, art.train_store, art.vocab,
                                      dot_path, "dot")
        files["dot"] = str(dot_path)
    doc["files"] = files
    return doc


def do_metrics(run_dir: Optional[str] = None, config_doc: Optional[dict] = None,
               overrides: Optional[dict] = None, split: str = "test") -> dict:
    art = _artifacts_for(config_doc, overrides, run_dir)
    target = art.test_store if split == "test" else art.valid_store
    if target is None:
        raise ConfigError(f"run has no {split} split")
    metrics = model.rank_metrics(art.params, target, art.filter_stores())
    return {"mrr": metrics.mrr, "hits1": metrics.hits1,
            "hits10": metrics.hits10, "n_queries": metrics.n_queries,
            "split": split}


def do_roar(config_doc: Optional[dict] = None, overrides: Optional[dict] = None,
            run_dir: Optional[str] = None, selector: str = "gr-1",
            sample_size: Optional[int] = None, eval_seed: Optional[int] = None,
            workers: Optional[int] = None, dry_run: bool = False) -> dict:
    art = _artifacts_for(config_doc, overrides, run_dir)
    ev = art.config.eval
    sel = evaluation.Selector.parse("none" if dry_run else selector)
    report = evaluation.roar(
        art.params, art.ledger, art.config.to_train_config(), art.train_store,
        art.vocab.n_entities, art.vocab.n_relations, art.test_queries(), sel,
        sample_size=sample_size if sample_size is not None else ev.sample_size,
        eval_seed=eval_seed if eval_seed is not None else ev.eval_seed,
        exclude=art.exclude_ids(),
        workers=workers if workers is not None else ev.workers,
        index=art.index, sampling_excluded=art.sampling_excluded_ids())
    csv_path = art.run_dir / f"roar_{sel.label}.csv"
    json_path = art.run_dir / f"roar_{sel.label}.json"
    manifest_path = art.run_dir / f"roar_{sel.label}_removals.json"
    evaluation.write_roar_csv(report, csv_path)
    evaluation.write_roar_json(report, json_path)
    _write_removal_manifest(report, art.config.hash_hex(), manifest_path)
    return {"selector": sel.label, "aggregates": report.aggregates(),
            "files": {"csv": str(csv_path), "json": str(json_path),
                      "manifest": str(manifest_path)}}


def _write_removal_manifest(report, config_hash_hex: str, path) -> None:
    """Audit trail: one entry per retrain with its removed ids and the config
    hash the retrain shares with the main model."""
    entries = [{"query_s": r.query_s, "query_r": r.query_r,
                "predicted_o": r.predicted_o, "removed_ids": r.removed_ids,
                "config_hash": config_hash_hex, "diverged": r.diverged}
               for r in report.records]
    Path(path).write_text(json.dumps(entries, indent=2) + "\n",
                          encoding="utf-8")


def do_correlate(config_doc: Optional[dict] = None,
                 overrides: Optional[dict] = None,
                 run_dir: Optional[str] = None,
                 sample_size: Optional[int] = None,
                 eval_seed: Optional[int] = None) -> dict:
    art = _artifacts_for(config_doc, overrides, run_dir)
    ev = art.config.eval
    report = evaluation.approximation_correlation(
        art.params, art.ledger, art.config.to_train_config(), art.train_store,
        art.vocab.n_entities, art.vocab.n_relations, art.test_queries(),
        sample_size=sample_size if sample_size is not None else ev.sample_size,
        eval_seed=eval_seed if eval_seed is not None else ev.eval_seed,
        exclude=art.exclude_ids(), index=art.index,
        sampling_excluded=art.sampling_excluded_ids())
    csv_path = art.run_dir / "correlation.csv"
    json_path = art.run_dir / "correlation.json"
    evaluation.write_correlation_csv(report, csv_path)
    evaluation.write_correlation_json(report, json_path)
    return {"pearson_r": report.pearson_r, "n_pairs": len(report.pairs),
            "n_skipped": report.n_skipped,
            "files": {"csv": str(csv_path), "json": str(json_path)}}


def do_verify_theory(config_doc: dict, overrides: Optional[dict] = None,
                     trials: Optional[int] = None,
                     eval_seed: Optional[int] = None) -> dict:
    config = resolve_config(config_doc, overrides)
    if config.dataset.filter_entities_during_sampling:
        raise ConfigError("the theorem check does not support "
                          "filter_entities_during_sampling")
    train_cfg = config.to_train_config()
    from ..runs import load_dataset
    train_store, _, _, vocab = load_dataset(config)
    report = evaluation.verify_approximation_theorem(
        train_cfg, train_store, vocab.n_entities, vocab.n_relations,
        trials=trials if trials is not None else config.eval.trials,
        eval_seed=eval_seed if eval_seed is not None else config.eval.eval_seed,
        snapshot_every=config.eval.snapshot_every)
    out = run_dir_for(config)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "theorem.json"
    evaluation.write_theorem_json(report, path)
    doc = evaluation.theorem_report_to_dict(report)
    doc["files"] = {"json": str(path)}
    return doc


def do_ledger_info(path: str) -> dict:
    return ledger_mod.ledger_info(path)


def do_convert_movielens(ml_dir: str, out_dir: str) -> dict:
    return convert_movielens(ml_dir, out_dir)
