"""Command-line client.

By default every command runs against an in-process service backend (same
code the HTTP handlers call); `--server URL` switches to a running gradroll
service over HTTP, where long operations are submitted as jobs and polled.

Exit codes are stable API: 0 ok, 2 config error, 3 artifact mismatch,
4 unknown vocabulary name, 5 runtime failure.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path
from typing import Optional

import click

from .errors import GradrollError
from .runconfig import PRESETS, load_config, preset_config
from .service import backend

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_VOCAB = 4
EXIT_RUNTIME = 5

_EXIT_BY_KIND = {"config": EXIT_CONFIG, "artifact": EXIT_ARTIFACT,
                 "vocab": EXIT_VOCAB, "runtime": EXIT_RUNTIME}


def _fail(kind: str, message: str):
    click.echo(f"error ({kind}): {message}", err=True)
    sys.exit(_EXIT_BY_KIND.get(kind, EXIT_RUNTIME))


def _run(fn, *args, **kwargs) -> dict:
    try:
        return fn(*args, **kwargs)
    except GradrollError as exc:
        kind, _ = backend.classify_error(exc)
        _fail(kind, str(exc))
    except FileNotFoundError as exc:
        _fail("config", str(exc))


class RemoteClient:
    """Thin httpx wrapper for `--server` mode."""

    def __init__(self, base_url: str):
        import httpx
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(base_url=self.base_url, timeout=60.0)

    def _check(self, resp) -> dict:
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", {})
            except Exception:
                detail = {}
            if isinstance(detail, dict) and "error_kind" in detail:
                _fail(detail["error_kind"], detail.get("message", resp.text))
            _fail("config" if resp.status_code == 422 else "runtime", resp.text)
        return resp.json()

    def call(self, path: str, payload: dict) -> dict:
        return self._check(self._client.post(path, json=payload))

    def get(self, path: str, params: Optional[dict] = None) -> dict:
        return self._check(self._client.get(path, params=params))

    def job(self, path: str, payload: dict, poll: float = 0.5) -> dict:
        job_id = self.call(path, payload)["job_id"]
        while True:
            state = self.get(f"/jobs/{job_id}")
            if state["state"] == "done":
                return state["result"]
            if state["state"] == "error":
                _fail(state.get("error_kind") or "runtime",
                      state.get("error") or "job failed")
            time.sleep(poll)


def _parse_sets(pairs: tuple[str, ...]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            _fail("config", f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key] = value
    return overrides


def _load_config_doc(path: str) -> dict:
    return _run(load_config, path).model_dump()


@click.group()
@click.option("--server", envvar="GRADROLL_SERVER", default=None,
              help="URL of a running gradroll service; default is in-process.")
@click.pass_context
def cli(ctx, server):
    ctx.obj = RemoteClient(server) if server else None


def _emit(result: dict, as_json: bool, summary_lines: list[str]):
    if as_json:
        click.echo(json.dumps(result, indent=2))
    else:
        for line in summary_lines:
            click.echo(line)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def train(remote, config_path, sets, as_json):
    """Train a model; writes checkpoint, ledger, vocab, step log, metrics."""
    doc = _load_config_doc(config_path)
    overrides = _parse_sets(sets)
    if remote:
        result = remote.job("/jobs/train", {"config": doc, "overrides": overrides})
    else:
        result = _run(backend.do_train, doc, overrides)
    lines = [f"run: {result['run_dir']} (hash {result['config_hash']})",
             f"train triples: {result['n_train']}, entities: "
             f"{result['n_entities']}, relations: {result['n_relations']}"]
    if "metrics" in result:
        m = result["metrics"]
        lines.append(f"test MRR {m['mrr']:.2f}  Hits@1 {m['hits1']:.2f}  "
                     f"Hits@10 {m['hits10']:.2f}  ({m['n_queries']} queries)")
    _emit(result, as_json, lines)


@cli.command()
@click.argument("query")
@click.option("--run", "run_dir", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--mode", default="gr-all", show_default=True)
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--ledger", "ledger_path", type=click.Path(), default=None)
@click.option("--dot", "write_dot", is_flag=True, help="Also write a DOT graph.")
@click.option("--include-self", is_flag=True)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def explain(remote, query, run_dir, config_path, sets, mode, checkpoint,
            ledger_path, write_dot, include_self, out_dir, as_json):
    """Explain a prediction for QUERY of the form "subject relation ?"."""
    parts = query.split()
    if len(parts) != 3:
        _fail("config", f'query must be "subject relation ?" (or an object '
                        f'name), got {query!r}')
    if run_dir is None and config_path is None:
        _fail("config", "explain needs --run or --config")
    payload = {
        "run_dir": run_dir,
        "config": _load_config_doc(config_path) if config_path else None,
        "overrides": _parse_sets(sets),
        "subject": parts[0], "relation": parts[1],
        "object": None if parts[2] == "?" else parts[2],
        "mode": mode, "include_self": include_self, "write_dot": write_dot,
        "out_dir": out_dir, "checkpoint": checkpoint, "ledger": ledger_path,
    }
    if remote:
        result = remote.call("/explain", payload)
    else:
        result = _run(
            backend.do_explain, run_dir=payload["run_dir"],
            config_doc=payload["config"], overrides=payload["overrides"],
            subject=payload["subject"], relation=payload["relation"],
            obj=payload["object"], mode=mode, include_self=include_self,
            write_dot=write_dot, out_dir=out_dir, checkpoint=checkpoint,
            ledger_path=ledger_path)
    t = result["target"]
    lines = [f"target: {' '.join(t['names'])}  (base prob "
             f"{result['base_prob']:.4f}, mode {result['mode']})",
             f"selected {len(result['selected'])} of "
             f"{len(result['scores'])} candidates"]
    for row in result["scores"][:10]:
        lines.append(f"  {row['delta']:+.6f}  {' '.join(row['names'])}")
    lines.append(f"written: {result['files']}")
    _emit(result, as_json, lines)


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--run", "run_dir", type=click.Path(), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--selector", default="gr-1", show_default=True,
              help="gr-<k>, gr-all, gr-o-<k>, nh-<k>, nh-all, or none.")
@click.option("--sample-size", type=int, default=None)
@click.option("--eval-seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--dry-run", is_flag=True, help="Remove nothing (S = empty).")
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def roar(remote, config_path, run_dir, sets, selector, sample_size, eval_seed,
         workers, dry_run, as_json):
    """Remove-and-retrain faithfulness evaluation."""
    if run_dir is None and config_path is None:
        _fail("config", "roar needs --run or --config")
    doc = _load_config_doc(config_path) if config_path else None
    payload = {"config": doc, "overrides": _parse_sets(sets),
               "run_dir": run_dir, "selector": selector,
               "sample_size": sample_size, "eval_seed": eval_seed,
               "workers": workers, "dry_run": dry_run}
    if remote:
        result = remote.job("/jobs/roar", payload)
    else:
        result = _run(backend.do_roar, doc, payload["overrides"], run_dir,
                      selector, sample_size, eval_seed, workers, dry_run)
    agg = result["aggregates"]
    _emit(result, as_json, [
        f"selector {result['selector']}: PD% "
        f"{agg['pd_pct'] if agg['pd_pct'] is not None else 'n/a'}, TC% "
        f"{agg['tc_pct'] if agg['tc_pct'] is not None else 'n/a'} over "
        f"{agg['n_records']} queries ({agg['n_diverged']} diverged)",
        f"written: {result['files']}",
    ])


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--run", "run_dir", type=click.Path(), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--sample-size", type=int, default=None)
@click.option("--eval-seed", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def correlate(remote, config_path, run_dir, sets, sample_size, eval_seed,
              as_json):
    """Correlate rolled-back probability estimates with true retrains."""
    if run_dir is None and config_path is None:
        _fail("config", "correlate needs --run or --config")
    doc = _load_config_doc(config_path) if config_path else None
    payload = {"config": doc, "overrides": _parse_sets(sets),
               "run_dir": run_dir, "sample_size": sample_size,
               "eval_seed": eval_seed}
    if remote:
        result = remote.job("/jobs/correlate", payload)
    else:
        result = _run(backend.do_correlate, doc, payload["overrides"], run_dir,
                      sample_size, eval_seed)
    r = result["pearson_r"]
    _emit(result, as_json, [
        f"pearson r: {'undefined' if r is None else f'{r:.4f}'} over "
        f"{result['n_pairs']} pairs ({result['n_skipped']} skipped)",
        f"written: {result['files']}",
    ])


@cli.command("verify-theory")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--trials", type=int, default=None)
@click.option("--eval-seed", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def verify_theory(remote, config_path, sets, trials, eval_seed, as_json):
    """Check the rollback error against the SGD stability bound."""
    doc = _load_config_doc(config_path)
    payload = {"config": doc, "overrides": _parse_sets(sets),
               "trials": trials, "eval_seed": eval_seed}
    if remote:
        result = remote.job("/jobs/verify-theory", payload)
    else:
        result = _run(backend.do_verify_theory, doc, payload["overrides"],
                      trials, eval_seed)
    _emit(result, as_json, [
        f"mean rollback error {result['mean_rollback_error']:.6f} vs bound "
        f"{result['bound']:.6f} -> {'HOLDS' if result['holds'] else 'VIOLATED'}",
        f"baseline (no rollback) error {result['mean_baseline_error']:.6f}",
        f"note: {result['note']}",
    ])


@cli.command()
@click.option("--run", "run_dir", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["test", "valid"]))
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def metrics(remote, run_dir, config_path, sets, split, as_json):
    """Filtered ranking metrics of a trained run."""
    if run_dir is None and config_path is None:
        _fail("config", "metrics needs --run or --config")
    doc = _load_config_doc(config_path) if config_path else None
    payload = {"run_dir": run_dir, "config": doc,
               "overrides": _parse_sets(sets), "split": split}
    if remote:
        result = remote.call("/metrics", payload)
    else:
        result = _run(backend.do_metrics, run_dir=run_dir, config_doc=doc,
                      overrides=payload["overrides"], split=split)
    _emit(result, as_json, [
        f"{split}: MRR {result['mrr']:.2f}  Hits@1 {result['hits1']:.2f}  "
        f"Hits@10 {result['hits10']:.2f}  ({result['n_queries']} queries)"])


@cli.command("inspect-ledger")
@click.argument("path", type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def inspect_ledger(remote, path, as_json):
    """Print ledger header fields and size accounting."""
    if remote:
        result = remote.get("/ledger/info", params={"path": path})
    else:
        result = _run(backend.do_ledger_info, path)
    _emit(result, as_json, [
        f"ledger: {result['n_triples']} triples, h={result['h']}, "
        f"config hash {result['config_hash']}",
        f"bytes: header {result['header_bytes']} + payload "
        f"{result['payload_bytes']} (expected {result['expected_payload_bytes']})",
    ])


@cli.command("convert-movielens")
@click.argument("ml_dir", type=click.Path())
@click.argument("out_dir", type=click.Path())
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def convert_movielens(remote, ml_dir, out_dir, as_json):
    """Convert a MovieLens 100k directory into triple files."""
    if remote:
        result = remote.call("/convert/movielens",
                             {"ml_dir": ml_dir, "out_dir": out_dir})
    else:
        result = _run(backend.do_convert_movielens, ml_dir, out_dir)
    _emit(result, as_json, [
        f"wrote {result['train']} train / {result['valid']} valid / "
        f"{result['test']} test triples to {result['out_dir']}"])


@cli.command("init-config")
@click.option("--preset", required=True, type=click.Choice(sorted(PRESETS)))
@click.option("--train", "train_path", required=True, type=click.Path())
@click.option("--valid", "valid_path", type=click.Path(), default=None)
@click.option("--test", "test_path", type=click.Path(), default=None)
@click.option("--output-dir", default="runs", show_default=True)
@click.option("-o", "out", type=click.Path(), default=None,
              help="Write the config JSON here instead of stdout.")
def init_config(preset, train_path, valid_path, test_path, output_dir, out):
    """Emit a run config seeded from a named preset."""
    config = _run(preset_config, preset, train_path, valid_path, test_path,
                  output_dir)
    text = json.dumps(config.model_dump(), indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    uvicorn.run("gradroll.service.app:app", host=host, port=port)


def main():
    cli(prog_name="gradroll")


if __name__ == "__main__":
    main()
