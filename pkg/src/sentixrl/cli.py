"""Command-line interface.

Subcommands: ingest, map, run, mix, report, simulate. Exit codes: 0 on
success, 1 for usage errors, 2 for data errors, 3 for backend errors.
Every command validates its inputs before touching any output path, and
all outputs are deterministic for deterministic backends, so re-running a
command with identical arguments overwrites its outputs byte-for-byte.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import random
import sys
from collections.abc import Sequence
from pathlib import Path

import click

from .backend import API_KEY_ENV, BASE_URL_ENV, BackendError, HttpBackend, MockBackend
from .consensus import SimParams, closed_form_consensus, simulate_consensus
from .corpus import CORPUS_SCHEMA_HELP, Conversation, Corpus, load_corpus, save_corpus
from .errors import SentixrlError
from .labels import (
    MappingConfig,
    default_mapping_config,
    load_mapping_config,
    map_label,
    validate_mapping,
)
from .metrics import AbstentionMode, EmptyMatrix, MetricsReport, compute_metrics, confusion
from .mixing import MixSpec, Strategy, equal_mix, histogram, random_mix
from .negotiation import (
    DEFAULT_HISTORY_WINDOW,
    DEFAULT_MAX_ROUNDS,
    LatencySummary,
    NegotiationConfig,
    Policy,
    evaluate_corpus,
    load_trace_file,
)
from .prompts import TemplateSet

logger = logging.getLogger("sentixrl")

REPORT_SCHEMA = "sentixrl.report.v1"
HISTOGRAM_SCHEMA = "sentixrl.histogram.v1"

_POLICIES = {
    "approval": Policy.DISCRIMINATOR_APPROVAL,
    "agreement": Policy.CONSECUTIVE_AGREEMENT,
}


def _require_file(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise SentixrlError(f"{what} not found: {path}")
    return path


def _load_mapping(path: str | None) -> MappingConfig:
    if path is None:
        return default_mapping_config()
    return load_mapping_config(_require_file(path, "mapping config"))


def _pick_seed(seed: int | None) -> int:
    if seed is None:
        seed = random.SystemRandom().randrange(2**32)
        logger.info("no --seed given; auto-selected seed %d", seed)
    return seed


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(["debug", "info", "warning", "error"]),
    default="warning",
    show_default=True,
    help="Verbosity of diagnostics on standard error.",
)
def cli(log_level: str) -> None:
    """Emotion recognition pipeline: ingest corpora, unify labels, run the
    negotiation loop against a backend, build mixes, and compute reports."""
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.option("--corpus", "corpus_path", type=click.Path(), help="Corpus file to validate.")
@click.option("--mapping", "mapping_path", type=click.Path(), help="Mapping config supplying the label domain.")
@click.option("--schema", "show_schema", is_flag=True, help="Print the corpus file schema and exit.")
def ingest(corpus_path: str | None, mapping_path: str | None, show_schema: bool) -> None:
    """Validate a corpus file and print summary statistics."""
    if show_schema:
        click.echo(CORPUS_SCHEMA_HELP, nl=False)
        return
    if corpus_path is None:
        raise click.UsageError("pass --corpus or --schema")
    cfg = _load_mapping(mapping_path)
    corpus = load_corpus(_require_file(corpus_path, "corpus file"), domain=cfg.target)
    utterances = list(corpus.utterances())
    labeled = [u for u in utterances if u.gold_label is not None]
    click.echo(f"corpus: {corpus.name}")
    click.echo(f"conversations: {len(corpus)}")
    click.echo(f"utterances: {len(utterances)} ({len(labeled)} labeled)")
    if labeled:
        counts = {label: 0 for label in cfg.target}
        for utt in labeled:
            counts[utt.gold_label] += 1
        for label, count in counts.items():
            click.echo(f"  {label}: {count}")


@cli.command("map")
@click.option("--corpus", "corpus_path", type=click.Path(), required=True, help="Source corpus file.")
@click.option("--mapping", "mapping_path", type=click.Path(), required=True, help="Mapping config to apply.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Where to write the remapped corpus.")
@click.option("--report-out", "report_path", type=click.Path(), help="Optional mapping report (JSON).")
def map_cmd(corpus_path: str, mapping_path: str, out_path: str, report_path: str | None) -> None:
    """Rewrite a corpus's gold labels into the target domain."""
    cfg = _load_mapping(mapping_path)
    corpus = load_corpus(_require_file(corpus_path, "corpus file"), domain=None)
    observed: dict[str, int] = {}
    for utt in corpus.utterances():
        if utt.gold_label is not None:
            observed[utt.gold_label] = observed.get(utt.gold_label, 0) + 1
    report = validate_mapping(cfg, observed)
    if report_path:
        Path(report_path).write_text(
            json.dumps(
                {
                    "unmapped": report.unmapped,
                    "unused_aliases": list(report.unused_aliases),
                    "counts": report.counts,
                },
                ensure_ascii=False,
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
    if not report.ok:
        raise SentixrlError(
            "unmapped labels: "
            + ", ".join(f"{label} (x{n})" for label, n in report.unmapped.items())
        )

    conversations = []
    for conv in corpus:
        utterances = tuple(
            dataclasses.replace(
                utt,
                gold_label=map_label(utt.gold_label, cfg) if utt.gold_label else None,
            )
            for utt in conv
        )
        conversations.append(Conversation(id=conv.id, utterances=utterances))
    mapped = Corpus(name=corpus.name, conversations=tuple(conversations), domain=cfg.target)
    save_corpus(mapped, out_path)
    click.echo(f"wrote {out_path} ({report.total_mapped()} labeled utterances)")


def _format_metrics_table(
    name: str, scored: int, skipped: int, abstained: int,
    reports: dict[str, MetricsReport | None], latency: LatencySummary | None,
) -> str:
    lines = [f"{name}: {scored} scored, {skipped} skipped, {abstained} abstained"]
    lines.append(f"{'mode':<16} {'accuracy':>9} {'macro-f1':>9} {'weighted-f1':>12}")
    for mode, report in reports.items():
        if report is None:
            lines.append(f"{mode:<16} {'-':>9} {'-':>9} {'-':>12}")
            continue
        lines.append(
            f"{mode:<16} {report.accuracy:>9.4f} {report.macro_f1:>9.4f} "
            f"{report.weighted_f1:>12.4f}"
        )
    primary = next((r for r in reports.values() if r is not None), None)
    if primary is not None:
        lines.append("")
        lines.append(f"per-class ({primary.abstention_mode.value})")
        lines.append(f"{'label':<14} {'precision':>9} {'recall':>9} {'f1':>9} {'support':>8}")
        for c in primary.per_class:
            lines.append(
                f"{c.label:<14} {c.precision:>9.4f} {c.recall:>9.4f} "
                f"{c.f1:>9.4f} {c.support:>8}"
            )
    if latency is not None and latency.count:
        lines.append("")
        lines.append(
            f"latency: mean {latency.mean:.3f}s  p50 {latency.p50:.3f}s  "
            f"p95 {latency.p95:.3f}s  ({latency.count} utterances)"
        )
    return "\n".join(lines)


def _metrics_payload(
    corpus_name: str,
    pairs: list[tuple[str, str | None]],
    domain,
    scored: int, skipped: int, abstained: int,
    latency: LatencySummary | None,
) -> tuple[dict, dict[str, MetricsReport | None]]:
    golds = [g for g, _ in pairs]
    preds = [p for _, p in pairs]
    cm = confusion(preds, golds, domain)
    reports: dict[str, MetricsReport | None] = {}
    for mode in (AbstentionMode.COUNT_AS_WRONG, AbstentionMode.EXCLUDE):
        try:
            reports[mode.value] = compute_metrics(cm, mode)
        except EmptyMatrix:
            reports[mode.value] = None
    payload = {
        "schema": REPORT_SCHEMA,
        "corpus": corpus_name,
        "scored": scored,
        "skipped": skipped,
        "abstentions": abstained,
        "modes": {
            mode: (report.to_dict() if report else None)
            for mode, report in reports.items()
        },
        "latency": latency.to_dict() if latency else None,
    }
    return payload, reports


@cli.command()
@click.option("--corpus", "corpus_path", type=click.Path(), required=True, help="Labeled corpus to evaluate.")
@click.option("--mapping", "mapping_path", type=click.Path(), help="Mapping config supplying the label domain.")
@click.option("--mock", "mock_path", type=click.Path(), help="Mock backend script (TOML).")
@click.option("--backend-url", help=f"Chat-completions base URL (or ${BASE_URL_ENV}).")
@click.option("--model", default="default", show_default=True, help="Model name sent to the network backend.")
@click.option("--max-rounds", default=DEFAULT_MAX_ROUNDS, show_default=True, help="Round budget per utterance.")
@click.option("--policy", type=click.Choice(sorted(_POLICIES)), default="approval", show_default=True, help="Termination policy for the negotiation loop.")
@click.option("--history-window", "history_m", default=DEFAULT_HISTORY_WINDOW, show_default=True, help="How many preceding turns to include as context.")
@click.option("--concurrency", default=1, show_default=True, help="Concurrent utterance workers.")
@click.option("--deduction", type=click.Choice(["live", "corpus", "off"]), default="live", show_default=True, help="Where scene/person/relation notes come from.")
@click.option("--templates", "templates_dir", type=click.Path(), help="Directory with custom prompt templates.")
@click.option("--temperature", default=0.0, show_default=True, help="Sampling temperature for backend calls.")
@click.option("--max-tokens", default=256, show_default=True, help="Completion token cap per call.")
@click.option("--extract", "extraction", type=click.Choice(["last", "first"]), default="last", show_default=True, help="Which label occurrence wins when a reply names several.")
@click.option("--substring-labels", is_flag=True, help="Match labels as substrings (for unsegmented scripts).")
@click.option("--trace-out", "trace_path", type=click.Path(), help="Write the per-utterance trace file (JSONL).")
@click.option("--report-out", "report_path", type=click.Path(), help="Write the metrics report (JSON).")
@click.option("--seed", type=int, help="Run seed; auto-selected and logged when omitted.")
def run(
    corpus_path: str,
    mapping_path: str | None,
    mock_path: str | None,
    backend_url: str | None,
    model: str,
    max_rounds: int,
    policy: str,
    history_m: int,
    concurrency: int,
    deduction: str,
    templates_dir: str | None,
    temperature: float,
    max_tokens: int,
    extraction: str,
    substring_labels: bool,
    trace_path: str | None,
    report_path: str | None,
    seed: int | None,
) -> None:
    """Run the negotiation loop over every labeled utterance of a corpus."""
    _pick_seed(seed)
    mapping = _load_mapping(mapping_path)
    corpus = load_corpus(_require_file(corpus_path, "corpus file"), domain=mapping.target)

    if backend_url is None and mock_path is None:
        backend_url = os.environ.get(BASE_URL_ENV) or None
    if (mock_path is not None) == (backend_url is not None):
        raise click.UsageError(
            f"select exactly one backend: --mock or --backend-url/${BASE_URL_ENV}"
        )
    if mock_path is not None:
        backend = MockBackend.from_file(_require_file(mock_path, "mock script"))
    else:
        backend = HttpBackend(
            base_url=backend_url, model=model, api_key=os.environ.get(API_KEY_ENV)
        )

    templates = TemplateSet.from_dir(templates_dir) if templates_dir else TemplateSet.default()
    cfg = NegotiationConfig(
        domain=mapping.target,
        max_rounds=max_rounds,
        policy=_POLICIES[policy],
        templates=templates,
        deduction_enabled=deduction != "off",
        temperature=temperature,
        max_tokens=max_tokens,
        extraction_strategy=extraction,
        substring_labels=substring_labels,
    )
    predictions = evaluate_corpus(
        corpus,
        cfg,
        backend,
        concurrency=concurrency,
        history_m=history_m,
        deduction_source=deduction if deduction != "off" else "off",
    )

    if trace_path:
        predictions.save(trace_path)
        logger.info("trace written to %s", trace_path)

    latency = predictions.latency_summary()
    payload, reports = _metrics_payload(
        corpus.name,
        predictions.pairs(),
        mapping.target,
        scored=len(predictions.entries) - predictions.skipped,
        skipped=predictions.skipped,
        abstained=predictions.abstentions,
        latency=latency,
    )
    if report_path:
        Path(report_path).write_text(
            json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    click.echo(
        _format_metrics_table(
            corpus.name,
            scored=len(predictions.entries) - predictions.skipped,
            skipped=predictions.skipped,
            abstained=predictions.abstentions,
            reports=reports,
            latency=latency,
        )
    )


@cli.command()
@click.option("--trace", "trace_path", type=click.Path(), required=True, help="Trace file produced by `run`.")
@click.option("--mapping", "mapping_path", type=click.Path(), help="Mapping config supplying the label domain.")
@click.option("--format", "fmt", type=click.Choice(["table", "structured"]), default="table", show_default=True, help="Human table or machine-readable JSON.")
@click.option("--out", "out_path", type=click.Path(), help="Write the structured report here as well.")
def report(trace_path: str, mapping_path: str | None, fmt: str, out_path: str | None) -> None:
    """Recompute metrics from a trace file."""
    mapping = _load_mapping(mapping_path)
    records = load_trace_file(_require_file(trace_path, "trace file"))
    pairs: list[tuple[str, str | None]] = []
    latencies: list[float] = []
    skipped = 0
    for rec in records:
        if rec.get("error") is not None:
            skipped += 1
            continue
        pairs.append((rec["gold"], rec["judgment"]["label"]))
        latencies.append(float(rec.get("latency", 0.0)))

    abstained = sum(1 for _, pred in pairs if pred is None)
    latency = LatencySummary.from_values(latencies) if latencies else None
    payload, reports = _metrics_payload(
        Path(trace_path).stem, pairs, mapping.target,
        scored=len(pairs), skipped=skipped, abstained=abstained, latency=latency,
    )
    if out_path:
        Path(out_path).write_text(
            json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    if fmt == "structured":
        click.echo(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True))
    else:
        click.echo(
            _format_metrics_table(
                Path(trace_path).stem,
                scored=len(pairs), skipped=skipped, abstained=abstained,
                reports=reports, latency=latency,
            )
        )


@cli.command()
@click.argument("sources", nargs=-1, required=True, type=click.Path())
@click.option("--strategy", type=click.Choice(["random", "equal"]), required=True, help="Uniform sampling or per-class balancing.")
@click.option("--size", "target_size", type=int, required=True, help="Number of labeled utterances to sample.")
@click.option("--seed", type=int, help="Sampling seed; auto-selected and logged when omitted.")
@click.option("--mapping", "mapping_path", type=click.Path(), help="Mapping config supplying the shared label domain.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="Where to write the mixed corpus.")
@click.option("--histogram-out", "histogram_path", type=click.Path(), help="Write the label histogram (JSON).")
@click.option("--chart", "chart_path", type=click.Path(), help="Render the histogram as a bar chart image (needs matplotlib).")
def mix(
    sources: tuple[str, ...],
    strategy: str,
    target_size: int,
    seed: int | None,
    mapping_path: str | None,
    out_path: str,
    histogram_path: str | None,
    chart_path: str | None,
) -> None:
    """Sample a mixed corpus from one or more unified source corpora."""
    seed = _pick_seed(seed)
    mapping = _load_mapping(mapping_path)
    corpora = tuple(
        load_corpus(_require_file(src, "source corpus"), domain=mapping.target)
        for src in sources
    )
    spec = MixSpec(
        strategy=Strategy.RANDOM if strategy == "random" else Strategy.EQUAL_CATEGORY,
        target_size=target_size,
        seed=seed,
        sources=corpora,
    )
    mixed = random_mix(spec) if spec.strategy is Strategy.RANDOM else equal_mix(spec)
    save_corpus(mixed, out_path)

    hist = histogram(mixed)
    if histogram_path:
        Path(histogram_path).write_text(
            json.dumps(
                {"schema": HISTOGRAM_SCHEMA, **hist.to_dict()},
                ensure_ascii=False, indent=2, sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
    if chart_path:
        _render_chart(hist, chart_path)

    click.echo(f"wrote {out_path} ({hist.total} labeled utterances, seed {seed})")
    for label, count in hist.counts.items():
        click.echo(f"  {label}: {count}")


def _render_chart(hist, path: str) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise SentixrlError(
            "chart rendering requires matplotlib; install the 'charts' extra"
        ) from None
    fig, ax = plt.subplots(figsize=(8, 4))
    labels = list(hist.counts)
    ax.bar(labels, [hist.counts[l] for l in labels])
    ax.set_ylabel("utterances")
    ax.set_title("label distribution")
    plt.xticks(rotation=30, ha="right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@cli.command()
@click.option("--p", "p_correct", type=float, required=True, help="Per-round probability the generator is correct.")
@click.option("--a", "accept_correct", type=float, required=True, help="Probability the discriminator accepts a correct label.")
@click.option("--b", "accept_incorrect", type=float, required=True, help="Probability the discriminator accepts an incorrect label.")
@click.option("--rounds", "max_rounds", default=DEFAULT_MAX_ROUNDS, show_default=True, help="Round budget.")
@click.option("--trials", default=100_000, show_default=True, help="Monte-Carlo trials.")
@click.option("--seed", default=0, show_default=True, help="Simulation seed.")
def simulate(
    p_correct: float,
    accept_correct: float,
    accept_incorrect: float,
    max_rounds: int,
    trials: int,
    seed: int,
) -> None:
    """Simulate the negotiation loop and compare against the closed form."""
    try:
        sp = SimParams(
            p_correct=p_correct,
            accept_correct=accept_correct,
            accept_incorrect=accept_incorrect,
            max_rounds=max_rounds,
            trials=trials,
            seed=seed,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    empirical = simulate_consensus(sp)
    exact = closed_form_consensus(sp)

    click.echo(f"q (per-round acceptance) = {sp.q:.6f}   trials = {trials}   seed = {seed}")
    click.echo(f"{'quantity':<24} {'empirical':>12} {'std.err':>10} {'closed-form':>12}")
    rows = [
        ("P(accepted)", empirical.p_accepted, empirical.se_accepted, exact.p_accepted),
        (
            "P(accepted & correct)",
            empirical.p_accepted_correct,
            empirical.se_accepted_correct,
            exact.p_accepted_correct,
        ),
        ("P(outlier)", empirical.p_outlier, empirical.se_outlier, exact.p_outlier),
        ("mean rounds", empirical.mean_rounds, empirical.se_mean_rounds, exact.mean_rounds),
    ]
    for name, value, se, reference in rows:
        click.echo(f"{name:<24} {value:>12.6f} {se:>10.6f} {reference:>12.6f}")
    conditional = exact.p_correct_given_accepted
    if conditional is None:
        click.echo(f"{'P(correct | accepted)':<24} {'-':>12} {'-':>10} {'undefined':>12}")
    else:
        click.echo(f"{'P(correct | accepted)':<24} {'-':>12} {'-':>10} {conditional:>12.6f}")


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        return 3
    except SentixrlError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
