"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 backend error,
4 unparsable model response.
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import click

from . import __version__
from .backends import Backend, BackendError, BackendKind, ConfigError, MaskError, make_backend
from .config import RunConfig, default_config_path, load_config
from .evaluation import (
    DistractorPool,
    EvalSettings,
    InvalidN,
    NoEntries,
    Truncation,
    evaluate_dataset,
    write_f1_curve,
    write_report,
)
from .model import (
    ExtractionKind,
    GroundTruthError,
    dump_patterns,
    load_ground_truth,
    load_patterns,
    validate_pattern,
)
from .ontology import OntologyError, OntologyVocabulary, populate
from .parsing import EmptyParse, parse_pattern_tuples, parse_ranked_list
from .prompts import PromptError, render_bulk_prompt, render_slot_prompt

EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_PARSE = 4

KIND_CHOICES = [k.value for k in ExtractionKind]


class CliError(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


class State:
    def __init__(self, config_path: Path | None, record: bool):
        self.config_path = config_path
        self.record = record
        self._config: RunConfig | None = None

    @property
    def config(self) -> RunConfig:
        if self._config is None:
            path = self.config_path or default_config_path()
            if not path.is_file():
                raise CliError(f"config file {path} not found (use --config)", EXIT_CONFIG)
            try:
                self._config = load_config(path)
            except ConfigError as exc:
                raise CliError(str(exc), EXIT_CONFIG) from None
        return self._config

    def backend(self, name: str) -> Backend:
        try:
            cfg = self.config.backend(name)
        except ConfigError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
        if cfg.temperature > 0:
            click.echo(
                f"warning: backend {name!r} uses temperature {cfg.temperature}; results will not be reproducible",
                err=True,
            )
        record_dir = None
        if self.record and cfg.kind is not BackendKind.REPLAY:
            record_dir = cfg.fixture_dir or self.config.fixture_dir
            if record_dir is None:
                raise CliError(f"--record needs a fixture_dir for backend {name!r}", EXIT_CONFIG)
        return make_backend(cfg, record_dir=record_dir)


pass_state = click.make_pass_decorator(State)


def _backend_failure(exc: Exception) -> CliError:
    if isinstance(exc, ConfigError):
        return CliError(str(exc), EXIT_CONFIG)
    return CliError(f"{type(exc).__name__}: {exc}", EXIT_BACKEND)


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(path_type=Path), help="YAML run configuration.")
@click.option("--record", is_flag=True, help="Store every live backend response in the fixture directory.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def cli(ctx: click.Context, config_path: Path | None, record: bool, verbose: bool) -> None:
    """Extract action patterns from language models, evaluate them, and build an ontology."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = State(config_path, record)


@cli.group()
def extract() -> None:
    """Query a backend for slot fillers or whole action patterns."""


@extract.command("slot")
@click.option("--kind", type=click.Choice(KIND_CHOICES), required=True)
@click.option("--action", required=True)
@click.option("--object", "object_", required=True)
@click.option("--tool", help="Tool the object is related to (spatial kind only).")
@click.option("--candidates", help="Comma-separated candidate labels, in rank order.")
@click.option("--candidates-file", type=click.Path(exists=True, dir_okay=False, path_type=Path), help="One candidate per line.")
@click.option("--allow-ungrounded", is_flag=True, help="Permit prompting without candidates.")
@click.option("--backend", "backend_name", required=True)
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path), help="Also write the labels here.")
@pass_state
def extract_slot(
    state: State,
    kind: str,
    action: str,
    object_: str,
    tool: str | None,
    candidates: str | None,
    candidates_file: Path | None,
    allow_ungrounded: bool,
    backend_name: str,
    output: Path | None,
) -> None:
    """Fill one slot of an action pattern and print labels in rank order."""
    if candidates_file is not None:
        items = candidates_file.read_text(encoding="utf-8").splitlines()
    else:
        items = (candidates or "").split(",")
    items = [c.strip() for c in items if c.strip()]
    backend = state.backend(backend_name)
    try:
        prompt = render_slot_prompt(
            ExtractionKind(kind), action, object_, items, tool, allow_ungrounded=allow_ungrounded
        )
    except PromptError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    try:
        result = backend.complete(backend.request(prompt.text))
    except BackendError as exc:
        raise _backend_failure(exc) from None
    try:
        ranked = parse_ranked_list(result.raw, items or None)
    except EmptyParse as exc:
        raise CliError(f"{exc} (rejected {exc.rejected} fragments)", EXIT_PARSE) from None
    text = "".join(label + "\n" for label in ranked.labels)
    click.echo(text, nl=False)
    if output is not None:
        output.write_text(text, encoding="utf-8")


@extract.command("patterns")
@click.option("--domain", required=True)
@click.option("--count", type=int, required=True)
@click.option("--backend", "backend_name", required=True)
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Pattern JSON file.")
@click.option(
    "--review-sheet",
    type=click.Path(dir_okay=False, path_type=Path),
    help="Review CSV (default: OUTPUT with .review.csv suffix).",
)
@pass_state
def extract_patterns(
    state: State, domain: str, count: int, backend_name: str, output: Path, review_sheet: Path | None
) -> None:
    """Generate whole action patterns for a domain and write a manual-review sheet."""
    try:
        prompt = render_bulk_prompt(count, domain)
    except PromptError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    backend = state.backend(backend_name)
    try:
        result = backend.complete(backend.request(prompt.text))
    except BackendError as exc:
        raise _backend_failure(exc) from None
    report = parse_pattern_tuples(result.raw)
    if not report.patterns and not report.malformed:
        raise CliError("response contained no action-pattern tuples", EXIT_PARSE)

    dump_patterns(report.patterns, output)
    sheet = review_sheet or output.with_suffix(".review.csv")
    rows = []
    for i, (pattern, line) in enumerate(zip(report.patterns, report.pattern_lines)):
        fields = [pattern.action, pattern.agents[0], pattern.objects[0]] + list(pattern.tools[:1])
        rows.append((line, i, "(" + ", ".join(fields) + ")", "yes", ""))
    for bad in report.malformed:
        rows.append((bad.line_number, "", bad.raw.strip(), "no", bad.reason))
    rows.sort(key=lambda r: r[0])
    with open(sheet, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("line", "pattern_index", "tuple", "valid_format", "note", "human_valid"))
        for line, index, rendered, valid, note in rows:
            writer.writerow((line, index, rendered, valid, note, ""))
    click.echo(f"parsed: {len(report.patterns)}")
    click.echo(f"malformed: {len(report.malformed)}")


@cli.command()
@click.option(
    "--ground-truth",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
)
@click.option("--kind", "kinds", type=click.Choice(KIND_CHOICES), multiple=True, help="Default: all kinds.")
@click.option("--backend", "backend_names", multiple=True, help="Default: every configured backend.")
@click.option("--n-max", type=int)
@click.option("--truncation", type=click.Choice([t.value for t in Truncation]))
@click.option("--seed", type=int, help="Seed for candidate shuffling.")
@click.option("--strict/--no-strict", default=None, help="Reject unknown keys in the ground truth.")
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@pass_state
def evaluate(
    state: State,
    ground_truth: Path,
    kinds: tuple[str, ...],
    backend_names: tuple[str, ...],
    n_max: int | None,
    truncation: str | None,
    seed: int | None,
    strict: bool | None,
    output_dir: Path,
) -> None:
    """Score backends against the ground truth and write one CSV per backend and kind."""
    config = state.config.override(
        n_max=n_max,
        truncation=Truncation(truncation) if truncation else None,
        seed=seed,
        strict_ground_truth=strict,
    )
    try:
        entries = load_ground_truth(ground_truth, strict=config.strict_ground_truth)
        settings = EvalSettings(
            n_max=config.n_max,
            truncation=config.truncation,
            seed=config.seed,
            n_distractors=config.n_distractors,
            distractors=DistractorPool.load(config.distractor_pool),
        )
    except (GroundTruthError, InvalidN) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    names = list(backend_names) or sorted(config.backends)
    backends = {name: state.backend(name) for name in names}
    selected = [ExtractionKind(k) for k in kinds] or list(ExtractionKind)
    try:
        reports = evaluate_dataset(entries, selected, backends, settings)
    except NoEntries as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    except (BackendError, MaskError) as exc:
        raise _backend_failure(exc) from None

    output_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    header = "backend\tkind\t" + "\t".join(f"F1@{n}" for n in range(1, settings.n_max + 1))
    click.echo(header)
    for (name, kind), report in reports.items():
        stem = f"{name}__{kind.value}"
        write_report(report, output_dir / f"{stem}.csv")
        write_f1_curve(report, output_dir / f"{stem}.f1.tsv")
        click.echo(f"{name}\t{kind.value}\t" + "\t".join(f"{m.f1:.3f}" for m in report.aggregate))
        for incident, count in sorted(report.incidents.items()):
            click.echo(f"{name}/{kind.value}: {count} entries with incident {incident}", err=True)
            if incident not in ("EmptyParse", "UnsupportedKind"):
                failures += count
    if failures:
        raise CliError(f"{failures} entries failed at the backend; partial results written", EXIT_BACKEND)


@cli.command("populate")
@click.option("--patterns", "patterns_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--base-iri", help="Namespace for minted IRIs (must end in '/' or '#').")
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def populate_cmd(ctx: click.Context, patterns_path: Path, base_iri: str | None, output: Path) -> None:
    """Write the action-pattern TBox plus the patterns as individuals in Turtle."""
    state: State = ctx.obj
    if base_iri is None:
        has_config = state.config_path is not None or default_config_path().is_file()
        base_iri = state.config.base_iri if has_config else None
    try:
        vocab = OntologyVocabulary(base_iri) if base_iri else OntologyVocabulary()
        patterns = load_patterns(patterns_path)
    except (OntologyError, GroundTruthError) as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    invalid = [(i, validate_pattern(p)) for i, p in enumerate(patterns)]
    invalid = [(i, v) for i, v in invalid if not v.ok]
    if invalid:
        lines = [f"pattern {i}: {'; '.join(v.violations)}" for i, v in invalid[:20]]
        if len(invalid) > 20:
            lines.append(f"... and {len(invalid) - 20} more")
        raise CliError("invalid patterns at indices " + ", ".join(str(i) for i, _ in invalid) + "\n" + "\n".join(lines), EXIT_CONFIG)
    try:
        doc = populate(patterns, vocab)
    except OntologyError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    output.write_text(doc.turtle, encoding="utf-8")
    click.echo(f"{doc.individuals['Action']} actions")
    click.echo(f"{doc.individuals['Object']} objects")
    click.echo(f"{doc.individuals['State']} states")
    click.echo(f"{doc.triple_count} triples")


def main() -> None:
    cli(prog_name="actionpatterns")


if __name__ == "__main__":
    main()
