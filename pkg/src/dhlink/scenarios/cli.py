"""dhlink-scenario: run a scenario and write its transcript, or verify a saved one."""

from __future__ import annotations

import json
import sys

import click

from dhlink.errors import ConnectivityError, DHLinkError, ValidationError
from dhlink.scenarios import RUNNERS, ScenarioConfig, Transcript, verify_transcript


@click.group()
def main() -> None:
    """Scenario harness."""


@main.command()
@click.argument("scenario", type=click.Choice(sorted(RUNNERS)))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Scenario config JSON (camelCase keys).")
@click.option("--seed", type=int, help="Overrides the config seed.")
@click.option("--out", type=click.Path(dir_okay=False), default="transcript.json", show_default=True)
@click.option("--transport", type=click.Choice(["local", "http"]), help="Overrides the config transport.")
def run(scenario: str, config_path: str | None, seed: int | None, out: str, transport: str | None) -> None:
    """Run SCENARIO and save the transcript."""
    try:
        cfg = ScenarioConfig.load(config_path) if config_path else ScenarioConfig()
        if seed is not None:
            cfg = cfg.replace(seed=seed)
        if transport is not None:
            cfg = cfg.replace(transport=transport)
        transcript = RUNNERS[scenario](cfg)
    except ConnectivityError as exc:
        click.echo(json.dumps(exc.to_dict()), err=True)
        sys.exit(4)
    except DHLinkError as exc:
        click.echo(json.dumps(exc.to_dict()), err=True)
        sys.exit(2 if isinstance(exc, ValidationError) else 3)
    transcript.save(out)
    click.echo(json.dumps({"scenario": scenario, "digest": transcript.digest(),
                           "summary": transcript.summary(), "timing": transcript.timing}, indent=2))


@main.command()
@click.argument("transcript_path", type=click.Path(exists=True, dir_okay=False))
def verify(transcript_path: str) -> None:
    """Re-run the oracles against a saved transcript; exit 0 iff all pass."""
    with open(transcript_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    checks = verify_transcript(Transcript.from_dict(doc), doc.get("digest"))
    for c in checks:
        click.echo(c.line())
    sys.exit(0 if all(c.ok for c in checks) else 1)


if __name__ == "__main__":
    main()
