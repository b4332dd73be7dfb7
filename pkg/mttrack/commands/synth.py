"""
`synth`: render a seeded synthetic benchmark in the sequence directory format
"""
import argparse
import json
import logging
from pathlib import Path

from pydantic import ValidationError

from mttrack.commands.common import load_run_config, write_json
from mttrack.core.error_utils import handle_cli_errors
from mttrack.core.exceptions import ConfigurationException
from mttrack.services.sequence_io import write_sequence
from mttrack.services.synthetic import SyntheticBenchmarkSpec, generate_synthetic, manifest_entry, sequence_digest

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="Generate synthetic sequences")
    parser.add_argument("--spec", help="Synthetic benchmark spec (JSON); defaults give 20 sequences x 100 frames")
    parser.add_argument("--count", type=int, help="Number of sequences to draw")
    parser.add_argument("--frames", type=int, help="Frames per sequence")
    parser.set_defaults(handler=cmd_synth)


def load_benchmark_spec(path: str = None) -> SyntheticBenchmarkSpec:
    if not path:
        return SyntheticBenchmarkSpec()
    try:
        return SyntheticBenchmarkSpec.model_validate_json(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigurationException(user_message=f"Spec file '{path}' does not exist.", technical_message=str(e))
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(loc) for loc in first.get("loc", []))
        raise ConfigurationException(
            user_message=f"Invalid synthetic spec '{path}' at '{field}': {first.get('msg')}",
            technical_message=str(e),
            details={"key": field},
        )


@handle_cli_errors(context="generating synthetic sequences")
def cmd_synth(args: argparse.Namespace) -> int:
    run = load_run_config(args)
    spec = load_benchmark_spec(args.spec)
    updates = {"count": args.count, "num_frames": args.frames, "seed": args.seed}
    spec = SyntheticBenchmarkSpec.model_validate({**spec.model_dump(), **{k: v for k, v in updates.items() if v is not None}})

    out = Path(run.output_dir)
    run.echo(str(out))
    entries = []
    for seq_spec in spec.expand():
        seq = generate_synthetic(seq_spec)
        write_sequence(seq, out / seq.name)
        entries.append(manifest_entry(seq_spec, seq, sequence_digest(seq)))
        logger.info(f"Wrote {seq.name}: {len(seq)} frames, attributes {', '.join(seq.attributes) or 'none'}")

    manifest = {"spec": json.loads(spec.model_dump_json()), "sequences": entries}
    write_json(out / MANIFEST_FILE, manifest)
    logger.info(f"Synthetic benchmark with {len(entries)} sequences written to {out}")
    return 0
