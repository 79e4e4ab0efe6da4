# app/commands/synthetic.py
from __future__ import annotations

import logging
from pathlib import Path

import click

from app.align.errors import ConfigError
from app.align.synthetic import generate_synthetic_pair, write_synthetic
from app.commands.common import echo_json

logger = logging.getLogger(__name__)


@click.command("gen-synthetic")
@click.option("--entities", type=int, required=True, help="Entities per graph.")
@click.option("--relations", type=int, required=True, help="Relations per graph.")
@click.option("--avg-degree", type=float, default=6.0, show_default=True, help="Mean number of triples touching an entity.")
@click.option("--perturb", type=float, default=0.05, show_default=True, help="Fraction of graph-2 triples dropped or rewired (0 gives an isomorphic pair).")
@click.option("--rename/--no-rename", default=False, show_default=True, help="Append a suffix to graph-2 relation descriptions.")
@click.option("--seed", "rng_seed", type=int, default=0, show_default=True, help="Generator seed.")
@click.option("--feature-dim", type=int, default=32, show_default=True, help="Width of the written initial embeddings.")
@click.option("--feature-noise", type=float, default=0.2, show_default=True, help="Gaussian noise added per side to the shared name vectors.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True, help="Output directory.")
def gen_synthetic_command(
    entities: int,
    relations: int,
    avg_degree: float,
    perturb: float,
    rename: bool,
    rng_seed: int,
    feature_dim: int,
    feature_noise: float,
    out_dir: Path,
) -> None:
    """Generate an aligned graph pair (kg1/, kg2/, ref_ent_ids, manifest.json)."""
    try:
        pair = generate_synthetic_pair(
            entities, relations, avg_degree, perturb, rename, rng_seed,
            feature_dim=feature_dim, feature_noise=feature_noise,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_synthetic(pair, out_dir)
    logger.info(
        "synthetic pair written out=%s entities=%d triples1=%d triples2=%d",
        out_dir, pair.kg1.num_entities, len(pair.kg1.triples), len(pair.kg2.triples),
    )
    echo_json({
        "out": str(out_dir),
        "entities": pair.kg1.num_entities,
        "relations": pair.kg1.num_relations,
        "triples1": len(pair.kg1.triples),
        "triples2": len(pair.kg2.triples),
        "seeds": len(pair.seeds),
        "dropped": pair.n_dropped,
        "rewired": pair.n_rewired,
    })
