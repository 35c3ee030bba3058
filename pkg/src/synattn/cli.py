"""Command-line front end: run edits, aggregate trace statistics, dump attention maps.

Subcommands
-----------
run    Run one or more edit configs; per config writes trace.txt,
       src_final.txt, tgt_final.txt and manifest.json into the output
       directory (one case_NNN subdirectory per config when several are
       given). Independent cases may run in parallel with --jobs.
stats  Aggregate several trace files: per timestep the mean, population
       standard deviation, and nearest-rank 20th/80th percentiles of the
       editing measurement across traces.
map    Dump one attention map (target query over source image keys) as a
       text grid, at a fixed rotary weight.

Config files are flat key-value text: one ``key = value`` per line, blank
lines and lines starting with ``#`` ignored, unknown or repeated keys
rejected. Keys and defaults are listed in ``run --help``.

All output files are plain text, reproducible byte for byte from the config
and tool version. Floats are serialized with 17 significant digits so every
file round-trips losslessly.

Exit codes: 0 success, 1 usage or config error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .attention import BlockProjection, TokenStream, attention_map
from .backbone import BackboneConfig, encode_prompt, init_backbone, initial_noise
from .measurement import (
    BlockSimilarity,
    DegenerateSimilarityError,
    StepRecord,
    Thresholds,
)
from .pipeline import EditingTrace, NumericalAbortError, PipelineConfig, run_edit

__all__ = [
    "ConfigError",
    "parse_config_text",
    "render_config",
    "config_to_dict",
    "write_trace",
    "parse_trace",
    "write_matrix",
    "parse_matrix",
    "nearest_rank_percentile",
    "compute_stats",
    "write_stats",
    "build_map_inputs",
    "cmd_run",
    "cmd_stats",
    "cmd_map",
    "main",
    "entrypoint",
]

# Content scale of the off-query bump in the constant-field probe; small
# enough that full-strength rotation suppression at two cells' displacement
# beats it, large enough to win outright when rotation is off.
PROBE_BUMP_SCALE = 1.2

_CONFIG_KEYS = {
    "src_prompt": "source prompt (required)",
    "tgt_prompt": "target prompt (required)",
    "seed": "backbone seed, integer (default 0)",
    "steps": "denoising steps T (default 10)",
    "grid": "image token grid HxW (default 4x4)",
    "blocks": "number of transformer blocks (default 8)",
    "shared_blocks": "comma-separated block indices that share attention (default 0,2,5)",
    "m_min": "lower measurement threshold (default 0.9)",
    "m_max": "upper measurement threshold (default 1.0)",
    "w_override": "fixed rotary weight in [0,1] instead of the adaptive schedule (default unset)",
    "num_heads": "attention heads (default 4)",
    "head_dim": "per-head dimension (default 16)",
    "axis_dims": "comma-separated even axis splits summing to head_dim (default 4,6,6)",
    "n_txt_tokens": "text tokens per prompt (default 4)",
    "theta_base": "rotary frequency base (default 10000)",
}


class ConfigError(ValueError):
    """Malformed run configuration; carries the offending key when known."""

    def __init__(self, message: str, key: str | None = None) -> None:
        super().__init__(message)
        self.key = key


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ----------------------------------------------------------------------
# config files


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"key '{key}': expected integer, got '{raw}'", key) from None


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"key '{key}': expected number, got '{raw}'", key) from None


def _parse_int_list(key: str, raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(_parse_int(key, part.strip()) for part in raw.split(","))


def parse_config_text(text: str) -> PipelineConfig:
    """Parse the flat key-value config grammar into a :class:`PipelineConfig`."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{stripped}'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'", key)
        if key in values:
            raise ConfigError(f"line {lineno}: key '{key}' given twice", key)
        values[key] = raw.strip()

    for required in ("src_prompt", "tgt_prompt"):
        if required not in values or not values[required]:
            raise ConfigError(f"missing required key '{required}'", required)

    grid_raw = values.get("grid", "4x4")
    parts = grid_raw.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"key 'grid': expected HxW, got '{grid_raw}'", "grid")
    grid = (_parse_int("grid", parts[0]), _parse_int("grid", parts[1]))

    num_heads = _parse_int("num_heads", values.get("num_heads", "4"))
    head_dim = _parse_int("head_dim", values.get("head_dim", "16"))
    try:
        backbone = BackboneConfig(
            num_heads=num_heads,
            head_dim=head_dim,
            d_model=num_heads * head_dim,
            axis_dims=_parse_int_list("axis_dims", values.get("axis_dims", "4,6,6")),
            n_blocks=_parse_int("blocks", values.get("blocks", "8")),
            shared_blocks=frozenset(
                _parse_int_list("shared_blocks", values.get("shared_blocks", "0,2,5"))
            ),
            n_txt_tokens=_parse_int("n_txt_tokens", values.get("n_txt_tokens", "4")),
            grid=grid,
            seed=_parse_int("seed", values.get("seed", "0")),
            n_steps=_parse_int("steps", values.get("steps", "10")),
            theta_base=_parse_float("theta_base", values.get("theta_base", "10000")),
        )
        thresholds = Thresholds(
            m_min=_parse_float("m_min", values.get("m_min", "0.9")),
            m_max=_parse_float("m_max", values.get("m_max", "1.0")),
        )
        override = (
            _parse_float("w_override", values["w_override"])
            if "w_override" in values
            else None
        )
        return PipelineConfig(
            src_prompt=values["src_prompt"],
            tgt_prompt=values["tgt_prompt"],
            backbone=backbone,
            thresholds=thresholds,
            w_override=override,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def render_config(config: PipelineConfig) -> str:
    """Canonical text form of a config; parses back to an equal config."""
    bb = config.backbone
    lines = [
        f"src_prompt = {config.src_prompt}",
        f"tgt_prompt = {config.tgt_prompt}",
        f"seed = {bb.seed}",
        f"steps = {bb.n_steps}",
        f"grid = {bb.grid[0]}x{bb.grid[1]}",
        f"blocks = {bb.n_blocks}",
        f"shared_blocks = {','.join(str(b) for b in sorted(bb.shared_blocks))}",
        f"m_min = {_fmt(config.thresholds.m_min)}",
        f"m_max = {_fmt(config.thresholds.m_max)}",
        f"num_heads = {bb.num_heads}",
        f"head_dim = {bb.head_dim}",
        f"axis_dims = {','.join(str(d) for d in bb.axis_dims)}",
        f"n_txt_tokens = {bb.n_txt_tokens}",
        f"theta_base = {_fmt(bb.theta_base)}",
    ]
    if config.w_override is not None:
        lines.append(f"w_override = {_fmt(config.w_override)}")
    return "\n".join(lines) + "\n"


def config_to_dict(config: PipelineConfig) -> dict:
    """JSON-ready echo of a config (for the run manifest)."""
    bb = config.backbone
    return {
        "src_prompt": config.src_prompt,
        "tgt_prompt": config.tgt_prompt,
        "seed": bb.seed,
        "steps": bb.n_steps,
        "grid": list(bb.grid),
        "blocks": bb.n_blocks,
        "shared_blocks": sorted(bb.shared_blocks),
        "m_min": config.thresholds.m_min,
        "m_max": config.thresholds.m_max,
        "num_heads": bb.num_heads,
        "head_dim": bb.head_dim,
        "axis_dims": list(bb.axis_dims),
        "n_txt_tokens": bb.n_txt_tokens,
        "theta_base": bb.theta_base,
        "w_override": config.w_override,
    }


# ----------------------------------------------------------------------
# trace files


def write_trace(trace: EditingTrace) -> str:
    """Serialize a trace; one line per timestep, config echoed in the header."""
    n_blocks = trace.config.backbone.n_blocks
    lines = [
        "# synattn trace v1",
        "# columns: timestep m_mean weight_applied then per block: s_txt s_img ratio",
        f"# blocks per step: {n_blocks}",
    ]
    for cfg_line in render_config(trace.config).splitlines():
        lines.append(f"# config: {cfg_line}")
    for step in trace.steps:
        fields = [str(step.timestep), _fmt(step.m_mean), _fmt(step.weight_applied)]
        for blk in step.blocks:
            fields += [_fmt(blk.s_txt), _fmt(blk.s_img), _fmt(blk.ratio)]
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> EditingTrace:
    """Inverse of :func:`write_trace`; exact for round-trips."""
    config_lines = []
    records = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("# config:"):
            config_lines.append(stripped[len("# config:") :].strip())
            continue
        if stripped.startswith("#"):
            continue
        records.append(stripped)
    if not config_lines:
        raise ConfigError("trace file has no config echo")
    config = parse_config_text("\n".join(config_lines))
    n_blocks = config.backbone.n_blocks

    steps = []
    for line in records:
        fields = line.split()
        if len(fields) != 3 + 3 * n_blocks:
            raise ConfigError(
                f"trace record has {len(fields)} fields, expected {3 + 3 * n_blocks}"
            )
        timestep = int(fields[0])
        m_mean = float(fields[1])
        weight = float(fields[2])
        blocks = []
        for b in range(n_blocks):
            s_txt, s_img, ratio = (float(x) for x in fields[3 + 3 * b : 6 + 3 * b])
            blocks.append(
                BlockSimilarity(block_index=b, s_txt=s_txt, s_img=s_img, ratio=ratio)
            )
        steps.append(
            StepRecord(
                timestep=timestep,
                blocks=tuple(blocks),
                m_mean=m_mean,
                weight_applied=weight,
            )
        )
    return EditingTrace(steps=tuple(steps), config=config)


# ----------------------------------------------------------------------
# matrix / grid files


def write_matrix(m: np.ndarray, tag: str = "matrix", comments: tuple[str, ...] = ()) -> str:
    m = np.asarray(m, dtype=np.float64)
    lines = [f"# {tag} {m.shape[0]} {m.shape[1]}"]
    lines += [f"# {c}" for c in comments]
    for row in m:
        lines.append(" ".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    rows = []
    shape = None
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            parts = stripped[1:].split()
            if shape is None and len(parts) == 3 and parts[1].isdigit():
                shape = (int(parts[1]), int(parts[2]))
            continue
        rows.append([float(x) for x in stripped.split()])
    m = np.array(rows, dtype=np.float64)
    if shape is not None and m.shape != shape:
        raise ConfigError(f"matrix body {m.shape} does not match header {shape}")
    return m


# ----------------------------------------------------------------------
# statistics


def nearest_rank_percentile(values, percent: int) -> float:
    """Nearest-rank percentile: the element of rank ceil(percent/100 * n)."""
    ordered = sorted(float(v) for v in values)
    if not ordered:
        raise ValueError("percentile of empty sequence")
    if not 0 < percent <= 100:
        raise ValueError(f"percent must be in (0, 100], got {percent}")
    rank = -(-percent * len(ordered) // 100)  # ceil without float rounding
    return ordered[rank - 1]


def compute_stats(traces: list[EditingTrace]) -> list[tuple[int, float, float, float, float]]:
    """Per-timestep (timestep, mean, std, p20, p80) of m_mean across traces."""
    if not traces:
        raise ConfigError("stats needs at least one trace")
    timeline = [step.timestep for step in traces[0].steps]
    for i, trace in enumerate(traces):
        if [step.timestep for step in trace.steps] != timeline:
            raise ConfigError(
                f"trace {i} has a different timestep sequence than trace 0"
            )
    rows = []
    for row, t in enumerate(timeline):
        values = [trace.steps[row].m_mean for trace in traces]
        mean = sum(values) / len(values)
        std = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
        rows.append(
            (
                t,
                mean,
                std,
                nearest_rank_percentile(values, 20),
                nearest_rank_percentile(values, 80),
            )
        )
    return rows


def write_stats(rows, n_traces: int) -> str:
    lines = [
        "# synattn stats v1",
        f"# traces: {n_traces}",
        "# percentile: nearest-rank, rank = ceil(p * n); std: population (ddof = 0)",
        "# columns: timestep mean std p20 p80",
    ]
    for t, mean, std, p20, p80 in rows:
        lines.append(f"{t} {_fmt(mean)} {_fmt(std)} {_fmt(p20)} {_fmt(p80)}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# attention-map inputs


def build_map_inputs(
    config: PipelineConfig,
    probe: str,
    block: int | None,
    query_cell: tuple[int, int],
):
    """Streams, projections and block index for one attention-map dump.

    probe = 'prompts': both branches at the start of denoising (shared
    noise, prompt-encoded text), projections of the chosen block.

    probe = 'constant-field': every image token is the same all-ones vector
    except a single bump token, scaled by PROBE_BUMP_SCALE, half a grid away
    from the query cell; projections are identities. Content is then uniform
    up to the bump, so the map is governed by the rotary term alone, which
    makes the weight's effect directly visible.
    """
    bb = config.backbone
    h, w = bb.grid
    if block is None:
        block = min(bb.shared_blocks) if bb.shared_blocks else 0
    if not 0 <= block < bb.n_blocks:
        raise ConfigError(f"block {block} outside [0, {bb.n_blocks})")

    if probe == "prompts":
        params = init_backbone(bb)
        noise = initial_noise(bb)
        src = TokenStream(encode_prompt(config.src_prompt, bb), noise, bb.grid)
        tgt = TokenStream(encode_prompt(config.tgt_prompt, bb), noise.copy(), bb.grid)
        return tgt, src, params.blocks[block].attn, block

    if probe == "constant-field":
        dr, dc = h // 2, w // 2
        if dr == 0 and dc == 0:
            raise ConfigError("constant-field probe needs a grid larger than 1x1")
        base = np.ones(bb.d_model)
        image = np.tile(base, (h * w, 1))
        r, c = query_cell
        bump = ((r + dr) % h) * w + ((c + dc) % w)
        image[bump] *= PROBE_BUMP_SCALE
        text = encode_prompt(config.src_prompt, bb)
        stream = TokenStream(text, image, bb.grid)
        eye = np.eye(bb.d_model)
        return stream, stream, BlockProjection(eye, eye, eye, eye), block

    raise ConfigError(f"unknown probe '{probe}'")


# ----------------------------------------------------------------------
# subcommands


def _run_one_case(config_path: Path, out_dir: Path) -> None:
    config = parse_config_text(config_path.read_text())
    src_final, tgt_final, trace = run_edit(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trace.txt").write_text(write_trace(trace))
    (out_dir / "src_final.txt").write_text(write_matrix(src_final))
    (out_dir / "tgt_final.txt").write_text(write_matrix(tgt_final))
    manifest = {
        "tool": "synattn",
        "version": __version__,
        "config": config_to_dict(config),
        "files": {
            "trace": "trace.txt",
            "src_final": "src_final.txt",
            "tgt_final": "tgt_final.txt",
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _case_exit_code(exc: Exception) -> int:
    if isinstance(exc, (NumericalAbortError, DegenerateSimilarityError)):
        return 2
    return 1


def cmd_run(config_paths: list[str], out_dir: str, jobs: int = 1) -> int:
    """Run each config; one output directory per case when several are given."""
    paths = [Path(p) for p in config_paths]
    root = Path(out_dir)
    targets = (
        [root]
        if len(paths) == 1
        else [root / f"case_{i:03d}" for i in range(len(paths))]
    )

    def one(pair) -> Exception | None:
        path, target = pair
        try:
            _run_one_case(path, target)
            return None
        except Exception as exc:  # noqa: BLE001 - reported per index below
            return exc

    if jobs > 1 and len(paths) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, zip(paths, targets)))
    else:
        outcomes = [one(pair) for pair in zip(paths, targets)]

    code = 0
    for i, (path, outcome) in enumerate(zip(paths, outcomes)):
        if outcome is not None:
            print(f"case {i} ({path}): {outcome}", file=sys.stderr)
            code = max(code, _case_exit_code(outcome))
    return code


def cmd_stats(trace_paths: list[str], out_path: str) -> int:
    """Aggregate m_mean across trace files into per-timestep statistics."""
    traces = [parse_trace(Path(p).read_text()) for p in trace_paths]
    rows = compute_stats(traces)
    Path(out_path).write_text(write_stats(rows, len(traces)))
    return 0


def cmd_map(
    config_path: str,
    cell: tuple[int, int],
    w_value: float,
    out_path: str,
    block: int | None = None,
    probe: str = "prompts",
) -> int:
    """Dump one attention map as a text grid."""
    if not 0.0 <= w_value <= 1.0:
        raise ConfigError(f"--w must be in [0, 1], got {w_value}")
    config = parse_config_text(Path(config_path).read_text())
    tgt, src, proj, block_used = build_map_inputs(config, probe, block, cell)
    grid = attention_map(tgt, src, proj, config.backbone.rope, w_value, cell)
    comments = (
        f"query_cell: {cell[0]} {cell[1]}",
        f"w: {_fmt(w_value)}",
        f"block: {block_used}",
        f"probe: {probe}",
    )
    Path(out_path).write_text(write_matrix(grid, tag="map", comments=comments))
    return 0


# ----------------------------------------------------------------------
# argument parsing


def _parse_cell(raw: str) -> tuple[int, int]:
    parts = raw.split(",")
    if len(parts) != 2:
        raise ConfigError(f"--cell expects ROW,COL, got '{raw}'")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"--cell expects integers, got '{raw}'") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synattn",
        description="Deterministic toy pipeline for adaptive position-weighted attention sharing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    key_help = "\n".join(f"  {k:<14} {v}" for k, v in _CONFIG_KEYS.items())
    run_p = sub.add_parser(
        "run",
        help="run edit configs and write traces, final states, and manifests",
        description=(
            "Config grammar: one 'key = value' per line; blank lines and lines "
            "starting with '#' are ignored; unknown or repeated keys are "
            "rejected.\n\nKeys:\n" + key_help
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run_p.add_argument(
        "--config",
        action="append",
        required=True,
        metavar="FILE",
        help="config file; repeat for a batch (outputs then go to case_NNN subdirectories)",
    )
    run_p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    run_p.add_argument(
        "--jobs",
        type=int,
        default=1,
        metavar="N",
        help="worker threads for batches; outputs are identical for any N (default 1)",
    )
    run_p.set_defaults(func=lambda a: cmd_run(a.config, a.out, a.jobs))

    stats_p = sub.add_parser(
        "stats",
        help="aggregate editing-measurement statistics across trace files",
        description=(
            "Writes per-timestep mean, population standard deviation, and "
            "20th/80th percentiles (nearest-rank: the sorted element of rank "
            "ceil(p * n)) of m_mean across the given traces."
        ),
    )
    stats_p.add_argument("traces", nargs="+", metavar="TRACE", help="trace files from 'run'")
    stats_p.add_argument("--out", required=True, metavar="FILE", help="output stats file")
    stats_p.set_defaults(func=lambda a: cmd_stats(a.traces, a.out))

    map_p = sub.add_parser(
        "map",
        help="dump one attention map (target query over source image keys)",
        description=(
            "Evaluates the attention map of the query token at --cell over the "
            "source image keys at rotary weight --w, at the start of denoising. "
            "probe 'prompts' uses the config's prompt streams and the weights of "
            "--block (default: lowest shared block); probe 'constant-field' uses "
            "a uniform image with one bump token half a grid away from the query "
            "and identity projections, isolating the positional term."
        ),
    )
    map_p.add_argument("--config", required=True, metavar="FILE")
    map_p.add_argument("--cell", required=True, metavar="R,C", help="query cell row,col")
    map_p.add_argument("--w", required=True, type=float, help="rotary weight in [0, 1]")
    map_p.add_argument("--out", required=True, metavar="FILE", help="output map file")
    map_p.add_argument("--block", type=int, default=None, help="block whose projections to use")
    map_p.add_argument(
        "--probe",
        choices=("prompts", "constant-field"),
        default="prompts",
        help="stream construction (default: prompts)",
    )
    map_p.set_defaults(
        func=lambda a: cmd_map(a.config, _parse_cell(a.cell), a.w, a.out, a.block, a.probe)
    )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalAbortError, DegenerateSimilarityError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
