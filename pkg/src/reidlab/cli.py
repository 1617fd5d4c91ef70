"""Operator command line: ingest, synth, eval, serve, session-export, fixture."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evalkit, synthgen
from .backend import make_backend, make_embedder
from .corpus import CorpusError, filter_by_quality, parse_manifest, write_manifest
from .fixture import build_fixture_index
from .synthgen import SynthError

logger = logging.getLogger("reidlab")

ENV_ENDPOINT = "REIDLAB_ENDPOINT"
ENV_TOKEN = "REIDLAB_TOKEN"


def _load_corpus(args) -> "CorpusIndex":  # noqa: F821
    if getattr(args, "fixture", False):
        return build_fixture_index()
    if not args.corpus:
        raise CorpusError("no corpus given: pass --corpus MANIFEST or --fixture")
    path = Path(args.corpus)
    if not path.exists():
        raise CorpusError(f"corpus manifest not found: {path}")
    return parse_manifest(path)


def _backend_descriptor(args) -> dict:
    """Backend descriptor from --backend (kind literal or JSON file path)."""
    raw = args.backend
    if raw in ("perfect", "noisy", "embedding"):
        descriptor = {"kind": raw}
    else:
        path = Path(raw)
        if not path.exists():
            raise CorpusError(f"backend config not found: {path}")
        descriptor = json.loads(path.read_text(encoding="utf-8"))
    if getattr(args, "epsilon", None) is not None:
        descriptor["epsilon"] = args.epsilon
    if getattr(args, "seed", None) is not None:
        descriptor.setdefault("seed", args.seed)
    if os.environ.get(ENV_ENDPOINT):
        descriptor["endpoint"] = os.environ[ENV_ENDPOINT]
    if os.environ.get(ENV_TOKEN):
        descriptor["auth_token"] = os.environ[ENV_TOKEN]
    return descriptor


def cmd_ingest(args) -> int:
    manifest = Path(args.manifest)
    if not manifest.exists():
        print(f"error: manifest not found: {manifest}", file=sys.stderr)
        return 1
    print(
        json.dumps(
            {"config": {"manifest": str(manifest), "min_width": args.min_width, "min_height": args.min_height}},
            sort_keys=True,
        )
    )
    index = parse_manifest(manifest)
    filtered = filter_by_quality(index, min_width=args.min_width, min_height=args.min_height)
    if filtered.stats.total == 0:
        print(
            f"error: empty corpus after quality filtering ({filtered.stats.removed} removed)",
            file=sys.stderr,
        )
        return 1
    write_manifest(filtered, Path(args.out))
    print(f"ingested {filtered.stats.total} records ({filtered.stats.removed} removed by quality filter)")
    for dataset_id, count in sorted(filtered.stats.per_dataset.items()):
        print(f"  {dataset_id}: {count}")
    print(f"index written to {args.out}")
    return 0


def cmd_synth(args) -> int:
    index = _load_corpus(args)
    if args.plan:
        plan_data = json.loads(Path(args.plan).read_text(encoding="utf-8"))
        plan = synthgen.MixPlan.create(plan_data["fractions"], plan_data.get("total", args.total))
    else:
        plan = synthgen.default_plan(args.stage, args.total)
    a, b = (int(x) for x in args.bounds.split(","))
    bounds = synthgen.SamplingBounds(a, b)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = out_dir / f"stage{args.stage}_seed{args.seed}.jsonl"
    manifest = synthgen.write_dataset(plan, index, bounds, args.seed, dataset_path)
    print(json.dumps({"config": {"stage": args.stage, "seed": args.seed, "bounds": [a, b]}}, sort_keys=True))
    print("realized counts vs plan:")
    planned = plan.counts()
    for kind in sorted(planned):
        print(f"  {kind}: {manifest['counts'].get(kind, 0)} (planned {planned[kind]})")
    print(f"digest: {manifest['digest']}")
    print(f"dataset written to {dataset_path}")
    return 0


def cmd_eval(args) -> int:
    index = _load_corpus(args)
    descriptor = _backend_descriptor(args)
    if descriptor.get("kind") == "remote":
        Path(args.out).mkdir(parents=True, exist_ok=True)
        descriptor.setdefault("ledger_path", str(Path(args.out) / "ledger.jsonl"))
    backend = make_backend(descriptor, index)
    embedder = make_embedder({"kind": "identity", "sigma": args.sigma, "seed": args.seed or 0}, index)
    split = evalkit.build_split(index, args.setting, queries_per_identity=args.queries_per_identity)
    report = evalkit.run_eval(
        index,
        split,
        backend,
        embedder,
        prefilter_config=evalkit.PrefilterConfig(tau=args.tau, floor=args.floor),
        ranking_config=evalkit.RankingConfig(strategy=args.strategy, batch_size=args.batch),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / f"eval_{args.setting}_{args.strategy}.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    report_path.with_suffix(".txt").write_text(report.summary_table() + "\n", encoding="utf-8")
    print(json.dumps({"config": report.config, "backend": {k: v for k, v in descriptor.items() if k != "auth_token"}}, sort_keys=True))
    if args.tau <= -1.0:
        print("note: tau=-1 evaluates the full gallery (no prefiltering)")
    print(report.summary_table())
    print(f"report written to {report_path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        data_dir=Path(args.data_dir),
        manifest=Path(args.corpus) if args.corpus else None,
        use_fixture=args.fixture or not args.corpus,
        token=args.token or os.environ.get(ENV_TOKEN),
        console_dir=Path(args.console) if args.console else None,
    )
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning" if not args.verbose else "info")
    return 0


def cmd_session_export(args) -> int:
    path = Path(args.data_dir) / "sessions.jsonl"
    if not path.exists():
        print(f"error: no session store at {path}", file=sys.stderr)
        return 1
    lines = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                envelope = json.loads(line)
                if envelope["session_id"] == args.session_id:
                    lines.append(envelope["line"])
    if not lines:
        print(f"error: no session {args.session_id!r} in {path}", file=sys.stderr)
        return 1
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"session log written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_fixture(args) -> int:
    index = build_fixture_index(identities=args.identities, seed=args.seed)
    write_manifest(index, Path(args.out))
    print(f"fixture manifest with {index.stats.total} records written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reidlab", description="Person Re-ID data engine and evaluation harness")
    parser.add_argument("--verbose", action="store_true", help="enable debug logging")
    parser.add_argument("--config", help="JSON file supplying defaults for corpus/backend/out/seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and quality-filter a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--min-width", type=int, default=32)
    p.add_argument("--min-height", type=int, default=64)
    p.set_defaults(func=cmd_ingest, config_fallbacks={"out": None})

    p = sub.add_parser("synth", help="build an instruction dataset")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--corpus", help="corpus manifest path")
    p.add_argument("--fixture", action="store_true", help="use the built-in synthetic fixture corpus")
    p.add_argument("--plan", help="JSON file with {fractions, total}")
    p.add_argument("--total", type=int, default=1000)
    p.add_argument("--bounds", default="2,10", help="gallery size bounds a,b")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth, config_fallbacks={"corpus": None, "out": None, "seed": 0})

    p = sub.add_parser("eval", help="run the retrieval evaluation protocol")
    p.add_argument("--setting", choices=evalkit.EVAL_SETTINGS, default="standard")
    p.add_argument("--strategy", choices=evalkit.STRATEGIES, default="pairwise")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--floor", type=int, default=32)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--backend", help="backend kind or JSON config path")
    p.add_argument("--epsilon", type=float, default=None, help="noise rate for the noisy backend")
    p.add_argument("--sigma", type=float, default=0.0, help="embedder noise magnitude")
    p.add_argument("--seed", type=int)
    p.add_argument("--queries-per-identity", type=int, default=1)
    p.add_argument("--corpus")
    p.add_argument("--fixture", action="store_true")
    p.add_argument("--out")
    p.set_defaults(
        func=cmd_eval,
        config_fallbacks={"corpus": None, "backend": "perfect", "out": None, "seed": 0},
    )

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--corpus")
    p.add_argument("--fixture", action="store_true")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--token")
    p.add_argument("--console", help="directory of console static files to mount at /console")
    p.set_defaults(func=cmd_serve, config_fallbacks={"corpus": None})

    p = sub.add_parser("session-export", help="export a persisted session log")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--session-id", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_session_export)

    p = sub.add_parser("fixture", help="write the synthetic fixture corpus manifest")
    p.add_argument("--out")
    p.add_argument("--identities", type=int, default=50)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fixture, config_fallbacks={"out": None, "seed": 7})

    return parser


def _apply_config_defaults(args) -> None:
    """Fill unset flags from the --config file, falling back to defaults."""
    overrides = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CorpusError(f"config file not found: {path}")
        overrides = json.loads(path.read_text(encoding="utf-8"))
    for key, fallback in getattr(args, "config_fallbacks", {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, overrides.get(key, fallback))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        _apply_config_defaults(args)
        if getattr(args, "config_fallbacks", {}).get("out", "skip") is None and not args.out:
            print("error: no output path: pass --out or set it in --config", file=sys.stderr)
            return 2
        return args.func(args)
    except (CorpusError, SynthError, evalkit.EvalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
