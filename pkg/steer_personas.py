#!/usr/bin/env python3
"""
STEER Personas - evolved persona ensembles for steerable ordinal decisions

Commands:
- simulate: build a synthetic dataset, latent panel and ready-to-run config
- evolve:   run the evaluate/select/generate loop (optionally --resume)
- assemble: distill the final pool into champion teams
- infer:    apply the percentile dial to one case or a batch
- curve:    operating curve, ordinal AUC with bootstrap CI, dial distribution
- compare:  AUC gains over static-persona and repeated-sampling baselines

Exit codes: 0 success, 2 usage/config, 3 backend failure, 4 extinction.
"""

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml

from steer import __version__, get_logger, setup_logging
from steer.backends import Backends
from steer.config import ConfigLoader, ConfigValidationError, get_config
from steer.core_model import Case, OrdinalScale, Persona, cases_by_split
from steer.errors import DomainError, ExtinctionError, RatingError, SteerError, TransportError
from steer.evolution import final_pool, resume_state, run_evolution
from steer.http_backend import ChatCompletionClient, HttpCoherenceScorer, HttpGenerator, HttpRater
from steer.inference import collect_many, collect_outputs, percentile_select
from steer.metrics import (
    auc_metric, bootstrap_ci, curve_from_outputs, ordinal_auc, percentile_distribution,
    safety_accuracy, sampling_baseline, selection_table, static_persona_baseline,
)
from steer.prompts import PromptTemplates
from steer.rating_cache import CachedCoherenceScorer, CachedGenerator, CachedRater, RecordStore
from steer.run_store import (
    SCHEMA_VERSION, RunDirectory, case_from_dict, dumps, read_cases, read_json,
    read_personas, write_json,
)
from steer.simulation import load_panel, simulate_dataset, write_dataset
from steer.synthetic_backend import SyntheticCoherenceScorer, SyntheticGenerator, SyntheticRater
from steer.team import assemble_team, team_from_dict, team_to_dict

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_EXTINCT = 4

SAFETY_REPORT_PERCENTILES = (0.0, 50.0, 100.0)


def exit_code_for(error: Exception) -> int:
    if isinstance(error, ExtinctionError):
        return EXIT_EXTINCT
    if isinstance(error, (RatingError, TransportError)):
        return EXIT_BACKEND
    return EXIT_USAGE


class SteerApp:
    """Wires configuration, logging and backends for one command"""

    def __init__(self, config_path: str = None):
        self.config: ConfigLoader = get_config(config_path)
        self.log = setup_logging(
            log_level=self.config.general.log_level,
            log_file=self.config.general.log_file or None,
        )
        self.scale: OrdinalScale = self.config.scale.to_scale()
        self.templates = PromptTemplates(self.config.templates.directory or None)
        self.store: Optional[RecordStore] = None
        self.backends: Optional[Backends] = None

    def _init_backends(self) -> Backends:
        """Build the rater, generator and judge for the configured backend"""
        cfg = self.config
        if cfg.backend.kind == 'synthetic':
            cfg.require_file(cfg.synthetic.latent, "synthetic.latent")
            panel = load_panel(cfg.synthetic.latent, noise_sd=cfg.synthetic.noise_sd)
            backends = Backends(
                rater=SyntheticRater(panel),
                generator=SyntheticGenerator(panel, cfg.synthetic.targeting_sd, cfg.general.seed),
                scorer=SyntheticCoherenceScorer(panel, cfg.synthetic.coherence, cfg.synthetic.coherence_bias_slope),
            )
        else:
            client = ChatCompletionClient(cfg.http)
            tp = cfg.templates
            backends = Backends(
                rater=HttpRater(client, self.templates, tp.rater, cfg.scale.rating_field,
                                cfg.scale.definitions_file),
                generator=HttpGenerator(client, cfg.http.generator_model),
                scorer=HttpCoherenceScorer(client, self.templates, tp.judge_soundness,
                                           tp.judge_grounding, cfg.http.judge_model),
            )

        if cfg.backend.cache_dir:
            self.store = RecordStore(cfg.backend.cache_dir)
            backends = Backends(
                rater=CachedRater(backends.rater, self.store),
                # synthetic newborns must register their latent bias, so never replay them
                generator=(backends.generator if cfg.backend.kind == 'synthetic'
                           else CachedGenerator(backends.generator, self.store)),
                scorer=CachedCoherenceScorer(backends.scorer, self.store),
            )
        self.log.info(f"Backend: {cfg.backend.kind} (rater {backends.rater.backend_id})")
        self.backends = backends
        return backends

    def _restore(self, personas: Sequence[Persona]):
        restore = getattr(self.backends.generator, "restore", None)
        if restore:
            restore(personas)

    def close(self):
        if self.store is not None:
            stats = self.store.stats()
            self.log.info(f"Cache: {stats['hits']} hits, {stats['misses']} misses")
        if self.backends is not None:
            self.backends.close()

    def _cases(self, path: str = None) -> List[Case]:
        path = path or self.config.dataset.test_cases or self.config.dataset.cases
        self.config.require_file(path, "dataset.cases")
        return read_cases(path, self.scale)

    # ---- commands ---------------------------------------------------------

    def evolve(self, out: Optional[str], resume: bool) -> Path:
        cfg = self.config
        run_dir = RunDirectory(out or cfg.general.output_dir).ensure()
        cases = read_cases(cfg.require_file(cfg.dataset.cases, "dataset.cases"), self.scale)
        seeds = read_personas(cfg.require_file(cfg.dataset.seed_personas, "dataset.seed_personas"))
        backends = self._init_backends()

        state = None
        if resume:
            state = resume_state(run_dir)
            self.log.info(f"Resuming {run_dir.root} at generation {state.generation}")
            if state.finished:
                self.log.info("Run already finished, nothing to do")
                return run_dir.root
        else:
            write_json(run_dir.config_path, {"config": cfg.to_dict()})

        run_evolution(seeds, cases, backends, self.scale, cfg.evolution, self.templates,
                      cfg.templates, run_dir, state)
        return run_dir.root

    def assemble(self, run: Optional[str], sizes: Sequence[int], out: Optional[str]) -> List[Path]:
        run_dir = RunDirectory(run or self.config.general.output_dir)
        pool = final_pool(run_dir)
        out_dir = Path(out) if out else run_dir.root
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for n in sizes:
            team = assemble_team(pool, n)
            path = out_dir / ("team.json" if len(sizes) == 1 else f"team_{n}.json")
            write_json(path, {**team_to_dict(team, self.scale.to_dict()), "source_run": str(run_dir.root)})
            self.log.info(f"Team of {n}: biases {', '.join(f'{b:.3f}' for b in team.biases)} -> {path}")
            written.append(path)
        return written

    def _team(self, path: str) -> List[Persona]:
        team = team_from_dict(read_json(path))
        self._init_backends()
        self._restore(team.members)
        return list(team.members)

    def infer(self, team_path: str, case_source: str, percentile: float, out: Optional[str]):
        members = self._team(team_path)
        text = sys.stdin.read() if case_source == '-' else Path(case_source).read_text(encoding='utf-8')
        cases, batch = parse_case_input(text, self.scale)
        results = []
        for output in collect_many(members, cases, self.backends.rater, self.scale,
                                   self.config.backend.parallelism):
            chosen = percentile_select(output, percentile)
            results.append({
                "case_id": output.case_id,
                "level": chosen.level,
                "rank": chosen.rank,
                "persona": chosen.persona_id,
                "percentile": percentile,
                "distribution": {str(k): v for k, v in output.distribution().items()},
            })
        if batch:
            body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in results)
        else:
            body = json.dumps(results[0], sort_keys=True, indent=2) + "\n"
        if out:
            Path(out).write_text(body, encoding='utf-8')
        else:
            sys.stdout.write(body)

    def curve(self, team_path: str, cases_path: Optional[str], grid: Sequence[float], out: str):
        members = self._team(team_path)
        cases = self._cases(cases_path)
        ambiguous, unambiguous = cases_by_split(cases)
        if not ambiguous:
            raise DomainError("curve needs ambiguous cases")
        cc = self.config.curve
        parallelism = self.config.backend.parallelism

        outputs = collect_many(members, ambiguous, self.backends.rater, self.scale, parallelism)
        curve = curve_from_outputs(outputs, grid, self.scale)
        by_case = {o.case_id: o for o in outputs}
        auc = ordinal_auc(curve)
        low, high, _ = bootstrap_ci(
            auc_metric(by_case, grid, self.scale), [c.id for c in ambiguous],
            cc.bootstrap_iterations, cc.confidence, self.config.general.seed,
        )

        safety = {}
        if unambiguous:
            safe_outputs = collect_many(members, unambiguous, self.backends.rater, self.scale, parallelism)
            case_map = {c.id: c for c in unambiguous}
            safety = {
                f"{p:g}": safety_accuracy(safe_outputs, case_map, p)
                for p in SAFETY_REPORT_PERCENTILES
            }

        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "curve.csv", 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(["P", "overtriage", "safe_rate"])
            for row in curve.rows:
                writer.writerow([f"{row.percentile:g}", repr(row.overtriage), repr(row.safe_rate)])

        distribution = percentile_distribution(selection_table(outputs, grid), self.scale)
        with open(out_dir / "distribution.csv", 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(["P"] + [f"level_{k}" for k in self.scale.levels])
            for p, shares in distribution.items():
                writer.writerow([f"{p:g}"] + [repr(shares[k]) for k in self.scale.levels])

        write_json(out_dir / "summary.json", {
            "auc": auc,
            "ci_low": low,
            "ci_high": high,
            "confidence": cc.confidence,
            "bootstrap_iterations": cc.bootstrap_iterations,
            "team_size": len(members),
            "n_cases": len(ambiguous),
            "operating_points": [list(p) for p in curve.points],
            "safety_accuracy": safety,
        })
        self.log.info(f"Ordinal AUC {auc:.4f} (CI {low:.4f}-{high:.4f}) over {len(ambiguous)} cases")

    def compare(self, team_path: str, cases_path: Optional[str], grid: Sequence[float],
                sampling_persona: Optional[str], out: str):
        members = self._team(team_path)
        cases = self._cases(cases_path)
        ambiguous, _ = cases_by_split(cases)
        if not ambiguous:
            raise DomainError("compare needs ambiguous cases")
        cfg = self.config
        seeds = read_personas(cfg.require_file(cfg.dataset.seed_personas, "dataset.seed_personas"))
        n = len(members)
        parallelism = cfg.backend.parallelism

        static = static_persona_baseline(seeds, min(n, len(seeds)), cfg.general.seed)
        if sampling_persona:
            matches = [p for p in list(members) + seeds if p.id == sampling_persona]
            if not matches:
                raise DomainError(f"unknown sampling persona {sampling_persona!r}")
            anchor = matches[0]
        else:
            # fitted biases carry the scale baseline; neutral means closest to it
            anchor = min(members, key=lambda p: (abs(p.bias - self.scale.baseline), p.id))
        sampled, samples = sampling_baseline(anchor, n)

        ids = [c.id for c in ambiguous]
        results: Dict[str, Dict] = {}
        for name, team, sample_ids in (
            ("team", members, None),
            ("static", static, None),
            ("sampling", sampled, samples),
        ):
            outputs = {
                c.id: collect_outputs(team, c, self.backends.rater, self.scale, parallelism, sample_ids)
                for c in ambiguous
            }
            metric = auc_metric(outputs, grid, self.scale)
            low, high, point = bootstrap_ci(
                metric, ids, cfg.curve.bootstrap_iterations, cfg.curve.confidence, cfg.general.seed,
            )
            results[name] = {"auc": point, "ci_low": low, "ci_high": high, "size": len(team)}

        report = {
            "auc_team": results["team"]["auc"],
            "auc_static": results["static"]["auc"],
            "auc_sampling": results["sampling"]["auc"],
            "gain_vs_static": results["team"]["auc"] - results["static"]["auc"],
            "gain_vs_sampling": results["team"]["auc"] - results["sampling"]["auc"],
            "sampling_persona": anchor.id,
            "static_personas": [p.id for p in static],
            "intervals": results,
        }
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "compare.json", report)
        self.log.info(
            f"AUC team {report['auc_team']:.4f}, static {report['auc_static']:.4f}, "
            f"sampling {report['auc_sampling']:.4f}"
        )


def parse_case_input(text: str, scale: OrdinalScale):
    """One JSON object, or JSONL for a batch. Returns (cases, is_batch)."""
    stripped = text.strip()
    if not stripped:
        raise DomainError("no case given")
    try:
        single = json.loads(stripped)
    except json.JSONDecodeError:
        single = None
    if isinstance(single, dict):
        return [case_from_dict(single, scale, "case")], False
    cases = []
    for number, line in enumerate(stripped.splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise DomainError(f"case line {number}: malformed JSON: {e}")
        if not isinstance(row, dict):
            raise DomainError(f"case line {number}: expected a JSON object")
        cases.append(case_from_dict(row, scale, f"case line {number}"))
    return cases, True


def simulate(args) -> Path:
    """Write cases.jsonl, seed_personas.jsonl, latent.json and steer.yaml"""
    scale = OrdinalScale(args.k_levels, args.most_urgent_level)
    dataset = simulate_dataset(
        n_cases=args.cases, n_personas=args.personas, seed=args.seed,
        ambiguous_fraction=args.ambiguous_fraction, spacing=args.spacing,
        safety_margin=args.safety_margin, scale=scale, noise_sd=args.noise_sd,
    )
    out = Path(args.out)
    write_dataset(dataset, out)
    config = {
        "general": {"log_level": "INFO", "output_dir": "run", "seed": args.seed},
        "scale": scale.to_dict(),
        "dataset": {"cases": "cases.jsonl", "seed_personas": "seed_personas.jsonl"},
        "backend": {"kind": "synthetic", "parallelism": 8},
        "synthetic": {"latent": "latent.json", "noise_sd": args.noise_sd, "targeting_sd": 0.0},
        "evolution": {"n_generations": 5, "target_pool_size": 75},
        "team": {"size": 10},
    }
    with open(out / "steer.yaml", 'w', encoding='utf-8') as f:
        yaml.safe_dump(config, f, sort_keys=False)
    get_logger().info(f"Simulated {len(dataset.cases)} cases and {len(dataset.personas)} personas in {out}")
    return out


def parse_grid(text: Optional[str], default: Sequence[float]) -> List[float]:
    if not text:
        return list(default)
    try:
        grid = [float(p) for p in text.split(',') if p.strip()]
    except ValueError:
        raise DomainError(f"malformed percentile grid {text!r}")
    if not grid or grid != sorted(grid) or any(not 0 <= p <= 100 for p in grid):
        raise DomainError(f"percentile grid {text!r} must be ascending values in [0, 100]")
    return grid


def write_error(out_dir: Optional[str], error: Exception, code: int):
    if not out_dir:
        return
    try:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / "error.json").write_text(dumps({
            "schema_version": SCHEMA_VERSION,
            "error": type(error).__name__,
            "message": str(error),
            "exit_code": code,
        }), encoding='utf-8')
    except OSError:
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="STEER Personas - evolve persona ensembles and steer their decisions"
    )
    parser.add_argument('-v', '--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    def with_config(p):
        p.add_argument('-c', '--config', default=None, help='Path to configuration file')
        return p

    p = sub.add_parser('simulate', help='Build a synthetic dataset and latent panel')
    p.add_argument('--cases', type=int, default=50)
    p.add_argument('--personas', type=int, default=8)
    p.add_argument('--seed', type=int, default=7)
    p.add_argument('--spacing', type=float, default=0.2, help='Latent bias spacing of seed personas')
    p.add_argument('--noise-sd', type=float, default=0.0)
    p.add_argument('--ambiguous-fraction', type=float, default=0.7)
    p.add_argument('--safety-margin', type=float, default=1.5)
    p.add_argument('--k-levels', type=int, default=5)
    p.add_argument('--most-urgent-level', type=int, default=1)
    p.add_argument('--out', default='synthetic')

    p = with_config(sub.add_parser('evolve', help='Run the evolutionary search'))
    p.add_argument('--out', default=None, help='Run directory (default general.output_dir)')
    p.add_argument('--resume', action='store_true', help='Continue from the last completed generation')

    p = with_config(sub.add_parser('assemble', help='Distill the final pool into teams'))
    p.add_argument('--run', default=None, help='Run directory (default general.output_dir)')
    p.add_argument('--team-size', type=int, nargs='+', default=None)
    p.add_argument('--out', default=None)

    p = with_config(sub.add_parser('infer', help='Percentile decision for one case or a batch'))
    p.add_argument('--team', required=True)
    p.add_argument('--case', default='-', help='Case JSON/JSONL file, or - for stdin')
    p.add_argument('--percentile', type=float, required=True)
    p.add_argument('--out', default=None)

    p = with_config(sub.add_parser('curve', help='Operating curve and ordinal AUC'))
    p.add_argument('--team', required=True)
    p.add_argument('--cases', default=None)
    p.add_argument('--grid', default=None, help='Comma-separated P values, e.g. 0,50,100')
    p.add_argument('--out', default='curve')

    p = with_config(sub.add_parser('compare', help='AUC gains over baselines'))
    p.add_argument('--team', required=True)
    p.add_argument('--cases', default=None)
    p.add_argument('--grid', default=None)
    p.add_argument('--sampling-persona', default=None)
    p.add_argument('--out', default='compare')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    app = None
    out_dir = getattr(args, 'out', None)
    try:
        if args.command == 'simulate':
            setup_logging()
            simulate(args)
            return EXIT_OK

        app = SteerApp(args.config)
        if args.command == 'evolve':
            out_dir = out_dir or app.config.general.output_dir
            app.evolve(args.out, args.resume)
        elif args.command == 'assemble':
            out_dir = out_dir or args.run or app.config.general.output_dir
            app.assemble(args.run, args.team_size or [app.config.team.size], args.out)
        elif args.command == 'infer':
            if not 0.0 <= args.percentile <= 100.0:
                raise DomainError(f"percentile {args.percentile} outside [0, 100]")
            out_dir = str(Path(args.out).parent) if args.out else None
            app.infer(args.team, args.case, args.percentile, args.out)
        elif args.command == 'curve':
            app.curve(args.team, args.cases, parse_grid(args.grid, app.config.curve.grid), args.out)
        elif args.command == 'compare':
            app.compare(args.team, args.cases, parse_grid(args.grid, app.config.curve.grid),
                        args.sampling_persona, args.out)
        return EXIT_OK
    except (SteerError, ConfigValidationError, yaml.YAMLError, OSError) as e:
        code = exit_code_for(e)
        get_logger().error(f"{type(e).__name__}: {e}")
        write_error(out_dir, e, code)
        return code
    finally:
        if app is not None:
            app.close()


if __name__ == "__main__":
    sys.exit(main())
