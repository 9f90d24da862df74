"""Command-line pipeline: synth, ingest, features, correlate, regress, train,
evaluate, explain, report, all.

Artifacts go under ``--out``; stdout only carries progress lines.
Exit codes: 0 ok, 2 missing input, 3 validation failure, 4 invariant
violation, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
import time
import traceback
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import gbt
from .cohort import IngestError, build_streams, iter_frame_log, load_trait_table, assemble_cohort
from .config import RunConfig
from .evaluation import _select_rows, bin_terciles, dumps_reports, run_all, write_accuracy_table
from .explain import bar_data, rank_importance, tree_shap, write_attributions
from .features import FeatureMatrix, build_feature_matrix
from .report import alluvial_links, write_descriptives, write_regression_tables
from .resample import balance
from .stats import correlation_table, forward_select
from .synth import GroundTruth, PlantSpec, plant_cohort, strong_links, verify_recovery
from .taxonomy import FEATURE_NAMES, TRAIT_NAMES

STAGES = ("ingest", "features", "correlate", "regress", "train", "evaluate", "explain", "report")
EXIT_MISSING, EXIT_INVALID, EXIT_INVARIANT = 2, 3, 4


class MissingInput(FileNotFoundError):
    pass


class InvariantViolation(RuntimeError):
    pass


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _csv_text(writer, *args, **kwargs) -> str:
    buf = io.StringIO()
    writer(*args, buf, **kwargs)
    return buf.getvalue()


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_meta(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed}


def _progress(msg: str) -> None:
    print(msg, flush=True)


class Pipeline:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)

    # -- inputs ---------------------------------------------------------------

    def frames_path(self) -> Path:
        return Path(self.cfg.frames) if self.cfg.frames else self.out / "synth" / f"frames.{self.cfg.synth.format}"

    def traits_path(self) -> Path:
        return Path(self.cfg.traits) if self.cfg.traits else self.out / "synth" / "traits.csv"

    def need(self, path: Path) -> Path:
        if not path.exists():
            raise MissingInput(f"required input not found: {path}")
        return path

    def traits(self):
        return load_trait_table(self.need(self.traits_path()))

    def features(self) -> FeatureMatrix:
        with open(self.need(self.out / "features" / "feature_matrix.csv"), encoding="utf-8", newline="") as fh:
            return FeatureMatrix.from_csv(fh)

    def joined(self):
        fm = self.features()
        traits = self.traits().subset(fm.participants)
        return fm, traits

    def _manifest(self, stage: str, artifacts: list[Path], inputs: list[Path] = ()) -> None:
        rel = lambda p: p.relative_to(self.out).as_posix() if self.out in p.parents else p.name  # noqa: E731
        _write_json(
            self.out / stage / "manifest.json",
            {
                "schema_version": "1.0",
                "stage": stage,
                **_run_meta(self.cfg),
                "config": self.cfg.analysis_dict(),
                "inputs": {rel(p): _sha(p) for p in inputs},
                "artifacts": {rel(p): _sha(p) for p in sorted(artifacts)},
            },
        )

    def _per_trait(self, fn, traits):
        if self.cfg.workers <= 1:
            return [fn(t) for t in traits]
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            return list(pool.map(fn, traits))

    # -- stages ---------------------------------------------------------------

    def synth(self) -> None:
        s = self.cfg.synth
        links = strong_links(s.beta, s.rho) if s.planted else ()
        spec = PlantSpec(
            n_participants=s.n_participants,
            links=links,
            frame_rate_hz=s.frame_rate_hz,
            jitter_concentration=s.jitter_concentration,
            video_missing=s.video_missing,
            seed=self.cfg.seed,
        )
        cohort = plant_cohort(spec)
        paths = cohort.write(self.out / "synth", s.format)
        self._manifest("synth", list(paths.values()))
        _progress(f"synth: {s.n_participants} participants, {len(links)} planted links")

    def ingest(self) -> None:
        frames, traits_path = self.need(self.frames_path()), self.need(self.traits_path())
        fmt = "csv" if frames.suffix.lower() == ".csv" else "jsonl"
        try:
            streams, validation = build_streams(iter_frame_log(frames, fmt))
            traits = load_trait_table(traits_path)
            _, assembly = assemble_cohort(streams, traits)
        except IngestError as exc:
            report = _write_json(
                self.out / "ingest" / "validation_report.json",
                {"ok": False, "error": str(exc), "line": exc.line, "column": exc.column, **_run_meta(self.cfg)},
            )
            exc.report_path = report
            raise
        report = _write_json(
            self.out / "ingest" / "validation_report.json",
            {"ok": True, "frames": validation.to_dict(), "assembly": assembly.to_dict(), **_run_meta(self.cfg)},
        )
        self._manifest("ingest", [report], [frames, traits_path])
        _progress(f"ingest: {validation.retained}/{validation.total} frames kept, {assembly.participants} participants")

    def features_stage(self) -> None:
        frames, traits_path = self.need(self.frames_path()), self.need(self.traits_path())
        fmt = "csv" if frames.suffix.lower() == ".csv" else "jsonl"
        streams, _ = build_streams(iter_frame_log(frames, fmt))
        traits = load_trait_table(traits_path)
        cohort, _ = assemble_cohort(streams, traits)
        fm = build_feature_matrix(cohort, self.cfg.aggregation)
        if fm.values.shape[1] != len(FEATURE_NAMES):
            raise InvariantViolation("feature matrix width is not 105")
        present = fm.values[~np.isnan(fm.values)]
        if present.size and (present.min() < 0 or present.max() > 1):
            raise InvariantViolation("feature value outside [0, 1]")
        d = self.out / "features"
        arts = [
            _write_text(d / "feature_matrix.csv", fm.to_csv_string()),
            _write_json(d / "feature_matrix.json", {**fm.to_json(), "run": _run_meta(self.cfg)}),
            _write_text(d / "trait_descriptives.csv", _csv_text(write_descriptives, cohort.traits)),
        ]
        self._manifest("features", arts, [frames, traits_path])
        _progress(f"features: {len(fm.participants)} x {fm.values.shape[1]}")

    def correlate(self) -> None:
        fm, traits = self.joined()
        table = correlation_table(fm, traits)
        d = self.out / "correlate"
        buf = io.StringIO()
        import csv

        csv.writer(buf, lineterminator="\n").writerows(table.to_rows())
        arts = [
            _write_text(d / "correlations.csv", buf.getvalue()),
            _write_json(d / "correlations.json", {**table.to_json(), "run": _run_meta(self.cfg)}),
        ]
        self._manifest("correlate", arts, [self.out / "features" / "feature_matrix.csv"])
        _progress("correlate: 105 x 22 grid")

    def regress(self) -> None:
        fm, traits = self.joined()

        def one(t):
            ids, X, scores = _select_rows(fm, traits, t)
            return forward_select(FeatureMatrix(tuple(ids), X), scores, self.cfg.selection, dependent=t)

        models = dict(zip(TRAIT_NAMES, self._per_trait(one, TRAIT_NAMES)))
        for m in models.values():
            if any(v > self.cfg.vif_max for v in m.vifs.values()):
                raise InvariantViolation(f"{m.dependent}: selected term exceeds the VIF limit")
        d = self.out / "regress"
        arts = [
            _write_json(d / "regressions.json", {
                "schema_version": "1.0", "run": _run_meta(self.cfg),
                "models": [m.to_json() for m in models.values()],
            }),
            _write_text(d / "regressions.csv", _csv_text(write_regression_tables, models)),
        ]
        self._manifest("regress", arts, [self.out / "features" / "feature_matrix.csv"])
        _progress(f"regress: {sum(len(m.terms) for m in models.values())} terms selected")

    def train(self) -> None:
        fm, traits = self.joined()
        cfg = self.cfg

        def one(t):
            _, X, scores = _select_rows(fm, traits, t)
            labels, edges = bin_terciles(scores, cfg.binning)
            plan = cfg.experiment.resample
            if plan.strategy != "none":
                strategy = "smote" if plan.strategy == "auto" else plan.strategy
                rng = np.random.default_rng([cfg.seed, TRAIT_NAMES.index(t), 5])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", UserWarning)
                    bal = balance(X, labels, replace(plan, strategy=strategy), rng)
                X, labels = bal.features, bal.labels
            model = gbt.train(X, labels, cfg.boost)
            return {"trait": t, "edges": asdict(edges), "run": _run_meta(cfg), "ensemble": model.to_json()}

        d = self.out / "train" / "ensembles"
        arts = [_write_json(d / f"{obj['trait']}.json", obj) for obj in self._per_trait(one, TRAIT_NAMES)]
        self._manifest("train", arts, [self.out / "features" / "feature_matrix.csv"])
        _progress(f"train: {len(arts)} ensembles")

    def evaluate(self) -> None:
        fm, traits = self.joined()
        reports = run_all(fm, traits, self.cfg.experiment, workers=self.cfg.workers)
        if self.cfg.mode == "leak_free" and any(r.n_synthetic_eval for r in reports):
            raise InvariantViolation("synthetic rows reached an evaluation split")
        d = self.out / "evaluate"
        body = json.loads(dumps_reports(reports))
        body["run"] = _run_meta(self.cfg)
        arts = [
            _write_json(d / "eval_reports.json", body),
            _write_text(d / "accuracy_holdout.csv", _csv_text(write_accuracy_table, reports, which="holdout")),
            _write_text(d / "accuracy_cv.csv", _csv_text(write_accuracy_table, reports, which="cv")),
        ]
        self._manifest("evaluate", arts, [self.out / "features" / "feature_matrix.csv"])
        mean_k = np.mean([r.holdout_kappa for r in reports])
        _progress(f"evaluate: mean holdout kappa {mean_k:.3f} ({self.cfg.mode})")

    def explain(self) -> None:
        fm, traits = self.joined()
        ens_dir = self.out / "train" / "ensembles"

        def one(t):
            obj = json.loads(self.need(ens_dir / f"{t}.json").read_text(encoding="utf-8"))
            model = gbt.Ensemble.from_json(obj["ensemble"])
            ids, X, _ = _select_rows(fm, traits, t)
            att = tree_shap(model, X)
            if np.abs(att.total() - model.margin(X)).max() > 1e-9:
                raise InvariantViolation(f"{t}: SHAP values do not add up to the model margin")
            ranking = rank_importance(model, X, attribution=att)
            return t, _csv_text(write_attributions, att, row_ids=ids), bar_data(ranking, self.cfg.top_k, t)["bars"]

        d = self.out / "explain"
        arts, bars = [], {}
        for t, text, b in self._per_trait(one, TRAIT_NAMES):
            arts.append(_write_text(d / f"{t}_shap.csv", text))
            bars[t] = b
        arts.append(_write_json(d / "shap_bars.json", {"schema_version": "1.0", "run": _run_meta(self.cfg), "traits": bars}))
        self._manifest("explain", arts, sorted(ens_dir.glob("*.json")))
        _progress(f"explain: SHAP rankings for {len(bars)} traits")

    def report(self) -> None:
        reg_path = self.need(self.out / "regress" / "regressions.json")
        regs = json.loads(reg_path.read_text(encoding="utf-8"))["models"]
        inputs = [reg_path]
        bars = None
        bars_path = self.out / "explain" / "shap_bars.json"
        if bars_path.exists():
            bars = json.loads(bars_path.read_text(encoding="utf-8"))["traits"]
            inputs.append(bars_path)
        d = self.out / "report"
        alluvial = alluvial_links(regs, bars)
        alluvial["run"] = _run_meta(self.cfg)
        arts = [_write_json(d / "alluvial.json", alluvial)]
        truth_path = self.out / "synth" / "ground_truth.json"
        corr_path = self.out / "correlate" / "correlations.json"
        eval_path = self.out / "evaluate" / "eval_reports.json"
        if truth_path.exists() and corr_path.exists() and bars is not None:
            arts.append(_write_json(d / "recovery.json", self._recovery(truth_path, corr_path, eval_path, regs, bars)))
            inputs += [truth_path, corr_path]
        self._manifest("report", arts, inputs)
        _progress("report: alluvial link table written")

    def _recovery(self, truth_path, corr_path, eval_path, regs, bars) -> dict:
        from types import SimpleNamespace

        from .explain import ImportanceEntry
        from .synth import PlantedLink

        truth_obj = json.loads(truth_path.read_text(encoding="utf-8"))
        corr = json.loads(corr_path.read_text(encoding="utf-8"))
        links = tuple(
            PlantedLink(l["trait"], l["feature"], l["beta"], l["sigma"]) for l in truth_obj["links"]
        )
        truth = GroundTruth(truth_obj["cohort_id"], tuple(truth_obj["participants"]), None, None, links, None)
        r = np.array([[np.nan if c is None else c["r"] for c in row] for row in corr["cells"]])
        table = SimpleNamespace(participants=self.features().participants, r_matrix=lambda: r)
        models = {m["dependent"]: SimpleNamespace(term_names=tuple(t["name"] for t in m["terms"])) for m in regs}
        rankings = {t: [ImportanceEntry(b["feature"], b["mean_abs_shap"], b["direction"]) for b in bs] for t, bs in bars.items()}
        reports = []
        if eval_path.exists():
            reports = [SimpleNamespace(**r) for r in json.loads(eval_path.read_text(encoding="utf-8"))["reports"]]
        score = verify_recovery(reports, models, table, truth, rankings)
        return {**score.to_json(), "run": _run_meta(self.cfg)}

    def refresh_manifest(self) -> None:
        artifacts = {}
        for p in sorted(self.out.rglob("*")):
            if p.is_file() and p.name != "manifest.json" and p.name != "error.json":
                artifacts[p.relative_to(self.out).as_posix()] = _sha(p)
        _write_json(self.out / "manifest.json", {"schema_version": "1.0", **_run_meta(self.cfg), "artifacts": artifacts})

    def run(self, command: str) -> None:
        steps = {
            "synth": self.synth,
            "ingest": self.ingest,
            "features": self.features_stage,
            "correlate": self.correlate,
            "regress": self.regress,
            "train": self.train,
            "evaluate": self.evaluate,
            "explain": self.explain,
            "report": self.report,
        }
        todo = STAGES if command == "all" else (command,)
        for stage in todo:
            t0 = time.perf_counter()
            steps[stage]()
            _progress(f"  [{stage} done in {time.perf_counter() - t0:.1f}s]")
        self.refresh_manifest()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facetrait", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=("synth",) + STAGES + ("all",))
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--mode", choices=("leak-free", "paper-replication"), help="evaluation mode")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--workers", type=int, help="worker threads for per-trait stages")
    parser.add_argument("--frames", help="frame log (JSONL or CSV)")
    parser.add_argument("--traits", help="trait score CSV")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode.replace("-", "_")
    if args.out is not None:
        overrides["out"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.frames is not None:
        overrides["frames"] = args.frames
    if args.traits is not None:
        overrides["traits"] = args.traits
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except FileNotFoundError as exc:
        print(json.dumps({"error": "missing_input", "detail": str(exc)}), file=sys.stderr)
        return EXIT_MISSING
    except ValueError as exc:
        print(json.dumps({"error": "invalid_config", "detail": str(exc)}), file=sys.stderr)
        return EXIT_INVALID
    pipeline = Pipeline(cfg)
    try:
        pipeline.run(args.command)
    except MissingInput as exc:
        return _fail(pipeline, "missing_input", exc, EXIT_MISSING)
    except (IngestError, ValueError) as exc:
        return _fail(pipeline, "validation_failed", exc, EXIT_INVALID)
    except InvariantViolation as exc:
        return _fail(pipeline, "invariant_violation", exc, EXIT_INVARIANT)
    except Exception as exc:  # noqa: BLE001
        return _fail(pipeline, "internal_error", exc, 1, tb=True)
    return 0


def _fail(pipeline: Pipeline, kind: str, exc: Exception, code: int, tb: bool = False) -> int:
    err = {"error": kind, "detail": str(exc), "exit_code": code}
    report = getattr(exc, "report_path", None)
    if report is not None:
        err["report"] = str(report)
    if tb:
        err["traceback"] = traceback.format_exc()
    pipeline.out.mkdir(parents=True, exist_ok=True)
    _write_json(pipeline.out / "error.json", err)
    print(json.dumps(err), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
