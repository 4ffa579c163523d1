"""Four-stage workflow over a run directory.

Layout::

    <run>/manifest.json              benchmark manifest (single writer)
    <run>/cases/<case_id>/           one directory per case
        manifest.json  reference.<ext>  action.<model>.*  state.json
        frames/  estimated.traj  reproj.jsonl  runner.log  report.json
    <run>/judge_cache/               VLM responses keyed by content hash
    <run>/reports/                   leaderboards

Every stage is hash-gated per case through ``state.json`` so reruns skip
finished work, and a failing case never aborts the batch.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .actions import ActionLibrary, SceneConstraintReport, filter_actions, parse_sequence, rotation_first_order, standard_library
from .adapters import DEFAULT_REGISTRY, dumps_payload, map_action, payload_filename
from .config import Config
from .geometry import align_to_first, load_trajectory, resample_nearest
from .harness import ContractViolation, EvaluationCase, run_case
from .judge import Judge, JudgeCache, JudgeError, analyze_scene, consistency_request
from .metrics import (
    METRIC_NAMES,
    MetricError,
    MetricReport,
    ScorerError,
    load_observations,
    reprojection_error,
    rotation_error,
    score_visual,
    translation_error,
)
from .report import correlate_human, format_correlation, load_rankings, write_reports
from .suite import ImageEntry, generate_synthetic_suite, load_image_suite
from .synth import synthesize

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


def _sha(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def _read_json(path: Path, default=None):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        return default


def _accumulate_stats(path: Path, stats: dict) -> None:
    """Judge counters summed over every stage invocation on this run directory."""
    total = _read_json(path, {}) or {}
    _write_json(path, {k: total.get(k, 0) + v for k, v in stats.items()})


# -- manifest ----------------------------------------------------------------------------

@dataclass
class BenchmarkManifest:
    images: list[dict]  # ImageEntry dicts plus "actions": [ids]
    models: list[str]
    cases: list[EvaluationCase]
    config: dict = field(default_factory=dict)
    library: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"images": self.images, "models": self.models, "config": self.config,
                "library": self.library, "cases": [c.to_dict() for c in self.cases]}

    @classmethod
    def from_dict(cls, d: dict) -> BenchmarkManifest:
        return cls(d["images"], d["models"], [EvaluationCase.from_dict(c) for c in d["cases"]],
                   d.get("config", {}), d.get("library", []))

    def save(self, run_dir: str | os.PathLike) -> Path:
        path = Path(run_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_json(path, self.to_dict())
        return path

    @classmethod
    def load(cls, run_dir: str | os.PathLike) -> BenchmarkManifest:
        path = Path(run_dir) / "manifest.json"
        if not path.exists():
            raise PipelineError(f"no manifest.json in {run_dir}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def manifest_config(manifest: BenchmarkManifest, run_dir: str | os.PathLike) -> Config:
    """The config snapshot taken at gen-cases; relative paths resolve against the run directory."""
    return Config.from_dict(manifest.config, base_dir=Path(run_dir).resolve())


@dataclass
class StageSummary:
    stage: str
    done: int = 0
    skipped: int = 0
    failed: int = 0
    failures: dict = field(default_factory=dict)

    def __str__(self) -> str:
        return f"{self.stage}: {self.done} done, {self.skipped} skipped, {self.failed} failed"


def _pool(fn: Callable, items: Sequence, jobs: int, summary: StageSummary) -> StageSummary:
    """Run ``fn(item) -> 'done'|'skipped'`` over items; exceptions count as failures."""
    def wrapped(item):
        try:
            return fn(item), None
        except Exception as exc:  # isolate per-case failures
            log.warning("%s failed for %s: %s", summary.stage, getattr(item, "case_id", item), exc)
            return "failed", f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as ex:
        for item, (status, err) in zip(items, ex.map(wrapped, items)):
            if status == "done":
                summary.done += 1
            elif status == "skipped":
                summary.skipped += 1
            else:
                summary.failed += 1
                summary.failures[getattr(item, "case_id", str(item))] = err
    return summary


def case_dir(run_dir: str | os.PathLike, case_id: str) -> Path:
    return Path(run_dir) / "cases" / case_id


def _state(cdir: Path) -> dict:
    return _read_json(cdir / "state.json", {}) or {}


def _set_state(cdir: Path, stage: str, entry: dict) -> None:
    state = _state(cdir)
    state[stage] = entry
    _write_json(cdir / "state.json", state)


# -- stage 1: image selection and case generation ----------------------------------------------

def select_actions(entry: ImageEntry, library: ActionLibrary, strategy: str, *, config: Config,
                   judge: Judge | None = None, explicit: dict | None = None, per_image: int = 5,
                   min_actions: int = 5, seed: int = 0) -> list:
    if strategy == "all":
        return library.ids
    if strategy == "file":
        if explicit is None or entry.name not in explicit:
            raise PipelineError(f"selection file has no entry for image {entry.name!r}")
        ids = explicit[entry.name]
        missing = [i for i in ids if i not in library]
        if missing:
            raise PipelineError(f"{entry.name}: unknown sequence ids {missing}")
        return list(ids)
    if strategy != "vlm":
        raise PipelineError(f"unknown selection strategy {strategy!r}")
    client = judge if judge is not None else Judge(config.scene_client())
    report: SceneConstraintReport = analyze_scene(
        entry.path, client, {"scene": entry.scene, "style": entry.style, "viewpoint": entry.viewpoint},
        case_id=entry.name)
    kept = filter_actions(report, library)
    if len(kept) < min_actions:
        pad = [i for i in rotation_first_order(library) if i not in kept]
        log.info("%s: scene filter kept %d sequences, padding to %d in rotation-first order",
                 entry.name, len(kept), min_actions)
        kept = kept + pad[:min_actions - len(kept)]
    if len(kept) > per_image:
        rng = random.Random(f"{seed}:{entry.name}")
        kept = rng.sample(kept, per_image)
    order = library.ids
    return sorted(kept, key=order.index)


def gen_cases(image_dir: str | os.PathLike, models: Sequence[str], run_dir: str | os.PathLike, *,
              select: str = "vlm", config: Config | None = None, selection_file: str | None = None,
              viewpoint: str | None = None, style: str | None = None, scene: str | None = None,
              tier: str | None = None, per_image: int = 5, min_actions: int = 5, seed: int = 0,
              library: ActionLibrary | None = None) -> BenchmarkManifest:
    """Select actions per image and write ``manifest.json`` with the derived case list."""
    config = config or Config()
    library = library or standard_library()
    if tier:
        library = ActionLibrary(tuple(s for s in library if s.tier and s.tier.value.lower() == tier.lower()))
        if not len(library):
            raise PipelineError(f"no library sequences in tier {tier!r}")
    for m in models:
        if m not in DEFAULT_REGISTRY:
            raise PipelineError(f"unknown model {m!r}; registered: {', '.join(DEFAULT_REGISTRY.ids())}")
    entries = [e for e in load_image_suite(image_dir) if e.matches(viewpoint, style, scene)]
    if not entries:
        raise PipelineError("no images left after filtering")
    explicit = None
    if select == "file":
        if not selection_file:
            raise PipelineError("--select file needs --selection-file")
        explicit = json.loads(Path(selection_file).read_text(encoding="utf-8"))
        explicit = {k: [int(i) if isinstance(i, str) and i.isdigit() else i for i in v] for k, v in explicit.items()}
    run_dir = Path(run_dir)
    scene_judge = Judge(config.scene_client(), JudgeCache(run_dir / "judge_cache"),
                        config.judge_retries, config.judge_backoff) if select == "vlm" else None
    images, cases = [], []
    for entry in entries:
        try:
            ids = select_actions(entry, library, select, config=config, judge=scene_judge, explicit=explicit,
                                 per_image=per_image, min_actions=min_actions, seed=seed)
        except JudgeError as exc:
            log.warning("%s: scene analysis failed (%s); falling back to rotation-first order", entry.name, exc)
            ids = sorted(rotation_first_order(library)[:min_actions], key=library.ids.index)
        images.append({**entry.to_dict(), "actions": ids})
        for model in models:
            if entry.viewpoint == "third" and not DEFAULT_REGISTRY[model].third_person:
                log.info("skipping %s for third-person image %s", model, entry.name)
                continue
            for sid in ids:
                seq = library[sid]
                cases.append(EvaluationCase(
                    case_id=f"{entry.name}__a{sid:02d}__{model}" if isinstance(sid, int) else f"{entry.name}__{sid}__{model}",
                    image=entry.path, viewpoint=entry.viewpoint, style=entry.style, scene=entry.scene,
                    sequence_id=sid, sequence=seq.serialize(), tier=seq.tier.value if seq.tier else None,
                    model_id=model))
    manifest = BenchmarkManifest(images, list(models), cases, config.snapshot(),
                                 [s.to_dict() for s in library])
    manifest.save(run_dir)
    if scene_judge is not None:
        _accumulate_stats(run_dir / "judge_stats.json", scene_judge.stats.to_dict())
    return manifest


# -- stage 2: action mapping ---------------------------------------------------------------------

def _case_manifest(case: EvaluationCase, config: Config, payload_name: str) -> dict:
    cal = config.calibration(case.model_id)
    doc = {"case": case.to_dict(), "calibration": cal.to_dict(), "payload": payload_name,
           "reference": "reference" + Path(case.image).suffix.lower(),
           "intrinsics": config.intrinsics(case.model_id).to_dict()}
    if case.model_id == "mock":
        doc["mock"] = config.mock_config().to_dict()
    return doc


def map_actions(run_dir: str | os.PathLike, config: Config | None = None, jobs: int = 1) -> StageSummary:
    manifest = BenchmarkManifest.load(run_dir)
    config = config or manifest_config(manifest, run_dir)

    def one(case: EvaluationCase) -> str:
        cdir = case_dir(run_dir, case.case_id)
        cdir.mkdir(parents=True, exist_ok=True)
        cal = config.calibration(case.model_id)
        seq = parse_sequence(case.sequence, id=case.sequence_id, custom=case.tier is None)
        ref_bytes = Path(case.image).read_bytes()
        key = _sha(case.to_dict(), cal.to_dict(), config.mock_config().to_dict(),
                   config.intrinsics(case.model_id).to_dict(), hashlib.sha256(ref_bytes).hexdigest())
        st = _state(cdir).get("map", {})
        if st.get("hash") == key and st.get("status") == "done" and (cdir / st.get("payload", "")).is_file():
            return "skipped"
        payload = map_action(case.model_id, seq, cal)
        name = payload_filename(case.model_id, payload)
        (cdir / name).write_text(dumps_payload(payload), encoding="utf-8", newline="\n")
        doc = _case_manifest(case, config, name)
        (cdir / doc["reference"]).write_bytes(ref_bytes)
        _write_json(cdir / "manifest.json", doc)
        _set_state(cdir, "map", {"hash": key, "status": "done", "payload": name})
        return "done"

    return _pool(one, manifest.cases, jobs, StageSummary("map-actions"))


# -- stage 3: generation ---------------------------------------------------------------------------

def run(run_dir: str | os.PathLike, config: Config | None = None, jobs: int = 1,
        runners: dict[str, Sequence[str]] | None = None) -> StageSummary:
    manifest = BenchmarkManifest.load(run_dir)
    config = config or manifest_config(manifest, run_dir)

    def one(case: EvaluationCase) -> str:
        cdir = case_dir(run_dir, case.case_id)
        state = _state(cdir)
        if state.get("map", {}).get("status") != "done":
            raise PipelineError("actions not mapped yet")
        runner = list(runners[case.model_id]) if runners and case.model_id in runners else config.runner(case.model_id)
        payload = cdir / state["map"]["payload"]
        key = _sha(state["map"]["hash"], payload.read_bytes(), (cdir / "manifest.json").read_bytes(),
                   [Path(runner[0]).name, *runner[1:]])
        st = state.get("run", {})
        if st.get("hash") == key and st.get("status") == "completed":
            return "skipped"
        try:
            result = run_case(runner, cdir, config.timeout, case.case_id)
        except ContractViolation as exc:
            _set_state(cdir, "run", {"hash": key, "status": "contract_violation", "reason": str(exc)})
            raise
        entry = {"hash": key, "status": result.status, "reason": result.reason,
                 "exit_code": result.exit_code, "frame_count": result.frame_count}
        if result.diagnostics:
            entry["diagnostics"] = result.diagnostics[-1000:]
        _set_state(cdir, "run", entry)
        if not result.completed:
            raise PipelineError(result.reason)
        return "done"

    return _pool(one, manifest.cases, jobs, StageSummary("run"))


# -- stage 4: metric evaluation ---------------------------------------------------------------------

def _output_digest(cdir: Path) -> str:
    h = hashlib.sha256()
    for name in ("estimated.traj", "reproj.jsonl", "video.mp4"):
        p = cdir / name
        h.update(name.encode())
        if p.exists():
            h.update(hashlib.sha256(p.read_bytes()).digest() if name != "video.mp4" else str(p.stat().st_size).encode())
    frames = cdir / "frames"
    if frames.is_dir():
        for f in sorted(frames.iterdir()):
            h.update(f"{f.name}:{f.stat().st_size}".encode())
    return h.hexdigest()


def evaluate_case(case: EvaluationCase, cdir: Path, config: Config, judge: Judge, scorers: dict) -> MetricReport:
    """All eight metrics for one case; unavailable inputs leave the metric incomplete."""
    report = MetricReport(case.case_id)
    incomplete = report.incomplete
    values: dict = {}
    frames_dir = cdir / "frames"

    for sid in ("aesthetic", "imaging"):
        try:
            values[sid] = score_visual(frames_dir, scorers[sid], config.visual_every)
        except (ScorerError, MetricError) as exc:
            incomplete[sid] = str(exc)

    est_path = cdir / "estimated.traj"
    if est_path.exists():
        cal = config.calibration(case.model_id)
        seq = parse_sequence(case.sequence, id=case.sequence_id, custom=case.tier is None)
        gt = synthesize(seq, cal)
        try:
            est = resample_nearest(load_trajectory(est_path, cal.frame_rate), gt.timestamps)
            gt_a, est_a = align_to_first(gt), align_to_first(est)
            values["translation_error"] = translation_error(gt_a, est_a)
            values["rotation_error"] = rotation_error(gt_a, est_a)
        except (ValueError, MetricError) as exc:
            incomplete["translation_error"] = incomplete["rotation_error"] = str(exc)
    else:
        incomplete["translation_error"] = incomplete["rotation_error"] = "no estimated.traj"

    reproj_path = cdir / "reproj.jsonl"
    if reproj_path.exists():
        try:
            values["reprojection_error"] = reprojection_error(load_observations(reproj_path),
                                                              config.intrinsics(case.model_id))
        except MetricError as exc:
            incomplete["reprojection_error"] = str(exc)
    else:
        incomplete["reprojection_error"] = "no reproj.jsonl"

    for kind in ("state", "content", "style"):
        try:
            req = consistency_request(kind, frames_dir, config.judge_samples, case.case_id,
                                      {"style": case.style, "viewpoint": case.viewpoint})
            values[kind] = judge(req).score
        except JudgeError as exc:
            incomplete[kind] = f"{exc.reason}: {exc}"
        except ValueError as exc:
            incomplete[kind] = str(exc)

    return MetricReport(case.case_id, **values, incomplete=incomplete)


def evaluate(run_dir: str | os.PathLike, config: Config | None = None, jobs: int = 1,
             judge: Judge | None = None) -> StageSummary:
    manifest = BenchmarkManifest.load(run_dir)
    config = config or manifest_config(manifest, run_dir)
    judge = judge or Judge(config.judge_client(), JudgeCache(Path(run_dir) / "judge_cache"),
                           config.judge_retries, config.judge_backoff)
    scorers = {sid: config.scorer(sid) for sid in ("aesthetic", "imaging")}
    eval_cfg = {k: config.data.get(k) for k in ("scorers", "judge", "visual_every", "calibration", "intrinsics")}

    def one(case: EvaluationCase) -> str:
        cdir = case_dir(run_dir, case.case_id)
        state = _state(cdir)
        run_state = state.get("run", {})
        if run_state.get("status") != "completed":
            raise PipelineError(f"generation not completed ({run_state.get('status', 'not run')})")
        key = _sha(run_state.get("hash"), _output_digest(cdir), eval_cfg)
        report_path = cdir / "report.json"
        if state.get("evaluate", {}).get("hash") == key and report_path.exists():
            return "skipped"
        report = evaluate_case(case, cdir, config, judge, scorers)
        doc = {**report.to_dict(), "model_id": case.model_id, "split": case.split,
               "sequence_id": case.sequence_id, "tier": case.tier}
        _write_json(report_path, doc)
        _set_state(cdir, "evaluate", {"hash": key, "status": "done" if report.complete else "partial"})
        return "done"

    summary = _pool(one, manifest.cases, jobs, StageSummary("evaluate"))
    _accumulate_stats(Path(run_dir) / "judge_stats.json", judge.stats.to_dict())
    return summary


def load_reports(run_dir: str | os.PathLike, manifest: BenchmarkManifest | None = None) -> list[dict]:
    """Evaluated case reports in manifest order; cases without a report are omitted."""
    manifest = manifest or BenchmarkManifest.load(run_dir)
    out = []
    for case in manifest.cases:
        doc = _read_json(case_dir(run_dir, case.case_id) / "report.json")
        if doc is not None:
            out.append(doc)
    return out


# -- reporting -----------------------------------------------------------------------------------

def report(run_dir: str | os.PathLike, formats: Sequence[str] = ("table", "csv", "json"),
           out_dir: str | os.PathLike | None = None) -> dict[str, Path]:
    reports = load_reports(run_dir)
    return write_reports(reports, out_dir or Path(run_dir) / "reports", formats)


def correlate(run_dir: str | os.PathLike, rankings_file: str | os.PathLike, dimension: str = "all") -> str:
    dims = METRIC_NAMES if dimension == "all" else (dimension,)
    results = correlate_human(load_reports(run_dir), load_rankings(rankings_file), dims)
    return format_correlation(results)


# -- end-to-end mock benchmark ---------------------------------------------------------------------

def scripted_judge_table(manifest: BenchmarkManifest, seed: int = 0) -> dict:
    """Deterministic per-case consistency scores for the scripted mock judge."""
    table = {}
    for case in manifest.cases:
        rng = random.Random(f"{seed}:{case.case_id}")
        table[case.case_id] = {kind: {"score": rng.randint(60, 95), "rationale": f"scripted {kind} score"}
                               for kind in ("state", "content", "style")}
    return table


@dataclass
class SuiteResult:
    run_dir: Path
    manifest: BenchmarkManifest
    stages: list[StageSummary]
    reports: dict[str, Path]

    @property
    def failed(self) -> int:
        return sum(s.failed for s in self.stages)


def mock_suite(run_dir: str | os.PathLike, *, seed: int = 0, jobs: int = 1, n_scenes: int = 50,
               per_image: int = 5, mock: dict | None = None) -> SuiteResult:
    """Synthetic images, faithful mock model, hash scorers and a scripted judge, through every stage."""
    run_dir = Path(run_dir)
    if run_dir.exists():
        shutil.rmtree(run_dir)
    images = run_dir / "images"
    generate_synthetic_suite(images, n_scenes=n_scenes, seed=seed)
    config = Config.from_dict({"mock": mock or {"mode": "faithful", "seed": seed},
                               "scene_judge": {"client": "rule"},
                               "judge": {"client": "scripted", "table": "judge_table.json", "backoff": 0.0}},
                              base_dir=run_dir)
    manifest = gen_cases(images, ["mock"], run_dir, select="vlm", config=config,
                         per_image=per_image, min_actions=per_image, seed=seed)
    _write_json(run_dir / "judge_table.json", scripted_judge_table(manifest, seed))
    stages = [map_actions(run_dir, config, jobs), run(run_dir, config, jobs), evaluate(run_dir, config, jobs)]
    for s in stages:
        log.info("%s", s)
    return SuiteResult(run_dir, manifest, stages, report(run_dir))
