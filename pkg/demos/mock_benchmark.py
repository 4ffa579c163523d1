"""End-to-end benchmark on a small synthetic image suite with the mock model.

Equivalent to `worldmark mock-suite RUN_DIR --scenes N`, with the stages
spelled out so each one can be inspected.

Run: python demos/mock_benchmark.py /tmp/wm-demo --scenes 2
"""
import argparse
import json
import shutil
from pathlib import Path

from worldmark import pipeline
from worldmark.config import Config
from worldmark.suite import generate_synthetic_suite


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--scenes", type=int, default=2)
    parser.add_argument("--jobs", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.run_dir.exists():
        shutil.rmtree(args.run_dir)
    images = args.run_dir / "images"
    generate_synthetic_suite(images, n_scenes=args.scenes, seed=args.seed)

    # rule-based scene analysis picks actions; a fixed judge scores consistency
    config = Config.from_dict({"scene_judge": {"client": "rule"},
                               "judge": {"client": "fixed", "response": {"score": 75, "rationale": "demo"}}},
                              base_dir=args.run_dir)
    manifest = pipeline.gen_cases(images, ["mock"], args.run_dir, config=config, seed=args.seed)
    for img in manifest.images:
        print(f"{img['name']:<20} {img['scene']:<7} actions {img['actions']}")

    for stage in (pipeline.map_actions, pipeline.run, pipeline.evaluate):
        print(stage(args.run_dir, config, args.jobs))

    written = pipeline.report(args.run_dir)
    print()
    print(written["table"].read_text(), end="")
    stats = json.loads((args.run_dir / "judge_stats.json").read_text())
    print(f"judge: {stats['requests']} requests, {stats['cache_hits']} cache hits, "
          f"{stats['network_calls']} network calls")


if __name__ == "__main__":
    main()
