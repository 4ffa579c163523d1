"""How the control-alignment metrics react to a model that ignores commands.

The mock model can follow actions faithfully, add pose noise, strafe instead
of turning, or never move. Each mode is scored against the ground truth.

Run: python demos/disobedience.py --seed 42
"""
import argparse

from worldmark.actions import standard_library
from worldmark.adapters import map_action
from worldmark.harness import MockModelConfig, mock_trajectory
from worldmark.metrics import rotation_error, translation_error
from worldmark.synth import profile_for, synthesize


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--sigma-r", type=float, default=2.0, help="noisy mode rotation noise, degrees")
    parser.add_argument("--sigma-t", type=float, default=0.05, help="noisy mode translation noise, metres")
    args = parser.parse_args()

    calib = profile_for("mock")
    modes = {
        "faithful": MockModelConfig(),
        "noisy": MockModelConfig.noisy(args.sigma_t, args.sigma_r, seed=args.seed),
        "swap": MockModelConfig("swap_rotation_for_strafe"),
        "static": MockModelConfig("static"),
    }
    print(f"{'seq':>3}  {'actions':<16}" + "".join(f"{m:>20}" for m in modes))
    print(f"{'':>3}  {'':<16}" + "".join(f"{'trans / rot':>20}" for _ in modes))
    for seq in standard_library():
        gt = synthesize(seq, calib)
        payload = map_action("mock", seq, calib)
        cells = []
        for cfg in modes.values():
            est = mock_trajectory(cfg, payload, calib)
            cells.append(f"{translation_error(gt, est, align=True):8.3f} / {rotation_error(gt, est, align=True):7.2f}")
        print(f"{seq.id:>3}  {seq.serialize():<16}" + "".join(f"{c:>20}" for c in cells))


if __name__ == "__main__":
    main()
