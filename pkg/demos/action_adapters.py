"""Map one action sequence to every registered model's native control format.

Run: python demos/action_adapters.py "W:20,R:20"
"""
import argparse

from worldmark.actions import parse_sequence
from worldmark.adapters import DEFAULT_REGISTRY, dumps_payload, map_action
from worldmark.harness import interpret_trajectory
from worldmark.synth import profile_for, synthesize


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("sequence", nargs="?", default="W:20,R:20")
    args = parser.parse_args()

    seq = parse_sequence(args.sequence, custom=True)
    print(f"sequence {seq.serialize()} ({seq.duration:g} s, tier {seq.tier.value if seq.tier else 'custom'})")
    for model in sorted(DEFAULT_REGISTRY.ids()):
        calib = profile_for(model)
        payload = map_action(model, seq, calib)
        gt = synthesize(seq, calib)
        back = interpret_trajectory(payload, calib)
        end = gt[-1].t
        drift = float(abs(back.positions[-1] - gt.positions[-1]).max())
        text = dumps_payload(payload)
        print(f"{model:>13}  {type(payload).__name__:<20} {len(text):>8} bytes  "
              f"{len(gt)} frames  end ({end[0]:+.2f}, {end[1]:+.2f}, {end[2]:+.2f}) m  "
              f"round-trip drift {drift:.1e}")


if __name__ == "__main__":
    main()
