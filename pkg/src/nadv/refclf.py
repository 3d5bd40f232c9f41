"""Reference external classifier speaking the wire protocol.

Serves one of three targets over stdin/stdout:

    --constant LABEL          always answer LABEL (needs --input-dim/--num-classes)
    --threshold FEAT:VALUE    answer 1 when x[FEAT] > VALUE else 0 (needs --input-dim)
    --model PATH              serve a saved mlp or forest checkpoint

Used by the test suite as the canonical protocol peer and available as
`nadv-refclf` for wiring real external targets by example.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _serve(predict, input_dim: int, num_classes: int) -> int:
    out = sys.stdout
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            print(f"refclf: bad JSON: {e}", file=sys.stderr)
            return 1
        mtype = msg.get("type")
        if mtype == "hello":
            out.write(json.dumps({"type": "ready", "input_dim": input_dim,
                                  "num_classes": num_classes}) + "\n")
            out.flush()
        elif mtype == "query":
            batch = np.asarray(msg["instances"], dtype=np.float64)
            if batch.ndim != 2 or batch.shape[1] != input_dim:
                print(f"refclf: bad batch shape {batch.shape}",
                      file=sys.stderr)
                return 1
            labels = predict(batch)
            out.write(json.dumps({"type": "labels", "id": msg["id"],
                                  "labels": [int(v) for v in labels]}) + "\n")
            out.flush()
        else:
            print(f"refclf: unknown message type {mtype!r}", file=sys.stderr)
            return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nadv-refclf",
        description="Reference classifier process for the wire protocol.")
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--constant", type=int, metavar="LABEL",
                      help="always answer LABEL")
    mode.add_argument("--threshold", metavar="FEAT:VALUE",
                      help="answer 1 when x[FEAT] > VALUE else 0")
    mode.add_argument("--model", metavar="PATH",
                      help="serve a saved mlp or forest checkpoint")
    parser.add_argument("--input-dim", type=int)
    parser.add_argument("--num-classes", type=int)
    args = parser.parse_args(argv)

    if args.model is not None:
        from . import classify
        from .checkpoint import load_checkpoint

        handle = classify.handle_for(load_checkpoint(args.model))
        return _serve(lambda b: classify.query(handle, b),
                      handle.input_dim, handle.num_classes)

    if args.input_dim is None:
        parser.error("--input-dim is required without --model")
    if args.threshold is not None:
        feat_s, _, val_s = args.threshold.partition(":")
        try:
            feat, val = int(feat_s), float(val_s)
        except ValueError:
            parser.error(f"bad --threshold {args.threshold!r}, "
                         f"expected FEAT:VALUE")
        if not 0 <= feat < args.input_dim:
            parser.error(f"threshold feature {feat} outside input dim")
        return _serve(lambda b: (b[:, feat] > val).astype(int),
                      args.input_dim, 2)

    if args.num_classes is None:
        parser.error("--num-classes is required with --constant")
    if not 0 <= args.constant < args.num_classes:
        parser.error(f"constant label {args.constant} outside "
                     f"[0, {args.num_classes})")
    return _serve(lambda b: np.full(b.shape[0], args.constant, dtype=int),
                  args.input_dim, args.num_classes)


if __name__ == "__main__":
    sys.exit(main())
