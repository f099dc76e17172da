"""JSON-lines request loop.

One request per line on stdin, one response per line on stdout, ids
echoed, strictly in order. Anything that goes wrong inside a request
becomes an error response; only shutdown or EOF ends the loop. The
parent process owns our lifetime, so there is nothing clever here: no
threads, no queues, no partial reads.
"""

from __future__ import annotations

import argparse
import json
import sys

from .backends import MockBackend
from .protocol import decode_mask, encode_mask, err, ok


def handle(req: dict, backend, state: dict) -> dict:
    req_id = req.get("id")
    cmd = req.get("cmd")
    if cmd == "init":
        objects = [(o["id"], o["frame"], decode_mask(o["mask_b64"]))
                   for o in req.get("objects", [])]
        backend.init(req.get("video_dir", ""), objects)
        state["ready"] = True
        return ok(req_id)
    if cmd == "segment":
        if not state.get("ready"):
            return err(req_id, "segment before init")
        mask = backend.segment(int(req["frame"]), req.get("prompts", []))
        return ok(req_id, mask_b64=encode_mask(mask))
    if cmd == "shutdown":
        backend.shutdown()
        state["done"] = True
        return ok(req_id)
    return err(req_id, f"unknown cmd {cmd!r}")


def serve(backend, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    state = {"ready": False, "done": False}
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError as e:
            resp = err(None, f"malformed request: {e}")
        else:
            try:
                resp = handle(req, backend, state)
            except Exception as e:  # backend failures must not kill the loop
                resp = err(req.get("id"), e)
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
        if state["done"]:
            break
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="prior-bridge")
    ap.add_argument("--backend", default="mock", choices=["mock"])
    ap.add_argument("--masks", default=None,
                    help="directory of per-frame mask containers to replay")
    ap.add_argument("--size", type=int, nargs=2, default=None,
                    metavar=("H", "W"),
                    help="resize replayed masks to this resolution")
    args = ap.parse_args(argv)
    size = tuple(args.size) if args.size else None
    backend = MockBackend(masks_dir=args.masks, size=size)
    return serve(backend)


if __name__ == "__main__":
    raise SystemExit(main())
