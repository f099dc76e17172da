"""Client for an external promptable-segmenter subprocess.

The child speaks newline-delimited JSON over its standard streams.
Requests carry an id and a cmd (init / segment / shutdown); every
response echoes the id with status ok or error. Label masks travel
base64-encoded as row-major uint8. The child is spawned and owned here;
calls are strictly sequential.
"""

from __future__ import annotations

import base64
import json
import shlex
import subprocess

import numpy as np


class BridgeError(RuntimeError):
    pass


def encode_mask(mask: np.ndarray) -> str:
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    return base64.b64encode(m.tobytes()).decode("ascii")


def decode_mask(b64: str, height: int, width: int) -> np.ndarray:
    buf = base64.b64decode(b64)
    if len(buf) != height * width:
        raise BridgeError(
            f"mask payload is {len(buf)} bytes, expected {height * width}")
    return np.frombuffer(buf, dtype=np.uint8).reshape(height, width)


class BridgeSegmenter:
    """Adapts a bridge subprocess to the segmenter interface.

    The prompt-refinement loop treats any raised BridgeError like a
    failed segmentation (the prior is kept), so a flaky child degrades
    gracefully instead of killing the run.
    """

    def __init__(self, command, height: int, width: int):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE,
                                     stdout=subprocess.PIPE, text=True,
                                     bufsize=1)
        self.height = height
        self.width = width
        self._id = 0

    def _call(self, payload: dict) -> dict:
        if self.proc.poll() is not None:
            raise BridgeError("bridge process has exited")
        self._id += 1
        msg = {"id": self._id, **payload}
        self.proc.stdin.write(json.dumps(msg) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise BridgeError("bridge closed its output stream")
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as e:
            raise BridgeError(f"unparseable bridge response: {e}") from e
        if resp.get("id") != self._id:
            raise BridgeError(f"response id {resp.get('id')} != request {self._id}")
        if resp.get("status") != "ok":
            raise BridgeError(str(resp.get("message", "bridge error")))
        return resp

    def initialize(self, video_dir: str, objects) -> None:
        """objects: iterable of (object_id, frame, label-or-bool mask)."""
        self._call({
            "cmd": "init",
            "video_dir": str(video_dir),
            "objects": [
                {"id": int(k), "frame": int(t), "mask_b64": encode_mask(m)}
                for k, t, m in objects
            ],
        })

    def init_from_dataset(self, dataset, video_dir: str = "") -> None:
        first = dataset.frames[0].mask
        objects = [(k, 0, first == k) for k in range(1, dataset.num_objects + 1)]
        self.initialize(video_dir, objects)

    def segment(self, t: int, prompt_sets, current_mask=None) -> np.ndarray:
        prompts = [
            {
                "object": int(ps.object_id),
                "box": [int(v) for v in ps.box],
                "points": [[float(x), float(y), int(bool(p))]
                           for x, y, p in ps.points],
            }
            for ps in prompt_sets
        ]
        resp = self._call({"cmd": "segment", "frame": int(t), "prompts": prompts})
        return decode_mask(resp["mask_b64"], self.height, self.width).astype(np.int32)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self._call({"cmd": "shutdown"})
            except BridgeError:
                pass
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.kill()
        if self.proc.stdin:
            self.proc.stdin.close()
        if self.proc.stdout:
            self.proc.stdout.close()

    def __enter__(self) -> "BridgeSegmenter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
