"""Single-threaded request loop over stdin/stdout."""
from __future__ import annotations

import json
import logging
import sys

import jsonschema

from .prompts import PromptMap, PromptMapError
from .protocol import (HELLO_SCHEMA, PROTOCOL_VERSION, REQUEST_SCHEMA,
                       ProtocolError, decode_depth, decode_rgb, encode_rgb)

log = logging.getLogger(__name__)


class EchoBackend:
    """--dry-run: byte-deterministic identity. The response carries the
    incoming rgb payload untouched, so no codec round trip can perturb it."""

    def handle(self, request: dict) -> str:
        return request["rgb"]


class DiffusionBackend:
    def __init__(self, refiner, prompts: PromptMap):
        self.refiner = refiner
        self.prompts = prompts

    def handle(self, request: dict) -> str:
        rgb = decode_rgb(request["rgb"])
        depth = decode_depth(request["depth"])
        if rgb.shape[:2] != depth.shape[:2]:
            raise ProtocolError("rgb and depth resolutions differ")
        prompt = self.prompts.prompt_for(request["prompt_tag"])
        if request["type"] == "init_reference":
            out = self.refiner.init_reference(request["view_id"], rgb, depth,
                                              prompt, request["steps"])
        else:
            out = self.refiner.refine_reference(request["view_id"], rgb, depth,
                                                prompt, request["steps"])
        return encode_rgb(out)


def serve(backend, stdin=None, stdout=None) -> int:
    """Handshake, then one response per request line. Returns the exit code."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    line = stdin.readline()
    if not line:
        return 0
    try:
        hello = json.loads(line)
        jsonschema.validate(hello, HELLO_SCHEMA)
    except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
        print(json.dumps({"error": "bad_handshake", "message": str(exc)}), file=sys.stderr)
        return 1
    stdout.write(json.dumps({"type": "hello", "version": PROTOCOL_VERSION}) + "\n")
    stdout.flush()

    versions: dict[str, int] = {}
    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
            jsonschema.validate(request, REQUEST_SCHEMA)
        except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
            print(json.dumps({"error": "bad_request", "message": str(exc)}), file=sys.stderr)
            return 1
        try:
            reference_png = backend.handle(request)
        except (ProtocolError, PromptMapError) as exc:
            print(json.dumps({"error": "bad_request", "message": str(exc)}), file=sys.stderr)
            return 1
        vid = request["view_id"]
        versions[vid] = versions.get(vid, 0) + 1
        stdout.write(json.dumps({"view_id": vid, "reference_png": reference_png,
                                 "version": versions[vid]}) + "\n")
        stdout.flush()
    return 0
