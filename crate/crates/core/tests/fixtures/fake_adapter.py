#!/usr/bin/env python3
"""Scriptable stand-in for a detector adapter.

Answers each request with the ground-truth boxes of the requested image
(matched by file name), scored 1.0. --mode injects one kind of misbehavior.
"""
import argparse
import json
import os
import sys
import time

MODES = [
    "echo", "shuffle", "truncated", "garbage", "duplicate", "missing", "unknown-id",
    "error", "slow", "bad-handshake", "no-handshake", "exit", "extra", "bad-score",
]


def load_boxes(gt_path):
    if not gt_path:
        return {}
    with open(gt_path) as f:
        doc = json.load(f)
    names = {im["id"]: im["file_name"] for im in doc["images"]}
    boxes = {name: [] for name in names.values()}
    for a in doc["annotations"]:
        boxes[names[a["image_id"]]].append(a["bbox"])
    return boxes


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--mode", choices=MODES, default="echo")
    p.add_argument("--gt")
    p.add_argument("--log", help="append every request line here")
    p.add_argument("--target", type=int, default=2, help="request id the fault applies to")
    p.add_argument("--window", type=int, default=4, help="shuffle buffer size")
    args = p.parse_args()
    boxes = load_boxes(args.gt)
    out = sys.stdout

    def send(obj):
        out.write(json.dumps(obj) + "\n")
        out.flush()

    def answer(req):
        name = os.path.basename(req["image"])
        dets = [{"bbox": b, "score": 1.0, "phrase": req["prompt"]} for b in boxes.get(name, [])]
        return {"id": req["id"], "detections": dets}

    if args.mode == "bad-handshake":
        send({"id": 0, "ready": False})
        return
    if args.mode != "no-handshake":
        send({"id": 0, "ready": True})
    if args.mode == "exit":
        sys.exit(3)

    pending = []
    for line in sys.stdin:
        if args.log:
            with open(args.log, "a") as f:
                f.write(line)
        req = json.loads(line)
        rid = req["id"]
        if args.mode == "shuffle":
            pending.append(answer(req))
            if len(pending) >= args.window:
                for r in reversed(pending):
                    send(r)
                pending.clear()
            continue
        if rid == args.target:
            if args.mode == "truncated":
                out.write(json.dumps(answer(req))[:15])
                out.flush()
                return
            if args.mode == "garbage":
                out.write(json.dumps(answer(req))[:15] + "\n")
                out.flush()
                continue
            if args.mode == "duplicate":
                send(answer(req))
            elif args.mode == "missing":
                continue
            elif args.mode == "unknown-id":
                send({"id": 999, "detections": []})
                continue
            elif args.mode == "error":
                send({"id": rid, "error": "could not read image"})
                continue
            elif args.mode == "slow":
                time.sleep(30)
            elif args.mode == "bad-score":
                send({"id": rid, "detections": [{"bbox": [1, 1, 5, 5], "score": 1.5, "phrase": "x"}]})
                continue
        send(answer(req))
    for r in reversed(pending):
        send(r)
    if args.mode == "extra":
        send({"id": 1, "detections": []})


if __name__ == "__main__":
    try:
        main()
    except (BrokenPipeError, KeyboardInterrupt):
        # the harness hung up on us
        os._exit(0)
