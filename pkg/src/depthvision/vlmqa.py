"""VQA evaluation against an opaque vision-language service, scored as Top-1 accuracy."""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import decode_png, encode_png
from .lama import FusionMode, LamaConfig, mean_luminance, to_gray
from .simgen import CLASSES

log = logging.getLogger(__name__)

CATEGORIES = ("exist", "count", "object")
CATEGORY_LABELS = {"exist": "Exist (Safety Critical)", "count": "Count", "object": "Object"}
CONDITIONS = ("day", "night", "all")
MODES = ("camera", "full", "pixelwise")
NO_ANSWER = "no answer"

PROMPT_TEMPLATES = {
    "exist": "{question} Answer with a single number.",
    "count": "{question} Answer with a single number.",
    "object": "{question} Answer with one word: car, truck, pedestrian or pole.",
}

NUMBER_WORDS = {
    w: i for i, w in enumerate(
        "zero one two three four five six seven eight nine ten eleven twelve thirteen "
        "fourteen fifteen sixteen seventeen eighteen nineteen twenty".split()
    )
}

CLASS_LEXICON = {c: c for c in CLASSES}
CLASS_LEXICON.update({
    "cars": "car", "automobile": "car", "automobiles": "car", "sedan": "car", "suv": "car",
    "trucks": "truck", "lorry": "truck", "lorries": "truck", "bus": "truck",
    "pedestrians": "pedestrian", "person": "pedestrian", "people": "pedestrian",
    "man": "pedestrian", "woman": "pedestrian", "child": "pedestrian", "walker": "pedestrian",
    "poles": "pole", "post": "pole", "lamppost": "pole", "pillar": "pole",
})

_TOKEN = re.compile(r"[a-z]+|\d+")


class EndpointError(RuntimeError):
    """Transient failure; the request may be retried."""


class MalformedResponse(RuntimeError):
    pass


@dataclass(frozen=True)
class VlmRequest:
    image_png: bytes
    prompt: str
    model: str = "mock"
    temperature: float = 0.0
    sample_id: str = ""  # local bookkeeping, never sent

    def payload(self) -> dict:
        return {
            "model": self.model,
            "prompt": self.prompt,
            "image_base64": base64.b64encode(self.image_png).decode("ascii"),
            "temperature": self.temperature,
        }

    @property
    def image_sha256(self) -> str:
        return hashlib.sha256(self.image_png).hexdigest()


def parse_answer(text: str | None, category: str):
    """Normalize a free-text answer; returns an int, a class label, or ``NO_ANSWER``."""
    if not text:
        return NO_ANSWER
    for tok in _TOKEN.findall(text.lower()):
        if category in ("count", "exist"):
            if tok.isdigit():
                return int(tok)
            if tok in NUMBER_WORDS:
                return NUMBER_WORDS[tok]
        elif tok in CLASS_LEXICON:
            return CLASS_LEXICON[tok]
    return NO_ANSWER


# --- endpoints ---------------------------------------------------------------


class HttpEndpoint:
    """POST ``{model, prompt, image_base64, temperature}``; expects ``{"text": ...}`` back."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, req: VlmRequest) -> str:
        body = json.dumps(req.payload()).encode()
        http_req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(http_req, timeout=self.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as e:
            if e.code >= 500 or e.code == 429:
                raise EndpointError(f"HTTP {e.code}") from e
            raise MalformedResponse(f"HTTP {e.code}") from e
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as e:
            raise EndpointError(str(e)) from e
        try:
            text = json.loads(raw)["text"]
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedResponse(f"bad response body: {raw[:80]!r}") from e
        if not isinstance(text, str):
            raise MalformedResponse("response 'text' is not a string")
        return text


def _stable_rng(*parts) -> np.random.Generator:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


def wrong_answer(gt, category: str, sample_id: str):
    """A deterministic incorrect answer for ``gt``."""
    rng = _stable_rng("wrong", sample_id)
    if category == "object":
        options = [c for c in CLASSES if c != gt]
    else:
        options = [k for k in range(max(int(gt) + 4, 6)) if k != gt]
    return options[int(rng.integers(len(options)))]


class MockEndpoint:
    """In-process stand-in for a VLM.

    ``oracle`` always answers the ground truth.  ``luminance`` answers it only
    when the image mean luminance is at least ``threshold``, otherwise a
    deterministic wrong answer.
    """

    def __init__(self, policy: str, answer_key: dict | None = None, threshold: float = 0.15):
        if policy not in ("oracle", "luminance"):
            raise ValueError(f"unknown mock policy {policy!r}")
        self.policy = policy
        self.answer_key = answer_key or {}
        self.threshold = threshold

    def __call__(self, req: VlmRequest) -> str:
        try:
            category, gt = self.answer_key[req.sample_id]
        except KeyError:
            return "I am not sure."
        if self.policy == "luminance":
            lum = mean_luminance(to_gray(decode_png(req.image_png)))
            if lum < self.threshold:
                gt = wrong_answer(gt, category, req.sample_id)
        if category == "object":
            return f"It appears to be a {gt}."
        return f"There are {gt}."


class ReplayEndpoint:
    """Answers from a saved transcript, keyed by sample, prompt and image hash."""

    def __init__(self, path):
        self.table = {}
        for line in Path(path).read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                self.table[(rec["sample_id"], rec["prompt"], rec["image_sha256"])] = rec["response"]

    def __call__(self, req: VlmRequest) -> str:
        key = (req.sample_id, req.prompt, req.image_sha256)
        if key not in self.table:
            raise MalformedResponse(f"no transcript entry for {req.sample_id}")
        text = self.table[key]
        if text is None:
            raise MalformedResponse("transcript recorded no answer")
        return text


def make_endpoint(spec: str, answer_key: dict | None = None, timeout: float = 30.0):
    """``mock:<policy>``, ``replay:<transcript>`` or an http(s) URL."""
    if spec.startswith("mock:"):
        return MockEndpoint(spec[5:], answer_key)
    if spec.startswith("replay:"):
        return ReplayEndpoint(spec[7:])
    if spec.startswith(("http://", "https://")):
        return HttpEndpoint(spec, timeout)
    raise ValueError(f"unrecognized endpoint {spec!r}")


def query_vlm(endpoint, req: VlmRequest, attempts: int = 3, backoff: float = 0.5,
              sleep=time.sleep) -> tuple[str | None, list[dict]]:
    """Query with retries; returns ``(text or None, log entries)``."""
    entries = []
    for attempt in range(attempts):
        try:
            text = endpoint(req)
        except EndpointError as e:
            entries.append({"attempt": attempt, "error": f"transient: {e}", "response": None})
            if attempt + 1 < attempts:
                sleep(backoff * 2 ** attempt)
            continue
        except MalformedResponse as e:
            entries.append({"attempt": attempt, "error": f"malformed: {e}", "response": None})
            return None, entries
        entries.append({"attempt": attempt, "error": None, "response": text})
        return text, entries
    return None, entries


# --- report ------------------------------------------------------------------


@dataclass
class SampleRecord:
    sample_id: str
    scene_id: str
    lighting: str
    category: str
    question: str
    answer: object
    raw: str | None
    parsed: object
    correct: bool


@dataclass
class EvalReport:
    mode: str
    cells: dict  # category or "acc" -> condition -> percent or None
    counts: dict  # category -> condition -> number of samples
    skipped_scenes: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "cells": self.cells,
            "counts": self.counts,
            "skipped_scenes": self.skipped_scenes,
            "records": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def format_table(self) -> str:
        cols = (*CATEGORIES, "acc")
        width = 8 * len(CONDITIONS)
        head = f"{'':<10}" + "".join(f"   {CATEGORY_LABELS.get(c, 'Acc'):>{width}}" for c in cols)
        sub = f"{'mode':<10}" + ("   " + "".join(f"{k.capitalize():>8}" for k in CONDITIONS)) * len(cols)
        row = f"{self.mode:<10}"
        for c in cols:
            row += "   " + "".join(
                f"{'-':>8}" if self.cells[c][k] is None else f"{self.cells[c][k]:>8.1f}" for k in CONDITIONS
            )
        return "\n".join([head, sub, row])


def aggregate(records: list[SampleRecord], mode: str, skipped=()) -> EvalReport:
    cells, counts = {}, {}
    for cat in CATEGORIES:
        cells[cat], counts[cat] = {}, {}
        for cond in ("day", "night"):
            sel = [r for r in records if r.category == cat and r.lighting == cond]
            counts[cat][cond] = len(sel)
            cells[cat][cond] = 100.0 * sum(r.correct for r in sel) / len(sel) if sel else None
        sel = [r for r in records if r.category == cat]
        counts[cat]["all"] = len(sel)
        cells[cat]["all"] = 100.0 * sum(r.correct for r in sel) / len(sel) if sel else None
    cells["acc"] = {}
    for cond in CONDITIONS:
        vals = [cells[c][cond] for c in CATEGORIES if cells[c][cond] is not None]
        cells["acc"][cond] = sum(vals) / len(vals) if vals else None
    return EvalReport(mode, cells, counts, list(skipped), records)


# --- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "camera"
    model: str = "mock"
    lama: LamaConfig = LamaConfig()
    daytime_bypass: bool = True
    split: str | None = None
    concurrency: int = 1
    attempts: int = 3
    backoff: float = 0.5
    prompts: tuple = tuple(sorted(PROMPT_TEMPLATES.items()))

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def _lama_for(cfg: EvalConfig) -> LamaConfig:
    if cfg.mode == "camera":
        mode = FusionMode.OFF
    else:
        mode = FusionMode(cfg.mode)
    return LamaConfig(cfg.lama.l_low, cfg.lama.l_high, mode, cfg.lama.daytime_bypass)


def scene_image(scene_dir: Path, lighting: str, cfg: EvalConfig, nets, settings):
    """The image the VLM sees for one scene under the configured pipeline."""
    from .core import read_png
    from .ingest import read_calibration, read_cloud_bin
    from .pipeline import process_frame
    from .geometry import crop_center

    rgb = read_png(scene_dir / ("rgb_dark.png" if lighting == "night" else "rgb.png"))
    ext, intr = read_calibration(scene_dir / "calib.json")
    lama = _lama_for(cfg)
    if cfg.mode == "camera" or (cfg.mode == "full" and cfg.daytime_bypass and lighting == "day"):
        return crop_center(rgb, intr, settings.crop_size)
    cloud = read_cloud_bin(scene_dir / "cloud.bin", 4)
    return process_frame(rgb, cloud, ext, intr, nets, lama, settings)[0].fused


def evaluate(manifest_path, endpoint_spec, cfg: EvalConfig = EvalConfig(), nets=None, settings=None,
             transcript_path=None, sleep=time.sleep) -> EvalReport:
    from .pipeline import FrameSettings, load_manifest

    settings = settings or FrameSettings()
    manifest, root = load_manifest(manifest_path)
    prompts = dict(cfg.prompts)
    jobs, skipped, answer_key = [], [], {}
    for sc in manifest["scenes"]:
        if cfg.split is not None and sc["split"] != cfg.split:
            continue
        d = root / sc["dir"]
        try:
            qa = json.loads((d / "qa.json").read_text())
            png = encode_png(scene_image(d, sc["lighting"], cfg, nets, settings))
        except FileNotFoundError as e:
            log.warning("skipping scene %s: %s", sc["id"], e)
            skipped.append(sc["id"])
            continue
        for i, q in enumerate(qa):
            sid = f"{sc['id']}:{i}"
            answer_key[sid] = (q["category"], q["answer"])
            req = VlmRequest(png, prompts[q["category"]].format(question=q["question"]), cfg.model, 0.0, sid)
            jobs.append((sc, q, req))

    endpoint = endpoint_spec if callable(endpoint_spec) else make_endpoint(endpoint_spec, answer_key)

    def run(job):
        return query_vlm(endpoint, job[2], cfg.attempts, cfg.backoff, sleep)

    if cfg.concurrency > 1:
        with ThreadPoolExecutor(cfg.concurrency) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    records, transcript = [], []
    for (sc, q, req), (text, entries) in zip(jobs, results):
        parsed = parse_answer(text, q["category"])
        records.append(SampleRecord(req.sample_id, sc["id"], sc["lighting"], q["category"], q["question"],
                                    q["answer"], text, parsed, parsed == q["answer"]))
        for e in entries:
            transcript.append({"sample_id": req.sample_id, "model": req.model, "prompt": req.prompt,
                               "image_sha256": req.image_sha256, **e})
    if transcript_path is not None:
        with open(transcript_path, "w") as fh:
            for rec in transcript:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return aggregate(records, cfg.mode, skipped)
