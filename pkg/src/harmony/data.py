"""Synthetic shape/color image-caption corpus: generation and loading."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from harmony.rng import stream
from harmony.tokenizer import Tokenizer

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue", "yellow")
COLOR_RGB = {
    "red": (0.85, 0.1, 0.1),
    "green": (0.1, 0.75, 0.15),
    "blue": (0.12, 0.2, 0.85),
    "yellow": (0.9, 0.85, 0.1),
}
COLOR_SYNONYMS = {
    "red": ["red", "crimson"],
    "green": ["green", "emerald"],
    "blue": ["blue", "azure"],
    "yellow": ["yellow", "golden"],
}
SHAPE_SYNONYMS = {
    "circle": ["circle", "disk"],
    "square": ["square", "box"],
    "triangle": ["triangle", "wedge"],
    "cross": ["cross", "plus"],
}
CAPTION_TEMPLATES = (
    "a photo of a {color} {shape}",
    "a small {color} {shape} on a plain background",
    "this picture shows one {color} {shape}",
    "a simple drawing of a {color} {shape} outline",
)


def class_id(shape: str, color: str) -> int:
    return SHAPES.index(shape) * len(COLORS) + COLORS.index(color)


def class_name(cid: int) -> tuple[str, str]:
    return SHAPES[cid // len(COLORS)], COLORS[cid % len(COLORS)]


def grammar_words(templates: tuple[str, ...] = CAPTION_TEMPLATES) -> list[str]:
    words: list[str] = []
    for template in templates:
        for color in COLORS:
            for shape in SHAPES:
                for cw in COLOR_SYNONYMS[color]:
                    for sw in SHAPE_SYNONYMS[shape]:
                        words.extend(template.format(color=cw, shape=sw).split())
    # zero-shot prompt vocabulary stays in-vocab
    words.extend("an image of".split())
    return words


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """image: HWC float in [0, 1]; written as binary P6, maxval 255."""
    h, w, _ = image.shape
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"corrupt PPM header in {path}")
        fields.append(raw[start:pos])
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError(f"unsupported PPM header in {path}")
    w, h = int(fields[1]), int(fields[2])
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3, offset=pos)
    if pixels.size != h * w * 3:
        raise ValueError(f"truncated PPM payload in {path}")
    return pixels.reshape(h, w, 3).astype(np.float32) / 255.0


def render_scene(shape: str, color: str, rng: np.random.Generator,
                 size: int = 32, noise_level: float = 0.05) -> np.ndarray:
    """Render one colored shape, fully inside the canvas, on a noisy background."""
    canvas = np.full((size, size, 3), 0.5, dtype=np.float64)
    if noise_level > 0:
        canvas += rng.normal(0.0, noise_level, size=canvas.shape)
    radius = rng.uniform(0.28, 0.40) * size
    # leave up to one pixel of margin, less on tiny canvases
    margin = min(1.0, (size - 2 * radius) / 2)
    cx = rng.uniform(radius + margin, size - radius - margin)
    cy = rng.uniform(radius + margin, size - radius - margin)
    ys, xs = np.mgrid[0:size, 0:size]
    dx, dy = xs - cx + 0.5, ys - cy + 0.5
    if shape == "circle":
        inside = dx * dx + dy * dy <= radius * radius
    elif shape == "square":
        inside = (np.abs(dx) <= radius * 0.85) & (np.abs(dy) <= radius * 0.85)
    elif shape == "triangle":
        inside = (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (radius - dy) * 0.5)
    elif shape == "cross":
        arm = radius * 0.32
        inside = ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | (
            (np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    rgb = np.asarray(COLOR_RGB[color]) + rng.normal(0.0, 0.02, size=3)
    canvas[inside] = rgb
    return np.clip(canvas, 0.0, 1.0).astype(np.float32)


def make_caption(shape: str, color: str, rng: np.random.Generator,
                 templates: tuple[str, ...] = CAPTION_TEMPLATES) -> str:
    template = templates[int(rng.integers(len(templates)))]
    cw = COLOR_SYNONYMS[color][int(rng.integers(len(COLOR_SYNONYMS[color])))]
    sw = SHAPE_SYNONYMS[shape][int(rng.integers(len(SHAPE_SYNONYMS[shape])))]
    return template.format(color=cw, shape=sw)


@dataclass
class ManifestRecord:
    id: int
    image_path: str
    caption: str
    class_id: int
    mismatched: bool = False


def generate_dataset(out_dir: str | Path, n_samples: int, seed: int,
                     noise_level: float = 0.05, mismatch_fraction: float = 0.0,
                     image_size: int = 32, context_length: int = 32,
                     templates: tuple[str, ...] = CAPTION_TEMPLATES) -> Path:
    """Write PPM images, a JSONL manifest, and the vocabulary; returns manifest path."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    out = Path(out_dir)
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    records: list[ManifestRecord] = []
    for i in range(n_samples):
        rng = stream(seed, "sample", i)
        cid = i % (len(SHAPES) * len(COLORS))  # balanced classes
        shape, color = class_name(cid)
        image = render_scene(shape, color, rng, size=image_size, noise_level=noise_level)
        rel = f"images/{i:06d}.ppm"
        write_ppm(out / rel, image)
        caption = make_caption(shape, color, rng, templates)
        records.append(ManifestRecord(id=i, image_path=rel, caption=caption, class_id=cid))
    # web-noise simulation: some captions describe a different class
    mis_rng = stream(seed, "mismatch")
    for rec in records:
        if mis_rng.random() < mismatch_fraction:
            other = int(mis_rng.integers(len(SHAPES) * len(COLORS)))
            shape, color = class_name(other)
            rec.caption = make_caption(shape, color, mis_rng, templates)
            rec.mismatched = True
    tokenizer = Tokenizer(grammar_words(templates), context_length)
    tokenizer.save(out / "vocab.json")
    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w") as f:
        header = {
            "version": 1,
            "image_format": "ppm_p6_maxval255",
            "image_size": image_size,
            "context_length": context_length,
            "seed": seed,
            "n_samples": n_samples,
            "vocabulary": "vocab.json",
        }
        f.write(json.dumps(header) + "\n")
        for rec in records:
            f.write(json.dumps(vars(rec)) + "\n")
    return manifest_path


class ShapesDataset:
    """Deterministic loader over a generated manifest."""

    def __init__(self, manifest_path: str | Path):
        path = Path(manifest_path)
        lines = path.read_text().splitlines()
        if not lines:
            raise ValueError(f"empty manifest {path}")
        self.header = json.loads(lines[0])
        if self.header.get("version") != 1:
            raise ValueError(f"unsupported manifest version in {path}")
        self.root = path.parent
        self.records = [json.loads(line) for line in lines[1:]]
        self.context_length = int(self.header["context_length"])
        self.tokenizer = Tokenizer.load(
            self.root / self.header["vocabulary"], self.context_length)

    def __len__(self) -> int:
        return len(self.records)

    def load_image(self, index: int) -> np.ndarray:
        return read_ppm(self.root / self.records[index]["image_path"])

    def load_batch(self, indices: list[int] | np.ndarray
                   ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (images N x 3 x H x W in [0,1], token ids N x C, class ids N)."""
        images, tokens, classes = [], [], []
        for i in indices:
            rec = self.records[int(i)]
            img = self.load_image(int(i))
            images.append(torch.from_numpy(img).permute(2, 0, 1))
            tokens.append(torch.from_numpy(self.tokenizer.encode(rec["caption"])))
            classes.append(rec["class_id"])
        return torch.stack(images), torch.stack(tokens), torch.tensor(classes)

    def epoch_order(self, seed: int, epoch: int) -> np.ndarray:
        order = np.arange(len(self))
        stream(seed, "shuffle", epoch).shuffle(order)
        return order
