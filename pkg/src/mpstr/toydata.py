"""Deterministic synthetic glyph corpus.

Words are rendered from a built-in 5x7 dot-matrix atlas into 8-bit grayscale
PGM images (ink 255 on background 0).  Everything downstream of a seed is a
pure function, so a corpus regenerates byte-for-byte.

Directory layout per split:

    <dir>/images/00000.pgm ...
    <dir>/manifest.tsv          filename TAB label, UTF-8, LF
    <dir>/charset.txt
    <dir>/gen-config.json
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .codec import Charset

# 5x7 bitmaps, one string per row, '#' = ink. Distinctness is test-enforced.
_GLYPHS = {
    "0": ("  ###", " #  #", " # ##", " ## #", " #  #", " #  #", "  ## "),
    "1": ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ####"),
    "2": (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    "3": ("#####", "   # ", "  ## ", "    #", "    #", "#   #", " ### "),
    "4": ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    "5": ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    "6": ("  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "),
    "7": ("#####", "    #", "   # ", "  #  ", "  #  ", " #   ", " #   "),
    "8": (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    "9": (" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "),
    "a": ("     ", "     ", " ### ", "    #", " ####", "#   #", " ####"),
    "b": ("#    ", "#    ", "# ## ", "##  #", "#   #", "##  #", "# ## "),
    "c": ("     ", "     ", " ### ", "#    ", "#    ", "#   #", " ### "),
    "d": ("    #", "    #", " ## #", "#  ##", "#   #", "#  ##", " ## #"),
    "e": ("     ", "     ", " ### ", "#   #", "#####", "#    ", " ### "),
    "f": ("  ## ", " #  #", " #   ", "###  ", " #   ", " #   ", " #   "),
    "g": ("     ", " ####", "#   #", "#   #", " ####", "    #", " ### "),
    "h": ("#    ", "#    ", "# ## ", "##  #", "#   #", "#   #", "#   #"),
    "i": ("  #  ", "     ", " ##  ", "  #  ", "  #  ", "  #  ", " ####"),
    "j": ("   # ", "     ", "  ## ", "   # ", "   # ", "#  # ", " ##  "),
    "k": ("#    ", "#    ", "#  # ", "# #  ", "##   ", "# #  ", "#  # "),
    "l": (" ##  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ####"),
    "m": ("     ", "     ", "## # ", "# # #", "# # #", "# # #", "# # #"),
    "n": ("     ", "     ", "# ## ", "##  #", "#   #", "#   #", "#   #"),
    "o": ("     ", "     ", " ### ", "#   #", "#   #", "#   #", " ### "),
    "p": ("     ", "     ", "#### ", "#   #", "#### ", "#    ", "#    "),
    "q": ("     ", "     ", " ####", "#   #", " ####", "    #", "    #"),
    "r": ("     ", "     ", "# ## ", "##  #", "#    ", "#    ", "#    "),
    "s": ("     ", "     ", " ####", "#    ", " ### ", "    #", "#### "),
    "t": (" #   ", " #   ", "###  ", " #   ", " #   ", " #  #", "  ## "),
    "u": ("     ", "     ", "#   #", "#   #", "#   #", "#  ##", " ## #"),
    "v": ("     ", "     ", "#   #", "#   #", "#   #", " # # ", "  #  "),
    "w": ("     ", "     ", "#   #", "# # #", "# # #", "# # #", " # # "),
    "x": ("     ", "     ", "#   #", " # # ", "  #  ", " # # ", "#   #"),
    "y": ("     ", "     ", "#   #", "#   #", " ####", "    #", " ### "),
    "z": ("     ", "     ", "#####", "   # ", "  #  ", " #   ", "#####"),
}

GLYPH_H, GLYPH_W = 7, 5


def glyph_bitmap(char: str) -> np.ndarray:
    """(7, 5) uint8 bitmap, 1 = ink."""
    rows = _GLYPHS[char]
    return np.array([[1 if c == "#" else 0 for c in row] for row in rows], dtype=np.uint8)


@dataclass(frozen=True)
class GlyphAtlas:
    """Per-character cell geometry for rendering."""

    cell_w: int = 8
    scale_x: int = 1
    scale_y: int = 2

    def cell(self, char: str, cell_h: int) -> np.ndarray:
        g = glyph_bitmap(char)
        g = np.repeat(np.repeat(g, self.scale_y, axis=0), self.scale_x, axis=1)
        gh, gw = g.shape
        if gw > self.cell_w or gh > cell_h:
            raise ValueError(f"glyph {gw}x{gh} exceeds cell {self.cell_w}x{cell_h}")
        out = np.zeros((cell_h, self.cell_w), dtype=np.uint8)
        y, x = (cell_h - gh) // 2, (self.cell_w - gw) // 2
        out[y : y + gh, x : x + gw] = g
        return out


@dataclass(frozen=True)
class AugmentParams:
    """Gated augmentations; all-zero probabilities mean identity."""

    blur_prob: float = 0.0
    blur_sigma: float = 0.6
    noise_prob: float = 0.0
    noise_peak: float = 40.0
    rotate_prob: float = 0.0
    rotate_max_deg: float = 10.0

    @classmethod
    def training_default(cls) -> "AugmentParams":
        return cls(blur_prob=0.25, noise_prob=0.25, rotate_prob=0.25)


@dataclass(frozen=True)
class SampleSpec:
    word: str
    aug_seed: int = 0
    params: AugmentParams = field(default_factory=AugmentParams)


def render_word(
    word: str,
    image_height: int = 16,
    image_width: int = 64,
    atlas: GlyphAtlas = GlyphAtlas(),
    ink: int = 255,
) -> np.ndarray:
    """Glyphs left-to-right, vertically centered, margin-padded to size."""
    if not word:
        raise ValueError("cannot render empty word")
    if len(word) * atlas.cell_w > image_width:
        raise ValueError(
            f"word {word!r} needs {len(word) * atlas.cell_w}px, image is {image_width}px"
        )
    img = np.zeros((image_height, image_width), dtype=np.uint8)
    for i, ch in enumerate(word):
        x = i * atlas.cell_w
        img[:, x : x + atlas.cell_w] = atlas.cell(ch, image_height) * ink
    return img


def render_sample(spec: SampleSpec, image_height: int = 16, image_width: int = 64,
                  atlas: GlyphAtlas = GlyphAtlas()) -> np.ndarray:
    img = render_word(spec.word, image_height, image_width, atlas)
    return augment(img, spec.aug_seed, spec.params)


def augment(image: np.ndarray, seed, params: AugmentParams) -> np.ndarray:
    """Seeded blur/Poisson-noise/rotation, each behind its own coin flip."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = image.astype(np.float64)
    if rng.random() < params.blur_prob:
        sigma = rng.uniform(0.1, params.blur_sigma)
        out = ndimage.gaussian_filter(out, sigma)
    if rng.random() < params.noise_prob:
        scale = params.noise_peak / 255.0
        out = rng.poisson(out * scale) / scale
    if rng.random() < params.rotate_prob:
        deg = rng.uniform(-params.rotate_max_deg, params.rotate_max_deg)
        out = ndimage.rotate(out, deg, reshape=False, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0, 255).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("expected a 2-D uint8 image")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)


@dataclass
class GenConfig:
    n: int = 2000
    seed: int = 7
    split: str = "train"
    image_height: int = 16
    image_width: int = 64
    min_len: int = 1
    max_len: int = 8
    length_weights: list[float] | None = None
    cell_w: int = 8
    scale_x: int = 1
    scale_y: int = 2

    def atlas(self) -> GlyphAtlas:
        return GlyphAtlas(self.cell_w, self.scale_x, self.scale_y)


@dataclass
class DatasetManifest:
    root: Path
    split: str
    rows: list[tuple[str, str]]

    def __len__(self) -> int:
        return len(self.rows)


def _sample_word(rng: np.random.Generator, cfg: GenConfig, charset: Charset) -> str:
    lengths = np.arange(cfg.min_len, cfg.max_len + 1)
    weights = cfg.length_weights
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        weights = weights / weights.sum()
    length = int(rng.choice(lengths, p=weights))
    chars = rng.integers(0, charset.size, size=length)
    return "".join(charset.characters[i] for i in chars)


def generate_dataset(cfg: GenConfig, out_dir, charset: Charset | None = None) -> DatasetManifest:
    """Render n words into out_dir; fully reproducible from cfg.seed."""
    if cfg.n < 1:
        raise ValueError("n must be >= 1")
    charset = charset or Charset()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(cfg.n):
        rng = np.random.default_rng([cfg.seed, i])
        word = _sample_word(rng, cfg, charset)
        img = render_word(word, cfg.image_height, cfg.image_width, cfg.atlas())
        fname = f"images/{i:05d}.pgm"
        write_pgm(out / fname, img)
        rows.append((fname, word))
    with open(out / "manifest.tsv", "w", encoding="utf-8", newline="\n") as f:
        for fname, label in rows:
            f.write(f"{fname}\t{label}\n")
    charset.save(out / "charset.txt")
    with open(out / "gen-config.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(asdict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
    return DatasetManifest(out, cfg.split, rows)


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    rows = []
    with open(root / "manifest.tsv", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            fname, label = line.split("\t")
            rows.append((fname, label))
    split = "unknown"
    gen_cfg = root / "gen-config.json"
    if gen_cfg.exists():
        split = json.loads(gen_cfg.read_text()).get("split", split)
    return DatasetManifest(root, split, rows)


@dataclass
class ToyDataset:
    """In-memory split: images in manifest order plus normalized labels."""

    images: np.ndarray  # (n, H, W) uint8
    labels: list[str]
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.labels)


def load_dataset(root, charset: Charset | None = None) -> ToyDataset:
    """Images and normalized labels in manifest order.

    Rows whose label is empty after normalization are dropped.
    """
    charset = charset or Charset()
    manifest = load_manifest(root)
    images, labels = [], []
    for fname, raw in manifest.rows:
        label = charset.normalize_text(raw)
        if not label:
            continue
        images.append(read_pgm(manifest.root / fname))
        labels.append(label)
    if not labels:
        raise ValueError(f"{root}: no usable labels in manifest")
    return ToyDataset(np.stack(images), labels, manifest.root)
