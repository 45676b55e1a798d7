"""Procedural image world: classes composed of glyph parts with known masks.

Classes 0..N-1 are each a fixed arrangement of textured glyphs. Three
designated classes form a confusion triple: they share four large parts and
an identical layout, differing only in one small "badge" part drawn at the
same position, and two of them additionally carry a shared low-contrast
background smudge (80% / 40% of their images). The smudge is the designed
bias that concept editing later removes; every other class keeps at least
two parts that appear nowhere else, which makes them easy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import netpbm
from .util import canonical_json, digest_json, rng_for, write_json

GLYPHS = ("disc", "ring", "hbar", "vbar", "wedge", "cross", "corner_l", "dotgrid")

ANCHORS = [(x, y) for y in (0.2, 0.5, 0.8) for x in (0.2, 0.5, 0.8)]

# triple layout: big shared parts in the corners, badge dead center,
# smudge below center; identical across the three confusable classes
TRIPLE_SHARED_ANCHORS = [(0.2, 0.2), (0.8, 0.2), (0.2, 0.8), (0.8, 0.8)]
TRIPLE_BADGE_ANCHOR = (0.5, 0.5)
TRIPLE_SMUDGE_ANCHOR = (0.5, 0.8)

BG_BASE = np.array([0.24, 0.26, 0.30], dtype=np.float64)


class GenerationError(RuntimeError):
    pass


@dataclass
class PartShape:
    part_id: str
    glyph: str
    texture: dict
    size: float  # glyph bounding diameter as a fraction of image side


@dataclass
class ClassRecipe:
    class_id: int
    name: str
    parts: list[PartShape]
    layout: dict[str, tuple[float, float]]  # part_id -> normalized center
    jitter: float
    spurious: dict | None = None  # {"part": PartShape, "probability": float}

    def to_doc(self) -> dict:
        doc = asdict(self)
        doc["layout"] = {k: list(v) for k, v in self.layout.items()}
        return doc


@dataclass
class World:
    seed: int
    image_size: int
    classes: list[ClassRecipe]
    roles: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "schema": "scglab.world/1",
            "seed": self.seed,
            "image_size": self.image_size,
            "classes": [r.to_doc() for r in self.classes],
            "roles": self.roles,
            "config": self.config,
        }

    def digest(self) -> str:
        return digest_json(self.to_doc())


@dataclass
class WorldConfig:
    seed: int = 0
    n_classes: int = 10
    parts_per_class: int = 5
    triple: tuple[int, int, int] = (7, 8, 9)
    smudge_probs: tuple[float, float, float] = (0.8, 0.4, 0.0)
    image_size: int = 64
    jitter: float = 0.03
    shared_size: float = 0.22
    badge_sizes: tuple[float, float, float] = (0.11, 0.17, 0.11)
    smudge_size: float = 0.20
    smudge_gain: float = 1.45
    noise_sigma: float = 0.02
    brightness_jitter: float = 0.10
    color_jitter: float = 0.04


def _part_area_radius(size: float, image_size: int) -> float:
    return size * image_size / 2.0


def _texture(rng: np.random.Generator, kind: str | None = None, muted: bool = False) -> dict:
    kinds = ("stripes", "checker", "noise", "solid")
    kind = kind or kinds[int(rng.integers(len(kinds)))]
    if muted:
        base = BG_BASE + rng.uniform(0.08, 0.16)
        ca = np.clip(base + rng.uniform(-0.02, 0.02, 3), 0, 1)
        cb = np.clip(base + rng.uniform(-0.05, 0.05, 3), 0, 1)
    else:
        ca = rng.uniform(0.45, 0.95, 3)
        cb = rng.uniform(0.05, 0.45, 3)
    return {
        "kind": kind,
        "color_a": [round(float(v), 4) for v in ca],
        "color_b": [round(float(v), 4) for v in cb],
        "period": round(float(rng.uniform(2.5, 5.0)), 3),
        "angle": round(float(rng.uniform(0, np.pi)), 4),
        "noise_seed": int(rng.integers(2**31)),
    }


def make_world(config: WorldConfig) -> World:
    """Build all class recipes. Deterministic in config.seed-free fields plus seed."""
    cfg = config
    if cfg.n_classes < 4:
        raise GenerationError(f"need at least 4 classes, got {cfg.n_classes}")
    if len(set(cfg.triple)) != 3 or any(c >= cfg.n_classes or c < 0 for c in cfg.triple):
        raise GenerationError(f"confusion triple {cfg.triple} invalid for {cfg.n_classes} classes")
    if not 4 <= cfg.parts_per_class <= 6:
        raise GenerationError(f"parts per class must be 4..6, got {cfg.parts_per_class}")
    margin = _part_area_radius(cfg.shared_size, cfg.image_size) + cfg.jitter * cfg.image_size
    if margin > 0.15 * cfg.image_size:  # half the anchor spacing
        raise GenerationError(
            f"parts of size {cfg.shared_size} cannot be placed without overlap at jitter {cfg.jitter}"
        )
    return _make_world_inner(cfg)


def _make_world_inner(cfg: WorldConfig) -> World:
    seed = cfg.seed
    rng = rng_for(seed, "world")
    glyph_cycle = list(GLYPHS)

    shared_parts = [
        PartShape(f"tri-shared-{i}", glyph_cycle[i % len(glyph_cycle)], _texture(rng), cfg.shared_size)
        for i in range(4)
    ]
    badge_glyphs = ("wedge", "cross", "ring")
    badges = {
        cls: PartShape(
            f"badge-{cls}", badge_glyphs[i], _texture(rng, kind="solid" if i == 1 else "stripes"),
            cfg.badge_sizes[i],
        )
        for i, cls in enumerate(cfg.triple)
    }
    smudge = PartShape("smudge", "disc", {"kind": "smudge", "gain": cfg.smudge_gain}, cfg.smudge_size)

    # a couple of parts several easy classes may share
    common_pool = [
        PartShape(f"common-{i}", glyph_cycle[(i + 3) % len(glyph_cycle)], _texture(rng), cfg.shared_size)
        for i in range(3)
    ]

    classes: list[ClassRecipe] = []
    triple_set = set(cfg.triple)
    for c in range(cfg.n_classes):
        if c in triple_set:
            idx = cfg.triple.index(c)
            parts = list(shared_parts) + [badges[c]]
            layout = {p.part_id: a for p, a in zip(shared_parts, TRIPLE_SHARED_ANCHORS)}
            layout[badges[c].part_id] = TRIPLE_BADGE_ANCHOR
            spurious = None
            prob = cfg.smudge_probs[idx]
            spurious = {"part": smudge, "probability": prob}
            layout[smudge.part_id] = TRIPLE_SMUDGE_ANCHOR
            classes.append(
                ClassRecipe(c, f"class{c:02d}", parts, layout, cfg.jitter, spurious)
            )
        else:
            crng = rng_for(seed, "class", c)
            n_unique = cfg.parts_per_class - 2
            uniques = [
                PartShape(
                    f"u{c}-{i}", glyph_cycle[int(crng.integers(len(glyph_cycle)))],
                    _texture(crng), cfg.shared_size,
                )
                for i in range(n_unique)
            ]
            pool_pick = [common_pool[int(i)] for i in crng.choice(len(common_pool), 2, replace=False)]
            parts = uniques + pool_pick
            anchor_idx = crng.permutation(len(ANCHORS))[: len(parts)]
            layout = {p.part_id: ANCHORS[int(a)] for p, a in zip(parts, anchor_idx)}
            classes.append(ClassRecipe(c, f"class{c:02d}", parts, layout, cfg.jitter))

    _check_feasible(classes, cfg)
    roles = {
        "triple": list(cfg.triple),
        "badges": {str(c): badges[c].part_id for c in cfg.triple},
        "smudge": smudge.part_id,
        "shared": [p.part_id for p in shared_parts],
        "smudge_probs": {str(c): cfg.smudge_probs[i] for i, c in enumerate(cfg.triple)},
    }
    return World(seed=seed, image_size=cfg.image_size, classes=classes, roles=roles, config=asdict(cfg))


def _check_feasible(classes: list[ClassRecipe], cfg: WorldConfig) -> None:
    for rec in classes:
        entries = list(rec.parts)
        if rec.spurious:
            entries.append(rec.spurious["part"])
        if len(entries) > len(ANCHORS):
            raise GenerationError(f"recipe {rec.class_id}: more parts than placement anchors")
        spots = []
        for p in entries:
            if p.part_id not in rec.layout:
                raise GenerationError(f"recipe {rec.class_id}: part {p.part_id} has no position")
            x, y = rec.layout[p.part_id]
            r = _part_area_radius(p.size, cfg.image_size) + rec.jitter * cfg.image_size
            lo = min(x, y) * cfg.image_size - r
            hi = max(x, y) * cfg.image_size + r
            if lo < 0.5 or hi > cfg.image_size - 0.5:
                raise GenerationError(f"recipe {rec.class_id}: part {p.part_id} leaves the frame")
            spots.append((x * cfg.image_size, y * cfg.image_size, r))
        for i in range(len(spots)):
            for j in range(i + 1, len(spots)):
                dx = spots[i][0] - spots[j][0]
                dy = spots[i][1] - spots[j][1]
                if np.hypot(dx, dy) < spots[i][2] + spots[j][2]:
                    raise GenerationError(
                        f"recipe {rec.class_id}: parts cannot be placed without overlap"
                    )


# ---------------------------------------------------------------- rendering


def _glyph_mask(glyph: str, r: float, cy: float, cx: float, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = yy - cy
    dx = xx - cx
    rr = np.hypot(dy, dx)
    if glyph == "disc":
        return rr <= r
    if glyph == "ring":
        return (rr <= r) & (rr >= 0.55 * r)
    if glyph == "hbar":
        return (np.abs(dy) <= 0.36 * r) & (np.abs(dx) <= r)
    if glyph == "vbar":
        return (np.abs(dx) <= 0.36 * r) & (np.abs(dy) <= r)
    if glyph == "wedge":
        return (dy >= -0.8 * r) & (dy <= 0.8 * r) & (np.abs(dx) <= 0.5 * (dy + 0.8 * r))
    if glyph == "cross":
        return ((np.abs(dy) <= 0.26 * r) & (np.abs(dx) <= r)) | (
            (np.abs(dx) <= 0.26 * r) & (np.abs(dy) <= r)
        )
    if glyph == "corner_l":
        v = (dx >= -r) & (dx <= -0.4 * r) & (np.abs(dy) <= r)
        hseg = (dy >= 0.4 * r) & (dy <= r) & (np.abs(dx) <= r)
        return v | hseg
    if glyph == "dotgrid":
        m = np.zeros((h, w), dtype=bool)
        for oy in (-0.6 * r, 0.0, 0.6 * r):
            for ox in (-0.6 * r, 0.0, 0.6 * r):
                m |= np.hypot(dy - oy, dx - ox) <= 0.22 * r
        return m
    raise GenerationError(f"unknown glyph {glyph!r}")


def _centered_glyph_mask(glyph: str, r: float, cy: float, cx: float, h: int, w: int) -> np.ndarray:
    """Glyph mask whose pixel centroid lands on (cy, cx) within ~half a pixel."""
    m = _glyph_mask(glyph, r, cy, cx, h, w)
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        return m
    off_y = ys.mean() - cy
    off_x = xs.mean() - cx
    return _glyph_mask(glyph, r, cy - off_y, cx - off_x, h, w)


def _paint_texture(img: np.ndarray, mask: np.ndarray, tex: dict, bg: np.ndarray) -> None:
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if tex["kind"] == "smudge":
        img[ys, xs] = np.clip(bg[ys, xs] * tex["gain"], 0, 1)
        return
    ca = np.array(tex["color_a"])
    cb = np.array(tex["color_b"])
    if tex["kind"] == "solid":
        img[ys, xs] = ca
        return
    if tex["kind"] == "stripes":
        phase = (np.cos(tex["angle"]) * xs + np.sin(tex["angle"]) * ys) / tex["period"]
        pick = (phase % 1.0) < 0.5
    elif tex["kind"] == "checker":
        p = tex["period"]
        pick = ((np.floor(xs / p) + np.floor(ys / p)) % 2) == 0
    elif tex["kind"] == "noise":
        nrng = rng_for(tex["noise_seed"], "texture-noise")
        fld = nrng.random((h, w))
        pick = fld[ys, xs] < 0.5
    else:
        raise GenerationError(f"unknown texture {tex['kind']!r}")
    img[ys, xs] = np.where(pick[:, None], ca[None, :], cb[None, :])


@dataclass
class SceneImage:
    pixels: np.ndarray  # (h, w, 3) float32 in [0, 1]
    class_id: int
    masks: dict[str, np.ndarray]  # part_id -> bool mask, pairwise disjoint
    seed: int
    drew_spurious: bool


DEFAULT_APPEARANCE = {"noise_sigma": 0.02, "brightness_jitter": 0.10, "color_jitter": 0.04}


def render_scene(
    recipe: ClassRecipe, seed: int, image_size: int = 64, appearance: dict | None = None
) -> SceneImage:
    ap = {**DEFAULT_APPEARANCE, **(appearance or {})}
    rng = rng_for(seed, "scene", recipe.class_id)
    n = image_size
    canvas = np.empty((n, n, 3), dtype=np.float64)
    grad = np.linspace(-0.04, 0.04, n)[:, None]
    canvas[:] = BG_BASE[None, None, :] + grad[..., None]
    bg = canvas.copy()

    entries: list[tuple[PartShape, bool]] = [(p, True) for p in recipe.parts]
    drew_spurious = False
    if recipe.spurious is not None:
        draw = bool(rng.random() < recipe.spurious["probability"])
        entries.append((recipe.spurious["part"], draw))
        drew_spurious = draw

    masks: dict[str, np.ndarray] = {}
    jit = recipe.jitter * n
    for part, draw in entries:
        ox, oy = rng.uniform(-jit, jit, 2)
        if not draw:
            continue
        x0, y0 = recipe.layout[part.part_id]
        cy = y0 * n + oy
        cx = x0 * n + ox
        r = _part_area_radius(part.size, n)
        mask = _centered_glyph_mask(part.glyph, r, cy, cx, n, n)
        _paint_texture(canvas, mask, part.texture, bg)
        masks[part.part_id] = mask

    bj = ap["brightness_jitter"]
    cj = ap["color_jitter"]
    brightness = rng.uniform(1.0 - bj, 1.0 + bj)
    gains = rng.uniform(1.0 - cj, 1.0 + cj, 3)
    noise = rng.normal(0.0, ap["noise_sigma"], (n, n, 3))
    pixels = np.clip(canvas * brightness * gains[None, None, :] + noise, 0.0, 1.0)
    return SceneImage(pixels.astype(np.float32), recipe.class_id, masks, seed, drew_spurious)


# ------------------------------------------------------------------ dataset


def generate_dataset(
    world: World, train_per_class: int, test_per_class: int, seed: int, out_dir: str | Path
) -> dict:
    """Render all images and masks, write the manifest; fully deterministic."""
    if train_per_class < 1 or test_per_class < 1:
        raise GenerationError("per-class counts must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    splits = {"train": train_per_class, "test": test_per_class}
    entries: dict[str, list] = {"train": [], "test": []}
    mean_acc = np.zeros(3, dtype=np.float64)
    mean_n = 0
    for split, count in splits.items():
        for rec in world.classes:
            for i in range(count):
                srng = rng_for(world.seed, "imageseed", seed, split, rec.class_id, i)
                img_seed = int(srng.integers(2**62))
                scene = render_scene(rec, img_seed, world.image_size, world.config)
                key = f"{split}_{rec.class_id:02d}_{i:04d}"
                img_rel = f"images/{key}.ppm"
                netpbm.write_ppm(out / img_rel, scene.pixels)
                mask_entries = []
                for j, (part_id, mask) in enumerate(scene.masks.items()):
                    mask_rel = f"images/{key}_m{j}.pgm"
                    netpbm.write_pgm(out / mask_rel, mask)
                    mask_entries.append({"part": part_id, "file": mask_rel})
                if split == "train":
                    mean_acc += scene.pixels.reshape(-1, 3).mean(axis=0)
                    mean_n += 1
                entries[split].append(
                    {
                        "key": key,
                        "image": img_rel,
                        "label": rec.class_id,
                        "masks": mask_entries,
                        "seed": img_seed,
                        "spurious": scene.drew_spurious,
                    }
                )
    mean_color = [float(v) for v in (mean_acc / max(mean_n, 1))]
    manifest = {
        "schema": "scglab.manifest/1",
        "world_seed": world.seed,
        "world_digest": world.digest(),
        "image_size": world.image_size,
        "seed": seed,
        "classes": [
            {"class_id": r.class_id, "name": r.name, "recipe_digest": digest_json(r.to_doc())}
            for r in world.classes
        ],
        "roles": world.roles,
        "mean_color": mean_color,
        "splits": entries,
    }
    write_json(out / "manifest.json", manifest)
    write_json(out / "world.json", world.to_doc())
    return manifest


def load_manifest(dataset_dir: str | Path) -> dict:
    import json

    with open(Path(dataset_dir) / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


def load_image(dataset_dir: str | Path, entry: dict) -> np.ndarray:
    return netpbm.read_ppm(Path(dataset_dir) / entry["image"])


def load_masks(dataset_dir: str | Path, entry: dict) -> dict[str, np.ndarray]:
    return {
        m["part"]: netpbm.read_pgm(Path(dataset_dir) / m["file"]) > 127 for m in entry["masks"]
    }
