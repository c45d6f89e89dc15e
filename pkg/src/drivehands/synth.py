"""Seeded synthetic in-cabin scenes with pixel-exact hand masks.

Each scene picks a cabin colour scheme, scatters flat and striped clutter
over it, draws one or more hands in one of three grasp poses and applies a
global illumination tint. Some hands have a rim segment or phone lying behind
them that is not being held, so the grasp classes cannot be told apart from
dark objects alone. Hands come with tight boxes, grasp labels and a skin
mask, which is enough to exercise skin training, detection, refinement and
grasp classification end to end.

Pose templates:

* wheel: fist with four fingers wrapped over a dark rim segment
* phone: palm holding a dark phone, thumb over its edge, fingertips on the side
* none:  open palm with five spread fingers
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagecore import ScoredBox, read_image, read_mask, write_image, write_mask

GRASPS = ("wheel", "phone", "none")

BACKGROUND_PALETTE = (
    (45, 45, 48), (70, 72, 75), (110, 112, 115), (150, 152, 155), (25, 28, 35),
    (40, 55, 85), (60, 80, 120), (35, 60, 45), (90, 100, 90), (180, 185, 190),
    (20, 20, 22), (80, 85, 110),
)

# interior colour schemes; a scene's background and fixtures use one scheme,
# loose clutter (clothing, bags) may use any palette colour
CABINS = {
    "charcoal": ((35, 35, 38), (55, 56, 60), (80, 82, 86), (20, 20, 22), (110, 112, 115)),
    "slate": ((40, 55, 85), (60, 80, 120), (80, 85, 110), (25, 28, 35), (150, 152, 155)),
    "olive": ((35, 60, 45), (90, 100, 90), (50, 55, 50), (70, 72, 75), (20, 25, 22)),
    "silver": ((150, 152, 155), (180, 185, 190), (110, 112, 115), (70, 72, 75), (45, 45, 48)),
}

TINTS = {
    "neutral": (1.0, 1.0, 1.0),
    "warm": (1.05, 1.0, 0.92),
    "cool": (0.92, 0.98, 1.06),
    "dim": (0.55, 0.55, 0.58),
    "bright": (1.2, 1.18, 1.15),
    "green": (0.95, 1.05, 0.95),
}


@dataclass(frozen=True)
class SyntheticSceneSpec:
    width: int = 240
    height: int = 180
    hands: tuple[int, int] = (1, 2)
    hand_height: tuple[int, int] = (50, 80)
    grasp_weights: tuple[float, float, float] = (0.4, 0.3, 0.3)
    cabins: tuple[str, ...] = tuple(CABINS)
    tints: tuple[str, ...] = tuple(TINTS)
    distractors: tuple[int, int] = (4, 8)
    noise: float = 5.0
    # red channel range of the base skin tone; G and B follow as ratios
    skin_red: tuple[float, float] = (150.0, 212.0)
    # probability that a distractor is a striped patch (high-frequency clutter)
    texture: float = 0.5
    # max in-plane hand rotation, radians
    rotation: float = 1.2
    # probability that a hand has a non-grasped rim or phone painted behind it
    decoys: float = 0.5
    seed: int = 0


@dataclass
class SyntheticHand:
    box: ScoredBox
    grasp: str
    mask: np.ndarray = field(repr=False)  # full-frame mask of this hand only


@dataclass
class Scene:
    image_id: str
    image: np.ndarray
    skin: np.ndarray
    hands: list[SyntheticHand]
    tint: str


# -- primitive shapes in hand-local coordinates -----------------------------

def _ellipse(u, v, cx, cy, rx, ry):
    return ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2 <= 1.0


def _capsule(u, v, x0, y0, x1, y1, r):
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((u - x0) * dx + (v - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return (u - x0 - t * dx) ** 2 + (v - y0 - t * dy) ** 2 <= r * r


def _rect(u, v, cx, cy, w, h, angle=0.0):
    c, s = np.cos(angle), np.sin(angle)
    du, dv = u - cx, v - cy
    a = c * du + s * dv
    b = -s * du + c * dv
    return (np.abs(a) <= w / 2) & (np.abs(b) <= h / 2)


def _pose_layers(grasp: str, u, v, rng):
    """Ordered paint layers ``(mask, 'skin' | rgb)`` for one hand; unit size."""
    layers = []
    if grasp == "wheel":
        rim = _rect(u, v, 0.0, -0.12, 1.3, 0.17, rng.uniform(-0.15, 0.15))
        layers.append((rim, tuple(int(c) for c in rng.integers(15, 45, 3))))
        layers.append((_ellipse(u, v, 0.0, 0.12, 0.32, 0.28), "skin"))
        for k in range(4):
            x = -0.2 + k * 0.135
            layers.append((_capsule(u, v, x, -0.3, x, 0.05, 0.06), "skin"))
        layers.append((_capsule(u, v, -0.3, 0.15, -0.12, -0.05, 0.07), "skin"))
    elif grasp == "phone":
        layers.append((_ellipse(u, v, 0.0, 0.15, 0.3, 0.3), "skin"))
        ang = rng.uniform(-0.2, 0.2)
        body = _rect(u, v, 0.0, -0.1, 0.32, 0.6, ang)
        layers.append((body, tuple(int(c) for c in rng.integers(10, 40, 3))))
        screen = _rect(u, v, 0.0, -0.12, 0.24, 0.46, ang)
        layers.append((screen, (int(rng.integers(40, 70)), int(rng.integers(60, 90)), int(rng.integers(100, 140)))))
        layers.append((_capsule(u, v, -0.28, 0.15, -0.12, -0.1, 0.065), "skin"))
        for k in range(3):
            y = -0.05 + k * 0.12
            layers.append((_ellipse(u, v, 0.2, y, 0.08, 0.055), "skin"))
    elif grasp == "none":
        layers.append((_ellipse(u, v, 0.0, 0.2, 0.27, 0.25), "skin"))
        for ang in (-0.45, -0.15, 0.1, 0.35):
            tx, ty = 0.42 * np.sin(ang), 0.05 - 0.42 * np.cos(ang)
            layers.append((_capsule(u, v, 0.6 * tx, 0.1, tx, ty, 0.05), "skin"))
        layers.append((_capsule(u, v, -0.2, 0.25, -0.45, 0.05, 0.06), "skin"))
    else:
        raise ValueError(f"unknown grasp {grasp!r}")
    return layers


def _decoy_layer(u, v, rng):
    """A rim segment or phone lying behind the hand without being held."""
    dark = tuple(int(c) for c in rng.integers(10, 45, 3))
    if rng.random() < 0.5:
        return _rect(u, v, rng.uniform(-0.2, 0.2), rng.uniform(-0.35, 0.35), 1.3, 0.17,
                     rng.uniform(-0.4, 0.4)), dark
    return _rect(u, v, rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3), 0.32, 0.6,
                 rng.uniform(-0.5, 0.5)), dark


def _skin_tone(spec, rng) -> np.ndarray:
    r = rng.uniform(*spec.skin_red)
    g = r * rng.uniform(0.66, 0.78)
    b = g * rng.uniform(0.7, 0.85)
    return np.array([r, g, b])


def _paint_background(img, spec, rng):
    h, w = img.shape[:2]
    cabin = np.array(CABINS[spec.cabins[int(rng.integers(len(spec.cabins)))]], dtype=np.float64)
    loose = np.array(BACKGROUND_PALETTE, dtype=np.float64)
    img[:] = cabin[rng.integers(len(cabin))]
    yy, xx = np.mgrid[0:h, 0:w]
    # a brighter window band across the top of the frame
    if rng.random() < 0.6:
        band = yy < rng.uniform(0.15, 0.35) * h
        img[band] = cabin[rng.integers(len(cabin))] * rng.uniform(0.9, 1.2)
    for _ in range(int(rng.integers(spec.distractors[0], spec.distractors[1] + 1))):
        col = cabin[rng.integers(len(cabin))]
        kind = rng.integers(3)
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        if rng.random() < spec.texture:
            m = _rect(xx, yy, cx, cy, rng.uniform(20, w / 2), rng.uniform(20, h / 2), rng.uniform(0, np.pi))
            ang, period = rng.uniform(0, np.pi), rng.uniform(4, 10)
            phase = (np.cos(ang) * xx + np.sin(ang) * yy) / period
            stripes = m & (np.floor(phase) % 2 == 0)
            img[m] = loose[rng.integers(len(loose))]
            img[stripes] = loose[rng.integers(len(loose))]
            continue
        if kind == 0:
            m = _rect(xx, yy, cx, cy, rng.uniform(10, w / 2), rng.uniform(10, h / 2), rng.uniform(0, np.pi))
        elif kind == 1:
            m = _ellipse(xx, yy, cx, cy, rng.uniform(6, w / 5), rng.uniform(6, h / 5))
        else:
            ang = rng.uniform(0, np.pi)
            ln = rng.uniform(0.3, 1.0) * w
            m = _capsule(xx, yy, cx - ln * np.cos(ang) / 2, cy - ln * np.sin(ang) / 2,
                         cx + ln * np.cos(ang) / 2, cy + ln * np.sin(ang) / 2, rng.uniform(2, 7))
        img[m] = col


def _place(spec, size, placed, rng, tries=60):
    w, h = spec.width, spec.height
    half = 0.6 * size
    for _ in range(tries):
        cx = rng.uniform(half + 4, w - half - 4)
        cy = rng.uniform(half + 4, h - half - 4)
        if all(abs(cx - px) > half + ph + 10 or abs(cy - py) > half + ph + 10 for px, py, ph in placed):
            return cx, cy
    return None


def render_scene(spec: SyntheticSceneSpec, rng: np.random.Generator, image_id: str = "") -> Scene:
    h, w = spec.height, spec.width
    img = np.zeros((h, w, 3))
    _paint_background(img, spec, rng)
    skin = np.zeros((h, w), dtype=bool)
    owner = np.full((h, w), -1, dtype=np.int64)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    n_hands = int(rng.integers(spec.hands[0], spec.hands[1] + 1))
    gw = np.asarray(spec.grasp_weights, dtype=np.float64)
    placed, grasps = [], []
    for k in range(n_hands):
        size = rng.uniform(*spec.hand_height)
        spot = _place(spec, size, placed, rng)
        if spot is None:
            continue
        cx, cy = spot
        placed.append((cx, cy, 0.6 * size))
        grasp = GRASPS[int(rng.choice(3, p=gw / gw.sum()))]
        ang = rng.uniform(-spec.rotation, spec.rotation)
        aspect = rng.uniform(0.9, 1.1)
        c, s = np.cos(ang), np.sin(ang)
        du, dv = xx - cx, yy - cy
        u = (c * du + s * dv) / (size * aspect)
        v = (-s * du + c * dv) / size
        tone = _skin_tone(spec, rng)
        # smooth shading across the hand
        shade = 1.0 + 0.12 * (u * rng.uniform(-1, 1) + v * rng.uniform(-1, 1))
        layers = _pose_layers(grasp, u, v, rng)
        if rng.random() < spec.decoys:
            layers.insert(0, _decoy_layer(u, v, rng))
        for m, paint in layers:
            if paint == "skin":
                img[m] = tone * shade[m][:, None]
                skin[m] = True
                owner[m] = len(grasps)
            else:
                img[m] = paint
                skin[m] = False
                owner[m] = -1
        grasps.append(grasp)
    tint_name = spec.tints[int(rng.integers(len(spec.tints)))]
    img *= np.asarray(TINTS[tint_name])
    img += rng.normal(0.0, spec.noise, img.shape)
    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    hands = []
    for k, grasp in enumerate(grasps):
        m = owner == k
        if not m.any():
            continue
        ys, xs = np.nonzero(m)
        box = ScoredBox(float(xs.min()), float(ys.min()), float(xs.max() - xs.min() + 1),
                        float(ys.max() - ys.min() + 1))
        hands.append(SyntheticHand(box, grasp, m))
    return Scene(image_id, image, skin, hands, tint_name)


def generate_corpus(spec: SyntheticSceneSpec, n: int, prefix: str = "scene") -> list[Scene]:
    """``n`` scenes; scene ``i`` draws from its own generator ``[seed, i]``."""
    return [render_scene(spec, np.random.default_rng([spec.seed, i]), f"{prefix}{i:05d}")
            for i in range(n)]


# -- corpus directories -----------------------------------------------------

def write_corpus(directory, scenes: list[Scene]) -> None:
    """Layout: ``images/<id>.png``, ``masks/<id>.png`` and ``gt.jsonl``."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for sc in scenes:
        write_image(root / "images" / f"{sc.image_id}.png", sc.image)
        write_mask(root / "masks" / f"{sc.image_id}.png", sc.skin)
        for hd in sc.hands:
            b = hd.box
            lines.append(json.dumps({"image": sc.image_id, "x": b.x, "y": b.y, "w": b.w, "h": b.h,
                                     "grasp": hd.grasp, "tint": sc.tint}))
    (root / "gt.jsonl").write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def read_corpus(directory):
    """Yield ``(image id, image, mask)`` for every image with a matching mask."""
    root = Path(directory)
    for p in sorted((root / "images").iterdir()):
        if p.suffix.lower() not in (".png", ".ppm"):
            continue
        mp = root / "masks" / f"{p.stem}.png"
        if not mp.exists():
            continue
        yield p.stem, read_image(p), read_mask(mp)
