"""Multi-view fusion network.

Tokenizes images, cameras, point maps, and point-feature maps; runs
alternating intra-/inter-frame self-attention with cross-attention geometry
injection before every self-attention layer; decodes camera tokens into
9-dim camera vectors (quaternion, translation, fov).

Frame layout inside a scene: query frames first, then the known frames.
Known frames carry encoded camera tokens; every query frame uses the shared
learnable camera token.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import BadShape, NonFinite
from .pointfeatures import PointFeatureEncoder, disperse_to_feature_maps


@dataclass
class ModelConfig:
    resolution: int = 128
    patch: int = 16
    d_model: int = 128
    n_heads: int = 4
    n_blocks: int = 8          # even: intra-frame blocks alternate with inter-frame
    ffn_mult: int = 2
    head_blocks: int = 2
    point_channels: int = 64   # C, width of per-point feature embeddings
    point_hidden: int = 64
    point_stride: int = 4      # downsample factor for the aggregated point cloud
    use_camera_tokens: bool = True
    use_pointmaps: bool = True
    use_features: bool = True
    injection: str = "cross_attention"  # or "direct_add"
    init_seed: int = 0

    def __post_init__(self):
        if self.resolution % self.patch != 0:
            raise BadShape("resolution must be divisible by patch size")
        if self.patch % self.point_stride != 0:
            raise BadShape("patch must be divisible by point_stride")
        if self.d_model % self.n_heads != 0:
            raise BadShape("d_model must be divisible by n_heads")
        if self.injection not in ("cross_attention", "direct_add"):
            raise BadShape(f"unknown injection {self.injection!r}")

    @property
    def tokens_per_side(self) -> int:
        return self.resolution // self.patch

    @property
    def n_patch_tokens(self) -> int:
        return self.tokens_per_side**2

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class SceneInputs:
    """One training/inference scene: Q query frames + N known frames."""

    query_imgs: torch.Tensor            # (Q, 3, H, W)
    known_imgs: torch.Tensor            # (N, 3, H, W)
    known_cam9: torch.Tensor            # (N, 9)
    pointmaps: torch.Tensor | None      # (N, 3, H, W)
    point_records: torch.Tensor | None  # (S, 9)
    point_provenance: np.ndarray | None  # (S, 3) int64 (view, u, v)

    @property
    def n_query(self) -> int:
        return self.query_imgs.shape[0]

    @property
    def n_known(self) -> int:
        return self.known_imgs.shape[0]


class Attention(nn.Module):
    """Multi-head attention with separate q/kv inputs; deterministic on CPU."""

    def __init__(self, d_model: int, n_heads: int, zero_out: bool = False):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        if zero_out:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def forward(self, xq: torch.Tensor, xkv: torch.Tensor) -> torch.Tensor:
        # xq: (B, Tq, D), xkv: (B, Tk, D)
        B, Tq, D = xq.shape
        Tk = xkv.shape[1]
        q = self.q(xq).view(B, Tq, self.n_heads, self.head_dim).transpose(1, 2)
        k = self.k(xkv).view(B, Tk, self.n_heads, self.head_dim).transpose(1, 2)
        v = self.v(xkv).view(B, Tk, self.n_heads, self.head_dim).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / np.sqrt(self.head_dim)
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.out(y)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, mult: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, mult * d_model)
        self.fc2 = nn.Linear(mult * d_model, d_model)

    def forward(self, x):
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class FusionBlock(nn.Module):
    """Pre-norm: cross-attention injection, then intra- or inter-frame
    self-attention, then a feedforward sublayer, each with a residual."""

    def __init__(self, cfg: ModelConfig, intra: bool):
        super().__init__()
        self.intra = intra
        self.ln_ca = nn.LayerNorm(cfg.d_model)
        self.ca = Attention(cfg.d_model, cfg.n_heads, zero_out=True)
        self.ln_sa = nn.LayerNorm(cfg.d_model)
        self.sa = Attention(cfg.d_model, cfg.n_heads)
        self.ln_ffn = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_mult)

    def forward(self, tokens: torch.Tensor, geometry: torch.Tensor | None):
        # tokens: (F, L+1, D); geometry: (1, G, D) or None
        F, T, D = tokens.shape
        if geometry is not None:
            flat = tokens.reshape(1, F * T, D)
            flat = flat + self.ca(self.ln_ca(flat), geometry)
            tokens = flat.reshape(F, T, D)
        if self.intra:
            normed = self.ln_sa(tokens)
            tokens = tokens + self.sa(normed, normed)
        else:
            flat = tokens.reshape(1, F * T, D)
            normed = self.ln_sa(flat)
            tokens = (flat + self.sa(normed, normed)).reshape(F, T, D)
        tokens = tokens + self.ffn(self.ln_ffn(tokens))
        return tokens


class CameraHead(nn.Module):
    """Self-attention over the per-frame camera tokens, then an MLP to 9 dims."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.blocks = nn.ModuleList()
        for _ in range(cfg.head_blocks):
            self.blocks.append(nn.ModuleDict({
                "ln_sa": nn.LayerNorm(cfg.d_model),
                "sa": Attention(cfg.d_model, cfg.n_heads),
                "ln_ffn": nn.LayerNorm(cfg.d_model),
                "ffn": FeedForward(cfg.d_model, cfg.ffn_mult),
            }))
        self.ln_out = nn.LayerNorm(cfg.d_model)
        self.fc = nn.Linear(cfg.d_model, 9)
        nn.init.normal_(self.fc.weight, std=0.01)
        with torch.no_grad():
            self.fc.bias.copy_(torch.tensor([1.0, 0, 0, 0, 0, 0, 0, 0, 0]))

    def forward(self, cam_tokens: torch.Tensor) -> torch.Tensor:
        x = cam_tokens.unsqueeze(0)  # (1, F, D)
        for blk in self.blocks:
            normed = blk["ln_sa"](x)
            x = x + blk["sa"](normed, normed)
            x = x + blk["ffn"](blk["ln_ffn"](x))
        return self.fc(self.ln_out(x)).squeeze(0)  # (F, 9)


class MultiViewPoseNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        torch.manual_seed(cfg.init_seed)
        self.cfg = cfg
        p, D, C = cfg.patch, cfg.d_model, cfg.point_channels
        self.img_tokenizer = nn.Conv2d(3, D, kernel_size=p, stride=p)
        self.pointmap_tokenizer = nn.Conv2d(3, D, kernel_size=p, stride=p)
        fp = p // cfg.point_stride
        self.featmap_tokenizer = nn.Conv2d(C, D, kernel_size=fp, stride=fp)
        self.camera_encoder = nn.Sequential(
            nn.Linear(9, D), nn.ReLU(), nn.Linear(D, D)
        )
        self.point_encoder = PointFeatureEncoder(C, cfg.point_hidden)
        self.query_token = nn.Parameter(torch.randn(D) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(cfg.n_patch_tokens, D) * 0.02)
        self.frame_embed = nn.Parameter(torch.randn(2, D) * 0.02)  # 0=query, 1=known
        self.blocks = nn.ModuleList(
            [FusionBlock(cfg, intra=(i % 2 == 0)) for i in range(cfg.n_blocks)]
        )
        self.camera_head = CameraHead(cfg)
        self.last_token_count = 0
        self.last_collisions = 0

    # --- tokenizers ------------------------------------------------------

    def tokenize_image(self, imgs: torch.Tensor) -> torch.Tensor:
        """(F, 3, H, W) -> (F, L, D) patch tokens."""
        F, _, H, W = imgs.shape
        if H % self.cfg.patch or W % self.cfg.patch:
            raise BadShape(f"{H}x{W} not divisible by patch {self.cfg.patch}")
        t = self.img_tokenizer(imgs)
        return t.flatten(2).transpose(1, 2)

    def tokenize_camera(self, cam9: torch.Tensor | None) -> torch.Tensor:
        """(N, 9) -> (N, D); None -> the learnable query token (1, D)."""
        if cam9 is None:
            return self.query_token.unsqueeze(0)
        return self.camera_encoder(cam9)

    def tokenize_map(self, maps: torch.Tensor, kind: str) -> torch.Tensor:
        """(N, ch, h, w) -> (N, L, D) for 'pointmap' or 'featmap' inputs."""
        tok = {"pointmap": self.pointmap_tokenizer,
               "featmap": self.featmap_tokenizer}[kind]
        t = tok(maps)
        L = t.shape[2] * t.shape[3]
        if L != self.cfg.n_patch_tokens:
            raise BadShape(f"map produced {L} tokens, expected {self.cfg.n_patch_tokens}")
        return t.flatten(2).transpose(1, 2)

    # --- geometry branch ---------------------------------------------------

    def geometry_tokens(self, scene: SceneInputs,
                        add_pos: bool = True) -> torch.Tensor | None:
        """(1, N*L, D) key/value tokens, or None when geometry is disabled."""
        cfg = self.cfg
        parts = None
        if cfg.use_pointmaps and scene.pointmaps is not None:
            parts = self.tokenize_map(scene.pointmaps, "pointmap")
        if cfg.use_features and scene.point_records is not None:
            emb = self.point_encoder(scene.point_records)
            maps, self.last_collisions = disperse_to_feature_maps(
                emb, scene.point_provenance, scene.n_known,
                (cfg.resolution, cfg.resolution), cfg.point_stride,
            )
            ftok = self.tokenize_map(maps.permute(0, 3, 1, 2), "featmap")
            parts = ftok if parts is None else parts + ftok
        if parts is None:
            return None
        if add_pos:
            parts = parts + self.pos_embed.unsqueeze(0)
        return parts.reshape(1, -1, cfg.d_model)

    # --- forward -----------------------------------------------------------

    def forward(self, scene: SceneInputs) -> torch.Tensor:
        """Per-frame 9-dim camera predictions (queries first, then knowns).

        Quaternions are returned unit-norm on the w >= 0 hemisphere.
        """
        cfg = self.cfg
        Q, N = scene.n_query, scene.n_known
        if N < 1:
            raise BadShape("need at least one known view")

        imgs = torch.cat([scene.query_imgs, scene.known_imgs], dim=0)
        if not torch.isfinite(imgs).all():
            raise NonFinite("image inputs contain NaN/Inf")
        patch = self.tokenize_image(imgs)                      # (F, L, D)
        F, L, D = patch.shape
        patch = patch + self.pos_embed.unsqueeze(0)
        frame_kind = torch.cat([
            torch.zeros(Q, dtype=torch.long), torch.ones(N, dtype=torch.long)
        ])
        patch = patch + self.frame_embed[frame_kind].unsqueeze(1)

        if cfg.use_camera_tokens:
            known_cam = self.tokenize_camera(scene.known_cam9)
        else:
            known_cam = self.query_token.unsqueeze(0).expand(N, -1)
        query_cam = self.tokenize_camera(None).expand(Q, -1)
        cam = torch.cat([query_cam, known_cam], dim=0).unsqueeze(1)  # (F, 1, D)

        direct = cfg.injection == "direct_add"
        geometry = self.geometry_tokens(scene, add_pos=not direct)
        tokens = torch.cat([patch, cam], dim=1)                # (F, L+1, D)

        if geometry is not None and direct:
            # naive fusion baseline: add geometry straight onto the known
            # frames' patch tokens (patch tokens already carry pos embeds)
            g = geometry.reshape(N, L, D)
            tokens = torch.cat([
                tokens[:Q],
                torch.cat([tokens[Q:, :L] + g, tokens[Q:, L:]], dim=1),
            ], dim=0)
            geometry = None

        self.last_token_count = tokens.shape[0] * tokens.shape[1]
        assert self.last_token_count == (L + 1) * (N + Q)

        for blk in self.blocks:
            tokens = blk(tokens, geometry)

        out = self.camera_head(tokens[:, L, :])               # (F, 9)
        if not torch.isfinite(out).all():
            raise NonFinite("network output contains NaN/Inf")
        return canonicalize_camera9(out)


def canonicalize_camera9(raw: torch.Tensor) -> torch.Tensor:
    """Normalize the quaternion part and flip it onto the w >= 0 hemisphere."""
    q = raw[:, :4]
    q = q / q.norm(dim=1, keepdim=True).clamp_min(1e-8)
    sign = torch.where(q[:, :1] < 0, -1.0, 1.0)
    return torch.cat([q * sign, raw[:, 4:]], dim=1)


def build_model(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> MultiViewPoseNet:
    model = MultiViewPoseNet(cfg)
    return model.to(dtype)


def parameter_groups(model: MultiViewPoseNet) -> dict[str, list[str]]:
    """Names split into the geometry-encoder group and everything else."""
    groups = {"encoder": [], "new": []}
    for name, _ in model.named_parameters():
        key = "encoder" if name.startswith("point_encoder.") else "new"
        groups[key].append(name)
    return groups


def scene_from_views(query_rgbs, known_bundles, cfg: ModelConfig,
                     dtype: torch.dtype = torch.float32) -> SceneInputs:
    """Pack query images and known ViewBundles into network inputs.

    Assembles the aggregated point cloud from the known views whenever the
    config uses learned point features.
    """
    from .geometry import Camera9
    from .pointfeatures import assemble_point_cloud

    def chw(img):
        return torch.from_numpy(np.ascontiguousarray(img)).to(dtype).permute(2, 0, 1)

    query_imgs = torch.stack([chw(img) for img in query_rgbs])
    known_imgs = torch.stack([chw(b.rgb) for b in known_bundles])
    cam9 = torch.stack([
        torch.from_numpy(Camera9.encode(b.pose, b.intrinsics).vec).to(dtype)
        for b in known_bundles
    ])
    pointmaps = None
    if cfg.use_pointmaps:
        pointmaps = torch.stack([chw(b.pointmap) for b in known_bundles])
    records = prov = None
    if cfg.use_features:
        ps = assemble_point_cloud(list(known_bundles), cfg.point_stride)
        records = torch.from_numpy(ps.records).to(dtype)
        prov = ps.provenance
    return SceneInputs(query_imgs, known_imgs, cam9, pointmaps, records, prov)
