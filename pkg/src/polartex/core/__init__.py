from .frames import select_sharpest, sharpness
from .imageio import read_pfm, read_texture, write_pfm, write_png, write_texture, write_texture_png
from .mesh import compute_tangent_frames, compute_vertex_normals, load_obj, save_obj
from .texture import (
    bilinear_sample,
    bilinear_splat,
    bilinear_taps,
    build_mip_chain,
    gather,
    scatter,
    upsample2x,
)
from .types import F0, Camera, CaptureView, PointLight, TextureSet, TriMesh

__all__ = [
    "F0",
    "Camera",
    "CaptureView",
    "PointLight",
    "TextureSet",
    "TriMesh",
    "bilinear_sample",
    "bilinear_splat",
    "bilinear_taps",
    "build_mip_chain",
    "compute_tangent_frames",
    "compute_vertex_normals",
    "gather",
    "load_obj",
    "read_pfm",
    "read_texture",
    "save_obj",
    "scatter",
    "select_sharpest",
    "sharpness",
    "upsample2x",
    "write_pfm",
    "write_png",
    "write_texture",
    "write_texture_png",
]
