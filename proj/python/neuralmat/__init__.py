"""Material capture from flash photographs and infinite-field synthesis."""

from ._core import (
    CheckpointError,
    IoError,
    Material,
    Model,
    create_model,
    export_maps,
    fixture_names,
    fresnel_schlick,
    ggx_ndf,
    height_to_normals,
    import_maps,
    interpolate,
    kl_divergence,
    load_material,
    load_model,
    noise_crop,
    procedural_material,
    shade,
    smith_g,
    srgb_encode,
    train,
    xyz_histogram_l1,
)

__all__ = [name for name in dir() if not name.startswith("_")]
