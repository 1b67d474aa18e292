//! Meshes, UV rasterisation and position maps.

mod mesh;
mod posmap;
pub mod raster;
mod synthetic;

pub use mesh::{load_obj, parse_obj, TriMesh};
pub use posmap::{
    mesh_from_position_map, rasterize_position_map, round_trip, sample_positions, texel_owners, PositionMap,
    PreviewNormalization, RoundTrip,
};
pub use synthetic::{
    bundled_head, bundled_head_obj, bundled_head_params, make_synthetic_position_gt, Bump, HeadParams, HeadShape,
    BUNDLED_SEGMENTS, MAX_LATITUDE_DEG, UV_MARGIN,
};
