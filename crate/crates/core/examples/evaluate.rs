//! Scores a mesh against a reference with Chamfer distance, F-score and
//! bounding-box IoU. Without arguments it compares a sphere with a slightly
//! shifted copy.
//!
//! Usage: `cargo run --release --example evaluate -- [gen.obj gt.obj]`

use posegen::geometry::Vec3;
use posegen::metrics::{evaluate_meshes, MetricConfig};
use posegen::sdf::{marching_cubes, sample_sdf_grid, AnalyticSdf, GridBounds};

fn main() -> posegen::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (gen, gt) = if let [a, b] = args.as_slice() {
        (posegen::io::read_obj(a)?, posegen::io::read_obj(b)?)
    } else {
        let mesh = |sdf: AnalyticSdf| -> posegen::Result<_> {
            Ok(marching_cubes(&sample_sdf_grid(&sdf, GridBounds::cube(1.0), [48; 3])?, 0.0))
        };
        (
            mesh(AnalyticSdf::sphere(0.5).translated(Vec3::new(0.02, 0.0, 0.0)))?,
            mesh(AnalyticSdf::sphere(0.5))?,
        )
    };
    let report = evaluate_meshes(&gen, &gt, None, &MetricConfig::default())?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
