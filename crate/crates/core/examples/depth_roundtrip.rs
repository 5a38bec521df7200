//! Sphere-traces a depth map of an analytic sphere, unprojects it into an
//! oriented point cloud and checks every point against the exact surface.
//!
//! Usage: `cargo run --release --example depth_roundtrip -- [image_size]`

use posegen::geometry::{unproject_depth, CameraIntrinsics, RigidTransform, Vec3};
use posegen::sdf::{raycast_depth, AnalyticSdf, TraceConfig};

fn main() -> posegen::Result<()> {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let sphere = AnalyticSdf::sphere(0.5);
    let k = CameraIntrinsics::from_fov(size, 40.0)?;
    let pose = RigidTransform::look_at(Vec3::new(0.8, -0.6, -2.2), Vec3::zeros(), Vec3::y())?;
    let depth = raycast_depth(&sphere, &k, &pose, &TraceConfig::default())?;
    let cloud = unproject_depth(&depth, &k)?;

    let mut worst: f64 = 0.0;
    let mut normal_err: f64 = 0.0;
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let world = pose.apply_point(p);
        worst = worst.max(sphere.eval(&world).abs());
        if n.norm() > 0.5 {
            // Camera-frame normal against the exact outward normal.
            let exact = pose.inverse().apply_vector(&world.normalize());
            normal_err = normal_err.max((n - exact).norm());
        }
    }
    println!("{} valid pixels of {}", depth.valid_count(), size * size);
    println!("max |sdf| of unprojected points: {worst:.2e}");
    println!("max normal deviation: {normal_err:.3}");
    Ok(())
}
