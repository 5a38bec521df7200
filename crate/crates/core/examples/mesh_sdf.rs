//! Samples an analytic signed distance field on a lattice, extracts its
//! zero level set with marching cubes and writes the mesh as OBJ.
//!
//! Usage: `cargo run --release --example mesh_sdf -- [resolution] [out.obj]`

use posegen::sdf::{marching_cubes, sample_sdf_grid, AnalyticSdf, GridBounds};

fn main() -> posegen::Result<()> {
    let mut args = std::env::args().skip(1);
    let res: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);
    let out = args.next().unwrap_or_else(|| "torus.obj".into());

    let torus = AnalyticSdf::torus(0.5, 0.2);
    let grid = sample_sdf_grid(&torus, GridBounds::cube(1.0), [res; 3])?;
    let mesh = marching_cubes(&grid, 0.0);
    let analytic = 2.0 * std::f64::consts::PI.powi(2) * 0.5 * 0.2f64.powi(2);
    println!(
        "{} vertices, {} faces, closed: {}, volume {:.4} (analytic {analytic:.4})",
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.is_closed(),
        mesh.signed_volume()
    );
    posegen::io::write_obj(&out, &mesh)?;
    println!("wrote {out}");
    Ok(())
}
