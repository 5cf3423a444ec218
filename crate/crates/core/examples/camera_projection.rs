//! Project a 3D point through three cameras and recover it from the pixels.

use nalgebra::Vector3;
use videq::geometry::{image_to_raster, CameraModel};

fn main() -> videq::Result<()> {
    let normals = [[0.0, 0.0, 1.0], [1.0, 0.25, 0.35], [-0.3, 1.0, 0.45]];
    let thetas = [0.1, 0.35, -0.25];
    let cams: Vec<CameraModel> = normals
        .iter()
        .zip(thetas)
        .enumerate()
        .map(|(i, (n, th))| {
            let n = Vector3::from(*n).normalize();
            CameraModel::looking_along(n, n * 50.0, 0.05, th, i == 0)
        })
        .collect::<videq::Result<_>>()?;

    let x = Vector3::new(1.5, -2.0, 3.25);
    let mut stacked = nalgebra::DMatrix::zeros(6, 3);
    let mut rhs = nalgebra::DVector::zeros(6);
    for (k, cam) in cams.iter().enumerate() {
        let rot = cam.rotation()?;
        let p = cam.project_with(&rot, &x, false);
        let (u, v) = image_to_raster([p.x, p.y], cam.image_size);
        println!("camera {k}: raster ({u:.3}, {v:.3})");
        let rows = rot.in_plane_rows();
        let m = cam.measurement_map([p.x, p.y]);
        for r in 0..2 {
            for c in 0..3 {
                stacked[(2 * k + r, c)] = rows[(r, c)];
            }
            rhs[2 * k + r] = m[r];
        }
    }
    let back = stacked.svd(true, true).solve(&rhs, 1e-12).expect("full rank rig");
    println!("true {:?}\nback {:?}", x.as_slice(), back.as_slice());
    Ok(())
}
