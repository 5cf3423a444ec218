//! Camera parameter learning and 3D triangulation from three pixel tracks.
//!
//! Every camera measures `m_i = R_i^- x`, the two in-plane components of the
//! rotated point. Camera pixels relate to it through
//! `m_i = s_i T(theta_i) x_c + delta_c`. With one camera calibrated the other
//! two scales/rotations are learned by requiring the point triangulated from
//! cameras 2 and 3 to reproduce camera 1's measurement.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt17, parse_row, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{raster_to_image, CameraModel};
use crate::synth::ValidityMask;
use crate::tracking::PixelTrack;

/// Minimum number of frames where all three cameras see the target.
pub const MIN_JOINT_FRAMES: usize = 10;

/// Settings of the adaptive-step descent in [`fit_camera_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step: f64,
    pub max_iters: usize,
    /// Relative loss decrease below which a window counts as stalled.
    pub rel_tol: f64,
    pub window: usize,
    /// Consecutive non-improving steps that end the run unconverged.
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step: 1e-2,
            max_iters: 20_000,
            rel_tol: 1e-10,
            window: 100,
            patience: 500,
        }
    }
}

/// Learned rig: scale, rotation and offset of every camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigEstimate {
    pub s: [f64; 3],
    pub theta: [f64; 3],
    pub delta_c: [[f64; 2]; 3],
    pub which_calibrated: usize,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RigEstimate {
    /// Rig taken directly from fully known cameras.
    pub fn from_cameras(cameras: &[CameraModel]) -> Result<Self> {
        let cams = three(cameras)?;
        Ok(Self {
            s: cams.map(|c| c.s),
            theta: cams.map(|c| c.theta),
            delta_c: cams.map(|c| c.delta_c),
            which_calibrated: calibrated_index(cameras)?,
            final_loss: 0.0,
            iterations: 0,
            converged: true,
        })
    }

    /// `cameras` with the learned scale, rotation and offset written in.
    pub fn apply(&self, cameras: &[CameraModel]) -> Vec<CameraModel> {
        cameras
            .iter()
            .enumerate()
            .map(|(i, c)| CameraModel {
                s: self.s[i],
                theta: self.theta[i],
                delta_c: self.delta_c[i],
                ..c.clone()
            })
            .collect()
    }

    pub fn write_json<W: Write>(&self, cameras: &[CameraModel], w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Report<'a> {
            cameras: Vec<CameraModel>,
            fit: &'a RigEstimate,
        }
        serde_json::to_writer_pretty(
            w,
            &Report {
                cameras: self.apply(cameras),
                fit: self,
            },
        )?;
        Ok(())
    }
}

fn three(cameras: &[CameraModel]) -> Result<[&CameraModel; 3]> {
    match cameras {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Validation(format!("need exactly 3 cameras, got {}", cameras.len()))),
    }
}

fn calibrated_index(cameras: &[CameraModel]) -> Result<usize> {
    let idx: Vec<usize> = (0..cameras.len()).filter(|i| cameras[*i].calibrated).collect();
    match idx[..] {
        [i] => Ok(i),
        _ => Err(Error::Validation(format!("exactly one camera must be calibrated, got {}", idx.len()))),
    }
}

fn in_plane_rows(cameras: &[CameraModel]) -> Result<[Matrix2x3<f64>; 3]> {
    let cams = three(cameras)?;
    let mut rows = [Matrix2x3::zeros(); 3];
    for (r, c) in rows.iter_mut().zip(cams) {
        c.validate()?;
        *r = c.rotation()?.in_plane_rows();
    }
    Ok(rows)
}

/// Moore-Penrose pseudo-inverse of stacked in-plane rows, with a rank check.
fn stacked_pinv(rows: &[&Matrix2x3<f64>], label: &str) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(2 * rows.len(), 3);
    for (k, r) in rows.iter().enumerate() {
        m.view_mut((2 * k, 0), (2, 3)).copy_from(*r);
    }
    let svd = m.svd(true, true);
    let sv = &svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    if !(min > 1e-9 * max) {
        return Err(Error::Rank(format!(
            "{label}: stacked camera rows have rank < 3 (singular values {:?}); camera normals are parallel",
            sv.as_slice()
        )));
    }
    svd.pseudo_inverse(0.0).map_err(|e| Error::Rank(e.to_string()))
}

fn image_coords(track: &PixelTrack, cam: &CameraModel, i: usize) -> [f64; 2] {
    let c = track.coords[i];
    raster_to_image(c[0], c[1], cam.image_size)
}

/// Frame-wise AND of the three track masks.
pub fn joint_mask(tracks: &[PixelTrack]) -> Result<ValidityMask> {
    let [a, b, c] = match tracks {
        [a, b, c] => [a, b, c],
        _ => return Err(Error::Validation(format!("need exactly 3 tracks, got {}", tracks.len()))),
    };
    a.mask.and(&b.mask)?.and(&c.mask)
}

/// Quadratic model `L(p) = p^T H p + 2 g^T p + c` of the reprojection loss
/// in `p = (s2 cos t2, s2 sin t2, s3 cos t3, s3 sin t3)`.
struct Quadratic {
    h: Matrix4<f64>,
    g: Vector4<f64>,
    c: f64,
}

impl Quadratic {
    fn loss(&self, p: &Vector4<f64>) -> f64 {
        (p.dot(&(self.h * p)) + 2.0 * self.g.dot(p) + self.c).max(0.0)
    }

    fn grad(&self, p: &Vector4<f64>) -> Vector4<f64> {
        2.0 * (self.h * p + self.g)
    }
}

/// Indices of the calibrated camera and the two cameras to learn.
fn roles(cameras: &[CameraModel]) -> Result<(usize, [usize; 2])> {
    let k = calibrated_index(cameras)?;
    let others: Vec<usize> = (0..3).filter(|i| *i != k).collect();
    Ok((k, [others[0], others[1]]))
}

fn build_quadratic(tracks: &[PixelTrack], cameras: &[CameraModel], mask: &ValidityMask) -> Result<Quadratic> {
    let rows = in_plane_rows(cameras)?;
    let (k, [a, b]) = roles(cameras)?;
    let pinv = stacked_pinv(&[&rows[a], &rows[b]], "uncalibrated cameras")?;
    // K maps stacked measurements of the two cameras to camera k's in-plane coordinates
    let kmat = DMatrix::from_column_slice(2, 3, rows[k].as_slice()) * pinv;
    let (mut h, mut g, mut c) = (Matrix4::zeros(), Vector4::zeros(), 0.0);
    let n = mask.count_valid() as f64;
    for i in (0..mask.len()).filter(|i| mask.is_valid(*i)) {
        let m1 = cameras[k].measurement_map(image_coords(&tracks[k], &cameras[k], i));
        // m_j = [[x, y], [y, -x]] (a, b) + delta_c for p_j = (a, b)
        let mut j = DMatrix::<f64>::zeros(4, 4);
        let mut off = DVector::<f64>::zeros(4);
        for (slot, cam) in [a, b].into_iter().enumerate() {
            let [x, y] = image_coords(&tracks[cam], &cameras[cam], i);
            j[(2 * slot, 2 * slot)] = x;
            j[(2 * slot, 2 * slot + 1)] = y;
            j[(2 * slot + 1, 2 * slot)] = y;
            j[(2 * slot + 1, 2 * slot + 1)] = -x;
            off[2 * slot] = cameras[cam].delta_c[0];
            off[2 * slot + 1] = cameras[cam].delta_c[1];
        }
        let a_t = &kmat * j;
        let r0 = &kmat * off - DVector::from_column_slice(&m1);
        for p in 0..4 {
            g[p] += a_t.column(p).dot(&r0) / n;
            for q in 0..4 {
                h[(p, q)] += a_t.column(p).dot(&a_t.column(q)) / n;
            }
        }
        c += r0.norm_squared() / n;
    }
    Ok(Quadratic { h, g, c })
}

/// Mean squared reprojection residual of camera `k` for the given
/// uncalibrated `(s, theta)` pairs (ordered as the uncalibrated cameras).
pub fn camera_loss(tracks: &[PixelTrack], cameras: &[CameraModel], params: [(f64, f64); 2]) -> Result<f64> {
    let mask = joint_mask(tracks)?;
    let q = build_quadratic(tracks, cameras, &mask)?;
    let p = Vector4::new(
        params[0].0 * params[0].1.cos(),
        params[0].0 * params[0].1.sin(),
        params[1].0 * params[1].1.cos(),
        params[1].0 * params[1].1.sin(),
    );
    Ok(q.loss(&p))
}

/// Learn the two uncalibrated cameras' scale and in-plane rotation by
/// adaptive-step gradient descent starting from `s = 1, theta = 0`.
/// Offsets come from the known camera positions.
pub fn fit_camera_params(tracks: &[PixelTrack], cameras: &[CameraModel], opt: &OptimizerConfig) -> Result<RigEstimate> {
    let mask = joint_mask(tracks)?;
    let n = mask.count_valid();
    if n < MIN_JOINT_FRAMES {
        return Err(Error::InsufficientData {
            needed: MIN_JOINT_FRAMES,
            found: n,
        });
    }
    let q = build_quadratic(tracks, cameras, &mask)?;
    let (k, [a, b]) = roles(cameras)?;
    // Jacobi preconditioner keeps the step meaningful across pixel scales
    let precond = q.h.diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 });
    let mut p = Vector4::new(1.0, 0.0, 1.0, 0.0);
    let mut loss = q.loss(&p);
    let mut step = opt.step;
    let mut since_improve = 0;
    let mut window_start = loss;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opt.max_iters {
        iterations = it;
        let dir = q.grad(&p).component_mul(&precond);
        let cand = p - dir * step;
        let cand_loss = q.loss(&cand);
        if cand_loss < loss {
            p = cand;
            loss = cand_loss;
            step *= 1.2;
            since_improve = 0;
        } else {
            step *= 0.5;
            since_improve += 1;
            if since_improve >= opt.patience {
                break;
            }
        }
        if loss == 0.0 {
            converged = true;
            break;
        }
        if it % opt.window == 0 {
            if (window_start - loss) <= opt.rel_tol * window_start.abs() {
                converged = true;
                break;
            }
            window_start = loss;
        }
    }
    let mut est = RigEstimate::from_cameras(cameras)?;
    for (slot, cam) in [a, b].into_iter().enumerate() {
        let (pa, pb) = (p[2 * slot], p[2 * slot + 1]);
        est.s[cam] = pa.hypot(pb);
        est.theta[cam] = pb.atan2(pa);
        est.delta_c[cam] = crate::geometry::plane_offset(&cameras[cam])?;
    }
    est.which_calibrated = k;
    est.final_loss = loss;
    est.iterations = iterations;
    est.converged = converged;
    Ok(est)
}

/// Triangulated trajectory; samples outside `mask` are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub trajectory: Trajectory,
    pub mask: ValidityMask,
}

impl Reconstruction {
    /// Only the jointly observed samples.
    pub fn valid_samples(&self) -> Trajectory {
        let keep: Vec<usize> = (0..self.mask.len()).filter(|i| self.mask.is_valid(*i)).collect();
        Trajectory {
            t: keep.iter().map(|i| self.trajectory.t[*i]).collect(),
            x: keep.iter().map(|i| self.trajectory.x[*i]).collect(),
        }
    }

    /// `t,x,y,z,valid`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,y,z,valid")?;
        for ((t, x), ok) in self.trajectory.t.iter().zip(&self.trajectory.x).zip(&self.mask.0) {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt17(*t),
                fmt17(x[0]),
                fmt17(x[1]),
                fmt17(x[2]),
                u8::from(*ok)
            )?;
        }
        Ok(())
    }

    /// Inverse of [`Reconstruction::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut t = Vec::new();
        let mut x = Vec::new();
        let mut valid = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let row = parse_row(&line, 5)?;
            t.push(row[0]);
            x.push([row[1], row[2], row[3]]);
            valid.push(row[4] != 0.0);
        }
        Ok(Self {
            trajectory: Trajectory { t, x },
            mask: ValidityMask(valid),
        })
    }
}

/// Least-squares solve of the stacked 6x3 system per jointly valid frame.
/// Sample times are `frame * (1 / fps)`, matching the simulator's clock.
pub fn reconstruct_3d(tracks: &[PixelTrack], rig: &RigEstimate, cameras: &[CameraModel], fps: f64) -> Result<Reconstruction> {
    let mask = joint_mask(tracks)?;
    let cams = rig.apply(cameras);
    let rows = in_plane_rows(&cams)?;
    let pinv = stacked_pinv(&[&rows[0], &rows[1], &rows[2]], "camera rig")?;
    let mut x = Vec::with_capacity(mask.len());
    let mut m = DVector::<f64>::zeros(6);
    for i in 0..mask.len() {
        if !mask.is_valid(i) {
            x.push([f64::NAN; 3]);
            continue;
        }
        for (k, cam) in cams.iter().enumerate() {
            let mk = cam.measurement_map(image_coords(&tracks[k], cam, i));
            m[2 * k] = mk[0];
            m[2 * k + 1] = mk[1];
        }
        let p = &pinv * &m;
        x.push([p[0], p[1], p[2]]);
    }
    let dt = 1.0 / fps;
    let t = tracks[0].frames.iter().map(|f| *f as f64 * dt).collect();
    Ok(Reconstruction {
        trajectory: Trajectory { t, x },
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Plane;
    use crate::synth::{generate_scene, SceneConfig};

    fn scene(quantize: bool) -> crate::synth::Scene {
        let mut cfg = SceneConfig::new("Lorenz", [10.0, 10.0, 0.0], 5);
        cfg.duration = 8.0;
        cfg.quantize = quantize;
        generate_scene(&cfg).unwrap()
    }

    fn blind(cams: &[CameraModel]) -> Vec<CameraModel> {
        cams.iter()
            .map(|c| {
                let mut c = c.clone();
                if !c.calibrated {
                    c.s = 1.0;
                    c.theta = 0.0;
                }
                c
            })
            .collect()
    }

    /// Direct least-squares minimiser of the quadratic, as an oracle.
    fn closed_form(tracks: &[PixelTrack], cams: &[CameraModel]) -> Vector4<f64> {
        let q = build_quadratic(tracks, cams, &joint_mask(tracks).unwrap()).unwrap();
        q.h.lu().solve(&(-q.g)).unwrap()
    }

    #[test]
    fn recovers_parameters_without_quantization() {
        let sc = scene(false);
        let est = fit_camera_params(&sc.tracks, &blind(&sc.cameras), &OptimizerConfig::default()).unwrap();
        assert!(est.converged);
        for i in 0..3 {
            assert!((est.s[i] / sc.cameras[i].s - 1.0).abs() < 1e-3, "{i}: {} vs {}", est.s[i], sc.cameras[i].s);
            assert!((est.theta[i] - sc.cameras[i].theta).abs() < 1e-3);
        }
        let p = closed_form(&sc.tracks, &blind(&sc.cameras));
        let (_, [a, _]) = roles(&sc.cameras).unwrap();
        assert!((p[0].hypot(p[1]) - est.s[a]).abs() < 1e-6 * est.s[a]);
    }

    #[test]
    fn quantized_scale_within_one_percent() {
        let sc = scene(true);
        let est = fit_camera_params(&sc.tracks, &blind(&sc.cameras), &OptimizerConfig::default()).unwrap();
        for i in 0..3 {
            assert!((est.s[i] / sc.cameras[i].s - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn truth_is_a_local_minimum() {
        let sc = scene(false);
        let (_, [a, b]) = roles(&sc.cameras).unwrap();
        let truth = [(sc.cameras[a].s, sc.cameras[a].theta), (sc.cameras[b].s, sc.cameras[b].theta)];
        let base = camera_loss(&sc.tracks, &sc.cameras, truth).unwrap();
        assert!(base < 1e-12, "{base}");
        for f in [-0.1, -0.03, 0.03, 0.1] {
            let mut p = truth;
            p[0].0 *= 1.0 + f;
            assert!(camera_loss(&sc.tracks, &sc.cameras, p).unwrap() >= base);
            let mut p = truth;
            p[1].1 += f;
            assert!(camera_loss(&sc.tracks, &sc.cameras, p).unwrap() >= base);
        }
    }

    #[test]
    fn insufficient_joint_frames() {
        let mut sc = scene(false);
        for i in 5..sc.tracks[1].len() {
            sc.tracks[1].mask.0[i] = false;
        }
        let err = fit_camera_params(&sc.tracks, &sc.cameras, &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 10, found: 5 }));
    }

    #[test]
    fn exact_inverse_with_true_rig() {
        let sc = scene(false);
        let rig = RigEstimate::from_cameras(&sc.cameras).unwrap();
        let rec = reconstruct_3d(&sc.tracks, &rig, &sc.cameras, 25.0).unwrap();
        for (a, b) in rec.trajectory.x.iter().zip(&sc.truth.x) {
            for d in 0..3 {
                assert!((a[d] - b[d]).abs() < 1e-9, "{a:?} {b:?}");
            }
        }
        assert_eq!(rec.trajectory.t, sc.truth.t);
    }

    #[test]
    fn quantized_rmse_bound() {
        let sc = scene(true);
        let rig = RigEstimate::from_cameras(&sc.cameras).unwrap();
        let rec = reconstruct_3d(&sc.tracks, &rig, &sc.cameras, 25.0).unwrap();
        let smax = sc.cameras.iter().map(|c| c.s).fold(0.0, f64::max);
        for d in 0..3 {
            let mse = rec.trajectory.x.iter().zip(&sc.truth.x).map(|(a, b)| (a[d] - b[d]).powi(2)).sum::<f64>()
                / sc.truth.len() as f64;
            assert!(mse.sqrt() <= 2.0 * smax);
        }
    }

    #[test]
    fn masked_frame_is_dropped() {
        let mut sc = scene(false);
        sc.tracks[2].mask.0[7] = false;
        let rig = RigEstimate::from_cameras(&sc.cameras).unwrap();
        let rec = reconstruct_3d(&sc.tracks, &rig, &sc.cameras, 25.0).unwrap();
        assert!(!rec.mask.is_valid(7));
        assert!(rec.trajectory.x[7][0].is_nan());
        assert_eq!(rec.valid_samples().len(), sc.truth.len() - 1);
        assert!(!rec.valid_samples().t.contains(&(7.0 / 25.0)));
    }

    #[test]
    fn parallel_normals_are_rank_deficient() {
        let sc = scene(false);
        let mut cams = sc.cameras.clone();
        for c in &mut cams {
            c.plane = Plane::new(0.0, 0.0, 1.0, 0.0).unwrap();
        }
        let rig = RigEstimate::from_cameras(&cams).unwrap();
        assert!(matches!(reconstruct_3d(&sc.tracks, &rig, &cams, 25.0), Err(Error::Rank(_))));
    }

    #[test]
    fn loss_ignores_retiming() {
        let sc = scene(false);
        let p = [(1.3, 0.2), (0.8, -0.1)];
        let base = camera_loss(&sc.tracks, &sc.cameras, p).unwrap();
        let mut shuffled = sc.tracks.clone();
        for t in &mut shuffled {
            t.coords.reverse();
            t.mask.0.reverse();
        }
        let again = camera_loss(&shuffled, &sc.cameras, p).unwrap();
        assert!((base - again).abs() <= 1e-9 * base);
    }
}
