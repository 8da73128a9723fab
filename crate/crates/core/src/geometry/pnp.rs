//! Perspective-n-point: linear DLT initialisation followed by Gauss-Newton
//! refinement of the total squared reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix6, SymmetricEigen, Vector6};

use super::rotation::skew;
use super::{check_finite2, check_finite3, PerspectiveCamera, Pose6Dof, Rotation3, Vec2, Vec3};
use crate::{Error, Result};

/// Refinement stops once one step lowers the cost by less than this (px^2).
pub const PNP_MIN_DECREASE: f64 = 1e-10;
pub const PNP_MAX_ITERATIONS: usize = 100;

const DLT_MIN_POINTS: usize = 6;
const REFINE_MIN_POINTS: usize = 4;
const PLANARITY_TOL: f64 = 1e-10;
const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose6Dof,
    /// Total squared reprojection error in px^2.
    pub residual: f64,
    pub iterations: usize,
    /// Cost before refinement followed by the cost after every accepted step.
    pub cost_history: Vec<f64>,
}

pub fn solve_pnp(pts3d: &[Vec3], pts2d: &[Vec2], cam: &PerspectiveCamera) -> Result<Pose6Dof> {
    solve_pnp_detailed(pts3d, pts2d, cam, None).map(|s| s.pose)
}

/// Full solver. With a `prior` the DLT step is skipped and only four
/// correspondences are required.
pub fn solve_pnp_detailed(pts3d: &[Vec3], pts2d: &[Vec2], cam: &PerspectiveCamera, prior: Option<&Pose6Dof>) -> Result<PnpSolution> {
    if let Some(prior) = prior {
        return refine_pnp(pts3d, pts2d, cam, prior);
    }
    check_inputs(pts3d, pts2d, cam, DLT_MIN_POINTS)?;
    let init = dlt(pts3d, pts2d, cam)?;
    gauss_newton(pts3d, pts2d, cam, init)
}

/// Gauss-Newton refinement from a known starting pose.
pub fn refine_pnp(pts3d: &[Vec3], pts2d: &[Vec2], cam: &PerspectiveCamera, prior: &Pose6Dof) -> Result<PnpSolution> {
    check_inputs(pts3d, pts2d, cam, REFINE_MIN_POINTS)?;
    gauss_newton(pts3d, pts2d, cam, *prior)
}

fn check_inputs(pts3d: &[Vec3], pts2d: &[Vec2], cam: &PerspectiveCamera, min: usize) -> Result<()> {
    cam.validate()?;
    if pts3d.len() != pts2d.len() {
        return Err(Error::dims(format!("solve_pnp: {} 3D points vs {} 2D points", pts3d.len(), pts2d.len())));
    }
    if pts3d.len() < min {
        return Err(Error::degenerate(format!("solve_pnp: need at least {min} correspondences, got {}", pts3d.len())));
    }
    check_finite3(pts3d, "pts3d")?;
    check_finite2(pts2d, "pts2d")
}

fn dlt(pts3d: &[Vec3], pts2d: &[Vec2], cam: &PerspectiveCamera) -> Result<Pose6Dof> {
    let n = pts3d.len();

    // Condition the 3D side: zero centroid, mean distance sqrt(3).
    let centroid = pts3d.iter().sum::<Vec3>() / n as f64;
    let mut cov = Matrix3::zeros();
    let mut mean_dist = 0.0;
    for p in pts3d {
        let d = p - centroid;
        cov += d * d.transpose();
        mean_dist += d.norm();
    }
    mean_dist /= n as f64;
    let eig = SymmetricEigen::new(cov / n as f64);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if hi <= 0.0 || lo <= PLANARITY_TOL * hi {
        return Err(Error::degenerate("solve_pnp: 3D points are coplanar or collinear"));
    }
    let k = 3f64.sqrt() / mean_dist;

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (p, q)) in pts3d.iter().zip(pts2d).enumerate() {
        let x = (p - centroid) * k;
        let xh = [x.x, x.y, x.z, 1.0];
        let u = cam.normalize(q);
        for j in 0..4 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 8 + j)] = -u.x * xh[j];
            a[(2 * i + 1, 4 + j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -u.y * xh[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::degenerate("solve_pnp: DLT svd failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (smallest, second) = (order[0], order[1]);
    let largest = svd.singular_values.max();
    if svd.singular_values[second] <= 1e-9 * largest {
        return Err(Error::degenerate("solve_pnp: DLT system is rank deficient"));
    }

    let row = v_t.row(smallest);
    let p_norm = Matrix3x4::from_fn(|r, c| row[4 * r + c]);
    // Undo the conditioning: P = P' * [kI, -k c; 0, 1].
    let m = p_norm.fixed_view::<3, 3>(0, 0) * k;
    let last = p_norm.column(3) - m * centroid;
    let (mut m, mut last) = (m.into_owned(), last.into_owned());
    if m.determinant() < 0.0 {
        m = -m;
        last = -last;
    }
    let svd_m = m.svd(true, true);
    let scale = svd_m.singular_values.sum() / 3.0;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::degenerate("solve_pnp: DLT produced a singular rotation block"));
    }
    let rotation = Rotation3::nearest(&m)?;
    Pose6Dof::new(rotation, last / scale)
}

fn cost(pts3d: &[Vec3], pts2d: &[Vec2], cam: &PerspectiveCamera, rot: &Matrix3<f64>, t: &Vec3) -> f64 {
    let mut total = 0.0;
    for (p, q) in pts3d.iter().zip(pts2d) {
        let pc = rot * p + t;
        if pc.z <= MIN_DEPTH {
            return f64::INFINITY;
        }
        total += (cam.project(&pc) - q).norm_squared();
    }
    total
}

fn gauss_newton(pts3d: &[Vec3], pts2d: &[Vec2], cam: &PerspectiveCamera, init: Pose6Dof) -> Result<PnpSolution> {
    let mut rot = *init.rotation.matrix();
    let mut t = init.translation;
    let mut current = cost(pts3d, pts2d, cam, &rot, &t);
    let mut history = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < PNP_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (p, q) in pts3d.iter().zip(pts2d) {
            let rp = rot * p;
            let pc = rp + t;
            let inv_z = 1.0 / pc.z;
            let r = cam.project(&pc) - q;
            // d(pixel)/d(camera point)
            let du = [cam.fx * inv_z, 0.0, -cam.fx * pc.x * inv_z * inv_z];
            let dv = [0.0, cam.fy * inv_z, -cam.fy * pc.y * inv_z * inv_z];
            // left perturbation: d(pc)/d(omega) = -[R p]x, d(pc)/dt = I
            let dw = -skew(&rp);
            let mut ju = Vector6::zeros();
            let mut jv = Vector6::zeros();
            for c in 0..3 {
                ju[c] = (0..3).map(|k| du[k] * dw[(k, c)]).sum();
                jv[c] = (0..3).map(|k| dv[k] * dw[(k, c)]).sum();
                ju[3 + c] = du[c];
                jv[3 + c] = dv[c];
            }
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * r.x + jv * r.y;
        }
        let step = match jtj.cholesky() {
            Some(ch) => -ch.solve(&jtr),
            None => match jtj.try_inverse() {
                Some(inv) => -(inv * jtr),
                None => break,
            },
        };

        // Backtrack so the cost never increases.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let dw = Vec3::new(step[0], step[1], step[2]) * alpha;
            let dt = Vec3::new(step[3], step[4], step[5]) * alpha;
            let cand_rot = Rotation3::from_axis_angle(&dw).matrix() * rot;
            let cand_t = t + dt;
            let c = cost(pts3d, pts2d, cam, &cand_rot, &cand_t);
            if c <= current {
                accepted = Some((cand_rot, cand_t, c));
                break;
            }
            alpha *= 0.5;
        }
        let Some((new_rot, new_t, new_cost)) = accepted else {
            converged = true;
            break;
        };
        let decrease = current - new_cost;
        rot = new_rot;
        t = new_t;
        current = new_cost;
        history.push(current);
        if decrease < PNP_MIN_DECREASE {
            converged = true;
            break;
        }
    }

    let pose = Pose6Dof::new(Rotation3::nearest(&rot)?, t)?;
    let residual = cost(pts3d, pts2d, cam, pose.rotation.matrix(), &pose.translation);
    if !converged {
        return Err(Error::NotConverged { pose: Box::new(pose), residual, iterations });
    }
    Ok(PnpSolution { pose, residual, iterations, cost_history: history })
}
