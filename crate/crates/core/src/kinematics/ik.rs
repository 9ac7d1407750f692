use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::dls::{self, DlsParams};
use super::joint::{Chain, JointType, OpwParams};
use super::KinematicsError;
use crate::geometry::{Pose, Vec3};

const STRUCT_EPS: f64 = 1e-12;
/// Round-trip acceptance for analytic branches.
const BRANCH_TOL: f64 = 1e-7;
/// How far off the working plane a planar target may sit, mm / rad.
const PLANE_TOL: f64 = 1e-6;

/// Which solver a chain uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum IkFamily {
    Planar2r { l1: f64, l2: f64 },
    Planar3r { l1: f64, l2: f64, l3: f64 },
    SphericalWrist(OpwParams),
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkSolveRecord {
    pub solutions: Vec<Vec<f64>>,
    pub chosen: usize,
    pub q_prev: Vec<f64>,
}

impl IkSolveRecord {
    pub fn q(&self) -> &[f64] {
        &self.solutions[self.chosen]
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= STRUCT_EPS
}

fn is_translation(p: &Pose, x: f64, y: f64, z: f64) -> bool {
    p.orientation.angle() <= STRUCT_EPS && near(p.position.x, x) && near(p.position.y, y) && near(p.position.z, z)
}

fn axis_is(a: &Vec3, b: Vec3) -> bool {
    (a - b).norm() <= STRUCT_EPS
}

impl IkFamily {
    /// Recognise the analytic families by structure; anything else is numeric.
    pub fn detect(chain: &Chain) -> IkFamily {
        let j = chain.joints();
        if j.iter().any(|j| j.kind != JointType::Revolute) || j[0].origin.orientation.angle() > STRUCT_EPS {
            return IkFamily::Numeric;
        }
        let tool = chain.tool();
        let all_z = j.iter().all(|j| axis_is(&j.axis, Vec3::z()));
        match j.len() {
            2 if all_z => {
                let (l1, l2) = (j[1].origin.position.x, tool.position.x);
                if is_translation(&j[1].origin, l1, 0.0, 0.0) && is_translation(tool, l2, 0.0, 0.0) && l1 > 0.0 && l2 > 0.0 {
                    return IkFamily::Planar2r { l1, l2 };
                }
            }
            3 if all_z => {
                let (l1, l2, l3) = (j[1].origin.position.x, j[2].origin.position.x, tool.position.x);
                if is_translation(&j[1].origin, l1, 0.0, 0.0)
                    && is_translation(&j[2].origin, l2, 0.0, 0.0)
                    && is_translation(tool, l3, 0.0, 0.0)
                    && l1 > 0.0
                    && l2 > 0.0
                {
                    return IkFamily::Planar3r { l1, l2, l3 };
                }
            }
            6 => {
                let axes = [Vec3::z(), Vec3::y(), Vec3::y(), Vec3::z(), Vec3::y(), Vec3::z()];
                let o1 = j[1].origin.position;
                let p = OpwParams {
                    a1: o1.x,
                    b: o1.y,
                    c1: o1.z,
                    c2: j[2].origin.position.z,
                    a2: j[3].origin.position.x,
                    c3: j[3].origin.position.z,
                    c4: 0.0,
                };
                let shape = j.iter().zip(&axes).all(|(j, a)| axis_is(&j.axis, *a))
                    && is_translation(&j[1].origin, p.a1, p.b, p.c1)
                    && is_translation(&j[2].origin, 0.0, 0.0, p.c2)
                    && is_translation(&j[3].origin, p.a2, 0.0, p.c3)
                    && is_translation(&j[4].origin, 0.0, 0.0, 0.0)
                    && is_translation(&j[5].origin, 0.0, 0.0, 0.0)
                    && p.c2 > 0.0
                    && (p.a2 != 0.0 || p.c3 != 0.0);
                if shape {
                    return IkFamily::SphericalWrist(p);
                }
            }
            _ => {}
        }
        IkFamily::Numeric
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self, IkFamily::Numeric)
    }
}

fn acos_tol(x: f64) -> f64 {
    if x.abs() > 1.0 + 1e-10 {
        f64::NAN
    } else {
        x.clamp(-1.0, 1.0).acos()
    }
}

/// Both elbow branches of a planar two-link arm reaching `(x, y)`.
///
/// Branch 0 has the positive elbow angle. At the reach boundary the branches
/// coincide and only one is returned.
pub fn planar_2r_branches(l1: f64, l2: f64, x: f64, y: f64) -> Vec<[f64; 2]> {
    let c2 = (x * x + y * y - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(c2.abs() <= 1.0 + 1e-12) {
        return Vec::new();
    }
    let c2 = c2.clamp(-1.0, 1.0);
    let s2 = (1.0 - c2 * c2).sqrt();
    let branch = |s2: f64| {
        let t2 = s2.atan2(c2);
        let t1 = y.atan2(x) - (l2 * s2).atan2(l1 + l2 * c2);
        [t1, t2]
    };
    if s2 == 0.0 {
        vec![branch(0.0)]
    } else {
        vec![branch(s2), branch(-s2)]
    }
}

/// The eight closed-form branches of a spherical-wrist arm for a flange pose
/// expressed in the first joint's frame. Unreachable branches are NaN.
pub fn spherical_wrist_branches(p: &OpwParams, flange: &Pose) -> [[f64; 6]; 8] {
    let m = flange.orientation.to_rotation_matrix().into_inner();
    let c = flange.position - m * Vec3::z() * p.c4;

    let nx1 = ((c.x * c.x + c.y * c.y) - p.b * p.b).sqrt() - p.a1;
    let tmp1 = c.y.atan2(c.x);
    let tmp2 = p.b.atan2(nx1 + p.a1);
    let theta1_i = tmp1 - tmp2;
    let theta1_ii = tmp1 + tmp2 - PI;

    let tmp3 = c.z - p.c1;
    let s1_2 = nx1 * nx1 + tmp3 * tmp3;
    let tmp4 = nx1 + 2.0 * p.a1;
    let s2_2 = tmp4 * tmp4 + tmp3 * tmp3;
    let kappa_2 = p.a2 * p.a2 + p.c3 * p.c3;
    let c2_2 = p.c2 * p.c2;
    let s1 = s1_2.sqrt();
    let s2 = s2_2.sqrt();

    let tmp13 = acos_tol((s1_2 + c2_2 - kappa_2) / (2.0 * s1 * p.c2));
    let tmp14 = nx1.atan2(tmp3);
    let theta2_i = -tmp13 + tmp14;
    let theta2_ii = tmp13 + tmp14;

    let tmp15 = acos_tol((s2_2 + c2_2 - kappa_2) / (2.0 * s2 * p.c2));
    let tmp16 = (nx1 + 2.0 * p.a1).atan2(tmp3);
    let theta2_iii = -tmp15 - tmp16;
    let theta2_iv = tmp15 - tmp16;

    let tmp9 = 2.0 * p.c2 * kappa_2.sqrt();
    let tmp10 = p.a2.atan2(p.c3);
    let tmp11 = acos_tol((s1_2 - c2_2 - kappa_2) / tmp9);
    let tmp12 = acos_tol((s2_2 - c2_2 - kappa_2) / tmp9);
    let theta3 = [tmp11 - tmp10, -tmp11 - tmp10, tmp12 - tmp10, -tmp12 - tmp10];
    let theta2 = [theta2_i, theta2_ii, theta2_iii, theta2_iv];
    let theta1 = [theta1_i, theta1_i, theta1_ii, theta1_ii];

    let mut out = [[f64::NAN; 6]; 8];
    for k in 0..4 {
        let (sin1, cos1) = theta1[k].sin_cos();
        let (s23, c23) = (theta2[k] + theta3[k]).sin_cos();
        let mk = m[(0, 2)] * s23 * cos1 + m[(1, 2)] * s23 * sin1 + m[(2, 2)] * c23;
        let theta5 = (1.0 - mk * mk).max(0.0).sqrt().atan2(mk);
        let t4y = m[(1, 2)] * cos1 - m[(0, 2)] * sin1;
        let t4x = m[(0, 2)] * c23 * cos1 + m[(1, 2)] * c23 * sin1 - m[(2, 2)] * s23;
        let theta4 = t4y.atan2(t4x);
        let t6y = m[(0, 1)] * s23 * cos1 + m[(1, 1)] * s23 * sin1 + m[(2, 1)] * c23;
        let t6x = -m[(0, 0)] * s23 * cos1 - m[(1, 0)] * s23 * sin1 - m[(2, 0)] * c23;
        let theta6 = t6y.atan2(t6x);
        out[k] = [theta1[k], theta2[k], theta3[k], theta4, theta5, theta6];
        out[k + 4] = [theta1[k], theta2[k], theta3[k], theta4 + PI, -theta5, theta6 - PI];
    }
    out
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Shift revolute values by whole turns toward `q_prev` while staying in limits.
/// Returns `None` if some joint has no in-limit representative.
pub fn shift_toward(chain: &Chain, q: &[f64], q_prev: &[f64]) -> Option<Vec<f64>> {
    chain
        .joints()
        .iter()
        .zip(q.iter().zip(q_prev))
        .map(|(j, (&v, &prev))| match j.kind {
            JointType::Prismatic => j.within_limits(v).then_some(v),
            JointType::Revolute => {
                let base = prev + wrap_pi(v - prev);
                [0.0, TAU, -TAU, 2.0 * TAU, -2.0 * TAU]
                    .iter()
                    .map(|k| base + k)
                    .find(|c| j.within_limits(*c))
            }
        })
        .collect()
}

pub fn joint_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Index of the nearest solution to `q_prev`; ties go to the lowest index.
pub fn select_nearest(solutions: &[Vec<f64>], q_prev: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in solutions.iter().enumerate() {
        let d = joint_distance(s, q_prev);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

fn pose_matches(chain: &Chain, family: &IkFamily, base: &Pose, q: &[f64], target: &Pose) -> bool {
    let got = chain.fk(base, q);
    let pos_ok = (got.position - target.position).norm() <= BRANCH_TOL;
    match family {
        IkFamily::Planar2r { .. } => pos_ok,
        _ => pos_ok && got.angle_to(target) <= BRANCH_TOL,
    }
}

/// Raw analytic branches in declaration order, before limit filtering.
pub fn analytic_branches(chain: &Chain, family: &IkFamily, base: &Pose, target: &Pose) -> Vec<Vec<f64>> {
    let frame = base.compose(&chain.joints()[0].origin);
    let local = frame.inverse().compose(target);
    let raw: Vec<Vec<f64>> = match *family {
        IkFamily::Planar2r { l1, l2 } => {
            if local.position.z.abs() > PLANE_TOL {
                return Vec::new();
            }
            planar_2r_branches(l1, l2, local.position.x, local.position.y).into_iter().map(|b| b.to_vec()).collect()
        }
        IkFamily::Planar3r { l1, l2, l3 } => {
            let r = local.orientation.to_rotation_matrix().into_inner();
            let tilt = (r.column(2) - Vec3::z()).norm();
            if local.position.z.abs() > PLANE_TOL || tilt > PLANE_TOL {
                return Vec::new();
            }
            let phi = r[(1, 0)].atan2(r[(0, 0)]);
            let wx = local.position.x - l3 * phi.cos();
            let wy = local.position.y - l3 * phi.sin();
            planar_2r_branches(l1, l2, wx, wy).into_iter().map(|[a, b]| vec![a, b, phi - a - b]).collect()
        }
        IkFamily::SphericalWrist(p) => {
            let flange = local.compose(&chain.tool().inverse());
            spherical_wrist_branches(&p, &flange).iter().map(|b| b.to_vec()).collect()
        }
        IkFamily::Numeric => return Vec::new(),
    };
    raw.into_iter()
        .filter(|q| q.iter().all(|v| v.is_finite()))
        .map(|q| q.into_iter().map(wrap_pi).collect::<Vec<_>>())
        .filter(|q| pose_matches(chain, family, base, q, target))
        .collect()
}

/// Inverse kinematics with continuity selection.
///
/// Analytic families enumerate every branch, shift revolute joints toward
/// `q_prev`, drop limit violations and keep the nearest. Other chains run
/// damped least squares from `q_prev`.
pub fn ik(chain: &Chain, family: &IkFamily, base: &Pose, target: &Pose, q_prev: &[f64]) -> Result<IkSolveRecord, KinematicsError> {
    chain.check_q(q_prev)?;
    let solutions: Vec<Vec<f64>> = if family.is_analytic() {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for b in analytic_branches(chain, family, base, target) {
            if let Some(s) = shift_toward(chain, &b, q_prev) {
                if !out.iter().any(|o| joint_distance(o, &s) <= 1e-12) {
                    out.push(s);
                }
            }
        }
        out
    } else {
        let limits: Vec<[f64; 2]> = chain.joints().iter().map(|j| j.limits).collect();
        let active = vec![true; chain.dof()];
        let out = dls::solve(q_prev, &limits, &active, std::slice::from_ref(target), &DlsParams::default(), |q| {
            (vec![chain.fk(base, q)], chain.jacobian(base, q))
        });
        if out.converged {
            vec![out.q]
        } else {
            Vec::new()
        }
    };
    let chosen = select_nearest(&solutions, q_prev).ok_or(KinematicsError::OutOfWorkspace)?;
    Ok(IkSolveRecord {
        solutions,
        chosen,
        q_prev: q_prev.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    fn two_r() -> (Chain, IkFamily) {
        let c = Chain::planar_2r(1.0, 1.0, [-PI, PI]);
        let f = IkFamily::detect(&c);
        (c, f)
    }

    fn target(x: f64, y: f64) -> Pose {
        Pose::from_translation(Vec3::new(x, y, 0.0))
    }

    #[test]
    fn detects_families() {
        assert_eq!(two_r().1, IkFamily::Planar2r { l1: 1.0, l2: 1.0 });
        let c3 = Chain::planar_3r(1.0, 1.0, 0.5, [-PI, PI]);
        assert_eq!(IkFamily::detect(&c3), IkFamily::Planar3r { l1: 1.0, l2: 1.0, l3: 0.5 });
        let mut joints = c3.joints().to_vec();
        joints[1].axis = Vec3::y();
        let bent = Chain::new(joints, *c3.tool()).unwrap();
        assert_eq!(IkFamily::detect(&bent), IkFamily::Numeric);
    }

    #[test]
    fn stretched_target_single_solution() {
        let (c, f) = two_r();
        let r = ik(&c, &f, &Pose::identity(), &target(2.0, 0.0), &[0.1, 0.1]).unwrap();
        assert_eq!(r.solutions.len(), 1);
        assert!(joint_distance(r.q(), &[0.0, 0.0]) < 1e-12);
    }

    #[test]
    fn nearest_branch_is_chosen() {
        let (c, f) = two_r();
        let r = ik(&c, &f, &Pose::identity(), &target(1.0, 1.0), &[deg(5.0), deg(80.0)]).unwrap();
        assert_eq!(r.solutions.len(), 2);
        assert!(joint_distance(&r.solutions[0], &[0.0, FRAC_PI_2]) < 1e-12);
        assert!(joint_distance(&r.solutions[1], &[FRAC_PI_2, -FRAC_PI_2]) < 1e-12);
        assert_eq!(r.chosen, 0);
        // Independent check: distances to each branch.
        let d0 = (deg(5.0).powi(2) + (deg(80.0) - FRAC_PI_2).powi(2)).sqrt();
        let d1 = ((deg(5.0) - FRAC_PI_2).powi(2) + (deg(80.0) + FRAC_PI_2).powi(2)).sqrt();
        assert!(d0 < d1);
    }

    #[test]
    fn unreachable_is_out_of_workspace() {
        let (c, f) = two_r();
        let e = ik(&c, &f, &Pose::identity(), &target(3.0, 0.0), &[0.0, 0.0]).unwrap_err();
        assert_eq!(e.to_string(), "out of workspace");
        let lifted = Pose::from_translation(Vec3::new(1.0, 1.0, 0.5));
        assert!(ik(&c, &f, &Pose::identity(), &lifted, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn limits_remove_branches() {
        let c = Chain::planar_2r(1.0, 1.0, [-0.1, 2.0]);
        let f = IkFamily::detect(&c);
        let r = ik(&c, &f, &Pose::identity(), &target(1.0, 1.0), &[1.5, 0.0]).unwrap();
        assert_eq!(r.solutions.len(), 1);
        assert!(joint_distance(r.q(), &[0.0, FRAC_PI_2]) < 1e-12);
    }

    #[test]
    fn equidistant_tie_goes_to_lowest_index() {
        let sols = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(select_nearest(&sols, &[0.0, 0.0]), Some(0));
    }

    #[test]
    fn revolute_shift_tracks_previous_turn() {
        let c = Chain::planar_2r(1.0, 1.0, [-3.0 * PI, 3.0 * PI]);
        let s = shift_toward(&c, &[0.1, -0.1], &[TAU, 0.0]).unwrap();
        assert!((s[0] - (TAU + 0.1)).abs() < 1e-12);
        assert!((s[1] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn planar_3r_round_trip() {
        let c = Chain::planar_3r(1.0, 0.8, 0.3, [-PI, PI]);
        let f = IkFamily::detect(&c);
        let q = [0.3, 0.9, -0.4];
        let t = c.fk(&Pose::identity(), &q);
        let r = ik(&c, &f, &Pose::identity(), &t, &q).unwrap();
        assert!(joint_distance(r.q(), &q) < 1e-9);
        assert_eq!(r.solutions.len(), 2);
    }

    fn opw_chain() -> (Chain, IkFamily) {
        let p = OpwParams {
            a1: 150.0,
            a2: -110.0,
            b: 0.0,
            c1: 450.0,
            c2: 600.0,
            c3: 640.0,
            c4: 95.0,
        };
        let c = Chain::spherical_wrist(&p, [[-PI, PI]; 6]);
        let f = IkFamily::detect(&c);
        (c, f)
    }

    #[test]
    fn spherical_wrist_round_trip_recovers_q() {
        let (c, f) = opw_chain();
        assert!(matches!(f, IkFamily::SphericalWrist(_)));
        let base = Pose::new(Vec3::new(100.0, -50.0, 10.0), nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.0, 0.3));
        let q = [0.2, 0.3, -0.4, 0.5, 0.6, -0.7];
        let t = c.fk(&base, &q);
        let branches = analytic_branches(&c, &f, &base, &t);
        assert!(branches.len() >= 4);
        for b in &branches {
            let got = c.fk(&base, b);
            assert!((got.position - t.position).norm() < 1e-6);
            assert!(got.angle_to(&t) < 1e-6);
        }
        let r = ik(&c, &f, &base, &t, &q).unwrap();
        assert!(joint_distance(r.q(), &q) < 1e-9);
    }

    #[test]
    fn numeric_fallback_converges() {
        let (c, _) = opw_chain();
        let q = [0.2, 0.3, -0.4, 0.5, 0.6, -0.7];
        let t = c.fk(&Pose::identity(), &q);
        let start = [0.25, 0.25, -0.35, 0.45, 0.65, -0.65];
        let r = ik(&c, &IkFamily::Numeric, &Pose::identity(), &t, &start).unwrap();
        let got = c.fk(&Pose::identity(), r.q());
        assert!((got.position - t.position).norm() < 1.0);
        assert!(got.angle_to(&t) < 0.01);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn spherical_wrist_fk_ik(q in prop::array::uniform6(-2.5..2.5f64)) {
                let (c, f) = opw_chain();
                prop_assume!(q[4].abs() > 0.05);
                let t = c.fk(&Pose::identity(), &q);
                let r = ik(&c, &f, &Pose::identity(), &t, &q).unwrap();
                let got = c.fk(&Pose::identity(), r.q());
                prop_assert!((got.position - t.position).norm() < 1e-6);
                prop_assert!(got.angle_to(&t) < 1e-6);
            }

            #[test]
            fn planar_2r_fk_ik(a in -3.0..3.0f64, b in 0.05..3.0f64, sign in any::<bool>()) {
                let (c, f) = two_r();
                let q = [a, if sign { b } else { -b }];
                let t = c.fk(&Pose::identity(), &q);
                let r = ik(&c, &f, &Pose::identity(), &t, &q).unwrap();
                prop_assert!(joint_distance(r.q(), &q) < 1e-6);
            }
        }
    }
}
