//! Immutable kinematic tree built from a URDF subset, with forward kinematics
//! and keypoint Jacobians.
//!
//! The tree is rooted at a single base link. Only revolute and fixed joints
//! are supported; revolute joints are the degrees of freedom, indexed in
//! document order. The tracked keypoints are the origins of the links listed
//! in [`KinematicModel::keypoint_links`], root first.

mod urdf;

use std::collections::HashMap;

use nalgebra::{DMatrix, Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use urdf::parse_model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Fixed,
}

impl JointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JointKind::Revolute => "revolute",
            JointKind::Fixed => "fixed",
        }
    }
}

/// Rigid transform from the parent link frame, URDF style: `rpy` is applied
/// as extrinsic X-Y-Z, i.e. `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Origin {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

impl Origin {
    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [roll, pitch, yaw] = self.rpy;
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), roll);
        let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), pitch);
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        Isometry3::from_parts(Translation3::from(Vector3::from(self.xyz)), rz * ry * rx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimit {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: String,
    pub child: String,
    pub origin: Origin,
    /// Unit rotation axis in the joint frame (revolute joints).
    pub axis: Vector3<f64>,
    /// Present for revolute joints only.
    pub limit: Option<JointLimit>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Link {
    pub name: String,
}

/// Joint angles in radians, one per revolute joint in model order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfiguration(pub Vec<f64>);

impl JointConfiguration {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every value lies within the model's joint limits.
    pub fn is_feasible(&self, model: &KinematicModel) -> bool {
        self.len() == model.dof()
            && self
                .0
                .iter()
                .zip(model.limits())
                .all(|(q, l)| *q >= l.lower && *q <= l.upper)
    }
}

impl From<Vec<f64>> for JointConfiguration {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Caller-owned buffers for forward kinematics.
#[derive(Debug, Clone)]
pub struct FkScratch {
    link_poses: Vec<Isometry3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicModel {
    name: String,
    joints: Vec<Joint>,
    links: Vec<Link>,
    keypoint_links: Vec<String>,
    explicit_keypoints: bool,
    // derived tables
    root: usize,
    joint_parent: Vec<usize>,
    joint_child: Vec<usize>,
    joint_origin: Vec<Isometry3<f64>>,
    /// Joint indices ordered parent-before-child.
    topo: Vec<usize>,
    /// Degree-of-freedom index for each joint (revolute only).
    dof_of_joint: Vec<Option<usize>>,
    /// Joint index for each degree of freedom.
    revolute: Vec<usize>,
    limits: Vec<JointLimit>,
    keypoint_index: Vec<usize>,
    /// For each keypoint, the dof indices on its root path.
    keypoint_chain: Vec<Vec<usize>>,
}

impl KinematicModel {
    pub(crate) fn build(
        name: String,
        links: Vec<Link>,
        joints: Vec<Joint>,
        keypoints: Option<Vec<String>>,
    ) -> Result<Self> {
        let mut link_index = HashMap::new();
        for (i, l) in links.iter().enumerate() {
            if link_index.insert(l.name.clone(), i).is_some() {
                return Err(Error::InvalidModel(format!("duplicate link `{}`", l.name)));
            }
        }
        let mut seen_joints = HashMap::new();
        let mut joint_parent = Vec::with_capacity(joints.len());
        let mut joint_child = Vec::with_capacity(joints.len());
        let mut parent_joint_of: Vec<Option<usize>> = vec![None; links.len()];
        for (ji, j) in joints.iter().enumerate() {
            if seen_joints.insert(j.name.clone(), ji).is_some() {
                return Err(Error::InvalidModel(format!("duplicate joint `{}`", j.name)));
            }
            let p = *link_index
                .get(&j.parent)
                .ok_or_else(|| Error::UnknownLink(j.parent.clone()))?;
            let c = *link_index
                .get(&j.child)
                .ok_or_else(|| Error::UnknownLink(j.child.clone()))?;
            if let Some(prev) = parent_joint_of[c] {
                return Err(Error::MultipleParents {
                    link: j.child.clone(),
                    first: joints[prev].name.clone(),
                    second: j.name.clone(),
                });
            }
            parent_joint_of[c] = Some(ji);
            joint_parent.push(p);
            joint_child.push(c);
            if j.kind == JointKind::Revolute {
                let lim = j.limit.ok_or_else(|| Error::InvalidJoint {
                    joint: j.name.clone(),
                    reason: "revolute joint without limits".into(),
                })?;
                if !(lim.lower.is_finite() && lim.upper.is_finite() && lim.lower < lim.upper) {
                    return Err(Error::InvalidJoint {
                        joint: j.name.clone(),
                        reason: format!("invalid limits [{}, {}]", lim.lower, lim.upper),
                    });
                }
                if (j.axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidJoint {
                        joint: j.name.clone(),
                        reason: "axis is not unit length".into(),
                    });
                }
            }
        }

        let roots: Vec<usize> = (0..links.len())
            .filter(|&i| parent_joint_of[i].is_none())
            .collect();
        let root = match roots.as_slice() {
            [] => {
                let name = links.first().map(|l| l.name.clone()).unwrap_or_default();
                return Err(if links.is_empty() {
                    Error::InvalidModel("no links".into())
                } else {
                    Error::Cycle(name)
                });
            }
            [r] => *r,
            many => {
                return Err(Error::MultipleRoots(
                    many.iter().map(|&i| links[i].name.clone()).collect(),
                ))
            }
        };

        // breadth-first from the root; anything unreached sits on a cycle
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
        for (ji, &p) in joint_parent.iter().enumerate() {
            children[p].push(ji);
        }
        let mut topo = Vec::with_capacity(joints.len());
        let mut reached = vec![false; links.len()];
        reached[root] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(l) = queue.pop_front() {
            for &ji in &children[l] {
                let c = joint_child[ji];
                reached[c] = true;
                topo.push(ji);
                queue.push_back(c);
            }
        }
        if let Some(i) = reached.iter().position(|r| !r) {
            return Err(Error::Cycle(links[i].name.clone()));
        }

        let mut dof_of_joint = vec![None; joints.len()];
        let mut revolute = Vec::new();
        let mut limits = Vec::new();
        for (ji, j) in joints.iter().enumerate() {
            if j.kind == JointKind::Revolute {
                dof_of_joint[ji] = Some(revolute.len());
                revolute.push(ji);
                limits.push(j.limit.expect("validated above"));
            }
        }

        let explicit_keypoints = keypoints.is_some();
        let keypoint_links = match keypoints {
            Some(k) => k,
            None => std::iter::once(links[root].name.clone())
                .chain(revolute.iter().map(|&ji| joints[ji].child.clone()))
                .collect(),
        };
        if keypoint_links.len() < 2 {
            return Err(Error::InvalidModel(
                "at least two keypoints (root plus one) are required".into(),
            ));
        }
        if keypoint_links[0] != links[root].name {
            return Err(Error::InvalidModel(format!(
                "first keypoint must be the root link `{}`, found `{}`",
                links[root].name, keypoint_links[0]
            )));
        }
        let mut keypoint_index = Vec::with_capacity(keypoint_links.len());
        let mut keypoint_chain = Vec::with_capacity(keypoint_links.len());
        for k in &keypoint_links {
            let li = *link_index
                .get(k)
                .ok_or_else(|| Error::UnknownLink(k.clone()))?;
            keypoint_index.push(li);
            let mut chain = Vec::new();
            let mut cur = li;
            while let Some(ji) = parent_joint_of[cur] {
                if let Some(d) = dof_of_joint[ji] {
                    chain.push(d);
                }
                cur = joint_parent[ji];
            }
            chain.reverse();
            keypoint_chain.push(chain);
        }

        let joint_origin = joints.iter().map(|j| j.origin.to_isometry()).collect();
        Ok(Self {
            name,
            joints,
            links,
            keypoint_links,
            explicit_keypoints,
            root,
            joint_parent,
            joint_child,
            joint_origin,
            topo,
            dof_of_joint,
            revolute,
            limits,
            keypoint_index,
            keypoint_chain,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn root_link(&self) -> &str {
        &self.links[self.root].name
    }

    pub fn keypoint_links(&self) -> &[String] {
        &self.keypoint_links
    }

    pub(crate) fn has_explicit_keypoints(&self) -> bool {
        self.explicit_keypoints
    }

    /// Number of tracked keypoints `N`.
    pub fn keypoint_count(&self) -> usize {
        self.keypoint_links.len()
    }

    /// Number of revolute joints.
    pub fn dof(&self) -> usize {
        self.revolute.len()
    }

    pub fn limits(&self) -> &[JointLimit] {
        &self.limits
    }

    /// Names of the revolute joints in dof order.
    pub fn joint_names(&self) -> Vec<String> {
        self.revolute
            .iter()
            .map(|&ji| self.joints[ji].name.clone())
            .collect()
    }

    /// Degree-of-freedom indices that move keypoint `k` (root-to-leaf order).
    pub fn keypoint_chain(&self, k: usize) -> &[usize] {
        &self.keypoint_chain[k]
    }

    /// `(q_min + q_max) / 2` per joint.
    pub fn mid_configuration(&self) -> JointConfiguration {
        JointConfiguration(
            self.limits
                .iter()
                .map(|l| 0.5 * (l.lower + l.upper))
                .collect(),
        )
    }

    pub fn scratch(&self) -> FkScratch {
        FkScratch {
            link_poses: vec![Isometry3::identity(); self.links.len()],
        }
    }

    fn check_len(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::ShapeMismatch {
                what: "joint configuration",
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    fn link_poses_into(&self, q: &[f64], root_pose: &Isometry3<f64>, scratch: &mut FkScratch) {
        let poses = &mut scratch.link_poses;
        poses.resize(self.links.len(), Isometry3::identity());
        poses[self.root] = *root_pose;
        for &ji in &self.topo {
            let parent = poses[self.joint_parent[ji]];
            let mut pose = parent * self.joint_origin[ji];
            if let Some(d) = self.dof_of_joint[ji] {
                let axis = nalgebra::Unit::new_unchecked(self.joints[ji].axis);
                pose *= UnitQuaternion::from_axis_angle(&axis, q[d]);
            }
            poses[self.joint_child[ji]] = pose;
        }
    }

    /// World-frame keypoint positions for configuration `q` with the root
    /// link placed at `root_pose`.
    pub fn forward_kinematics(
        &self,
        q: &JointConfiguration,
        root_pose: &Isometry3<f64>,
    ) -> Result<Vec<Vector3<f64>>> {
        let mut scratch = self.scratch();
        let mut out = Vec::with_capacity(self.keypoint_count());
        self.forward_kinematics_into(q.values(), root_pose, &mut scratch, &mut out)?;
        Ok(out)
    }

    pub fn forward_kinematics_into(
        &self,
        q: &[f64],
        root_pose: &Isometry3<f64>,
        scratch: &mut FkScratch,
        out: &mut Vec<Vector3<f64>>,
    ) -> Result<()> {
        self.check_len(q)?;
        self.link_poses_into(q, root_pose, scratch);
        out.clear();
        out.extend(
            self.keypoint_index
                .iter()
                .map(|&li| scratch.link_poses[li].translation.vector),
        );
        Ok(())
    }

    /// Keypoint Jacobian with the root at identity: a `3N x dof` matrix whose
    /// column `j` is the derivative of the stacked keypoints w.r.t. `q_j`.
    pub fn keypoint_jacobian(&self, q: &JointConfiguration) -> Result<DMatrix<f64>> {
        let mut scratch = self.scratch();
        let mut jac = DMatrix::zeros(3 * self.keypoint_count(), self.dof());
        let mut points = Vec::new();
        self.jacobian_into(q.values(), &mut scratch, &mut points, &mut jac)?;
        Ok(jac)
    }

    /// Fills `points` with FK at identity root and `jac` with the matching
    /// keypoint Jacobian.
    pub fn jacobian_into(
        &self,
        q: &[f64],
        scratch: &mut FkScratch,
        points: &mut Vec<Vector3<f64>>,
        jac: &mut DMatrix<f64>,
    ) -> Result<()> {
        self.forward_kinematics_into(q, &Isometry3::identity(), scratch, points)?;
        let n = self.keypoint_count();
        if jac.nrows() != 3 * n || jac.ncols() != self.dof() {
            *jac = DMatrix::zeros(3 * n, self.dof());
        } else {
            jac.fill(0.0);
        }
        // joint frame coincides with the child link frame
        let axes: Vec<(Vector3<f64>, Vector3<f64>)> = self
            .revolute
            .iter()
            .map(|&ji| {
                let pose = &scratch.link_poses[self.joint_child[ji]];
                (pose.rotation * self.joints[ji].axis, pose.translation.vector)
            })
            .collect();
        for (k, p) in points.iter().enumerate() {
            for &d in &self.keypoint_chain[k] {
                let (axis, origin) = &axes[d];
                let col = axis.cross(&(p - origin));
                jac[(3 * k, d)] = col.x;
                jac[(3 * k + 1, d)] = col.y;
                jac[(3 * k + 2, d)] = col.z;
            }
        }
        Ok(())
    }

    /// Degree-of-freedom indices ordered parent-before-child.
    pub fn dof_order(&self) -> Vec<usize> {
        self.topo.iter().filter_map(|&ji| self.dof_of_joint[ji]).collect()
    }

    /// World axis and origin of every revolute joint, in dof order, for `q`
    /// with the root at identity. `points` receives the keypoints.
    pub fn joint_axes_into(
        &self,
        q: &[f64],
        scratch: &mut FkScratch,
        points: &mut Vec<Vector3<f64>>,
        axes: &mut Vec<(Vector3<f64>, Vector3<f64>)>,
    ) -> Result<()> {
        self.forward_kinematics_into(q, &Isometry3::identity(), scratch, points)?;
        axes.clear();
        axes.extend(self.revolute.iter().map(|&ji| {
            let pose = &scratch.link_poses[self.joint_child[ji]];
            (pose.rotation * self.joints[ji].axis, pose.translation.vector)
        }));
        Ok(())
    }

    /// Clamps `q` into `[lower + margin, upper - margin]` per joint.
    pub fn clamp_into(&self, q: &mut [f64], margin: f64) {
        for (v, l) in q.iter_mut().zip(&self.limits) {
            *v = v.clamp(l.lower + margin, l.upper - margin);
        }
    }

    /// Serializes back to the supported URDF subset.
    pub fn to_urdf(&self) -> String {
        urdf::serialize(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::f64::consts::FRAC_PI_2;

    fn planar() -> KinematicModel {
        parse_model(fixtures::PLANAR_2LINK_URDF).unwrap()
    }

    #[test]
    fn planar_fixture_shape() {
        let m = planar();
        assert_eq!(m.dof(), 2);
        assert_eq!(m.keypoint_count(), 3);
        assert_eq!(m.root_link(), "base");
    }

    #[test]
    fn planar_forward_kinematics_examples() {
        let m = planar();
        let id = Isometry3::identity();
        let cases = [
            ([0.0, 0.0], Vector3::new(2.0, 0.0, 0.0)),
            ([FRAC_PI_2, 0.0], Vector3::new(0.0, 2.0, 0.0)),
            // oracle: R(a) [1,0] + R(a+b) [1,0] with a = pi/2, b = -pi/2
            ([FRAC_PI_2, -FRAC_PI_2], Vector3::new(1.0, 1.0, 0.0)),
        ];
        for (q, expected) in cases {
            let pts = m.forward_kinematics(&q.to_vec().into(), &id).unwrap();
            assert!((pts[2] - expected).norm() < 1e-12, "{q:?} -> {:?}", pts[2]);
        }
    }

    #[test]
    fn planar_jacobian_at_zero() {
        let m = planar();
        let j = m.keypoint_jacobian(&vec![0.0, 0.0].into()).unwrap();
        // d(end)/dq1 = (0, 2, 0)
        assert!((j[(6, 0)]).abs() < 1e-12);
        assert!((j[(7, 0)] - 2.0).abs() < 1e-12);
        assert!((j[(8, 0)]).abs() < 1e-12);
        // root rows are zero
        for c in 0..2 {
            for r in 0..3 {
                assert_eq!(j[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn wrong_configuration_length_is_rejected() {
        let m = planar();
        let err = m
            .forward_kinematics(&vec![0.0].into(), &Isometry3::identity())
            .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { expected: 2, got: 1, .. }));
    }

    #[test]
    fn humanoid_fixture_shape() {
        let m = parse_model(fixtures::HUMANOID_URDF).unwrap();
        assert_eq!(m.dof(), 29);
        assert_eq!(m.keypoint_count(), 33);
        assert_eq!(m.keypoint_links()[0], "pelvis");
    }

    #[test]
    fn default_keypoints_are_root_plus_revolute_children() {
        let xml = fixtures::PLANAR_2LINK_URDF.replace("<keypoint link=\"base\"/>", "");
        let xml = xml.replace("<keypoint link=\"fore\"/>", "");
        let xml = xml.replace("<keypoint link=\"tip\"/>", "");
        let m = parse_model(&xml).unwrap();
        assert_eq!(m.keypoint_links(), ["base", "upper", "fore"]);
        assert_eq!(m.keypoint_count(), m.dof() + 1);
    }
}
