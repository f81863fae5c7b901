//! Reader and writer for the supported URDF subset.
//!
//! Besides `link` and `joint`, a top-level `<keypoint link="..."/>` list may
//! declare the tracked keypoints explicitly (root first). Other elements
//! (materials, inertia, visuals, plugins) are ignored.

use nalgebra::Vector3;
use roxmltree::{Document, Node};

use super::{Joint, JointKind, JointLimit, KinematicModel, Link, Origin};
use crate::error::{Error, Result};

pub fn parse_model(xml_text: &str) -> Result<KinematicModel> {
    let doc = Document::parse(xml_text).map_err(|e| Error::Xml(e.to_string()))?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(Error::Xml(format!(
            "expected <robot> root element, found <{}>",
            robot.tag_name().name()
        )));
    }
    let name = robot.attribute("name").unwrap_or_default().to_string();

    let mut links = Vec::new();
    let mut joints = Vec::new();
    let mut keypoints = Vec::new();
    for node in robot.children().filter(Node::is_element) {
        match node.tag_name().name() {
            "link" => links.push(Link {
                name: required_attr(&node, "name", "link")?.to_string(),
            }),
            "joint" => joints.push(parse_joint(&node)?),
            "keypoint" => keypoints.push(required_attr(&node, "link", "keypoint")?.to_string()),
            _ => {}
        }
    }
    let keypoints = (!keypoints.is_empty()).then_some(keypoints);
    KinematicModel::build(name, links, joints, keypoints)
}

fn required_attr<'a>(node: &Node<'a, '_>, attr: &str, element: &str) -> Result<&'a str> {
    node.attribute(attr)
        .ok_or_else(|| Error::Xml(format!("<{element}> without `{attr}` attribute")))
}

fn child<'a, 'i>(node: &Node<'a, 'i>, tag: &str) -> Option<Node<'a, 'i>> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == tag)
}

fn parse_vec3(text: &str, joint: &str, what: &str) -> Result<[f64; 3]> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidJoint {
            joint: joint.to_string(),
            reason: format!("malformed {what} `{text}`"),
        })?;
    match vals.as_slice() {
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(Error::InvalidJoint {
            joint: joint.to_string(),
            reason: format!("{what} needs 3 components, got {}", vals.len()),
        }),
    }
}

fn parse_joint(node: &Node) -> Result<Joint> {
    let name = required_attr(node, "name", "joint")?.to_string();
    let invalid = |reason: &str| Error::InvalidJoint {
        joint: name.clone(),
        reason: reason.to_string(),
    };
    let kind = match node.attribute("type") {
        Some("revolute") => JointKind::Revolute,
        Some("fixed") => JointKind::Fixed,
        Some(other) => {
            return Err(Error::UnsupportedJointKind {
                joint: name,
                kind: other.to_string(),
            })
        }
        None => return Err(invalid("missing type")),
    };
    let link_of = |tag: &str| -> Result<String> {
        child(node, tag)
            .and_then(|c| c.attribute("link"))
            .map(str::to_string)
            .ok_or_else(|| invalid(&format!("missing <{tag} link=...>")))
    };
    let parent = link_of("parent")?;
    let child_link = link_of("child")?;

    let mut origin = Origin::default();
    if let Some(o) = child(node, "origin") {
        if let Some(xyz) = o.attribute("xyz") {
            origin.xyz = parse_vec3(xyz, &name, "origin xyz")?;
        }
        if let Some(rpy) = o.attribute("rpy") {
            origin.rpy = parse_vec3(rpy, &name, "origin rpy")?;
        }
    }

    let (axis, limit) = match kind {
        JointKind::Fixed => (Vector3::x(), None),
        JointKind::Revolute => {
            let axis_text = child(node, "axis")
                .and_then(|a| a.attribute("xyz"))
                .ok_or_else(|| invalid("revolute joint without <axis>"))?;
            let axis = Vector3::from(parse_vec3(axis_text, &name, "axis")?);
            let norm = axis.norm();
            if !(norm.is_finite() && norm > 1e-12) {
                return Err(invalid("zero axis"));
            }
            let lim = child(node, "limit").ok_or_else(|| invalid("revolute joint without <limit>"))?;
            let bound = |attr: &str| -> Result<f64> {
                lim.attribute(attr)
                    .ok_or_else(|| invalid(&format!("<limit> without `{attr}`")))?
                    .trim()
                    .parse()
                    .map_err(|_| invalid(&format!("malformed limit `{attr}`")))
            };
            let limit = JointLimit {
                lower: bound("lower")?,
                upper: bound("upper")?,
            };
            (axis / norm, Some(limit))
        }
    };

    Ok(Joint {
        name,
        kind,
        parent,
        child: child_link,
        origin,
        axis,
        limit,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt3(v: &[f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

pub(super) fn serialize(model: &KinematicModel) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\"?>");
    let _ = writeln!(out, "<robot name=\"{}\">", escape(model.name()));
    for l in model.links() {
        let _ = writeln!(out, "  <link name=\"{}\"/>", escape(&l.name));
    }
    for j in model.joints() {
        let _ = writeln!(
            out,
            "  <joint name=\"{}\" type=\"{}\">",
            escape(&j.name),
            j.kind.as_str()
        );
        let _ = writeln!(out, "    <parent link=\"{}\"/>", escape(&j.parent));
        let _ = writeln!(out, "    <child link=\"{}\"/>", escape(&j.child));
        let _ = writeln!(
            out,
            "    <origin xyz=\"{}\" rpy=\"{}\"/>",
            fmt3(&j.origin.xyz),
            fmt3(&j.origin.rpy)
        );
        if let Some(limit) = j.limit {
            let _ = writeln!(out, "    <axis xyz=\"{} {} {}\"/>", j.axis.x, j.axis.y, j.axis.z);
            let _ = writeln!(
                out,
                "    <limit lower=\"{}\" upper=\"{}\"/>",
                limit.lower, limit.upper
            );
        }
        let _ = writeln!(out, "  </joint>");
    }
    if model.has_explicit_keypoints() {
        for k in model.keypoint_links() {
            let _ = writeln!(out, "  <keypoint link=\"{}\"/>", escape(k));
        }
    }
    out.push_str("</robot>\n");
    out
}
