//! BVH reading and writing with positioned diagnostics.

use std::fmt::{self, Write as _};

use motion_core::math::{Mat3, Vec3};
use motion_core::rotation::{euler_to_matrix, matrix_to_euler};
use motion_core::EulerOrder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl ChannelKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "xposition" => Self::Xposition,
            "yposition" => Self::Yposition,
            "zposition" => Self::Zposition,
            "xrotation" => Self::Xrotation,
            "yrotation" => Self::Yrotation,
            "zrotation" => Self::Zrotation,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Xposition => "Xposition",
            Self::Yposition => "Yposition",
            Self::Zposition => "Zposition",
            Self::Xrotation => "Xrotation",
            Self::Yrotation => "Yrotation",
            Self::Zrotation => "Zrotation",
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Self::Xrotation | Self::Yrotation | Self::Zrotation)
    }

    /// 0 = X, 1 = Y, 2 = Z.
    pub fn axis(self) -> usize {
        match self {
            Self::Xposition | Self::Xrotation => 0,
            Self::Yposition | Self::Yrotation => 1,
            Self::Zposition | Self::Zrotation => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvhJoint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    pub channels: Vec<ChannelKind>,
    pub end_site: Option<[f64; 3]>,
}

/// Joints are stored depth first, so every parent precedes its children.
#[derive(Clone, Debug, PartialEq)]
pub struct BvhDocument {
    pub joints: Vec<BvhJoint>,
    pub frame_time: f64,
    /// `frame_count x channel_count`; rotations in degrees.
    pub motion: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Copy, Debug)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

struct Lexer<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
    eof: (usize, usize),
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        let mut tokens = Vec::new();
        let mut last = (1, 1);
        for (li, line) in text.lines().enumerate() {
            let mut start = None;
            for (ci, ch) in line.char_indices().chain(std::iter::once((line.len(), ' '))) {
                if ch.is_whitespace() {
                    if let Some(s) = start.take() {
                        tokens.push(Token { text: &line[s..ci], line: li + 1, column: s + 1 });
                    }
                } else if ch == '{' || ch == '}' {
                    if let Some(s) = start.take() {
                        tokens.push(Token { text: &line[s..ci], line: li + 1, column: s + 1 });
                    }
                    tokens.push(Token { text: &line[ci..ci + 1], line: li + 1, column: ci + 1 });
                } else if start.is_none() {
                    start = Some(ci);
                }
            }
            last = (li + 1, line.len() + 1);
        }
        Self { tokens, pos: 0, eof: last }
    }

    fn error_at(&self, tok: Option<Token<'_>>, message: impl Into<String>) -> ParseError {
        let (line, column) = tok.map_or(self.eof, |t| (t.line, t.column));
        ParseError { line, column, message: message.into() }
    }

    fn peek(&self) -> Option<Token<'a>> {
        self.tokens.get(self.pos).copied()
    }

    fn next(&mut self, what: &str) -> Result<Token<'a>, ParseError> {
        let t = self.peek().ok_or_else(|| self.error_at(None, format!("unexpected end of input, expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<Token<'a>, ParseError> {
        let t = self.next(word)?;
        if !t.text.eq_ignore_ascii_case(word) {
            return Err(self.error_at(Some(t), format!("expected '{word}', found '{}'", t.text)));
        }
        Ok(t)
    }

    fn number(&mut self, what: &str) -> Result<f64, ParseError> {
        let t = self.next(what)?;
        parse_number(t.text).ok_or_else(|| self.error_at(Some(t), format!("expected {what}, found '{}'", t.text)))
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_bvh(text: &str) -> Result<BvhDocument, ParseError> {
    let mut lx = Lexer::new(text);
    lx.expect("HIERARCHY")?;
    let root = lx.next("ROOT")?;
    if !root.text.eq_ignore_ascii_case("ROOT") {
        return Err(lx.error_at(Some(root), format!("expected 'ROOT', found '{}'", root.text)));
    }
    let mut joints = Vec::new();
    parse_joint(&mut lx, &mut joints, None)?;
    match lx.peek() {
        Some(t) if t.text.eq_ignore_ascii_case("MOTION") => {
            lx.pos += 1;
        }
        Some(t) if t.text.eq_ignore_ascii_case("ROOT") => {
            return Err(lx.error_at(Some(t), "only one ROOT hierarchy is supported"));
        }
        other => return Err(lx.error_at(other, "missing MOTION section")),
    }
    lx.expect("Frames:")?;
    let count_tok = lx.next("frame count")?;
    let frame_count: usize = count_tok
        .text
        .parse()
        .map_err(|_| lx.error_at(Some(count_tok), format!("invalid frame count '{}'", count_tok.text)))?;
    lx.expect("Frame")?;
    lx.expect("Time:")?;
    let ft_tok = lx.peek();
    let frame_time = lx.number("frame time")?;
    if frame_time <= 0.0 {
        return Err(lx.error_at(ft_tok, "frame time must be positive"));
    }
    let width: usize = joints.iter().map(|j: &BvhJoint| j.channels.len()).sum();
    let root_pos = joints[0].channels.iter().filter(|c| !c.is_rotation()).count();
    if root_pos != 3 {
        return Err(ParseError { line: root.line, column: root.column, message: "root must carry three position channels".into() });
    }
    // motion rows are line oriented: each frame must sit on its own line
    let mut motion = Vec::with_capacity(frame_count);
    let mut row: Vec<f64> = Vec::with_capacity(width);
    let mut row_line = 0;
    while let Some(t) = lx.peek() {
        if row.is_empty() {
            row_line = t.line;
        } else if t.line != row_line {
            return Err(ParseError {
                line: row_line,
                column: 1,
                message: format!("motion row has {} values, expected {width}", row.len()),
            });
        }
        lx.pos += 1;
        let v = parse_number(t.text).ok_or_else(|| lx.error_at(Some(t), format!("non-numeric motion value '{}'", t.text)))?;
        row.push(v);
        if row.len() == width {
            motion.push(std::mem::replace(&mut row, Vec::with_capacity(width)));
        }
    }
    if !row.is_empty() {
        return Err(ParseError {
            line: row_line,
            column: 1,
            message: format!("motion row has {} values, expected {width}", row.len()),
        });
    }
    if motion.len() != frame_count {
        return Err(lx.error_at(None, format!("header declares {frame_count} frames but {} rows follow", motion.len())));
    }
    Ok(BvhDocument { joints, frame_time, motion })
}

fn parse_joint(lx: &mut Lexer<'_>, joints: &mut Vec<BvhJoint>, parent: Option<usize>) -> Result<(), ParseError> {
    let name_tok = lx.next("joint name")?;
    if name_tok.text == "{" {
        return Err(lx.error_at(Some(name_tok), "joint is missing a name"));
    }
    let index = joints.len();
    joints.push(BvhJoint { name: name_tok.text.to_string(), parent, offset: [0.0; 3], channels: Vec::new(), end_site: None });
    lx.expect("{")?;
    lx.expect("OFFSET")?;
    let offset = [lx.number("offset x")?, lx.number("offset y")?, lx.number("offset z")?];
    joints[index].offset = offset;
    let t = lx.expect("CHANNELS")?;
    let n_tok = lx.next("channel count")?;
    let n: usize = n_tok.text.parse().map_err(|_| lx.error_at(Some(n_tok), format!("invalid channel count '{}'", n_tok.text)))?;
    let mut channels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = lx.next("channel name")?;
        let kind = ChannelKind::parse(c.text).ok_or_else(|| lx.error_at(Some(c), format!("unknown channel '{}'", c.text)))?;
        if channels.contains(&kind) {
            return Err(lx.error_at(Some(c), format!("channel '{}' listed twice", c.text)));
        }
        channels.push(kind);
    }
    if n > 6 {
        return Err(lx.error_at(Some(t), "a joint has at most six channels"));
    }
    joints[index].channels = channels;
    loop {
        let t = lx.next("'}'")?;
        if t.text == "}" {
            return Ok(());
        }
        if t.text.eq_ignore_ascii_case("JOINT") {
            parse_joint(lx, joints, Some(index))?;
        } else if t.text.eq_ignore_ascii_case("End") {
            lx.expect("Site")?;
            lx.expect("{")?;
            lx.expect("OFFSET")?;
            let e = [lx.number("offset x")?, lx.number("offset y")?, lx.number("offset z")?];
            lx.expect("}")?;
            if joints[index].end_site.replace(e).is_some() {
                return Err(lx.error_at(Some(t), "joint has two end sites"));
            }
        } else {
            return Err(lx.error_at(Some(t), format!("expected JOINT, End Site or '}}', found '{}'", t.text)));
        }
    }
}

fn fmt_num(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v}")
}

pub fn write_bvh(doc: &BvhDocument) -> String {
    let mut out = String::from("HIERARCHY\n");
    fn write_joint(doc: &BvhDocument, j: usize, depth: usize, out: &mut String) {
        let ind = "  ".repeat(depth);
        let joint = &doc.joints[j];
        let kw = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
        let _ = writeln!(out, "{ind}{kw} {}", joint.name);
        let _ = writeln!(out, "{ind}{{");
        let o = joint.offset;
        let _ = writeln!(out, "{ind}  OFFSET {} {} {}", fmt_num(o[0]), fmt_num(o[1]), fmt_num(o[2]));
        let names: Vec<&str> = joint.channels.iter().map(|c| c.name()).collect();
        let sep = if names.is_empty() { "" } else { " " };
        let _ = writeln!(out, "{ind}  CHANNELS {}{sep}{}", names.len(), names.join(" "));
        for c in doc.children(j) {
            write_joint(doc, c, depth + 1, out);
        }
        if let Some(e) = joint.end_site {
            let _ = writeln!(out, "{ind}  End Site");
            let _ = writeln!(out, "{ind}  {{");
            let _ = writeln!(out, "{ind}    OFFSET {} {} {}", fmt_num(e[0]), fmt_num(e[1]), fmt_num(e[2]));
            let _ = writeln!(out, "{ind}  }}");
        }
        let _ = writeln!(out, "{ind}}}");
    }
    write_joint(doc, 0, 0, &mut out);
    let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {}", doc.motion.len(), fmt_num(doc.frame_time));
    for row in &doc.motion {
        let cells: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

impl BvhDocument {
    pub fn frame_count(&self) -> usize {
        self.motion.len()
    }

    pub fn channel_count(&self) -> usize {
        self.joints.iter().map(|j| j.channels.len()).sum()
    }

    pub fn fps(&self) -> f64 {
        1.0 / self.frame_time
    }

    pub fn children(&self, j: usize) -> Vec<usize> {
        (0..self.joints.len()).filter(|&c| self.joints[c].parent == Some(j)).collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// First motion column of each joint.
    pub fn channel_starts(&self) -> Vec<usize> {
        let mut acc = 0;
        self.joints
            .iter()
            .map(|j| {
                let s = acc;
                acc += j.channels.len();
                s
            })
            .collect()
    }

    /// Order of the joint's rotation channels, if it has all three.
    pub fn euler_order(&self, j: usize) -> Option<EulerOrder> {
        let axes: Vec<usize> = self.joints[j].channels.iter().filter(|c| c.is_rotation()).map(|c| c.axis()).collect();
        <[usize; 3]>::try_from(axes).ok().and_then(EulerOrder::from_axes)
    }

    /// Product of the joint's rotation channels in listed order.
    pub fn local_rotation(&self, frame: usize, j: usize) -> Mat3 {
        let start = self.channel_starts()[j];
        self.local_rotation_at(frame, j, start)
    }

    fn local_rotation_at(&self, frame: usize, j: usize, start: usize) -> Mat3 {
        let row = &self.motion[frame];
        let mut m = Mat3::IDENTITY;
        for (k, c) in self.joints[j].channels.iter().enumerate() {
            if c.is_rotation() {
                let a = row[start + k].to_radians();
                let r = match c.axis() {
                    0 => Mat3::rot_x(a),
                    1 => Mat3::rot_y(a),
                    _ => Mat3::rot_z(a),
                };
                m = m.mul_mat(&r);
            }
        }
        m
    }

    /// Position channels replace the rest offset on the axes they cover.
    pub fn local_translation(&self, frame: usize, j: usize) -> Vec3 {
        let start = self.channel_starts()[j];
        self.local_translation_at(frame, j, start)
    }

    fn local_translation_at(&self, frame: usize, j: usize, start: usize) -> Vec3 {
        let mut t = self.joints[j].offset;
        for (k, c) in self.joints[j].channels.iter().enumerate() {
            if !c.is_rotation() {
                t[c.axis()] = self.motion[frame][start + k];
            }
        }
        Vec3::from_array(t)
    }

    /// World positions and orientations of every joint at `frame`.
    pub fn world_pose(&self, frame: usize) -> (Vec<Vec3>, Vec<Mat3>) {
        let starts = self.channel_starts();
        let n = self.joints.len();
        let mut pos: Vec<Vec3> = Vec::with_capacity(n);
        let mut rot: Vec<Mat3> = Vec::with_capacity(n);
        for j in 0..n {
            let t = self.local_translation_at(frame, j, starts[j]);
            let l = self.local_rotation_at(frame, j, starts[j]);
            match self.joints[j].parent {
                None => {
                    pos.push(t);
                    rot.push(l);
                }
                Some(p) => {
                    pos.push(pos[p] + rot[p].mul_vec(t));
                    rot.push(rot[p].mul_mat(&l));
                }
            }
        }
        (pos, rot)
    }

    /// Gives the joint all three rotation channels (appending missing axes
    /// after the existing ones), rewriting the motion table to match.
    pub fn ensure_full_rotation(&mut self, j: usize) {
        if self.euler_order(j).is_some() {
            return;
        }
        let present: Vec<usize> = self.joints[j].channels.iter().filter(|c| c.is_rotation()).map(|c| c.axis()).collect();
        let start = self.channel_starts()[j];
        let old: Vec<ChannelKind> = self.joints[j].channels.clone();
        let mut new_channels = old.clone();
        for axis in [2, 0, 1] {
            if !present.contains(&axis) {
                new_channels.push([ChannelKind::Xrotation, ChannelKind::Yrotation, ChannelKind::Zrotation][axis]);
            }
        }
        let added = new_channels.len() - old.len();
        for row in &mut self.motion {
            let at = start + old.len();
            row.splice(at..at, std::iter::repeat_n(0.0, added));
        }
        self.joints[j].channels = new_channels;
    }

    /// Writes `m` into the joint's rotation channels; the joint must have all three.
    pub fn set_local_rotation(&mut self, frame: usize, j: usize, m: &Mat3) {
        let order = self.euler_order(j).expect("joint has three rotation channels");
        let angles = matrix_to_euler(m, order);
        let start = self.channel_starts()[j];
        let mut k = 0;
        for (i, c) in self.joints[j].channels.clone().iter().enumerate() {
            if c.is_rotation() {
                self.motion[frame][start + i] = angles[k].to_degrees();
                k += 1;
            }
        }
    }

    pub fn set_local_translation(&mut self, frame: usize, j: usize, t: Vec3) {
        let start = self.channel_starts()[j];
        let t = t.to_array();
        for (i, c) in self.joints[j].channels.clone().iter().enumerate() {
            if !c.is_rotation() {
                self.motion[frame][start + i] = t[c.axis()];
            }
        }
    }
}

/// Rotation matrix for Euler angles in degrees listed in `order`.
pub fn euler_degrees(angles: [f64; 3], order: EulerOrder) -> Mat3 {
    euler_to_matrix([angles[0].to_radians(), angles[1].to_radians(), angles[2].to_radians()], order)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "HIERARCHY\nROOT hip\n{\n  OFFSET 0 0 0\n  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n  JOINT knee\n  {\n    OFFSET 0 -1 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n    End Site\n    {\n      OFFSET 0 -1 0\n    }\n  }\n}\nMOTION\nFrames: 2\nFrame Time: 0.0333333\n0 1 0 0 0 0 0 0 0\n0.1 1 0 90 0 0 0 0 45\n";

    #[test]
    fn parses_two_joint_fixture() {
        let d = parse_bvh(TWO).unwrap();
        assert_eq!(d.joints.len(), 2);
        assert_eq!(d.frame_count(), 2);
        assert_eq!(d.frame_time, 0.0333333);
        assert_eq!(d.euler_order(0), Some(EulerOrder::Zxy));
        let (p, _) = d.world_pose(1);
        assert!((p[1] - Vec3::new(1.1, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn truncated_row_names_its_line() {
        let bad = TWO.replace("0.1 1 0 90 0 0 0 0 45", "0.1 1 0 90");
        let e = parse_bvh(&bad).unwrap_err();
        assert_eq!(e.line, 20);
    }

    #[test]
    fn non_numeric_cell_is_positioned() {
        let bad = TWO.replace("0.1 1 0 90", "0.1 x 0 90");
        let e = parse_bvh(&bad).unwrap_err();
        assert_eq!((e.line, e.column), (20, 5));
    }

    #[test]
    fn missing_motion_section() {
        let cut = &TWO[..TWO.find("MOTION").unwrap()];
        assert!(parse_bvh(cut).unwrap_err().message.contains("MOTION"));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let d = parse_bvh(TWO).unwrap();
        assert_eq!(parse_bvh(&write_bvh(&d)).unwrap(), d);
    }
}
