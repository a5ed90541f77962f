//! Vascular trees: representation, Horton-Strahler ordering, hierarchy
//! split, synthetic generation and text-format I/O.
//!
//! Trees are immutable after construction. Segments are normalized so that
//! `tail` is the junction closer to the root; a positive segment velocity
//! therefore points away from the root.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{dist, sub};

type Point3 = [f64; 3];

/// Relative slack allowed when checking `length >= chord`.
const LENGTH_SLACK: f64 = 1e-12;

/// A junction (bifurcation, root or terminal point) of the tree.
#[derive(Debug, Clone)]
pub struct Junction {
    pub position: Point3,
    /// Indices of incident segments (the connectivity set).
    pub segments: Vec<usize>,
}

/// A vessel segment with constant diameter.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub tail: usize,
    pub head: usize,
    /// Vessel diameter (m).
    pub diameter: f64,
    /// True (tortuous) vessel length (m); never below the chord length.
    pub length: f64,
}

impl Segment {
    /// Cross-section area pi D^2 / 4.
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.diameter * self.diameter / 4.0
    }
}

/// A connected branching tree of vessel segments.
#[derive(Debug, Clone)]
pub struct VascularTree {
    junctions: Vec<Junction>,
    segments: Vec<Segment>,
    root: usize,
    terminals: Vec<usize>,
    /// Segment indices ordered root-outward (parents before children).
    topo: Vec<usize>,
    /// Parent segment of each junction (None for the root junction).
    parent_seg: Vec<Option<usize>>,
    /// Child segments of each junction (segments whose tail is the junction).
    child_segs: Vec<Vec<usize>>,
    /// Half-open range of leaf slots covered by each segment's subtree.
    leaf_span: Vec<(usize, usize)>,
    /// Terminal junction at each leaf slot (DFS order).
    leaf_order: Vec<usize>,
}

impl VascularTree {
    /// Builds and validates a tree. Segment tail/head order in the input is
    /// arbitrary; segments are reoriented so that `tail` is on the root side.
    pub fn new(positions: Vec<Point3>, raw_segments: Vec<Segment>, root: usize) -> Result<Self> {
        let n_j = positions.len();
        let n_s = raw_segments.len();
        if n_j < 2 {
            return Err(Error::Contract("tree needs at least two junctions".into()));
        }
        if root >= n_j {
            return Err(Error::Contract(format!("root junction {root} out of range")));
        }
        if n_s + 1 != n_j {
            return Err(Error::Contract(format!(
                "not a tree: {n_s} segments for {n_j} junctions (expected {})",
                n_j - 1
            )));
        }
        let mut segments = raw_segments;
        for (si, s) in segments.iter().enumerate() {
            if s.tail >= n_j || s.head >= n_j {
                return Err(Error::Contract(format!("segment {si}: junction index out of range")));
            }
            if s.tail == s.head {
                return Err(Error::Contract(format!("segment {si}: tail equals head")));
            }
            if !(s.diameter > 0.0) {
                return Err(Error::Contract(format!("segment {si}: diameter must be positive")));
            }
            if !(s.length > 0.0) {
                return Err(Error::Contract(format!("segment {si}: length must be positive")));
            }
            let chord = dist(positions[s.tail], positions[s.head]);
            if s.length < chord * (1.0 - LENGTH_SLACK) {
                return Err(Error::Contract(format!(
                    "segment {si}: true length {:.6e} below chord length {chord:.6e}",
                    s.length
                )));
            }
        }

        // Incidence sets.
        let mut incid = vec![Vec::new(); n_j];
        for (si, s) in segments.iter().enumerate() {
            incid[s.tail].push(si);
            incid[s.head].push(si);
        }
        if incid[root].len() != 1 {
            return Err(Error::Contract(format!(
                "root junction must have exactly one incident segment, has {}",
                incid[root].len()
            )));
        }

        // BFS from the root: orients segments and detects disconnection
        // (a disconnected graph with |S| = |J| - 1 necessarily has a cycle).
        let mut parent_seg = vec![None; n_j];
        let mut visited = vec![false; n_j];
        let mut order = Vec::with_capacity(n_j);
        visited[root] = true;
        order.push(root);
        let mut qi = 0;
        while qi < order.len() {
            let j = order[qi];
            qi += 1;
            for &si in &incid[j] {
                if Some(si) == parent_seg[j] {
                    continue;
                }
                let s = &mut segments[si];
                if s.head == j {
                    std::mem::swap(&mut s.tail, &mut s.head);
                }
                let other = s.head;
                if visited[other] {
                    return Err(Error::Contract(format!("cycle detected through segment {si}")));
                }
                visited[other] = true;
                parent_seg[other] = Some(si);
                order.push(other);
            }
        }
        if order.len() != n_j {
            return Err(Error::Contract("tree is not connected".into()));
        }

        let mut child_segs = vec![Vec::new(); n_j];
        for (si, s) in segments.iter().enumerate() {
            child_segs[s.tail].push(si);
        }
        let terminals: Vec<usize> = (0..n_j).filter(|&j| j != root && incid[j].len() == 1).collect();

        // Root-outward segment order and DFS leaf spans.
        let mut topo = Vec::with_capacity(n_s);
        let mut leaf_span = vec![(0usize, 0usize); n_s];
        let mut leaf_order = Vec::new();
        let mut stack = vec![(child_segs[root][0], false)];
        let mut span_stack: Vec<usize> = Vec::new();
        while let Some((si, done)) = stack.pop() {
            let head = segments[si].head;
            if !done {
                topo.push(si);
                span_stack.push(leaf_order.len());
                stack.push((si, true));
                if child_segs[head].is_empty() {
                    leaf_order.push(head);
                } else {
                    for &c in child_segs[head].iter().rev() {
                        stack.push((c, false));
                    }
                }
            } else {
                let lo = span_stack.pop().expect("span stack underflow");
                leaf_span[si] = (lo, leaf_order.len());
            }
        }

        let junctions = positions
            .into_iter()
            .zip(incid)
            .map(|(position, segments)| Junction { position, segments })
            .collect();

        Ok(VascularTree {
            junctions,
            segments,
            root,
            terminals,
            topo,
            parent_seg,
            child_segs,
            leaf_span,
            leaf_order,
        })
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn root_junction(&self) -> usize {
        self.root
    }

    /// The single segment incident to the root junction.
    pub fn root_segment(&self) -> usize {
        self.junctions[self.root].segments[0]
    }

    pub fn terminal_junctions(&self) -> &[usize] {
        &self.terminals
    }

    /// Segment indices ordered so parents precede children.
    pub fn segments_topo(&self) -> &[usize] {
        &self.topo
    }

    pub fn parent_segment(&self, junction: usize) -> Option<usize> {
        self.parent_seg[junction]
    }

    pub fn child_segments(&self, junction: usize) -> &[usize] {
        &self.child_segs[junction]
    }

    /// Half-open leaf-slot range of the subtree hanging off a segment,
    /// indexing into [`Self::leaves_dfs`].
    pub fn leaf_span(&self, segment: usize) -> (usize, usize) {
        self.leaf_span[segment]
    }

    /// Terminal junctions in DFS order (one per leaf slot).
    pub fn leaves_dfs(&self) -> &[usize] {
        &self.leaf_order
    }

    /// The terminal segment ending at a terminal junction.
    pub fn terminal_segment(&self, terminal_junction: usize) -> usize {
        self.parent_seg[terminal_junction].expect("terminal junction has a parent segment")
    }
}

/// Horton-Strahler order of every segment.
///
/// Terminal segments have order 1; a parent of two (or more) children that
/// share the maximal order gets that order plus one, otherwise the maximum
/// child order.
pub fn horton_strahler(tree: &VascularTree) -> Vec<u32> {
    let mut order = vec![0u32; tree.segments().len()];
    for &si in tree.segments_topo().iter().rev() {
        let head = tree.segments()[si].head;
        let children = tree.child_segments(head);
        if children.is_empty() {
            order[si] = 1;
        } else {
            let mut max = 0;
            let mut max_count = 0;
            for &c in children {
                match order[c].cmp(&max) {
                    std::cmp::Ordering::Greater => {
                        max = order[c];
                        max_count = 1;
                    }
                    std::cmp::Ordering::Equal => max_count += 1,
                    std::cmp::Ordering::Less => {}
                }
            }
            order[si] = if max_count >= 2 { max + 1 } else { max };
        }
    }
    order
}

/// A lower-hierarchy segment detached from its tree by [`split_hierarchy`],
/// carrying everything the upscaling stage needs.
#[derive(Debug, Clone, Copy)]
pub struct LowerSegment {
    pub tail: Point3,
    pub head: Point3,
    pub diameter: f64,
    pub length: f64,
    pub hs_order: u32,
    /// Smallest child diameter in the original tree; `None` for leaves.
    pub min_child_diameter: Option<f64>,
}

impl LowerSegment {
    pub fn midpoint(&self) -> Point3 {
        [
            (self.tail[0] + self.head[0]) / 2.0,
            (self.tail[1] + self.head[1]) / 2.0,
            (self.tail[2] + self.head[2]) / 2.0,
        ]
    }

    /// Unit chord direction tail -> head.
    pub fn direction(&self) -> Point3 {
        let d = sub(self.head, self.tail);
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        [d[0] / n, d[1] / n, d[2] / n]
    }
}

/// An upper-tree terminal that interfaces the continuum model.
#[derive(Debug, Clone, Copy)]
pub struct InterfaceJunction {
    /// Junction index in the `upper` tree.
    pub upper_junction: usize,
    pub position: Point3,
}

/// Result of splitting a tree at a Horton-Strahler threshold.
#[derive(Debug, Clone)]
pub struct HierarchySplit {
    /// Root-containing subtree whose segments all have HS order >= threshold.
    pub upper: VascularTree,
    /// All remaining segments, tagged for upscaling.
    pub lower_segments: Vec<LowerSegment>,
    /// Leaves of `upper`, i.e. the source/sink locations of the coupled model.
    pub interface_junctions: Vec<InterfaceJunction>,
}

/// Splits a tree into the 1D-resolved upper hierarchy (HS order >= threshold)
/// and the list of lower-hierarchy segments destined for upscaling.
pub fn split_hierarchy(tree: &VascularTree, hs_threshold: u32) -> Result<HierarchySplit> {
    if hs_threshold < 1 {
        return Err(Error::Contract("hs_threshold must be >= 1".into()));
    }
    let order = horton_strahler(tree);
    let root_order = order[tree.root_segment()];
    if hs_threshold > root_order {
        return Err(Error::Contract(format!(
            "split threshold {hs_threshold} exceeds root order {root_order}; upper tree would be empty"
        )));
    }

    // HS order never increases away from the root, so the kept set is
    // automatically root-connected.
    let keep: Vec<bool> = order.iter().map(|&o| o >= hs_threshold).collect();

    let mut jmap: HashMap<usize, usize> = HashMap::new();
    let mut positions = Vec::new();
    let mut map_junction = |j: usize, positions: &mut Vec<Point3>, jmap: &mut HashMap<usize, usize>| {
        *jmap.entry(j).or_insert_with(|| {
            positions.push(tree.junctions()[j].position);
            positions.len() - 1
        })
    };

    let mut upper_segments = Vec::new();
    let mut lower_segments = Vec::new();
    for &si in tree.segments_topo() {
        let s = tree.segments()[si];
        if keep[si] {
            let tail = map_junction(s.tail, &mut positions, &mut jmap);
            let head = map_junction(s.head, &mut positions, &mut jmap);
            upper_segments.push(Segment { tail, head, ..s });
        } else {
            let children = tree.child_segments(s.head);
            let min_child_diameter = children
                .iter()
                .map(|&c| tree.segments()[c].diameter)
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))));
            lower_segments.push(LowerSegment {
                tail: tree.junctions()[s.tail].position,
                head: tree.junctions()[s.head].position,
                diameter: s.diameter,
                length: s.length,
                hs_order: order[si],
                min_child_diameter,
            });
        }
    }

    let upper_root = jmap[&tree.root_junction()];
    let upper = VascularTree::new(positions, upper_segments, upper_root)?;
    let interface_junctions = upper
        .terminal_junctions()
        .iter()
        .map(|&j| InterfaceJunction { upper_junction: j, position: upper.junctions()[j].position })
        .collect();

    Ok(HierarchySplit { upper, lower_segments, interface_junctions })
}

/// Parameters of the deterministic synthetic tree generator.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TreeSpec {
    /// Number of segment levels on every root-to-leaf path (>= 1).
    pub depth: u32,
    /// Root segment diameter (m).
    pub root_diameter: f64,
    /// Per-level diameter shrink factor, in (0, 1].
    pub diameter_ratio: f64,
    /// Target chord length as a multiple of the segment diameter.
    pub length_diameter_ratio: f64,
    /// Axis-aligned bounding region the tree must stay inside.
    pub region_min: Point3,
    pub region_max: Point3,
    /// Seed for the branching-angle jitter.
    pub seed: u64,
    /// True length as a multiple of the chord length (>= 1).
    #[serde(default = "default_tortuosity")]
    pub tortuosity: f64,
}

fn default_tortuosity() -> f64 {
    1.2
}

#[derive(Debug, Clone, Copy)]
struct Box3 {
    min: Point3,
    max: Point3,
}

impl Box3 {
    fn center(&self) -> Point3 {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
            (self.min[2] + self.max[2]) / 2.0,
        ]
    }

    fn extent(&self) -> Point3 {
        sub(self.max, self.min)
    }

    fn longest_axis(&self) -> usize {
        let e = self.extent();
        let mut k = 0;
        if e[1] > e[k] {
            k = 1;
        }
        if e[2] > e[k] {
            k = 2;
        }
        k
    }

    fn min_side(&self) -> f64 {
        let e = self.extent();
        e[0].min(e[1]).min(e[2])
    }

    /// Clamps a point into the box with a small interior margin.
    fn clamp_inside(&self, p: Point3, margin_frac: f64) -> Point3 {
        let e = self.extent();
        let mut q = p;
        for k in 0..3 {
            let m = e[k] * margin_frac;
            q[k] = q[k].clamp(self.min[k] + m, self.max[k] - m);
        }
        q
    }

    fn split(&self, axis: usize, frac: f64) -> (Box3, Box3) {
        let cut = self.min[axis] + (self.max[axis] - self.min[axis]) * frac;
        let mut a = *self;
        let mut b = *self;
        a.max[axis] = cut;
        b.min[axis] = cut;
        (a, b)
    }
}

/// Builds a full binary tree of the requested depth by recursive bisection
/// of the bounding region, with seeded jitter on split fractions and
/// junction placement. Deterministic for a fixed spec.
pub fn build_synthetic_tree(spec: &TreeSpec) -> Result<VascularTree> {
    if spec.depth < 1 {
        return Err(Error::Contract("tree depth must be >= 1".into()));
    }
    if !(spec.root_diameter > 0.0) {
        return Err(Error::Contract("root diameter must be positive".into()));
    }
    if !(spec.diameter_ratio > 0.0 && spec.diameter_ratio <= 1.0) {
        return Err(Error::Contract("diameter ratio must be in (0, 1]".into()));
    }
    if !(spec.length_diameter_ratio > 0.0) {
        return Err(Error::Contract("length/diameter ratio must be positive".into()));
    }
    if !(spec.tortuosity >= 1.0) {
        return Err(Error::Contract("tortuosity must be >= 1".into()));
    }
    let region = Box3 { min: spec.region_min, max: spec.region_max };
    let ext = region.extent();
    if ext.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Generation("bounding region has non-positive extent".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut positions: Vec<Point3> = Vec::new();
    let mut segments: Vec<Segment> = Vec::new();

    // Root junction sits just inside the min-x face, at its center.
    let root_pos = [
        region.min[0] + 0.02 * ext[0],
        (region.min[1] + region.max[1]) / 2.0,
        (region.min[2] + region.max[2]) / 2.0,
    ];
    positions.push(root_pos);

    struct Frame {
        parent_junction: usize,
        boxx: Box3,
        level: u32,
    }

    let mut stack = vec![Frame { parent_junction: 0, boxx: region, level: 1 }];
    while let Some(f) = stack.pop() {
        let diameter = spec.root_diameter * spec.diameter_ratio.powi(f.level as i32 - 1);
        if diameter > f.boxx.min_side() {
            return Err(Error::Generation(format!(
                "level-{} segment of diameter {diameter:.3e} cannot fit its region \
                 (shortest side {:.3e}); reduce depth or enlarge the region",
                f.level,
                f.boxx.min_side()
            )));
        }
        let parent = positions[f.parent_junction];
        let target_len = spec.length_diameter_ratio * diameter;

        // Aim at the (jittered) box center, walking the target length.
        let e = f.boxx.extent();
        let jitter = |rng: &mut ChaCha8Rng, scale: f64| {
            [
                rng.gen_range(-1.0..1.0) * scale * e[0],
                rng.gen_range(-1.0..1.0) * scale * e[1],
                rng.gen_range(-1.0..1.0) * scale * e[2],
            ]
        };
        let jc = jitter(&mut rng, 0.15);
        let c = f.boxx.center();
        let aim = [c[0] + jc[0], c[1] + jc[1], c[2] + jc[2]];
        let dir = sub(aim, parent);
        let dn = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        let head_pos = if dn > 0.0 && target_len < dn {
            let s = target_len / dn;
            f.boxx.clamp_inside(
                [parent[0] + dir[0] * s, parent[1] + dir[1] * s, parent[2] + dir[2] * s],
                0.02,
            )
        } else {
            f.boxx.clamp_inside(aim, 0.02)
        };

        positions.push(head_pos);
        let head_junction = positions.len() - 1;
        let chord = dist(parent, head_pos);
        if !(chord > 0.0) {
            return Err(Error::Generation(format!(
                "level-{} junction placement collapsed onto its parent",
                f.level
            )));
        }
        segments.push(Segment {
            tail: f.parent_junction,
            head: head_junction,
            diameter,
            length: spec.tortuosity * chord,
        });

        if f.level < spec.depth {
            let axis = f.boxx.longest_axis();
            let frac = 0.5 + rng.gen_range(-0.08..0.08);
            let (b1, b2) = f.boxx.split(axis, frac);
            // Pushed in reverse so the first child is processed first.
            stack.push(Frame { parent_junction: head_junction, boxx: b2, level: f.level + 1 });
            stack.push(Frame { parent_junction: head_junction, boxx: b1, level: f.level + 1 });
        }
    }

    VascularTree::new(positions, segments, 0)
}

/// Reads a tree from the line-oriented `tree-v1` text format.
///
/// Lines: header `tree-v1`; `J id x y z` per junction; `S id tail head
/// diameter length` per segment; `R id` declaring the root. Junction and
/// segment ids must be dense starting at 0. `#` starts a comment.
pub fn load_tree(path: impl AsRef<Path>) -> Result<VascularTree> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;

    let mut junctions: Vec<(usize, Point3)> = Vec::new();
    let mut segments: Vec<(usize, Segment)> = Vec::new();
    let mut root: Option<usize> = None;
    let mut header_seen = false;

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            if line != "tree-v1" {
                return Err(Error::format(path, ln, format!("expected header `tree-v1`, found `{line}`")));
            }
            header_seen = true;
            continue;
        }
        let mut tok = line.split_whitespace();
        let kind = tok.next().unwrap();
        let parse_f = |t: Option<&str>, what: &str| -> Result<f64> {
            t.ok_or_else(|| Error::format(path, ln, format!("missing {what}")))?
                .parse()
                .map_err(|_| Error::format(path, ln, format!("invalid {what}")))
        };
        let parse_u = |t: Option<&str>, what: &str| -> Result<usize> {
            t.ok_or_else(|| Error::format(path, ln, format!("missing {what}")))?
                .parse()
                .map_err(|_| Error::format(path, ln, format!("invalid {what}")))
        };
        match kind {
            "J" => {
                let id = parse_u(tok.next(), "junction id")?;
                let x = parse_f(tok.next(), "x")?;
                let y = parse_f(tok.next(), "y")?;
                let z = parse_f(tok.next(), "z")?;
                junctions.push((id, [x, y, z]));
            }
            "S" => {
                let id = parse_u(tok.next(), "segment id")?;
                let tail = parse_u(tok.next(), "tail junction")?;
                let head = parse_u(tok.next(), "head junction")?;
                let diameter = parse_f(tok.next(), "diameter")?;
                let length = parse_f(tok.next(), "length")?;
                if !(diameter > 0.0) {
                    return Err(Error::format(path, ln, "segment diameter must be positive"));
                }
                if !(length > 0.0) {
                    return Err(Error::format(path, ln, "segment length must be positive"));
                }
                segments.push((id, Segment { tail, head, diameter, length }));
            }
            "R" => {
                if root.is_some() {
                    return Err(Error::format(path, ln, "duplicate root declaration"));
                }
                root = Some(parse_u(tok.next(), "root id")?);
            }
            other => {
                return Err(Error::format(path, ln, format!("unknown record `{other}`")));
            }
        }
    }

    let root = root.ok_or_else(|| Error::format(path, 0, "missing root declaration `R id`"))?;
    junctions.sort_by_key(|&(id, _)| id);
    segments.sort_by_key(|&(id, _)| id);
    for (expect, &(id, _)) in junctions.iter().enumerate() {
        if id != expect {
            return Err(Error::format(path, 0, format!("junction ids not dense: missing id {expect}")));
        }
    }
    for (expect, &(id, _)) in segments.iter().enumerate() {
        if id != expect {
            return Err(Error::format(path, 0, format!("segment ids not dense: missing id {expect}")));
        }
    }

    VascularTree::new(
        junctions.into_iter().map(|(_, p)| p).collect(),
        segments.into_iter().map(|(_, s)| s).collect(),
        root,
    )
}

/// Writes a tree in the `tree-v1` text format; `load_tree` round-trips it.
pub fn save_tree(tree: &VascularTree, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("tree-v1\n");
    for (i, j) in tree.junctions().iter().enumerate() {
        let _ = writeln!(
            out,
            "J {i} {:.17e} {:.17e} {:.17e}",
            j.position[0], j.position[1], j.position[2]
        );
    }
    for (i, s) in tree.segments().iter().enumerate() {
        let _ = writeln!(out, "S {i} {} {} {:.17e} {:.17e}", s.tail, s.head, s.diameter, s.length);
    }
    let _ = writeln!(out, "R {}", tree.root_junction());
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn unit_spec(depth: u32, seed: u64) -> TreeSpec {
        TreeSpec {
            depth,
            root_diameter: 0.01,
            diameter_ratio: 0.7,
            length_diameter_ratio: 12.0,
            region_min: [0.0, 0.0, 0.0],
            region_max: [1.0, 0.8, 0.6],
            seed,
            tortuosity: 1.2,
        }
    }

    /// Chain tree where each internal junction joins one leaf and the
    /// continuation, i.e. a caterpillar.
    fn caterpillar(depth: usize) -> VascularTree {
        let mut positions = vec![[0.0, 0.0, 0.0]];
        let mut segments = Vec::new();
        let mut spine = 0usize;
        for lvl in 0..depth {
            let x = (lvl + 1) as f64;
            positions.push([x, 0.0, 0.0]);
            let next_spine = positions.len() - 1;
            segments.push(Segment { tail: spine, head: next_spine, diameter: 1e-3, length: 1.0 });
            if lvl + 1 < depth {
                positions.push([x, 1.0, 0.0]);
                let leaf = positions.len() - 1;
                segments.push(Segment { tail: next_spine, head: leaf, diameter: 1e-3, length: 1.0 });
            }
            spine = next_spine;
        }
        VascularTree::new(positions, segments, 0).unwrap()
    }

    #[test]
    fn depth_one_tree() {
        let t = build_synthetic_tree(&unit_spec(1, 7)).unwrap();
        assert_eq!(t.segments().len(), 1);
        assert_eq!(t.junctions().len(), 2);
        assert_eq!(t.terminal_junctions().len(), 1);
    }

    #[test]
    fn depth_three_geometric_diameters() {
        let mut spec = unit_spec(3, 42);
        spec.diameter_ratio = 0.794;
        let t = build_synthetic_tree(&spec).unwrap();
        assert_eq!(t.segments().len(), 7);
        let order = horton_strahler(&t);
        for (si, s) in t.segments().iter().enumerate() {
            if order[si] == 1 {
                let expected = spec.root_diameter * 0.794 * 0.794;
                assert!((s.diameter - expected).abs() < 1e-15);
                assert!((s.diameter / spec.root_diameter - 0.63).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = build_synthetic_tree(&unit_spec(5, 123)).unwrap();
        let b = build_synthetic_tree(&unit_spec(5, 123)).unwrap();
        assert_eq!(a.segments().len(), b.segments().len());
        for (sa, sb) in a.segments().iter().zip(b.segments()) {
            assert_eq!(sa.tail, sb.tail);
            assert_eq!(sa.head, sb.head);
            assert_eq!(sa.diameter, sb.diameter);
            assert_eq!(sa.length, sb.length);
        }
        for (ja, jb) in a.junctions().iter().zip(b.junctions()) {
            assert_eq!(ja.position, jb.position);
        }
    }

    #[test]
    fn junctions_stay_inside_region() {
        let spec = unit_spec(7, 5);
        let t = build_synthetic_tree(&spec).unwrap();
        for j in t.junctions() {
            for k in 0..3 {
                assert!(j.position[k] >= spec.region_min[k] && j.position[k] <= spec.region_max[k]);
            }
        }
    }

    #[test]
    fn infeasible_region_is_rejected() {
        let mut spec = unit_spec(3, 0);
        spec.region_max = [0.005, 0.005, 0.005];
        assert!(matches!(build_synthetic_tree(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn single_segment_order_one() {
        let t = build_synthetic_tree(&unit_spec(1, 1)).unwrap();
        assert_eq!(horton_strahler(&t), vec![1]);
    }

    #[test]
    fn symmetric_depth_two_root_order() {
        let t = build_synthetic_tree(&unit_spec(2, 1)).unwrap();
        let order = horton_strahler(&t);
        assert_eq!(order[t.root_segment()], 2);
    }

    #[test]
    fn caterpillar_root_order_two() {
        for depth in 2..8 {
            let t = caterpillar(depth);
            let order = horton_strahler(&t);
            assert_eq!(order[t.root_segment()], 2, "caterpillar depth {depth}");
        }
    }

    #[test]
    fn full_binary_root_order_equals_depth() {
        for d in 1..=8 {
            let t = build_synthetic_tree(&unit_spec(d, 3)).unwrap();
            let order = horton_strahler(&t);
            assert_eq!(order[t.root_segment()], d, "depth {d}");
        }
    }

    #[test]
    fn split_threshold_one_is_identity() {
        let t = build_synthetic_tree(&unit_spec(4, 9)).unwrap();
        let split = split_hierarchy(&t, 1).unwrap();
        assert_eq!(split.upper.segments().len(), t.segments().len());
        assert!(split.lower_segments.is_empty());
        assert_eq!(split.interface_junctions.len(), t.terminal_junctions().len());
    }

    #[test]
    fn split_symmetric_depth_three() {
        let t = build_synthetic_tree(&unit_spec(3, 11)).unwrap();
        let split = split_hierarchy(&t, 2).unwrap();
        assert_eq!(split.upper.segments().len(), 3);
        assert_eq!(split.lower_segments.len(), 4);
        assert_eq!(split.interface_junctions.len(), 2);
        // Every original segment shows up exactly once.
        assert_eq!(
            split.upper.segments().len() + split.lower_segments.len(),
            t.segments().len()
        );
    }

    #[test]
    fn split_above_root_order_fails() {
        let t = build_synthetic_tree(&unit_spec(3, 2)).unwrap();
        assert!(split_hierarchy(&t, 4).is_err());
    }

    #[test]
    fn tree_file_roundtrip() {
        let t = build_synthetic_tree(&unit_spec(3, 17)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tree");
        save_tree(&t, &path).unwrap();
        let t2 = load_tree(&path).unwrap();
        assert_eq!(t.junctions().len(), t2.junctions().len());
        assert_eq!(t.root_junction(), t2.root_junction());
        for (a, b) in t.segments().iter().zip(t2.segments()) {
            assert_eq!(a.tail, b.tail);
            assert_eq!(a.head, b.head);
            assert_eq!(a.diameter, b.diameter);
            assert_eq!(a.length, b.length);
        }
    }

    #[test]
    fn cyclic_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cycle.tree");
        std::fs::write(
            &path,
            "tree-v1\nJ 0 0 0 0\nJ 1 1 0 0\nJ 2 2 0 0\n\
             S 0 0 1 1e-3 1.5\nS 1 1 2 1e-3 1.5\nS 2 2 1 1e-3 1.5\nR 0\n",
        )
        .unwrap();
        assert!(load_tree(&path).is_err());
    }

    #[test]
    fn zero_diameter_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zd.tree");
        std::fs::write(&path, "tree-v1\nJ 0 0 0 0\nJ 1 1 0 0\nS 0 0 1 0 1.5\nR 0\n").unwrap();
        assert!(load_tree(&path).is_err());
    }

    #[test]
    fn length_below_chord_rejected() {
        let err = VascularTree::new(
            vec![[0.0; 3], [2.0, 0.0, 0.0]],
            vec![Segment { tail: 0, head: 1, diameter: 1e-3, length: 1.0 }],
            0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn leaf_spans_partition_leaves() {
        let t = build_synthetic_tree(&unit_spec(4, 21)).unwrap();
        let root_seg = t.root_segment();
        let (lo, hi) = t.leaf_span(root_seg);
        assert_eq!(lo, 0);
        assert_eq!(hi, t.leaves_dfs().len());
        assert_eq!(t.leaves_dfs().len(), t.terminal_junctions().len());
        for &si in t.segments_topo() {
            let (a, b) = t.leaf_span(si);
            assert!(a < b, "non-empty span");
        }
    }

    proptest! {
        /// HS order of every segment is invariant under relabeling the
        /// segment list (and thereby the order children are visited in).
        #[test]
        fn hs_invariant_under_relabel(seed in 0u64..500, depth in 2u32..6) {
            let t = build_synthetic_tree(&unit_spec(depth, seed)).unwrap();
            let order = horton_strahler(&t);

            let n = t.segments().len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let mut shuffled = vec![t.segments()[0]; n];
            for (old, &new) in perm.iter().enumerate() {
                shuffled[new] = t.segments()[old];
            }
            let positions: Vec<_> = t.junctions().iter().map(|j| j.position).collect();
            let t2 = VascularTree::new(positions, shuffled, t.root_junction()).unwrap();
            let order2 = horton_strahler(&t2);
            for (old, &new) in perm.iter().enumerate() {
                prop_assert_eq!(order[old], order2[new]);
            }
        }
    }
}
