//! Joint tree, real and virtual bones, and root-to-joint path enumeration.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::Scalar;

/// Canonical 17-joint order. Checkpoints and pose files depend on it.
pub const JOINT_NAMES: [&str; 17] = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

const DEFAULT_PARENTS: [i64; 17] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];

/// Rooted joint tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    root: usize,
    /// `(child, parent)` in increasing child order, root skipped.
    real_bones: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    /// Builds a topology from names and parent indices (`-1` marks the root).
    pub fn from_parents(joint_names: Vec<String>, parents: &[i64]) -> Result<Self> {
        let n = joint_names.len();
        if n == 0 {
            return Err(validation("skeleton has no joints"));
        }
        if parents.len() != n {
            return Err(validation(format!(
                "{} joint names but {} parent entries",
                n,
                parents.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &joint_names {
            if !seen.insert(name.as_str()) {
                return Err(validation(format!("duplicate joint name {name:?}")));
            }
        }
        let mut root = None;
        let mut parent_idx = Vec::with_capacity(n);
        for (j, &p) in parents.iter().enumerate() {
            if p < 0 {
                if root.replace(j).is_some() {
                    return Err(validation("skeleton has more than one root"));
                }
                parent_idx.push(None);
            } else {
                let p = p as usize;
                if p >= n {
                    return Err(validation(format!("joint {j} has out-of-range parent {p}")));
                }
                if p == j {
                    return Err(validation(format!("joint {j} is its own parent")));
                }
                parent_idx.push(Some(p));
            }
        }
        let root = root.ok_or_else(|| validation("skeleton has no root"))?;

        // Every joint must reach the root within n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent_idx[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(validation(format!("parent cycle through joint {start}")));
                }
            }
            if cur != root {
                return Err(validation(format!("joint {start} does not reach the root")));
            }
        }

        let real_bones = (0..n)
            .filter_map(|c| parent_idx[c].map(|p| (c, p)))
            .collect();
        Ok(Self {
            joint_names,
            parents: parent_idx,
            root,
            real_bones,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn num_real_bones(&self) -> usize {
        self.real_bones.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn real_bones(&self) -> &[(usize, usize)] {
        &self.real_bones
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// True when `a` and `b` are connected by a real bone.
    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.parents[a] == Some(b) || self.parents[b] == Some(a)
    }

    pub fn children(&self, joint: usize) -> Vec<usize> {
        (0..self.num_joints())
            .filter(|&c| self.parents[c] == Some(joint))
            .collect()
    }

    /// Leaves of the tree: head, both wrists and both ankles on the default skeleton.
    pub fn end_joints(&self) -> Vec<usize> {
        (0..self.num_joints())
            .filter(|&j| j != self.root && self.children(j).is_empty())
            .collect()
    }

    /// Number of real bones between the root and `joint`.
    pub fn depth(&self, joint: usize) -> usize {
        self.real_path(joint).len()
    }

    /// Real-bone indices from the root down to `joint`.
    pub fn real_path(&self, joint: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = joint;
        while let Some(p) = self.parents[cur] {
            path.push(self.real_bone_index(cur).expect("non-root joint has a bone"));
            cur = p;
        }
        path.reverse();
        path
    }

    /// Index of the real bone whose child is `joint`.
    pub fn real_bone_index(&self, joint: usize) -> Option<usize> {
        self.real_bones.iter().position(|&(c, _)| c == joint)
    }

    /// Parents encoded as in the JSON document (`-1` for the root).
    pub fn parent_indices(&self) -> Vec<i64> {
        self.parents
            .iter()
            .map(|p| p.map_or(-1, |p| p as i64))
            .collect()
    }
}

/// The standard 17-joint skeleton rooted at the pelvis.
pub fn default_topology() -> SkeletonTopology {
    SkeletonTopology::from_parents(
        JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        &DEFAULT_PARENTS,
    )
    .expect("built-in skeleton is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VirtualConfigName {
    VB0,
    VB5,
    VB10,
    VB13,
    VB23,
    /// Loaded from a skeleton document rather than built in.
    Custom,
}

impl VirtualConfigName {
    pub const BUILT_IN: [VirtualConfigName; 5] = [
        VirtualConfigName::VB0,
        VirtualConfigName::VB5,
        VirtualConfigName::VB10,
        VirtualConfigName::VB13,
        VirtualConfigName::VB23,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VirtualConfigName::VB0 => "VB0",
            VirtualConfigName::VB5 => "VB5",
            VirtualConfigName::VB10 => "VB10",
            VirtualConfigName::VB13 => "VB13",
            VirtualConfigName::VB23 => "VB23",
            VirtualConfigName::Custom => "custom",
        }
    }
}

impl fmt::Display for VirtualConfigName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VirtualConfigName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VB0" => Ok(VirtualConfigName::VB0),
            "VB5" => Ok(VirtualConfigName::VB5),
            "VB10" => Ok(VirtualConfigName::VB10),
            "VB13" => Ok(VirtualConfigName::VB13),
            "VB23" => Ok(VirtualConfigName::VB23),
            "CUSTOM" => Ok(VirtualConfigName::Custom),
            _ => Err(Error::Config(format!("unknown virtual-bone configuration {s:?}"))),
        }
    }
}

/// Set of virtual bones. Each pair `(a, b)` has `a < b` and is oriented `a -> b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirtualBoneConfig {
    pub name: VirtualConfigName,
    pub pairs: Vec<(usize, usize)>,
}

impl VirtualBoneConfig {
    /// Validates and canonicalizes an arbitrary pair list.
    pub fn custom(
        name: VirtualConfigName,
        pairs: &[(usize, usize)],
        topology: &SkeletonTopology,
    ) -> Result<Self> {
        let n = topology.num_joints();
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            if a >= n || b >= n {
                return Err(validation(format!("virtual bone ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(validation(format!("virtual bone ({a}, {b}) is a self-loop")));
            }
            if topology.adjacent(a, b) {
                return Err(validation(format!(
                    "virtual bone ({a}, {b}) duplicates a real bone"
                )));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        let before = out.len();
        out.dedup();
        if out.len() != before {
            return Err(validation("duplicate virtual bone pair"));
        }
        Ok(Self { name, pairs: out })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Builds one of the built-in virtual-bone configurations.
pub fn make_virtual_config(
    name: VirtualConfigName,
    topology: &SkeletonTopology,
) -> Result<VirtualBoneConfig> {
    let root = topology.root();
    let ends = topology.end_joints();
    let root_to_ends = || ends.iter().map(|&e| (root, e)).collect::<Vec<_>>();
    let end_pairs = || {
        let mut v = Vec::new();
        for (i, &a) in ends.iter().enumerate() {
            for &b in &ends[i + 1..] {
                v.push((a, b));
            }
        }
        v
    };
    let root_to_nonadjacent = || {
        (0..topology.num_joints())
            .filter(|&j| j != root && !topology.adjacent(root, j))
            .map(|j| (root, j))
            .collect::<Vec<_>>()
    };
    let pairs = match name {
        VirtualConfigName::VB0 => Vec::new(),
        VirtualConfigName::VB5 => root_to_ends(),
        VirtualConfigName::VB10 => end_pairs(),
        VirtualConfigName::VB13 => root_to_nonadjacent(),
        VirtualConfigName::VB23 => {
            let mut v = root_to_nonadjacent();
            v.extend(end_pairs());
            v
        }
        VirtualConfigName::Custom => {
            return Err(Error::Config(
                "custom virtual bones come from a skeleton document".into(),
            ))
        }
    };
    VirtualBoneConfig::custom(name, &pairs, topology)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoneKind {
    Real,
    Virtual,
}

/// Oriented bone `from -> to`. Real bones run parent to child.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bone {
    pub from: usize,
    pub to: usize,
    pub kind: BoneKind,
}

/// Real bones followed by virtual bones, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoneSet {
    topology: SkeletonTopology,
    virtual_config: VirtualBoneConfig,
    bones: Vec<Bone>,
}

impl BoneSet {
    pub fn new(topology: SkeletonTopology, virtual_config: VirtualBoneConfig) -> Self {
        let mut bones: Vec<Bone> = topology
            .real_bones()
            .iter()
            .map(|&(child, parent)| Bone {
                from: parent,
                to: child,
                kind: BoneKind::Real,
            })
            .collect();
        bones.extend(virtual_config.pairs.iter().map(|&(a, b)| Bone {
            from: a,
            to: b,
            kind: BoneKind::Virtual,
        }));
        Self {
            topology,
            virtual_config,
            bones,
        }
    }

    /// Default skeleton with a built-in virtual configuration.
    pub fn standard(name: VirtualConfigName) -> Result<Self> {
        let topology = default_topology();
        let config = make_virtual_config(name, &topology)?;
        Ok(Self::new(topology, config))
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn virtual_config(&self) -> &VirtualBoneConfig {
        &self.virtual_config
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn len(&self) -> usize {
        self.bones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bones.is_empty()
    }

    pub fn num_real(&self) -> usize {
        self.topology.num_real_bones()
    }

    pub fn num_virtual(&self) -> usize {
        self.virtual_config.len()
    }

    pub fn is_real(&self, bone: usize) -> bool {
        bone < self.num_real()
    }

    /// `(from, to)` joint pairs in bone order.
    pub fn endpoints(&self) -> Vec<(usize, usize)> {
        self.bones.iter().map(|b| (b.from, b.to)).collect()
    }
}

/// One traversed bone; `sign` is `-1` when walked `to -> from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PathStep {
    pub bone: usize,
    pub sign: i8,
}

pub type BonePath = Vec<PathStep>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    pub target: usize,
    pub paths: Vec<BonePath>,
}

/// All simple root-to-`target` paths with at most `max_edges` bones, ordered
/// lexicographically by bone-index sequence.
pub fn enumerate_paths(bone_set: &BoneSet, target: usize, max_edges: usize) -> Result<PathSet> {
    let topology = bone_set.topology();
    let n = topology.num_joints();
    if target >= n {
        return Err(validation(format!("target joint {target} out of range")));
    }
    let root = topology.root();
    if target == root {
        return Ok(PathSet {
            target,
            paths: vec![Vec::new()],
        });
    }
    let depth = topology.depth(target);
    if max_edges < depth {
        return Err(validation(format!(
            "max_edges {max_edges} is below the real-tree depth {depth} of joint {target}"
        )));
    }

    // incident[j] = (bone, neighbour, sign) in increasing bone order
    let mut incident: Vec<Vec<(usize, usize, i8)>> = vec![Vec::new(); n];
    for (i, b) in bone_set.bones().iter().enumerate() {
        incident[b.from].push((i, b.to, 1));
        incident[b.to].push((i, b.from, -1));
    }
    for list in &mut incident {
        list.sort_unstable_by_key(|&(bone, _, _)| bone);
    }

    let mut paths = Vec::new();
    let mut on_path = vec![false; n];
    let mut steps: Vec<PathStep> = Vec::new();
    // stack of (joint, next incident slot)
    let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
    on_path[root] = true;

    while let Some(top) = stack.last_mut() {
        let (joint, slot) = *top;
        if slot >= incident[joint].len() || steps.len() >= max_edges {
            stack.pop();
            on_path[joint] = false;
            steps.pop();
            continue;
        }
        top.1 += 1;
        let (bone, next, sign) = incident[joint][slot];
        if on_path[next] {
            continue;
        }
        if next == target {
            let mut p = steps.clone();
            p.push(PathStep { bone, sign });
            paths.push(p);
            continue;
        }
        on_path[next] = true;
        steps.push(PathStep { bone, sign });
        stack.push((next, 0));
    }

    if paths.is_empty() {
        return Err(Error::Internal(format!("joint {target} unreachable from root")));
    }
    Ok(PathSet { target, paths })
}

/// Euclidean length of every bone for one pose `[J, 3]`.
pub fn bone_lengths_from_joints<T: Scalar>(
    joints3d: ArrayView2<'_, T>,
    bone_set: &BoneSet,
) -> Result<Array1<T>> {
    check_pose(joints3d, bone_set.topology().num_joints())?;
    Ok(bone_set
        .bones()
        .iter()
        .map(|b| {
            let d = &joints3d.row(b.to) - &joints3d.row(b.from);
            d.iter().map(|&x| x * x).sum::<T>().sqrt()
        })
        .collect())
}

pub(crate) fn check_pose<T: Scalar>(joints3d: ArrayView2<'_, T>, num_joints: usize) -> Result<()> {
    if joints3d.dim() != (num_joints, 3) {
        return Err(validation(format!(
            "expected pose of shape [{num_joints}, 3], got {:?}",
            joints3d.dim()
        )));
    }
    if joints3d.iter().any(|x| !x.is_finite()) {
        return Err(validation("pose contains non-finite coordinates"));
    }
    Ok(())
}

/// JSON form of a topology plus its virtual bones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonDocument {
    pub joints: Vec<String>,
    pub parents: Vec<i64>,
    pub virtual_bones: Vec<[String; 2]>,
}

impl SkeletonDocument {
    pub fn from_bone_set(bone_set: &BoneSet) -> Self {
        let topo = bone_set.topology();
        let name = |j: usize| topo.joint_names()[j].clone();
        Self {
            joints: topo.joint_names().to_vec(),
            parents: topo.parent_indices(),
            virtual_bones: bone_set
                .virtual_config()
                .pairs
                .iter()
                .map(|&(a, b)| [name(a), name(b)])
                .collect(),
        }
    }

    /// Rebuilds the bone set; the configuration name is recovered when the
    /// pairs match a built-in set on the default skeleton.
    pub fn to_bone_set(&self) -> Result<BoneSet> {
        let topology = SkeletonTopology::from_parents(self.joints.clone(), &self.parents)?;
        let mut pairs = Vec::with_capacity(self.virtual_bones.len());
        for [a, b] in &self.virtual_bones {
            let ia = topology
                .joint_index(a)
                .ok_or_else(|| validation(format!("unknown joint {a:?} in virtual bone")))?;
            let ib = topology
                .joint_index(b)
                .ok_or_else(|| validation(format!("unknown joint {b:?} in virtual bone")))?;
            pairs.push((ia, ib));
        }
        let mut config = VirtualBoneConfig::custom(VirtualConfigName::Custom, &pairs, &topology)?;
        if topology == default_topology() {
            for name in VirtualConfigName::BUILT_IN {
                if make_virtual_config(name, &topology)?.pairs == config.pairs {
                    config.name = name;
                    break;
                }
            }
        }
        Ok(BoneSet::new(topology, config))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
