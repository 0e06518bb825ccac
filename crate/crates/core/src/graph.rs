//! Heterogeneous multi-channel graphs over residues and ligand atoms.
//!
//! Node order is canonical: chains in input order, residues in sequence
//! order, ligand atoms last. Edge lists are sorted by `(src, dst)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structio::{ComplexRecord, Element, Entity, ResidueType, MAX_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    SeqMinus2,
    SeqMinus1,
    SeqPlus1,
    SeqPlus2,
    SelfLoop,
    Spatial,
}

impl RelationKind {
    pub const COUNT: usize = 6;
    pub const ALL: [RelationKind; 6] = [
        Self::SeqMinus2,
        Self::SeqMinus1,
        Self::SeqPlus1,
        Self::SeqPlus2,
        Self::SelfLoop,
        Self::Spatial,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Sequence offset `dst - src` of a sequential kind.
    pub fn offset(self) -> Option<isize> {
        match self {
            Self::SeqMinus2 => Some(-2),
            Self::SeqMinus1 => Some(-1),
            Self::SeqPlus1 => Some(1),
            Self::SeqPlus2 => Some(2),
            Self::SelfLoop | Self::Spatial => None,
        }
    }

    pub fn from_offset(offset: isize) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.offset() == Some(offset))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SeqMinus2 => "seq_minus2",
            Self::SeqMinus1 => "seq_minus1",
            Self::SeqPlus1 => "seq_plus1",
            Self::SeqPlus2 => "seq_plus2",
            Self::SelfLoop => "self_loop",
            Self::Spatial => "spatial",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    #[default]
    FullAtom,
    Calpha,
}

impl Geometry {
    pub fn name(self) -> &'static str {
        match self {
            Self::FullAtom => "full_atom",
            Self::Calpha => "calpha",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full_atom" => Ok(Self::FullAtom),
            "calpha" => Ok(Self::Calpha),
            _ => Err(format!("unknown geometry {s:?} (expected full_atom or calpha)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialRule {
    /// Minimum inter-atom distance at most `r` Å.
    Radius(f64),
    /// Symmetrised k nearest neighbours on node centroids.
    Knn(usize),
}

impl Default for SpatialRule {
    fn default() -> Self {
        Self::Radius(4.5)
    }
}

impl SpatialRule {
    /// Parses `radius:4.5` or `knn:10`.
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let (kind, value) = s.split_once(':').ok_or_else(|| format!("expected radius:R or knn:K, got {s:?}"))?;
        match kind {
            "radius" => value
                .parse::<f64>()
                .ok()
                .filter(|r| r.is_finite() && *r >= 0.0)
                .map(Self::Radius)
                .ok_or_else(|| format!("bad radius {value:?}")),
            "knn" => value
                .parse::<usize>()
                .ok()
                .filter(|k| *k > 0)
                .map(Self::Knn)
                .ok_or_else(|| format!("bad k {value:?}")),
            _ => Err(format!("unknown spatial rule {kind:?}")),
        }
    }
}

impl fmt::Display for SpatialRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Radius(r) => write!(f, "radius:{r}"),
            Self::Knn(k) => write!(f, "knn:{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub geometry: Geometry,
    pub spatial: SpatialRule,
    pub include_ligand: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::FullAtom,
            spatial: SpatialRule::default(),
            include_ligand: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Residue {
        residue_type: ResidueType,
        chain_id: String,
        /// Position within the chain after any residue drops.
        position: usize,
    },
    LigandAtom {
        element: Element,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    #[serde(flatten)]
    pub kind: NodeKind,
    pub entity: Entity,
    /// Occupied channels, in canonical atom order.
    pub coords: Vec<[f64; 3]>,
    pub channel_elements: Vec<Element>,
}

impl GraphNode {
    pub fn channels(&self) -> usize {
        self.coords.len()
    }

    pub fn chain_id(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Residue { chain_id, .. } => Some(chain_id),
            NodeKind::LigandAtom { .. } => None,
        }
    }

    pub fn is_residue(&self) -> bool {
        matches!(self.kind, NodeKind::Residue { .. })
    }

    /// Binary channel mask of length [`MAX_CHANNELS`].
    pub fn channel_mask(&self) -> [bool; MAX_CHANNELS] {
        let mut m = [false; MAX_CHANNELS];
        m[..self.channels()].fill(true);
        m
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.channels() as f64;
        let mut c = [0.0; 3];
        for p in &self.coords {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub complex_id: String,
    pub nodes: Vec<GraphNode>,
    /// Directed `(src, dst)` pairs per relation kind, indexed by
    /// [`RelationKind::index`].
    pub edges: Vec<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn min_dist2(a: &GraphNode, b: &GraphNode) -> f64 {
    let mut best = f64::INFINITY;
    for p in &a.coords {
        for q in &b.coords {
            best = best.min(dist2(p, q));
        }
    }
    best
}

fn radius_edges(nodes: &[GraphNode], r: f64) -> Vec<(usize, usize)> {
    // A node's atoms lie within `extent` of its centroid, so pairs whose
    // centroids are further apart than r + both extents cannot connect.
    let centroids: Vec<[f64; 3]> = nodes.iter().map(GraphNode::centroid).collect();
    let extents: Vec<f64> = nodes
        .iter()
        .zip(&centroids)
        .map(|(n, c)| n.coords.iter().map(|p| dist2(p, c)).fold(0.0, f64::max).sqrt())
        .collect();
    let r2 = r * r;
    let mut pairs: Vec<(usize, usize)> = (0..nodes.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (centroids, extents) = (&centroids, &extents);
            (i + 1..nodes.len()).filter_map(move |j| {
                let reach = r + extents[i] + extents[j];
                if dist2(&centroids[i], &centroids[j]) > reach * reach {
                    return None;
                }
                (min_dist2(&nodes[i], &nodes[j]) <= r2).then_some((i, j))
            })
        })
        .collect();
    let reversed: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
    pairs.extend(reversed);
    pairs
}

fn knn_edges(nodes: &[GraphNode], k: usize) -> Vec<(usize, usize)> {
    let centroids: Vec<[f64; 3]> = nodes.iter().map(GraphNode::centroid).collect();
    let per_node: Vec<Vec<usize>> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..nodes.len())
                .filter(|&j| j != i)
                .map(|j| (dist2(&centroids[i], &centroids[j]), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    let mut set = BTreeSet::new();
    for (i, nbrs) in per_node.iter().enumerate() {
        for &j in nbrs {
            set.insert((i, j));
            set.insert((j, i));
        }
    }
    set.into_iter().collect()
}

/// Builds the graph of `rec` under `cfg`.
pub fn build_graph(rec: &ComplexRecord, cfg: &GraphConfig) -> Result<HeteroGraph> {
    let mut nodes = Vec::new();
    let mut warnings = Vec::new();
    for chain in &rec.chains {
        let entity = rec.partition.get(&chain.chain_id).copied().unwrap_or(Entity::Receptor);
        let mut position = 0;
        for (k, res) in chain.residues.iter().enumerate() {
            let atoms: Vec<_> = match cfg.geometry {
                Geometry::FullAtom => res.atoms.iter().collect(),
                Geometry::Calpha => match res.atom("CA") {
                    Some(ca) => vec![ca],
                    None => {
                        warnings.push(format!("chain {} residue {k}: no CA atom, dropped", chain.chain_id));
                        continue;
                    }
                },
            };
            if atoms.is_empty() || atoms.len() > MAX_CHANNELS {
                return Err(Error::input(format!(
                    "chain {} residue {k}: {} atoms (expected 1..={MAX_CHANNELS})",
                    chain.chain_id,
                    atoms.len()
                )));
            }
            nodes.push(GraphNode {
                kind: NodeKind::Residue {
                    residue_type: res.kind,
                    chain_id: chain.chain_id.clone(),
                    position,
                },
                entity,
                coords: atoms.iter().map(|a| a.xyz).collect(),
                channel_elements: atoms.iter().map(|a| a.element).collect(),
            });
            position += 1;
        }
    }
    if cfg.include_ligand {
        for atom in &rec.ligand_atoms {
            nodes.push(GraphNode {
                kind: NodeKind::LigandAtom { element: atom.element },
                entity: Entity::LigandSide,
                coords: vec![atom.xyz],
                channel_elements: vec![atom.element],
            });
        }
    }
    if nodes.is_empty() {
        return Err(Error::input(format!("complex {} yields no graph nodes", rec.complex_id)));
    }
    for w in &warnings {
        log::warn!("{}: {w}", rec.complex_id);
    }

    let mut edges = vec![Vec::new(); RelationKind::COUNT];
    edges[RelationKind::SelfLoop.index()] = (0..nodes.len()).map(|i| (i, i)).collect();
    let mut start = 0;
    while start < nodes.len() {
        let Some(chain) = nodes[start].chain_id() else {
            break;
        };
        let end = start + nodes[start..].iter().take_while(|n| n.chain_id() == Some(chain)).count();
        for src in start..end {
            for dst in start..end {
                if let Some(kind) = RelationKind::from_offset(dst as isize - src as isize) {
                    edges[kind.index()].push((src, dst));
                }
            }
        }
        start = end;
    }
    edges[RelationKind::Spatial.index()] = match cfg.spatial {
        SpatialRule::Radius(r) => radius_edges(&nodes, r),
        SpatialRule::Knn(k) => knn_edges(&nodes, k),
    };
    for list in &mut edges {
        list.sort_unstable();
    }
    Ok(HeteroGraph {
        complex_id: rec.complex_id.clone(),
        nodes,
        edges,
        warnings,
    })
}

impl HeteroGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges_of(&self, kind: RelationKind) -> &[(usize, usize)] {
        &self.edges[kind.index()]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Residue node indices grouped by chain; ligand atoms belong to none.
    pub fn chain_masks(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(c) = n.chain_id() {
                out.entry(c.to_string()).or_default().push(i);
            }
        }
        out
    }

    /// Coordinates padded to `[n, MAX_CHANNELS, 3]`, row-major.
    pub fn padded_coords(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * MAX_CHANNELS * 3];
        for (i, n) in self.nodes.iter().enumerate() {
            for (c, p) in n.coords.iter().enumerate() {
                out[(i * MAX_CHANNELS + c) * 3..][..3].copy_from_slice(p);
            }
        }
        out
    }

    /// Channel masks flattened to `[n * MAX_CHANNELS]`.
    pub fn padded_mask(&self) -> Vec<bool> {
        self.nodes.iter().flat_map(|n| n.channel_mask()).collect()
    }

    pub fn channel_counts(&self) -> Vec<usize> {
        self.nodes.iter().map(GraphNode::channels).collect()
    }

    /// Same graph with every coordinate mapped through `f`; edges untouched.
    pub fn map_coords(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> HeteroGraph {
        let mut g = self.clone();
        for n in &mut g.nodes {
            for p in &mut n.coords {
                *p = f(*p);
            }
        }
        g
    }

    /// Checks every structural invariant; an empty list means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.len();
        if n == 0 {
            v.push("graph has no nodes".into());
        }
        if self.edges.len() != RelationKind::COUNT {
            v.push(format!("expected {} edge lists, found {}", RelationKind::COUNT, self.edges.len()));
            return v;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let c = node.channels();
            let ok = match node.kind {
                NodeKind::Residue { .. } => (1..=MAX_CHANNELS).contains(&c),
                NodeKind::LigandAtom { .. } => c == 1,
            };
            if !ok {
                v.push(format!("node {i}: {c} channels"));
            }
            if node.channel_elements.len() != c {
                v.push(format!("node {i}: {} channel elements for {c} channels", node.channel_elements.len()));
            }
            if node.coords.iter().flatten().any(|x| !x.is_finite()) {
                v.push(format!("node {i}: non-finite coordinates"));
            }
        }
        for kind in RelationKind::ALL {
            let list = self.edges_of(kind);
            let set: BTreeSet<(usize, usize)> = list.iter().copied().collect();
            if set.len() != list.len() {
                v.push(format!("{kind}: duplicate edges"));
            }
            if let Some(&(s, d)) = list.iter().find(|(s, d)| *s >= n || *d >= n) {
                v.push(format!("{kind}: edge ({s}, {d}) out of range"));
                continue;
            }
            match kind {
                RelationKind::SelfLoop => {
                    let expected: BTreeSet<_> = (0..n).map(|i| (i, i)).collect();
                    if set != expected {
                        v.push(format!(
                            "self_loop: {} missing, {} extra",
                            expected.difference(&set).count(),
                            set.difference(&expected).count()
                        ));
                    }
                }
                RelationKind::Spatial => {
                    if let Some(&(s, d)) = set.iter().find(|&&(s, d)| !set.contains(&(d, s))) {
                        v.push(format!("spatial: edge ({s}, {d}) has no reverse"));
                    }
                    if set.iter().any(|(s, d)| s == d) {
                        v.push("spatial: contains a self pair".into());
                    }
                }
                _ => {
                    let offset = kind.offset().expect("sequential kind");
                    let mut expected = BTreeSet::new();
                    for (dst, node) in self.nodes.iter().enumerate() {
                        let NodeKind::Residue { position, .. } = node.kind else { continue };
                        let src = dst as isize - offset;
                        if src < 0 || src as usize >= n || position as isize - offset < 0 {
                            continue;
                        }
                        let src = src as usize;
                        if self.nodes[src].chain_id() == node.chain_id() {
                            expected.insert((src, dst));
                        }
                    }
                    if set != expected {
                        v.push(format!(
                            "{kind}: {} missing, {} unexpected",
                            expected.difference(&set).count(),
                            set.difference(&expected).count()
                        ));
                    }
                }
            }
        }
        v
    }

    pub fn to_json(&self) -> String {
        crate::structio::to_canonical_string(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structio::{Atom, Chain, LigandAtom, Residue};

    fn res(kind: ResidueType, atoms: &[(&str, [f64; 3])]) -> Residue {
        Residue {
            kind,
            atoms: atoms
                .iter()
                .map(|(name, xyz)| Atom {
                    name: name.to_string(),
                    element: Element::from_symbol(&name[..1]).unwrap(),
                    xyz: *xyz,
                })
                .collect(),
        }
    }

    fn record(chains: Vec<Chain>, ligand: Vec<[f64; 3]>) -> ComplexRecord {
        ComplexRecord {
            complex_id: "t".into(),
            partition: ComplexRecord::default_partition(&chains, !ligand.is_empty()),
            chains,
            ligand_atoms: ligand
                .into_iter()
                .map(|xyz| LigandAtom {
                    element: Element::C,
                    xyz,
                })
                .collect(),
        }
    }

    fn straight_chain(id: &str, n: usize, spacing: f64, y: f64) -> Chain {
        Chain {
            chain_id: id.into(),
            uniprot_id: None,
            residues: (0..n)
                .map(|i| res(ResidueType::Gly, &[("CA", [spacing * i as f64, y, 0.0])]))
                .collect(),
        }
    }

    #[test]
    fn three_residue_chain_enumeration() {
        let rec = record(vec![straight_chain("A", 3, 10.0, 0.0)], vec![]);
        let g = build_graph(&rec, &GraphConfig::default()).unwrap();
        // 0-based indices of the 1-based fixture {(1,2),(2,3)} etc.
        assert_eq!(g.edges_of(RelationKind::SeqPlus1), &[(0, 1), (1, 2)]);
        assert_eq!(g.edges_of(RelationKind::SeqMinus1), &[(1, 0), (2, 1)]);
        assert_eq!(g.edges_of(RelationKind::SeqPlus2), &[(0, 2)]);
        assert_eq!(g.edges_of(RelationKind::SeqMinus2), &[(2, 0)]);
        assert_eq!(g.edges_of(RelationKind::SelfLoop).len(), 3);
        assert!(g.edges_of(RelationKind::Spatial).is_empty());
        assert!(g.validate().is_empty());
    }

    #[test]
    fn single_residue_has_only_its_self_loop() {
        let rec = record(vec![straight_chain("A", 1, 1.0, 0.0)], vec![]);
        let g = build_graph(&rec, &GraphConfig::default()).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges_of(RelationKind::SelfLoop), &[(0, 0)]);
    }

    #[test]
    fn two_ligand_atoms() {
        let rec = record(vec![], vec![[0.0; 3], [3.0, 0.0, 0.0]]);
        let g = build_graph(&rec, &GraphConfig::default()).unwrap();
        assert_eq!(g.edges_of(RelationKind::Spatial), &[(0, 1), (1, 0)]);
        assert_eq!(g.edges_of(RelationKind::SelfLoop).len(), 2);
        assert_eq!(g.edge_count(), 4);
        assert!(g.chain_masks().is_empty());
    }

    #[test]
    fn radius_uses_minimum_atom_distance() {
        // Centroids 6 Å apart but side-chain tips 4 Å apart.
        let a = res(ResidueType::Ser, &[("CA", [0.0, 0.0, 0.0]), ("CB", [1.0, 0.0, 0.0])]);
        let b = res(ResidueType::Ser, &[("CA", [7.0, 0.0, 0.0]), ("CB", [5.0, 0.0, 0.0])]);
        let chain = |id: &str, r: Residue| Chain {
            chain_id: id.into(),
            uniprot_id: None,
            residues: vec![r],
        };
        let rec = record(vec![chain("A", a), chain("B", b)], vec![]);
        let g = build_graph(&rec, &GraphConfig::default()).unwrap();
        assert_eq!(g.edges_of(RelationKind::Spatial), &[(0, 1), (1, 0)]);
        let cal = GraphConfig {
            geometry: Geometry::Calpha,
            ..Default::default()
        };
        let g = build_graph(&rec, &cal).unwrap();
        assert!(g.edges_of(RelationKind::Spatial).is_empty());
        assert!(g.nodes.iter().all(|n| n.channels() == 1));
    }

    #[test]
    fn knn_is_symmetric() {
        let rec = record(vec![straight_chain("A", 6, 3.0, 0.0)], vec![[1.0, 5.0, 0.0]]);
        let cfg = GraphConfig {
            spatial: SpatialRule::Knn(2),
            ..Default::default()
        };
        let g = build_graph(&rec, &cfg).unwrap();
        assert!(g.validate().is_empty(), "{:?}", g.validate());
        assert!(g.edges_of(RelationKind::Spatial).contains(&(1, 2)));
    }

    #[test]
    fn chain_masks_partition_residues() {
        let rec = record(
            vec![straight_chain("A", 3, 3.0, 0.0), straight_chain("B", 3, 3.0, 20.0)],
            vec![[0.0, 40.0, 0.0]],
        );
        let g = build_graph(&rec, &GraphConfig::default()).unwrap();
        let masks = g.chain_masks();
        assert_eq!(masks["A"], vec![0, 1, 2]);
        assert_eq!(masks["B"], vec![3, 4, 5]);
        let covered: usize = masks.values().map(Vec::len).sum::<usize>() + rec.ligand_atoms.len();
        assert_eq!(covered, g.len());
        // no sequential edges cross chains
        assert!(!g.edges_of(RelationKind::SeqPlus1).contains(&(2, 3)));
        assert!(g.validate().is_empty());
    }

    #[test]
    fn validation_flags_broken_graphs() {
        let rec = record(vec![straight_chain("A", 4, 3.0, 0.0)], vec![]);
        let g = build_graph(&rec, &GraphConfig::default()).unwrap();
        let mut broken = g.clone();
        broken.edges[RelationKind::SelfLoop.index()].remove(0);
        assert_eq!(broken.validate().len(), 1);
        let mut broken = g.clone();
        broken.edges[RelationKind::Spatial.index()].push((0, 3));
        assert_eq!(broken.validate().len(), 1, "{:?}", broken.validate());
    }

    #[test]
    fn ligand_can_be_excluded_and_empty_graph_errors() {
        let rec = record(vec![], vec![[0.0; 3]]);
        let cfg = GraphConfig {
            include_ligand: false,
            ..Default::default()
        };
        assert!(build_graph(&rec, &cfg).is_err());
    }
}
