//! Box domains, their uniform-grid discretization and the interaction collar.
//!
//! The grid is indexed by integer lattice coordinates so that every horizon
//! comparison is exact: a pair of nodes interacts when the squared lattice
//! distance is at most `m²`, where `m = horizon / spacing`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Part of the interaction collar where flux measurements are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessibleRegion {
    /// The whole collar.
    All,
    /// Collar nodes beyond one face of the box.
    Face { axis: usize, upper: bool },
}

impl Default for AccessibleRegion {
    fn default() -> Self {
        AccessibleRegion::Face {
            axis: 0,
            upper: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec<T> {
    pub dimension: usize,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub horizon: T,
    pub spacing: T,
    pub accessible: AccessibleRegion,
}

impl<T: Real> DomainSpec<T> {
    /// Unit interval or unit square with the default one-sided accessible region.
    pub fn unit(dimension: usize, spacing: T, horizon: T) -> Self {
        DomainSpec {
            dimension,
            lower: vec![T::zero(); dimension],
            upper: vec![T::one(); dimension],
            horizon,
            spacing,
            accessible: AccessibleRegion::default(),
        }
    }

    pub fn with_accessible(mut self, accessible: AccessibleRegion) -> Self {
        self.accessible = accessible;
        self
    }

    pub fn diameter(&self) -> T {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(T::zero(), |acc, (&a, &b)| acc + (b - a) * (b - a))
            .sqrt()
    }

    /// Number of grid cells per axis and the horizon in cells.
    fn lattice(&self) -> Result<(Vec<i64>, i64)> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::InvalidDomain(format!(
                "dimension must be 1 or 2, got {}",
                self.dimension
            )));
        }
        if self.lower.len() != self.dimension || self.upper.len() != self.dimension {
            return Err(Error::InvalidDomain(
                "box extents must have one entry per dimension".into(),
            ));
        }
        if !(self.spacing > T::zero()) || !(self.horizon > T::zero()) {
            return Err(Error::InvalidDomain(
                "spacing and horizon must be positive".into(),
            ));
        }
        let mut cells = Vec::with_capacity(self.dimension);
        for (axis, (&a, &b)) in self.lower.iter().zip(&self.upper).enumerate() {
            let n = grid_multiple((b - a) / self.spacing).ok_or_else(|| {
                Error::InvalidDomain(format!(
                    "extent of axis {axis} is not an integer multiple of the spacing"
                ))
            })?;
            if n < 2 {
                return Err(Error::InvalidDomain(format!(
                    "axis {axis} must hold at least one interior node"
                )));
            }
            cells.push(n);
        }
        let m = grid_multiple(self.horizon / self.spacing).ok_or_else(|| {
            Error::InvalidDomain("horizon is not an integer multiple of the spacing".into())
        })?;
        if m < 1 {
            return Err(Error::InvalidDomain(
                "horizon must span at least one grid cell".into(),
            ));
        }
        if let AccessibleRegion::Face { axis, .. } = self.accessible {
            if axis >= self.dimension {
                return Err(Error::InvalidDomain(format!(
                    "accessible face axis {axis} out of range"
                )));
            }
        }
        Ok((cells, m))
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice()?;
        if !(self.horizon < self.diameter()) {
            return Err(Error::InvalidDomain(
                "horizon must be smaller than the domain diameter".into(),
            ));
        }
        Ok(())
    }
}

/// Rounds `ratio` to an integer if it is one up to roundoff.
fn grid_multiple<T: Real>(ratio: T) -> Option<i64> {
    let r = ratio.as_f64();
    let n = r.round();
    if (r - n).abs() <= 1e-6 * n.abs().max(1.0) {
        Some(n as i64)
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeLabel {
    Interior,
    Interaction,
    Accessible,
}

impl NodeLabel {
    pub fn is_interior(self) -> bool {
        self == NodeLabel::Interior
    }

    /// True for every node of the interaction collar, accessible or not.
    pub fn is_exterior(self) -> bool {
        !self.is_interior()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeLabel::Interior => "interior",
            NodeLabel::Interaction => "interaction",
            NodeLabel::Accessible => "accessible",
        }
    }
}

/// Lattice offset inside the horizon together with its pair quadrature factor.
///
/// Pairs exactly at the horizon carry factor 1/2 (their cell straddles the
/// horizon sphere); all other in-horizon pairs carry factor 1.
#[derive(Clone, Copy, Debug)]
pub struct StencilOffset<T> {
    pub delta: [i64; 2],
    pub factor: T,
}

/// Discretized `Ω ∪ Ω_I`. Interior nodes occupy indices `0..n_interior`.
#[derive(Clone, Debug)]
pub struct NodeSet<T> {
    dimension: usize,
    spacing: T,
    horizon: T,
    horizon_cells: i64,
    cells: Vec<i64>,
    lower: Vec<T>,
    coords: Vec<[T; 2]>,
    lattice: Vec<[i64; 2]>,
    labels: Vec<NodeLabel>,
    weight: T,
    n_interior: usize,
    lookup: Vec<usize>,
    lookup_shape: [i64; 2],
    accessible: AccessibleRegion,
}

const ABSENT: usize = usize::MAX;

/// Classifies a lattice point. `None` means the point is not stored.
fn classify(
    index: [i64; 2],
    cells: &[i64],
    m: i64,
    accessible: AccessibleRegion,
) -> Option<NodeLabel> {
    let mut gap2 = 0;
    let mut interior = true;
    for (axis, &n) in cells.iter().enumerate() {
        let i = index[axis];
        let gap = (1 - i).max(i - (n - 1)).max(0);
        if gap > 0 {
            interior = false;
        }
        gap2 += gap * gap;
    }
    if interior {
        return Some(NodeLabel::Interior);
    }
    if gap2 > m * m {
        return None;
    }
    let accessible = match accessible {
        AccessibleRegion::All => true,
        AccessibleRegion::Face { axis, upper } => {
            if upper {
                index[axis] >= cells[axis]
            } else {
                index[axis] <= 0
            }
        }
    };
    Some(if accessible {
        NodeLabel::Accessible
    } else {
        NodeLabel::Interaction
    })
}

impl<T: Real> NodeSet<T> {
    /// Realizes the grid of `Ω` and its closed ε-collar.
    pub fn build(spec: &DomainSpec<T>) -> Result<Self> {
        spec.validate()?;
        Self::build_unbounded_horizon(spec)
    }

    /// Same as [`NodeSet::build`] but accepts a horizon at or beyond the domain
    /// diameter, as needed when emulating an infinite interaction range.
    pub fn build_unbounded_horizon(spec: &DomainSpec<T>) -> Result<Self> {
        let (cells, m) = spec.lattice()?;
        let d = spec.dimension;
        let range = |axis: usize| -> (i64, i64) {
            if axis < d {
                (-m, cells[axis] + m)
            } else {
                (0, 0)
            }
        };
        let (lo0, hi0) = range(0);
        let (lo1, hi1) = range(1);

        let mut interior = Vec::new();
        let mut collar = Vec::new();
        for j in lo1..=hi1 {
            for i in lo0..=hi0 {
                let idx = [i, j];
                match classify(idx, &cells, m, spec.accessible) {
                    Some(NodeLabel::Interior) => interior.push((idx, NodeLabel::Interior)),
                    Some(label) => collar.push((idx, label)),
                    None => {}
                }
            }
        }
        if !collar.iter().any(|(_, l)| *l == NodeLabel::Accessible) {
            return Err(Error::EmptyAccessible);
        }

        let n_interior = interior.len();
        let lookup_shape = [hi0 - lo0 + 1, hi1 - lo1 + 1];
        let mut lookup = vec![ABSENT; (lookup_shape[0] * lookup_shape[1]) as usize];
        let mut coords = Vec::with_capacity(n_interior + collar.len());
        let mut lattice = Vec::with_capacity(n_interior + collar.len());
        let mut labels = Vec::with_capacity(n_interior + collar.len());
        for (k, (idx, label)) in interior.into_iter().chain(collar).enumerate() {
            let slot = (idx[0] - lo0) + (idx[1] - lo1) * lookup_shape[0];
            lookup[slot as usize] = k;
            let mut x = [T::zero(); 2];
            for axis in 0..d {
                x[axis] = spec.lower[axis] + spec.spacing * T::lit(idx[axis] as f64);
            }
            coords.push(x);
            lattice.push(idx);
            labels.push(label);
        }

        Ok(NodeSet {
            dimension: d,
            spacing: spec.spacing,
            horizon: spec.horizon,
            horizon_cells: m,
            cells,
            lower: spec.lower.clone(),
            coords,
            lattice,
            labels,
            weight: spec.spacing.powi(d as i32),
            n_interior,
            lookup,
            lookup_shape,
            accessible: spec.accessible,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    /// Horizon measured in grid cells.
    pub fn horizon_cells(&self) -> i64 {
        self.horizon_cells
    }

    /// Grid cells per axis of the box.
    pub fn cells(&self) -> &[i64] {
        &self.cells
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn accessible_region(&self) -> AccessibleRegion {
        self.accessible
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn n_exterior(&self) -> usize {
        self.len() - self.n_interior
    }

    pub fn coord(&self, i: usize) -> &[T] {
        &self.coords[i][..self.dimension]
    }

    pub fn lattice_index(&self, i: usize) -> [i64; 2] {
        self.lattice[i]
    }

    pub fn label(&self, i: usize) -> NodeLabel {
        self.labels[i]
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    /// Quadrature weight `h^d` of node `i`.
    pub fn weight(&self, _i: usize) -> T {
        self.weight
    }

    pub fn uniform_weight(&self) -> T {
        self.weight
    }

    pub fn interior(&self) -> std::ops::Range<usize> {
        0..self.n_interior
    }

    pub fn exterior(&self) -> std::ops::Range<usize> {
        self.n_interior..self.len()
    }

    pub fn accessible(&self) -> impl Iterator<Item = usize> + '_ {
        self.exterior()
            .filter(move |&i| self.labels[i] == NodeLabel::Accessible)
    }

    /// Node stored at a lattice index, if any.
    pub fn find(&self, index: [i64; 2]) -> Option<usize> {
        let m = self.horizon_cells;
        let (i, j) = (index[0] + m, index[1] + if self.dimension > 1 { m } else { 0 });
        if i < 0 || j < 0 || i >= self.lookup_shape[0] || j >= self.lookup_shape[1] {
            return None;
        }
        let k = self.lookup[(i + j * self.lookup_shape[0]) as usize];
        (k != ABSENT).then_some(k)
    }

    /// Lattice offsets within the closed horizon ball, excluding the origin.
    pub fn stencil(&self) -> Vec<StencilOffset<T>> {
        let m = self.horizon_cells;
        let m2 = m * m;
        let range1 = if self.dimension > 1 { -m..=m } else { 0..=0 };
        let mut out = Vec::new();
        for dj in range1 {
            for di in -m..=m {
                let r2 = di * di + dj * dj;
                if r2 == 0 || r2 > m2 {
                    continue;
                }
                let factor = if r2 == m2 { T::lit(0.5) } else { T::one() };
                out.push(StencilOffset {
                    delta: [di, dj],
                    factor,
                });
            }
        }
        out
    }

    /// Writes `x[,y],label,weight` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["node", "x"];
        if self.dimension > 1 {
            header.push("y");
        }
        header.extend(["label", "weight"]);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.coord(i).iter().map(|c| c.as_f64().to_string()));
            rec.push(self.labels[i].as_str().to_string());
            rec.push(self.weight.as_f64().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(nodes: &NodeSet<f64>, label: NodeLabel) -> usize {
        nodes.labels().iter().filter(|&&l| l == label).count()
    }

    #[test]
    fn one_dimensional_two_cell_collar() {
        let spec = DomainSpec::unit(1, 1.0 / 8.0, 2.0 / 8.0).with_accessible(AccessibleRegion::All);
        let nodes = NodeSet::build(&spec).unwrap();
        assert_eq!(nodes.n_interior(), 7);
        assert_eq!(nodes.n_exterior(), 4);
        let mut xs: Vec<f64> = nodes.exterior().map(|i| nodes.coord(i)[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![-0.125, 0.0, 1.0, 1.125]);
    }

    #[test]
    fn single_layer_collar() {
        let spec = DomainSpec::<f64>::unit(1, 0.1, 0.1);
        let nodes = NodeSet::build(&spec).unwrap();
        assert_eq!(nodes.n_exterior(), 2);
        assert_eq!(nodes.accessible().count(), 1);
        let a = nodes.accessible().next().unwrap();
        assert!((nodes.coord(a)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_accessible_is_right_collar() {
        let spec = DomainSpec::unit(1, 1.0 / 8.0, 2.0 / 8.0);
        let nodes = NodeSet::build(&spec).unwrap();
        assert_eq!(count(&nodes, NodeLabel::Accessible), 2);
        assert_eq!(count(&nodes, NodeLabel::Interaction), 2);
        for i in nodes.accessible() {
            assert!(nodes.coord(i)[0] >= 1.0);
        }
    }

    #[test]
    fn rejects_misaligned_horizon() {
        let spec = DomainSpec::unit(1, 0.1, 0.15);
        assert!(matches!(NodeSet::build(&spec), Err(Error::InvalidDomain(_))));
    }

    #[test]
    fn rejects_horizon_beyond_diameter() {
        let spec = DomainSpec::unit(1, 0.125, 1.0);
        assert!(NodeSet::build(&spec).is_err());
        assert!(NodeSet::build_unbounded_horizon(&spec).is_ok());
    }

    #[test]
    fn rejects_bad_dimension_and_face() {
        let spec = DomainSpec::unit(3, 0.25, 0.25);
        assert!(NodeSet::<f64>::build(&spec).is_err());
        let spec = DomainSpec::unit(1, 0.25, 0.25).with_accessible(AccessibleRegion::Face {
            axis: 1,
            upper: false,
        });
        assert!(NodeSet::<f64>::build(&spec).is_err());
    }

    #[test]
    fn two_d_corner_face_selects_collar_strip() {
        let spec = DomainSpec::unit(2, 0.125, 0.125).with_accessible(AccessibleRegion::Face {
            axis: 1,
            upper: false,
        });
        let nodes = NodeSet::build(&spec).unwrap();
        assert_eq!(nodes.n_interior(), 49);
        assert_eq!(nodes.accessible().count(), 7);
        for i in nodes.accessible() {
            assert!(nodes.coord(i)[1] <= 0.0);
        }
    }

    #[test]
    fn find_inverts_lattice_index() {
        let spec = DomainSpec::unit(2, 0.125, 0.25);
        let nodes = NodeSet::<f64>::build(&spec).unwrap();
        for i in 0..nodes.len() {
            assert_eq!(nodes.find(nodes.lattice_index(i)), Some(i));
        }
        assert_eq!(nodes.find([-2, -2]), None);
    }

    #[test]
    fn stencil_marks_horizon_pairs() {
        let spec = DomainSpec::unit(1, 0.125, 0.25);
        let nodes = NodeSet::<f64>::build(&spec).unwrap();
        let s = nodes.stencil();
        assert_eq!(s.len(), 4);
        for o in s {
            let expect = if o.delta[0].abs() == 2 { 0.5 } else { 1.0 };
            assert_eq!(o.factor, expect);
        }
    }

    #[test]
    fn csv_listing_has_one_row_per_node() {
        let spec = DomainSpec::unit(1, 0.25, 0.25);
        let nodes = NodeSet::<f64>::build(&spec).unwrap();
        let mut buf = Vec::new();
        nodes.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), nodes.len() + 1);
        assert!(text.starts_with("node,x,label,weight"));
    }
}
