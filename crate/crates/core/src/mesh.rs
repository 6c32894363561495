//! Structured P1 triangulations of a rectangle.

use std::collections::BTreeSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("invalid boundary selector: {0}")]
    InvalidSelector(String),
    #[error("invalid mesh dimensions: {0}")]
    InvalidDimensions(String),
    #[error("element {element} has non-positive signed area {area:e}")]
    DegenerateElement { element: usize, area: f64 },
    #[error("field length {got} does not match expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// A side of the rectangle `[0, Lx] x [0, Ly]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];
}

/// Per-node `K`-vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalField<const K: usize>(pub Vec<[f64; K]>);

/// Piecewise-constant per-element `K`-vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementField<const K: usize>(pub Vec<[f64; K]>);

#[derive(Clone, Debug)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    gamma0_facets: Vec<[usize; 2]>,
    gamma1_facets: Vec<[usize; 2]>,
    element_areas: Vec<f64>,
    /// Constant gradients of the three P1 basis functions on each element.
    shape_gradients: Vec<[[f64; 2]; 3]>,
    /// For each node, the adjacent elements and their area weights (summing to one).
    patches: Vec<Vec<(usize, f64)>>,
    /// Lumped nodal areas: a third of the area of every adjacent element.
    nodal_areas: Vec<f64>,
    dirichlet: Vec<bool>,
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh {
    /// Builds a mesh from raw connectivity, tagging the given boundary edges.
    pub fn from_parts(
        nodes: Vec<[f64; 2]>,
        elements: Vec<[usize; 3]>,
        gamma0_facets: Vec<[usize; 2]>,
        gamma1_facets: Vec<[usize; 2]>,
    ) -> Result<Self, MeshError> {
        let key = |e: &[usize; 2]| (e[0].min(e[1]), e[0].max(e[1]));
        let g0: BTreeSet<_> = gamma0_facets.iter().map(key).collect();
        if gamma1_facets.iter().any(|e| g0.contains(&key(e))) {
            return Err(MeshError::InvalidSelector("Dirichlet and Neumann facets overlap".into()));
        }
        if gamma0_facets.is_empty() {
            return Err(MeshError::InvalidSelector("Dirichlet boundary must be non-empty".into()));
        }

        let mut element_areas = Vec::with_capacity(elements.len());
        let mut shape_gradients = Vec::with_capacity(elements.len());
        for (k, el) in elements.iter().enumerate() {
            let [p, q, r] = el.map(|i| nodes[i]);
            let area = signed_area(p, q, r);
            if !(area > 0.0) {
                return Err(MeshError::DegenerateElement { element: k, area });
            }
            // grad phi_i = perp(opposite edge) / (2 area)
            let grads = [
                [(q[1] - r[1]) / (2.0 * area), (r[0] - q[0]) / (2.0 * area)],
                [(r[1] - p[1]) / (2.0 * area), (p[0] - r[0]) / (2.0 * area)],
                [(p[1] - q[1]) / (2.0 * area), (q[0] - p[0]) / (2.0 * area)],
            ];
            element_areas.push(area);
            shape_gradients.push(grads);
        }

        let mut edge_count = std::collections::BTreeMap::new();
        for el in &elements {
            for (a, b) in [(el[0], el[1]), (el[1], el[2]), (el[2], el[0])] {
                *edge_count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        for e in gamma0_facets.iter().chain(&gamma1_facets) {
            if edge_count.get(&key(e)) != Some(&1) {
                return Err(MeshError::InvalidSelector(format!("facet {e:?} is not a boundary edge")));
            }
        }

        let mut patches = vec![Vec::new(); nodes.len()];
        let mut nodal_areas = vec![0.0; nodes.len()];
        for (k, el) in elements.iter().enumerate() {
            for &i in el {
                patches[i].push((k, element_areas[k]));
                nodal_areas[i] += element_areas[k] / 3.0;
            }
        }
        for patch in patches.iter_mut() {
            let total: f64 = patch.iter().map(|(_, a)| a).sum();
            for (_, w) in patch.iter_mut() {
                *w /= total;
            }
        }

        let mut dirichlet = vec![false; nodes.len()];
        for e in &gamma0_facets {
            dirichlet[e[0]] = true;
            dirichlet[e[1]] = true;
        }

        Ok(Mesh {
            nodes,
            elements,
            gamma0_facets,
            gamma1_facets,
            element_areas,
            shape_gradients,
            patches,
            nodal_areas,
            dirichlet,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn element_areas(&self) -> &[f64] {
        &self.element_areas
    }

    pub fn shape_gradients(&self) -> &[[[f64; 2]; 3]] {
        &self.shape_gradients
    }

    pub fn gamma0_facets(&self) -> &[[usize; 2]] {
        &self.gamma0_facets
    }

    pub fn gamma1_facets(&self) -> &[[usize; 2]] {
        &self.gamma1_facets
    }

    /// Adjacent elements of each node with normalized area weights.
    pub fn patches(&self) -> &[Vec<(usize, f64)>] {
        &self.patches
    }

    /// Lumped (vertex-quadrature) area of each node; sums to the mesh area.
    pub fn nodal_areas(&self) -> &[f64] {
        &self.nodal_areas
    }

    /// Whether the node lies on the Dirichlet boundary.
    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.dirichlet[node]
    }

    pub fn area(&self) -> f64 {
        self.element_areas.iter().sum()
    }

    fn check_len(&self, expected: usize, got: usize) -> Result<(), MeshError> {
        if expected != got {
            return Err(MeshError::LengthMismatch { expected, got });
        }
        Ok(())
    }

    /// Per-element gradient of a P1 nodal field; row `r` of the result is `∇u_r`.
    pub fn element_gradient<const K: usize>(&self, u: &NodalField<K>) -> Result<Vec<[[f64; 2]; K]>, MeshError> {
        self.check_len(self.num_nodes(), u.0.len())?;
        Ok(self
            .elements
            .iter()
            .zip(&self.shape_gradients)
            .map(|(el, grads)| {
                let mut g = [[0.0; 2]; K];
                for (a, &node) in el.iter().enumerate() {
                    for (r, gr) in g.iter_mut().enumerate() {
                        gr[0] += u.0[node][r] * grads[a][0];
                        gr[1] += u.0[node][r] * grads[a][1];
                    }
                }
                g
            })
            .collect())
    }

    /// Area-weighted nodal average of a piecewise-constant field.
    pub fn recover_nodal<const K: usize>(&self, e: &ElementField<K>) -> Result<NodalField<K>, MeshError> {
        self.check_len(self.num_elements(), e.0.len())?;
        Ok(NodalField(
            self.patches
                .iter()
                .map(|patch| {
                    let mut v = [0.0; K];
                    for &(k, w) in patch {
                        for r in 0..K {
                            v[r] += w * e.0[k][r];
                        }
                    }
                    v
                })
                .collect(),
        ))
    }

    /// One-point quadrature of a piecewise-constant scalar field.
    pub fn integrate(&self, e: &ElementField<1>) -> Result<f64, MeshError> {
        self.check_len(self.num_elements(), e.0.len())?;
        Ok(self.element_areas.iter().zip(&e.0).map(|(a, v)| a * v[0]).sum())
    }

    /// Edge trapezoid rule for `∫ u · w dS` over the given facets; `w` is
    /// given per facet as values at the two endpoints.
    pub fn surface_integrate<const K: usize>(
        &self,
        facets: &[[usize; 2]],
        u: &NodalField<K>,
        w: &[[[f64; K]; 2]],
    ) -> Result<f64, MeshError> {
        self.check_len(self.num_nodes(), u.0.len())?;
        self.check_len(facets.len(), w.len())?;
        let dot = |a: &[f64; K], b: &[f64; K]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        Ok(facets
            .iter()
            .zip(w)
            .map(|(f, wf)| {
                let len = self.edge_length(f);
                len * 0.5 * (dot(&u.0[f[0]], &wf[0]) + dot(&u.0[f[1]], &wf[1]))
            })
            .sum())
    }

    pub fn edge_length(&self, f: &[usize; 2]) -> f64 {
        let (p, q) = (self.nodes[f[0]], self.nodes[f[1]]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    /// Plain-text node/element dump (`id x y`, then `id n0 n1 n2`).
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# nodes: id x y")?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{i} {:e} {:e}", p[0], p[1])?;
        }
        writeln!(w, "# elements: id n0 n1 n2")?;
        for (k, el) in self.elements.iter().enumerate() {
            writeln!(w, "{k} {} {} {}", el[0], el[1], el[2])?;
        }
        Ok(())
    }
}

/// Structured triangulation of `[0, lx] x [0, ly]` with each cell split along
/// its lower-left to upper-right diagonal.
pub fn build_rect_mesh(
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    gamma0: &[Side],
    gamma1: &[Side],
) -> Result<Mesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::InvalidDimensions(format!("nx and ny must be >= 1 (got {nx}, {ny})")));
    }
    if !(lx > 0.0 && ly > 0.0) || !lx.is_finite() || !ly.is_finite() {
        return Err(MeshError::InvalidDimensions(format!("lx and ly must be > 0 (got {lx}, {ly})")));
    }
    if let Some(s) = gamma0.iter().find(|s| gamma1.contains(s)) {
        return Err(MeshError::InvalidSelector(format!("side {s:?} selected for both boundaries")));
    }
    if gamma0.is_empty() {
        return Err(MeshError::InvalidSelector("Dirichlet boundary must be non-empty".into()));
    }

    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64]);
        }
    }
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            elements.push([n00, n10, n11]);
            elements.push([n00, n11, n01]);
        }
    }

    let side_edges = |side: Side| -> Vec<[usize; 2]> {
        match side {
            Side::Bottom => (0..nx).map(|i| [id(i, 0), id(i + 1, 0)]).collect(),
            Side::Top => (0..nx).map(|i| [id(i + 1, ny), id(i, ny)]).collect(),
            Side::Left => (0..ny).map(|j| [id(0, j + 1), id(0, j)]).collect(),
            Side::Right => (0..ny).map(|j| [id(nx, j), id(nx, j + 1)]).collect(),
        }
    };
    let collect = |sides: &[Side]| -> Vec<[usize; 2]> {
        let set: BTreeSet<Side> = sides.iter().copied().collect();
        set.into_iter().flat_map(side_edges).collect()
    };
    Mesh::from_parts(nodes, elements, collect(gamma0), collect(gamma1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(nx: usize, ny: usize) -> Mesh {
        build_rect_mesh(nx, ny, 1.0, 1.0, &[Side::Left], &[Side::Right]).unwrap()
    }

    #[test]
    fn nodal_areas_sum_to_area() {
        let m = build_rect_mesh(3, 5, 2.0, 1.5, &[Side::Left], &[]).unwrap();
        let total: f64 = m.nodal_areas().iter().sum();
        assert!((total - 3.0).abs() < 1e-14);
        assert!(m.nodal_areas().iter().all(|&a| a > 0.0));
    }

    #[test]
    fn counts_and_area() {
        let m = unit(1, 1);
        assert_eq!((m.num_elements(), m.num_nodes()), (2, 4));
        assert!((m.area() - 1.0).abs() < 1e-15);

        let m = build_rect_mesh(2, 3, 1.0, 1.0, &[Side::Left], &[]).unwrap();
        assert_eq!((m.num_elements(), m.num_nodes()), (12, 12));

        let m = build_rect_mesh(7, 5, 2.3, 0.7, &[Side::Bottom], &[Side::Top, Side::Right]).unwrap();
        assert!((m.area() - 2.3 * 0.7).abs() < 1e-12);
        assert!(m.element_areas().iter().all(|a| *a > 0.0));
    }

    #[test]
    fn selectors_must_be_disjoint() {
        let err = build_rect_mesh(2, 2, 1.0, 1.0, &[Side::Left], &[Side::Left, Side::Top]).unwrap_err();
        assert!(matches!(err, MeshError::InvalidSelector(_)));
        assert!(build_rect_mesh(2, 2, 1.0, 1.0, &[], &[Side::Top]).is_err());
        assert!(build_rect_mesh(2, 2, -1.0, 1.0, &[Side::Left], &[]).is_err());
    }

    #[test]
    fn facets_lie_on_boundary() {
        let m = build_rect_mesh(4, 3, 2.0, 1.0, &[Side::Left, Side::Bottom], &[Side::Right]).unwrap();
        for f in m.gamma0_facets() {
            let [p, q] = f.map(|i| m.nodes()[i]);
            assert!((p[0] == 0.0 && q[0] == 0.0) || (p[1] == 0.0 && q[1] == 0.0));
        }
        for f in m.gamma1_facets() {
            assert!(f.iter().all(|&i| m.nodes()[i][0] == 2.0));
        }
        assert_eq!(m.gamma0_facets().len(), 3 + 4);
        let dirichlet = (0..m.num_nodes()).filter(|&i| m.is_dirichlet(i)).count();
        assert_eq!(dirichlet, 4 + 5 - 1);
    }

    #[test]
    fn gradient_exact_on_affine_fields() {
        let m = build_rect_mesh(3, 4, 1.5, 1.0, &[Side::Left], &[]).unwrap();
        let c = NodalField(vec![[2.5, -1.0]; m.num_nodes()]);
        for g in m.element_gradient(&c).unwrap() {
            assert!(g.iter().flatten().all(|v| v.abs() < 1e-14));
        }
        let id = NodalField(m.nodes().to_vec());
        for g in m.element_gradient(&id).unwrap() {
            assert!((g[0][0] - 1.0).abs() < 1e-14 && g[0][1].abs() < 1e-14);
            assert!(g[1][0].abs() < 1e-14 && (g[1][1] - 1.0).abs() < 1e-14);
        }
        let u = NodalField(m.nodes().iter().map(|p| [2.0 * p[0] + p[1], p[0]]).collect());
        for g in m.element_gradient(&u).unwrap() {
            let expect = [[2.0, 1.0], [1.0, 0.0]];
            for r in 0..2 {
                for c in 0..2 {
                    assert!((g[r][c] - expect[r][c]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn recovery_partition_of_unity() {
        let m = unit(5, 3);
        let e = ElementField(vec![[0.7, -3.0]; m.num_elements()]);
        let n = m.recover_nodal(&e).unwrap();
        assert!(n.0.iter().all(|v| *v == [0.7, -3.0] || (v[0] - 0.7).abs() < 1e-15 && (v[1] + 3.0).abs() < 1e-15));
        for patch in m.patches() {
            assert!((patch.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn recovery_single_element_patch() {
        // corner node 1 (bottom right) of a 1x1 mesh touches only element 0
        let m = unit(1, 1);
        let e = ElementField(vec![[4.0], [-9.0]]);
        let n = m.recover_nodal(&e).unwrap();
        assert_eq!(n.0[1], [4.0]);
        assert_eq!(n.0[2], [-9.0]);
    }

    #[test]
    fn recovered_gradient_converges_at_interior_nodes() {
        // u = x^2: recovered element gradients approach du/dx = 2x
        let mut errors = Vec::new();
        for nx in [4usize, 8, 16, 32] {
            let m = unit(nx, nx);
            let u = NodalField(m.nodes().iter().map(|p| [p[0] * p[0]]).collect());
            let g = m.element_gradient(&u).unwrap();
            let dx = ElementField(g.iter().map(|g| [g[0][0]]).collect());
            let rec = m.recover_nodal(&dx).unwrap();
            let err = m
                .nodes()
                .iter()
                .zip(&rec.0)
                .filter(|(p, _)| p[0] > 1e-12 && p[0] < 1.0 - 1e-12 && p[1] > 1e-12 && p[1] < 1.0 - 1e-12)
                .map(|(p, v)| (v[0] - 2.0 * p[0]).abs())
                .fold(0.0f64, f64::max);
            errors.push(err);
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(w[1] < 1e-12 || order >= 1.0 - 1e-9, "errors {errors:?}");
        }
    }

    #[test]
    fn volume_integration() {
        let m = unit(3, 3);
        assert!((m.integrate(&ElementField(vec![[1.0]; m.num_elements()])).unwrap() - 1.0).abs() < 1e-14);
        let m = build_rect_mesh(4, 2, 2.0, 1.0, &[Side::Left], &[]).unwrap();
        assert!((m.integrate(&ElementField(vec![[3.0]; m.num_elements()])).unwrap() - 6.0).abs() < 1e-13);
        let m = unit(1, 1);
        assert_eq!(m.integrate(&ElementField(vec![[2.0], [6.0]])).unwrap(), 0.5 * 2.0 + 0.5 * 6.0);
        assert!(m.integrate(&ElementField(vec![[2.0]])).is_err());
    }

    #[test]
    fn surface_integration() {
        let m = unit(3, 4);
        let facets = m.gamma1_facets().to_vec();
        let ones = NodalField(vec![[1.0, 0.0]; m.num_nodes()]);
        let w = vec![[[1.0, 0.0]; 2]; facets.len()];
        assert!((m.surface_integrate(&facets, &ones, &w).unwrap() - 1.0).abs() < 1e-14);
        let zero = vec![[[0.0, 0.0]; 2]; facets.len()];
        assert_eq!(m.surface_integrate(&facets, &ones, &zero).unwrap(), 0.0);
        // u_x = 1 + 3y on the right edge: exact integral 1 + 3/2
        let lin = NodalField(m.nodes().iter().map(|p| [1.0 + 3.0 * p[1], 0.0]).collect());
        assert!((m.surface_integrate(&facets, &lin, &w).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn dump_format() {
        let m = unit(1, 1);
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("1 1e0 0e0"));
        assert!(s.lines().any(|l| l == "0 0 1 3"));
    }
}
