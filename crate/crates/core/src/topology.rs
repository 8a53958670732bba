//! Conforming multi-patch surfaces: interface and boundary detection, vertex fans and the
//! local reparameterisations (square symmetries plus a vertex rotation) that bring edges
//! and vertices into standard form.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::spline::{bbox_diagonal, TensorSplinePatch};

/// Conforming collection of tensor-product patches sharing one spline space.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPatchSurface {
    pub patches: Vec<TensorSplinePatch>,
}

impl MultiPatchSurface {
    pub fn new(patches: Vec<TensorSplinePatch>) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::Topology("surface without patches".into()));
        }
        let space = &patches[0].space;
        if let Some(i) = patches.iter().position(|p| &p.space != space) {
            return Err(Error::Topology(format!("patch {i} does not share the geometry space of patch 0")));
        }
        for (i, patch) in patches.iter().enumerate() {
            for a in 0..5 {
                for b in 0..5 {
                    let xi = [0.1 + 0.2 * a as f64, 0.1 + 0.2 * b as f64];
                    let jet = patch.eval_jet(xi, 1)?;
                    let cross = jet.d[0].cross(&jet.d[1]).norm();
                    if !(cross > 1e-12 * jet.d[0].norm() * jet.d[1].norm()) {
                        return Err(Error::SingularGeometry(format!("patch {i} is not regular at {xi:?}")));
                    }
                }
            }
        }
        Ok(Self { patches })
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(self.patches.iter().flat_map(|p| p.points.iter()))
    }

    /// Refines every patch into the given univariate space.
    pub fn refine_to(&self, target: &crate::spline::UnivariateSplineSpace) -> Result<Self> {
        Ok(Self { patches: self.patches.iter().map(|p| p.refine_to(target)).collect::<Result<_>>()? })
    }
}

/// Patch side: `U0` is `ξ1 = 0`, `U1` is `ξ1 = 1`, `V0` is `ξ2 = 0`, `V1` is `ξ2 = 1`.
/// `U` sides are parameterised by `ξ2`, `V` sides by `ξ1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    U0 = 0,
    U1 = 1,
    V0 = 2,
    V1 = 3,
}

pub const SIDES: [Side; 4] = [Side::U0, Side::U1, Side::V0, Side::V1];

impl Side {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Parameter point at side parameter `t`.
    pub fn point(self, t: f64) -> [f64; 2] {
        match self {
            Side::U0 => [0.0, t],
            Side::U1 => [1.0, t],
            Side::V0 => [t, 0.0],
            Side::V1 => [t, 1.0],
        }
    }

    /// Corners at side parameters 0 and 1.
    pub fn corners(self) -> [Corner; 2] {
        let p0 = self.point(0.0);
        let p1 = self.point(1.0);
        [Corner::at(p0), Corner::at(p1)]
    }

    /// Control-point table indices along the side in parameter order.
    pub fn table_indices(self, n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .map(|j| match self {
                Side::U0 => (0, j),
                Side::U1 => (n - 1, j),
                Side::V0 => (j, 0),
                Side::V1 => (j, n - 1),
            })
            .collect()
    }

    fn classify(pt: [f64; 2]) -> Side {
        if pt[0] == 0.0 {
            Side::U0
        } else if pt[0] == 1.0 {
            Side::U1
        } else if pt[1] == 0.0 {
            Side::V0
        } else {
            Side::V1
        }
    }
}

/// Patch corner `(cu, cv)` with `cu, cv ∈ {0, 1}`; index `cu + 2 cv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Corner(pub u8);

impl Corner {
    pub fn at(pt: [f64; 2]) -> Corner {
        Corner((pt[0] as u8) + 2 * (pt[1] as u8))
    }

    pub fn param(self) -> [f64; 2] {
        [(self.0 & 1) as f64, (self.0 >> 1) as f64]
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One of the eight symmetries of the unit square, mapping local parameters to the
/// original ones: swap the coordinates, then reflect `x ↦ 1 - x` where flagged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Symmetry {
    pub swap: bool,
    pub flip_u: bool,
    pub flip_v: bool,
}

impl Symmetry {
    pub const IDENTITY: Symmetry = Symmetry { swap: false, flip_u: false, flip_v: false };

    pub fn all() -> impl Iterator<Item = Symmetry> {
        (0..8u8).map(|b| Symmetry { swap: b & 1 != 0, flip_u: b & 2 != 0, flip_v: b & 4 != 0 })
    }

    pub fn rotations() -> impl Iterator<Item = Symmetry> {
        Self::all().filter(|s| s.is_rotation())
    }

    pub fn is_rotation(self) -> bool {
        (self.swap as u8 + self.flip_u as u8 + self.flip_v as u8) % 2 == 0
    }

    /// Original parameters of the local point `(s, t)`.
    pub fn apply(self, local: [f64; 2]) -> [f64; 2] {
        let [a, b] = if self.swap { [local[1], local[0]] } else { local };
        [if self.flip_u { 1.0 - a } else { a }, if self.flip_v { 1.0 - b } else { b }]
    }

    /// Original table index of local coefficient `(i, j)` in an `n × n` table.
    pub fn index(self, i: usize, j: usize, n: usize) -> (usize, usize) {
        let (a, b) = if self.swap { (j, i) } else { (i, j) };
        (if self.flip_u { n - 1 - a } else { a }, if self.flip_v { n - 1 - b } else { b })
    }

    /// `J[x][y] = ∂ orig_x / ∂ local_y`.
    pub fn jacobian(self) -> [[f64; 2]; 2] {
        let su = if self.flip_u { -1.0 } else { 1.0 };
        let sv = if self.flip_v { -1.0 } else { 1.0 };
        if self.swap {
            [[0.0, su], [sv, 0.0]]
        } else {
            [[su, 0.0], [0.0, sv]]
        }
    }

    pub fn compose(self, inner: Symmetry) -> Symmetry {
        // (self ∘ inner)(x) = self(inner(x)); find it by matching the action on corners.
        Symmetry::all()
            .find(|c| {
                [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]].iter().all(|&x| c.apply(x) == self.apply(inner.apply(x)))
            })
            .expect("square symmetries form a group")
    }

    pub fn inverse(self) -> Symmetry {
        Symmetry::all().find(|c| c.compose(self) == Symmetry::IDENTITY).expect("group inverse")
    }

    /// Original side onto which the local side is mapped.
    pub fn image_side(self, local: Side) -> Side {
        Side::classify(self.apply(local.point(0.5)))
    }

    /// The rotation that maps local side `local` onto original side `orig`.
    pub fn rotation_onto(local: Side, orig: Side) -> Symmetry {
        Self::rotations().find(|s| s.image_side(local) == orig).expect("rotations act transitively on sides")
    }

    /// The rotation that maps the local origin onto `corner`.
    pub fn rotation_to_corner(corner: Corner) -> Symmetry {
        Self::rotations().find(|s| Corner::at(s.apply([0.0, 0.0])) == corner).expect("transitive on corners")
    }

    /// Local coefficient table of a function given by its original table.
    pub fn to_local<T: Copy>(self, orig: &[T], n: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = self.index(i, j, n);
                out.push(orig[a * n + b]);
            }
        }
        out
    }

    /// Original coefficient table of a function given by its local table.
    pub fn to_orig<T: Copy + Default>(self, local: &[T], n: usize) -> Vec<T> {
        let mut out = vec![T::default(); n * n];
        for i in 0..n {
            for j in 0..n {
                let (a, b) = self.index(i, j, n);
                out[a * n + b] = local[i * n + j];
            }
        }
        out
    }

    /// The patch reparameterised by this symmetry.
    pub fn transform_patch(self, patch: &TensorSplinePatch) -> TensorSplinePatch {
        TensorSplinePatch { space: patch.space.clone(), points: self.to_local(&patch.points, patch.n()) }
    }
}

/// Interface between side `a.1` of patch `a.0` and side `b.1` of patch `b.0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interface {
    pub a: (usize, Side),
    pub b: (usize, Side),
    /// Side parameterisations run in opposite directions.
    pub reversed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    Interface(Interface),
    Boundary { patch: usize, side: Side },
}

/// A vertex with its fan of `(patch, corner)` pairs in counterclockwise order.
///
/// Fan member `q + 1` lies across the local side `ξ1 = 0` of member `q` in the vertex
/// standard form. Boundary fans start at the patch whose local side `ξ2 = 0` is a
/// boundary edge.
#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub fan: Vec<(usize, Corner)>,
    pub boundary: bool,
    pub point: Vector3<f64>,
}

impl Vertex {
    pub fn valence(&self) -> usize {
        self.fan.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    /// Interfaces first, then boundary edges.
    pub edges: Vec<Edge>,
    pub num_interfaces: usize,
    pub vertices: Vec<Vertex>,
    /// `side_edge[patch][side]` is the edge containing that side.
    pub side_edge: Vec<[usize; 4]>,
    /// `corner_vertex[patch][corner]` is the vertex at that corner.
    pub corner_vertex: Vec<[usize; 4]>,
    pub tol: f64,
}

/// Edge in standard form: `p^(i1)(0, ξ) = p^(i2)(ξ, 0)`; boundary edges have no `i2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeForm {
    pub i1: (usize, Symmetry),
    pub i2: Option<(usize, Symmetry)>,
}

/// Vertex in standard form: every fan patch maps the vertex to its local origin and the
/// rotation takes the common normal to `e3`.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexForm {
    pub vertex: usize,
    pub fan: Vec<(usize, Symmetry)>,
    /// Edge on the local side `ξ2 = 0` of each fan patch.
    pub prev_edge: Vec<usize>,
    /// Edge on the local side `ξ1 = 0` of each fan patch.
    pub next_edge: Vec<usize>,
    pub rotation: Matrix3<f64>,
    pub boundary: bool,
}

fn side_polygon(patch: &TensorSplinePatch, side: Side) -> Vec<Vector3<f64>> {
    side.table_indices(patch.n()).into_iter().map(|(a, b)| patch.point(a, b)).collect()
}

fn polygon_distance(a: &[Vector3<f64>], b: &[Vector3<f64>], reversed: bool) -> f64 {
    let m = a.len();
    (0..m).map(|j| (a[j] - b[if reversed { m - 1 - j } else { j }]).norm()).fold(0.0, f64::max)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Default matching tolerance relative to the surface size.
pub fn default_tolerance(surface: &MultiPatchSurface) -> f64 {
    1e-9 * surface.bbox_diagonal()
}

/// Classifies every patch side, records interface orientations and orders vertex fans.
pub fn build_topology(surface: &MultiPatchSurface, tol: f64) -> Result<Topology> {
    let np = surface.patches.len();
    let polys: Vec<Vec<Vec<Vector3<f64>>>> =
        surface.patches.iter().map(|p| SIDES.iter().map(|&s| side_polygon(p, s)).collect()).collect();
    // Sweep over sides sorted by the x coordinate of their control-polygon centroid.
    let mut keys: Vec<(f64, usize, Side)> = Vec::with_capacity(4 * np);
    for i in 0..np {
        for &s in &SIDES {
            let c: Vector3<f64> = polys[i][s.index()].iter().sum::<Vector3<f64>>() / polys[i][s.index()].len() as f64;
            keys.push((c.x, i, s));
        }
    }
    keys.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut partner: Vec<[Option<(usize, Side, bool)>; 4]> = vec![[None; 4]; np];
    for x in 0..keys.len() {
        let (cx, i, si) = keys[x];
        for &(cy, j, sj) in keys[x + 1..].iter() {
            if cy - cx > tol {
                break;
            }
            if i == j {
                continue;
            }
            let (pa, pb) = (&polys[i][si.index()], &polys[j][sj.index()]);
            let fwd = polygon_distance(pa, pb, false);
            let rev = polygon_distance(pa, pb, true);
            let same_ends = (pa[0] - pb[0]).norm().max((pa[pa.len() - 1] - pb[pb.len() - 1]).norm()) <= tol
                || (pa[0] - pb[pb.len() - 1]).norm().max((pa[pa.len() - 1] - pb[0]).norm()) <= tol;
            if fwd.min(rev) <= tol {
                if partner[i][si.index()].is_some() || partner[j][sj.index()].is_some() {
                    return Err(Error::Unsupported(format!(
                        "side {si:?} of patch {i} matches more than one other side"
                    )));
                }
                let reversed = rev <= tol && fwd > tol;
                partner[i][si.index()] = Some((j, sj, reversed));
                partner[j][sj.index()] = Some((i, si, reversed));
            } else if same_ends {
                return Err(Error::Topology(format!(
                    "non-conforming interface between patches {i} and {j}: control polygons differ by {:e}",
                    fwd.min(rev)
                )));
            }
        }
    }
    let mut edges = Vec::new();
    let mut side_edge = vec![[usize::MAX; 4]; np];
    for i in 0..np {
        for &s in &SIDES {
            if let Some((j, sj, reversed)) = partner[i][s.index()] {
                if (i, s) < (j, sj) {
                    side_edge[i][s.index()] = edges.len();
                    side_edge[j][sj.index()] = edges.len();
                    edges.push(Edge::Interface(Interface { a: (i, s), b: (j, sj), reversed }));
                }
            }
        }
    }
    let num_interfaces = edges.len();
    for i in 0..np {
        for &s in &SIDES {
            if side_edge[i][s.index()] == usize::MAX {
                side_edge[i][s.index()] = edges.len();
                edges.push(Edge::Boundary { patch: i, side: s });
            }
        }
    }
    let mut topo = Topology { edges, num_interfaces, vertices: Vec::new(), side_edge, corner_vertex: vec![[0; 4]; np], tol };
    for e in 0..num_interfaces {
        topo.check_orientation(surface, e)?;
    }
    let mut uf = UnionFind((0..4 * np).collect());
    for e in &topo.edges[..num_interfaces] {
        if let Edge::Interface(f) = e {
            let ca = f.a.1.corners();
            let mut cb = f.b.1.corners();
            if f.reversed {
                cb.swap(0, 1);
            }
            for t in 0..2 {
                uf.union(4 * f.a.0 + ca[t].index(), 4 * f.b.0 + cb[t].index());
            }
        }
    }
    let mut root_vertex = vec![usize::MAX; 4 * np];
    let mut members: Vec<Vec<(usize, Corner)>> = Vec::new();
    for c in 0..4 * np {
        let root = uf.find(c);
        if root_vertex[root] == usize::MAX {
            root_vertex[root] = members.len();
            members.push(Vec::new());
        }
        let v = root_vertex[root];
        members[v].push((c / 4, Corner((c % 4) as u8)));
        topo.corner_vertex[c / 4][c % 4] = v;
    }
    for (v, m) in members.iter().enumerate() {
        let vertex = topo.order_fan(surface, v, m)?;
        topo.vertices.push(vertex);
    }
    for a in 0..topo.vertices.len() {
        for b in a + 1..topo.vertices.len() {
            if (topo.vertices[a].point - topo.vertices[b].point).norm() <= tol {
                return Err(Error::Unsupported(format!(
                    "vertices {a} and {b} coincide without conforming interfaces (T-junction)"
                )));
            }
        }
    }
    Ok(topo)
}

impl Topology {
    pub fn num_boundary_edges(&self) -> usize {
        self.edges.len() - self.num_interfaces
    }

    pub fn interfaces(&self) -> impl Iterator<Item = &Interface> {
        self.edges.iter().filter_map(|e| match e {
            Edge::Interface(f) => Some(f),
            _ => None,
        })
    }

    /// Neighbour across side `side` of `patch`, with its side.
    pub fn neighbour(&self, patch: usize, side: Side) -> Option<(usize, Side)> {
        match self.edges[self.side_edge[patch][side.index()]] {
            Edge::Interface(f) if f.a == (patch, side) => Some(f.b),
            Edge::Interface(f) => Some(f.a),
            Edge::Boundary { .. } => None,
        }
    }

    fn check_orientation(&self, surface: &MultiPatchSurface, e: usize) -> Result<()> {
        let form = self.edge_form(e);
        let (pa, ta) = form.i1;
        let (pb, tb) = form.i2.expect("interface");
        let a = ta.transform_patch(&surface.patches[pa]);
        let b = tb.transform_patch(&surface.patches[pb]);
        let d = polygon_distance(&side_polygon(&a, Side::U0), &side_polygon(&b, Side::V0), false);
        if d > self.tol {
            return Err(Error::Topology(format!(
                "patches {pa} and {pb} are not consistently oriented across their interface"
            )));
        }
        Ok(())
    }

    /// Transforms bringing edge `e` into standard form.
    pub fn edge_form(&self, e: usize) -> EdgeForm {
        match self.edges[e] {
            Edge::Interface(f) => EdgeForm {
                i1: (f.a.0, Symmetry::rotation_onto(Side::U0, f.a.1)),
                i2: Some((f.b.0, Symmetry::rotation_onto(Side::V0, f.b.1))),
            },
            Edge::Boundary { patch, side } => EdgeForm { i1: (patch, Symmetry::rotation_onto(Side::U0, side)), i2: None },
        }
    }

    fn order_fan(&self, surface: &MultiPatchSurface, v: usize, members: &[(usize, Corner)]) -> Result<Vertex> {
        let prev_side = |&(p, c): &(usize, Corner)| (p, Symmetry::rotation_to_corner(c).image_side(Side::V0));
        let next_side = |&(p, c): &(usize, Corner)| (p, Symmetry::rotation_to_corner(c).image_side(Side::U0));
        let is_boundary = |(p, s): (usize, Side)| matches!(self.edges[self.side_edge[p][s.index()]], Edge::Boundary { .. });
        let starts: Vec<&(usize, Corner)> = members.iter().filter(|m| is_boundary(prev_side(m))).collect();
        let boundary = !starts.is_empty();
        if starts.len() > 1 {
            return Err(Error::Unsupported(format!("vertex {v} is non-manifold (several boundary fans)")));
        }
        let start = if boundary { *starts[0] } else { *members.iter().min().expect("non-empty vertex") };
        let mut fan = vec![start];
        loop {
            let cur = *fan.last().unwrap();
            let (p, s) = next_side(&cur);
            let Some((q, sq)) = self.neighbour(p, s) else { break };
            // The shared corner on the neighbour is the endpoint matching the vertex.
            let ends_p = s.corners();
            let mut ends_q = sq.corners();
            let f = match self.edges[self.side_edge[p][s.index()]] {
                Edge::Interface(f) => f,
                _ => unreachable!(),
            };
            if f.reversed {
                ends_q.swap(0, 1);
            }
            let t = if ends_p[0] == cur.1 { 0 } else { 1 };
            let next = (q, ends_q[t]);
            if next == start {
                break;
            }
            if prev_side(&next) != (q, sq) {
                return Err(Error::Topology(format!("inconsistent fan orientation at vertex {v}")));
            }
            if fan.contains(&next) || fan.len() > members.len() {
                return Err(Error::Unsupported(format!("vertex {v}: periodic or non-manifold fan")));
            }
            fan.push(next);
        }
        if fan.len() != members.len() {
            return Err(Error::Unsupported(format!("vertex {v} is non-manifold")));
        }
        let (p0, c0) = fan[0];
        let point = surface.patches[p0].eval(c0.param())?;
        for &(p, c) in &fan {
            let x = surface.patches[p].eval(c.param())?;
            if (x - point).norm() > self.tol {
                return Err(Error::Topology(format!("fan of vertex {v} does not share its point")));
            }
        }
        Ok(Vertex { fan, boundary, point })
    }

    /// Fan transforms, adjacent edges and normal-aligning rotation of vertex `v`.
    pub fn vertex_form(&self, surface: &MultiPatchSurface, v: usize) -> Result<VertexForm> {
        let vert = &self.vertices[v];
        let mut fan = Vec::new();
        let mut prev_edge = Vec::new();
        let mut next_edge = Vec::new();
        let mut normal = Vector3::zeros();
        for &(p, c) in &vert.fan {
            let sym = Symmetry::rotation_to_corner(c);
            fan.push((p, sym));
            prev_edge.push(self.side_edge[p][sym.image_side(Side::V0).index()]);
            next_edge.push(self.side_edge[p][sym.image_side(Side::U0).index()]);
            let jet = surface.patches[p].eval_jet(c.param(), 1)?;
            normal += jet.d[0].cross(&jet.d[1]).normalize();
        }
        if normal.norm() < 1e-12 {
            return Err(Error::Topology(format!("vertex {v}: fan normals cancel")));
        }
        Ok(VertexForm { vertex: v, fan, prev_edge, next_edge, rotation: rotation_to_e3(&normal.normalize()), boundary: vert.boundary })
    }
}

/// Minimal rotation taking the unit vector `n` to `e3`; antipodal `n` rotates about `e1`.
pub fn rotation_to_e3(n: &Vector3<f64>) -> Matrix3<f64> {
    let e3 = Vector3::z();
    let c = n.dot(&e3);
    if c < -1.0 + 1e-12 {
        return Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    }
    let v = n.cross(&e3);
    let vx = Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0);
    Matrix3::identity() + vx + vx * vx / (1.0 + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::UnivariateSplineSpace;

    fn p3(x: f64, y: f64) -> Vector3<f64> {
        Vector3::new(x, y, 0.0)
    }

    pub(crate) fn two_squares() -> MultiPatchSurface {
        MultiPatchSurface::new(vec![
            TensorSplinePatch::bilinear([p3(0., 0.), p3(1., 0.), p3(1., 1.), p3(0., 1.)]),
            TensorSplinePatch::bilinear([p3(1., 0.), p3(2., 0.), p3(2., 1.), p3(1., 1.)]),
        ])
        .unwrap()
    }

    fn cross4() -> MultiPatchSurface {
        MultiPatchSurface::new(vec![
            TensorSplinePatch::bilinear([p3(0., 0.), p3(1., 0.), p3(1., 1.), p3(0., 1.)]),
            TensorSplinePatch::bilinear([p3(0., 0.), p3(0., 1.), p3(-1., 1.), p3(-1., 0.)]),
            TensorSplinePatch::bilinear([p3(0., 0.), p3(-1., 0.), p3(-1., -1.), p3(0., -1.)]),
            TensorSplinePatch::bilinear([p3(0., 0.), p3(0., -1.), p3(1., -1.), p3(1., 0.)]),
        ])
        .unwrap()
    }

    #[test]
    fn symmetry_group_laws() {
        let n = 5;
        let table: Vec<usize> = (0..n * n).collect();
        for s in Symmetry::all() {
            assert_eq!(s.to_orig(&s.to_local(&table, n), n), table);
            assert_eq!(s.compose(s.inverse()), Symmetry::IDENTITY);
            for &x in &[[0.2, 0.7], [0.9, 0.1]] {
                let y = s.apply(x);
                assert_eq!(s.inverse().apply(y).map(|v| (v * 1e12).round()), x.map(|v| (v * 1e12).round()));
            }
        }
        assert_eq!(Symmetry::rotations().count(), 4);
    }

    #[test]
    fn transform_patch_matches_point_map() {
        let space = crate::spline::TensorSplineSpace::new(2, 1, 2).unwrap();
        let n = space.n();
        let pts = (0..n * n).map(|i| Vector3::new((i / n) as f64, (i % n) as f64 + 0.1 * i as f64, (i * i) as f64 * 0.01)).collect();
        let patch = TensorSplinePatch::new(space, pts).unwrap();
        for s in Symmetry::all() {
            let local = s.transform_patch(&patch);
            for &x in &[[0.13, 0.77], [0.5, 0.31]] {
                assert!((local.eval(x).unwrap() - patch.eval(s.apply(x)).unwrap()).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn two_squares_counts() {
        let s = two_squares();
        let t = build_topology(&s, default_tolerance(&s)).unwrap();
        assert_eq!(t.num_interfaces, 1);
        assert_eq!(t.num_boundary_edges(), 6);
        assert_eq!(t.vertices.len(), 6);
        let mut valences: Vec<usize> = t.vertices.iter().map(|v| v.valence()).collect();
        valences.sort();
        assert_eq!(valences, vec![1, 1, 1, 1, 2, 2]);
        assert!(t.vertices.iter().all(|v| v.boundary));
    }

    #[test]
    fn single_patch_counts() {
        let s = MultiPatchSurface::new(vec![two_squares().patches[0].clone()]).unwrap();
        let t = build_topology(&s, 1e-9).unwrap();
        assert_eq!((t.num_interfaces, t.num_boundary_edges(), t.vertices.len()), (0, 4, 4));
    }

    #[test]
    fn edge_standard_form_identity_and_sampling() {
        let s = two_squares();
        let t = build_topology(&s, 1e-9).unwrap();
        for e in 0..t.edges.len() {
            let form = t.edge_form(e);
            let a = form.i1.1.transform_patch(&s.patches[form.i1.0]);
            if let Some((pb, tb)) = form.i2 {
                let b = tb.transform_patch(&s.patches[pb]);
                for i in 0..=20 {
                    let x = i as f64 / 20.0;
                    assert!((a.eval([0.0, x]).unwrap() - b.eval([x, 0.0]).unwrap()).norm() < 1e-10);
                }
            } else {
                let Edge::Boundary { patch, side } = t.edges[e] else { unreachable!() };
                assert_eq!(form.i1.1.image_side(Side::U0), side);
                assert_eq!(patch, form.i1.0);
            }
        }
        let (mirror, id) = (
            MultiPatchSurface::new(vec![
                Symmetry::rotation_onto(Side::U0, Side::U1).transform_patch(&s.patches[0]),
                s.patches[1].clone(),
            ])
            .unwrap(),
            Symmetry::IDENTITY,
        );
        let tm = build_topology(&mirror, 1e-9).unwrap();
        let f = tm.edge_form(0);
        assert_eq!(f.i1.1, id);
        assert!(f.i2.unwrap().1 != id);
    }

    #[test]
    fn inconsistent_orientation_rejected() {
        let s = two_squares();
        let flipped = Symmetry { swap: true, flip_u: false, flip_v: false }.transform_patch(&s.patches[1]);
        let bad = MultiPatchSurface::new(vec![s.patches[0].clone(), flipped]).unwrap();
        assert!(matches!(build_topology(&bad, 1e-9), Err(Error::Topology(_))));
    }

    #[test]
    fn nonconforming_rejected() {
        let s = two_squares();
        let target = UnivariateSplineSpace::new(2, 1, 1).unwrap();
        let mut moved = s.patches[1].refine_to(&target).unwrap();
        let mid = moved.space.index(0, 1);
        moved.points[mid].x += 1e-3;
        let bad = MultiPatchSurface::new(vec![s.patches[0].refine_to(&target).unwrap(), moved]).unwrap();
        assert!(build_topology(&bad, 1e-9).is_err());
    }

    #[test]
    fn flat_cross_vertex() {
        let s = cross4();
        let t = build_topology(&s, 1e-9).unwrap();
        let inner: Vec<usize> = (0..t.vertices.len()).filter(|&v| !t.vertices[v].boundary).collect();
        assert_eq!(inner.len(), 1);
        let v = inner[0];
        assert_eq!(t.vertices[v].valence(), 4);
        let form = t.vertex_form(&s, v).unwrap();
        assert!((form.rotation - Matrix3::identity()).norm() < 1e-15);
        for q in 0..4 {
            assert_eq!(form.next_edge[q], form.prev_edge[(q + 1) % 4]);
            let a = form.fan[q].1.transform_patch(&s.patches[form.fan[q].0]);
            let b = form.fan[(q + 1) % 4].1.transform_patch(&s.patches[form.fan[(q + 1) % 4].0]);
            for i in 0..=10 {
                let x = i as f64 / 10.0;
                assert!((a.eval([0.0, x]).unwrap() - b.eval([x, 0.0]).unwrap()).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn valence_one_corner_fan() {
        let s = two_squares();
        let t = build_topology(&s, 1e-9).unwrap();
        let v = t.vertices.iter().position(|v| v.valence() == 1).unwrap();
        let form = t.vertex_form(&s, v).unwrap();
        assert!(form.boundary);
        assert!(matches!(t.edges[form.prev_edge[0]], Edge::Boundary { .. }));
        assert!(matches!(t.edges[form.next_edge[0]], Edge::Boundary { .. }));
    }

    #[test]
    fn rotation_aligns_normals() {
        let mut rng = 0x1234u64;
        for _ in 0..50 {
            let mut r = || {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1);
                (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            };
            let n = Vector3::new(r(), r(), r()).normalize();
            let rot = rotation_to_e3(&n);
            assert!((rot * n - Vector3::z()).norm() < 1e-12);
            assert!((rot.determinant() - 1.0).abs() < 1e-12);
            assert!((rot.transpose() * rot - Matrix3::identity()).norm() < 1e-12);
        }
        let rot = rotation_to_e3(&-Vector3::z());
        assert!((rot * -Vector3::z() - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn permutation_invariance() {
        let s = cross4();
        let t = build_topology(&s, 1e-9).unwrap();
        let perm = MultiPatchSurface::new(vec![s.patches[2].clone(), s.patches[0].clone(), s.patches[3].clone(), s.patches[1].clone()]).unwrap();
        let tp = build_topology(&perm, 1e-9).unwrap();
        assert_eq!(t.num_interfaces, tp.num_interfaces);
        let val = |t: &Topology| {
            let mut v: Vec<(bool, usize)> = t.vertices.iter().map(|v| (v.boundary, v.valence())).collect();
            v.sort();
            v
        };
        assert_eq!(val(&t), val(&tp));
    }
}
