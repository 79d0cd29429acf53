//! Structured linear-tetrahedral meshes for box-shaped domains.
//!
//! Every hexahedral cell of a regular grid is split into six tetrahedra
//! sharing the cell's main diagonal. The split is the same in every cell, so
//! neighbouring cells agree on the diagonals of their shared faces and the
//! resulting mesh is conforming.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{cross, dot3};

/// Boundary region a facet belongs to. Every boundary facet carries exactly
/// one tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// `z = 0` face of the compression block.
    Bottom,
    /// Top face outside the loaded quarter.
    Top,
    /// Quarter of the top face adjacent to the `x = 0`, `y = 0` corner.
    TopLoadedQuarter,
    SymmetryX,
    SymmetryY,
    SymmetryZ,
    /// `x = lx` face of the tensile slab.
    LoadedEnd,
    Free,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 8] = [
        BoundaryTag::Bottom,
        BoundaryTag::Top,
        BoundaryTag::TopLoadedQuarter,
        BoundaryTag::SymmetryX,
        BoundaryTag::SymmetryY,
        BoundaryTag::SymmetryZ,
        BoundaryTag::LoadedEnd,
        BoundaryTag::Free,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Bottom => "bottom",
            BoundaryTag::Top => "top",
            BoundaryTag::TopLoadedQuarter => "top-loaded-quarter",
            BoundaryTag::SymmetryX => "symmetry-x",
            BoundaryTag::SymmetryY => "symmetry-y",
            BoundaryTag::SymmetryZ => "symmetry-z",
            BoundaryTag::LoadedEnd => "loaded-end",
            BoundaryTag::Free => "free",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFacet {
    /// Vertices ordered so that the right-hand normal points out of the body.
    pub nodes: [usize; 3],
    pub tag: BoundaryTag,
    /// The tetrahedron owning this facet.
    pub tet: usize,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub nodes: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
    pub boundary_facets: Vec<BoundaryFacet>,
    /// Longest edge of each tetrahedron.
    pub element_diameters: Vec<f64>,
}

/// Constant geometric data of one linear tetrahedron in the reference
/// configuration.
#[derive(Clone, Copy, Debug)]
pub struct TetGeometry {
    /// Gradients of the four barycentric shape functions.
    pub grads: [[f64; 3]; 4],
    pub volume: f64,
}

/// Kuhn decomposition of the unit cube: vertex `k` sits at
/// `(k & 1, (k >> 1) & 1, (k >> 2) & 1)`.
const KUHN_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

pub fn signed_volume(x: &[[f64; 3]; 4]) -> f64 {
    let a = sub(&x[1], &x[0]);
    let b = sub(&x[2], &x[0]);
    let c = sub(&x[3], &x[0]);
    dot3(&a, &cross(&b, &c)) / 6.0
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = sub(a, b);
    dot3(&d, &d).sqrt()
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_coords(&self, e: usize) -> [[f64; 3]; 4] {
        let t = &self.tets[e];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]], self.nodes[t[3]]]
    }

    pub fn tet_volume(&self, e: usize) -> f64 {
        signed_volume(&self.tet_coords(e))
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|e| self.tet_volume(e)).sum()
    }

    pub fn geometry(&self, e: usize) -> TetGeometry {
        tet_geometry(&self.tet_coords(e))
    }

    pub fn facet_area(&self, f: &BoundaryFacet) -> f64 {
        let [a, b, c] = f.nodes.map(|n| self.nodes[n]);
        let n = cross(&sub(&b, &a), &sub(&c, &a));
        0.5 * dot3(&n, &n).sqrt()
    }

    /// Outward unit normal of a boundary facet.
    pub fn facet_normal(&self, f: &BoundaryFacet) -> [f64; 3] {
        let [a, b, c] = f.nodes.map(|n| self.nodes[n]);
        let n = cross(&sub(&b, &a), &sub(&c, &a));
        let l = dot3(&n, &n).sqrt();
        [n[0] / l, n[1] / l, n[2] / l]
    }

    /// Sorted, deduplicated node indices touching facets with `tag`.
    pub fn nodes_with_tag(&self, tag: BoundaryTag) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_facets
            .iter()
            .filter(|f| f.tag == tag)
            .flat_map(|f| f.nodes)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn tag_area(&self, tag: BoundaryTag) -> f64 {
        self.boundary_facets
            .iter()
            .filter(|f| f.tag == tag)
            .map(|f| self.facet_area(f))
            .sum()
    }

    /// Counts how many tetrahedra share each triangular face.
    pub fn face_multiplicities(&self) -> HashMap<[usize; 3], usize> {
        let mut counts = HashMap::new();
        for t in &self.tets {
            for f in tet_faces(t) {
                let mut key = f;
                key.sort_unstable();
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }
}

pub fn tet_geometry(x: &[[f64; 3]; 4]) -> TetGeometry {
    // Columns of the reference-to-physical Jacobian.
    let j = [sub(&x[1], &x[0]), sub(&x[2], &x[0]), sub(&x[3], &x[0])];
    let det = dot3(&j[0], &cross(&j[1], &j[2]));
    // Rows of J^{-1} are the gradients of the barycentric coordinates 1..3.
    let g1 = cross(&j[1], &j[2]).map(|v| v / det);
    let g2 = cross(&j[2], &j[0]).map(|v| v / det);
    let g3 = cross(&j[0], &j[1]).map(|v| v / det);
    let g0 = [-(g1[0] + g2[0] + g3[0]), -(g1[1] + g2[1] + g3[1]), -(g1[2] + g2[2] + g3[2])];
    TetGeometry { grads: [g0, g1, g2, g3], volume: det / 6.0 }
}

/// The four faces of a tetrahedron, each listed opposite vertex 3, 2, 1, 0.
fn tet_faces(t: &[usize; 4]) -> [[usize; 3]; 4] {
    [[t[0], t[1], t[2]], [t[0], t[1], t[3]], [t[0], t[2], t[3]], [t[1], t[2], t[3]]]
}

fn longest_edge(x: &[[f64; 3]; 4]) -> f64 {
    let mut h: f64 = 0.0;
    for a in 0..4 {
        for b in a + 1..4 {
            h = h.max(dist(&x[a], &x[b]));
        }
    }
    h
}

fn structured_box(
    n: [usize; 3],
    len: [f64; 3],
    tagger: impl Fn(&[f64; 3], &[f64; 3]) -> BoundaryTag,
) -> Result<Mesh> {
    if n.iter().any(|&k| k == 0) {
        return Err(Error::InvalidInput(format!("mesh divisions must be >= 1, got {n:?}")));
    }
    if len.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidInput(format!("mesh lengths must be positive, got {len:?}")));
    }
    let [nx, ny, nz] = n;
    let node_id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([
                    len[0] * i as f64 / nx as f64,
                    len[1] * j as f64 / ny as f64,
                    len[2] * k as f64 / nz as f64,
                ]);
            }
        }
    }

    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let corner =
                    |c: usize| node_id(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                for local in KUHN_TETS {
                    let mut t = local.map(corner);
                    let x = t.map(|v| nodes[v]);
                    if signed_volume(&x) < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }

    let element_diameters = tets.iter().map(|t| longest_edge(&t.map(|v| nodes[v]))).collect();

    // Faces seen exactly once are on the boundary.
    let mut owner: HashMap<[usize; 3], (usize, [usize; 3], usize)> = HashMap::new();
    for (e, t) in tets.iter().enumerate() {
        for (f, opposite) in tet_faces(t).into_iter().zip([t[3], t[2], t[1], t[0]]) {
            let mut key = f;
            key.sort_unstable();
            match owner.entry(key) {
                std::collections::hash_map::Entry::Occupied(o) => {
                    o.remove();
                }
                std::collections::hash_map::Entry::Vacant(v) => {
                    v.insert((e, f, opposite));
                }
            }
        }
    }
    let mut boundary: Vec<(usize, [usize; 3], usize)> = owner.into_values().collect();
    boundary.sort_unstable_by_key(|(e, f, _)| (*e, *f));

    let boundary_facets = boundary
        .into_iter()
        .map(|(tet, mut f, opposite)| {
            let [a, b, c] = f.map(|v| nodes[v]);
            let normal = cross(&sub(&b, &a), &sub(&c, &a));
            if dot3(&normal, &sub(&nodes[opposite], &a)) > 0.0 {
                f.swap(1, 2);
            }
            let [a, b, c] = f.map(|v| nodes[v]);
            let centroid = [
                (a[0] + b[0] + c[0]) / 3.0,
                (a[1] + b[1] + c[1]) / 3.0,
                (a[2] + b[2] + c[2]) / 3.0,
            ];
            BoundaryFacet { nodes: f, tag: tagger(&centroid, &len), tet }
        })
        .collect();

    Ok(Mesh { nodes, tets, boundary_facets, element_diameters })
}

fn on_plane(x: f64, plane: f64, scale: f64) -> bool {
    (x - plane).abs() <= 1e-9 * scale
}

/// Cube `[0, edge]³` with `n` divisions per edge.
///
/// Tags: `x = 0` symmetry-x, `y = 0` symmetry-y, `z = 0` bottom; the top face
/// is split into the loaded quarter `x, y < edge/2` and the rest; the two
/// remaining faces are free.
pub fn generate_cube_mesh(n: usize, edge_length: f64) -> Result<Mesh> {
    structured_box([n, n, n], [edge_length; 3], |c, len| {
        let s = len[0];
        if on_plane(c[2], len[2], s) {
            if c[0] < 0.5 * len[0] && c[1] < 0.5 * len[1] {
                BoundaryTag::TopLoadedQuarter
            } else {
                BoundaryTag::Top
            }
        } else if on_plane(c[2], 0.0, s) {
            BoundaryTag::Bottom
        } else if on_plane(c[0], 0.0, s) {
            BoundaryTag::SymmetryX
        } else if on_plane(c[1], 0.0, s) {
            BoundaryTag::SymmetryY
        } else {
            BoundaryTag::Free
        }
    })
}

/// Box `[0, lx] × [0, ly] × [0, lz]` representing one eighth of a tensile
/// specimen: the three coordinate planes are symmetry planes, `x = lx` is the
/// loaded end and the two outer faces are free.
pub fn generate_slab_mesh(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64, lz: f64) -> Result<Mesh> {
    structured_box([nx, ny, nz], [lx, ly, lz], |c, len| {
        let s = len[0].max(len[1]).max(len[2]);
        if on_plane(c[0], len[0], s) {
            BoundaryTag::LoadedEnd
        } else if on_plane(c[0], 0.0, s) {
            BoundaryTag::SymmetryX
        } else if on_plane(c[1], 0.0, s) {
            BoundaryTag::SymmetryY
        } else if on_plane(c[2], 0.0, s) {
            BoundaryTag::SymmetryZ
        } else {
            BoundaryTag::Free
        }
    })
}
