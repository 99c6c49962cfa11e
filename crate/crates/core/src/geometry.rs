//! Multi-block rectangular domains, their interfaces and the uniform
//! subdomain meshes built on top of them.
//!
//! Subdomain ids are the positions of the blocks in the layout
//! configuration. Interface normals point from the lower id to the higher id
//! and every jump sign in the crate derives from that convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`, serialized as `[x0, x1, y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.x1, r.y0, r.y1]
    }
}

impl Rect {
    pub const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn centroid(&self) -> Point {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= self.x0 - tol && p[0] <= self.x1 + tol && p[1] >= self.y0 - tol && p[1] <= self.y1 + tol
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect::new(
            self.x0.min(other.x0),
            self.x1.max(other.x1),
            self.y0.min(other.y0),
            self.y1.max(other.y1),
        )
    }

    fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Parameter interval of a side (y for vertical sides, x for horizontal ones).
    pub fn side_interval(&self, side: Side) -> (f64, f64) {
        match side {
            Side::Left | Side::Right => (self.y0, self.y1),
            Side::Bottom | Side::Top => (self.x0, self.x1),
        }
    }

    /// The constant coordinate of a side.
    pub fn side_position(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.x0,
            Side::Right => self.x1,
            Side::Bottom => self.y0,
            Side::Top => self.y1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Physics {
    Stokes,
    Darcy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Left => [-1.0, 0.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Top => [0.0, 1.0],
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            Side::Left | Side::Right => Orientation::Vertical,
            Side::Bottom | Side::Top => Orientation::Horizontal,
        }
    }

    /// Point on this side of `rect` at parameter `t`.
    pub fn point(self, rect: &Rect, t: f64) -> Point {
        match self {
            Side::Left => [rect.x0, t],
            Side::Right => [rect.x1, t],
            Side::Bottom => [t, rect.y0],
            Side::Top => [t, rect.y1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    /// Segment `x = const`, parameterized by y.
    Vertical,
    /// Segment `y = const`, parameterized by x.
    Horizontal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InterfaceKind {
    #[serde(rename = "ss")]
    StokesStokes,
    #[serde(rename = "dd")]
    DarcyDarcy,
    #[serde(rename = "sd")]
    StokesDarcy,
}

impl InterfaceKind {
    fn from_physics(a: Physics, b: Physics) -> Self {
        match (a, b) {
            (Physics::Stokes, Physics::Stokes) => InterfaceKind::StokesStokes,
            (Physics::Darcy, Physics::Darcy) => InterfaceKind::DarcyDarcy,
            _ => InterfaceKind::StokesDarcy,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            InterfaceKind::StokesStokes => "ss",
            InterfaceKind::DarcyDarcy => "dd",
            InterfaceKind::StokesDarcy => "sd",
        }
    }

    /// Number of mortar components: the full normal stress vector on
    /// Stokes-Stokes interfaces, a scalar elsewhere.
    pub fn components(self) -> usize {
        match self {
            InterfaceKind::StokesStokes => 2,
            _ => 1,
        }
    }
}

/// Straight segment shared by two subdomains.
#[derive(Clone, Debug, PartialEq)]
pub struct Interface {
    pub id: usize,
    pub lower: usize,
    pub higher: usize,
    pub kind: InterfaceKind,
    pub orientation: Orientation,
    /// The constant coordinate of the segment.
    pub position: f64,
    pub start: f64,
    pub end: f64,
    /// Unit normal pointing from `lower` into `higher`.
    pub normal: [f64; 2],
    /// The normal rotated by +90 degrees.
    pub tangent: [f64; 2],
}

impl Interface {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn point_at(&self, t: f64) -> Point {
        match self.orientation {
            Orientation::Vertical => [self.position, t],
            Orientation::Horizontal => [t, self.position],
        }
    }

    /// Parameter of a point along the segment.
    pub fn param_of(&self, p: Point) -> f64 {
        match self.orientation {
            Orientation::Vertical => p[1],
            Orientation::Horizontal => p[0],
        }
    }

    /// `+1` for the lower-id side, `-1` for the higher-id side.
    pub fn sign(&self, subdomain: usize) -> Option<f64> {
        if subdomain == self.lower {
            Some(1.0)
        } else if subdomain == self.higher {
            Some(-1.0)
        } else {
            None
        }
    }

    pub fn other(&self, subdomain: usize) -> Option<usize> {
        if subdomain == self.lower {
            Some(self.higher)
        } else if subdomain == self.higher {
            Some(self.lower)
        } else {
            None
        }
    }

    pub fn contains_point(&self, p: Point, tol: f64) -> bool {
        let (along, across) = match self.orientation {
            Orientation::Vertical => (p[1], p[0]),
            Orientation::Horizontal => (p[0], p[1]),
        };
        (across - self.position).abs() <= tol && along >= self.start - tol && along <= self.end + tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Interface(usize),
    /// Part of the outer boundary; the global side equals the block side.
    Outer,
}

/// A maximal piece of one block side with a single boundary type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundarySegment {
    pub side: Side,
    pub start: f64,
    pub end: f64,
    pub kind: SegmentKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub rect: Rect,
    pub physics: Physics,
    /// KL region index, required for Darcy blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub blocks: Vec<BlockSpec>,
}

impl LayoutConfig {
    /// Uniform `ncols x nrows` split of `bounds`, blocks numbered row by row
    /// starting from the top row. `tag(col, row)` gives physics and region,
    /// with `row = 0` the top row.
    pub fn uniform_grid(
        bounds: Rect,
        ncols: usize,
        nrows: usize,
        tag: impl Fn(usize, usize) -> (Physics, Option<usize>),
    ) -> Self {
        let dx = bounds.width() / ncols as f64;
        let dy = bounds.height() / nrows as f64;
        let mut blocks = Vec::with_capacity(ncols * nrows);
        for row in 0..nrows {
            let y1 = bounds.y1 - row as f64 * dy;
            let y0 = if row + 1 == nrows { bounds.y0 } else { y1 - dy };
            for col in 0..ncols {
                let x0 = bounds.x0 + col as f64 * dx;
                let x1 = if col + 1 == ncols { bounds.x1 } else { x0 + dx };
                let (physics, region) = tag(col, row);
                blocks.push(BlockSpec {
                    rect: Rect::new(x0, x1, y0, y1),
                    physics,
                    region,
                });
            }
        }
        LayoutConfig { blocks }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainLayout {
    pub bounds: Rect,
    pub blocks: Vec<BlockSpec>,
    pub interfaces: Vec<Interface>,
    /// Boundary segments of every block, ordered by side then by start.
    pub boundary: Vec<Vec<BoundarySegment>>,
    /// Blocks of every KL region.
    pub regions: Vec<Vec<usize>>,
    pub tol: f64,
}

impl DomainLayout {
    pub fn n_subdomains(&self) -> usize {
        self.blocks.len()
    }

    pub fn physics(&self, id: usize) -> Physics {
        self.blocks[id].physics
    }

    pub fn region_of(&self, id: usize) -> Option<usize> {
        self.blocks[id].region
    }

    /// Interfaces touching a subdomain, in interface order.
    pub fn interfaces_of(&self, id: usize) -> impl Iterator<Item = &Interface> {
        self.interfaces
            .iter()
            .filter(move |i| i.lower == id || i.higher == id)
    }

    /// The side of block `id` on which `interface` lies.
    pub fn side_of(&self, id: usize, interface: &Interface) -> Side {
        let r = &self.blocks[id].rect;
        match interface.orientation {
            Orientation::Vertical => {
                if (r.x1 - interface.position).abs() <= self.tol {
                    Side::Right
                } else {
                    Side::Left
                }
            }
            Orientation::Horizontal => {
                if (r.y1 - interface.position).abs() <= self.tol {
                    Side::Top
                } else {
                    Side::Bottom
                }
            }
        }
    }

    pub fn area(&self) -> f64 {
        self.bounds.area()
    }
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Validates a block tiling and enumerates interfaces and boundary segments.
pub fn build_layout(config: &LayoutConfig) -> Result<DomainLayout> {
    let blocks = &config.blocks;
    if blocks.is_empty() {
        return Err(Error::Layout("layout has no blocks".into()));
    }
    let bounds = blocks
        .iter()
        .skip(1)
        .fold(blocks[0].rect, |acc, b| acc.union(&b.rect));
    let tol = 1e-12 * bounds.diameter();

    for (i, b) in blocks.iter().enumerate() {
        if !(b.rect.width() > tol && b.rect.height() > tol) {
            return Err(Error::Layout(format!("block {i} has non-positive extent")));
        }
        match (b.physics, b.region) {
            (Physics::Darcy, None) => {
                return Err(Error::config(format!(
                    "Darcy block {i} is not assigned to a KL region"
                )))
            }
            (Physics::Stokes, Some(_)) => {
                return Err(Error::config(format!(
                    "Stokes block {i} cannot belong to a KL region"
                )))
            }
            _ => {}
        }
    }

    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if blocks[i].rect.intersection_area(&blocks[j].rect) > tol * bounds.diameter() {
                return Err(Error::Layout(format!("blocks {i} and {j} overlap")));
            }
        }
    }
    let covered: f64 = blocks.iter().map(|b| b.rect.area()).sum();
    if ((covered - bounds.area()) / bounds.area()).abs() > 1e-12 {
        return Err(Error::Layout(format!(
            "blocks do not tile their bounding box: covered area {covered} vs {}",
            bounds.area()
        )));
    }

    // Pairs are visited in (min id, max id) lexicographic order, which is the
    // interface ordering.
    let mut interfaces = Vec::new();
    for a in 0..blocks.len() {
        for b in a + 1..blocks.len() {
            let (ra, rb) = (&blocks[a].rect, &blocks[b].rect);
            let shared = if near(ra.x1, rb.x0, tol) || near(ra.x0, rb.x1, tol) {
                let lo = ra.y0.max(rb.y0);
                let hi = ra.y1.min(rb.y1);
                let nx = if near(ra.x1, rb.x0, tol) { 1.0 } else { -1.0 };
                let pos = if nx > 0.0 { ra.x1 } else { ra.x0 };
                (hi - lo > tol).then_some((Orientation::Vertical, pos, lo, hi, [nx, 0.0]))
            } else {
                None
            };
            let shared = shared.or_else(|| {
                if near(ra.y1, rb.y0, tol) || near(ra.y0, rb.y1, tol) {
                    let lo = ra.x0.max(rb.x0);
                    let hi = ra.x1.min(rb.x1);
                    let ny = if near(ra.y1, rb.y0, tol) { 1.0 } else { -1.0 };
                    let pos = if ny > 0.0 { ra.y1 } else { ra.y0 };
                    (hi - lo > tol).then_some((Orientation::Horizontal, pos, lo, hi, [0.0, ny]))
                } else {
                    None
                }
            });
            if let Some((orientation, position, start, end, normal)) = shared {
                interfaces.push(Interface {
                    id: interfaces.len(),
                    lower: a,
                    higher: b,
                    kind: InterfaceKind::from_physics(blocks[a].physics, blocks[b].physics),
                    orientation,
                    position,
                    start,
                    end,
                    normal,
                    tangent: [-normal[1], normal[0]],
                });
            }
        }
    }

    let mut boundary = Vec::with_capacity(blocks.len());
    for (id, block) in blocks.iter().enumerate() {
        let mut segments = Vec::new();
        for side in Side::ALL {
            let (s0, s1) = block.rect.side_interval(side);
            let pos = block.rect.side_position(side);
            let mut pieces: Vec<(f64, f64, usize)> = interfaces
                .iter()
                .filter(|i| {
                    (i.lower == id || i.higher == id)
                        && i.orientation == side.orientation()
                        && near(i.position, pos, tol)
                })
                .map(|i| (i.start, i.end, i.id))
                .collect();
            pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
            let on_bbox = near(pos, bounds.side_position(side), tol);
            let mut cursor = s0;
            let push_outer = |from: f64, to: f64, segments: &mut Vec<BoundarySegment>| {
                if to - from > tol {
                    if !on_bbox {
                        return Err(Error::Layout(format!(
                            "block {id} has an uncovered {side:?} boundary piece [{from}, {to}] inside the domain"
                        )));
                    }
                    segments.push(BoundarySegment {
                        side,
                        start: from,
                        end: to,
                        kind: SegmentKind::Outer,
                    });
                }
                Ok(())
            };
            for (start, end, iid) in pieces {
                push_outer(cursor, start, &mut segments)?;
                segments.push(BoundarySegment {
                    side,
                    start,
                    end,
                    kind: SegmentKind::Interface(iid),
                });
                cursor = end;
            }
            push_outer(cursor, s1, &mut segments)?;
        }
        boundary.push(segments);
    }

    let n_regions = blocks.iter().filter_map(|b| b.region).max().map_or(0, |r| r + 1);
    let mut regions = vec![Vec::new(); n_regions];
    for (id, b) in blocks.iter().enumerate() {
        if let Some(r) = b.region {
            regions[r].push(id);
        }
    }
    if let Some(r) = regions.iter().position(|r| r.is_empty()) {
        return Err(Error::config(format!("KL region {r} has no Darcy blocks")));
    }

    Ok(DomainLayout {
        bounds,
        blocks: blocks.clone(),
        interfaces,
        boundary,
        regions,
        tol,
    })
}

/// One fine edge on the boundary of a subdomain mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub side: Side,
    /// Position of the edge along its side, counted from the side start.
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub kind: SegmentKind,
}

/// Uniform `nx x ny` grid on one block. Darcy subdomains use the rectangles
/// directly; Stokes subdomains split each rectangle along the diagonal from
/// its lower-left to its upper-right corner.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdomainMesh {
    pub subdomain: usize,
    pub rect: Rect,
    pub physics: Physics,
    pub nx: usize,
    pub ny: usize,
    pub boundary_edges: Vec<BoundaryEdge>,
}

impl SubdomainMesh {
    pub fn hx(&self) -> f64 {
        self.rect.width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.rect.height() / self.ny as f64
    }

    /// Largest element diameter.
    pub fn h(&self) -> f64 {
        self.hx().hypot(self.hy())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_vertices(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn vertex(&self, i: usize, j: usize) -> Point {
        [
            grid_coord(self.rect.x0, self.rect.x1, i, self.nx),
            grid_coord(self.rect.y0, self.rect.y1, j, self.ny),
        ]
    }

    pub fn cell_rect(&self, i: usize, j: usize) -> Rect {
        let a = self.vertex(i, j);
        let b = self.vertex(i + 1, j + 1);
        Rect::new(a[0], b[0], a[1], b[1])
    }

    pub fn cell_centroid(&self, cell: usize) -> Point {
        self.cell_rect(cell % self.nx, cell / self.nx).centroid()
    }

    /// Triangles as vertex-index triples, counter-clockwise. Cell `(i, j)`
    /// contributes triangles `2 (j nx + i)` (lower right) and `2 (j nx + i) + 1`
    /// (upper left).
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let mut tris = Vec::with_capacity(2 * self.n_cells());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v00 = self.vertex_index(i, j);
                let v10 = self.vertex_index(i + 1, j);
                let v11 = self.vertex_index(i + 1, j + 1);
                let v01 = self.vertex_index(i, j + 1);
                tris.push([v00, v10, v11]);
                tris.push([v00, v11, v01]);
            }
        }
        tris
    }

    pub fn vertex_point(&self, v: usize) -> Point {
        self.vertex(v % (self.nx + 1), v / (self.nx + 1))
    }

    /// Element areas: rectangles for Darcy, triangles for Stokes.
    pub fn element_areas(&self) -> Vec<f64> {
        match self.physics {
            Physics::Darcy => (0..self.ny)
                .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
                .map(|(i, j)| self.cell_rect(i, j).area())
                .collect(),
            Physics::Stokes => self
                .triangles()
                .iter()
                .map(|t| {
                    let [a, b, c] = t.map(|v| self.vertex_point(v));
                    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
                })
                .collect(),
        }
    }

    /// Number of fine edges along a side.
    pub fn edges_along(&self, side: Side) -> usize {
        match side.orientation() {
            Orientation::Vertical => self.ny,
            Orientation::Horizontal => self.nx,
        }
    }

    /// Parameter of the k-th fine vertex along a side.
    pub fn side_vertex_param(&self, side: Side, k: usize) -> f64 {
        match side.orientation() {
            Orientation::Vertical => grid_coord(self.rect.y0, self.rect.y1, k, self.ny),
            Orientation::Horizontal => grid_coord(self.rect.x0, self.rect.x1, k, self.nx),
        }
    }

    /// Boundary edges lying on a given interface, in increasing parameter order.
    pub fn interface_edges(&self, interface: usize) -> Vec<BoundaryEdge> {
        self.boundary_edges
            .iter()
            .filter(|e| e.kind == SegmentKind::Interface(interface))
            .copied()
            .collect()
    }

    /// Fine vertices (parameters) of the trace on an interface.
    pub fn interface_vertices(&self, interface: usize) -> Vec<f64> {
        let edges = self.interface_edges(interface);
        let mut v: Vec<f64> = edges.iter().map(|e| e.start).collect();
        if let Some(last) = edges.last() {
            v.push(last.end);
        }
        v
    }

    pub fn outer_edges(&self) -> impl Iterator<Item = &BoundaryEdge> {
        self.boundary_edges.iter().filter(|e| e.kind == SegmentKind::Outer)
    }
}

/// `a + (b - a) k / n` with the end points reproduced exactly.
pub(crate) fn grid_coord(a: f64, b: f64, k: usize, n: usize) -> f64 {
    if k == n {
        b
    } else {
        a + (b - a) * (k as f64 / n as f64)
    }
}

/// Builds the uniform mesh of one subdomain and classifies its boundary edges.
///
/// Every boundary segment breakpoint must coincide with a mesh line so that no
/// fine edge straddles two segments.
pub fn build_subdomain_mesh(layout: &DomainLayout, id: usize, nx: usize, ny: usize) -> Result<SubdomainMesh> {
    let block = layout
        .blocks
        .get(id)
        .ok_or_else(|| Error::Layout(format!("unknown subdomain {id}")))?;
    if nx == 0 || ny == 0 {
        return Err(Error::config(format!("subdomain {id}: mesh size must be at least 1x1")));
    }
    let mut mesh = SubdomainMesh {
        subdomain: id,
        rect: block.rect,
        physics: block.physics,
        nx,
        ny,
        boundary_edges: Vec::new(),
    };
    let segments = &layout.boundary[id];
    for side in Side::ALL {
        let n = mesh.edges_along(side);
        let (s0, s1) = block.rect.side_interval(side);
        let h = (s1 - s0) / n as f64;
        for seg in segments.iter().filter(|s| s.side == side) {
            for t in [seg.start, seg.end] {
                let k = (t - s0) / h;
                if (k - k.round()).abs() > 1e-9 {
                    return Err(Error::Layout(format!(
                        "subdomain {id}: boundary breakpoint {t} on the {side:?} side does not fall on a mesh line of the {nx}x{ny} grid"
                    )));
                }
            }
        }
        for k in 0..n {
            let start = mesh.side_vertex_param(side, k);
            let end = mesh.side_vertex_param(side, k + 1);
            let mid = 0.5 * (start + end);
            let seg = segments
                .iter()
                .find(|s| s.side == side && mid > s.start && mid < s.end)
                .ok_or_else(|| Error::Layout(format!("subdomain {id}: edge at {mid} has no boundary segment")))?;
            mesh.boundary_edges.push(BoundaryEdge {
                side,
                index: k,
                start,
                end,
                kind: seg.kind,
            });
        }
    }
    Ok(mesh)
}
