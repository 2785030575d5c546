//! Node-centered Cartesian embedding of a domain.
//!
//! Unknowns live on nodes strictly inside the domain. A node whose axis
//! neighbor lies on or outside the boundary is near-boundary; that arm ends at
//! the boundary crossing, a fraction `theta` in (0, 1] of one spacing away.
//! Near-boundary nodes with a very short arm are pinned: their value is
//! interpolated from the boundary value and the opposite neighbor, which keeps
//! the explicit time step independent of how close nodes sit to the boundary.

use super::{DomainSpec, GeometryError, Point};

/// Arms shorter than this fraction of a spacing pin the node.
pub const THETA_PIN: f64 = 1.0 / 3.0;

const NO_SLOT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    NearBoundary,
    Exterior,
}

/// One side of a node along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    /// Neighbor node (itself an unknown).
    Node(usize),
    /// Boundary crossing at `theta * h`; `point` indexes `Grid::boundary_points`.
    Boundary { theta: f64, point: usize },
}

impl Arm {
    pub fn theta(&self) -> f64 {
        match *self {
            Arm::Node(_) => 1.0,
            Arm::Boundary { theta, .. } => theta,
        }
    }
}

/// Algebraic closure of a pinned node: `u = (1 - weight) * h(point) + weight * u(opposite)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pin {
    pub point: usize,
    pub opposite: Option<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    spacing: f64,
    lo: Point,
    counts: [usize; 3],
    class: Vec<NodeClass>,
    distance: Vec<f64>,
    slot_of: Vec<u32>,
    unknowns: Vec<usize>,
    arms: Vec<[[Arm; 2]; 3]>,
    pins: Vec<Option<Pin>>,
    weights: Vec<f64>,
    mixed_offsets: Vec<usize>,
    mixed_entries: Vec<(usize, f64)>,
    boundary_points: Vec<Point>,
    coarse: bool,
}

impl Grid {
    /// Embed `domain` with node spacing `spacing`.
    ///
    /// Spacing above half the smallest shape parameter is rejected; spacing
    /// above one eighth of it is accepted but flagged by [`Grid::is_coarse`].
    pub fn build(domain: &DomainSpec, spacing: f64) -> Result<Self, GeometryError> {
        let bound = 0.5 * domain.min_feature();
        if !(spacing > 0.0 && spacing <= bound) {
            return Err(GeometryError::SpacingTooCoarse { spacing, bound });
        }
        let dim = domain.dim();
        let ext = domain.half_extents();
        let center = domain.center();
        let mut lo = [0.0; 3];
        let mut counts = [1usize; 3];
        for a in 0..dim {
            let k = (ext[a] / spacing - 1e-9).ceil().max(1.0) as usize;
            counts[a] = 2 * k + 1;
            lo[a] = center[a] - k as f64 * spacing;
        }
        let total = counts.iter().product::<usize>();

        let mut grid = Grid {
            dim,
            spacing,
            lo,
            counts,
            class: vec![NodeClass::Exterior; total],
            distance: vec![0.0; total],
            slot_of: vec![NO_SLOT; total],
            unknowns: Vec::new(),
            arms: Vec::new(),
            pins: Vec::new(),
            weights: Vec::new(),
            mixed_offsets: vec![0],
            mixed_entries: Vec::new(),
            boundary_points: Vec::new(),
            coarse: spacing > domain.min_feature() / 8.0,
        };

        for node in 0..total {
            let x = grid.position(node);
            let d = domain.signed_distance(&x)?;
            grid.distance[node] = d;
            if d > 0.0 {
                grid.slot_of[node] = grid.unknowns.len() as u32;
                grid.unknowns.push(node);
            }
        }

        for slot in 0..grid.unknowns.len() {
            let node = grid.unknowns[slot];
            let x = grid.position(node);
            let mut arms = [[Arm::Node(node); 2]; 3];
            let mut near = false;
            for a in 0..dim {
                for (side, sign) in [(0usize, -1isize), (1, 1)] {
                    let nb = grid.neighbor(node, a, sign).expect("unknown nodes are strictly inside the box");
                    if grid.slot_of[nb] != NO_SLOT {
                        arms[a][side] = Arm::Node(nb);
                    } else {
                        near = true;
                        let y = grid.position(nb);
                        let theta = domain.segment_crossing(&x, &y)?;
                        let mut bp = x;
                        bp[a] += sign as f64 * theta * spacing;
                        grid.boundary_points.push(bp);
                        arms[a][side] = Arm::Boundary { theta, point: grid.boundary_points.len() - 1 };
                    }
                }
            }
            grid.class[node] = if near { NodeClass::NearBoundary } else { NodeClass::Interior };
            grid.arms.push(arms);
        }

        let short_arm = |arms: &[[Arm; 2]; 3], dim: usize| {
            arms[..dim].iter().flatten().any(|arm| arm.theta() < THETA_PIN)
        };
        for slot in 0..grid.unknowns.len() {
            let arms = grid.arms[slot];
            if !short_arm(&arms, dim) {
                grid.pins.push(None);
                continue;
            }
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for a in 0..dim {
                for side in 0..2 {
                    if let Arm::Boundary { theta, point } = arms[a][side] {
                        if theta < THETA_PIN {
                            candidates.push((theta, point, grid.arms[slot][a][1 - side].node().unwrap_or(usize::MAX)));
                        }
                    }
                }
            }
            candidates.sort_by(|p, q| p.0.total_cmp(&q.0));
            let free = |node: usize| {
                node != usize::MAX && {
                    let s = grid.slot_of[node] as usize;
                    !short_arm(&grid.arms[s], dim)
                }
            };
            let pin = candidates
                .iter()
                .find(|c| free(c.2))
                .map(|&(theta, point, opp)| Pin { point, opposite: Some(opp), weight: theta / (1.0 + theta) })
                .unwrap_or_else(|| Pin { point: candidates[0].1, opposite: None, weight: 0.0 });
            grid.pins.push(Some(pin));
        }

        let cell = spacing.powi(dim as i32);
        for slot in 0..grid.unknowns.len() {
            let arms = grid.arms[slot];
            let mut w = cell;
            for arm in arms.iter().take(dim) {
                let side = |arm: &Arm| match arm {
                    Arm::Node(_) => 0.5,
                    Arm::Boundary { theta, .. } => *theta,
                };
                w *= side(&arm[0]) + side(&arm[1]);
            }
            grid.weights.push(w);
        }

        for slot in 0..grid.unknowns.len() {
            let node = grid.unknowns[slot];
            for a in 0..dim {
                for b in (a + 1)..dim {
                    let entries = grid.mixed_stencil(node, a, b);
                    grid.mixed_entries.extend(entries);
                    grid.mixed_offsets.push(grid.mixed_entries.len());
                }
            }
        }
        Ok(grid)
    }

    fn mixed_stencil(&self, node: usize, a: usize, b: usize) -> Vec<(usize, f64)> {
        let h2 = self.spacing * self.spacing;
        let diag = |sa: isize, sb: isize| self.neighbor(node, a, sa).and_then(|n| self.neighbor(n, b, sb));
        let known = |n: Option<usize>| n.filter(|&n| self.slot_of[n] != NO_SLOT);
        let corners: Vec<Option<usize>> =
            [(1, 1), (-1, -1), (1, -1), (-1, 1)].iter().map(|&(sa, sb)| known(diag(sa, sb))).collect();
        if corners.iter().all(Option::is_some) {
            let c = 0.25 / h2;
            return vec![
                (corners[0].unwrap(), c),
                (corners[1].unwrap(), c),
                (corners[2].unwrap(), -c),
                (corners[3].unwrap(), -c),
            ];
        }
        let mut quads = Vec::new();
        for (sa, sb) in [(1isize, 1isize), (-1, -1), (1, -1), (-1, 1)] {
            let na = known(self.neighbor(node, a, sa));
            let nb = known(self.neighbor(node, b, sb));
            let nd = known(diag(sa, sb));
            if let (Some(na), Some(nb), Some(nd)) = (na, nb, nd) {
                quads.push((sa * sb) as f64 / h2);
                quads.push(na as f64);
                quads.push(nb as f64);
                quads.push(nd as f64);
            }
        }
        let k = quads.len() / 4;
        if k == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(4 * k);
        for q in quads.chunks(4) {
            let s = q[0] / k as f64;
            out.push((q[3] as usize, s));
            out.push((q[1] as usize, -s));
            out.push((q[2] as usize, -s));
            out.push((node, s));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Spacing exceeds one eighth of the smallest shape parameter.
    pub fn is_coarse(&self) -> bool {
        self.coarse
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn node_count(&self) -> usize {
        self.class.len()
    }

    pub fn lower_corner(&self) -> Point {
        self.lo
    }

    pub fn upper_corner(&self) -> Point {
        let mut hi = self.lo;
        for a in 0..self.dim {
            hi[a] += (self.counts[a] - 1) as f64 * self.spacing;
        }
        hi
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.counts[1] + ijk[1]) * self.counts[2] + ijk[2]
    }

    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let k = node % self.counts[2];
        let rest = node / self.counts[2];
        [rest / self.counts[1], rest % self.counts[1], k]
    }

    pub fn position(&self, node: usize) -> Point {
        let ijk = self.multi_index(node);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lo[a] + ijk[a] as f64 * self.spacing;
        }
        x
    }

    /// Neighbor index one step along `axis` in direction `sign`, if inside the box.
    pub fn neighbor(&self, node: usize, axis: usize, sign: isize) -> Option<usize> {
        let mut ijk = self.multi_index(node);
        let v = ijk[axis] as isize + sign;
        if v < 0 || v >= self.counts[axis] as isize {
            return None;
        }
        ijk[axis] = v as usize;
        Some(self.index(ijk))
    }

    pub fn class(&self, node: usize) -> NodeClass {
        self.class[node]
    }

    pub fn distance(&self, node: usize) -> f64 {
        self.distance[node]
    }

    /// Nodes carrying unknowns (interior and near-boundary), ascending.
    pub fn unknowns(&self) -> &[usize] {
        &self.unknowns
    }

    pub fn slot(&self, node: usize) -> Option<usize> {
        let s = self.slot_of[node];
        (s != NO_SLOT).then_some(s as usize)
    }

    pub fn arms(&self, slot: usize) -> &[[Arm; 2]; 3] {
        &self.arms[slot]
    }

    pub fn pin(&self, slot: usize) -> Option<&Pin> {
        self.pins[slot].as_ref()
    }

    /// Quadrature weight of an unknown.
    pub fn weight(&self, slot: usize) -> f64 {
        self.weights[slot]
    }

    /// Quadrature estimate of the domain measure.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Linear combination giving the mixed derivative for the `pair`-th axis
    /// pair (pairs ordered (0,1), (0,2), (1,2)).
    pub fn mixed(&self, slot: usize, pair: usize) -> &[(usize, f64)] {
        let npairs = self.pair_count();
        let k = slot * npairs + pair;
        &self.mixed_entries[self.mixed_offsets[k]..self.mixed_offsets[k + 1]]
    }

    pub fn pair_count(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    pub fn boundary_points(&self) -> &[Point] {
        &self.boundary_points
    }

    pub fn interior_count(&self) -> usize {
        self.class.iter().filter(|c| **c == NodeClass::Interior).count()
    }

    pub fn near_boundary_count(&self) -> usize {
        self.class.iter().filter(|c| **c == NodeClass::NearBoundary).count()
    }
}

impl Arm {
    pub fn node(&self) -> Option<usize> {
        match *self {
            Arm::Node(n) => Some(n),
            Arm::Boundary { .. } => None,
        }
    }
}
