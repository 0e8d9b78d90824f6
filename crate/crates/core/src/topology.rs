//! Hexagonal cell layout, node placement and grouping of cells into regions.
//!
//! Cells use axial coordinates on a flat-top hexagon layout. Every cell gets
//! one cluster node at its centroid and a fixed number of sensors sampled
//! uniformly inside the hexagon. Cells are grouped into triads by a fixed
//! index-3 sublattice (basis `(2,-1)` and `(1,1)`), so every full region is
//! three mutually adjacent cells meeting at a common corner. Cells whose triad
//! partners fall outside the grid form residual regions of one or two cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TopologyError;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Axial hex coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HexCoord {
    pub q: i32,
    pub r: i32,
}

impl HexCoord {
    pub const ORIGIN: HexCoord = HexCoord { q: 0, r: 0 };

    pub const fn new(q: i32, r: i32) -> Self {
        Self { q, r }
    }

    pub fn neighbors(self) -> [HexCoord; 6] {
        const DIRS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];
        DIRS.map(|(dq, dr)| HexCoord::new(self.q + dq, self.r + dr))
    }

    /// Centroid of this cell in meters for the given circumradius.
    pub fn center(self, cell_radius: f64) -> Point {
        Point {
            x: cell_radius * 1.5 * f64::from(self.q),
            y: cell_radius * SQRT3 * (f64::from(self.r) + f64::from(self.q) / 2.0),
        }
    }
}

impl fmt::Display for HexCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.q, self.r)
    }
}

/// Hex-step distance between two cells.
pub fn hex_distance(a: HexCoord, b: HexCoord) -> u32 {
    let dq = i64::from(a.q) - i64::from(b.q);
    let dr = i64::from(a.r) - i64::from(b.r);
    ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u32
}

/// Position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Containment test for a flat-top hexagon. Boundary points count as inside.
pub fn point_in_hexagon(p: Point, center: Point, cell_radius: f64) -> bool {
    let eps = 1e-9 * cell_radius;
    let dx = (p.x - center.x).abs();
    let dy = (p.y - center.y).abs();
    dy <= SQRT3 / 2.0 * cell_radius + eps && SQRT3 * dx + dy <= SQRT3 * cell_radius + eps
}

/// A centered hexagonal arrangement of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HexGrid {
    pub rings: u32,
    pub cell_radius: f64,
    pub cells: BTreeSet<HexCoord>,
}

impl HexGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: HexCoord) -> bool {
        self.cells.contains(&cell)
    }

    /// Radius of the smallest origin-centered circle enclosing every hexagon.
    pub fn bounding_radius(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.center(self.cell_radius).distance(Point::default()))
            .fold(0.0, f64::max)
            + self.cell_radius
    }

    /// Cell whose hexagon contains `p`; on shared edges the smallest `(q, r)` wins.
    pub fn containing_cell(&self, p: Point) -> Option<HexCoord> {
        let r = self.cell_radius;
        let fq = (2.0 / 3.0 * p.x) / r;
        let fr = (-p.x / 3.0 + SQRT3 / 3.0 * p.y) / r;
        let rounded = cube_round(fq, fr);
        std::iter::once(rounded)
            .chain(rounded.neighbors())
            .filter(|c| self.contains(*c) && point_in_hexagon(p, c.center(r), r))
            .min()
    }
}

fn cube_round(fq: f64, fr: f64) -> HexCoord {
    let fs = -fq - fr;
    let (mut q, mut r, s) = (fq.round(), fr.round(), fs.round());
    let (dq, dr, ds) = ((q - fq).abs(), (r - fr).abs(), (s - fs).abs());
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    HexCoord::new(q as i32, r as i32)
}

/// All cells within `rings` hex steps of the origin.
pub fn build_hex_grid(rings: u32, cell_radius: f64) -> Result<HexGrid, TopologyError> {
    if !(cell_radius > 0.0 && cell_radius.is_finite()) {
        return Err(TopologyError::InvalidCellRadius(cell_radius));
    }
    let n = rings as i32;
    let mut cells = BTreeSet::new();
    for q in -n..=n {
        for r in (-n).max(-q - n)..=n.min(-q + n) {
            cells.insert(HexCoord::new(q, r));
        }
    }
    Ok(HexGrid {
        rings,
        cell_radius,
        cells,
    })
}

/// Identifier of a node, dense from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionId(pub u32);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// What an alert or an attack is about: a single node or a whole cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subject {
    Node(NodeId),
    Cell(HexCoord),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Node(n) => write!(f, "node{n}"),
            Subject::Cell(c) => write!(f, "cell{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeRole {
    Sensor,
    ClusterNode,
    RegionalNode,
    BaseStation,
}

impl NodeRole {
    pub const ALL: [NodeRole; 4] = [
        NodeRole::Sensor,
        NodeRole::ClusterNode,
        NodeRole::RegionalNode,
        NodeRole::BaseStation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Sensor => "sensor",
            NodeRole::ClusterNode => "cluster",
            NodeRole::RegionalNode => "regional",
            NodeRole::BaseStation => "base",
        }
    }

    /// Monitor nodes carry the detection modules; sensors never do.
    pub fn is_monitor(self) -> bool {
        !matches!(self, NodeRole::Sensor)
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub role: NodeRole,
    /// Owning cell for sensors and cluster nodes.
    pub cell: Option<HexCoord>,
    pub region: Option<RegionId>,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellInfo {
    pub coord: HexCoord,
    /// Position of the cell in ascending coordinate order; used for schedule phases.
    pub index: usize,
    pub cluster: NodeId,
    pub sensors: Vec<NodeId>,
    pub region: RegionId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: RegionId,
    pub cells: Vec<HexCoord>,
    pub regional: NodeId,
}

/// The constructed four-layer world. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    grid: HexGrid,
    nodes: Vec<Node>,
    cells: BTreeMap<HexCoord, CellInfo>,
    regions: BTreeMap<RegionId, Region>,
    base_station: NodeId,
}

/// Region key under the triad tiling: the lattice point `L` with `cell - L`
/// in `{(0,0), (1,0), (0,1)}`.
fn triad_key(c: HexCoord) -> HexCoord {
    match (c.q - c.r).rem_euclid(3) {
        0 => c,
        1 => HexCoord::new(c.q - 1, c.r),
        _ => HexCoord::new(c.q, c.r - 1),
    }
}

/// Partition the grid's cells into triads (plus edge residues).
pub fn group_regions(grid: &HexGrid) -> BTreeMap<RegionId, Vec<HexCoord>> {
    let mut by_key: BTreeMap<HexCoord, Vec<HexCoord>> = BTreeMap::new();
    for &cell in &grid.cells {
        by_key.entry(triad_key(cell)).or_default().push(cell);
    }
    by_key
        .into_values()
        .enumerate()
        .map(|(i, cells)| (RegionId(i as u32), cells))
        .collect()
}

fn sample_in_hexagon(rng: &mut ChaCha8Rng, center: Point, cell_radius: f64) -> Point {
    let half_h = SQRT3 / 2.0 * cell_radius;
    loop {
        let p = Point::new(
            center.x + rng.random_range(-cell_radius..cell_radius),
            center.y + rng.random_range(-half_h..half_h),
        );
        if point_in_hexagon(p, center, cell_radius) {
            return p;
        }
    }
}

/// Place one cluster node per cell, `sensors_per_cell` sensors inside each
/// hexagon, one regional node per region and the base station.
pub fn place_nodes(grid: &HexGrid, sensors_per_cell: u32, seed: u64) -> Result<Topology, TopologyError> {
    if grid.is_empty() {
        return Err(TopologyError::EmptyGrid);
    }
    if sensors_per_cell == 0 {
        return Err(TopologyError::NoSensors);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(crate::rng::STREAM_PLACEMENT);

    let regions_cells = group_regions(grid);
    let mut region_of = BTreeMap::new();
    for (id, cells) in &regions_cells {
        for c in cells {
            region_of.insert(*c, *id);
        }
    }

    let r = grid.cell_radius;
    let mut nodes = Vec::new();
    let mut cells = BTreeMap::new();
    let mut next_id = 0u32;
    let mut alloc = || {
        let id = NodeId(next_id);
        next_id += 1;
        id
    };
    for (index, &coord) in grid.cells.iter().enumerate() {
        let region = region_of[&coord];
        let center = coord.center(r);
        let cluster = alloc();
        nodes.push(Node {
            id: cluster,
            role: NodeRole::ClusterNode,
            cell: Some(coord),
            region: Some(region),
            position: center,
        });
        let mut sensors = Vec::with_capacity(sensors_per_cell as usize);
        for _ in 0..sensors_per_cell {
            let id = alloc();
            nodes.push(Node {
                id,
                role: NodeRole::Sensor,
                cell: Some(coord),
                region: Some(region),
                position: sample_in_hexagon(&mut rng, center, r),
            });
            sensors.push(id);
        }
        cells.insert(
            coord,
            CellInfo {
                coord,
                index,
                cluster,
                sensors,
                region,
            },
        );
    }

    let mut regions = BTreeMap::new();
    for (id, member_cells) in regions_cells {
        let n = member_cells.len() as f64;
        let (sx, sy) = member_cells.iter().fold((0.0, 0.0), |(sx, sy), c| {
            let p = c.center(r);
            (sx + p.x, sy + p.y)
        });
        let regional = alloc();
        nodes.push(Node {
            id: regional,
            role: NodeRole::RegionalNode,
            cell: None,
            region: Some(id),
            position: Point::new(sx / n, sy / n),
        });
        regions.insert(
            id,
            Region {
                id,
                cells: member_cells,
                regional,
            },
        );
    }

    let base_station = alloc();
    nodes.push(Node {
        id: base_station,
        role: NodeRole::BaseStation,
        cell: None,
        region: None,
        position: Point::new(3.0 * grid.bounding_radius(), 0.0),
    });

    Ok(Topology {
        grid: grid.clone(),
        nodes,
        cells,
        regions,
        base_station,
    })
}

impl Topology {
    /// Convenience: build the grid and place nodes in one step.
    pub fn generate(rings: u32, cell_radius: f64, sensors_per_cell: u32, seed: u64) -> Result<Self, TopologyError> {
        let grid = build_hex_grid(rings, cell_radius)?;
        place_nodes(&grid, sensors_per_cell, seed)
    }

    pub fn grid(&self) -> &HexGrid {
        &self.grid
    }

    pub fn cell_radius(&self) -> f64 {
        self.grid.cell_radius
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index())
    }

    pub fn role(&self, id: NodeId) -> Option<NodeRole> {
        self.node(id).map(|n| n.role)
    }

    pub fn position(&self, id: NodeId) -> Point {
        self.nodes[id.index()].position
    }

    pub fn cells(&self) -> impl Iterator<Item = &CellInfo> {
        self.cells.values()
    }

    pub fn cell(&self, coord: HexCoord) -> Option<&CellInfo> {
        self.cells.get(&coord)
    }

    pub fn cell_of(&self, id: NodeId) -> Option<HexCoord> {
        self.node(id).and_then(|n| n.cell)
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }

    pub fn region(&self, id: RegionId) -> Option<&Region> {
        self.regions.get(&id)
    }

    /// Regional node responsible for a cell.
    pub fn regional_of_cell(&self, coord: HexCoord) -> Option<NodeId> {
        let region = self.cells.get(&coord)?.region;
        Some(self.regions[&region].regional)
    }

    pub fn base_station(&self) -> NodeId {
        self.base_station
    }

    pub fn nodes_with_role(&self, role: NodeRole) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    pub fn count_role(&self, role: NodeRole) -> usize {
        self.nodes_with_role(role).count()
    }

    pub fn containing_cell(&self, p: Point) -> Option<HexCoord> {
        self.grid.containing_cell(p)
    }

    /// One node per line: `id role q r x y region`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# id role q r x y region\n");
        for n in &self.nodes {
            let (q, r) = match n.cell {
                Some(c) => (c.q.to_string(), c.r.to_string()),
                None => ("-".into(), "-".into()),
            };
            let region = n.region.map_or_else(|| "-".to_string(), |r| r.to_string());
            let _ = writeln!(
                out,
                "{} {} {} {} {:.3} {:.3} {}",
                n.id, n.role, q, r, n.position.x, n.position.y, region
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(build_hex_grid(0, 10.0).unwrap().len(), 1);
        assert_eq!(build_hex_grid(1, 10.0).unwrap().len(), 7);
        // brute-force enumeration over a bounding box
        let brute = (-3..=3)
            .flat_map(|q| (-3..=3).map(move |r| HexCoord::new(q, r)))
            .filter(|c| hex_distance(*c, HexCoord::ORIGIN) <= 3)
            .count();
        assert_eq!(brute, 37);
        assert_eq!(build_hex_grid(3, 10.0).unwrap().len(), 37);
    }

    #[test]
    fn rejects_bad_radius() {
        assert!(build_hex_grid(1, 0.0).is_err());
        assert!(build_hex_grid(1, f64::NAN).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(hex_distance(HexCoord::ORIGIN, HexCoord::ORIGIN), 0);
        assert_eq!(hex_distance(HexCoord::ORIGIN, HexCoord::new(1, 0)), 1);
        assert_eq!(hex_distance(HexCoord::ORIGIN, HexCoord::new(2, -1)), 2);
    }

    #[test]
    fn neighbor_centers_are_sqrt3_r_apart() {
        let r = 30.0;
        for n in HexCoord::ORIGIN.neighbors() {
            let d = n.center(r).distance(HexCoord::ORIGIN.center(r));
            assert!((d - SQRT3 * r).abs() < 1e-9);
        }
    }

    #[test]
    fn seven_cell_regions() {
        // Tiling by hand: (q - r) mod 3 picks the offset inside the triad.
        let grid = build_hex_grid(1, 10.0).unwrap();
        let regions = group_regions(&grid);
        let mut sizes: Vec<usize> = regions.values().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 2, 3]);
        let center_triad = regions
            .values()
            .find(|cells| cells.contains(&HexCoord::ORIGIN))
            .unwrap();
        let mut got = center_triad.clone();
        got.sort();
        assert_eq!(got, vec![HexCoord::new(0, 0), HexCoord::new(0, 1), HexCoord::new(1, 0)]);
    }

    #[test]
    fn degenerate_grid_single_region() {
        let grid = build_hex_grid(0, 10.0).unwrap();
        let regions = group_regions(&grid);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[&RegionId(0)], vec![HexCoord::ORIGIN]);
    }

    #[test]
    fn region_members_pairwise_adjacent() {
        for rings in 0..=5 {
            let grid = build_hex_grid(rings, 10.0).unwrap();
            for cells in group_regions(&grid).values() {
                assert!((1..=3).contains(&cells.len()));
                for a in cells {
                    for b in cells {
                        assert!(hex_distance(*a, *b) <= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn placement_counts_and_roles() {
        let topo = Topology::generate(1, 30.0, 4, 11).unwrap();
        assert_eq!(topo.count_role(NodeRole::ClusterNode), 7);
        assert_eq!(topo.count_role(NodeRole::Sensor), 28);
        assert_eq!(topo.count_role(NodeRole::RegionalNode), topo.regions().count());
        assert_eq!(topo.count_role(NodeRole::BaseStation), 1);
        for cell in topo.cells() {
            assert_eq!(topo.position(cell.cluster), cell.coord.center(30.0));
        }
    }

    #[test]
    fn placement_rejects_zero_sensors() {
        let grid = build_hex_grid(1, 30.0).unwrap();
        assert!(matches!(place_nodes(&grid, 0, 1), Err(TopologyError::NoSensors)));
    }

    #[test]
    fn placement_is_deterministic() {
        let a = Topology::generate(2, 30.0, 5, 99).unwrap();
        let b = Topology::generate(2, 30.0, 5, 99).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = Topology::generate(2, 30.0, 5, 100).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn sensors_inside_own_cell() {
        for seed in 0..5 {
            let topo = Topology::generate(2, 30.0, 8, seed).unwrap();
            for n in topo.nodes_with_role(NodeRole::Sensor) {
                let cell = n.cell.unwrap();
                assert!(point_in_hexagon(n.position, cell.center(30.0), 30.0));
            }
        }
    }

    #[test]
    fn base_station_outside_grid() {
        let topo = Topology::generate(2, 30.0, 2, 1).unwrap();
        let base = topo.position(topo.base_station());
        let bound = topo.grid().bounding_radius();
        assert!((base.x - 3.0 * bound).abs() < 1e-9 && base.y == 0.0);
        assert_eq!(topo.containing_cell(base), None);
    }

    #[test]
    fn containing_cell_examples() {
        let topo = Topology::generate(2, 30.0, 2, 3).unwrap();
        for cell in topo.cells() {
            assert_eq!(topo.containing_cell(cell.coord.center(30.0)), Some(cell.coord));
        }
        // shared edge midpoint between origin and (1,0): both contain, smaller wins
        let mid = Point::new(
            (HexCoord::new(0, 0).center(30.0).x + HexCoord::new(1, 0).center(30.0).x) / 2.0,
            (HexCoord::new(0, 0).center(30.0).y + HexCoord::new(1, 0).center(30.0).y) / 2.0,
        );
        assert_eq!(topo.containing_cell(mid), Some(HexCoord::new(0, 0)));
    }

    #[test]
    fn text_dump_has_one_line_per_node() {
        let topo = Topology::generate(1, 30.0, 2, 3).unwrap();
        let text = topo.to_text();
        assert_eq!(text.lines().count(), topo.nodes().len() + 1);
        assert!(text.lines().nth(1).unwrap().starts_with("0 cluster -1 0"));
    }
}
