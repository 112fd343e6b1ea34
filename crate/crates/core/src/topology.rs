//! Node placement, neighbour sets and round-trip times.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: duplicate node id {id:?}")]
    DuplicateId { line: u64, id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How CSV coordinates are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordMode {
    /// `id,x_meters,y_meters`
    #[default]
    Meters,
    /// `id,lon_deg,lat_deg`, projected equirectangularly around `ref_lat`
    /// (defaults to the mean latitude of the file).
    LonLat { ref_lat: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub id: String,
    pub xy: [f64; 2],
}

/// Reads `id,x,y` rows. Blank lines, `#` comments and an `id,...` header are
/// skipped.
pub fn load_positions<R: Read>(reader: R, mode: CoordMode) -> Result<Vec<Position>, TopologyError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut raw = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| TopologyError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case("id")) {
            continue;
        }
        if rec.len() != 3 {
            return Err(TopologyError::Parse {
                line,
                msg: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let id = rec[0].to_string();
        let parse = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TopologyError::Parse {
                    line,
                    msg: format!("not a number: {s:?}"),
                })
        };
        let a = parse(&rec[1])?;
        let b = parse(&rec[2])?;
        if !seen.insert(id.clone()) {
            return Err(TopologyError::DuplicateId { line, id });
        }
        raw.push((id, a, b));
    }
    Ok(match mode {
        CoordMode::Meters => raw.into_iter().map(|(id, x, y)| Position { id, xy: [x, y] }).collect(),
        CoordMode::LonLat { ref_lat } => {
            let lat0 = ref_lat.unwrap_or_else(|| raw.iter().map(|r| r.2).sum::<f64>() / raw.len().max(1) as f64);
            let lon0 = raw.first().map(|r| r.1).unwrap_or(0.0);
            let lat_origin = raw.first().map(|r| r.2).unwrap_or(0.0);
            let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
            let cos0 = lat0.to_radians().cos();
            raw.into_iter()
                .map(|(id, lon, lat)| Position {
                    id,
                    xy: [k * (lon - lon0) * cos0, k * (lat - lat_origin)],
                })
                .collect()
        }
    })
}

pub fn load_positions_file(path: &Path, mode: CoordMode) -> Result<Vec<Position>, TopologyError> {
    let f = std::fs::File::open(path)?;
    load_positions(f, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NeighborRule {
    /// No cooperation.
    None,
    /// The `k` closest nodes, ties broken by lower index.
    KNearest { k: usize },
    /// Every node within `meters`.
    Radius { meters: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RttModel {
    Constant {
        seconds: f64,
    },
    /// `base + per_meter * distance`
    Linear {
        base: f64,
        per_meter: f64,
    },
}

impl Default for RttModel {
    fn default() -> Self {
        RttModel::Constant { seconds: 0.020 }
    }
}

impl RttModel {
    pub fn rtt(&self, distance: f64) -> f64 {
        match *self {
            RttModel::Constant { seconds } => seconds,
            RttModel::Linear { base, per_meter } => base + per_meter * distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub positions: Vec<[f64; 2]>,
    pub rule: NeighborRule,
    /// Sender-side neighbour sets.
    pub neighbors: Vec<Vec<usize>>,
    /// Symmetric; zero diagonal; `INFINITY` where neither node lists the other.
    pub rtt: Vec<Vec<f64>>,
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn build_neighbors(positions: &[[f64; 2]], rule: NeighborRule, rtt: RttModel) -> Topology {
    let n = positions.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| match rule {
            NeighborRule::None => Vec::new(),
            NeighborRule::Radius { meters } => (0..n)
                .filter(|&j| j != i && distance(positions[i], positions[j]) <= meters)
                .collect(),
            NeighborRule::KNearest { k } => {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                others.sort_by(|&a, &b| {
                    distance(positions[i], positions[a])
                        .total_cmp(&distance(positions[i], positions[b]))
                        .then(a.cmp(&b))
                });
                others.truncate(k);
                others.sort_unstable();
                others
            }
        })
        .collect();
    let mut matrix = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in matrix.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            let t = rtt.rtt(distance(positions[i], positions[j]));
            matrix[i][j] = t;
            matrix[j][i] = t;
        }
    }
    Topology {
        positions: positions.to_vec(),
        rule,
        neighbors,
        rtt: matrix,
    }
}

impl Topology {
    /// Groups of nodes connected through any sender-side link, each sorted,
    /// ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        components(&self.neighbors)
    }
}

/// Connected components of the undirected closure of `neighbors`.
pub fn components(neighbors: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = neighbors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(i);
    }
    groups
}

/// Ring densities for [`synth_topology`], from the centre outwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    /// Radius of the whole field, meters.
    pub field_radius: f64,
    /// Relative areal density of each equal-width ring, centre first.
    pub ring_density: Vec<f64>,
}

impl Default for DensityProfile {
    /// Five areas from dense urban core to sparse rural edge.
    fn default() -> Self {
        Self {
            field_radius: 5_000.0,
            ring_density: vec![16.0, 8.0, 4.0, 2.0, 1.0],
        }
    }
}

impl DensityProfile {
    pub fn ring_width(&self) -> f64 {
        self.field_radius / self.ring_density.len() as f64
    }

    /// Ring index of a point at distance `r` from the centre.
    pub fn ring_of(&self, r: f64) -> usize {
        ((r / self.ring_width()) as usize).min(self.ring_density.len() - 1)
    }
}

/// Random placements whose density falls off ring by ring from the centre.
/// A single node sits at the centre.
pub fn synth_topology(n: usize, profile: &DensityProfile, seed: u64) -> Vec<[f64; 2]> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![[0.0, 0.0]];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = profile.ring_width();
    let weights: Vec<f64> = profile
        .ring_density
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let (r0, r1) = (j as f64 * w, (j + 1) as f64 * w);
            d * (r1 * r1 - r0 * r0)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|x| x / total).collect();
    (0..n)
        .map(|_| {
            let ring = crate::env::sample_index(&probs, &mut rng);
            let (r0, r1) = (ring as f64 * w, (ring + 1) as f64 * w);
            // uniform over the annulus area
            let u: f64 = rng.gen();
            let r = (r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt();
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            [r * phi.cos(), r * phi.sin()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_rows_and_skips_header() {
        let csv = "id,x,y\n# comment\na,0,0\nb,100,0\nc,0,250.5\n";
        let p = load_positions(csv.as_bytes(), CoordMode::Meters).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[2].xy, [0.0, 250.5]);
    }

    #[test]
    fn duplicate_id_reports_line() {
        let csv = "a,0,0\nb,1,1\na,2,2\n";
        match load_positions(csv.as_bytes(), CoordMode::Meters) {
            Err(TopologyError::DuplicateId { line, id }) => {
                assert_eq!(line, 3);
                assert_eq!(id, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "a,0,0\nb,zero,1\n";
        match load_positions(csv.as_bytes(), CoordMode::Meters) {
            Err(TopologyError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lon_lat_projection_at_dublin_latitude() {
        let csv = "a,-6.26,53.0\nb,-6.25,53.0\n";
        let p = load_positions(csv.as_bytes(), CoordMode::LonLat { ref_lat: None }).unwrap();
        let d = distance(p[0].xy, p[1].xy);
        // 0.01 deg of longitude at 53 deg: R * 0.01 * pi/180 * cos(53 deg)
        let expected = EARTH_RADIUS_M * 0.01f64.to_radians() * 53f64.to_radians().cos();
        assert!((d - expected).abs() < 1e-6);
        assert!((d - 666.0).abs() / 666.0 < 0.01, "{d}");
    }

    #[test]
    fn k_nearest_tie_goes_to_lower_index() {
        let t = build_neighbors(
            &[[0.0, 0.0], [100.0, 0.0], [200.0, 0.0]],
            NeighborRule::KNearest { k: 1 },
            RttModel::default(),
        );
        assert_eq!(t.neighbors[1], vec![0]);
        assert_eq!(t.neighbors[0], vec![1]);
        assert_eq!(t.neighbors[2], vec![1]);
    }

    #[test]
    fn radius_cluster_is_complete_with_constant_rtt() {
        // equilateral triangle of side 400 m
        let h = 400.0 * 3f64.sqrt() / 2.0;
        let t = build_neighbors(
            &[[0.0, 0.0], [400.0, 0.0], [200.0, h]],
            NeighborRule::Radius { meters: 500.0 },
            RttModel::Constant { seconds: 0.020 },
        );
        for i in 0..3 {
            assert_eq!(t.neighbors[i].len(), 2);
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 0.020 };
                assert_eq!(t.rtt[i][j], expect);
            }
        }
    }

    #[test]
    fn radius_rule_is_symmetric() {
        let pos = synth_topology(60, &DensityProfile::default(), 4);
        let t = build_neighbors(&pos, NeighborRule::Radius { meters: 800.0 }, RttModel::default());
        for i in 0..pos.len() {
            assert!(!t.neighbors[i].contains(&i));
            for &j in &t.neighbors[i] {
                assert!(t.neighbors[j].contains(&i));
                assert_eq!(t.rtt[i][j], t.rtt[j][i]);
            }
        }
    }

    #[test]
    fn linear_rtt_grows_with_distance() {
        let t = build_neighbors(
            &[[0.0, 0.0], [100.0, 0.0], [300.0, 0.0]],
            NeighborRule::Radius { meters: 1000.0 },
            RttModel::Linear {
                base: 0.005,
                per_meter: 1e-4,
            },
        );
        assert!((t.rtt[0][1] - 0.015).abs() < 1e-12);
        assert!((t.rtt[0][2] - 0.035).abs() < 1e-12);
    }

    #[test]
    fn components_follow_links() {
        let groups = components(&[vec![1], vec![], vec![], vec![2]]);
        assert_eq!(groups, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn synthetic_layouts() {
        let profile = DensityProfile::default();
        assert_eq!(synth_topology(1, &profile, 9), vec![[0.0, 0.0]]);
        assert_eq!(synth_topology(50, &profile, 9), synth_topology(50, &profile, 9));
    }

    #[test]
    fn centre_is_denser_than_edge() {
        let profile = DensityProfile::default();
        let w = profile.ring_width();
        let last = profile.ring_density.len() - 1;
        let inner_area = std::f64::consts::PI * w * w;
        let outer_area = std::f64::consts::PI * (profile.field_radius.powi(2) - (last as f64 * w).powi(2));
        let (mut inner, mut outer) = (0usize, 0usize);
        for seed in 0..20 {
            for p in synth_topology(400, &profile, seed) {
                let ring = profile.ring_of((p[0] * p[0] + p[1] * p[1]).sqrt());
                if ring == 0 {
                    inner += 1;
                } else if ring == last {
                    outer += 1;
                }
            }
        }
        let ratio = (inner as f64 / inner_area) / (outer as f64 / outer_area);
        assert!(ratio >= 4.0, "density ratio {ratio}");
    }
}
