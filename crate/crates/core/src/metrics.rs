//! Correspondence and segmentation evaluation.
//!
//! Geodesic errors are shortest-path lengths on a caller-supplied vertex graph
//! (Dijkstra over the edge graph). Point similarity is `exp(-g²/2κ²)`; curve
//! quality is the normalised area under the fraction-of-points-below-threshold
//! curve, computed in closed form.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::iuv::BinaryMask;

/// κ used when none is given.
pub const DEFAULT_KAPPA: f64 = 0.255;
/// Default AUC thresholds in meters (10 cm and 30 cm).
pub const DEFAULT_AUC_THRESHOLDS: [f64; 2] = [0.10, 0.30];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("vertex {vertex} out of range (mesh has {count})")]
    VertexOutOfRange { vertex: usize, count: usize },
    #[error("vertex {0} is unreachable from vertex {1}")]
    Unreachable(usize, usize),
    #[error("invalid edge {0}-{1} with weight {2}")]
    InvalidEdge(usize, usize, f64),
    #[error("error set is empty")]
    EmptyErrorSet,
    #[error("invalid error value {0}")]
    InvalidError(f64),
    #[error("list is empty")]
    EmptyList,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("mesh line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Undirected weighted vertex graph standing in for the body surface.
#[derive(Debug, Clone)]
pub struct MeshGeodesic {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl MeshGeodesic {
    pub fn new(vertex_count: usize, edges: &[(usize, usize, f64)]) -> Result<Self, MetricsError> {
        let mut adjacency = vec![Vec::new(); vertex_count];
        for &(i, j, w) in edges {
            for v in [i, j] {
                if v >= vertex_count {
                    return Err(MetricsError::VertexOutOfRange {
                        vertex: v,
                        count: vertex_count,
                    });
                }
            }
            if i == j || !w.is_finite() || w <= 0.0 {
                return Err(MetricsError::InvalidEdge(i, j, w));
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        Ok(Self { adjacency })
    }

    /// Parses `v <count>` followed by `e <i> <j> <w>` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut count = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| MetricsError::Parse {
                line: line_no,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["v", n] => {
                    if count.is_some() {
                        return Err(err("duplicate vertex count"));
                    }
                    count = Some(n.parse::<usize>().map_err(|_| err("bad vertex count"))?);
                }
                ["e", i, j, w] => {
                    if count.is_none() {
                        return Err(err("edge before vertex count"));
                    }
                    edges.push((
                        i.parse().map_err(|_| err("bad vertex index"))?,
                        j.parse().map_err(|_| err("bad vertex index"))?,
                        w.parse().map_err(|_| err("bad weight"))?,
                    ));
                }
                _ => return Err(err("expected `v <count>` or `e <i> <j> <w>`")),
            }
        }
        let count = count.ok_or(MetricsError::Parse {
            line: 0,
            msg: "missing vertex count".into(),
        })?;
        Self::new(count, &edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    fn check(&self, v: usize) -> Result<(), MetricsError> {
        if v >= self.adjacency.len() {
            return Err(MetricsError::VertexOutOfRange {
                vertex: v,
                count: self.adjacency.len(),
            });
        }
        Ok(())
    }

    /// Single-source shortest paths; unreachable vertices are `+∞`.
    pub fn distances_from(&self, source: usize) -> Result<Vec<f64>, MetricsError> {
        self.check(source)?;
        Ok(self.dijkstra(source, None))
    }

    fn dijkstra(&self, source: usize, target: Option<usize>) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(State {
            cost: 0.0,
            vertex: source,
        });
        while let Some(State { cost, vertex }) = heap.pop() {
            if cost > dist[vertex] {
                continue;
            }
            if Some(vertex) == target {
                break;
            }
            for &(next, w) in &self.adjacency[vertex] {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(State {
                        cost: c,
                        vertex: next,
                    });
                }
            }
        }
        dist
    }

    pub fn geodesic_distance(&self, i: usize, j: usize) -> Result<f64, MetricsError> {
        self.check(i)?;
        self.check(j)?;
        let d = self.dijkstra(i, Some(j))[j];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(MetricsError::Unreachable(j, i))
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct State {
    cost: f64,
    vertex: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties by vertex for a stable pop order
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsParams {
    kappa: f64,
}

impl Default for GpsParams {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
        }
    }
}

impl GpsParams {
    pub fn new(kappa: f64) -> Result<Self, MetricsError> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(MetricsError::InvalidParameter(format!("kappa = {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// `exp(-g² / 2κ²)`.
pub fn gps_score(g: f64, params: GpsParams) -> f64 {
    (-(g * g) / (2.0 * params.kappa * params.kappa)).exp()
}

/// Non-empty per-point geodesic errors in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSet(Vec<f64>);

impl ErrorSet {
    pub fn new(errors: Vec<f64>) -> Result<Self, MetricsError> {
        if errors.is_empty() {
            return Err(MetricsError::EmptyErrorSet);
        }
        if let Some(&e) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(MetricsError::InvalidError(e));
        }
        Ok(Self(errors))
    }

    /// One value per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut values = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            values.push(line.parse::<f64>().map_err(|e| MetricsError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Fraction of errors strictly below `t`.
    pub fn correct_ratio(&self, t: f64) -> f64 {
        self.0.iter().filter(|&&e| e < t).count() as f64 / self.0.len() as f64
    }

    /// Mean GPS score over the set.
    pub fn mean_gps(&self, params: GpsParams) -> f64 {
        self.0.iter().map(|&g| gps_score(g, params)).sum::<f64>() / self.0.len() as f64
    }
}

/// `(1/a) ∫₀^a f(t) dt` for the step curve `f`, equal to
/// `Σ max(0, a − e) / (a·M)`.
pub fn auc(errors: &ErrorSet, a: f64) -> Result<f64, MetricsError> {
    if !(a.is_finite() && a > 0.0) {
        return Err(MetricsError::InvalidParameter(format!("a = {a}")));
    }
    let m = errors.0.len() as f64;
    Ok(errors.0.iter().map(|&e| (a - e).max(0.0)).sum::<f64>() / (a * m))
}

/// `|p ∧ g| / |p ∨ g|`, 1 when both are empty.
pub fn iou(p: &BinaryMask, g: &BinaryMask) -> Result<f64, MetricsError> {
    if p.size() != g.size() {
        return Err(MetricsError::DimensionMismatch(p.size(), g.size()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in p.bits().iter().zip(g.bits()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean instance IoU.
pub fn ap_r(instance_ious: &[f64]) -> Result<f64, MetricsError> {
    if instance_ious.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    Ok(instance_ious.iter().sum::<f64>() / instance_ious.len() as f64)
}

/// Fraction of parts whose IoU is at least `threshold`.
pub fn pcp(part_ious: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if part_ious.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "threshold = {threshold}"
        )));
    }
    Ok(part_ious.iter().filter(|&&v| v >= threshold).count() as f64 / part_ious.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn path3() -> MeshGeodesic {
        MeshGeodesic::new(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn geodesic_basics() {
        let m = path3();
        assert_eq!(m.geodesic_distance(1, 1).unwrap(), 0.0);
        assert_eq!(m.geodesic_distance(0, 2).unwrap(), 2.0);
        assert_eq!(
            m.geodesic_distance(0, 3),
            Err(MetricsError::VertexOutOfRange {
                vertex: 3,
                count: 3
            })
        );
        let split = MeshGeodesic::new(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert_eq!(
            split.geodesic_distance(0, 3),
            Err(MetricsError::Unreachable(3, 0))
        );
        assert_eq!(split.distances_from(0).unwrap()[2], f64::INFINITY);
    }

    #[test]
    fn mesh_validation() {
        assert!(matches!(
            MeshGeodesic::new(2, &[(1, 1, 1.0)]),
            Err(MetricsError::InvalidEdge(..))
        ));
        assert!(matches!(
            MeshGeodesic::new(2, &[(0, 1, 0.0)]),
            Err(MetricsError::InvalidEdge(..))
        ));
        assert!(matches!(
            MeshGeodesic::new(2, &[(0, 1, f64::NAN)]),
            Err(MetricsError::InvalidEdge(..))
        ));
        assert!(matches!(
            MeshGeodesic::new(2, &[(0, 2, 1.0)]),
            Err(MetricsError::VertexOutOfRange { .. })
        ));
    }

    #[test]
    fn mesh_parsing() {
        let m = MeshGeodesic::parse("# tiny\nv 3\ne 0 1 0.5\ne 1 2 0.25 # note\n").unwrap();
        assert_eq!(m.geodesic_distance(0, 2).unwrap(), 0.75);
        assert!(matches!(
            MeshGeodesic::parse("e 0 1 1\n"),
            Err(MetricsError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            MeshGeodesic::parse("v 2\ne 0 x 1\n"),
            Err(MetricsError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            MeshGeodesic::parse(""),
            Err(MetricsError::Parse { .. })
        ));
    }

    #[test]
    fn triangle_inequality_spot_checks() {
        let mut rng = SplitMix64::new(8);
        let n = 30;
        let mut edges: Vec<(usize, usize, f64)> =
            (1..n).map(|i| (i - 1, i, 0.1 + rng.next_f64())).collect();
        for _ in 0..60 {
            let (a, b) = (rng.below(n as u64) as usize, rng.below(n as u64) as usize);
            if a != b {
                edges.push((a, b, 0.1 + rng.next_f64()));
            }
        }
        let m = MeshGeodesic::new(n, &edges).unwrap();
        for _ in 0..200 {
            let [a, b, c] = [0; 3].map(|_| rng.below(n as u64) as usize);
            let ab = m.geodesic_distance(a, b).unwrap();
            let bc = m.geodesic_distance(b, c).unwrap();
            let ac = m.geodesic_distance(a, c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn gps_values() {
        let p = GpsParams::default();
        assert_eq!(p.kappa(), 0.255);
        assert_eq!(gps_score(0.0, p), 1.0);
        let s = gps_score(0.300, p);
        assert!((s - 0.5004).abs() <= 0.0005, "{s}");
        let one = GpsParams::new(1.0).unwrap();
        assert!((gps_score((2.0 * 2f64.ln()).sqrt(), one) - 0.5).abs() < 1e-12);
        assert!(GpsParams::new(0.0).is_err());
        assert!(GpsParams::new(-1.0).is_err());
    }

    #[test]
    fn gps_monotonicity() {
        let p = GpsParams::default();
        let mut prev = gps_score(0.0, p);
        for i in 1..100 {
            let s = gps_score(i as f64 * 0.01, p);
            assert!(s < prev);
            prev = s;
        }
        let g = 0.2;
        let mut prev = gps_score(g, GpsParams::new(0.05).unwrap());
        for i in 2..50 {
            let s = gps_score(g, GpsParams::new(i as f64 * 0.05).unwrap());
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn auc_values() {
        let zeros = ErrorSet::new(vec![0.0; 5]).unwrap();
        assert_eq!(auc(&zeros, 0.1).unwrap(), 1.0);
        let big = ErrorSet::new(vec![0.3, 0.5]).unwrap();
        assert_eq!(auc(&big, 0.3).unwrap(), 0.0);
        let e = ErrorSet::new(vec![0.0, 0.10, 0.40]).unwrap();
        assert!((auc(&e, 0.30).unwrap() - 0.5 / 0.9).abs() < 1e-12);
        assert!((auc(&e, 0.30).unwrap() - 0.5556).abs() < 1e-4);
        assert_eq!(ErrorSet::new(vec![]), Err(MetricsError::EmptyErrorSet));
        assert!(ErrorSet::new(vec![-0.1]).is_err());
        assert!(auc(&e, 0.0).is_err());
    }

    #[test]
    fn correct_ratio_is_strict() {
        let e = ErrorSet::new(vec![0.1, 0.2]).unwrap();
        assert_eq!(e.correct_ratio(0.1), 0.0);
        assert_eq!(e.correct_ratio(0.1000001), 0.5);
    }

    #[test]
    fn auc_inflation_never_increases() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..100 {
            let v: Vec<f64> = (0..10).map(|_| rng.next_f64() * 0.5).collect();
            let a = 0.05 + rng.next_f64() * 0.4;
            let base = auc(&ErrorSet::new(v.clone()).unwrap(), a).unwrap();
            assert!((0.0..=1.0).contains(&base));
            let delta = rng.next_f64() * 0.1 + 1e-6;
            let inflated = ErrorSet::new(v.iter().map(|x| x + delta).collect()).unwrap();
            assert!(auc(&inflated, a).unwrap() <= base);
        }
    }

    #[test]
    fn error_set_parsing() {
        let e = ErrorSet::parse("0\n0.10\n\n# x\n0.40\n").unwrap();
        assert_eq!(e.values(), &[0.0, 0.1, 0.4]);
        assert!(matches!(
            ErrorSet::parse("0.1\nabc\n"),
            Err(MetricsError::Parse { line: 2, .. })
        ));
    }

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(bits.len() as u32, 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(iou(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        let p = mask(&[1, 1, 1, 1, 0, 0]);
        let g = mask(&[0, 0, 1, 1, 1, 1]);
        assert!((iou(&p, &g).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert!(iou(&p, &a).is_err());
    }

    #[test]
    fn ap_and_pcp() {
        assert_eq!(ap_r(&[1.0]).unwrap(), 1.0);
        assert_eq!(ap_r(&[0.5, 0.5]).unwrap(), 0.5);
        assert!((ap_r(&[0.2, 0.4, 0.9]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ap_r(&[]), Err(MetricsError::EmptyList));
        assert_eq!(pcp(&[1.0; 4], 0.5).unwrap(), 1.0);
        assert_eq!(pcp(&[0.0; 4], 0.5).unwrap(), 0.0);
        assert_eq!(pcp(&[0.5, 0.49], 0.5).unwrap(), 0.5);
        assert_eq!(pcp(&[], 0.5), Err(MetricsError::EmptyList));
        assert!(pcp(&[0.5], 1.0).is_err());
    }
}
