//! Distance-ratio graph prior over the five landmarks.
//!
//! Each ratio compares two graph edges, either as a quotient (`a / b`) or as
//! a normalised difference of mirrored edges (`(c - d) / (c + d)`). A fitted
//! prior holds a Gaussian per ratio; a landmark configuration is penalised by
//! `Σ σ_i · exp((r_i - μ_i)² / 2σ_i²)`, which is smallest when every ratio
//! sits at its mean.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::Detection;
use crate::geometry::nms::rank_order;
use crate::landmark::{Landmark, NUM_LANDMARKS};

pub const SIGMA_FLOOR: f64 = 1e-3;

pub type Points = [[f64; 3]; NUM_LANDMARKS];

/// Undirected edge between two landmarks; serialised as 1-based node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge(pub Landmark, pub Landmark);

impl Edge {
    pub fn length(&self, points: &Points) -> f64 {
        let a = points[self.0.index()];
        let b = points[self.1.index()];
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    fn same_as(&self, other: &Edge) -> bool {
        (self.0 == other.0 && self.1 == other.1) || (self.0 == other.1 && self.1 == other.0)
    }
}

impl Serialize for Edge {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.0.class_id(), self.1.class_id()].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Edge {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [a, b] = <[usize; 2]>::deserialize(d)?;
        let node = |id| Landmark::from_class_id(id).ok_or_else(|| D::Error::custom(format!("node id {id} out of range 1..=5")));
        Ok(Edge(node(a)?, node(b)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RatioDef {
    /// `len(num) / len(den)`
    Asymmetric { num: Edge, den: Edge },
    /// `(len(a) - len(b)) / (len(a) + len(b))`
    Symmetric { a: Edge, b: Edge },
}

impl RatioDef {
    pub fn edges(&self) -> [Edge; 2] {
        match *self {
            RatioDef::Asymmetric { num, den } => [num, den],
            RatioDef::Symmetric { a, b } => [a, b],
        }
    }

    pub fn value(&self, points: &Points) -> Result<f64> {
        let (v, denom) = match self {
            RatioDef::Asymmetric { num, den } => {
                let d = den.length(points);
                (num.length(points) / d, d)
            }
            RatioDef::Symmetric { a, b } => {
                let (la, lb) = (a.length(points), b.length(points));
                ((la - lb) / (la + lb), la + lb)
            }
        };
        if !(denom > 0.0) || !v.is_finite() {
            return Err(Error::DegenerateGeometry(format!("ratio {self:?} has a zero-length denominator")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkGraph {
    pub edges: Vec<Edge>,
    pub ratios: Vec<RatioDef>,
}

impl Default for LandmarkGraph {
    /// Complete graph on the five landmarks with three mirrored-pair and three
    /// quotient ratios.
    fn default() -> Self {
        use Landmark::*;
        let mut edges = Vec::new();
        for (i, &a) in Landmark::ALL.iter().enumerate() {
            for &b in &Landmark::ALL[i + 1..] {
                edges.push(Edge(a, b));
            }
        }
        let ratios = vec![
            RatioDef::Symmetric { a: Edge(LeftEye, Nose), b: Edge(RightEye, Nose) },
            RatioDef::Symmetric { a: Edge(LeftEye, Chin), b: Edge(RightEye, Chin) },
            RatioDef::Symmetric { a: Edge(LeftEye, MiddleEyebrow), b: Edge(RightEye, MiddleEyebrow) },
            RatioDef::Asymmetric { num: Edge(MiddleEyebrow, Nose), den: Edge(Nose, Chin) },
            RatioDef::Asymmetric { num: Edge(LeftEye, RightEye), den: Edge(Nose, Chin) },
            RatioDef::Asymmetric { num: Edge(MiddleEyebrow, Chin), den: Edge(Nose, Chin) },
        ];
        LandmarkGraph { edges, ratios }
    }
}

impl LandmarkGraph {
    pub fn validate(&self) -> Result<()> {
        for e in &self.edges {
            if e.0 == e.1 {
                return Err(Error::InvalidArgument(format!("self-loop edge on {}", e.0)));
            }
        }
        for r in &self.ratios {
            for e in r.edges() {
                if e.0 == e.1 {
                    return Err(Error::InvalidArgument(format!("ratio {r:?} uses a self-loop")));
                }
                if !self.edges.iter().any(|g| g.same_as(&e)) {
                    return Err(Error::InvalidArgument(format!("ratio {r:?} uses an edge not in the graph")));
                }
            }
        }
        Ok(())
    }
}

fn serialize_precise<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::Error as _;
    // 17 significant digits, always in exponent form
    let raw = serde_json::value::RawValue::from_string(format!("{v:.16e}")).map_err(S::Error::custom)?;
    raw.serialize(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    #[serde(serialize_with = "serialize_precise")]
    pub mu: f64,
    #[serde(serialize_with = "serialize_precise")]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub graph: LandmarkGraph,
    pub params: Vec<Gaussian>,
    pub sample_count: usize,
}

impl PriorModel {
    /// A prior with no ratios: every configuration scores zero.
    pub fn uniform() -> Self {
        PriorModel {
            graph: LandmarkGraph { edges: Vec::new(), ratios: Vec::new() },
            params: Vec::new(),
            sample_count: 0,
        }
    }

    pub fn sigma_sum(&self) -> f64 {
        self.params.iter().map(|p| p.sigma).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let prior: PriorModel = serde_json::from_str(s)?;
        prior.graph.validate()?;
        if prior.params.len() != prior.graph.ratios.len() {
            return Err(Error::Format(format!(
                "prior has {} ratios but {} parameter pairs",
                prior.graph.ratios.len(),
                prior.params.len()
            )));
        }
        if let Some(p) = prior.params.iter().find(|p| !(p.sigma > 0.0 && p.mu.is_finite())) {
            return Err(Error::Format(format!("invalid prior parameters {p:?}")));
        }
        Ok(prior)
    }
}

/// Fits one Gaussian per ratio: sample mean and unbiased standard deviation,
/// the latter floored at [`SIGMA_FLOOR`].
pub fn fit_prior(training: &[Points], graph: &LandmarkGraph) -> Result<PriorModel> {
    graph.validate()?;
    if training.len() < 2 {
        return Err(Error::InvalidArgument(format!("fit_prior needs at least 2 samples, got {}", training.len())));
    }
    if training.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("training landmarks contain non-finite coordinates".into()));
    }
    let n = training.len() as f64;
    let params = graph
        .ratios
        .iter()
        .map(|r| {
            let values = training.iter().map(|p| r.value(p)).collect::<Result<Vec<f64>>>()?;
            let mu = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0);
            Ok(Gaussian { mu, sigma: var.sqrt().max(SIGMA_FLOOR) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PriorModel { graph: graph.clone(), params, sample_count: training.len() })
}

/// Anti-normal penalty `Σ σ_i · exp((r_i - μ_i)² / 2σ_i²)`.
pub fn penalty(points: &Points, prior: &PriorModel) -> Result<f64> {
    let mut total = 0.0;
    for (r, g) in prior.graph.ratios.iter().zip(&prior.params) {
        let z = r.value(points)? - g.mu;
        total += g.sigma * (z * z / (2.0 * g.sigma * g.sigma)).exp();
    }
    Ok(total)
}

/// The top-k detections of every landmark class, by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub per_class: [Vec<Detection>; NUM_LANDMARKS],
}

impl CandidateSet {
    pub fn from_detections(dets: &[Detection], k: usize) -> Self {
        let mut per_class: [Vec<Detection>; NUM_LANDMARKS] = Default::default();
        for d in dets {
            per_class[d.class.index()].push(*d);
        }
        for v in &mut per_class {
            v.sort_by(rank_order);
            v.truncate(k);
        }
        CandidateSet { per_class }
    }
}

/// Picks one candidate per landmark minimising the prior penalty of their
/// box centres.
///
/// Every class is padded to two candidates by repeating its best one, and all
/// combinations are scanned. Ties go to the larger total score, then to the
/// lexicographically smaller candidate-index tuple. Combinations whose ratios
/// are undefined (coincident points) are skipped.
pub fn select_combination(cands: &CandidateSet, prior: &PriorModel) -> Result<[Detection; NUM_LANDMARKS]> {
    for l in Landmark::ALL {
        if cands.per_class[l.index()].is_empty() {
            return Err(Error::DetectionFailure(l));
        }
    }
    let k = cands.per_class.iter().map(Vec::len).max().unwrap_or(1).max(2);
    let padded: Vec<Vec<Detection>> = cands
        .per_class
        .iter()
        .map(|v| {
            let mut v = v.clone();
            while v.len() < k {
                v.push(v[0]);
            }
            v
        })
        .collect();

    let mut best: Option<(f64, f64, [usize; NUM_LANDMARKS])> = None;
    let mut idx = [0usize; NUM_LANDMARKS];
    loop {
        let points: Points = std::array::from_fn(|c| padded[c][idx[c]].center());
        if let Ok(p) = penalty(&points, prior) {
            let score: f64 = (0..NUM_LANDMARKS).map(|c| padded[c][idx[c]].score).sum();
            let better = match best {
                None => true,
                Some((bp, bs, _)) => p < bp || (p == bp && score > bs),
            };
            if better {
                best = Some((p, score, idx));
            }
        }
        // odometer over the candidate-index tuple, last class fastest
        let mut pos = NUM_LANDMARKS;
        loop {
            if pos == 0 {
                let (_, _, chosen) = best.ok_or_else(|| {
                    Error::DegenerateGeometry("every candidate combination has coincident landmarks".into())
                })?;
                return Ok(std::array::from_fn(|c| padded[c][chosen[c]]));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::geometry::Box3;
    use crate::landmark::NUM_CLASSES;

    fn face() -> Points {
        [
            [-12.0, 10.0, 0.0],
            [0.0, 14.0, 2.0],
            [12.0, 10.0, 0.0],
            [0.0, -2.0, 8.0],
            [0.0, -20.0, 2.0],
        ]
    }

    fn jittered(seed: u64) -> Points {
        let mut p = face();
        let mut s = seed;
        for pt in &mut p {
            for v in pt.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v += ((s >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 2.0;
            }
        }
        p
    }

    #[test]
    fn default_graph_is_complete_and_valid() {
        let g = LandmarkGraph::default();
        assert_eq!(g.edges.len(), 10);
        assert_eq!(g.ratios.len(), 6);
        g.validate().unwrap();
    }

    #[test]
    fn graph_rejects_foreign_edges() {
        let g = LandmarkGraph {
            edges: vec![Edge(Landmark::Nose, Landmark::Chin)],
            ratios: vec![RatioDef::Asymmetric {
                num: Edge(Landmark::Nose, Landmark::Chin),
                den: Edge(Landmark::LeftEye, Landmark::Chin),
            }],
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn identical_samples_hit_sigma_floor() {
        let prior = fit_prior(&[face(), face(), face()], &LandmarkGraph::default()).unwrap();
        for (r, g) in prior.graph.ratios.iter().zip(&prior.params) {
            assert_relative_eq!(g.mu, r.value(&face()).unwrap(), max_relative = 1e-12);
            assert_eq!(g.sigma, SIGMA_FLOOR);
        }
        assert_eq!(prior.sample_count, 3);
    }

    #[test]
    fn two_sample_statistics() {
        let graph = LandmarkGraph {
            edges: vec![Edge(Landmark::Nose, Landmark::Chin), Edge(Landmark::LeftEye, Landmark::Nose)],
            ratios: vec![RatioDef::Asymmetric {
                num: Edge(Landmark::LeftEye, Landmark::Nose),
                den: Edge(Landmark::Nose, Landmark::Chin),
            }],
        };
        let make = |r: f64| {
            let mut p = face();
            p[Landmark::Nose.index()] = [0.0, 0.0, 0.0];
            p[Landmark::Chin.index()] = [0.0, -10.0, 0.0];
            p[Landmark::LeftEye.index()] = [10.0 * r, 0.0, 0.0];
            p
        };
        let prior = fit_prior(&[make(1.0), make(2.0)], &graph).unwrap();
        assert_relative_eq!(prior.params[0].mu, 1.5, max_relative = 1e-12);
        assert_relative_eq!(prior.params[0].sigma, 0.5f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn fit_is_scale_invariant() {
        let samples: Vec<Points> = (0..20).map(jittered).collect();
        let scaled: Vec<Points> = samples.iter().map(|p| p.map(|q| q.map(|v| v * 3.7))).collect();
        let a = fit_prior(&samples, &LandmarkGraph::default()).unwrap();
        let b = fit_prior(&scaled, &LandmarkGraph::default()).unwrap();
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_relative_eq!(x.mu, y.mu, epsilon = 1e-12, max_relative = 1e-12);
            assert_relative_eq!(x.sigma, y.sigma, epsilon = 1e-12, max_relative = 1e-9);
        }
    }

    #[test]
    fn fit_rejects_bad_input() {
        let g = LandmarkGraph::default();
        assert!(fit_prior(&[face()], &g).is_err());
        let mut collapsed = face();
        collapsed[Landmark::Chin.index()] = collapsed[Landmark::Nose.index()];
        assert!(matches!(fit_prior(&[face(), collapsed], &g), Err(Error::DegenerateGeometry(_))));
        let mut nan = face();
        nan[0][0] = f64::NAN;
        assert!(fit_prior(&[face(), nan], &g).is_err());
    }

    #[test]
    fn penalty_at_means_is_sigma_sum() {
        let samples: Vec<Points> = (0..30).map(jittered).collect();
        let prior = fit_prior(&samples, &LandmarkGraph::default()).unwrap();
        // a prior centred exactly on `face()`
        let mut centred = prior.clone();
        for (r, g) in centred.graph.ratios.iter().zip(centred.params.iter_mut()) {
            g.mu = r.value(&face()).unwrap();
        }
        assert_relative_eq!(penalty(&face(), &centred).unwrap(), centred.sigma_sum(), max_relative = 1e-12);
        assert!(penalty(&jittered(99), &centred).unwrap() > centred.sigma_sum());
    }

    #[test]
    fn penalty_one_sigma_off() {
        // Only the quotient eyebrow-nose / nose-chin; move the eyebrow along the
        // nose→eyebrow direction so that ratio shifts by exactly one sigma.
        let graph = LandmarkGraph {
            edges: LandmarkGraph::default().edges,
            ratios: vec![
                RatioDef::Asymmetric {
                    num: Edge(Landmark::MiddleEyebrow, Landmark::Nose),
                    den: Edge(Landmark::Nose, Landmark::Chin),
                },
                RatioDef::Symmetric {
                    a: Edge(Landmark::LeftEye, Landmark::Chin),
                    b: Edge(Landmark::RightEye, Landmark::Chin),
                },
            ],
        };
        let pts = face();
        let mu0 = graph.ratios[0].value(&pts).unwrap();
        let mu1 = graph.ratios[1].value(&pts).unwrap();
        let prior = PriorModel {
            graph,
            params: vec![Gaussian { mu: mu0 - 0.05, sigma: 0.05 }, Gaussian { mu: mu1, sigma: 0.2 }],
            sample_count: 2,
        };
        let want = 0.2 + 0.05 * 0.5f64.exp();
        assert_relative_eq!(penalty(&pts, &prior).unwrap(), want, max_relative = 1e-9);
    }

    #[test]
    fn penalty_grows_with_deviation() {
        let prior = fit_prior(&(0..30).map(jittered).collect::<Vec<_>>(), &LandmarkGraph::default()).unwrap();
        let mut last = 0.0;
        for step in 0..8 {
            let mut p = face();
            p[Landmark::Chin.index()][1] -= step as f64 * 0.5;
            let v = penalty(&p, &prior).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn json_round_trip_keeps_precision() {
        let prior = fit_prior(&(0..10).map(jittered).collect::<Vec<_>>(), &LandmarkGraph::default()).unwrap();
        let text = prior.to_json().unwrap();
        assert!(text.contains("\"kind\": \"symmetric\""));
        let back = PriorModel::from_json(&text).unwrap();
        assert_eq!(back, prior);
        let first = text.find("\"mu\": ").unwrap() + 6;
        let digits: String = text[first..].chars().take_while(|c| *c != 'e').filter(char::is_ascii_digit).collect();
        assert!(digits.len() >= 15);
        let order: Vec<usize> = ["\"graph\"", "\"edges\"", "\"ratios\"", "\"params\"", "\"sample_count\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    fn det(class: Landmark, center: [f64; 3], score: f64, anchor_index: usize) -> Detection {
        let mut class_scores = [0.0; NUM_CLASSES];
        class_scores[class.class_id()] = score;
        Detection { bbox: Box3::cube(center, class.box_size()).unwrap(), class, score, class_scores, anchor_index }
    }

    #[test]
    fn single_candidates_give_the_only_combination() {
        let dets: Vec<_> = Landmark::ALL.iter().map(|&l| det(l, face()[l.index()], 0.5, l.index())).collect();
        let cands = CandidateSet::from_detections(&dets, 2);
        let prior = fit_prior(&(0..10).map(jittered).collect::<Vec<_>>(), &LandmarkGraph::default()).unwrap();
        let out = select_combination(&cands, &prior).unwrap();
        assert_eq!(out.to_vec(), dets);
    }

    #[test]
    fn missing_class_is_reported() {
        let dets: Vec<_> = Landmark::ALL[..4].iter().map(|&l| det(l, face()[l.index()], 0.5, 0)).collect();
        let cands = CandidateSet::from_detections(&dets, 2);
        match select_combination(&cands, &PriorModel::uniform()) {
            Err(Error::DetectionFailure(l)) => assert_eq!(l, Landmark::Chin),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_prior_picks_best_scores() {
        let mut dets = Vec::new();
        for l in Landmark::ALL {
            let c = face()[l.index()];
            dets.push(det(l, c, 0.4, 1));
            dets.push(det(l, [c[0] + 30.0, c[1], c[2]], 0.6, 2));
        }
        let out = select_combination(&CandidateSet::from_detections(&dets, 2), &PriorModel::uniform()).unwrap();
        assert!(out.iter().all(|d| d.score == 0.6));
    }
}
