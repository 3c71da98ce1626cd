//! Synthetic objects built from known shared shapes, with part labels and
//! the generating model.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{PartsModel, Shape};
use crate::geometry::{PointCloud, Pose, Superquadric, Vec3};
use crate::losses::{stage2_objective, EvalContext, LossReport, LossWeights};
use crate::spa::AssignmentLogits;

/// Logit of the generating shape in the truth model; the others are zero.
const TRUTH_LOGIT: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    /// Box top on four identical legs: 2 shapes, 5 parts.
    Table4Leg,
    /// Seat, back and two identical arms: 3 shapes, 4 parts.
    ChairArms,
    /// Fuselage and two identical wings: 2 shapes, 3 parts.
    PlaneWings,
}

impl Template {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "table4leg" | "table" => Some(Template::Table4Leg),
            "chair-arms" | "chair" => Some(Template::ChairArms),
            "plane-wings" | "airplane" => Some(Template::PlaneWings),
            _ => None,
        }
    }

    /// Shapes, then `(shape, pose)` for every part.
    fn layout(self) -> (Vec<Superquadric>, Vec<(usize, Pose)>) {
        let sq = |a: [f64; 3], e: [f64; 2]| {
            Superquadric::new(Vec3::new(a[0], a[1], a[2]), e, [0.0, 0.0]).expect("template scales are positive")
        };
        let about = |axis: Vec3, angle: f64, t: [f64; 3]| {
            Pose::from_axis_angle(axis, angle, Vec3::new(t[0], t[1], t[2])).expect("unit axis")
        };
        match self {
            Template::Table4Leg => {
                let top = sq([0.8, 0.5, 0.05], [0.2, 0.2]);
                let leg = sq([0.05, 0.05, 0.45], [0.3, 1.0]);
                let corners = [[0.65, 0.38], [-0.65, 0.38], [-0.65, -0.38], [0.65, -0.38]];
                let mut parts = vec![(0, Pose::translation(Vec3::new(0.0, 0.0, 0.45)))];
                for (k, c) in corners.iter().enumerate() {
                    parts.push((1, about(Vec3::z(), k as f64 * FRAC_PI_2, [c[0], c[1], -0.05])));
                }
                (vec![top, leg], parts)
            }
            Template::ChairArms => {
                let seat = sq([0.5, 0.5, 0.06], [0.3, 0.3]);
                let back = sq([0.5, 0.06, 0.5], [0.3, 0.3]);
                let arm = sq([0.05, 0.4, 0.15], [0.4, 0.6]);
                let parts = vec![
                    (0, Pose::identity()),
                    (1, Pose::translation(Vec3::new(0.0, -0.45, 0.55))),
                    (2, Pose::translation(Vec3::new(0.55, 0.0, 0.2))),
                    (2, about(Vec3::z(), PI, [-0.55, 0.0, 0.2])),
                ];
                (vec![seat, back, arm], parts)
            }
            Template::PlaneWings => {
                let fuselage = sq([0.12, 0.9, 0.12], [0.8, 0.8]);
                let wing = Superquadric::new(Vec3::new(0.6, 0.18, 0.03), [0.3, 0.6], [0.0, 0.3])
                    .expect("template scales are positive");
                let parts = vec![
                    (0, Pose::identity()),
                    (1, Pose::translation(Vec3::new(0.7, 0.1, 0.0))),
                    (1, about(Vec3::y(), PI, [-0.7, 0.1, 0.0])),
                ];
                (vec![fuselage, wing], parts)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub template: Template,
    pub noise_sigma: f64,
    pub points_per_part: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(template: Template, noise_sigma: f64, seed: u64) -> Self {
        SynthSpec {
            template,
            noise_sigma,
            points_per_part: 512,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_part < 8 {
            return Err(Error::invalid(format!("need at least 8 points per part, got {}", self.points_per_part)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::invalid(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    /// Points labelled with their generating part, part by part.
    pub cloud: PointCloud,
    /// Generating model; canonical points are exact surface samples.
    pub truth: PartsModel,
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (primitives, parts) = spec.template.layout();
    let n = spec.points_per_part;
    let shapes = primitives
        .iter()
        .map(|p| {
            Ok(Shape {
                primitive: p.clone(),
                points: p.sample_surface_even(n, &mut rng)?.into_points(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut points = Vec::with_capacity(n * parts.len());
    let mut labels = Vec::with_capacity(n * parts.len());
    for (m, (shape, pose)) in parts.iter().enumerate() {
        for p in primitives[*shape].sample_surface_even(n, &mut rng)?.points() {
            let jitter = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            points.push(pose.apply(p) + jitter);
            labels.push(m);
        }
    }
    let logits = DMatrix::from_fn(primitives.len(), parts.len(), |i, j| {
        if parts[j].0 == i {
            TRUTH_LOGIT
        } else {
            0.0
        }
    });
    let truth = PartsModel::new(
        shapes,
        parts.into_iter().map(|(_, pose)| pose).collect(),
        AssignmentLogits(logits),
        1.0,
    )?;
    Ok(Synthetic {
        cloud: PointCloud::with_labels(points, labels)?,
        truth,
    })
}

/// Point-stage objective of the generating model on its own cloud.
pub fn truth_loss(x: &PointCloud, truth: &PartsModel, weights: &LossWeights) -> Result<LossReport> {
    let noise = DMatrix::zeros(truth.num_shapes(), truth.num_parts());
    let mut ctx = EvalContext::new(x.points(), truth, noise, Vec::new())?;
    Ok(stage2_objective(x.points(), truth, weights, &mut ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{TERM_ASSIGNMENT, TERM_POINTS};

    const ALL: [Template; 3] = [Template::Table4Leg, Template::ChairArms, Template::PlaneWings];

    #[test]
    fn noiseless_points_lie_on_their_parts() {
        for t in ALL {
            let s = generate(&SynthSpec { points_per_part: 64, ..SynthSpec::new(t, 0.0, 1) }).unwrap();
            let labels = s.cloud.labels().unwrap();
            let hot = s.truth.hot();
            for (p, &m) in s.cloud.points().iter().zip(labels) {
                let local = s.truth.poses[m].inverse_apply(p);
                let f = s.truth.shapes[hot[m]].primitive.implicit(&local);
                assert!((f - 1.0).abs() < 1e-6, "{t:?} part {m}: F = {f}");
            }
        }
    }

    #[test]
    fn shapes_and_counts() {
        let expect = [(2, 5, vec![0, 1, 1, 1, 1]), (3, 4, vec![0, 1, 2, 2]), (2, 3, vec![0, 1, 1])];
        for (t, (m_s, m_t, hot)) in ALL.iter().zip(expect) {
            let s = generate(&SynthSpec { points_per_part: 20, ..SynthSpec::new(*t, 0.01, 2) }).unwrap();
            assert_eq!((s.truth.num_shapes(), s.truth.num_parts()), (m_s, m_t));
            assert_eq!(s.truth.hot(), hot);
            for m in 0..m_t {
                assert_eq!(s.cloud.indices_with_label(m).len(), 20);
            }
            for p in &s.truth.poses {
                assert!((p.rotation().determinant() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn table_legs_are_congruent() {
        let s = generate(&SynthSpec { points_per_part: 32, ..SynthSpec::new(Template::Table4Leg, 0.0, 3) }).unwrap();
        let canon: Vec<Vec3> = s.truth.shapes[1].points.clone();
        let blocks: Vec<Vec<Vec3>> = (1..5)
            .map(|m| canon.iter().map(|p| s.truth.poses[m].apply(p)).collect())
            .collect();
        for j in 0..4 {
            for k in 0..4 {
                let rel = s.truth.poses[k + 1].compose(&inverse(&s.truth.poses[j + 1]));
                for (a, b) in blocks[j].iter().zip(&blocks[k]) {
                    assert!((rel.apply(a) - b).norm() < 1e-12);
                }
            }
        }
    }

    fn inverse(p: &Pose) -> Pose {
        let q = [p.q[0], -p.q[1], -p.q[2], -p.q[3]];
        let t = -(p.rotation().transpose() * p.t);
        Pose::new(q, t).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec { points_per_part: 16, ..SynthSpec::new(Template::ChairArms, 0.02, 7) };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        assert!(generate(&SynthSpec { points_per_part: 4, ..spec }).is_err());
        assert!(generate(&SynthSpec { noise_sigma: -1.0, ..spec }).is_err());
    }

    #[test]
    fn truth_loss_behaviour() {
        let spec = SynthSpec { points_per_part: 128, ..SynthSpec::new(Template::Table4Leg, 0.0, 4) };
        let s = generate(&spec).unwrap();
        let r = truth_loss(&s.cloud, &s.truth, &LossWeights::default()).unwrap();
        assert!(r.term(TERM_POINTS) < 0.05, "{r:?}");
        assert_eq!(r.term(TERM_ASSIGNMENT), 0.0);
        let zero = LossWeights { w_a: 0.0, ..LossWeights::default() };
        let r0 = truth_loss(&s.cloud, &s.truth, &zero).unwrap();
        assert_eq!(r0.total, r0.term(TERM_POINTS));
    }

    #[test]
    fn truth_loss_grows_with_noise() {
        let mean_lp = |sigma: f64| {
            (0..10)
                .map(|seed| {
                    let spec = SynthSpec { points_per_part: 64, ..SynthSpec::new(Template::PlaneWings, sigma, seed) };
                    let s = generate(&spec).unwrap();
                    truth_loss(&s.cloud, &s.truth, &LossWeights::airplane()).unwrap().term(TERM_POINTS)
                })
                .sum::<f64>()
                / 10.0
        };
        let (a, b, c) = (mean_lp(0.0), mean_lp(0.02), mean_lp(0.05));
        assert!(a <= b && b <= c, "{a} {b} {c}");
    }
}
