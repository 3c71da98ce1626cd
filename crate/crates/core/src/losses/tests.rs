use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fit::{assemble, PartsModel, Shape};
use crate::spa::{sample_gumbel, AssignmentLogits};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn sphere_model(radius: f64, points: Vec<Vec3>) -> PartsModel {
    PartsModel::new(
        vec![Shape {
            primitive: Superquadric::sphere(radius),
            points,
        }],
        vec![Pose::identity()],
        AssignmentLogits::zeros(1, 1),
        1.0,
    )
    .unwrap()
}

/// Logits whose column argmax is `hot`, with margin 1.5.
fn logits_for(hot: &[usize], m_s: usize, rng: &mut ChaCha8Rng) -> AssignmentLogits {
    AssignmentLogits(DMatrix::from_fn(m_s, hot.len(), |i, j| {
        let base = rng.random::<f64>() * 0.5;
        if hot[j] == i {
            base + 1.5
        } else {
            base
        }
    }))
}

fn random_primitive(rng: &mut ChaCha8Rng) -> Superquadric {
    let mut r = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    Superquadric::new(
        Vec3::new(r(0.3, 0.9), r(0.3, 0.9), r(0.3, 0.9)),
        [r(0.5, 1.5), r(0.5, 1.5)],
        [r(-0.3, 0.3), r(-0.3, 0.3)],
    )
    .unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> Pose {
    let q = [
        rng.random::<f64>() + 0.5,
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
    ];
    let t = Vec3::new(rng.random(), rng.random(), rng.random()) * spread;
    Pose::new(q, t).unwrap()
}

/// Random model with canonical points scattered around each primitive and
/// input points near the posed parts. Quaternions are left unnormalised so
/// the gradient sees the normalisation too.
fn random_setup(rng: &mut ChaCha8Rng, m_s: usize, hot: &[usize], n_p: usize) -> (PartsModel, Vec<Vec3>) {
    let shapes: Vec<Shape> = (0..m_s)
        .map(|_| {
            let primitive = random_primitive(rng);
            let points = (0..n_p)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 1.6 - Vec3::repeat(0.8))
                .collect();
            Shape { primitive, points }
        })
        .collect();
    let mut poses: Vec<Pose> = hot.iter().map(|_| random_pose(rng, 2.5)).collect();
    for p in &mut poses {
        let s = 0.7 + 0.6 * rng.random::<f64>();
        p.q.iter_mut().for_each(|v| *v *= s);
    }
    let logits = logits_for(hot, m_s, rng);
    let model = PartsModel::new(shapes, poses, logits, 1.0).unwrap();
    let mut x = Vec::new();
    for (m, pose) in model.poses.iter().enumerate() {
        for _ in 0..8 {
            let sq = &model.shapes[hot[m]].primitive;
            let p = sq.surface_point(rng.random::<f64>() * 3.0 - 1.5, rng.random::<f64>() * 6.0 - 3.0);
            let jitter = Vec3::new(rng.random(), rng.random(), rng.random()) * 0.3 - Vec3::repeat(0.15);
            x.push(pose.apply(&(p + jitter)));
        }
    }
    (model, x)
}

fn random_context(rng: &mut ChaCha8Rng, x: &[Vec3], model: &PartsModel, n_s: usize) -> EvalContext {
    let noise = sample_gumbel(model.num_shapes(), model.num_parts(), rng) * 0.1;
    EvalContext::new(x, model, noise, sample_angles(n_s, rng)).unwrap()
}

fn check(x: &[Vec3], model: &PartsModel, terms: Terms, ctx: &EvalContext) -> GradCheckReport {
    finite_diff_check(probe(x, model, terms, ctx), &model.to_params(), H, TOL)
}

#[test]
fn linear_objective_is_exact() {
    let w = [1.5, -2.0, 0.25, 4.0];
    let f = |p: &[f64]| (p.iter().zip(&w).map(|(a, b)| a * b).sum(), w.to_vec());
    let r = finite_diff_check(f, &[0.3, 1.0, -2.0, 7.0], 1e-2, 1e-10);
    assert!(r.passed, "{r:?}");
    for (a, n) in r.analytic.iter().zip(&r.numeric) {
        assert!((a - n).abs() < 1e-10);
    }
}

#[test]
fn presets() {
    let t = LossWeights::preset("table").unwrap();
    assert_eq!((t.w_o, t.w_d, t.w_a, t.s), (1e-6, 1e-6, 0.1, 1.3));
    let c = LossWeights::preset("chair").unwrap();
    assert_eq!((c.w_o, c.w_d, c.w_a, c.s), (2e-3, 3e-3, 0.1, 1.5));
    let a = LossWeights::preset("airplane").unwrap();
    assert_eq!((a.w_o, a.w_d, a.w_a, a.s), (1e-3, 1e-5, 0.1, 1.0));
    assert!([t, c, a].iter().all(|w| w.c1 == 4.0 && w.validate().is_ok()));
    assert!(LossWeights::preset("lamp").is_none());
    assert!(LossWeights { w_o: -1.0, ..t }.validate().is_err());
    assert!(LossWeights { c1: 0.0, ..t }.validate().is_err());
}

#[test]
fn prim_points_sphere_example() {
    let x = PointCloud::new(vec![Vec3::new(2.0, 0.0, 0.0)]).unwrap();
    let model = sphere_model(1.0, vec![Vec3::zeros()]);
    let angles = sample_angles(64, &mut ChaCha8Rng::seed_from_u64(1));
    let expected_p2x: f64 = angles
        .iter()
        .map(|&(e, w)| (Superquadric::sphere(1.0).surface_point(e, w) - x.points()[0]).norm_squared())
        .sum::<f64>()
        / 64.0;
    let v = prim_points_loss(&x, &model, &angles).unwrap();
    assert_relative_eq!(v, 1.0 + expected_p2x, epsilon = 1e-12);
}

#[test]
fn prim_points_exact_cover_is_zero() {
    let angles = sample_angles(64, &mut ChaCha8Rng::seed_from_u64(2));
    let sq = Superquadric::new(Vec3::new(0.8, 0.5, 0.3), [0.6, 1.2], [0.2, -0.1]).unwrap();
    let pose = Pose::new([0.9, 0.1, -0.3, 0.2], Vec3::new(1.0, -2.0, 0.5)).unwrap();
    let x: Vec<Vec3> = angles.iter().map(|&(e, w)| pose.apply(&sq.surface_point(e, w))).collect();
    let mut model = sphere_model(1.0, vec![Vec3::zeros()]);
    model.shapes[0].primitive = sq;
    model.poses[0] = pose;
    let v = prim_points_loss(&PointCloud::new(x).unwrap(), &model, &angles).unwrap();
    assert!(v.abs() < 1e-10, "{v}");
}

#[test]
fn growing_sphere_toward_data_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Superquadric::sphere(2.0).sample_surface(200, &mut rng).unwrap();
    let angles = sample_angles(64, &mut rng);
    let loss = |r: f64| prim_points_loss(&x, &sphere_model(r, vec![Vec3::zeros()]), &angles).unwrap();
    assert!(loss(1.0) > loss(1.5));
    assert!(loss(1.5) > loss(2.0));
}

#[test]
fn overlap_examples() {
    let angles = sample_angles(64, &mut ChaCha8Rng::seed_from_u64(4));
    let apart = [
        (Superquadric::sphere(1.0), Pose::identity()),
        (Superquadric::sphere(1.0), Pose::translation(Vec3::new(10.0, 0.0, 0.0))),
    ];
    assert_eq!(overlap_loss(&apart, 1.0, &angles), 0.0);
    let same = [
        (Superquadric::sphere(1.0), Pose::identity()),
        (Superquadric::sphere(1.0), Pose::identity()),
    ];
    assert!(overlap_loss(&same, 1.0, &angles).abs() < 1e-7);
    assert_relative_eq!(overlap_loss(&same, 1.3, &angles), 0.3, epsilon = 1e-6);
    assert_eq!(overlap_loss(&same[..1], 1.3, &angles), 0.0);
}

#[test]
fn engine_overlap_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let hot = [0, 1, 1];
        let (mut model, x) = random_setup(&mut rng, 2, &hot, 6);
        for p in &mut model.poses {
            p.normalize().unwrap();
            p.t *= 0.3;
        }
        let mut ctx = EvalContext::deterministic(&x, &model, 32, &mut rng).unwrap();
        let terms = Terms::only(TERM_OVERLAP, &LossWeights { s: 1.3, ..LossWeights::default() }).unwrap();
        let report = evaluate(&x, &model, &terms, &mut ctx);
        let direct = overlap_loss(&posed_primitives(&model, &model.hot()), 1.3, &ctx.angles);
        assert!(direct > 0.0);
        assert_relative_eq!(report.term(TERM_OVERLAP), direct, epsilon = 1e-12);
    }
}

#[test]
fn diversity_examples() {
    assert_eq!(diversity_loss(&[Vec3::new(0.3, 0.2, 0.1); 3], 4.0), 0.0);
    assert_relative_eq!(
        diversity_loss(&[Vec3::x(), Vec3::zeros()], 4.0),
        -0.999329,
        epsilon = 1e-6
    );
    assert_eq!(diversity_loss(&[Vec3::x()], 4.0), 0.0);
}

/// Well separated parts whose canonical points lie on their primitives, so
/// the assembled cloud partitions back onto the parts it came from.
fn perfect_model(rng: &mut ChaCha8Rng, hot: &[usize], m_s: usize) -> PartsModel {
    let shapes = (0..m_s)
        .map(|_| {
            let primitive = random_primitive(rng);
            let points = primitive.sample_surface(40, rng).unwrap().into_points();
            Shape { primitive, points }
        })
        .collect();
    let poses = (0..hot.len())
        .map(|m| {
            let mut p = random_pose(rng, 0.0);
            p.t = Vec3::new(6.0 * m as f64, 0.0, 0.0);
            p
        })
        .collect();
    PartsModel::new(shapes, poses, logits_for(hot, m_s, rng), 1.0).unwrap()
}

#[test]
fn perfect_reconstruction_has_zero_point_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = perfect_model(&mut rng, &[0, 1, 0, 1], 2);
    let x = assemble(&model).cloud;
    assert!(points_loss(&x, &model).unwrap() < 1e-20);
    let mut ctx = EvalContext::deterministic(x.points(), &model, 16, &mut rng).unwrap();
    let report = stage2_objective(x.points(), &model, &LossWeights::default(), &mut ctx);
    assert!(report.total.abs() < 1e-20, "{report:?}");
    assert_eq!(report.term(TERM_ASSIGNMENT), 0.0);
}

#[test]
fn single_part_reduces_to_chamfer() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut model, x) = random_setup(&mut rng, 1, &[0], 20);
    model.poses[0] = Pose::identity();
    let cloud = PointCloud::new(x).unwrap();
    let y = PointCloud::new(model.shapes[0].points.clone()).unwrap();
    assert_relative_eq!(
        points_loss(&cloud, &model).unwrap(),
        chamfer(&cloud, &y).unwrap(),
        epsilon = 1e-12
    );
}

#[test]
fn two_part_points_loss_is_sum_of_canonical_chamfers() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let (mut model, x) = random_setup(&mut rng, 2, &[1, 0], 15);
        model.project();
        let cloud = PointCloud::new(x.clone()).unwrap();
        let hot = model.hot();
        let prims = posed_primitives(&model, &hot);
        let part = partition_by_primitive(&cloud, &prims).unwrap();
        let centroid = cloud.centroid();
        let mut expected = 0.0;
        for m in 0..2 {
            let pose = &model.poses[m];
            let local: Vec<Vec3> = if part.members(m).is_empty() {
                vec![pose.inverse_apply(&centroid)]
            } else {
                part.members(m).iter().map(|&i| pose.inverse_apply(&x[i])).collect()
            };
            let canon = PointCloud::new(model.shapes[hot[m]].points.clone()).unwrap();
            expected += chamfer(&PointCloud::new(local).unwrap(), &canon).unwrap();
        }
        assert_relative_eq!(points_loss(&cloud, &model).unwrap(), expected, epsilon = 1e-10);
    }
}

#[test]
fn zeroed_weights_leave_the_main_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (model, x) = random_setup(&mut rng, 2, &[0, 1, 1], 10);
    let zero = LossWeights { w_o: 0.0, w_d: 0.0, w_a: 0.0, ..LossWeights::chair() };
    let ctx = random_context(&mut rng, &x, &model, 16);
    let r1 = stage1_objective(&x, &model, &zero, &mut ctx.clone());
    assert_eq!(r1.total, r1.term(TERM_PRIM_POINTS));
    let r2 = stage2_objective(&x, &model, &zero, &mut ctx.clone());
    assert_eq!(r2.total, r2.term(TERM_POINTS));
}

#[test]
fn total_is_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for stage in [Stage::Primitives, Stage::Points] {
        let (model, x) = random_setup(&mut rng, 2, &[0, 1, 0, 0], 10);
        let mut ctx = random_context(&mut rng, &x, &model, 16);
        let r = objective(stage, &x, &model, &LossWeights::chair(), &mut ctx);
        let sum: f64 = r.per_term.iter().map(|(k, v)| r.weights[k] * v).sum();
        assert!((r.total - sum).abs() < 1e-10);
        assert_eq!(r.gradients.len(), model.param_count());
    }
}

#[test]
fn rigid_motion_leaves_distances_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let (mut model, x) = random_setup(&mut rng, 2, &[0, 1, 1], 12);
        model.project();
        let angles = sample_angles(32, &mut rng);
        let g = random_pose(&mut rng, 3.0);
        let mut moved = model.clone();
        for p in &mut moved.poses {
            *p = g.compose(p);
        }
        let cloud = PointCloud::new(x.clone()).unwrap();
        let moved_cloud = PointCloud::new(x.iter().map(|p| g.apply(p)).collect()).unwrap();
        assert!(
            (points_loss(&cloud, &model).unwrap() - points_loss(&moved_cloud, &moved).unwrap()).abs() < 1e-9
        );
        assert!(
            (prim_points_loss(&cloud, &model, &angles).unwrap()
                - prim_points_loss(&moved_cloud, &moved, &angles).unwrap())
            .abs()
                < 1e-9
        );
    }
}

/// Part-to-shape maps where every shape is used zero or at least two times,
/// keeping the assignment hinge away from its kink.
const HOT_PATTERNS: [&[usize]; 4] = [&[0, 0, 1, 1], &[1, 1, 1], &[0, 1, 0, 1, 1], &[2, 0, 2, 0]];

#[test]
fn every_term_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let weights = LossWeights { s: 1.3, ..LossWeights::default() };
    for (trial, hot) in HOT_PATTERNS.iter().enumerate() {
        let m_s = hot.iter().max().unwrap() + 1 + trial % 2;
        let (model, x) = random_setup(&mut rng, m_s.max(2), hot, 6);
        let ctx = random_context(&mut rng, &x, &model, 12);
        for name in [TERM_POINTS, TERM_PRIM_POINTS, TERM_OVERLAP, TERM_DIVERSITY, TERM_ASSIGNMENT] {
            let r = check(&x, &model, Terms::only(name, &weights).unwrap(), &ctx);
            assert!(
                r.passed,
                "{name} trial {trial}: rel {} at {} (analytic {}, numeric {})",
                r.max_rel_error,
                r.worst_index,
                r.analytic[r.worst_index],
                r.numeric[r.worst_index]
            );
        }
    }
}

#[test]
fn stage_objectives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for hot in HOT_PATTERNS {
        let m_s = hot.iter().max().unwrap() + 1;
        let (model, x) = random_setup(&mut rng, m_s.max(2), hot, 6);
        let ctx = random_context(&mut rng, &x, &model, 12);
        for stage in [Stage::Primitives, Stage::Points] {
            let r = check(&x, &model, Terms::stage(stage, &LossWeights::chair()), &ctx);
            assert!(r.passed, "{stage:?}: rel {} at {}", r.max_rel_error, r.worst_index);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_respect_lower_bounds(seed in any::<u64>(), stage1 in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, x) = random_setup(&mut rng, 2, &[0, 1, 1], 5);
        let mut ctx = random_context(&mut rng, &x, &model, 8);
        let stage = if stage1 { Stage::Primitives } else { Stage::Points };
        let r = objective(stage, &x, &model, &LossWeights::chair(), &mut ctx);
        for (name, v) in &r.per_term {
            if *name == TERM_DIVERSITY {
                prop_assert!(*v > -1.0 && *v <= 0.0);
            } else {
                prop_assert!(*v >= 0.0, "{} = {}", name, v);
            }
        }
    }

    #[test]
    fn diversity_in_range(a in prop::collection::vec((0.01f64..5.0, 0.01f64..5.0, 0.01f64..5.0), 1..6)) {
        let alphas: Vec<Vec3> = a.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
        let v = diversity_loss(&alphas, 4.0);
        prop_assert!(v > -1.0 - 1e-15 && v <= 0.0);
    }
}
