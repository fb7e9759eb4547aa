//! Monte-Carlo, sweep and closed-form oracles for derived quantities.

use std::f64::consts::{PI, TAU};

use poslab::autoenc::{self, auroc, compactness_metrics, AEParams, Activation, Objective, Skip, TrainConfig};
use poslab::complexity::{covering_number, n_classical, n_dnn, niyogi_bound, union_cover_audit, ComplexitySpec, ReachSpec};
use poslab::datagen::{blur1d, gen_circle, gen_union, random_window, ComponentSpec};
use poslab::dba::{self, dba_intersection, dba_residuals, feature_map, orth_loss, DBAConfig};
use poslab::dictionary::{mutual_coherence, ric};
use poslab::folding::{self, mean_fold_loss, train_fold, FoldConfig, TransformParams};
use poslab::intersect::{cross_project, multi_branch_step};
use poslab::numerics::{self, left_annihilator, orthonormalize, qr_orthonormal, svd};
use poslab::projector::{conjugate, lemma1_decompose, project_component, project_union, DEFAULT_TIE_TOL};
use poslab::rng::{self, tag, Rng};
use poslab::{Dataset, Dictionary, IsometryT, Matrix, SyntheticSpec, UnionProjector};
use rand::Rng as _;

fn gaussian(r: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, rng::gaussian_vec(r, rows * cols)).unwrap()
}

fn basis(r: &mut Rng, n: usize, k: usize) -> Matrix {
    orthonormalize(&gaussian(r, n, k)).unwrap()
}

fn isometry(r: &mut Rng, n: usize) -> IsometryT {
    IsometryT::new(basis(r, n, n), rng::gaussian_vec(r, n)).unwrap()
}

fn component(b: Matrix, count: usize) -> ComponentSpec {
    ComponentSpec { basis: b, count, coefficients: Default::default() }
}

fn line(angle: f64) -> Matrix {
    Matrix::column_vector(&[angle.cos(), angle.sin()])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn factorizations_on_random_inputs() {
    let mut r = rng::stream(1, 0, 0, tag::USER);
    let (q, _) = qr_orthonormal(&gaussian(&mut r, 6, 3)).unwrap();
    assert!(q.orthonormality_defect() < 1e-12);
    let a = gaussian(&mut r, 5, 4);
    let d = svd(&a).unwrap();
    let mut us = d.u.clone();
    for j in 0..d.s.len() {
        let c: Vec<f64> = us.column(j).iter().map(|x| x * d.s[j]).collect();
        us.set_column(j, &c);
    }
    assert!(us.matmul(&d.v.transpose()).unwrap().sub(&a).unwrap().frobenius_norm() < 1e-9);
    let dict = gaussian(&mut r, 8, 3);
    let f = left_annihilator(&dict).unwrap();
    assert!(f.matmul(&dict).unwrap().frobenius_norm() < 1e-10);
}

#[test]
fn noise_residual_matches_chi_mean() {
    // Off-subspace noise has n − k Gaussian coordinates of scale σ.
    let (n, k, sigma) = (6, 2, 0.05);
    let mut r = rng::stream(2, 0, 0, tag::USER);
    let b = basis(&mut r, n, k);
    let spec = SyntheticSpec { ambient_dim: n, components: vec![component(b.clone(), 10_000)], noise_sigma: sigma, seed: 3 };
    let data = gen_union(&spec).unwrap();
    let res: Vec<f64> = data.samples.iter().map(|s| numerics::distance(s, &project_component(&b, s).unwrap())).collect();
    let target = sigma * ((n - k) as f64).sqrt();
    assert!((mean(&res) / target - 1.0).abs() < 0.2, "{} vs {target}", mean(&res));
}

#[test]
fn circle_radius_and_window_histogram() {
    let c = gen_circle(1000, 0.01, 4).unwrap();
    let radius = mean(&c.samples.iter().map(|s| numerics::norm(s)).collect::<Vec<_>>());
    assert!((0.99..=1.01).contains(&radius));

    let mut r = rng::stream(5, 0, 0, tag::USER);
    let mut hist = [0usize; 5];
    for _ in 0..100_000 {
        let w = random_window(10, 2, 6, &mut r).unwrap();
        hist[w.length - 2] += 1;
    }
    for h in hist {
        assert!((h as f64 / 20_000.0 - 1.0).abs() < 0.05, "{hist:?}");
    }
}

#[test]
fn impulse_blur_sums_to_one() {
    let mut v = vec![0.0; 21];
    v[10] = 1.0;
    let b = blur1d(&v, 1.0);
    assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

#[test]
fn order_two_isometry_constant_matches_pairwise_eigenvalues() {
    // The Gram matrix of two unit atoms has eigenvalues 1 ± |cos|.
    let mut r = rng::stream(6, 0, 0, tag::USER);
    let d = Dictionary::singletons(gaussian(&mut r, 4, 8)).unwrap();
    let cols = d.atoms().columns();
    let mut oracle: f64 = 0.0;
    for i in 0..8 {
        for j in i + 1..8 {
            let g = numerics::dot(&cols[i], &cols[j]) / (numerics::norm(&cols[i]) * numerics::norm(&cols[j]));
            let (lo, hi) = (1.0 - g.abs(), 1.0 + g.abs());
            oracle = oracle.max((hi - 1.0).max(1.0 - lo));
        }
    }
    assert!((ric(&d, 2).unwrap() - oracle).abs() < 1e-10);
    assert!((mutual_coherence(&d).unwrap() - oracle).abs() < 1e-10);
}

#[test]
fn component_residual_is_orthogonal_to_the_basis() {
    let mut r = rng::stream(7, 0, 0, tag::USER);
    for _ in 0..50 {
        let b = basis(&mut r, 7, 3);
        let s = rng::gaussian_vec(&mut r, 7);
        let res = numerics::sub(&s, &project_component(&b, &s).unwrap());
        for c in b.columns() {
            assert!(numerics::dot(&res, &c).abs() < 1e-10);
        }
    }
}

#[test]
fn conjugation_against_direct_projector_and_component_labels() {
    let mut r = rng::stream(8, 0, 0, tag::USER);
    for _ in 0..100 {
        let n = r.random_range(3..7);
        let spans: Vec<Matrix> = (0..3).map(|_| { let k = r.random_range(1..n); basis(&mut r, n, k) }).collect();
        let p = UnionProjector::from_spans(&spans, DEFAULT_TIE_TOL).unwrap();
        let t = IsometryT::linear(basis(&mut r, n, n)).unwrap();
        // Direct projector onto the rotated spans.
        let moved: Vec<Matrix> = spans.iter().map(|b| t.rotation().matmul(b).unwrap()).collect();
        let direct = UnionProjector::from_spans(&moved, DEFAULT_TIE_TOL).unwrap();
        let s = rng::gaussian_vec(&mut r, n);
        let ts = t.apply(&s).unwrap();
        let a = project_union(&conjugate(&p, &t).unwrap(), &ts).unwrap();
        let b = project_union(&direct, &ts).unwrap();
        let orig = project_union(&p, &s).unwrap();
        if orig.is_tie {
            continue;
        }
        assert!(numerics::distance(&a.point, &b.point) < 1e-9);
        // The image lands on the image of the same component.
        assert_eq!(a.component_index, orig.component_index);
        let g = isometry(&mut r, n);
        let c = project_union(&conjugate(&p, &g).unwrap(), &g.apply(&s).unwrap()).unwrap();
        assert_eq!(c.component_index, orig.component_index);
    }
}

#[test]
fn local_decomposition_error_is_linear_near_the_intersection() {
    // Planes span(e1, e2) and span(e1, cos a·e2 + sin a·e3) at a small angle.
    let a = 0.2f64;
    let pb_basis = Matrix::from_columns(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
    let pr_basis = Matrix::from_columns(&[vec![1.0, 0.0, 0.0], vec![0.0, a.cos(), a.sin()]]).unwrap();
    let pb = UnionProjector::from_spans(&[pb_basis.clone()], DEFAULT_TIE_TOL).unwrap();
    let pr = UnionProjector::from_spans(&[pr_basis.clone()], DEFAULT_TIE_TOL).unwrap();
    let union = UnionProjector::from_spans(&[pb_basis, pr_basis], DEFAULT_TIE_TOL).unwrap();
    let x = [0.7, 0.0, 0.0];
    let v = [0.3, -0.8, 0.52];
    let phi = Matrix::identity(3);
    let mut logs = Vec::new();
    for delta in [1e-1, 1e-2, 1e-3] {
        let s: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + delta * b).collect();
        let dec = lemma1_decompose(&pb, &pr, &phi, &s).unwrap();
        let direct = project_union(&union, &s).unwrap().point;
        logs.push((delta.ln(), numerics::distance(&dec, &direct).ln()));
    }
    // Least-squares slope of log error against log distance.
    let mx = mean(&logs.iter().map(|p| p.0).collect::<Vec<_>>());
    let my = mean(&logs.iter().map(|p| p.1).collect::<Vec<_>>());
    let slope = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / logs.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 1.0).abs() < 0.01, "slope {slope}");
}

fn converged_plain_model(n: usize) -> (AEParams, Dataset) {
    let mut r = rng::stream(9, 0, 0, tag::USER);
    let b = basis(&mut r, n, 2);
    let data = gen_union(&SyntheticSpec { ambient_dim: n, components: vec![component(b, 200)], noise_sigma: 0.0, seed: 9 }).unwrap();
    let init = AEParams::init(n, 2, true, Activation::Linear, Skip::None, 9).unwrap();
    let cfg = TrainConfig { step_size: 0.05, steps: 1500, batch: 0, objective: Objective::Plain, seed: 0, momentum: true };
    (autoenc::train(&init, &cfg, &data).unwrap().final_params, data)
}

#[test]
fn masked_loss_dominates_plain_loss_for_a_converged_model() {
    let (p, data) = converged_plain_model(6);
    let plain = TrainConfig { step_size: 0.1, steps: 0, batch: 0, objective: Objective::Plain, seed: 0, momentum: false };
    let masked = TrainConfig { objective: Objective::Masked { wmin: 1, wmax: 3 }, ..plain.clone() };
    let lp = autoenc::loss(&p, &plain, &data, 0).unwrap();
    assert!(lp < 1e-8, "{lp}");
    let lm = mean(&(0..50).map(|d| autoenc::loss(&p, &masked, &data, d).unwrap()).collect::<Vec<_>>());
    assert!(lm >= lp, "{lm} < {lp}");
}

#[test]
fn linear_model_on_a_line_converges() {
    let data = gen_union(&SyntheticSpec {
        ambient_dim: 3,
        components: vec![component(Matrix::column_vector(&[1.0, 0.0, 0.0]), 50)],
        noise_sigma: 0.0,
        seed: 1,
    })
    .unwrap();
    let init = AEParams::init(3, 1, true, Activation::Linear, Skip::None, 2).unwrap();
    let cfg = TrainConfig { step_size: 0.1, steps: 500, batch: 0, objective: Objective::Plain, seed: 0, momentum: false };
    let rep = autoenc::train(&init, &cfg, &data).unwrap();
    assert!(autoenc::loss(&rep.final_params, &cfg, &data, 0).unwrap() < 1e-6);
}

#[test]
fn masked_relu_model_stays_on_two_rays() {
    // Rays at 120° in R⁸ with equal-magnitude coordinates. Single-coordinate masks then leave
    // the masked second moment isotropic off each ray, so the masked optimum keeps the rows on
    // the rays; rays with uneven coordinates tilt the rows by O(1/n).
    let h = 8f64.sqrt();
    let u1 = vec![1.0 / h; 8];
    let u2: Vec<f64> = (0..8).map(|i| if i < 6 { -1.0 / h } else { 1.0 / h }).collect();
    let rays = [Matrix::column_vector(&u1), Matrix::column_vector(&u2)];
    let spec = SyntheticSpec {
        ambient_dim: 8,
        components: rays
            .iter()
            .map(|b| ComponentSpec { basis: b.clone(), count: 200, coefficients: poslab::datagen::CoefficientLaw::HalfGaussian })
            .collect(),
        noise_sigma: 0.0,
        seed: 11,
    };
    let data = gen_union(&spec).unwrap();
    let truth = UnionProjector::from_spans(&rays, DEFAULT_TIE_TOL).unwrap();
    for seed in 0..3 {
        // Rows start near the rays so that neither unit starts dead.
        let mut r = rng::stream(seed, 0, 0, tag::INIT);
        let rows: Vec<Vec<f64>> = [&u1, &u2].iter().map(|u| u.iter().map(|x| x + 0.1 * rng::gaussian(&mut r)).collect()).collect();
        let init = AEParams::tied(Matrix::from_rows(&rows).unwrap(), Activation::Relu, Skip::None);
        let cfg = TrainConfig { step_size: 0.1, steps: 1500, batch: 0, objective: Objective::Masked { wmin: 1, wmax: 1 }, seed, momentum: false };
        let p = autoenc::train(&init, &cfg, &data).unwrap().final_params;
        let m = compactness_metrics(&p, &data, &truth, None).unwrap();
        assert!(m.mean_off_union_residual < 1e-3, "seed {seed}: {}", m.mean_off_union_residual);
        assert!(m.mean_recon_error < 0.05 && m.assignment_accuracy == 1.0, "seed {seed}: collapsed");
    }
}

#[test]
fn linear_bottleneck_reconstructs_the_joint_span() {
    // Two lines in R³: a linear two-unit model learns their plane and reconstructs in-plane
    // anomalies perfectly, so their reconstructions sit off the union with near-zero scores.
    let (d1, d2) = (vec![1.0, 0.0, 0.0], vec![0.5, 0.75f64.sqrt(), 0.0]);
    let spec = SyntheticSpec {
        ambient_dim: 3,
        components: vec![component(Matrix::column_vector(&d1), 200), component(Matrix::column_vector(&d2), 200)],
        noise_sigma: 0.0,
        seed: 12,
    };
    let data = gen_union(&spec).unwrap();
    let init = AEParams::init(3, 2, true, Activation::Linear, Skip::None, 12).unwrap();
    let cfg = TrainConfig { step_size: 0.05, steps: 1500, batch: 0, objective: Objective::Plain, seed: 0, momentum: true };
    let p = autoenc::train(&init, &cfg, &data).unwrap().final_params;
    let mut r = rng::stream(12, 0, 0, tag::PROBE);
    let anomalies: Vec<Vec<f64>> = (0..100).map(|_| vec![rng::gaussian(&mut r), rng::gaussian(&mut r), 0.0]).collect();
    let anomalies = Dataset::new(anomalies, vec![0; 100]).unwrap();
    let truth = UnionProjector::from_spans(&[Matrix::column_vector(&d1), Matrix::column_vector(&d2)], DEFAULT_TIE_TOL).unwrap();
    let m = compactness_metrics(&p, &anomalies, &truth, None).unwrap();
    assert!(m.mean_recon_error < 1e-8, "{}", m.mean_recon_error);
    assert!(m.mean_off_union_residual > 0.1, "{}", m.mean_off_union_residual);
}

#[test]
fn random_scores_give_chance_auroc() {
    let mut r = rng::stream(13, 0, 0, tag::USER);
    let values: Vec<f64> = (0..1000)
        .map(|_| {
            let neg = rng::gaussian_vec(&mut r, 50);
            let pos = rng::gaussian_vec(&mut r, 50);
            auroc(&neg, &pos)
        })
        .collect();
    assert!((mean(&values) - 0.5).abs() < 0.05);
}

#[test]
fn translated_samples_of_another_user_fold_onto_the_reference() {
    // User i lives on two lines; user j is a rotated copy with small noise.
    let union = UnionProjector::from_spans(&[line(0.0), line(1.1)], DEFAULT_TIE_TOL).unwrap();
    let rot = IsometryT::rotation_2d(0.35);
    let user_j = |seed: u64| {
        let spec = SyntheticSpec {
            ambient_dim: 2,
            components: vec![component(line(0.0), 60), component(line(1.1), 60)],
            noise_sigma: 0.01,
            seed,
        };
        let d = gen_union(&spec).unwrap();
        Dataset::new(d.samples.iter().map(|s| rot.apply(s).unwrap()).collect(), d.labels).unwrap()
    };
    let healthy = user_j(14);
    let cfg = FoldConfig { step_size: 0.05, steps: 1500, momentum: true };
    let rep = train_fold(&TransformParams::identity(2), &union, &healthy, &cfg).unwrap();
    let healthy_gap = mean_fold_loss(&rep.params, &union, &healthy).unwrap();
    let fresh = folding::translate(&rep.params, &user_j(15)).unwrap();
    let gaps: Vec<f64> = fresh.samples.iter().map(|s| project_union(&union, s).unwrap().distance.powi(2)).collect();
    assert!(mean(&gaps) <= 2.0 * healthy_gap, "{} vs {healthy_gap}", mean(&gaps));
}

#[test]
fn single_sample_alignment_reaches_the_union() {
    let union = UnionProjector::from_spans(&[line(0.0), line(PI / 2.0)], DEFAULT_TIE_TOL).unwrap();
    let s = IsometryT::rotation_2d(0.3).apply(&[2.0, 0.0]).unwrap();
    let cfg = FoldConfig { step_size: 0.05, steps: 2000, momentum: true };
    let (aligned, gap) = folding::align_explain(&s, &union, &cfg).unwrap();
    assert!(gap <= 1e-6);
    let before = project_union(&union, &s).unwrap().distance;
    assert!(numerics::distance(&aligned, &project_union(&union, &aligned).unwrap().point) <= 0.1 * before);
}

#[test]
fn two_branch_sharing_is_pairwise_cross_projection_plus_self_term() {
    let mut r = rng::stream(16, 0, 0, tag::USER);
    for _ in 0..20 {
        let res = vec![rng::gaussian_vec(&mut r, 5), rng::gaussian_vec(&mut r, 5)];
        let eps = 1e-9;
        let (_, shared) = multi_branch_step(&res, eps).unwrap();
        for q in 0..2 {
            let t = 1 - q;
            let oracle = numerics::add(&cross_project(&res[q], &res[q], eps), &cross_project(&res[t], &res[q], eps));
            assert!(numerics::distance(&shared[q], &oracle) < 1e-12);
        }
    }
}

#[test]
fn residual_energy_audit() {
    // Logged, not asserted: the shared estimate is a reweighting, not an orthogonal projection.
    let mut r = rng::stream(17, 0, 0, tag::USER);
    let mut violations = 0;
    for _ in 0..500 {
        let si = feature_map(&gaussian(&mut r, 6, 4));
        let sj = feature_map(&gaussian(&mut r, 6, 4));
        let (bi, bj) = dba_intersection(&si, &sj).unwrap();
        let (ri, rj) = dba_residuals(&si, &sj, &bi, &bj).unwrap();
        if ri.frobenius_norm() > si.frobenius_norm() || rj.frobenius_norm() > sj.frobenius_norm() {
            violations += 1;
        }
    }
    println!("residual energy above total energy in {violations}/500 draws");
}

#[test]
fn random_rows_have_cosine_square_one_over_channels() {
    let mut r = rng::stream(18, 0, 0, tag::USER);
    for c in [4usize, 16] {
        let j = orth_loss(&gaussian(&mut r, 4000, c), &gaussian(&mut r, 4000, c)).unwrap();
        assert!((j * c as f64 - 1.0).abs() < 0.1, "C={c}: {j}");
    }
}

#[test]
fn doubling_orth_weight_never_raises_final_j() {
    for seed in 0..5 {
        let finals: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&lambda| {
                let cfg = DBAConfig { tokens: 8, channels: 4, lambda_orth: lambda, seed };
                let data = gen_union(&dba::toy_spec(&cfg, 8, 0.05).unwrap()).unwrap();
                *dba::train_toy(&cfg, &data, 150, 0.05).unwrap().j_orth.last().unwrap()
            })
            .collect();
        assert!(finals[1] <= finals[0] + 1e-9 && finals[2] <= finals[1] + 1e-9, "seed {seed}: {finals:?}");
    }
}

#[test]
fn dnn_count_below_classical_exactly_when_the_condition_holds() {
    for c in [1u64, 7, 100] {
        for groups in [vec![2u64], vec![3, 4], vec![10, 10], vec![2, 2, 2]] {
            let prod: u64 = groups.iter().product();
            let sum: u64 = groups.iter().sum();
            for ci in 1..=200u64 {
                let spec = ComplexitySpec { cover_m: c, cover_mi: ci, group_sizes: groups.clone(), num_components: 1 };
                let (dnn, classical) = (n_dnn(&spec).unwrap(), n_classical(&spec).unwrap());
                let condition = (ci * sum) as u128 <= (c as u128) * (prod as u128 - 1);
                assert_eq!(dnn <= classical, condition, "C={c} Mi={ci} groups={groups:?}");
            }
        }
    }
}

#[test]
fn reach_bound_scales_as_inverse_power_of_epsilon() {
    for k in 1..=3u32 {
        let b = |eps: f64| niyogi_bound(&ReachSpec { volume: TAU, k, tau: 1.0, epsilon: eps }).unwrap();
        let ratio = b(0.005) / b(0.01);
        assert!((ratio / 2f64.powi(k as i32) - 1.0).abs() < 0.05, "k={k}: {ratio}");
    }
}

#[test]
fn pooled_cover_of_overlapping_planes_is_at_most_the_sum_plus_slack() {
    let mut r = rng::stream(19, 0, 0, tag::USER);
    let mut worst = i64::MIN;
    for _ in 0..100 {
        let a = r.random_range(0.2..1.4f64);
        let planes = [[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], [vec![1.0, 0.0, 0.0], vec![0.0, a.cos(), a.sin()]]];
        let comps: Vec<Dataset> = planes
            .iter()
            .map(|[u, v]| {
                let pts = (0..150)
                    .map(|_| {
                        let (x, y) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                        (0..3).map(|i| x * u[i] + y * v[i]).collect()
                    })
                    .collect();
                Dataset::unlabeled(pts).unwrap()
            })
            .collect();
        let (lhs, rhs) = union_cover_audit(&comps, 0.3).unwrap();
        worst = worst.max(lhs as i64 - rhs as i64);
    }
    assert!(worst <= 2, "pooled cover exceeded the sum by {worst}");
}

#[test]
fn circle_cover_tracks_arc_length() {
    let c = gen_circle(10_000, 0.0, 0).unwrap();
    let count = covering_number(&c, 0.1).unwrap() as f64;
    assert!((count / (PI / 0.1) - 1.0).abs() <= 0.1, "{count}");
}
