use super::*;
use crate::math::{dot, grad_check, kl_to_standard_normal, log_sum_exp, Matrix, RngStream};
use crate::sim::OrganicSession;

const LN_2: f64 = std::f64::consts::LN_2;

fn random_params(p: usize, k: usize, scale: f64, rng: &mut RngStream) -> OrganicParams {
    OrganicParams {
        psi: Matrix::from_fn(p, k, |_, _| scale * rng.standard_normal()),
        rho: (0..p).map(|_| 0.3 * rng.standard_normal()).collect(),
    }
}

fn random_posterior(k: usize, rng: &mut RngStream) -> DiagGaussianPosterior {
    DiagGaussianPosterior {
        mu: (0..k).map(|_| rng.standard_normal()).collect(),
        var: (0..k).map(|_| 0.2 + rng.uniform()).collect(),
    }
}

fn random_items(t: usize, p: usize, rng: &mut RngStream) -> Vec<u32> {
    (0..t).map(|_| rng.below(p) as u32).collect()
}

/// Monte Carlo estimate of the exact ELBO: mean and standard error of the
/// single-sample reparameterized bound over `n` draws. The data and KL terms
/// are deterministic, so this is an unbiased estimate of the true ELBO.
fn mc_elbo(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    items: &[u32],
    n: usize,
    rng: &mut RngStream,
) -> (f64, f64) {
    let k = params.k();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let eps = rng.standard_normal_vec(k);
        let v = elbo_reparam(params, post, items, &eps).unwrap();
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

#[test]
fn reparam_single_item_catalog_is_minus_kl() {
    // P = 1: the softmax is degenerate and the ELBO reduces to -KL at eps = 0
    let params = OrganicParams { psi: Matrix::from_vec(1, 2, vec![0.4, -0.2]), rho: vec![0.7] };
    let post = DiagGaussianPosterior { mu: vec![0.3, -0.5], var: vec![0.8, 1.3] };
    let items = vec![0, 0, 0];
    let v = elbo_reparam(&params, &post, &items, &[0.0, 0.0]).unwrap();
    let kl = kl_to_standard_normal(&post.mu, &post.var).unwrap();
    assert!((v + kl).abs() < 1e-12, "ELBO {v} vs -KL {}", -kl);
}

#[test]
fn reparam_hand_computed_instance() {
    // K=1, P=2, psi=[[1],[-1]], rho=0, mu=0, var=1, eps=0, one view of item 0
    let params = OrganicParams { psi: Matrix::from_vec(2, 1, vec![1.0, -1.0]), rho: vec![0.0; 2] };
    let post = DiagGaussianPosterior { mu: vec![0.0], var: vec![1.0] };
    let v = elbo_reparam(&params, &post, &[0], &[0.0]).unwrap();
    assert!((v + LN_2).abs() < 1e-15, "expected -ln 2, got {v}");
}

#[test]
fn reparam_gradients_pass_grad_check() {
    let mut rng = RngStream::new(41, 0);
    for trial in 0..5 {
        let (p, k) = (5, 3);
        let params = random_params(p, k, 0.8, &mut rng);
        let post = random_posterior(k, &mut rng);
        let items = random_items(4, p, &mut rng);
        let eps = rng.standard_normal_vec(k);

        let g = elbo_reparam_grads(&params, &post, &items, &eps).unwrap();
        let mut theta = post.mu.clone();
        theta.extend(post.var.iter().map(|v| v.ln()));
        theta.extend_from_slice(params.psi.data());
        theta.extend_from_slice(&params.rho);
        let mut claimed = g.d_mu.clone();
        claimed.extend_from_slice(&g.d_logvar);
        claimed.extend_from_slice(g.d_psi.data());
        claimed.extend_from_slice(&g.d_rho);

        let items_c = items.clone();
        let eps_c = eps.clone();
        let err = grad_check(
            &mut |t: &[f64]| {
                let post = DiagGaussianPosterior {
                    mu: t[..k].to_vec(),
                    var: t[k..2 * k].iter().map(|lv| lv.exp()).collect(),
                };
                let params = OrganicParams {
                    psi: Matrix::from_vec(p, k, t[2 * k..2 * k + p * k].to_vec()),
                    rho: t[2 * k + p * k..].to_vec(),
                };
                elbo_reparam(&params, &post, &items_c, &eps_c).unwrap()
            },
            &claimed,
            &theta,
        );
        assert!(err < 1e-4, "trial {trial}: grad error {err}");
    }
}

#[test]
fn bouchard_stationary_in_xi_at_optimum() {
    let mut rng = RngStream::new(42, 0);
    let (p, k) = (6, 2);
    let params = random_params(p, k, 0.7, &mut rng);
    let post = random_posterior(k, &mut rng);
    let items = random_items(5, p, &mut rng);
    // optimal xi for fixed (mu, var, a): xi_p = sqrt(q_p + (m_p - a)^2)
    let mut bstate = optimize_bouchard_state(&params, &post.mu, &post.var, 50);
    // hold a fixed, recompute xi one more time so xi is exactly optimal for a
    let a = bstate.a;
    for item in 0..p {
        let row = params.psi.row(item);
        let m = dot(row, &post.mu) + params.rho[item];
        let q: f64 = row.iter().zip(&post.var).map(|(x, v)| x * x * v).sum();
        bstate.xi[item] = (q + (m - a) * (m - a)).sqrt();
    }
    let g = elbo_bouchard_grads(&params, &post, &bstate, &items).unwrap();
    for (item, d) in g.d_xi.iter().enumerate() {
        assert!(d.abs() < 1e-6, "d/dxi[{item}] = {d} not stationary");
    }
}

#[test]
fn bouchard_is_a_true_lower_bound() {
    let mut rng = RngStream::new(43, 0);
    for trial in 0..8 {
        let (p, k) = (2 + rng.below(4), 1 + rng.below(3));
        let params = random_params(p, k, 0.6, &mut rng);
        let post = random_posterior(k, &mut rng);
        let items = random_items(3, p, &mut rng);
        let bstate = optimize_bouchard_state(&params, &post.mu, &post.var, 30);
        let bound = elbo_bouchard(&params, &post, &bstate, &items).unwrap();
        let (mc, se) = mc_elbo(&params, &post, &items, 100_000, &mut rng);
        assert!(
            bound <= mc + 3.0 * se,
            "trial {trial}: bound {bound} above MC ELBO {mc} (se {se})"
        );
    }
}

#[test]
fn bouchard_single_item_catalog_tightens_to_minus_kl() {
    let params = OrganicParams { psi: Matrix::from_vec(1, 1, vec![0.9]), rho: vec![-0.4] };
    let post = DiagGaussianPosterior { mu: vec![0.6], var: vec![0.01] };
    let items = vec![0u32, 0];
    let bstate = optimize_bouchard_state(&params, &post.mu, &post.var, 100_000);
    let bound = elbo_bouchard(&params, &post, &bstate, &items).unwrap();
    let kl = kl_to_standard_normal(&post.mu, &post.var).unwrap();
    assert!(bound <= -kl + 1e-12, "bound {bound} exceeds -KL {}", -kl);
    assert!(
        (bound + kl).abs() < 1e-3,
        "bound {bound} not within 1e-3 of -KL {}",
        -kl
    );
}

#[test]
fn bouchard_gradients_pass_grad_check() {
    let mut rng = RngStream::new(44, 0);
    for trial in 0..5 {
        let (p, k) = (5, 2);
        let params = random_params(p, k, 0.7, &mut rng);
        let post = random_posterior(k, &mut rng);
        let items = random_items(4, p, &mut rng);
        let bstate = BouchardState {
            a: 0.3 * rng.standard_normal(),
            xi: (0..p).map(|_| 0.5 + rng.uniform()).collect(),
        };

        let g = elbo_bouchard_grads(&params, &post, &bstate, &items).unwrap();
        let mut theta = post.mu.clone();
        theta.extend(post.var.iter().map(|v| v.ln()));
        theta.extend_from_slice(params.psi.data());
        theta.extend_from_slice(&params.rho);
        theta.push(bstate.a);
        theta.extend_from_slice(&bstate.xi);
        let mut claimed = g.d_mu.clone();
        claimed.extend_from_slice(&g.d_logvar);
        claimed.extend_from_slice(g.d_psi.data());
        claimed.extend_from_slice(&g.d_rho);
        claimed.push(g.d_a);
        claimed.extend_from_slice(&g.d_xi);

        let items_c = items.clone();
        let err = grad_check(
            &mut |t: &[f64]| {
                let post = DiagGaussianPosterior {
                    mu: t[..k].to_vec(),
                    var: t[k..2 * k].iter().map(|lv| lv.exp()).collect(),
                };
                let mut off = 2 * k;
                let params = OrganicParams {
                    psi: Matrix::from_vec(p, k, t[off..off + p * k].to_vec()),
                    rho: t[off + p * k..off + p * k + p].to_vec(),
                };
                off += p * k + p;
                let bstate = BouchardState { a: t[off], xi: t[off + 1..].to_vec() };
                elbo_bouchard(&params, &post, &bstate, &items_c).unwrap()
            },
            &claimed,
            &theta,
        );
        assert!(err < 1e-4, "trial {trial}: grad error {err}");
    }
}

#[test]
fn negsampled_bouchard_full_set_is_exact_and_unbiased() {
    let mut rng = RngStream::new(45, 0);
    let (p, k) = (8, 2);
    let params = random_params(p, k, 0.6, &mut rng);
    let post = random_posterior(k, &mut rng);
    let items = random_items(5, p, &mut rng);
    let bstate = optimize_bouchard_state(&params, &post.mu, &post.var, 20);
    let full = elbo_bouchard(&params, &post, &bstate, &items).unwrap();

    // S = P reproduces the full bound exactly
    let all: Vec<usize> = (0..p).collect();
    let same = elbo_bouchard_negsampled(&params, &post, &bstate, &items, &all).unwrap();
    assert!((full - same).abs() < 1e-12);

    // unbiasedness at S = P/4 over resamples
    let s = p / 4;
    let n = 10_000;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        let negs = rng.sample_without_replacement(p, s);
        let v = elbo_bouchard_negsampled(&params, &post, &bstate, &items, &negs).unwrap();
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n as f64;
    let sd = (sumsq / n as f64 - mean * mean).max(0.0).sqrt();
    let se = sd / (n as f64).sqrt();
    assert!(
        (mean - full).abs() <= 3.0 * se,
        "negsampled mean {mean} vs full {full} (se {se})"
    );

    // variance shrinks as S grows
    let mut variances = Vec::new();
    for s in [1usize, p / 4, p / 2, p] {
        let n = 4000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let negs = rng.sample_without_replacement(p, s);
            let v = elbo_bouchard_negsampled(&params, &post, &bstate, &items, &negs).unwrap();
            sum += v;
            sumsq += v * v;
        }
        let m = sum / n as f64;
        variances.push((sumsq / n as f64 - m * m).max(0.0));
    }
    for w in variances.windows(2) {
        assert!(
            w[1] <= w[0] + 1e-9,
            "variance not monotone in S: {variances:?}"
        );
    }
}

#[test]
fn logconcave_optimal_phi_matches_grid_search() {
    let mut rng = RngStream::new(46, 0);
    let (p, k) = (6, 2);
    let params = random_params(p, k, 0.7, &mut rng);
    let post = random_posterior(k, &mut rng);
    let items = random_items(4, p, &mut rng);

    let phi_star = optimal_phi(&params, &post);
    let best_val = elbo_logconcave(&params, &post, phi_star, &items).unwrap();
    // dense grid around the optimum; no grid point may beat it meaningfully
    let mut grid_best = f64::NEG_INFINITY;
    let mut grid_phi = phi_star;
    for i in -2000i32..=2000 {
        let phi = phi_star * (1.0 + i as f64 * 1e-5);
        let v = elbo_logconcave(&params, &post, phi, &items).unwrap();
        if v > grid_best {
            grid_best = v;
            grid_phi = phi;
        }
    }
    assert!(grid_best <= best_val + 1e-6, "grid beat analytic: {grid_best} > {best_val}");
    assert!((grid_phi / phi_star - 1.0).abs() < 1e-3);
}

#[test]
fn logconcave_is_a_true_lower_bound() {
    let mut rng = RngStream::new(47, 0);
    for trial in 0..8 {
        let (p, k) = (2 + rng.below(4), 1 + rng.below(3));
        let params = random_params(p, k, 0.6, &mut rng);
        let post = random_posterior(k, &mut rng);
        let items = random_items(3, p, &mut rng);
        let phi = optimal_phi(&params, &post);
        let bound = elbo_logconcave(&params, &post, phi, &items).unwrap();
        let (mc, se) = mc_elbo(&params, &post, &items, 100_000, &mut rng);
        assert!(
            bound <= mc + 3.0 * se,
            "trial {trial}: bound {bound} above MC ELBO {mc} (se {se})"
        );
    }
}

#[test]
fn logconcave_point_mass_recovers_exact_log_likelihood() {
    let mut rng = RngStream::new(48, 0);
    let (p, k) = (5, 2);
    let params = random_params(p, k, 0.8, &mut rng);
    let mu: Vec<f64> = (0..k).map(|_| rng.standard_normal()).collect();
    let post = DiagGaussianPosterior { mu: mu.clone(), var: vec![1e-14; k] };
    let items = random_items(6, p, &mut rng);

    let phi = optimal_phi(&params, &post);
    let bound = elbo_logconcave(&params, &post, phi, &items).unwrap();
    let kl = kl_to_standard_normal(&post.mu, &post.var).unwrap();

    // exact log-likelihood of the point estimate mu
    let mut logits = params.psi.matvec(&mu);
    for (z, r) in logits.iter_mut().zip(&params.rho) {
        *z += r;
    }
    let lse = log_sum_exp(&logits);
    let loglik: f64 = items
        .iter()
        .map(|&v| logits[v as usize] - lse)
        .sum();

    assert!(
        (bound + kl - loglik).abs() < 1e-6,
        "likelihood part {} vs exact {loglik}",
        bound + kl
    );
}

#[test]
fn logconcave_gradients_pass_grad_check() {
    let mut rng = RngStream::new(49, 0);
    for trial in 0..5 {
        let (p, k) = (5, 2);
        let params = random_params(p, k, 0.7, &mut rng);
        let post = random_posterior(k, &mut rng);
        let items = random_items(4, p, &mut rng);
        let phi = 0.5 * optimal_phi(&params, &post); // off-optimum on purpose

        let (g, d_logphi) = elbo_logconcave_grads(&params, &post, phi, &items).unwrap();
        let mut theta = post.mu.clone();
        theta.extend(post.var.iter().map(|v| v.ln()));
        theta.extend_from_slice(params.psi.data());
        theta.extend_from_slice(&params.rho);
        theta.push(phi.ln());
        let mut claimed = g.d_mu.clone();
        claimed.extend_from_slice(&g.d_logvar);
        claimed.extend_from_slice(g.d_psi.data());
        claimed.extend_from_slice(&g.d_rho);
        claimed.push(d_logphi);

        let items_c = items.clone();
        let err = grad_check(
            &mut |t: &[f64]| {
                let post = DiagGaussianPosterior {
                    mu: t[..k].to_vec(),
                    var: t[k..2 * k].iter().map(|lv| lv.exp()).collect(),
                };
                let off = 2 * k;
                let params = OrganicParams {
                    psi: Matrix::from_vec(p, k, t[off..off + p * k].to_vec()),
                    rho: t[off + p * k..off + p * k + p].to_vec(),
                };
                let phi = t[off + p * k + p].exp();
                elbo_logconcave(&params, &post, phi, &items_c).unwrap()
            },
            &claimed,
            &theta,
        );
        assert!(err < 1e-4, "trial {trial}: grad error {err}");
    }
}

#[test]
fn logconcave_rejects_nonpositive_phi() {
    let params = OrganicParams { psi: Matrix::zeros(3, 1), rho: vec![0.0; 3] };
    let post = DiagGaussianPosterior::standard(1);
    assert!(matches!(
        elbo_logconcave(&params, &post, 0.0, &[0]),
        Err(crate::Error::NonPositivePhi(_))
    ));
}

#[test]
fn em_empty_session_returns_prior() {
    let mut rng = RngStream::new(50, 0);
    let params = random_params(6, 3, 0.6, &mut rng);
    let (post, _b) = em_cycle(
        &params,
        &BouchardState::init(6),
        &FullGaussianPosterior::standard(3),
        &[],
    )
    .unwrap();
    for i in 0..3 {
        assert!(post.mu[i].abs() < 1e-12);
        for j in 0..3 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((post.cov[(i, j)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn em_bound_is_monotone() {
    let mut rng = RngStream::new(51, 0);
    for trial in 0..20 {
        let (p, k) = (2 + rng.below(5), 1 + rng.below(3));
        let params = random_params(p, k, 0.7, &mut rng);
        let items = random_items(1 + rng.below(6), p, &mut rng);
        let mut post = FullGaussianPosterior::standard(k);
        let mut bstate = BouchardState::init(p);
        let mut last = elbo_bouchard_full(&params, &post, &bstate, &items).unwrap();
        for cycle in 0..30 {
            let (np, nb) = em_cycle(&params, &bstate, &post, &items).unwrap();
            post = np;
            bstate = nb;
            let now = elbo_bouchard_full(&params, &post, &bstate, &items).unwrap();
            assert!(
                now >= last - 1e-8,
                "trial {trial} cycle {cycle}: bound fell {last} -> {now}"
            );
            last = now;
        }
    }
}

/// Numerical-integration oracle for the 1-dimensional exact posterior mean.
fn quadrature_posterior_mean(params: &OrganicParams, items: &[u32]) -> f64 {
    let n = 1_000_001usize;
    let (lo, hi) = (-10.0f64, 10.0);
    let h = (hi - lo) / (n - 1) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let w = lo + i as f64 * h;
        let logits: Vec<f64> = (0..params.p())
            .map(|item| params.psi[(item, 0)] * w + params.rho[item])
            .collect();
        let lse = log_sum_exp(&logits);
        let loglik: f64 = items.iter().map(|&v| logits[v as usize] - lse).sum();
        let log_post = loglik - 0.5 * w * w;
        let weight = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let f = (log_post).exp() * weight;
        num += f * w;
        den += f;
    }
    num / den
}

#[test]
fn em_matches_quadrature_posterior_mean() {
    let mut rng = RngStream::new(52, 0);
    for trial in 0..5 {
        let params = random_params(2, 1, 0.9, &mut rng);
        let items = random_items(4, 2, &mut rng);
        let mut post = FullGaussianPosterior::standard(1);
        let mut bstate = BouchardState::init(2);
        for _ in 0..200 {
            let (np, nb) = em_cycle(&params, &bstate, &post, &items).unwrap();
            post = np;
            bstate = nb;
        }
        let oracle = quadrature_posterior_mean(&params, &items);
        assert!(
            (post.mu[0] - oracle).abs() < 0.05,
            "trial {trial}: EM mean {} vs quadrature {oracle}",
            post.mu[0]
        );
    }
}

#[test]
fn online_em_full_sweep_delta_one_reproduces_batch() {
    let mut rng = RngStream::new(53, 0);
    let (p, k) = (7, 2);
    let params = random_params(p, k, 0.6, &mut rng);
    let items = random_items(5, p, &mut rng);

    // settle a few cycles so the stored xi is consistent with (mu, cov, a)
    let mut post = FullGaussianPosterior::standard(k);
    let mut bstate = BouchardState::init(p);
    for _ in 0..3 {
        let (np, nb) = em_cycle(&params, &bstate, &post, &items).unwrap();
        post = np;
        bstate = nb;
    }
    // batch cycle from here
    let (bpost, _bb) = em_cycle(&params, &bstate, &post, &items).unwrap();
    let precision_b = crate::math::invert_spd(&bpost.cov).unwrap();
    let shift_b = precision_b.matvec(&bpost.mu);

    // online step over the full catalog with delta = 1 from the same state
    let state = OnlineEmState {
        precision: crate::math::invert_spd(&post.cov).unwrap(),
        shift: crate::math::invert_spd(&post.cov).unwrap().matvec(&post.mu),
        a: bstate.a,
    };
    let all: Vec<usize> = (0..p).collect();
    let next = online_em_step(&state, &params, &items, &all, 1.0).unwrap();

    assert!(next.precision.rel_frobenius_distance(&precision_b) < 1e-10);
    for i in 0..k {
        assert!((next.shift[i] - shift_b[i]).abs() < 1e-10);
    }
}

#[test]
fn online_em_converges_to_batch_fixed_point() {
    let mut rng = RngStream::new(54, 0);
    let (p, k) = (20, 2);
    let params = random_params(p, k, 0.5, &mut rng);
    let items = random_items(5, p, &mut rng);

    // batch EM to convergence
    let mut post = FullGaussianPosterior::standard(k);
    let mut bstate = BouchardState::init(p);
    for _ in 0..300 {
        let (np, nb) = em_cycle(&params, &bstate, &post, &items).unwrap();
        post = np;
        bstate = nb;
    }
    let precision_b = crate::math::invert_spd(&post.cov).unwrap();
    let shift_b = precision_b.matvec(&post.mu);
    let mut batch_nat = precision_b.data().to_vec();
    batch_nat.extend_from_slice(&shift_b);
    batch_nat.push(bstate.a);

    // Robbins-Monro with singleton item draws and tail averaging
    let mut state = OnlineEmState::init(k);
    let steps = 200_000usize;
    let tail_start = steps / 2;
    let mut tail_avg = vec![0.0; batch_nat.len()];
    let mut tail_n = 0.0;
    for s in 1..=steps {
        let delta = (s as f64).powf(-0.7);
        let item = rng.below(p);
        state = online_em_step(&state, &params, &items, &[item], delta).unwrap();
        if s > tail_start {
            for (acc, v) in tail_avg.iter_mut().zip(state.flat()) {
                *acc += v;
            }
            tail_n += 1.0;
        }
    }
    for v in tail_avg.iter_mut() {
        *v /= tail_n;
    }
    let dist: f64 = tail_avg
        .iter()
        .zip(&batch_nat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(dist < 1e-2, "online EM natural params {dist} from batch");
}

#[test]
fn online_em_stays_finite_over_long_runs() {
    let mut rng = RngStream::new(55, 0);
    let (p, k) = (12, 3);
    let params = random_params(p, k, 0.8, &mut rng);
    let items = random_items(8, p, &mut rng);
    let mut state = OnlineEmState::init(k);
    for s in 1..=100_000usize {
        let delta = (s as f64).powf(-0.7);
        let item = rng.below(p);
        state = online_em_step(&state, &params, &items, &[item], delta).unwrap();
    }
    assert!(state.precision.is_finite());
    assert!(state.shift.iter().all(|x| x.is_finite()));
    assert!(state.a.is_finite());
}

#[test]
fn infer_posterior_em_empty_session_is_prior() {
    let mut rng = RngStream::new(56, 0);
    let params = random_params(8, 3, 0.6, &mut rng);
    let post = infer_posterior_em(&params, &[], 100).unwrap();
    assert!(post.mean().iter().all(|m| m.abs() < 1e-12));
    assert!(post.marginal_var().iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn infer_posterior_em_saturates_on_repeated_item() {
    let mut rng = RngStream::new(57, 0);
    let params = random_params(10, 3, 0.8, &mut rng);
    let items = vec![4u32; 50];
    let post = infer_posterior_em(&params, &items, 100).unwrap();
    let affin: Vec<f64> = (0..10).map(|a| dot(params.psi.row(a), post.mean())).collect();
    let best = affin
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0;
    assert_eq!(best, 4, "repeated item should dominate affinity: {affin:?}");
}

#[test]
fn next_item_probs_normalize_and_degenerate_agreement() {
    let mut rng = RngStream::new(58, 0);
    let params = random_params(9, 2, 0.7, &mut rng);
    let post = Posterior::Diag(DiagGaussianPosterior {
        mu: vec![0.4, -0.8],
        var: vec![1e-12, 1e-12],
    });
    let mean_probs =
        next_item_probs(&params, &post, PredictMode::Mean, &mut rng).unwrap();
    assert!((mean_probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    let mc_probs =
        next_item_probs(&params, &post, PredictMode::Mc { samples: 50 }, &mut rng).unwrap();
    assert!((mc_probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    // with a collapsed posterior the two modes coincide
    for (a, b) in mean_probs.iter().zip(&mc_probs) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn next_item_probs_symmetric_instance() {
    let params = OrganicParams { psi: Matrix::from_vec(2, 1, vec![1.0, -1.0]), rho: vec![0.0; 2] };
    let post = Posterior::Diag(DiagGaussianPosterior { mu: vec![0.0], var: vec![1.0] });
    let mut rng = RngStream::new(59, 0);
    let mean_probs = next_item_probs(&params, &post, PredictMode::Mean, &mut rng).unwrap();
    assert!((mean_probs[0] - 0.5).abs() < 1e-12);
    let mc = next_item_probs(&params, &post, PredictMode::Mc { samples: 10_000 }, &mut rng).unwrap();
    // symmetry holds in expectation; 3 standard errors at S draws
    let se = 0.25f64 / (10_000f64).sqrt();
    assert!((mc[0] - 0.5).abs() < 3.0 * se, "mc prob {}", mc[0]);
}

#[test]
fn next_item_probs_mean_mode_shift_invariant() {
    let mut rng = RngStream::new(60, 0);
    let params = random_params(7, 2, 0.8, &mut rng);
    let mut shifted = params.clone();
    for r in shifted.rho.iter_mut() {
        *r += 3.7;
    }
    let post = Posterior::Diag(random_posterior(2, &mut rng));
    let a = next_item_probs(&params, &post, PredictMode::Mean, &mut rng).unwrap();
    let b = next_item_probs(&shifted, &post, PredictMode::Mean, &mut rng).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn linear_encoder_parameter_count() {
    let mut rng = RngStream::new(61, 0);
    let enc = LinearEncoder::init(30, 4, &mut rng);
    assert_eq!(enc.param_count(), 2 * 4 * (30 + 1));
}

fn simulate_model_sessions(
    params: &OrganicParams,
    n: usize,
    mean_len: f64,
    rng: &mut RngStream,
) -> Vec<OrganicSession> {
    let k = params.k();
    (0..n)
        .map(|u| {
            let omega = rng.standard_normal_vec(k);
            let mut logits = params.psi.matvec(&omega);
            for (z, r) in logits.iter_mut().zip(&params.rho) {
                *z += r;
            }
            crate::math::softmax_in_place(&mut logits);
            let t = (rng.poisson(mean_len) as usize).max(2);
            OrganicSession {
                user_id: u as u64,
                items: (0..t).map(|_| rng.categorical(&logits) as u32).collect(),
            }
        })
        .collect()
}

#[test]
fn fit_vae_zero_epochs_returns_initialization() {
    let mut rng = RngStream::new(62, 0);
    let sessions = simulate_model_sessions(
        &random_params(10, 2, 1.0, &mut rng),
        20,
        6.0,
        &mut rng,
    );
    let cfg = OrganicTrainConfig { k: 2, epochs: 0, ..Default::default() };
    let trained = fit_vae(&sessions, 10, &cfg, &mut RngStream::new(1, 0)).unwrap();
    // same init rng stream gives the same initialization
    let mut init_rng = RngStream::new(1, 0).fork(0);
    let psi0 = Matrix::from_fn(10, 2, |_, _| 0.01 * init_rng.standard_normal());
    assert_eq!(trained.params.psi, psi0);
    assert!(trained.params.rho.iter().all(|&r| r == 0.0));
    assert!(trained.elbo_trace.is_empty());
}

#[test]
fn fit_vae_rejects_bad_inputs() {
    let cfg = OrganicTrainConfig::default();
    assert!(matches!(
        fit_vae(&[], 5, &cfg, &mut RngStream::new(0, 0)),
        Err(crate::Error::EmptyDataset)
    ));
    let bad = vec![OrganicSession { user_id: 0, items: vec![9] }];
    assert!(matches!(
        fit_vae(&bad, 5, &cfg, &mut RngStream::new(0, 0)),
        Err(crate::Error::ItemIdOutOfRange { .. })
    ));
}

#[test]
fn fit_vae_beats_popularity_on_model_data() {
    let (p, k) = (10usize, 2usize);
    let mut gen_rng = RngStream::new(63, 0);
    let true_params = OrganicParams {
        psi: Matrix::from_fn(p, k, |_, _| 1.2 * gen_rng.standard_normal()),
        rho: (0..p).map(|_| 0.5 * gen_rng.standard_normal()).collect(),
    };
    let train = simulate_model_sessions(&true_params, 2000, 8.0, &mut gen_rng);
    let test = simulate_model_sessions(&true_params, 400, 8.0, &mut gen_rng);

    let cfg = OrganicTrainConfig {
        k,
        learning_rate: 3e-3,
        epochs: 120,
        batch_size: 32,
        bound: Bound::Reparam,
        neg_samples: 0,
        l2: 0.0,
        seed: 0,
        encoder: EncoderKind::Linear,
    };
    let trained = fit_vae(&train, p, &cfg, &mut RngStream::new(64, 0)).unwrap();

    // smoothed trace should be non-decreasing (1% transient dips allowed)
    let trace = &trained.elbo_trace;
    let window = 10usize;
    let smooth: Vec<f64> = trace
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    for i in 1..smooth.len() {
        let floor = smooth[..i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(
            smooth[i] >= floor - 0.01 * floor.abs(),
            "smoothed ELBO dipped at {i}: {} < {floor}",
            smooth[i]
        );
    }

    // held-out next-item log-likelihood vs the popularity model
    let mut counts = vec![1.0f64; p]; // add-one smoothing
    for s in &train {
        for &v in &s.items {
            counts[v as usize] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let pop_probs: Vec<f64> = counts.iter().map(|c| c / total).collect();

    let mut rng = RngStream::new(65, 0);
    let mut model_ll = 0.0;
    let mut pop_ll = 0.0;
    let mut n = 0.0;
    for s in &test {
        let (target, prefix) = s.items.split_last().unwrap();
        let post = infer_posterior_em(&trained.params, prefix, 100).unwrap();
        let probs =
            next_item_probs(&trained.params, &post, PredictMode::Mean, &mut rng).unwrap();
        model_ll += probs[*target as usize].max(1e-300).ln();
        pop_ll += pop_probs[*target as usize].ln();
        n += 1.0;
    }
    model_ll /= n;
    pop_ll /= n;
    assert!(
        model_ll > pop_ll,
        "model mean log-lik {model_ll} does not beat popularity {pop_ll}"
    );
}

#[test]
fn encoder_and_em_posteriors_agree_directionally() {
    let (p, k) = (10usize, 2usize);
    let mut gen_rng = RngStream::new(66, 0);
    let true_params = OrganicParams {
        psi: Matrix::from_fn(p, k, |_, _| 1.2 * gen_rng.standard_normal()),
        rho: vec![0.0; p],
    };
    let train = simulate_model_sessions(&true_params, 1500, 10.0, &mut gen_rng);
    let cfg = OrganicTrainConfig {
        k,
        learning_rate: 3e-3,
        epochs: 150,
        batch_size: 32,
        ..Default::default()
    };
    let trained = fit_vae(&train, p, &cfg, &mut RngStream::new(67, 0)).unwrap();

    let eval = simulate_model_sessions(&true_params, 100, 10.0, &mut gen_rng);
    let mut cos_sum = 0.0;
    for s in &eval {
        let enc = infer_posterior(&trained.params, &trained.encoder, &s.items, InferenceMethod::Encoder)
            .unwrap();
        let em = infer_posterior(&trained.params, &trained.encoder, &s.items, InferenceMethod::em_default())
            .unwrap();
        let (a, b) = (enc.mean().to_vec(), em.mean().to_vec());
        let na = dot(&a, &a).sqrt();
        let nb = dot(&b, &b).sqrt();
        cos_sum += dot(&a, &b) / (na * nb + 1e-12);
    }
    let mean_cos = cos_sum / eval.len() as f64;
    assert!(mean_cos > 0.8, "mean cosine similarity {mean_cos}");
}

#[test]
fn model_file_round_trips_bit_exactly() {
    let mut rng = RngStream::new(68, 0);
    let sessions = simulate_model_sessions(&random_params(6, 2, 1.0, &mut rng), 30, 5.0, &mut rng);
    let cfg = OrganicTrainConfig { k: 2, epochs: 3, ..Default::default() };
    let trained = fit_vae(&sessions, 6, &cfg, &mut RngStream::new(2, 0)).unwrap();

    let dir = std::env::temp_dir().join(format!("blob-organic-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("organic.json");
    save_organic_model(&path, &trained, "deadbeef").unwrap();
    let (params, encoder, hash) = load_organic_model(&path).unwrap();
    assert_eq!(params.psi, trained.params.psi);
    assert_eq!(params.rho, trained.params.rho);
    assert_eq!(hash, "deadbeef");
    match (&encoder, &trained.encoder) {
        (Encoder::Linear(a), Encoder::Linear(b)) => {
            assert_eq!(a.weight_mu, b.weight_mu);
            assert_eq!(a.bias_logvar, b.bias_logvar);
        }
        _ => panic!("encoder kind changed in round trip"),
    }
    std::fs::remove_dir_all(&dir).ok();
}
