use blob_core::math::{log_sum_exp, Matrix};
use blob_core::organic::*;

fn quad_mean(params: &OrganicParams, items: &[u32]) -> f64 {
    let n = 1_000_001usize;
    let (lo, hi) = (-10.0f64, 10.0);
    let h = (hi - lo) / (n - 1) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let w = lo + i as f64 * h;
        let logits: Vec<f64> = (0..params.p()).map(|it| params.psi[(it,0)] * w + params.rho[it]).collect();
        let lse = log_sum_exp(&logits);
        let loglik: f64 = items.iter().map(|&v| logits[v as usize] - lse).sum();
        let f = (loglik - 0.5*w*w).exp() * if i==0||i==n-1 {0.5} else {1.0};
        num += f*w; den += f;
    }
    num/den
}

fn run(psi: [f64;2], rho: [f64;2], items: &[u32]) {
    let params = OrganicParams { psi: Matrix::from_vec(2,1, psi.to_vec()), rho: rho.to_vec() };
    let mut post = FullGaussianPosterior::standard(1);
    let mut b = BouchardState::init(2);
    for _ in 0..300 { let (np, nb) = em_cycle(&params, &b, &post, items).unwrap(); post = np; b = nb; }
    let q = quad_mean(&params, items);
    println!("psi {:?} rho {:?} items {:?}: EM {:.4} quad {:.4} |d| {:.4}", psi, rho, items, post.mu[0], q, (post.mu[0]-q).abs());
}

fn main() {
    run([0.8, -0.5], [0.1, -0.1], &[0,0,1]);
    run([0.7226, -0.0168], [-0.0400, -0.2953], &[0,1,1,0]);
    run([0.6, -0.6], [0.0, 0.0], &[0,1]);
    run([0.5, -0.3], [0.2, -0.2], &[0,0]);
    run([1.0, -1.0], [0.0, 0.0], &[0]);
    run([0.4, 0.9], [0.0, 0.3], &[1,1,0]);
    run([0.9, 0.2], [0.0, 0.0], &[0,0,0,1]);
}
