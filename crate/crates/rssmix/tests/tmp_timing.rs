use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rssmix::analysis::{initial_params, kmeans_init};
use rssmix::design::{draw_rss_dataset, RankerConfig, RssSource};
use rssmix::em::{e_step, em_alpha, m_step, EmConfig};
use rssmix::sampler::run_rss_chain;
use rssmix::{MisplacementMatrix, MixtureParams};

fn slow_data(truth: &MixtureParams) -> rssmix::design::RssDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    if let Ok(f) = std::fs::File::open("/tmp/timing/rss.csv") {
        rssmix::design::RssDataset::from_csv(f).unwrap()
    } else {
        let source = RssSource::Ranker(RankerConfig { rho: 0.9, sigma: 1.0 });
        draw_rss_dataset(truth, 3, 8, &source, &mut rng).unwrap()
    }
}

#[test]
fn timing() {
    let truth = MixtureParams::new_hom(vec![0.7, 0.3], vec![0.0, 5.0], 1.0).unwrap();
    let data = slow_data(&truth);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (labels, hyper) = kmeans_init(data.values(), 2).unwrap();
    let init = initial_params(data.values(), &labels, &hyper, true).unwrap();
    let em = EmConfig { tol: 1e-7, max_iter: 10_000 };
    let t0 = Instant::now();
    let out = run_rss_chain(&data, init.clone(), &hyper, 3000, em, &mut rng).unwrap();
    let dt = t0.elapsed();
    println!(
        "3000 scans: {:.2?} total, em_iterations total = {} (avg {:.1}/scan)",
        dt,
        out.em_iterations,
        out.em_iterations as f64 / 3000.0
    );
}

#[test]
fn split() {
    let truth = MixtureParams::new_hom(vec![0.7, 0.3], vec![0.0, 5.0], 1.0).unwrap();
    let data = slow_data(&truth);
    let em = EmConfig { tol: 1e-7, max_iter: 10_000 };
    let conv = em_alpha(&data, &MisplacementMatrix::uniform(3), &truth, em).unwrap();
    println!("standalone em from uniform: {} iterations", conv.iterations);
    let zeta = e_step(&data, &conv.alpha, &truth).unwrap();

    let reps = 20_000;
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        let a = m_step(&zeta).unwrap();
        acc += a.get(1, 1);
    }
    let dt_m = t0.elapsed();

    let t1 = Instant::now();
    for _ in 0..reps {
        let z = e_step(&data, &conv.alpha, &truth).unwrap();
        acc += z.get(1, 1);
    }
    let dt_e = t1.elapsed();
    println!(
        "m_step {:.2?}/call, full e_step {:.2?}/call (checksum {acc:.3})",
        dt_m / reps,
        dt_e / reps
    );
}
