//! Monte-Carlo checks of the pooling variance law and ghost-neuron
//! cancellation on a random sigmoid/softmax network.

use noisenet::training::glorot_network;
use noisenet::{
    cancellation_residual, ghost_transform, noisy_accuracy, noisy_forward, pool_transform, Dataset,
    GhostVariant, Network, NoiseConfig, NoiseKind, NoiseSource, PoolSpec, RandomStream,
};

const REALIZATIONS: u64 = 10_000;

fn net() -> Network {
    glorot_network(&[30, 8, 5], 11).unwrap()
}

fn input(seed: u64) -> Vec<f64> {
    let mut rng = RandomStream::new(seed);
    (0..30).map(|_| rng.next_f64()).collect()
}

fn hidden(kind: NoiseKind, amplitude: f64, seed: u64) -> NoiseConfig {
    NoiseConfig::single(NoiseSource::from_amplitude(kind, 1, amplitude), seed)
}

/// Sample variance of each output pre-activation over noise realizations.
fn output_preactivation_variance(net: &Network, x: &[f64], cfg: &NoiseConfig) -> Vec<f64> {
    let k = net.output_dim();
    let (mut sum, mut sq) = (vec![0.0; k], vec![0.0; k]);
    for r in 0..REALIZATIONS {
        let trace = noisy_forward(net, x, cfg, 0, r).unwrap();
        for (j, z) in trace.preactivations[1].iter().enumerate() {
            sum[j] += z;
            sq[j] += z * z;
        }
    }
    let n = REALIZATIONS as f64;
    (0..k)
        .map(|j| (sq[j] - sum[j] * sum[j] / n) / (n - 1.0))
        .collect()
}

#[test]
fn pooling_divides_output_variance_by_m() {
    let base = net();
    let x = input(3);
    let a = 0.5;
    let w2 = &base.layers()[1].weights;
    let sum_sq: f64 = w2.as_slice().iter().map(|w| w * w).sum();
    let mut totals = Vec::new();
    for m in [1, 3, 5, 10, 20] {
        let pooled = pool_transform(&base, PoolSpec::hidden(m)).unwrap();
        let var = output_preactivation_variance(
            &pooled,
            &x,
            &hidden(NoiseKind::ADDITIVE_UNCORRELATED, a, 5),
        );
        let measured: f64 = var.iter().sum();
        let predicted = a * a * sum_sq / m as f64;
        let rel = (measured - predicted).abs() / predicted;
        assert!(
            rel < 0.05,
            "m={m}: measured {measured}, predicted {predicted}"
        );
        totals.push((m, measured));
    }
    let v1 = totals[0].1;
    for &(m, v) in &totals[1..] {
        let ratio = v * m as f64 / v1;
        assert!((ratio - 1.0).abs() < 0.1, "m={m}: m·var/var1 = {ratio}");
    }
}

#[test]
fn ghost_iii_outputs_do_not_depend_on_the_seed() {
    let ghosted = ghost_transform(&net(), GhostVariant::III { bias: 30.0 }, 1).unwrap();
    for s in 0..5 {
        let x = input(100 + s);
        let clean = ghosted.forward(&x).unwrap();
        let mut worst = 0.0f64;
        for seed in 0..50 {
            let cfg = hidden(NoiseKind::ADDITIVE_CORRELATED, 1.0, seed);
            let noisy = noisy_forward(&ghosted, &x, &cfg, s, 0).unwrap();
            for (a, b) in noisy.output().iter().zip(clean.output()) {
                worst = worst.max((a - b).abs());
            }
        }
        assert!(worst < 1e-9, "deviation {worst:e}");
    }
}

#[test]
fn residual_predicts_correlated_output_variance() {
    // Ghost I leaves a residual that differs per output, which exposes the
    // quadratic law Var(z_j) = 2D · residual_j².
    let ghosted = ghost_transform(&net(), GhostVariant::I, 1).unwrap();
    let residual = cancellation_residual(&ghosted).unwrap();
    let a = 0.3;
    let measured = output_preactivation_variance(
        &ghosted,
        &input(9),
        &hidden(NoiseKind::ADDITIVE_CORRELATED, a, 2),
    );
    let predicted: Vec<f64> = residual.iter().map(|r| a * a * r * r).collect();
    let mean = measured.iter().sum::<f64>() / measured.len() as f64;
    let ss_tot: f64 = measured.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = measured
        .iter()
        .zip(&predicted)
        .map(|(m, p)| (m - p).powi(2))
        .sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 > 0.99, "R² = {r2}");
}

#[test]
fn ghost_i_matches_the_unmitigated_network() {
    let base = net();
    let ghosted = ghost_transform(&base, GhostVariant::I, 1).unwrap();
    let mut rng = RandomStream::new(77);
    let inputs: Vec<f64> = (0..300 * 30).map(|_| rng.next_f64()).collect();
    let labels: Vec<u8> = (0..300).map(|_| rng.below(5) as u8).collect();
    let data = Dataset::new(30, inputs, labels).unwrap();
    for a in [0.25, 0.5, 1.0] {
        let cfg = hidden(NoiseKind::ADDITIVE_CORRELATED, a, 4);
        let plain = noisy_accuracy(&base, &data, &cfg, 5).unwrap();
        let ghost = noisy_accuracy(&ghosted, &data, &cfg, 5).unwrap();
        assert_eq!(plain.per_repeat, ghost.per_repeat, "a={a}");
    }
}
