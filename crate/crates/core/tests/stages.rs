//! Statistical checks of each stage against generation oracles.

use beamfix_core::dataset::{split_train_test, DatasetBundle, Direction, Sample};
use beamfix_core::denoise::{build_lut, lut_predict};
use beamfix_core::geo::{add_gps_noise, haversine_distance};
use beamfix_core::pipeline::ModelSettings;
use beamfix_core::rng::seeded_rng;
use beamfix_core::simulate::{
    build_dft_codebook, generate_scenario, SceneGeometry, TrajectoryConfig, DEFAULT_ANTENNAS,
    DEFAULT_BEAMS,
};
use beamfix_core::txid::{identification_accuracy, identify, train_txid};
use beamfix_core::{GeoPosition, NoiseSpec};

fn scenario(n: usize, distractors: usize, seed: u64) -> DatasetBundle {
    let direction = Direction::LeftToRight;
    let codebook = build_dft_codebook(DEFAULT_ANTENNAS, DEFAULT_BEAMS).unwrap();
    let mut traj = TrajectoryConfig::new(n, direction, seed);
    traj.num_distractors = distractors;
    generate_scenario(
        &SceneGeometry::default_for(direction),
        &codebook,
        &traj,
        &NoiseSpec::new(0.0, seed).unwrap(),
    )
    .unwrap()
}

#[test]
fn beam_regression_places_transmitter_within_two_percent() {
    let bundle = scenario(1400, 2, 21);
    let (train, test) = split_train_test(&bundle, 1000.0 / 1400.0, 1).unwrap();
    let settings = ModelSettings::default();
    let (model, _) = train_txid(&train, &settings.hidden, &settings.txid).unwrap();
    let close = test
        .samples
        .iter()
        .filter(|s| {
            let (x, _) = model.predict_center(s.beam_index).unwrap();
            (x - s.transmitter().unwrap().x_center).abs() <= 0.02
        })
        .count();
    let frac = close as f64 / test.len() as f64;
    assert!(frac >= 0.95, "{frac}");
}

#[test]
fn lone_candidate_is_always_identified() {
    let bundle = scenario(400, 0, 22);
    let (train, test) = split_train_test(&bundle, 0.7, 2).unwrap();
    let mut settings = ModelSettings::default();
    settings.txid.epochs = 10;
    let (model, _) = train_txid(&train, &settings.hidden, &settings.txid).unwrap();
    let preds: Vec<_> = test
        .samples
        .iter()
        .map(|s| identify(&model, s).unwrap())
        .collect();
    assert_eq!(identification_accuracy(&test.samples, &preds).unwrap(), 1.0);
}

fn mean_lut_residual(n: usize, rms: f64, trials: usize) -> f64 {
    let base = scenario(1, 0, 23).samples.remove(0);
    let truth = base.gt_position;
    let x = base.transmitter().unwrap().x_center;
    let spec = NoiseSpec::new(rms, 0).unwrap();
    let mut rng = seeded_rng(n as u64);
    let mut total = 0.0;
    for _ in 0..trials {
        let samples: Vec<Sample> = (0..n as u64)
            .map(|id| {
                let mut s = base.clone();
                s.id = id;
                s.noisy_position = Some(add_gps_noise(&truth, &spec, &mut rng).unwrap());
                s
            })
            .collect();
        let xs = vec![x; n];
        let lut = build_lut(&samples, &xs, 100).unwrap();
        let p: GeoPosition = lut_predict(&lut, x).unwrap();
        total += haversine_distance(&truth, &p);
    }
    total / trials as f64
}

#[test]
fn lut_residual_follows_standard_error_law() {
    let rms = 1.0;
    for n in [4, 16, 64, 256] {
        // Mean radial error of the average of n draws: rms * sqrt(pi) / (2 sqrt(n)).
        let expected = rms * std::f64::consts::PI.sqrt() / (2.0 * (n as f64).sqrt());
        let got = mean_lut_residual(n, rms, 300);
        assert!(
            got > expected / 2.0 && got < expected * 2.0,
            "n {n}: {got} vs {expected}"
        );
    }
}
