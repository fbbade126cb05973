mod common {
    pub mod oracles;
}

use common::oracles::{brute_force_counts, brute_force_energy, small_event_frames};
use stablespike::train::{dataset_timestep_variance, timestep_variance};
use stablespike::{build_architecture, firing_and_energy, Arch, ForwardOptions, Graph, Tensor, TrainConfig};

#[test]
fn firing_report_matches_brute_force_counts() {
    let (train, _) = small_event_frames(40, 4, 4, 21);
    let subset = train.subset(&(0..10).collect::<Vec<_>>());
    for arch in [Arch::ConvSnnMini, Arch::MlpSnn] {
        let m = build_architecture(arch, [2, 12, 12], 4, 3).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let r = firing_and_energy(&m, &subset, &cfg).unwrap();
        let counts = brute_force_counts(&m, &subset);
        assert_eq!(r.spikes, counts, "{arch}");
        assert!(counts.iter().all(|&c| c > 0), "{arch}: silent layer {counts:?}");
        for (l, &c) in counts.iter().enumerate() {
            let want = 100.0 * c as f64 / (r.neurons[l] * 4 * 10) as f64;
            assert_eq!(r.rates_percent[l], want);
        }
        let (synops, energy) = brute_force_energy(&m, &subset, cfg.energy_ac_pj, cfg.energy_mac_pj);
        assert_eq!(r.synops, synops, "{arch}");
        assert_eq!(r.energy_pj, energy, "{arch}");
    }
}

#[test]
fn neuron_counts_follow_layer_shapes() {
    let (train, _) = small_event_frames(4, 4, 4, 22);
    let m = build_architecture(Arch::ConvSnnMini, [2, 12, 12], 4, 0).unwrap();
    let r = firing_and_energy(&m, &train, &TrainConfig::default()).unwrap();
    // conv16 at 12x12, conv32 at 6x6, conv32 at 3x3
    assert_eq!(r.neurons, [16 * 144, 32 * 36, 32 * 9]);
    assert_eq!(r.fan_out, [32 * 9, 32 * 9, 4]);
    assert_eq!(r.first_layer_macs, (144 * 16 * 2 * 9) as u64);
}

/// Adjacent-map Hamming distance by direct element comparison.
fn pairwise_variance(maps: &[Tensor]) -> f64 {
    let mut acc = 0.0;
    for w in maps.windows(2) {
        let mut diff = 0usize;
        for i in 0..w[0].len() {
            if w[0].data()[i] != w[1].data()[i] {
                diff += 1;
            }
        }
        acc += diff as f64 / w[0].len() as f64;
    }
    acc / (maps.len() - 1) as f64
}

#[test]
fn timestep_variance_matches_pairwise_counter() {
    let (train, _) = small_event_frames(8, 4, 5, 23);
    let m = build_architecture(Arch::ConvSnnMini, [2, 12, 12], 4, 1).unwrap();
    let (inputs, _) = train.batch(&[0, 1, 2, 3, 4, 5, 6, 7]);
    let mut g = Graph::new();
    let p = m.register(&mut g, false);
    let rec = m.forward(&mut g, &p, &inputs, ForwardOptions::default()).unwrap();
    let maps: Vec<Tensor> = rec.backbone.iter().map(|&v| g.value(v).clone()).collect();
    let v = timestep_variance(&g, &rec).unwrap();
    assert_eq!(v, pairwise_variance(&maps));
    assert!(v > 0.0);
    // batch-invariant dataset average
    let whole = dataset_timestep_variance(&m, &train, 8).unwrap();
    assert!((whole - v).abs() < 1e-12);
}
