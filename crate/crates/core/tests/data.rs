use proptest::prelude::*;
use stablespike::data::{
    bin_events, decode_events, encode_events, encode_static, synth_generate, Event, EventStream, MotionClass,
    SynthDataset, SynthParams,
};
use stablespike::Tensor;

fn quiet() -> SynthParams {
    SynthParams {
        noise_rate: 0.0,
        ..SynthParams::default()
    }
}

#[test]
fn binning_conserves_every_generated_stream() {
    let p = SynthParams {
        train_count: 200,
        test_count: 40,
        ..SynthParams::default()
    };
    let ds = SynthDataset::generate(4, &p).unwrap();
    for s in ds.train.iter().chain(&ds.test) {
        assert!(!s.events.is_empty());
        for t in [1, 2, 4, 7] {
            let f = bin_events(s, t, 24, 24).unwrap();
            assert_eq!(f.sum(), s.events.len() as f64);
            assert!(f.data().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        }
    }
}

#[test]
fn downsampling_uses_floor_arithmetic() {
    let s = EventStream {
        events: vec![Event { t: 5, x: 3, y: 3, p: 1 }, Event { t: 9, x: 1, y: 2, p: 0 }],
        width: 4,
        height: 4,
        label: 0,
    };
    let f = bin_events(&s, 1, 2, 2).unwrap();
    // [T, P, H, W]: (y=3,x=3) -> (1,1) ON; (y=2,x=1) -> (1,0) OFF
    assert_eq!(f.data()[4 + 3], 1.0);
    assert_eq!(f.data()[2], 1.0);
    assert_eq!(f.sum(), 2.0);
}

#[test]
fn empty_stream_is_rejected() {
    let s = EventStream {
        events: vec![],
        width: 4,
        height: 4,
        label: 0,
    };
    assert!(bin_events(&s, 2, 4, 4).is_err());
}

/// Along-axis coordinates of the ON and OFF edges after step `k`, computed
/// from the motion direction without the generator's own helper.
fn expected_edges(class: MotionClass, start: u16, thickness: u16, k: u16, extent: u16) -> (u16, u16) {
    let (on, off) = (start + k + thickness - 1, start + k - 1);
    match class {
        MotionClass::Right | MotionClass::Down => (on, off),
        MotionClass::Left | MotionClass::Up => (extent - 1 - on, extent - 1 - off),
    }
}

#[test]
fn noiseless_events_lie_on_bar_edges() {
    let p = quiet();
    for class in MotionClass::ALL {
        for seed in 0..25 {
            let (s, g) = synth_generate(class, seed, &p).unwrap();
            assert_eq!(s.events.len(), g.signal_events);
            let horizontal = matches!(class, MotionClass::Left | MotionClass::Right);
            let extent = if horizontal { p.width } else { p.height };
            for e in &s.events {
                let (along, cross) = if horizontal { (e.x, e.y) } else { (e.y, e.x) };
                let k = (e.t / g.step_us) as u16 + 1;
                assert!(k >= 1 && k <= g.steps);
                let (on, off) = expected_edges(class, g.start, g.thickness, k, extent);
                assert_eq!(along, if e.p == 1 { on } else { off }, "{class} seed {seed} {e:?}");
                assert!(cross >= g.cross_lo && cross < g.cross_lo + g.cross_len);
            }
        }
    }
}

/// Least-squares slope of ON-event position along the motion axis against time.
fn on_slope(s: &EventStream, horizontal: bool) -> f64 {
    let pts: Vec<(f64, f64)> = s
        .events
        .iter()
        .filter(|e| e.p == 1)
        .map(|e| (e.t as f64, if horizontal { e.x } else { e.y } as f64))
        .collect();
    let n = pts.len() as f64;
    let (mt, mx) = pts.iter().fold((0.0, 0.0), |(a, b), (t, x)| (a + t / n, b + x / n));
    let cov: f64 = pts.iter().map(|(t, x)| (t - mt) * (x - mx)).sum();
    let var: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    cov / var
}

#[test]
fn opposite_classes_drift_in_opposite_directions() {
    let p = SynthParams {
        emit_prob: 0.5,
        ..quiet()
    };
    for seed in 0..20 {
        let right = on_slope(&synth_generate(MotionClass::Right, seed, &p).unwrap().0, true);
        let left = on_slope(&synth_generate(MotionClass::Left, seed, &p).unwrap().0, true);
        let down = on_slope(&synth_generate(MotionClass::Down, seed, &p).unwrap().0, false);
        let up = on_slope(&synth_generate(MotionClass::Up, seed, &p).unwrap().0, false);
        assert!(right > 0.0 && left < 0.0, "seed {seed}: {right} {left}");
        assert!(down > 0.0 && up < 0.0, "seed {seed}: {down} {up}");
    }
}

#[test]
fn split_is_a_function_of_the_seed() {
    let p = SynthParams {
        train_count: 24,
        test_count: 8,
        ..SynthParams::default()
    };
    let a = SynthDataset::generate(3, &p).unwrap();
    assert_eq!(a, SynthDataset::generate(3, &p).unwrap());
    assert_ne!(a, SynthDataset::generate(4, &p).unwrap());
    let per_class = |v: &[EventStream]| (0..4).map(|c| v.iter().filter(|s| s.label == c).count()).collect::<Vec<_>>();
    assert_eq!(per_class(&a.train), [6; 4]);
    assert_eq!(per_class(&a.test), [2; 4]);
}

#[test]
fn static_encoding_replicates() {
    let img = Tensor::new(vec![2, 2, 3], (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
    let f = encode_static(&img, 3).unwrap();
    assert_eq!(f.shape(), [3, 3, 2, 2]);
    let slices: Vec<Tensor> = (0..3).map(|t| f.index_first(t)).collect();
    assert!(slices.windows(2).all(|w| w[0] == w[1]));
    // channel-major layout of the HWC input
    assert_eq!(slices[0].data()[4], img.data()[1]);
    assert_eq!(encode_static(&Tensor::zeros(&[2, 2, 1]), 2).unwrap().sum(), 0.0);
}

fn stream_strategy() -> impl Strategy<Value = EventStream> {
    prop::collection::vec((0u32..50, 0u16..8, 0u16..6, 0u8..=1), 1..60).prop_map(|raw| {
        let mut events: Vec<Event> = raw.into_iter().map(|(t, x, y, p)| Event { t, x, y, p }).collect();
        events.sort_by_key(|e| e.t);
        EventStream {
            events,
            width: 8,
            height: 6,
            label: 1,
        }
    })
}

proptest! {
    #[test]
    fn binning_ignores_order_within_a_timestamp(s in stream_strategy(), t in 1usize..6, rot in 0usize..7) {
        let base = bin_events(&s, t, 3, 4).unwrap();
        prop_assert_eq!(base.sum(), s.events.len() as f64);
        let mut shuffled = s.clone();
        // reverse, then rotate, every run of equal timestamps
        let mut i = 0;
        while i < shuffled.events.len() {
            let j = shuffled.events[i..].iter().take_while(|e| e.t == shuffled.events[i].t).count() + i;
            let run = &mut shuffled.events[i..j];
            run.reverse();
            let len = run.len();
            run.rotate_left(rot % len);
            i = j;
        }
        prop_assert_eq!(bin_events(&shuffled, t, 3, 4).unwrap(), base);
    }

    #[test]
    fn event_format_round_trips(s in stream_strategy()) {
        let back = decode_events(&encode_events(&s), s.label).unwrap();
        prop_assert_eq!(back, s);
    }
}
