use evsnn::checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
use evsnn::dataset::{decode_dataset, encode_dataset, read_dataset, write_dataset};
use evsnn::Error;
use evsnn_core::network::init_weights;
use evsnn_core::training::seeded_rng;
use evsnn_core::{
    ConvBlockConfig, Event, EventBatch, LifParams, NetworkConfig, NetworkWeights, Polarity, ResetMode, SurrogateSpec,
    Tensor,
};
use proptest::prelude::*;

const GOLDEN_DATASET: &[u8] = include_bytes!("golden/dataset_v1.evds");
const GOLDEN_CHECKPOINT: &[u8] = include_bytes!("golden/checkpoint_v1.evwt");

fn golden_batches() -> Vec<EventBatch> {
    vec![
        EventBatch {
            label: 3,
            subject: 7,
            duration: 3_000_000,
            events: vec![
                Event::new(0, 1, 2, Polarity::On),
                Event::new(150_000, 239, 179, Polarity::Off),
                Event::new(2_999_999, 0, 0, Polarity::On),
            ],
        },
        EventBatch {
            label: 0,
            subject: 65535,
            duration: 1000,
            events: vec![],
        },
        EventBatch {
            label: 23,
            subject: 1,
            duration: 100,
            events: vec![
                Event::new(5, 65535, 65535, Polarity::Off),
                Event::new(5, 4, 4, Polarity::On),
            ],
        },
    ]
}

fn golden_network() -> (NetworkConfig, NetworkWeights) {
    let config = NetworkConfig {
        input_channels: 1,
        input_height: 6,
        input_width: 7,
        time_steps: 2,
        blocks: vec![ConvBlockConfig {
            out_channels: 2,
            kernel: 3,
            lif: LifParams::new(0.5, 1.0, ResetMode::Subtract).unwrap(),
        }],
        num_classes: 2,
        output_lif: LifParams::new(0.75, 0.5, ResetMode::Zero).unwrap(),
        surrogate: SurrogateSpec::new(25.0).unwrap(),
    };
    let tensors = config
        .weight_shapes()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(j, shape)| {
            let n: usize = shape.iter().product();
            let data = if j == 3 {
                vec![0.1, -1e-300]
            } else {
                (0..n).map(|i| (j + 1) as f64 * 0.5 + i as f64 * 0.125 - 1.0).collect()
            };
            Tensor::from_vec(shape, data).unwrap()
        })
        .collect();
    let weights = NetworkWeights::from_tensors(&config, tensors).unwrap();
    (config, weights)
}

#[test]
fn dataset_matches_golden_bytes() {
    assert_eq!(encode_dataset(&golden_batches()).unwrap(), GOLDEN_DATASET);
    assert_eq!(decode_dataset(GOLDEN_DATASET).unwrap(), golden_batches());
}

#[test]
fn checkpoint_matches_golden_bytes() {
    let (config, weights) = golden_network();
    assert_eq!(encode_checkpoint(&config, &weights).unwrap(), GOLDEN_CHECKPOINT);
    let (c2, w2) = decode_checkpoint(GOLDEN_CHECKPOINT).unwrap();
    assert_eq!(c2, config);
    assert_eq!(w2, weights);
}

#[test]
fn empty_dataset_is_valid() {
    let bytes = encode_dataset(&[]).unwrap();
    assert_eq!(bytes, b"EVDS\x01\x00");
    assert!(decode_dataset(&bytes).unwrap().is_empty());
}

#[test]
fn dataset_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.evds");
    let b = dir.path().join("b.evds");
    write_dataset(&a, &golden_batches()).unwrap();
    write_dataset(&b, &read_dataset(&a).unwrap()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn checkpoint_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = NetworkConfig {
        input_height: 36,
        input_width: 40,
        time_steps: 3,
        ..NetworkConfig::default()
    };
    let weights = init_weights(&config, &mut seeded_rng(5, 0)).unwrap();
    let a = dir.path().join("a.evwt");
    let b = dir.path().join("b.evwt");
    write_checkpoint(&a, &config, &weights).unwrap();
    let (c2, w2) = read_checkpoint(&a).unwrap();
    assert_eq!((&c2, &w2), (&config, &weights));
    write_checkpoint(&b, &c2, &w2).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

fn is_format(r: Result<impl std::fmt::Debug, Error>) -> bool {
    matches!(r.map_err(|e| matches!(e.root(), Error::Format(_))), Err(true))
}

#[test]
fn truncated_dataset_is_a_format_error() {
    for cut in [0, 3, 5, 7, 20, 30, GOLDEN_DATASET.len() - 1] {
        assert!(is_format(decode_dataset(&GOLDEN_DATASET[..cut])), "cut at {cut}");
    }
}

#[test]
fn bad_magic_or_version_is_a_format_error() {
    let mut bytes = GOLDEN_DATASET.to_vec();
    bytes[0] = b'X';
    assert!(is_format(decode_dataset(&bytes)));
    let mut bytes = GOLDEN_DATASET.to_vec();
    bytes[4] = 2;
    assert!(is_format(decode_dataset(&bytes)));
    assert!(is_format(decode_dataset(GOLDEN_CHECKPOINT)));
    assert!(is_format(decode_checkpoint(GOLDEN_DATASET)));
}

#[test]
fn corrupt_dataset_records_are_rejected() {
    // polarity byte of the first event
    let mut bytes = GOLDEN_DATASET.to_vec();
    bytes[6 + 20 + 12] = 2;
    assert!(is_format(decode_dataset(&bytes)));
    // first event timestamp beyond the batch duration
    let mut bytes = GOLDEN_DATASET.to_vec();
    bytes[6 + 20..6 + 28].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(is_format(decode_dataset(&bytes)));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    for cut in [0, 6, 30, 100, GOLDEN_CHECKPOINT.len() - 1] {
        assert!(is_format(decode_checkpoint(&GOLDEN_CHECKPOINT[..cut])), "cut at {cut}");
    }
    let mut long = GOLDEN_CHECKPOINT.to_vec();
    long.push(0);
    assert!(is_format(decode_checkpoint(&long)));
    // stored width no longer matches the tensor shapes
    let mut bytes = GOLDEN_CHECKPOINT.to_vec();
    bytes[14..18].copy_from_slice(&9u32.to_le_bytes());
    assert!(is_format(decode_checkpoint(&bytes)));
    // reset byte of the block
    let mut bytes = GOLDEN_CHECKPOINT.to_vec();
    bytes[6 + 24 + 8 + 16] = 7;
    assert!(is_format(decode_checkpoint(&bytes)));
}

fn arb_batch() -> impl Strategy<Value = EventBatch> {
    (
        any::<u16>(),
        any::<u16>(),
        1u64..u64::MAX,
        prop::collection::vec((any::<u16>(), any::<u16>(), any::<bool>()), 0..20),
    )
        .prop_flat_map(|(label, subject, duration, coords)| {
            let n = coords.len();
            prop::collection::vec(0..duration, n).prop_map(move |mut ts| {
                ts.sort_unstable();
                EventBatch {
                    label,
                    subject,
                    duration,
                    events: ts
                        .iter()
                        .zip(&coords)
                        .map(|(&t, &(x, y, p))| Event::new(t, x, y, if p { Polarity::On } else { Polarity::Off }))
                        .collect(),
                }
            })
        })
}

proptest! {
    #[test]
    fn dataset_round_trip(batches in prop::collection::vec(arb_batch(), 0..5)) {
        let bytes = encode_dataset(&batches).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &batches);
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), filters in 1usize..4, reset in any::<bool>()) {
        let mut config = NetworkConfig {
            input_channels: 2,
            input_height: 9,
            input_width: 10,
            time_steps: 4,
            blocks: vec![ConvBlockConfig::new(filters, 2)],
            num_classes: 3,
            ..NetworkConfig::default()
        };
        if reset {
            config.output_lif.reset = ResetMode::Zero;
        }
        let weights = init_weights(&config, &mut seeded_rng(seed, 0)).unwrap();
        let bytes = encode_checkpoint(&config, &weights).unwrap();
        let (c2, w2) = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(encode_checkpoint(&c2, &w2).unwrap(), bytes);
        prop_assert_eq!(w2, weights);
    }
}
