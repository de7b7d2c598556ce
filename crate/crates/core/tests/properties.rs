//! Property tests over the crate's structural invariants.

use plepi_core::codebook::{Base, Barcode, Codebook, Entry, EntryKind};
use plepi_core::fusion::{fuse_codebook, ConfidencePartition, PseudoLabelSource};
use plepi_core::model::{featurize_intensity, BaseCallerModel, FEATURE_DIM};
use proptest::prelude::*;

fn barcode_strategy(len: usize) -> impl Strategy<Value = Barcode> {
    proptest::collection::vec(0usize..4, len).prop_map(|letters| {
        let letters: Vec<Base> = letters.into_iter().map(Base::from_index).collect();
        Barcode::new(&letters)
    })
}

proptest! {
    // Hamming distance is a metric: identity, symmetry, triangle
    // inequality, and it is bounded by the length.
    #[test]
    fn hamming_is_a_metric(
        a in barcode_strategy(9),
        b in barcode_strategy(9),
        c in barcode_strategy(9),
    ) {
        let dab = a.hamming(&b).unwrap();
        let dba = b.hamming(&a).unwrap();
        let dac = a.hamming(&c).unwrap();
        let dcb = c.hamming(&b).unwrap();
        prop_assert_eq!(a.hamming(&a).unwrap(), 0);
        prop_assert_eq!(dab, dba);
        prop_assert!(dab <= dac + dcb);
        prop_assert!(dab <= 9);
        prop_assert_eq!(dab == 0, a == b);
    }

    // Parsing a serialized codebook reproduces it entry for entry.
    #[test]
    fn parse_serialize_identity(
        barcodes in proptest::collection::btree_set(barcode_strategy(6), 1..40),
        trick_mask in proptest::collection::vec(any::<bool>(), 40),
    ) {
        let entries: Vec<Entry> = barcodes
            .iter()
            .enumerate()
            .map(|(i, bc)| Entry {
                barcode: *bc,
                name: format!("g{i}"),
                kind: if trick_mask[i % trick_mask.len()] {
                    EntryKind::Trick
                } else {
                    EntryKind::Targeted
                },
            })
            .collect();
        let cb = Codebook::from_entries(entries).unwrap();
        let round = Codebook::parse(&cb.serialize()).unwrap();
        prop_assert_eq!(cb.len(), round.len());
        for (a, b) in cb.entries().iter().zip(round.entries()) {
            prop_assert_eq!(a.barcode, b.barcode);
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(a.kind, b.kind);
        }
    }

    // Softmax outputs are strictly positive and sum to one for any
    // finite weights and intensity readout.
    #[test]
    fn predictions_are_distributions(
        weights in proptest::collection::vec(-10.0f64..10.0, 4 * (FEATURE_DIM + 1)),
        intensity in proptest::collection::vec(0.0f64..100.0, 4),
    ) {
        let mut w = [[0.0; FEATURE_DIM + 1]; 4];
        for (k, row) in w.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = weights[k * (FEATURE_DIM + 1) + j];
            }
        }
        let model = BaseCallerModel::from_weights(w, 1.0);
        let x = featurize_intensity(&[intensity[0], intensity[1], intensity[2], intensity[3]], 0.0);
        let p = model.predict_probs(&x);
        prop_assert!(p.iter().all(|&v| v > 0.0 && v.is_finite()));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    // The confidence partition covers every cycle exactly once, for any
    // thresholds with mediocre <= confident.
    #[test]
    fn partition_is_exhaustive(
        probs in proptest::collection::vec(
            proptest::collection::vec(0.01f64..1.0, 4),
            1..12
        ),
        lo in 0.0f64..1.0,
        hi in 0.0f64..1.0,
    ) {
        let (tm, tc) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let probs: Vec<[f64; 4]> = probs
            .into_iter()
            .map(|p| {
                let sum: f64 = p.iter().sum();
                [p[0] / sum, p[1] / sum, p[2] / sum, p[3] / sum]
            })
            .collect();
        let partition = ConfidencePartition::from_probs(&probs, tc, tm);
        let mut seen = vec![0u8; probs.len()];
        for cl in &partition.confident {
            seen[cl.cycle] += 1;
            prop_assert!(cl.probability > tc);
        }
        for &c in &partition.mediocre {
            seen[c] += 1;
        }
        for &c in &partition.discarded {
            seen[c] += 1;
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    // Fused outputs are codebook members and never touch confident
    // letters; abstentions keep mediocre cycles unlabeled.
    #[test]
    fn fusion_closure_property(
        barcodes in proptest::collection::btree_set(barcode_strategy(5), 2..24),
        probs in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 5),
        top_n in 1usize..=4,
    ) {
        let entries: Vec<Entry> = barcodes
            .iter()
            .enumerate()
            .map(|(i, bc)| Entry {
                barcode: *bc,
                name: format!("g{i}"),
                kind: EntryKind::Targeted,
            })
            .collect();
        let cb = Codebook::from_entries(entries).unwrap();
        let probs: Vec<[f64; 4]> = probs
            .into_iter()
            .map(|p| {
                let sum: f64 = p.iter().sum();
                [p[0] / sum, p[1] / sum, p[2] / sum, p[3] / sum]
            })
            .collect();
        let partition = ConfidencePartition::from_probs(&probs, 0.6, 0.0);
        let out = fuse_codebook(&partition, &probs, &cb, top_n);
        match out.source {
            PseudoLabelSource::CodebookFused => {
                let bc = out.full_barcode().expect("complete sequence");
                prop_assert!(cb.contains(&bc));
            }
            PseudoLabelSource::Abstained => {
                for &cycle in &partition.mediocre {
                    prop_assert_eq!(out.letters[cycle], None);
                }
            }
            PseudoLabelSource::AllConfident => {}
        }
        for cl in &partition.confident {
            prop_assert_eq!(out.letters[cl.cycle], Some(cl.letter));
        }
    }
}
