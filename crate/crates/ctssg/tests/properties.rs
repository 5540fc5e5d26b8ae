//! Randomized invariants: contracts that must hold for every input,
//! not just the fixtures the unit tests pin down.

use proptest::prelude::*;

use ctssg::encoder::cheb_conv;
use ctssg::graph::{build_graph, edge_weight, GraphConfig, Topology};
use ctssg::metrics::{accuracy_binary, auroc, f1_binary};
use ctssg::synth::z_translate;
use ctssg::tensor::{load_named, save_named};
use ctssg::{Tape, Tensor};

proptest! {
    /// Weights live in (1, 2]: 2 only at distance zero, approaching 1
    /// as slices move apart, strictly falling in both distance and
    /// physical spacing.
    #[test]
    fn edge_weights_bounded_and_decaying(
        d in 1usize..200,
        spacing in 1e-4f64..0.5,
        factor in 0.1f64..10.0,
    ) {
        let w = edge_weight(d, 0, spacing, factor).unwrap();
        prop_assert!(w > 1.0 && w < 2.0, "w({d}) = {w}");
        prop_assert_eq!(edge_weight(7, 7, spacing, factor).unwrap(), 2.0);

        let farther = edge_weight(d + 1, 0, spacing, factor).unwrap();
        prop_assert!(farther < w, "distance {d}->{}: {w} -> {farther}", d + 1);

        let wider = edge_weight(d, 0, spacing * 1.5, factor).unwrap();
        prop_assert!(wider < w, "spacing {spacing}: {w} -> {wider}");
    }

    /// Banded edge counts match brute-force pair enumeration, and the
    /// widest band coincides with the fully connected topology.
    #[test]
    fn edge_counts_match_brute_force(n in 2usize..40, q_raw in 1usize..40) {
        let q = 1 + q_raw % (n - 1).max(1);
        let graph = build_graph(&GraphConfig::new(n, q, 0.0075)).unwrap();
        let brute = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|(i, j)| j - i <= q)
            .count();
        prop_assert_eq!(graph.edge_count(), brute);

        let mut full_cfg = GraphConfig::new(n, 1, 0.0075);
        full_cfg.topology = Topology::FullyConnected;
        let full = build_graph(&full_cfg).unwrap();
        prop_assert_eq!(full.edge_count(), n * (n - 1) / 2);
        let widest = build_graph(&GraphConfig::new(n, n - 1, 0.0075)).unwrap();
        prop_assert_eq!(widest.edge_count(), full.edge_count());
    }

    /// On a 1x1 system the filter recurrence reduces to the Chebyshev
    /// polynomials themselves: T_k(cos t) = cos(k t), bounded by 1.
    #[test]
    fn chebyshev_recurrence_matches_cosine(t in 0.0f64..std::f64::consts::PI, k in 0usize..9) {
        let lhat = Tensor::new(vec![1, 1], vec![t.cos()]).unwrap();
        let x = Tensor::new(vec![1, 1], vec![1.0f64]).unwrap();
        let thetas: Vec<Tensor<f64>> = (0..=k)
            .map(|i| {
                Tensor::new(vec![1, 1], vec![if i == k { 1.0 } else { 0.0 }]).unwrap()
            })
            .collect();
        let tape = Tape::new();
        let out = cheb_conv(&tape, &x, &lhat, &thetas).unwrap();
        let got = out.data()[0];
        prop_assert!((got - (k as f64 * t).cos()).abs() < 1e-9, "T_{k}(cos {t}) = {got}");
        prop_assert!(got.abs() <= 1.0 + 1e-9);
    }

    /// Saved parameters come back bit-for-bit, signed zeros and
    /// subnormals included.
    #[test]
    fn parameter_files_roundtrip_bit_exact(
        values in prop::collection::vec(
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            1..64,
        ),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let tensor = Tensor::param(vec![values.len()], values.clone()).unwrap();
        let named = vec![("w".to_string(), &tensor)];
        let manifest = save_named(&path, &named).unwrap();
        let loaded = load_named::<f64>(&path, &manifest, true).unwrap();
        prop_assert_eq!(loaded.len(), 1);
        let bits_in: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        let bits_out: Vec<u64> = loaded[0].1.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits_in, bits_out);
    }

    /// The logit-space cross entropy agrees with its closed form and
    /// its gradient with sigmoid(x) - y, across the whole float range
    /// the trainer can reach without diverging.
    #[test]
    fn bce_matches_closed_form(x in -500.0f64..500.0, target in any::<bool>()) {
        let y = f64::from(target);
        let tape = Tape::new();
        let logits = Tensor::param(vec![1], vec![x]).unwrap();
        let targets = Tensor::new(vec![1], vec![y]).unwrap();
        let loss = tape.bce_with_logits(&logits, &targets).unwrap();

        let reference = x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        let got = loss.data()[0];
        prop_assert!(got.is_finite());
        prop_assert!(
            (got - reference).abs() <= 1e-12 * reference.abs().max(1.0),
            "loss({x}, {y}) = {got}, closed form {reference}"
        );

        let grads = tape.backward(&loss).unwrap();
        let g = grads.grad_slice(&logits).unwrap()[0];
        let sigmoid = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        prop_assert!(
            (g - (sigmoid - y)).abs() <= 1e-12,
            "d loss/dx at {x} is {g}, want {}",
            sigmoid - y
        );
    }

    /// Shifting moves slice s to s + shift, pads vacated slices with
    /// the volume minimum, and undoing the shift restores every slice
    /// that never left the volume.
    #[test]
    fn z_translate_contract(
        slices in 2usize..12,
        elems in 1usize..6,
        shift_raw in 0i64..23,
        values in prop::collection::vec(0.0f64..1.0, 12 * 6),
    ) {
        let shift = shift_raw % slices as i64 - (slices as i64 - 1) / 2;
        let voxels = &values[..slices * elems];
        let lo = voxels.iter().copied().fold(f64::INFINITY, f64::min);
        let out = z_translate(voxels, slices, elems, shift).unwrap();

        for s_out in 0..slices as i64 {
            let dst = s_out as usize * elems;
            let s_in = s_out - shift;
            if (0..slices as i64).contains(&s_in) {
                let src = s_in as usize * elems;
                prop_assert_eq!(&out[dst..dst + elems], &voxels[src..src + elems]);
            } else {
                prop_assert!(out[dst..dst + elems].iter().all(|&v| v == lo));
            }
        }

        let back = z_translate(&out, slices, elems, -shift).unwrap();
        for s in 0..slices as i64 {
            if (0..slices as i64).contains(&(s + shift)) {
                let at = s as usize * elems;
                prop_assert_eq!(&back[at..at + elems], &voxels[at..at + elems]);
            }
        }

        prop_assert!(z_translate(voxels, slices, elems, slices as i64).is_err());
    }

    /// Midrank AUROC equals literal pair counting with half credit
    /// for ties.
    #[test]
    fn auroc_matches_pair_counting(
        pairs in prop::collection::vec((0u8..11, any::<bool>()), 2..50),
    ) {
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| f64::from(*s) / 10.0).collect();
        let targets: Vec<f64> = pairs.iter().map(|(_, t)| f64::from(*t)).collect();
        let got = auroc(&scores, &targets).unwrap();

        let pos: Vec<f64> = scores
            .iter()
            .zip(&targets)
            .filter(|(_, &t)| t == 1.0)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(&targets)
            .filter(|(_, &t)| t == 0.0)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            prop_assert_eq!(got, None);
        } else {
            let mut credit = 0.0;
            for &p in &pos {
                for &n in &neg {
                    credit += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
                }
            }
            let brute = credit / (pos.len() * neg.len()) as f64;
            let got = got.unwrap();
            prop_assert!((got - brute).abs() < 1e-12, "auroc {got} vs pairs {brute}");
        }
    }

    /// Thresholded metrics reduce to their confusion-matrix counts,
    /// with F1 undefined exactly when the counts give it no support.
    #[test]
    fn f1_and_accuracy_match_confusion_counts(
        pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..50),
        threshold in 0.05f64..0.95,
    ) {
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| *s).collect();
        let targets: Vec<f64> = pairs.iter().map(|(_, t)| f64::from(*t)).collect();

        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut tn = 0usize;
        let mut fnc = 0usize;
        for (&s, &t) in scores.iter().zip(&targets) {
            match (s > threshold, t == 1.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fnc += 1,
            }
        }

        let acc = accuracy_binary(&scores, &targets, threshold).unwrap();
        let acc_brute = (tp + tn) as f64 / scores.len() as f64;
        prop_assert!((acc - acc_brute).abs() < 1e-12);

        let f1 = f1_binary(&scores, &targets, threshold).unwrap();
        if 2 * tp + fp + fnc == 0 {
            prop_assert_eq!(f1, None);
        } else {
            let brute = 2.0 * tp as f64 / (2 * tp + fp + fnc) as f64;
            prop_assert!((f1.unwrap() - brute).abs() < 1e-12);
        }
    }
}
