use depfusion_core::pgmf::{argsort_descending, deserialize, is_permutation, priority_scores, priority_serialize, SortMethod};
use depfusion_core::spectral::{fft2_decompose, ifft2_recompose};
use depfusion_core::ssm::{apply_kernel, conv_kernel, Discretization, LtiSystem};
use depfusion_core::tensor::{read_tensor, write_tensor, AnyFeatureMap};
use depfusion_core::wavelet::{dwt2, idwt2, Basis};
use depfusion_core::{FeatureMap, Prng, Shape};
use proptest::prelude::*;

fn shape_for(levels: usize) -> impl Strategy<Value = Shape> {
    let min = 1usize << levels;
    (1usize..=3, min..=40, min..=40).prop_map(|(c, h, w)| Shape::new(1, c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wavelet_round_trip(levels in 1usize..=3, sym in any::<bool>(), seed in any::<u64>(), dims in (1usize..=3, 0usize..=32, 0usize..=32)) {
        let min = 1usize << levels;
        let shape = Shape::new(1, dims.0, min + dims.1, min + dims.2);
        let basis = if sym { Basis::Sym2 } else { Basis::Haar };
        let x = FeatureMap::<f64>::random(shape, &mut Prng::new(seed), 1.0);
        let p = dwt2(&x, levels, basis).unwrap();
        prop_assert!(idwt2(&p).unwrap().max_abs_diff(&x) <= 1e-10);
    }

    #[test]
    fn fft_round_trip(shape in shape_for(0), seed in any::<u64>()) {
        let x = FeatureMap::<f64>::random(shape, &mut Prng::new(seed), 1.0);
        let back = ifft2_recompose(&fft2_decompose(&x)).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-10);
    }

    #[test]
    fn lti_scan_matches_convolution(n in 1usize..=6, len in 1usize..=96, seed in any::<u64>(), euler in any::<bool>()) {
        let mut p = Prng::new(seed);
        let disc = if euler { Discretization::EulerB } else { Discretization::Zoh };
        let sys = LtiSystem::new(
            (0..n).map(|_| -p.uniform(0.01, 2.0)).collect(),
            (0..n).map(|_| p.uniform(-1.0, 1.0)).collect(),
            (0..n).map(|_| p.uniform(-1.0, 1.0)).collect(),
            p.uniform(0.01, 1.0),
            disc,
        ).unwrap().discretize().unwrap();
        let x: Vec<f64> = (0..len).map(|_| p.uniform(-1.0, 1.0)).collect();
        let scan = sys.scan(&x).unwrap().y;
        let conv = apply_kernel(&x, &conv_kernel(&sys, len).unwrap());
        let scale = scan.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        for (a, b) in scan.iter().zip(&conv) {
            prop_assert!((a - b).abs() <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn priority_serialization_is_a_bijection(shape in shape_for(0), seed in any::<u64>(), radix in any::<bool>()) {
        let f = FeatureMap::<f32>::random(shape, &mut Prng::new(seed), 1.0);
        let method = if radix { SortMethod::Radix } else { SortMethod::Comparison };
        let seqs = priority_serialize(&f, &priority_scores(&f), method).unwrap();
        prop_assert!(seqs.iter().all(|s| is_permutation(&s.perm, shape.plane())));
        prop_assert!(deserialize(&seqs, shape.height, shape.width).unwrap().bitwise_eq(&f));
    }

    #[test]
    fn radix_and_comparison_sorts_agree(values in prop::collection::vec(-8i32..8, 1..200), shift in -100.0f64..100.0) {
        let scores: Vec<f64> = values.iter().map(|&v| f64::from(v) * 0.25).collect();
        let shifted: Vec<f64> = scores.iter().map(|v| v + shift).collect();
        let radix = argsort_descending(&scores, SortMethod::Radix).unwrap();
        prop_assert_eq!(&radix, &argsort_descending(&scores, SortMethod::Comparison).unwrap());
        prop_assert_eq!(&radix, &argsort_descending(&shifted, SortMethod::Radix).unwrap());
        prop_assert!(radix.windows(2).all(|w| scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1])));
    }

    #[test]
    fn tensor_bytes_round_trip(shape in shape_for(0), seed in any::<u64>()) {
        let x = FeatureMap::<f64>::random(shape, &mut Prng::new(seed), 1e3);
        let bytes = write_tensor(&x);
        match read_tensor(&bytes).unwrap() {
            AnyFeatureMap::F64(y) => {
                prop_assert!(y.bitwise_eq(&x));
                prop_assert_eq!(write_tensor(&y), bytes);
            }
            AnyFeatureMap::F32(_) => prop_assert!(false, "dtype changed"),
        }
    }
}
