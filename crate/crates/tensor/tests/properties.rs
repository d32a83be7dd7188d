use proptest::prelude::*;
use rgnet_tensor::io::{read_any_tensor, read_tensor, write_tensor, AnyTensor};
use rgnet_tensor::{Graph, Tensor};

fn matrix(max_n: usize, max_m: usize, mag: f64) -> impl Strategy<Value = Tensor<f64>> {
    (1..=max_n, 1..=max_m).prop_flat_map(move |(n, m)| {
        prop::collection::vec(-mag..mag, n * m).prop_map(move |d| Tensor::new(vec![n, m], d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_stochastic_and_shift_invariant(x in matrix(8, 12, 1e4), shift in -50.0f64..50.0) {
        let (n, m) = x.dims2().unwrap();
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone());
        let y = g.softmax_rows(xv).unwrap();
        let shifted = g.constant(x.map(|v| v + shift));
        let ys = g.softmax_rows(shifted).unwrap();
        for r in 0..n {
            let row = &g.value(y).data()[r * m..(r + 1) * m];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            for (a, b) in row.iter().zip(&g.value(ys).data()[r * m..(r + 1) * m]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dump_round_trip(x in matrix(6, 6, 1e6), as_f32 in any::<bool>()) {
        let mut buf = Vec::new();
        if as_f32 {
            let t: Tensor<f32> = x.cast();
            write_tensor(&mut buf, &t).unwrap();
            prop_assert_eq!(read_tensor::<f32, _>(&mut buf.as_slice()).unwrap(), t);
        } else {
            write_tensor(&mut buf, &x).unwrap();
            prop_assert_eq!(read_any_tensor(&mut buf.as_slice()).unwrap(), AnyTensor::F64(x));
        }
    }
}
