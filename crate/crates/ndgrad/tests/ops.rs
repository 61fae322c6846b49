use ndgrad::{concat, grad_check, Array, NdError, Tape};

fn arr(shape: &[usize], data: &[f64]) -> Array {
    Array::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn conv1d_identity_kernel() {
    let tape = Tape::new();
    let x = tape.constant(arr(&[1, 3], &[1.0, 2.0, 3.0]));
    let w = tape.constant(arr(&[1, 1, 1], &[1.0]));
    let b = tape.constant(arr(&[1], &[0.0]));
    let y = x.conv1d(w, b).unwrap();
    assert_eq!(y.value().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn conv1d_box_kernel_zero_padded() {
    let tape = Tape::new();
    let x = tape.constant(arr(&[1, 3], &[1.0, 2.0, 3.0]));
    let w = tape.constant(arr(&[1, 1, 3], &[1.0, 1.0, 1.0]));
    let b = tape.constant(arr(&[1], &[0.0]));
    let y = x.conv1d(w, b).unwrap();
    assert_eq!(y.value().data(), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv1d_zero_input_gives_bias() {
    let tape = Tape::new();
    let x = tape.constant(Array::zeros(vec![2, 2, 7]));
    let w = tape.constant(Array::from_fn(vec![3, 2, 5], |i| i as f64 * 0.1 - 1.0));
    let b = tape.constant(arr(&[3], &[0.5, -1.0, 2.0]));
    let y = x.conv1d(w, b).unwrap().value();
    assert_eq!(y.shape(), &[2, 3, 7]);
    for bi in 0..2 {
        for (c, expect) in [0.5, -1.0, 2.0].into_iter().enumerate() {
            for t in 0..7 {
                assert_eq!(y.get(&[bi, c, t]), expect);
            }
        }
    }
}

#[test]
fn conv1d_rejects_even_kernel_and_mismatch() {
    let tape = Tape::new();
    let x = tape.constant(Array::zeros(vec![2, 4]));
    let b = tape.constant(Array::zeros(vec![1]));
    let even = tape.constant(Array::zeros(vec![1, 2, 2]));
    assert_eq!(x.conv1d(even, b).unwrap_err(), NdError::EvenKernel(2));
    let wrong_cin = tape.constant(Array::zeros(vec![1, 3, 3]));
    assert!(matches!(
        x.conv1d(wrong_cin, b),
        Err(NdError::ShapeMismatch { .. })
    ));
}

#[test]
fn elementwise_examples() {
    let tape = Tape::new();
    let x = tape.constant(Array::from_vec(vec![-1.0, 0.0, 2.0]));
    assert_eq!(x.relu().unwrap().value().data(), &[0.0, 0.0, 2.0]);
    let y = tape.constant(Array::from_vec(vec![1.0, 2.0, 3.0, 6.0]));
    assert_eq!(y.mean().unwrap().item(), 3.0);
    let one = tape.scalar(1.0);
    let eps = 1e-7;
    let a = one.clamp(-1.0 + eps, 1.0 - eps).unwrap().acos().unwrap();
    assert!(a.item().abs() < 1e-3);
}

#[test]
fn domain_errors_are_reported() {
    let tape = Tape::new();
    let x = tape.constant(Array::from_vec(vec![1.0, -2.0]));
    assert!(matches!(x.log(), Err(NdError::Domain { op: "log", .. })));
    assert!(matches!(x.sqrt(), Err(NdError::Domain { op: "sqrt", .. })));
    let big = tape.constant(Array::from_vec(vec![1.5]));
    assert!(matches!(big.acos(), Err(NdError::Domain { op: "acos", .. })));
    let zero = tape.constant(Array::from_vec(vec![0.0]));
    assert!(matches!(zero.log(), Err(NdError::Domain { .. })));
    let huge = tape.constant(Array::from_vec(vec![1000.0]));
    assert!(matches!(huge.exp(), Err(NdError::NonFinite { op: "exp" })));
}

#[test]
fn broadcasting_add_and_mismatch() {
    let tape = Tape::new();
    let a = tape.constant(arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = tape.constant(arr(&[3], &[10.0, 20.0, 30.0]));
    let c = a.add(b).unwrap();
    assert_eq!(c.value().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    let col = tape.constant(arr(&[2, 1], &[1.0, 2.0]));
    let d = a.mul(col).unwrap();
    assert_eq!(d.value().data(), &[1.0, 2.0, 3.0, 8.0, 10.0, 12.0]);
    let bad = tape.constant(Array::zeros(vec![2]));
    assert!(a.add(bad).is_err());
}

#[test]
fn reductions_over_axes() {
    let tape = Tape::new();
    let a = tape.constant(arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    assert_eq!(a.sum_axes(&[0]).unwrap().value().data(), &[5.0, 7.0, 9.0]);
    assert_eq!(a.sum_axes(&[1]).unwrap().value().data(), &[6.0, 15.0]);
    assert_eq!(a.mean_axes(&[1]).unwrap().value().data(), &[2.0, 5.0]);
    assert_eq!(a.sum().unwrap().value().shape(), &[] as &[usize]);
}

#[test]
fn concat_slice_permute() {
    let tape = Tape::new();
    let a = tape.constant(arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(arr(&[2, 1], &[9.0, 8.0]));
    let c = concat(&[a, b], 1).unwrap();
    assert_eq!(c.value().data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    let s = c.slice(1, 1, 2).unwrap();
    assert_eq!(s.value().data(), &[2.0, 9.0, 4.0, 8.0]);
    let p = c.permute(&[1, 0]).unwrap();
    assert_eq!(p.value().shape(), &[3, 2]);
    assert_eq!(p.value().data(), &[1.0, 3.0, 2.0, 4.0, 9.0, 8.0]);
    assert!(c.slice(1, 2, 2).is_err());
}

#[test]
fn matmul_batched_and_shared() {
    let tape = Tape::new();
    let a = tape.constant(arr(&[2, 2, 2], &[1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, 0.0]));
    let v = tape.constant(arr(&[2, 1], &[3.0, 4.0]));
    let out = a.matmul(v).unwrap();
    assert_eq!(out.value().shape(), &[2, 2, 1]);
    assert_eq!(out.value().data(), &[3.0, 4.0, -4.0, 3.0]);
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![5.0, -1.0, 2.0]));
    let y = x.sum().unwrap();
    assert_eq!(tape.backward(y).unwrap().wrt(x).data(), &[1.0, 1.0, 1.0]);

    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![1.0, 2.0]));
    let unused = tape.leaf(Array::from_vec(vec![7.0]));
    let y = x.mul(x).unwrap().sum().unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    assert!(g.get(unused).is_none());
    assert_eq!(g.wrt(unused).data(), &[0.0]);
}

#[test]
fn backward_errors() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(NdError::NotScalar(_))));
    let s = x.sum().unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.backward(s).unwrap_err(), NdError::TapeConsumed);
}

#[test]
fn grad_check_linear_is_exact() {
    let x = Array::from_vec(vec![0.3, -1.2, 4.0]);
    let err = grad_check(|_, v| v.sum(), &x, 1e-5).unwrap();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn op_counts_track_recorded_kinds() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![1.0, 2.0]));
    let _ = x.relu().unwrap().relu().unwrap().sum().unwrap();
    let counts = tape.op_counts();
    assert_eq!(counts["relu"], 2);
    assert_eq!(counts["sum"], 1);
    assert_eq!(counts["leaf"], 1);
}
