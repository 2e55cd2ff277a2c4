use ndarray::{Axis, Zip};

use crate::Tensor2;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// GeLU, tanh approximation.
pub fn gelu(x: &Tensor2) -> Tensor2 {
    x.mapv(|v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_C * v * v * v)).tanh()))
}

/// Backward of [`gelu`]; `x` is the forward input.
pub fn gelu_backward(x: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(x.raw_dim());
    Zip::from(&mut dx).and(x).and(dy).for_each(|d, &v, &g| {
        let u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
        let t = u.tanh();
        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v);
        *d = g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    });
    dx
}

pub fn sigmoid(x: &Tensor2) -> Tensor2 {
    x.mapv(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Backward of [`sigmoid`]; `y` is the forward output.
pub fn sigmoid_backward(y: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(y.raw_dim());
    Zip::from(&mut dx)
        .and(y)
        .and(dy)
        .for_each(|d, &s, &g| *d = g * s * (1.0 - s));
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut y = x.clone();
    for mut row in y.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// Backward of [`softmax_rows`]; `y` is the forward output.
pub fn softmax_rows_backward(y: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(y.raw_dim());
    for ((mut d, yr), gr) in dx
        .axis_iter_mut(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .zip(dy.axis_iter(Axis(0)))
    {
        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
        Zip::from(&mut d)
            .and(&yr)
            .and(&gr)
            .for_each(|o, &s, &g| *o = s * (g - dot));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn fixed_points() {
        assert_eq!(gelu(&array![[0.0]])[[0, 0]], 0.0);
        assert_eq!(sigmoid(&array![[0.0]])[[0, 0]], 0.5);
        let s = softmax_rows(&array![[2.0, 2.0, 2.0, 2.0]]);
        for v in s.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        let s = sigmoid(&array![[-800.0, 800.0]]);
        assert_eq!(s[[0, 0]], 0.0);
        assert_eq!(s[[0, 1]], 1.0);
    }

    fn fd_check(f: impl Fn(&Tensor2) -> Tensor2, b: impl Fn(&Tensor2, &Tensor2, &Tensor2) -> Tensor2, x: Tensor2) {
        // loss = sum(w * f(x)) with fixed weights w
        let w = Tensor2::from_shape_fn(x.raw_dim(), |(i, j)| 0.3 + 0.1 * (i * 7 + j) as f64 % 1.3);
        let y = f(&x);
        let dx = b(&x, &y, &w);
        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let lp: f64 = (&f(&xp) * &w).sum();
            let lm: f64 = (&f(&xm) * &w).sum();
            let num = (lp - lm) / (2.0 * h);
            let ana = dx.as_slice().unwrap()[idx];
            assert!((num - ana).abs() <= 1e-6 * (1.0 + ana.abs()), "{num} vs {ana}");
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let x = Tensor2::from_shape_vec((3, 4), v).unwrap();
            let y = softmax_rows(&x);
            for row in y.axis_iter(Axis(0)) {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn activation_backwards_match_finite_differences(v in proptest::collection::vec(-4.0f64..4.0, 6)) {
            let x = Tensor2::from_shape_vec((2, 3), v).unwrap();
            fd_check(gelu, |x, _y, g| gelu_backward(x, g), x.clone());
            fd_check(sigmoid, |_x, y, g| sigmoid_backward(y, g), x.clone());
            fd_check(softmax_rows, |_x, y, g| softmax_rows_backward(y, g), x);
        }
    }
}
