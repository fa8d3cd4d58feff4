mod common;

use common::{check, primitive_cases, supernet_sigmoid_check, FD_TOLERANCE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spnas::autodiff::Padding;
use spnas::{Graph, Tensor};

#[test]
fn primitives_match_finite_differences() {
    for seed in 0..10 {
        for case in primitive_cases(seed) {
            let rel = check(&case);
            assert!(rel < FD_TOLERANCE, "{} seed {seed}: relative error {rel:e}", case.name);
        }
    }
}

#[test]
fn sigmoid_relaxed_supernet_matches_finite_differences() {
    for seed in 0..10 {
        let rel = supernet_sigmoid_check(seed);
        assert!(rel < FD_TOLERANCE, "seed {seed}: relative error {rel:e}");
    }
}

/// Direct loop-nest cross-correlation with explicit zero padding.
fn naive_conv(x: &Tensor, k: &Tensor, stride: usize, pad: Padding, depthwise: bool) -> Tensor {
    let [n, c, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [o, kc, kh, kw] = <[usize; 4]>::try_from(k.shape()).unwrap();
    let geo = |size: usize, kk: usize| match pad {
        Padding::Same => {
            let out = size.div_ceil(stride);
            let total = ((out - 1) * stride + kk).saturating_sub(size);
            (out, total / 2)
        }
        Padding::Valid => ((size - kk) / stride + 1, 0),
    };
    let (oh, pt) = geo(h, kh);
    let (ow, pl) = geo(w, kw);
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..kc {
                        let src = if depthwise { oc } else { ic };
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pt as isize;
                                let ix = (xx * stride + dx) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((b * c + src) * h + iy as usize) * w + ix as usize];
                                acc += xv * k.data()[((oc * kc + ic) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

#[test]
fn convolutions_match_loop_nest() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (x, kshape, stride, pad, dw) in [
        ([2, 3, 7, 7], [4, 3, 3, 3], 1, Padding::Same, false),
        ([2, 3, 8, 8], [4, 3, 5, 5], 2, Padding::Same, false),
        ([1, 3, 7, 6], [2, 3, 3, 3], 2, Padding::Same, false),
        ([2, 2, 9, 9], [3, 2, 3, 3], 2, Padding::Valid, false),
        ([2, 4, 7, 7], [4, 1, 3, 3], 1, Padding::Same, true),
        ([2, 4, 8, 8], [4, 1, 5, 5], 2, Padding::Same, true),
        ([1, 3, 7, 7], [3, 1, 5, 5], 1, Padding::Valid, true),
    ] {
        let xt = Tensor::randn(&x, 1.0, &mut rng);
        let kt = Tensor::randn(&kshape, 1.0, &mut rng);
        let mut g = Graph::new(0);
        let (xv, kv) = (g.constant(xt.clone()), g.constant(kt.clone()));
        let y = if dw {
            g.depthwise_conv2d(xv, kv, stride, pad).unwrap()
        } else {
            g.conv2d(xv, kv, stride, pad).unwrap()
        };
        let oracle = naive_conv(&xt, &kt, stride, pad, dw);
        assert_eq!(g.value(y).shape(), oracle.shape());
        assert!(g.value(y).max_abs_diff(&oracle) < 1e-12);
    }
}

#[test]
fn gradients_are_reproducible() {
    for case in primitive_cases(3).iter().take(8) {
        assert_eq!(check(case).to_bits(), check(case).to_bits(), "{}", case.name);
    }
}
