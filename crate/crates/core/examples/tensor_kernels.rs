//! Convolution and depth-wise correlation kernels, the tensor file format, and
//! a tape gradient checked against finite differences.

use siamcar::autograd::{Exec, Tape};
use siamcar::tensor::{conv2d, depthwise_xcorr, finite_diff_grad, load_tensor, save_tensor};
use siamcar::Tensor;

fn main() -> anyhow::Result<()> {
    let image = Tensor::from_fn([1, 4, 4], |i| i as f64);
    let kernel = Tensor::full([1, 1, 2, 2], 1.0);
    let y = conv2d(&image, &kernel, None, 2, 0)?;
    println!("2x2 box filter, stride 2: {:?}", y.data());

    let search = Tensor::from_fn([2, 5, 5], |i| ((i * 7) % 11) as f64);
    let template = Tensor::from_fn([2, 3, 3], |i| ((i * 3) % 5) as f64 - 2.0);
    let r = depthwise_xcorr(&search, &template)?;
    println!("depth-wise correlation keeps channels: {:?} -> {:?}", search.shape(), r.shape());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("r.tnsr");
    save_tensor(&path, &r)?;
    println!("round-trip through {}: {}", path.display(), load_tensor(&path)? == r);

    // d/dw of sum(relu(conv(x, w))) on the tape vs central differences
    let x = Tensor::from_fn([2, 6, 6], |i| (i as f64 * 0.37).sin());
    let w = Tensor::from_fn([3, 2, 3, 3], |i| (i as f64 * 0.91).cos() * 0.3);
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let wv = tape.param("w", &w);
    let y = tape.conv2d(&xv, &wv, None, 1, 1)?;
    let y = tape.relu(&y);
    let value = tape.value(&y).sum();
    let ones = Tensor::full(tape.value(&y).shape().to_vec(), 1.0);
    let out = tape.scalar(value, &[y], vec![ones])?;
    tape.backward(out)?;
    let analytic = tape.param_grad("w").expect("w is trainable").clone();
    let numeric = finite_diff_grad(
        |w| siamcar::tensor::relu(&conv2d(&x, w, None, 1, 1).unwrap()).sum(),
        &w,
        1e-6,
    );
    println!("gradient relative error: {:.2e}", analytic.rel_error(&numeric).expect("same shape"));
    Ok(())
}
