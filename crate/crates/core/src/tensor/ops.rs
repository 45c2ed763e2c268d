use std::ops::Range;

use super::Tensor;
use crate::error::{Error, Result};

/// Output positions `o` in `0..out_len` for which `o * stride + offset` lands in `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, offset: isize, stride: usize) -> Range<usize> {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let span = in_len as isize - offset;
    let hi = if span <= 0 { 0 } else { (span + s - 1) / s };
    let lo = lo.clamp(0, out_len as isize) as usize;
    let hi = hi.clamp(0, out_len as isize) as usize;
    lo..hi.max(lo)
}

fn conv_out_len(len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("stride must be positive"));
    }
    if k > len + 2 * padding {
        return Err(Error::shape(format!(
            "kernel extent {k} exceeds padded input extent {}",
            len + 2 * padding
        )));
    }
    Ok((len + 2 * padding - k) / stride + 1)
}

/// 2-D cross-correlation of a `C×H×W` input with `K×C×kh×kw` kernels.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let (k, kc, kh, kw) = kernels.dims4()?;
    if kc != c {
        return Err(Error::shape(format!(
            "kernel expects {kc} input channels, input has {c}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != k {
            return Err(Error::shape(format!(
                "bias has {} entries for {k} kernels",
                b.len()
            )));
        }
    }
    let oh = conv_out_len(h, kh, stride, padding)?;
    let ow = conv_out_len(w, kw, stride, padding)?;

    let mut out = vec![0.0; k * oh * ow];
    let src = input.data();
    let wts = kernels.data();
    for ko in 0..k {
        let plane = &mut out[ko * oh * ow..(ko + 1) * oh * ow];
        if let Some(b) = bias {
            plane.fill(b.data()[ko]);
        }
        for ci in 0..c {
            let chan = &src[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let ys = valid_range(oh, h, ky as isize - padding as isize, stride);
                for kx in 0..kw {
                    let wv = wts[((ko * c + ci) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let xoff = kx as isize - padding as isize;
                    let xs = valid_range(ow, w, xoff, stride);
                    for oy in ys.clone() {
                        let iy = (oy * stride + ky) - padding;
                        let row_in = &chan[iy * w..(iy + 1) * w];
                        let row_out = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in xs.clone() {
                            let ix = (ox * stride) as isize + xoff;
                            row_out[ox] += wv * row_in[ix as usize];
                        }
                    }
                }
            }
        }
    }
    let t = Tensor::new(vec![k, oh, ow], out)?;
    t.debug_check_finite("conv2d");
    Ok(t)
}

/// Gradients of [`conv2d`] with respect to input, kernels and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = input.dims3()?;
    let (k, _, kh, kw) = kernels.dims4()?;
    let (gk, oh, ow) = grad_out.dims3()?;
    if gk != k {
        return Err(Error::shape("conv2d gradient channel mismatch"));
    }
    let src = input.data();
    let wts = kernels.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; c * h * w];
    let mut dw = vec![0.0; wts.len()];
    let mut db = vec![0.0; k];
    for ko in 0..k {
        let gplane = &g[ko * oh * ow..(ko + 1) * oh * ow];
        db[ko] = gplane.iter().sum();
        for ci in 0..c {
            let chan = &src[ci * h * w..(ci + 1) * h * w];
            let dchan = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let ys = valid_range(oh, h, ky as isize - padding as isize, stride);
                for kx in 0..kw {
                    let widx = ((ko * c + ci) * kh + ky) * kw + kx;
                    let wv = wts[widx];
                    let xoff = kx as isize - padding as isize;
                    let xs = valid_range(ow, w, xoff, stride);
                    let mut acc = 0.0;
                    for oy in ys.clone() {
                        let iy = (oy * stride + ky) - padding;
                        for ox in xs.clone() {
                            let ix = ((ox * stride) as isize + xoff) as usize;
                            let gv = gplane[oy * ow + ox];
                            acc += gv * chan[iy * w + ix];
                            dchan[iy * w + ix] += gv * wv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![c, h, w], dx)?,
        Tensor::new(kernels.shape().to_vec(), dw)?,
        Tensor::new(vec![k], db)?,
    ))
}

/// Channel-by-channel valid cross-correlation of `search` with `template` as kernel.
///
/// Output channel `c` only sees channel `c` of both inputs, so the channel
/// count is preserved.
pub fn depthwise_xcorr(search: &Tensor, template: &Tensor) -> Result<Tensor> {
    let (c, hx, wx) = search.dims3()?;
    let (cz, hz, wz) = template.dims3()?;
    if c != cz {
        return Err(Error::shape(format!(
            "search has {c} channels, template has {cz}"
        )));
    }
    if hz > hx || wz > wx {
        return Err(Error::shape(format!(
            "template {hz}×{wz} larger than search {hx}×{wx}"
        )));
    }
    let (oh, ow) = (hx - hz + 1, wx - wz + 1);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let s = search.channel(ch);
        let t = template.channel(ch);
        let plane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for u in 0..hz {
            for v in 0..wz {
                let tv = t[u * wz + v];
                if tv == 0.0 {
                    continue;
                }
                for y in 0..oh {
                    let row_in = &s[(y + u) * wx + v..(y + u) * wx + v + ow];
                    let row_out = &mut plane[y * ow..(y + 1) * ow];
                    for (o, &i) in row_out.iter_mut().zip(row_in) {
                        *o += tv * i;
                    }
                }
            }
        }
    }
    let t = Tensor::new(vec![c, oh, ow], out)?;
    t.debug_check_finite("depthwise_xcorr");
    Ok(t)
}

/// Gradients of [`depthwise_xcorr`] with respect to search and template.
pub fn depthwise_xcorr_backward(
    search: &Tensor,
    template: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (c, hx, wx) = search.dims3()?;
    let (_, hz, wz) = template.dims3()?;
    let (_, oh, ow) = grad_out.dims3()?;
    let mut ds = vec![0.0; search.len()];
    let mut dt = vec![0.0; template.len()];
    for ch in 0..c {
        let s = search.channel(ch);
        let t = template.channel(ch);
        let g = grad_out.channel(ch);
        let dsc = &mut ds[ch * hx * wx..(ch + 1) * hx * wx];
        let dtc = &mut dt[ch * hz * wz..(ch + 1) * hz * wz];
        for u in 0..hz {
            for v in 0..wz {
                let tv = t[u * wz + v];
                let mut acc = 0.0;
                for y in 0..oh {
                    let base = (y + u) * wx + v;
                    for x in 0..ow {
                        let gv = g[y * ow + x];
                        acc += gv * s[base + x];
                        dsc[base + x] += gv * tv;
                    }
                }
                dtc[u * wz + v] = acc;
            }
        }
    }
    Ok((
        Tensor::new(search.shape().to_vec(), ds)?,
        Tensor::new(template.shape().to_vec(), dt)?,
    ))
}

/// Stacks `C_i×H×W` parts along the channel axis, in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels needs at least one part"))?;
    let (_, h, w) = first.dims3()?;
    let mut channels = 0;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        let (c, ph, pw) = p.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(Error::shape(format!(
                "cannot concatenate {ph}×{pw} with {h}×{w}"
            )));
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Inverse of [`concat_channels`]: cuts a `C×H×W` tensor into the given channel counts.
pub fn split_channels(t: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let (c, h, w) = t.dims3()?;
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::shape(format!(
            "split sizes {sizes:?} do not add up to {c} channels"
        )));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let part = t.data()[start * h * w..(start + n) * h * w].to_vec();
            start += n;
            Tensor::new(vec![n, h, w], part)
        })
        .collect()
}

/// Per-location two-way softmax over the channel axis of a `2×H×W` map.
pub fn softmax2(logits: &Tensor) -> Result<Tensor> {
    let (c, h, w) = logits.dims3()?;
    if c != 2 {
        return Err(Error::shape(format!("softmax2 expects 2 channels, got {c}")));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("softmax2 input"));
    }
    let n = h * w;
    let z = logits.data();
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        let (a, b) = (z[i], z[n + i]);
        // p1 = 1 / (1 + exp(a - b)), evaluated on the side that cannot overflow
        let d = a - b;
        let p1 = if d > 0.0 {
            let e = (-d).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + d.exp())
        };
        out[n + i] = p1;
        out[i] = 1.0 - p1;
    }
    Tensor::new(vec![2, h, w], out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Variance floor of [`group_norm`].
pub const NORM_EPS: f64 = 1e-5;

/// `(mean, 1 / std)` of each channel group.
type GroupStats = Vec<(f64, f64)>;

/// Group length, plane size and per-group statistics.
fn group_stats(x: &Tensor, groups: usize) -> Result<(usize, usize, GroupStats)> {
    let (c, h, w) = x.dims3()?;
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::shape(format!("{c} channels do not split into {groups} groups")));
    }
    let len = c / groups * h * w;
    let stats = x
        .data()
        .chunks_exact(len)
        .map(|g| {
            let mean = g.iter().sum::<f64>() / len as f64;
            let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            (mean, 1.0 / (var + NORM_EPS).sqrt())
        })
        .collect();
    Ok((len, h * w, stats))
}

/// Normalizes each group of `C / groups` channels of a `C×H×W` map to zero
/// mean and unit variance, then applies the per-channel affine `gamma`, `beta`.
pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "norm affine shapes {:?}/{:?} for {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let (len, plane, stats) = group_stats(x, groups)?;
    let mut out = vec![0.0; x.len()];
    for (i, (o, &v)) in out.iter_mut().zip(x.data()).enumerate() {
        let (mean, inv) = stats[i / len];
        let ch = i / plane;
        *o = gamma.data()[ch] * (v - mean) * inv + beta.data()[ch];
    }
    Tensor::new(vec![c, h, w], out)
}

/// Gradients of [`group_norm`] with respect to `x`, `gamma` and `beta`.
pub fn group_norm_backward(
    x: &Tensor,
    groups: usize,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = x.dims3()?;
    if grad_out.shape() != x.shape() || gamma.shape() != [c] {
        return Err(Error::shape("group norm backward shape mismatch"));
    }
    let (len, plane, stats) = group_stats(x, groups)?;
    let xhat: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (mean, inv) = stats[i / len];
            (v - mean) * inv
        })
        .collect();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dxhat = vec![0.0; x.len()];
    for (i, &g) in grad_out.data().iter().enumerate() {
        let ch = i / plane;
        dgamma[ch] += g * xhat[i];
        dbeta[ch] += g;
        dxhat[i] = g * gamma.data()[ch];
    }
    let mut dx = vec![0.0; x.len()];
    for (gi, &(_, inv)) in stats.iter().enumerate() {
        let r = gi * len..(gi + 1) * len;
        let m1 = dxhat[r.clone()].iter().sum::<f64>() / len as f64;
        let m2 = dxhat[r.clone()].iter().zip(&xhat[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / len as f64;
        for i in r {
            dx[i] = inv * (dxhat[i] - m1 - xhat[i] * m2);
        }
    }
    Ok((
        Tensor::new(vec![c, h, w], dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Central-difference gradient estimate of a scalar function at `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut probe = x.clone();
    probe.clear_grad();
    let mut grad = vec![0.0; x.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *g = (up - down) / (2.0 * eps);
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: grad,
        grad: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_all_ones() {
        let out = conv2d(&Tensor::full([1, 3, 3], 1.0), &Tensor::full([1, 1, 2, 2], 1.0), None, 1, 0)
            .unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_diagonal_kernel() {
        let out = conv2d(
            &t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]),
            &t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]),
            None,
            1,
            0,
        )
        .unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_fn([1, 4, 5], |i| (i as f64).sin());
        let out = conv2d(&x, &t(&[1, 1, 1, 1], &[1.0]), None, 1, 0).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_strided_padded_shape() {
        let x = Tensor::zeros([2, 11, 7]);
        let k = Tensor::zeros([3, 2, 3, 3]);
        let out = conv2d(&x, &k, None, 2, 1).unwrap();
        assert_eq!(out.shape(), &[3, 6, 4]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let err = conv2d(&Tensor::zeros([2, 4, 4]), &Tensor::zeros([1, 3, 1, 1]), None, 1, 0);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let err = conv2d(&Tensor::zeros([1, 2, 2]), &Tensor::zeros([1, 1, 3, 3]), None, 1, 0);
        assert!(err.is_err());
        assert!(conv2d(&Tensor::zeros([1, 2, 2]), &Tensor::zeros([1, 1, 3, 3]), None, 1, 1).is_ok());
    }

    #[test]
    fn xcorr_all_ones() {
        let out = depthwise_xcorr(&Tensor::full([2, 3, 3], 1.0), &Tensor::full([2, 2, 2], 1.0))
            .unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn xcorr_zero_search() {
        let out = depthwise_xcorr(&Tensor::zeros([1, 3, 3]), &Tensor::full([1, 2, 2], 0.7)).unwrap();
        assert_eq!(out, Tensor::zeros([1, 2, 2]));
    }

    #[test]
    fn xcorr_matched_filter_peaks_at_origin() {
        let tpl = t(&[1, 2, 2], &[0.3, 0.9, 0.5, 0.2]);
        let mut search = Tensor::zeros([1, 4, 4]);
        for (u, v) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            search.data_mut()[u * 4 + v] = tpl.at3(0, u, v);
        }
        let out = depthwise_xcorr(&search, &tpl).unwrap();
        let best = out
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        assert_eq!(best.0, 0);
    }

    #[test]
    fn xcorr_errors() {
        assert!(depthwise_xcorr(&Tensor::zeros([2, 3, 3]), &Tensor::zeros([1, 2, 2])).is_err());
        assert!(depthwise_xcorr(&Tensor::zeros([1, 3, 3]), &Tensor::zeros([1, 4, 2])).is_err());
    }

    #[test]
    fn concat_examples() {
        let parts: Vec<Tensor> = (0..3).map(|_| Tensor::zeros([4, 5, 5])).collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        assert_eq!(concat_channels(&refs).unwrap().shape(), &[12, 5, 5]);

        let x = Tensor::from_fn([3, 2, 2], |i| i as f64);
        assert_eq!(concat_channels(&[&x]).unwrap(), x);

        let out = concat_channels(&[&Tensor::full([1, 2, 2], 1.0), &Tensor::zeros([1, 2, 2])]).unwrap();
        assert_eq!(out.channel(0), &[1.0; 4]);
        assert_eq!(out.channel(1), &[0.0; 4]);

        assert!(concat_channels(&[&Tensor::zeros([1, 2, 2]), &Tensor::zeros([1, 2, 3])]).is_err());
    }

    #[test]
    fn split_inverts_concat() {
        let x = Tensor::from_fn([5, 2, 3], |i| i as f64 * 0.5);
        let parts = split_channels(&x, &[2, 3]).unwrap();
        assert_eq!(concat_channels(&[&parts[0], &parts[1]]).unwrap(), x);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax2(&Tensor::zeros([2, 3, 3])).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));

        let p = softmax2(&t(&[2, 1, 1], &[20.0, -20.0])).unwrap();
        assert!((p.data()[0] - 1.0).abs() < 1e-8);

        let p = softmax2(&t(&[2, 1, 1], &[1.0, 0.0])).unwrap();
        let e = std::f64::consts::E;
        assert!((p.data()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p.data()[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((p.data()[0] - 0.7311).abs() < 1e-4);

        assert!(softmax2(&t(&[2, 1, 1], &[f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let x = t(&[2], &[1.0, 2.0]);
        let g = finite_diff_grad(|x| x.data().iter().map(|v| v * v).sum(), &x, 1e-4);
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);

        let g = finite_diff_grad(|_| 3.5, &x, 1e-4);
        assert_eq!(g, Tensor::zeros([2]));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = Tensor::from_fn([2, 5, 6], |i| ((i * 7) % 11) as f64 / 5.0 - 1.0);
        let k = Tensor::from_fn([3, 2, 3, 3], |i| ((i * 5) % 13) as f64 / 6.0 - 1.0);
        let b = t(&[3], &[0.1, -0.2, 0.3]);
        let g = Tensor::from_fn([3, 3, 3], |i| ((i * 3) % 7) as f64 - 3.0);
        let loss = |x: &Tensor, k: &Tensor, b: &Tensor| {
            let y = conv2d(x, k, Some(b), 2, 1).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (dx, dk, db) = conv2d_backward(&x, &k, &g, 2, 1).unwrap();
        let fx = finite_diff_grad(|x| loss(x, &k, &b), &x, 1e-5);
        let fk = finite_diff_grad(|k| loss(&x, k, &b), &k, 1e-5);
        let fb = finite_diff_grad(|b| loss(&x, &k, b), &b, 1e-5);
        assert!(dx.rel_error(&fx).unwrap() < 1e-8);
        assert!(dk.rel_error(&fk).unwrap() < 1e-8);
        assert!(db.rel_error(&fb).unwrap() < 1e-8);
    }

    #[test]
    fn xcorr_backward_matches_finite_differences() {
        let s = Tensor::from_fn([2, 6, 5], |i| ((i * 7) % 11) as f64 / 5.0 - 1.0);
        let z = Tensor::from_fn([2, 3, 2], |i| ((i * 5) % 13) as f64 / 6.0 - 1.0);
        let g = Tensor::from_fn([2, 4, 4], |i| ((i * 3) % 7) as f64 - 3.0);
        let loss = |s: &Tensor, z: &Tensor| {
            let y = depthwise_xcorr(s, z).unwrap();
            y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (ds, dz) = depthwise_xcorr_backward(&s, &z, &g).unwrap();
        assert!(ds.rel_error(&finite_diff_grad(|s| loss(s, &z), &s, 1e-5)).unwrap() < 1e-8);
        assert!(dz.rel_error(&finite_diff_grad(|z| loss(&s, z), &z, 1e-5)).unwrap() < 1e-8);
    }

    #[test]
    fn group_norm_normalizes_and_matches_finite_differences() {
        let x = Tensor::from_fn([4, 3, 3], |i| (i as f64 * 0.7).sin() * 3.0 + i as f64 * 0.1);
        let ones = Tensor::full([4], 1.0);
        let zeros = Tensor::zeros([4]);
        let y = group_norm(&x, 2, &ones, &zeros).unwrap();
        for g in y.data().chunks(18) {
            let m = g.iter().sum::<f64>() / 18.0;
            let v = g.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 18.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-4);
        }
        assert!(group_norm(&x, 3, &ones, &zeros).is_err());

        let gamma = Tensor::from_fn([4], |i| 0.5 + i as f64 * 0.3);
        let beta = Tensor::from_fn([4], |i| i as f64 * -0.2);
        let probe = Tensor::from_fn([4, 3, 3], |i| (i as f64 * 1.3).cos());
        let f = |x: &Tensor, g: &Tensor, b: &Tensor| {
            let y = group_norm(x, 2, g, b).unwrap();
            y.data().iter().zip(probe.data()).map(|(a, p)| a * p).sum::<f64>()
        };
        let (dx, dg, db) = group_norm_backward(&x, 2, &gamma, &probe).unwrap();
        let fx = finite_diff_grad(|t| f(t, &gamma, &beta), &x, 1e-5);
        let fg = finite_diff_grad(|t| f(&x, t, &beta), &gamma, 1e-5);
        let fb = finite_diff_grad(|t| f(&x, &gamma, t), &beta, 1e-5);
        assert!(dx.rel_error(&fx).unwrap() < 1e-6);
        assert!(dg.rel_error(&fg).unwrap() < 1e-6);
        assert!(db.rel_error(&fb).unwrap() < 1e-6);
    }
}
