use super::Tensor;
use crate::error::{shape_str, Error, Result};

/// `c = a·b + beta·c` for an `m×k` by `k×n` product with arbitrary element strides on
/// the inputs; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every index touched is < (m-1)*rs + (k-1)*cs + 1 for the given operand,
    // which the callers guarantee lies within the slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn lead_shape(shape: &[usize]) -> &[usize] {
    &shape[..shape.len() - 2]
}

impl Tensor {
    /// Batched matrix product `[..,M,K] × [..,K,N] -> [..,M,N]`. Either side may
    /// omit the leading batch dimensions, in which case it is shared across the batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.bmm(other, false)
    }

    /// Batched product with the second operand transposed: `[..,M,K] × [..,N,K]ᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        self.bmm(other, true)
    }

    fn bmm(&self, other: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let mismatch = || {
            Error::Dimension(format!(
                "matmul{}: {} vs {}",
                if trans_b { "_t" } else { "" },
                shape_str(sa),
                shape_str(sb)
            ))
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(mismatch());
        }
        let (la, lb) = (lead_shape(sa), lead_shape(sb));
        let lead: Vec<usize> = if la.is_empty() {
            lb.to_vec()
        } else if lb.is_empty() || la == lb {
            la.to_vec()
        } else {
            return Err(mismatch());
        };
        let batch: usize = lead.iter().product();
        let a_batched = !la.is_empty();
        let b_batched = !lb.is_empty();

        // b's strides in its logical [K,N] orientation
        let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; batch * m * n];
        if !b_batched {
            // fold the batch into the row dimension
            gemm(batch * m, k, n, a, k, 1, b, rsb, csb, 0.0, &mut out);
        } else {
            for i in 0..batch {
                let ao = if a_batched { i * m * k } else { 0 };
                gemm(
                    m,
                    k,
                    n,
                    &a[ao..],
                    k,
                    1,
                    &b[i * k * n..],
                    rsb,
                    csb,
                    0.0,
                    &mut out[i * m * n..],
                );
            }
        }

        let mut shape = lead;
        shape.push(m);
        shape.push(n);
        let at = self.clone();
        let bt = other.clone();
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let a = at.data();
                let b = bt.data();
                // Bᵀ in logical [N,K] orientation
                let (rsbt, csbt) = if trans_b { (k, 1) } else { (1, n) };
                let ga = at.requires_grad().then(|| {
                    let mut ga = vec![0.0; a.len()];
                    if !b_batched {
                        gemm(batch * m, n, k, g, n, 1, b, rsbt, csbt, 0.0, &mut ga);
                    } else {
                        for i in 0..batch {
                            let (ao, beta) = if a_batched { (i * m * k, 0.0) } else { (0, 1.0) };
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..],
                                n,
                                1,
                                &b[i * k * n..],
                                rsbt,
                                csbt,
                                beta,
                                &mut ga[ao..],
                            );
                        }
                    }
                    ga
                });
                let gb = bt.requires_grad().then(|| {
                    let mut gb = vec![0.0; b.len()];
                    let rows = if b_batched { m } else { batch * m };
                    let reps = if b_batched { batch } else { 1 };
                    for i in 0..reps {
                        let ao = if a_batched { i * rows * k } else { 0 };
                        let go = i * rows * n;
                        let bo = i * k * n;
                        if trans_b {
                            // dB[N,K] = dCᵀ[N,M]·A[M,K]
                            gemm(
                                n,
                                rows,
                                k,
                                &g[go..],
                                1,
                                n,
                                &a[ao..],
                                k,
                                1,
                                0.0,
                                &mut gb[bo..],
                            );
                        } else {
                            // dB[K,N] = Aᵀ[K,M]·dC[M,N]
                            gemm(
                                k,
                                rows,
                                n,
                                &a[ao..],
                                1,
                                k,
                                &g[go..],
                                n,
                                1,
                                0.0,
                                &mut gb[bo..],
                            );
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}

/// Stride and zero padding for [`Tensor::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

/// `floor((extent + 2·pad − k)/stride) + 1`, or `None` when the kernel does not fit.
pub fn conv2d_output_extent(extent: usize, kernel: usize, spec: Conv2dSpec) -> Option<usize> {
    let padded = extent + 2 * spec.padding;
    if spec.stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / spec.stride + 1)
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Calls `f(col_row, position, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.c_in {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (c * self.kh + ky) * self.kw + kx;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let idx = (c * self.h + iy as usize) * self.w + ix as usize;
                            f(r, oy * self.wo + ox, idx);
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation. `self` is `[C_in,H,W]` or `[B,C_in,H,W]`, `weight` is
    /// `[C_out,C_in,kh,kw]` and `bias`, when given, is `[C_out]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Result<Tensor> {
        let unbatched = self.ndim() == 3;
        let (batch, c_in, h, w) = match *self.shape() {
            [c, h, w] => (1, c, h, w),
            [b, c, h, w] => (b, c, h, w),
            _ => {
                return Err(Error::Dimension(format!(
                    "conv2d input must be [C,H,W] or [B,C,H,W], got {}",
                    shape_str(self.shape())
                )))
            }
        };
        let [c_out, wc_in, kh, kw] = *weight.shape() else {
            return Err(Error::Dimension(format!(
                "conv2d weight must be [C_out,C_in,kh,kw], got {}",
                shape_str(weight.shape())
            )));
        };
        if wc_in != c_in {
            return Err(Error::Dimension(format!(
                "conv2d channels: input {} vs weight {}",
                shape_str(self.shape()),
                shape_str(weight.shape())
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(Error::Dimension(format!(
                    "conv2d bias {} for {c_out} output channels",
                    shape_str(b.shape())
                )));
            }
        }
        let geometry_err = || {
            Error::Dimension(format!(
                "conv2d kernel {kh}x{kw} (stride {}, pad {}) does not fit input {}",
                spec.stride,
                spec.padding,
                shape_str(self.shape())
            ))
        };
        let ho = conv2d_output_extent(h, kh, spec).ok_or_else(geometry_err)?;
        let wo = conv2d_output_extent(w, kw, spec).ok_or_else(geometry_err)?;
        let geom = ConvGeom {
            c_in,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            stride: spec.stride,
            pad: spec.padding,
        };
        let (rows, pos) = (geom.rows(), geom.positions());
        let in_size = c_in * h * w;

        let x = self.data();
        let mut cols = vec![0.0; batch * rows * pos];
        for b in 0..batch {
            let xb = &x[b * in_size..(b + 1) * in_size];
            let cb = &mut cols[b * rows * pos..(b + 1) * rows * pos];
            geom.for_each_tap(|r, p, i| cb[r * pos + p] = xb[i]);
        }
        let wd = weight.data();
        let mut out = vec![0.0; batch * c_out * pos];
        for b in 0..batch {
            let ob = &mut out[b * c_out * pos..(b + 1) * c_out * pos];
            if let Some(bias) = bias {
                for (co, bv) in bias.data().iter().enumerate() {
                    ob[co * pos..(co + 1) * pos].fill(*bv);
                }
            }
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            gemm(c_out, rows, pos, wd, rows, 1, &cols[b * rows * pos..], pos, 1, beta, ob);
        }

        let shape = if unbatched {
            vec![c_out, ho, wo]
        } else {
            vec![batch, c_out, ho, wo]
        };
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        let xt = self.clone();
        let wt = weight.clone();
        Ok(Tensor::from_op(
            shape,
            out,
            parents,
            Box::new(move |_, g| {
                let wd = wt.data();
                let gw = wt.requires_grad().then(|| {
                    let mut gw = vec![0.0; c_out * rows];
                    for b in 0..batch {
                        // dW[Co,R] += dOut[Co,P]·colsᵀ[P,R]
                        gemm(
                            c_out,
                            pos,
                            rows,
                            &g[b * c_out * pos..],
                            pos,
                            1,
                            &cols[b * rows * pos..],
                            1,
                            pos,
                            1.0,
                            &mut gw,
                        );
                    }
                    gw
                });
                let gx = xt.requires_grad().then(|| {
                    let mut gx = vec![0.0; batch * in_size];
                    let mut dcols = vec![0.0; rows * pos];
                    for b in 0..batch {
                        // dCols[R,P] = Wᵀ[R,Co]·dOut[Co,P]
                        gemm(rows, c_out, pos, wd, 1, rows, &g[b * c_out * pos..], pos, 1, 0.0, &mut dcols);
                        let gxb = &mut gx[b * in_size..(b + 1) * in_size];
                        geom.for_each_tap(|r, p, i| gxb[i] += dcols[r * pos + p]);
                    }
                    gx
                });
                let mut grads = vec![gx, gw];
                if has_bias {
                    let mut gb = vec![0.0; c_out];
                    for b in 0..batch {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            let off = (b * c_out + co) * pos;
                            *acc += g[off..off + pos].iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(gb));
                }
                grads
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let i = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(i.matmul(&b).unwrap().data(), &[3.0, 4.0, 5.0, 6.0]);
        let r = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(r.matmul(&c).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (rand_vec(&mut rng, 20), rand_vec(&mut rng, 15));
        let got = Tensor::new(&[4, 5], a.clone())
            .unwrap()
            .matmul(&Tensor::new(&[5, 3], b.clone()).unwrap())
            .unwrap();
        for (x, y) in got.data().iter().zip(naive_matmul(&a, &b, 4, 5, 3)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_t_equals_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::new(&[2, 3, 4], rand_vec(&mut rng, 24)).unwrap();
        let b = Tensor::new(&[2, 5, 4], rand_vec(&mut rng, 40)).unwrap();
        let x = a.matmul_t(&b).unwrap();
        let y = a.matmul(&b.transpose_last2().unwrap()).unwrap();
        assert_eq!(x.shape(), &[2, 3, 5]);
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2,3]") && msg.contains("[4,2]"), "{msg}");
    }

    #[test]
    fn conv_identity_and_counting() {
        let x = Tensor::new(&[1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let spec = Conv2dSpec { stride: 1, padding: 0 };
        assert_eq!(x.conv2d(&k, None, spec).unwrap().data(), x.data());

        let ones = Tensor::full(&[1, 5, 5], 1.0);
        let k3 = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = ones.conv2d(&k3, None, spec).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|v| *v == 9.0));
    }

    #[test]
    fn conv_bad_geometry() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let r = x.conv2d(&k, None, Conv2dSpec { stride: 1, padding: 0 });
        assert!(matches!(r, Err(Error::Dimension(_))));
        assert_eq!(conv2d_output_extent(32, 3, Conv2dSpec { stride: 2, padding: 1 }), Some(16));
    }
}
