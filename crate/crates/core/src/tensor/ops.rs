use super::{numel, Tensor};
use crate::error::{shape_str, Error, Result};

/// `b` must equal `a` in shape or be a trailing suffix of it (broadcast over leading dims).
fn suffix_broadcast(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{op}: cannot broadcast {} onto {}",
            shape_str(b),
            shape_str(a)
        )))
    }
}

fn reduce_to_suffix(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for chunk in g.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize, op: &str) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "{op}: axis {axis} out of range for {}",
            shape_str(shape)
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        suffix_broadcast(self.shape(), other.shape(), "add")?;
        let n = other.numel();
        let data: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a + other.data()[i % n])
            .collect();
        let same = self.numel() == n;
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let gb = if same {
                    g.to_vec()
                } else {
                    reduce_to_suffix(g, n)
                };
                vec![Some(g.to_vec()), Some(gb)]
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0))
    }

    /// Elementwise product with suffix broadcasting of `other`.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        suffix_broadcast(self.shape(), other.shape(), "mul")?;
        let n = other.numel();
        let data: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a * other.data()[i % n])
            .collect();
        let a = self.clone();
        let b = other.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let ga = a.requires_grad().then(|| {
                    g.iter()
                        .enumerate()
                        .map(|(i, gi)| gi * b.data()[i % n])
                        .collect()
                });
                let gb = b.requires_grad().then(|| {
                    let prod: Vec<f64> = g.iter().zip(a.data()).map(|(gi, ai)| gi * ai).collect();
                    reduce_to_suffix(&prod, n)
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&v| v.max(0.0)).collect();
        let x = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                vec![Some(
                    g.iter()
                        .zip(x.data())
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Compensated (Neumaier) sum of all elements.
    pub fn sum(&self) -> Tensor {
        let s = neumaier_sum(self.data().iter().copied());
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "reshape {} -> {}",
                shape_str(self.shape()),
                shape_str(shape)
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if perm.len() != nd || check.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::Dimension(format!(
                "permute {:?} invalid for {}",
                perm,
                shape_str(self.shape())
            )));
        }
        let in_shape = self.shape().to_vec();
        let mut in_strides = vec![1usize; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        // index map: out flat index -> in flat index
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; nd];
        for _ in 0..n {
            map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>());
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let data = map.iter().map(|&j| self.data()[j]).collect();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut gi = vec![0.0; g.len()];
                for (o, &j) in map.iter().enumerate() {
                    gi[j] = g[o];
                }
                vec![Some(gi)]
            }),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::Dimension("transpose needs ≥ 2 dims".into()));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 1, nd - 2);
        self.permute(&perm)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis(self.shape(), axis, "softmax")?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = vec![0.0; self.numel()];
        let x = self.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..len {
                    max = max.max(x[base + k * inner]);
                }
                let mut total = 0.0;
                for k in 0..len {
                    let e = (x[base + k * inner] - max).exp();
                    out[base + k * inner] = e;
                    total += e;
                }
                for k in 0..len {
                    out[base + k * inner] /= total;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |y, g| {
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for k in 0..len {
                            dot += y[base + k * inner] * g[base + k * inner];
                        }
                        for k in 0..len {
                            let j = base + k * inner;
                            gx[j] = y[j] * (g[j] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Normalizes over the last axis then applies `gain` and `bias` (both of last-axis length).
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape().last().unwrap();
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::Dimension(format!(
                "layer_norm: gain {} / bias {} vs last extent {d}",
                shape_str(gain.shape()),
                shape_str(bias.shape())
            )));
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; self.numel()];
        for r in 0..rows {
            let x = &self.data()[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (x[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = h * gain.data()[c] + bias.data()[c];
            }
        }
        let gain_t = gain.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |_, g| {
                let gamma = gain_t.data();
                let mut gx = vec![0.0; g.len()];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_gh = 0.0;
                    let mut sum_ghh = 0.0;
                    for c in 0..d {
                        let gh = gr[c] * gamma[c];
                        sum_gh += gh;
                        sum_ghh += gh * hr[c];
                        ggain[c] += gr[c] * hr[c];
                        gbias[c] += gr[c];
                    }
                    let n = d as f64;
                    for c in 0..d {
                        let gh = gr[c] * gamma[c];
                        gx[r * d + c] = inv_std[r] * (gh - sum_gh / n - hr[c] * sum_ghh / n);
                    }
                }
                vec![Some(gx), Some(ggain), Some(gbias)]
            }),
        ))
    }

    /// Scales each slice along `axis` to unit Euclidean norm; slices with norm
    /// below `eps` are divided by `eps` instead.
    pub fn l2_normalize(&self, axis: usize, eps: f64) -> Result<Tensor> {
        check_axis(self.shape(), axis, "l2_normalize")?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; self.numel()];
        let mut norms = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let sq: f64 = (0..len).map(|k| x[base + k * inner].powi(2)).sum();
                let n = sq.sqrt();
                norms[o * inner + i] = n;
                let denom = n.max(eps);
                for k in 0..len {
                    out[base + k * inner] = x[base + k * inner] / denom;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |y, g| {
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let n = norms[o * inner + i];
                        if n > eps {
                            let dot: f64 = (0..len)
                                .map(|k| y[base + k * inner] * g[base + k * inner])
                                .sum();
                            for k in 0..len {
                                let j = base + k * inner;
                                gx[j] = (g[j] - y[j] * dot) / n;
                            }
                        } else {
                            for k in 0..len {
                                let j = base + k * inner;
                                gx[j] = g[j] / eps;
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenates two tensors along the last axis; leading shapes must agree.
    pub fn concat_last(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Dimension(format!(
                "concat: {} vs {}",
                shape_str(sa),
                shape_str(sb)
            )));
        }
        let da = *sa.last().unwrap();
        let db = *sb.last().unwrap();
        let rows = self.numel() / da;
        let mut data = Vec::with_capacity(self.numel() + other.numel());
        for r in 0..rows {
            data.extend_from_slice(&self.data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&other.data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let mut ga = Vec::with_capacity(rows * da);
                let mut gb = Vec::with_capacity(rows * db);
                for r in 0..rows {
                    let row = &g[r * (da + db)..(r + 1) * (da + db)];
                    ga.extend_from_slice(&row[..da]);
                    gb.extend_from_slice(&row[da..]);
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Selects rows of a 2-D tensor (embedding lookup). Repeated indices accumulate gradient.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows needs a 2-D table, got {}",
                shape_str(self.shape())
            )));
        }
        let (n, d) = (self.shape()[0], self.shape()[1]);
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Data(format!("row index {bad} out of range for {n} rows")));
        }
        if idx.is_empty() {
            return Err(Error::Dimension("gather_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.data()[i * d..(i + 1) * d]);
        }
        let idx = idx.to_vec();
        Ok(Tensor::from_op(
            vec![idx.len(), d],
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut gt = vec![0.0; n * d];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        gt[i * d + c] += g[r * d + c];
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }
}

pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}
