//! Forward and backward kernels for the encoder's operations.
//!
//! Every forward function has a matching `*_backward` that maps the gradient
//! of the output to gradients of the inputs. Matrices are row-major; scalar
//! reductions (row sums, norms, softmax normalizers) accumulate in `f64`.

use super::params::Param;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn dims2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(mismatch(op, other, &[0, 0])),
    }
}

// ---------------------------------------------------------------- activations

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise `x * sigmoid(beta * x)`.
pub fn swish<T: Scalar>(x: &Tensor<T>, beta: f64) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let v = v.to64();
            T::of(v * sigmoid(beta * v))
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient of [`swish`] with respect to its input `x`.
pub fn swish_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>, beta: f64) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| {
            let v = v.to64();
            let s = sigmoid(beta * v);
            T::of(g.to64() * (s + beta * v * s * (1.0 - s)))
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.tanh()).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient of [`tanh`] given its output `y`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| g * (T::one() - y * y))
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

// ------------------------------------------------------------------- matmuls

/// `a (m×k) · b (k×n)`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(mismatch("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul_nt", a)?;
    let (n, k2) = dims2("matmul_nt", b)?;
    if k != k2 {
        return Err(mismatch("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out.push(dot(ar, b.row(j)));
        }
    }
    Tensor::matrix(m, n, out)
}

/// `aᵀ · b` where `a` is `m×k` and `b` is `m×n`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2("matmul_tn", a)?;
    let (m2, n) = dims2("matmul_tn", b)?;
    if m != m2 {
        return Err(mismatch("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); k * n];
    for p in 0..m {
        let br = b.row(p);
        for (i, &av) in a.row(p).iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(k, n, out)
}

/// Gradients of `a · b` with respect to `a` and `b`.
pub fn matmul_backward<T: Scalar>(
    grad: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((matmul_nt(grad, b)?, matmul_tn(a, grad)?))
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

// ------------------------------------------------------------------ embedding

/// Gathers rows `ids` of `table` into an `n×d` matrix.
pub fn embedding_gather<T: Scalar>(table: &Tensor<T>, ids: &[u32]) -> Result<Tensor<T>> {
    let (rows, d) = dims2("embedding_gather", table)?;
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id as usize >= rows {
            return Err(mismatch("embedding_gather", &[id as usize], &[rows, d]));
        }
        out.extend_from_slice(table.row(id as usize));
    }
    Tensor::matrix(ids.len(), d, out)
}

/// Scatter-adds the rows of `grad` into the table's gradient.
pub fn embedding_gather_backward<T: Scalar>(grad: &Tensor<T>, ids: &[u32], table: &mut Param<T>) {
    for (i, &id) in ids.iter().enumerate() {
        table.accumulate_row(id as usize, grad.row(i));
    }
}

/// Adds position rows `0..n` of `positions` to `x`.
pub fn add_positional<T: Scalar>(x: &Tensor<T>, positions: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = dims2("add_positional", x)?;
    let (max, d2) = dims2("add_positional", positions)?;
    if d != d2 || n > max {
        return Err(mismatch("add_positional", x.shape(), positions.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(&positions.data()[..n * d])
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor::matrix(n, d, data)
}

/// The input gradient of [`add_positional`] is `grad` itself; this adds its
/// rows into the positional table's gradient.
pub fn add_positional_backward<T: Scalar>(grad: &Tensor<T>, positions: &mut Param<T>) {
    for i in 0..grad.rows() {
        positions.accumulate_row(i, grad.row(i));
    }
}

// ------------------------------------------------------------------ reductions

/// Sums the rows of an `n×d` matrix into a `d` vector.
pub fn sum_rows<T: Scalar>(x: &Tensor<T>) -> Result<Vec<T>> {
    let (n, d) = dims2("sum_rows", x)?;
    let mut acc = vec![0f64; d];
    for i in 0..n {
        for (a, &v) in acc.iter_mut().zip(x.row(i)) {
            *a += v.to64();
        }
    }
    Ok(acc.into_iter().map(T::of).collect())
}

pub fn sum_rows_backward<T: Scalar>(grad: &[T], n: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * grad.len());
    for _ in 0..n {
        data.extend_from_slice(grad);
    }
    Tensor::matrix(n, grad.len(), data).expect("consistent")
}

pub fn scale_by<T: Scalar>(x: &[T], s: T) -> Vec<T> {
    x.iter().map(|&v| v * s).collect()
}

/// Backward of [`scale_by`] is scaling by the same factor.
pub fn scale_by_backward<T: Scalar>(grad: &[T], s: T) -> Vec<T> {
    scale_by(grad, s)
}

/// Elementwise mean of equal-length vectors.
pub fn mean<T: Scalar>(vectors: &[&[T]]) -> Result<Vec<T>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("mean of zero vectors"))?;
    let d = first.len();
    let mut acc = vec![0f64; d];
    for v in vectors {
        if v.len() != d {
            return Err(mismatch("mean", &[d], &[v.len()]));
        }
        for (a, &x) in acc.iter_mut().zip(v.iter()) {
            *a += x.to64();
        }
    }
    let inv = 1.0 / vectors.len() as f64;
    Ok(acc.into_iter().map(|a| T::of(a * inv)).collect())
}

/// Each input of [`mean`] receives `grad / count`.
pub fn mean_backward<T: Scalar>(grad: &[T], count: usize) -> Vec<T> {
    scale_by(grad, T::of(1.0 / count as f64))
}

// --------------------------------------------------------------------- affine

/// `x (m×in) · w (in×out) + b`.
pub fn affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = matmul(x, w)?;
    let n = out.cols();
    if b.len() != n {
        return Err(mismatch("affine", w.shape(), b.shape()));
    }
    for i in 0..out.rows() {
        for (o, &bv) in out.row_mut(i).iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn affine_backward<T: Scalar>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let (gx, gw) = matmul_backward(grad, x, w)?;
    let gb = sum_rows(grad)?;
    Ok((gx, gw, gb))
}

// -------------------------------------------------------------------- softmax

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, m) = dims2("softmax_rows", x)?;
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let row = x.row(i);
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |a, &v| a.max(v.to64()));
        let exps: Vec<f64> = row.iter().map(|&v| (v.to64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| T::of(e / z)));
    }
    Tensor::matrix(n, m, out)
}

/// Gradient of [`softmax_rows`] given its output `y`.
pub fn softmax_rows_backward<T: Scalar>(y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut out = grad.clone();
    for i in 0..y.rows() {
        let yr = y.row(i);
        let gr = grad.row(i);
        let inner: f64 = yr.iter().zip(gr).map(|(&a, &b)| a.to64() * b.to64()).sum();
        let inner = T::of(inner);
        for ((o, &yv), &gv) in out.row_mut(i).iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - inner);
        }
    }
    out
}

// ------------------------------------------------------------------ attention

/// Intermediate values of one single-head attention application.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    pub x: Tensor<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub probs: Tensor<T>,
    pub scale: T,
}

/// Gradients produced by [`attention_backward`].
#[derive(Debug, Clone)]
pub struct AttentionGrads<T> {
    pub x: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
}

/// Scaled dot-product self-attention over the rows of `x (n×d)`, with
/// query/key projections `d×a` and value projection `d×d_v`.
pub fn single_head_attention<T: Scalar>(
    x: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    if wq.shape() != wk.shape() {
        return Err(mismatch("attention", wq.shape(), wk.shape()));
    }
    let q = matmul(x, wq)?;
    let k = matmul(x, wk)?;
    let v = matmul(x, wv)?;
    let scale = T::of(1.0 / (q.cols() as f64).sqrt());
    let mut logits = matmul_nt(&q, &k)?;
    logits.data_mut().iter_mut().for_each(|s| *s *= scale);
    let probs = softmax_rows(&logits)?;
    let out = matmul(&probs, &v)?;
    Ok((
        out,
        AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            scale,
        },
    ))
}

pub fn attention_backward<T: Scalar>(
    cache: &AttentionCache<T>,
    grad: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
) -> Result<AttentionGrads<T>> {
    let (g_probs, g_v) = matmul_backward(grad, &cache.probs, &cache.v)?;
    let mut g_logits = softmax_rows_backward(&cache.probs, &g_probs);
    g_logits
        .data_mut()
        .iter_mut()
        .for_each(|g| *g *= cache.scale);
    // logits = q kᵀ
    let g_q = matmul(&g_logits, &cache.k)?;
    let g_k = matmul_tn(&g_logits, &cache.q)?;

    let mut g_x = matmul_nt(&g_q, wq)?;
    for extra in [matmul_nt(&g_k, wk)?, matmul_nt(&g_v, wv)?] {
        for (a, &b) in g_x.data_mut().iter_mut().zip(extra.data()) {
            *a += b;
        }
    }
    Ok(AttentionGrads {
        x: g_x,
        wq: matmul_tn(&cache.x, &g_q)?,
        wk: matmul_tn(&cache.x, &g_k)?,
        wv: matmul_tn(&cache.x, &g_v)?,
    })
}

// -------------------------------------------------------------- normalization

/// Row-wise ℓ2 normalization; also returns the row norms.
pub fn l2_normalize<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<f64>)> {
    let (n, _) = dims2("l2_normalize", x)?;
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let norm = x.row(i).iter().map(|v| v.to64().powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEncoding);
        }
        let inv = T::of(1.0 / norm);
        out.row_mut(i).iter_mut().for_each(|v| *v *= inv);
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Gradient of [`l2_normalize`] given its output `y` and the row norms.
pub fn l2_normalize_backward<T: Scalar>(y: &Tensor<T>, norms: &[f64], grad: &Tensor<T>) -> Tensor<T> {
    let mut out = grad.clone();
    for (i, &norm) in norms.iter().enumerate() {
        let yr = y.row(i);
        let gr = grad.row(i);
        let inner = T::of(yr.iter().zip(gr).map(|(&a, &b)| a.to64() * b.to64()).sum::<f64>());
        let inv = T::of(1.0 / norm);
        for ((o, &yv), &gv) in out.row_mut(i).iter_mut().zip(yr).zip(gr) {
            *o = (gv - yv * inner) * inv;
        }
    }
    out
}

/// Cosine similarity between corresponding rows of `a` and `b`.
pub fn cosine_rows<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Vec<T>> {
    if a.shape() != b.shape() {
        return Err(mismatch("cosine_rows", a.shape(), b.shape()));
    }
    let (na, _) = l2_normalize(a)?;
    let (nb, _) = l2_normalize(b)?;
    Ok((0..a.rows())
        .map(|i| {
            T::of(
                na.row(i)
                    .iter()
                    .zip(nb.row(i))
                    .map(|(&x, &y)| x.to64() * y.to64())
                    .sum::<f64>(),
            )
        })
        .collect())
}

/// Gradients of [`cosine_rows`] with respect to `a` and `b`.
pub fn cosine_rows_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &[T],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (na, norms_a) = l2_normalize(a)?;
    let (nb, norms_b) = l2_normalize(b)?;
    let mut g_na = nb.clone();
    let mut g_nb = na.clone();
    for (i, &g) in grad.iter().enumerate() {
        g_na.row_mut(i).iter_mut().for_each(|v| *v *= g);
        g_nb.row_mut(i).iter_mut().for_each(|v| *v *= g);
    }
    Ok((
        l2_normalize_backward(&na, &norms_a, &g_na),
        l2_normalize_backward(&nb, &norms_b, &g_nb),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn swish_values() {
        let x = Tensor::vector(vec![0.0f64, 1.0, -1.0]);
        let y = swish(&x, 1.0);
        // x * sigmoid(x) evaluated directly: 1/(1+e^-1) = 0.7310585786300049
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((y.data()[2] + 0.268_941_421_369_995_1).abs() < 1e-12);
        let y32 = swish(&Tensor::vector(vec![1.0f32, -1.0]), 1.0);
        assert!((y32.data()[0] - 0.731059).abs() < 1e-6);
        assert!((y32.data()[1] + 0.268941).abs() < 1e-6);
    }

    #[test]
    fn matmul_shapes_checked() {
        let a = m(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = m(2, 2, &[1., 0., 0., 1.]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
        let c = matmul(&b, &a).unwrap();
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn transposed_products_agree() {
        let a = m(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = m(4, 3, &[1., 0., 2., 0., 1., 1., 3., 3., 0., -1., 2., 1.]);
        let nt = matmul_nt(&a, &b).unwrap();
        assert_eq!(nt.shape(), &[2, 4]);
        assert_eq!(nt.row(0), &[7., 5., 9., 6.]);
        let tn = matmul_tn(&a, &m(2, 1, &[1., 1.])).unwrap();
        assert_eq!(tn.data(), &[5., 7., 9.]);
    }

    #[test]
    fn l2_normalize_simple() {
        let (y, norms) = l2_normalize(&m(1, 2, &[3., 4.])).unwrap();
        assert!((y.data()[0] - 0.6).abs() < 1e-15 && (y.data()[1] - 0.8).abs() < 1e-15);
        assert_eq!(norms, [5.0]);
        assert!(matches!(
            l2_normalize(&m(1, 2, &[0., 0.])),
            Err(Error::DegenerateEncoding)
        ));
    }

    #[test]
    fn cosine_self_is_one() {
        let v = m(2, 3, &[1., -2., 0.5, 3., 3., 3.]);
        for c in cosine_rows(&v, &v).unwrap() {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_on_single_row_returns_value_row() {
        let x = m(1, 2, &[0.3, -0.7]);
        let wq = m(2, 1, &[1.0, 2.0]);
        let wk = m(2, 1, &[-1.0, 0.5]);
        let wv = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (out, cache) = single_head_attention(&x, &wq, &wk, &wv).unwrap();
        assert_eq!(cache.probs.data(), &[1.0]);
        // x · wv
        assert!((out.data()[0] - (0.3 - 2.1)).abs() < 1e-12);
        assert!((out.data()[1] - (0.6 - 2.8)).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = m(2, 3, &[1000., 1001., 999., -5., 0., 5.]);
        let p = softmax_rows(&x).unwrap();
        for i in 0..2 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_rejects_bad_ids() {
        let t = m(2, 2, &[1., 2., 3., 4.]);
        assert!(embedding_gather(&t, &[2]).is_err());
        assert_eq!(embedding_gather(&t, &[1, 0]).unwrap().data(), &[3., 4., 1., 2.]);
    }
}
