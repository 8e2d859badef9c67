//! Dense kernels for the per-part networks.
//!
//! A part network is
//!
//! ```text
//! h1      = leaky(W1 [x; f] + b1)
//! h_{l+1} = h_l + drop(leaky(W_l h_l + b_l))      l = 1 .. layers-1
//! logit   = w_out · h_L + b_out
//! ```
//!
//! The feature block `f` is constant for a given hand, so `W1_f f + b1`
//! is folded into a per-hand bias `c` and only the three coordinates go
//! through the first GEMM. Rows are points, stored row-major.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};

/// Float type the kernels run on.
pub trait Real:
    Copy
    + Send
    + Sync
    + Default
    + PartialOrd
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Branch-free leaky rectifier.
    fn leaky(self, slope: Self) -> Self;
    /// `C = alpha A B + beta C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn leaky(self, slope: Self) -> Self {
        self.max(0.0) + slope * self.min(0.0)
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn leaky(self, slope: Self) -> Self {
        self.max(0.0) + slope * self.min(0.0)
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `C (k×n) += Aᵀ · B` with `A` `m×k`, `B` `m×n`; `C` has row stride `ldc`.
pub(crate) fn mm_tn_acc<F: Real>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], ldc: usize) {
    assert!(a.len() >= m * k && b.len() >= m * n);
    assert!(k == 0 || n == 0 || c.len() >= (k - 1) * ldc + n);
    // SAFETY: bounds checked above; c does not alias a or b.
    unsafe {
        F::gemm(
            k, m, n, F::ONE, a.as_ptr(), 1, k as isize, b.as_ptr(), n as isize, 1, F::ONE,
            c.as_mut_ptr(), ldc as isize, 1,
        )
    }
}

/// `out[r, :] (+)= Σ_k a[r, k] m[k, :]` for row-major `a` (`· × k`) and `m`
/// (`k × w`). Each output entry is summed in `k` order, so the result does
/// not depend on which code path runs.
pub(crate) fn rows_times<F: Real>(a: &[F], k: usize, m: &[F], w: usize, out: &mut [F], accumulate: bool) {
    assert_eq!(m.len(), k * w);
    assert_eq!(a.len() / k.max(1), out.len() / w.max(1));
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe {
                match w {
                    40 => return rows_times_avx::<F, 40>(a, k, m, out, accumulate),
                    64 => return rows_times_avx::<F, 64>(a, k, m, out, accumulate),
                    _ => return rows_times_dyn_avx(a, k, m, w, out, accumulate),
                }
            }
        }
    }
    match w {
        40 => rows_times_fixed::<F, 40>(a, k, m, out, accumulate),
        64 => rows_times_fixed::<F, 64>(a, k, m, out, accumulate),
        _ => rows_times_dyn(a, k, m, w, out, accumulate),
    }
}

#[inline(always)]
fn rows_times_fixed<F: Real, const W: usize>(a: &[F], k: usize, m: &[F], out: &mut [F], accumulate: bool) {
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(W)) {
        let mut acc = [F::ZERO; W];
        if accumulate {
            acc.copy_from_slice(orow);
        }
        for (mrow, &av) in m.chunks_exact(W).zip(arow) {
            for j in 0..W {
                acc[j] += av * mrow[j];
            }
        }
        orow.copy_from_slice(&acc);
    }
}

#[inline(always)]
fn rows_times_dyn<F: Real>(a: &[F], k: usize, m: &[F], w: usize, out: &mut [F], accumulate: bool) {
    for (arow, orow) in a.chunks_exact(k.max(1)).zip(out.chunks_exact_mut(w.max(1))) {
        if !accumulate {
            orow.iter_mut().for_each(|v| *v = F::ZERO);
        }
        for (mrow, &av) in m.chunks_exact(w.max(1)).zip(arow) {
            for (o, &mv) in orow.iter_mut().zip(mrow) {
                *o += av * mv;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn rows_times_avx<F: Real, const W: usize>(a: &[F], k: usize, m: &[F], out: &mut [F], accumulate: bool) {
    rows_times_fixed::<F, W>(a, k, m, out, accumulate)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn rows_times_dyn_avx<F: Real>(a: &[F], k: usize, m: &[F], w: usize, out: &mut [F], accumulate: bool) {
    rows_times_dyn(a, k, m, w, out, accumulate)
}

fn transpose<F: Real>(m: &[F], rows: usize, cols: usize, stride: usize) -> Vec<F> {
    let mut t = vec![F::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * stride + c];
        }
    }
    t
}

/// Borrowed parameters of one part network.
pub(crate) struct PartNet<'a, F> {
    pub width: usize,
    /// Columns of `W1` (3 coordinates + features).
    pub in_dim: usize,
    pub w1: &'a [F],
    pub res: Vec<(&'a [F], &'a [F])>,
    pub wout: &'a [F],
    pub bout: F,
}

/// Mutable gradient buffers laid out like [`PartNet`].
pub(crate) struct PartGrad<'a, F> {
    pub w1: &'a mut [F],
    pub b1: &'a mut [F],
    pub res: Vec<(&'a mut [F], &'a mut [F])>,
    pub wout: &'a mut [F],
    pub bout: &'a mut F,
}

/// Activation and dropout behavior for one forward pass.
#[derive(Clone, Copy)]
pub(crate) struct Activation<'a> {
    pub slope: f64,
    /// `(seed, drop probability)`; `None` disables dropout.
    pub dropout: Option<(u64, f64)>,
    /// Frozen leaky-unit signs, `layers` words per row, bit j = unit j active.
    pub frozen: Option<&'a [u64]>,
}

impl Activation<'_> {
    pub fn inference(slope: f64) -> Self {
        Activation {
            slope,
            dropout: None,
            frozen: None,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lowbias32(mut x: u32) -> u32 {
    x ^= x >> 16;
    x = x.wrapping_mul(0x7feb_352d);
    x ^= x >> 15;
    x = x.wrapping_mul(0x846c_a68b);
    x ^ (x >> 16)
}

/// Fills `out` with the inverted-dropout factor (0 or 1/(1-p)) for one row
/// of one layer. Masks are a pure function of `(seed, row, layer)`, so a
/// recomputed forward pass sees the same mask.
pub(crate) fn dropout_row<F: Real>(seed: u64, p: f64, row: u32, layer: usize, out: &mut [F]) {
    let threshold = (p * 4_294_967_296.0) as u32;
    let keep = F::from_f64(1.0 / (1.0 - p));
    let base = splitmix(seed ^ ((row as u64) << 20) ^ layer as u64) as u32;
    for (j, o) in out.iter_mut().enumerate() {
        let draw = lowbias32(base.wrapping_add((j as u32).wrapping_mul(0x9e37_79b9)));
        *o = if draw >= threshold { keep } else { F::ZERO };
    }
}

/// Activations kept for the backward pass.
#[derive(Default)]
pub(crate) struct Cache<F> {
    pub n: usize,
    pub x: Vec<F>,
    /// Pre-activations per layer, `n × width` each.
    pub z: Vec<Vec<F>>,
    /// Hidden state entering each residual layer and the final state.
    pub h: Vec<Vec<F>>,
    /// Dropout factors per residual layer (empty when dropout is off).
    pub drop: Vec<Vec<F>>,
}

impl<F: Real> Cache<F> {
    /// Sign pattern of every leaky unit, `layers` words per row.
    pub fn signs(&self, width: usize) -> Vec<u64> {
        let layers = self.z.len();
        let mut out = vec![0u64; self.n * layers];
        for (l, z) in self.z.iter().enumerate() {
            for r in 0..self.n {
                let mut word = 0u64;
                for j in 0..width {
                    if z[r * width + j] > F::ZERO {
                        word |= 1 << j;
                    }
                }
                out[r * layers + l] = word;
            }
        }
        out
    }
}

fn leaky_inplace<F: Real>(z: &[F], out: &mut [F], slope: F, frozen: Option<(&[u64], usize, usize)>, width: usize) {
    match frozen {
        None => {
            for (o, &v) in out.iter_mut().zip(z) {
                *o = v.leaky(slope);
            }
        }
        Some((signs, layers, layer)) => {
            for (r, (orow, zrow)) in out.chunks_mut(width).zip(z.chunks(width)).enumerate() {
                let word = signs[r * layers + layer];
                for (j, (o, &v)) in orow.iter_mut().zip(zrow).enumerate() {
                    *o = v * [slope, F::ONE][(word >> j & 1) as usize];
                }
            }
        }
    }
}

/// Rows processed together; keeps the working set in cache.
const BLOCK: usize = 256;

/// Forward pass over `n` rows. `x` holds scaled canonical coordinates
/// (`n × 3`), `c` the folded first-layer bias, `rows` the row ids used to
/// key dropout masks. Writes logits to `out`.
pub(crate) fn forward<F: Real>(
    net: &PartNet<F>,
    x: &[F],
    c: &[F],
    act: &Activation,
    rows: &[u32],
    out: &mut [F],
    mut cache: Option<&mut Cache<F>>,
) {
    let n = out.len();
    let w = net.width;
    let nres = net.res.len();
    let layers = nres + 1;
    let slope = F::from_f64(act.slope);
    let w1t = transpose(net.w1, w, 3, net.in_dim);
    let wt: Vec<Vec<F>> = net.res.iter().map(|(wl, _)| transpose(wl, w, w, w)).collect();
    if let Some(cache) = cache.as_deref_mut() {
        cache.n = n;
        cache.x = x.to_vec();
        cache.z = vec![vec![F::ZERO; n * w]; layers];
        cache.h = vec![vec![F::ZERO; n * w]; layers];
        cache.drop = if act.dropout.is_some() {
            vec![vec![F::ZERO; n * w]; nres]
        } else {
            vec![]
        };
    }

    let mut z = vec![F::ZERO; BLOCK * w];
    let mut h = vec![F::ZERO; BLOCK * w];
    let mut a = vec![F::ZERO; BLOCK * w];
    let mut mask = vec![F::ZERO; BLOCK * w];
    for start in (0..n).step_by(BLOCK) {
        let end = (start + BLOCK).min(n);
        let b = end - start;
        let span = start * w..end * w;
        let frozen = |l: usize| act.frozen.map(|s| (&s[start * layers..end * layers], layers, l));
        let (z, h, a, mask) = (&mut z[..b * w], &mut h[..b * w], &mut a[..b * w], &mut mask[..b * w]);

        for zr in z.chunks_exact_mut(w) {
            zr.copy_from_slice(c);
        }
        rows_times(&x[3 * start..3 * end], 3, &w1t, w, z, true);
        leaky_inplace(z, h, slope, frozen(0), w);
        if let Some(cache) = cache.as_deref_mut() {
            cache.z[0][span.clone()].copy_from_slice(z);
        }

        for (l, (_, bl)) in net.res.iter().enumerate() {
            for zr in z.chunks_exact_mut(w) {
                zr.copy_from_slice(bl);
            }
            rows_times(h, w, &wt[l], w, z, true);
            leaky_inplace(z, a, slope, frozen(l + 1), w);
            if let Some((seed, p)) = act.dropout {
                for (r, &id) in rows[start..end].iter().enumerate() {
                    dropout_row(seed, p, id, l, &mut mask[r * w..(r + 1) * w]);
                }
                for (ai, &m) in a.iter_mut().zip(mask.iter()) {
                    *ai *= m;
                }
            }
            if let Some(cache) = cache.as_deref_mut() {
                cache.h[l][span.clone()].copy_from_slice(h);
                cache.z[l + 1][span.clone()].copy_from_slice(z);
                if act.dropout.is_some() {
                    cache.drop[l][span.clone()].copy_from_slice(mask);
                }
            }
            for (hi, &ai) in h.iter_mut().zip(a.iter()) {
                *hi += ai;
            }
        }

        for (o, hr) in out[start..end].iter_mut().zip(h.chunks_exact(w)) {
            let mut acc = net.bout;
            for (&hv, &wv) in hr.iter().zip(net.wout) {
                acc += hv * wv;
            }
            *o = acc;
        }
        if let Some(cache) = cache.as_deref_mut() {
            cache.h[nres][span].copy_from_slice(h);
        }
    }
}

/// Backward pass for cached rows with logit adjoints `g`. Accumulates
/// parameter gradients (first-layer coordinate columns only) and returns
/// the adjoint of the folded bias `c`. If `gx` is given, writes coordinate
/// adjoints (`n × 3`).
pub(crate) fn backward<F: Real>(
    net: &PartNet<F>,
    cache: &Cache<F>,
    g: &[F],
    act: &Activation,
    grad: &mut PartGrad<F>,
    gx: Option<&mut [F]>,
) -> Vec<F> {
    let n = cache.n;
    let w = net.width;
    let slope = F::from_f64(act.slope);
    let hl = cache.h.last().expect("cache holds the final state");

    for (r, &gr) in g.iter().enumerate() {
        *grad.bout += gr;
        for (gw, &hv) in grad.wout.iter_mut().zip(&hl[r * w..(r + 1) * w]) {
            *gw += gr * hv;
        }
    }
    let mut gh = vec![F::ZERO; n * w];
    for (r, &gr) in g.iter().enumerate() {
        for (o, &wv) in gh[r * w..(r + 1) * w].iter_mut().zip(net.wout) {
            *o = gr * wv;
        }
    }

    let layers = net.res.len() + 1;
    let tab = [slope, F::ONE];
    // leaky derivative of unit i in layer l, from the cache or the frozen signs
    let deriv = |z: &[F], l: usize, out: &mut [F]| match act.frozen {
        Some(s) => {
            for (r, orow) in out.chunks_mut(w).enumerate() {
                let word = s[r * layers + l];
                for (j, o) in orow.iter_mut().enumerate() {
                    *o *= tab[(word >> j & 1) as usize];
                }
            }
        }
        None => {
            for (o, &zv) in out.iter_mut().zip(z) {
                *o *= tab[(zv > F::ZERO) as usize];
            }
        }
    };
    let mut gz = vec![F::ZERO; n * w];
    for l in (0..net.res.len()).rev() {
        gz.copy_from_slice(&gh);
        if let Some(drop) = cache.drop.get(l) {
            for (v, &d) in gz.iter_mut().zip(drop) {
                *v *= d;
            }
        }
        deriv(&cache.z[l + 1], l + 1, &mut gz);
        let (gw, gb) = &mut grad.res[l];
        mm_tn_acc(n, w, w, &gz, &cache.h[l], gw, w);
        for r in 0..n {
            for (b, &v) in gb.iter_mut().zip(&gz[r * w..(r + 1) * w]) {
                *b += v;
            }
        }
        rows_times(&gz, w, net.res[l].0, w, &mut gh, true);
    }

    gz.copy_from_slice(&gh);
    deriv(&cache.z[0], 0, &mut gz);
    mm_tn_acc(n, w, 3, &gz, &cache.x, grad.w1, net.in_dim);
    let mut gc = vec![F::ZERO; w];
    for r in 0..n {
        for (b, &v) in gc.iter_mut().zip(&gz[r * w..(r + 1) * w]) {
            *b += v;
        }
    }
    for (b, &v) in grad.b1.iter_mut().zip(&gc) {
        *b += v;
    }
    if let Some(gx) = gx {
        let w1x: Vec<F> = net.w1.chunks(net.in_dim).flat_map(|r| r[..3].iter().copied()).collect();
        rows_times(&gz, w, &w1x, 3, gx, false);
    }
    gc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_wrappers_match_naive() {
        let (m, k, n) = (5, 3, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.11).cos()).collect();
        for w in [n, 40, 64] {
            let bw: Vec<f64> = (0..k * w).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut c = vec![1.0; m * w];
            rows_times(&a, k, &bw, w, &mut c, true);
            for i in 0..m {
                for j in 0..w {
                    let want: f64 = 1.0 + (0..k).map(|t| a[i * k + t] * bw[t * w + j]).sum::<f64>();
                    assert!((c[i * w + j] - want).abs() < 1e-14);
                }
            }
        }
        let _ = &b;
        let bb: Vec<f64> = (0..m * n).map(|i| i as f64 * 0.1).collect();
        let mut acc = vec![0.0; k * n];
        mm_tn_acc(m, k, n, &a, &bb, &mut acc, n);
        for i in 0..k {
            for j in 0..n {
                let want: f64 = (0..m).map(|t| a[t * k + i] * bb[t * n + j]).sum();
                assert!((acc[i * n + j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dropout_rate_and_determinism() {
        let mut a = vec![0.0f64; 4000];
        dropout_row(7, 0.2, 3, 1, &mut a);
        let kept = a.iter().filter(|&&v| v > 0.0).count() as f64 / a.len() as f64;
        assert!((kept - 0.8).abs() < 0.03, "{kept}");
        assert!(a.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let mut b = vec![0.0f64; 4000];
        dropout_row(7, 0.2, 3, 1, &mut b);
        assert_eq!(a, b);
    }
}
