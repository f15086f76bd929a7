//! Dense kernels with a fixed summation order. Row-times-matrix products are
//! written as axpy loops over contiguous rows and dot products use a fixed
//! set of partial sums, so results do not depend on vector width.

use num_traits::Float;

const LANES: usize = 16;

#[inline]
pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let (x, y) = (&a[c * LANES..(c + 1) * LANES], &b[c * LANES..(c + 1) * LANES]);
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            acc[l] = acc[l] + acc[l + width];
        }
    }
    let mut s = acc[0];
    for i in chunks * LANES..n {
        s = s + a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Float>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `out[m×n] += a[m×k] · w[k×n]`
pub fn matmul_acc<T: Float>(out: &mut [T], a: &[T], w: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for kk in 0..k {
            let av = arow[kk];
            if av != T::zero() {
                axpy(orow, av, &w[kk * n..(kk + 1) * n]);
            }
        }
    }
}

/// `out[m×k] += d[m×n] · w[k×n]ᵀ`
pub fn matmul_t_acc<T: Float>(out: &mut [T], d: &[T], w: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for kk in 0..k {
            out[i * k + kk] = out[i * k + kk] + dot(drow, &w[kk * n..(kk + 1) * n]);
        }
    }
}

/// `gw[k×n] += a[m×k]ᵀ · d[m×n]`
pub fn outer_acc<T: Float>(gw: &mut [T], a: &[T], d: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != T::zero() {
                axpy(&mut gw[kk * n..(kk + 1) * n], av, drow);
            }
        }
    }
}

pub fn add_bias<T: Float>(out: &mut [T], bias: &[T], m: usize) {
    let n = bias.len();
    for i in 0..m {
        axpy(&mut out[i * n..(i + 1) * n], T::one(), bias);
    }
}

pub fn bias_grad<T: Float>(gb: &mut [T], d: &[T], m: usize) {
    let n = gb.len();
    for i in 0..m {
        axpy(gb, T::one(), &d[i * n..(i + 1) * n]);
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm; returns normalized rows and per-row inverse std.
pub fn layer_norm<T: Float>(x: &[T], g: &[T], b: &[T], out: &mut [T], xhat: &mut [T], rstd: &mut [T]) {
    let d = g.len();
    let inv_d = T::one() / T::from(d).unwrap();
    let eps = T::from(LN_EPS).unwrap();
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().fold(T::zero(), |s, &v| s + v) * inv_d;
        let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * g[j] + b[j];
        }
    }
}

/// Backward of [`layer_norm`] for the rows in `rows`.
pub fn layer_norm_back<T: Float>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    g: &[T],
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
    rows: impl Iterator<Item = usize>,
) {
    let d = g.len();
    let inv_d = T::one() / T::from(d).unwrap();
    for r in rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            m1 = m1 + dxh;
            m2 = m2 + dxh * xh[j];
            dg[j] = dg[j] + dyr[j] * xh[j];
            db[j] = db[j] + dyr[j];
        }
        m1 = m1 * inv_d;
        m2 = m2 * inv_d;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dx[r * d + j] = dx[r * d + j] + rstd[r] * (dxh - m1 - xh[j] * m2);
        }
    }
}

fn gelu_consts<T: Float>() -> (T, T) {
    (T::from(0.797_884_560_802_865_4).unwrap(), T::from(0.044_715).unwrap())
}

/// Tanh approximation of GELU.
pub fn gelu<T: Float>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::from(0.5).unwrap();
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Float>(x: T) -> T {
    let (c, a) = gelu_consts::<T>();
    let half = T::from(0.5).unwrap();
    let three = T::from(3.0).unwrap();
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// In-place softmax.
pub fn softmax<T: Float>(s: &mut [T]) {
    let m = s.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut z = T::zero();
    for v in s.iter_mut() {
        *v = (*v - m).exp();
        z = z + *v;
    }
    for v in s.iter_mut() {
        *v = *v / z;
    }
}
