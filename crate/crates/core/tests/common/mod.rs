//! Independent one-dimensional oracles built on composite Simpson sums.
#![allow(dead_code)]

/// `(Z, <x^2>, <x^4>)` for `exp(-a x^2 / 2 - c x^4 / 8)` on `[-l, l]`.
pub fn simpson_moments(a: f64, c: f64, l: f64, panels: usize) -> (f64, f64, f64) {
    let n = panels + panels % 2;
    let h = 2.0 * l / n as f64;
    let (mut z, mut m2, mut m4) = (0.0, 0.0, 0.0);
    for k in 0..=n {
        let x = -l + k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = w * (-0.5 * a * x * x - 0.125 * c * x.powi(4)).exp();
        z += f;
        m2 += f * x * x;
        m4 += f * x.powi(4);
    }
    let s = h / 3.0;
    (z * s, m2 / z, m4 / z)
}

/// Box large enough for the tails to vanish in double precision.
pub fn box_for(a: f64, c: f64) -> f64 {
    let mut l = 4.0;
    while 0.5 * a * l * l + 0.125 * c * l.powi(4) < 60.0 {
        l *= 1.25;
    }
    l
}

pub fn moments(a: f64, c: f64) -> (f64, f64, f64) {
    simpson_moments(a, c, box_for(a, c), 200_000)
}

/// `a` with `<x^2>_a = g` by bisection on the monotone map `a -> <x^2>`.
pub fn invert_1d(g: f64, c: f64) -> f64 {
    let (mut lo, mut hi) = (-50.0, 50.0);
    if c == 0.0 {
        return 1.0 / g;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if moments(mid, c).1 > g {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `Phi[g]` for `U = lambda x^4 / 8` at coupling `eps`.
pub fn phi_1d(g: f64, lambda: f64, eps: f64) -> f64 {
    let c = lambda * eps;
    let a = invert_1d(g, c);
    let l = box_for(a, c);
    let z = simpson_moments(a, c, l, 200_000).0;
    let f = 0.5 * a * g + z.ln();
    2.0 * f - g.ln() - (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}
